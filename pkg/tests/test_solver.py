import math

import numpy as np
import pytest
import scipy.integrate
import scipy.linalg

from thinmag.corrector import CorrectorOperators
from thinmag.noise import NoiseSpec, NoiseStream, PathIncrements, noise_table, sample_increments
from thinmag.solver import (
    DtWarning,
    InitialCondition,
    SimConfig,
    SimState,
    SimulationError,
    Stepper,
    diagnostics,
    drift_exponentials,
    drift_matrix,
    expm3,
    initial_field,
    initial_mean_profile,
    mean_A3,
    mean_B3,
    noise_apply,
    simulate,
    step,
)
from thinmag.spectral import (
    Domain,
    SpectralField,
    fluct_N,
    leray_project,
    lie_derivative,
    mean_M,
    norm_L2,
    random_field,
    resample,
    to_plane,
)


def small_cfg(N=2, rho=0.7, **kw):
    base = dict(dt=1e-3, T=0.02, record_every=5, initial=InitialCondition(k0=3))
    base.update(kw)
    return SimConfig(NoiseSpec(N=N, rho=rho), **base)


def zero_inc(spec, dt):
    return PathIncrements(np.zeros((len(noise_table(spec).modes), 2), dtype=complex), dt)


# -------------------------------------------------------------- drift


def test_drift_matrix_examples():
    ops = CorrectorOperators(0.1, 0.2, np.zeros((3, 3, 3)))
    D = drift_matrix((1, 0, 0), ops, 1.0)
    np.testing.assert_allclose(D, -1.1 * np.eye(3), atol=1e-15)
    s = NoiseSpec(N=2, rho=0.0)
    ops0 = CorrectorOperators.from_spec(s)
    D0 = drift_matrix((1, 2, 4), ops0, s.eta)
    assert np.abs(D0 - np.diag(np.diag(D0))).max() == 0
    with pytest.raises(ValueError):
        drift_matrix((0, 0, 0), ops0, 1.0)


def test_drift_exponentials_match_expm():
    s = NoiseSpec(N=2, rho=0.9)
    ops = CorrectorOperators.from_spec(s)
    d = Domain.thin(2, 4, 2)
    E = drift_exponentials(d, ops, s.eta, 0.01)
    for k in [(1, 0, 0), (3, -2, 2), (0, 4, -4), (2, 2, 0)]:
        idx = d.index(k)
        want = scipy.linalg.expm(0.01 * drift_matrix(k, ops, s.eta))
        np.testing.assert_allclose(E[idx], want, atol=1e-14)


def test_expm3_against_scipy():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((20, 3, 3)) + 1j * rng.standard_normal((20, 3, 3))
    A *= rng.uniform(0.01, 3.0, (20, 1, 1))
    got = expm3(A)
    for a, g in zip(A, got):
        w = scipy.linalg.expm(a)
        assert np.abs(g - w).max() < 1e-9 * np.abs(w).max()


# -------------------------------------------------------------- noise term


def test_noise_apply_zero_increment():
    cfg = small_cfg()
    B = initial_field(cfg.initial, cfg.domain)
    out = noise_apply(B, zero_inc(cfg.spec, cfg.dt), cfg.spec)
    assert np.abs(out.coeffs).max() == 0


def test_noise_apply_single_mode_support():
    s = NoiseSpec(N=2, rho=0.0, jmax=1)
    tab = noise_table(s)
    d = Domain.thin(2, 8, 2)
    B = SpectralField.zeros(d).set_mode((1, 1, 2), [1.0, -1.0, 0.0])
    i = int(np.flatnonzero((tab.modes == [2, 1, 0]).all(axis=1))[0])
    dW = np.zeros((len(tab.modes), 2), dtype=complex)
    dW[i, 0] = 0.3 + 0.2j
    dW[tab.neg[i], 0] = 0.3 - 0.2j
    out = noise_apply(B, PathIncrements(dW, 0.01), s)
    modes, _ = out.nonzero_modes(1e-14)
    allowed = {(a * 1 + b * 2, a * 1 + b * 1, a * 2) for a in (1, -1) for b in (1, -1)}
    assert {tuple(int(v) for v in m) for m in modes} <= allowed
    assert len(modes) > 0
    assert out.hermitian_defect() < 1e-15


def test_noise_apply_matches_lie_derivative():
    s = NoiseSpec(N=2, rho=0.7, jmax=1)
    d = Domain.thin(2, 6, 1)
    B = random_field(d, np.random.default_rng(1), kmax=3)
    inc = sample_increments(s, 0.01, NoiseStream(1), 0)
    from thinmag.noise import velocity_field

    u = velocity_field(s, inc)
    want = leray_project(lie_derivative(u, B, d, truncate=True))
    got = noise_apply(B, inc, s)
    assert norm_L2(got - want) < 1e-12 * norm_L2(want)
    vals = got.to_physical()
    assert np.isfinite(vals).all()


# -------------------------------------------------------------- stepping


def test_step_heat_decay_single_mode():
    cfg = small_cfg(rho=0.0, initial=InitialCondition(kind="single_mode", mode=(2, 1, 1), vector=(1, 0, 0)))
    B0 = initial_field(cfg.initial, cfg.domain)
    st = step(SimState(0.0, B0), zero_inc(cfg.spec, cfg.dt), cfg)
    ops = CorrectorOperators.from_spec(cfg.spec)
    lam = -cfg.spec.eta * (5 + 4) - ops.eta_T_eps * 5 - ops.eta_R_eps * 4
    np.testing.assert_allclose(st.B.mode((2, 1, 2)), B0.mode((2, 1, 2)) * math.exp(cfg.dt * lam), rtol=1e-14)
    assert st.t == pytest.approx(cfg.dt) and st.step == 1


def test_step_rho_plane_mode_matches_ode():
    cfg = small_cfg(rho=1.0, dt=0.05, T=0.05,
                    initial=InitialCondition(kind="single_mode", mode=(2, 1, 0), vector=(1, -1, 1)))
    B0 = initial_field(cfg.initial, cfg.domain)
    st = step(SimState(0.0, B0), zero_inc(cfg.spec, cfg.dt), cfg)
    D = drift_matrix((2, 1, 0), CorrectorOperators.from_spec(cfg.spec), cfg.spec.eta)
    y0 = B0.mode((2, 1, 0)).copy()
    sol = scipy.integrate.solve_ivp(lambda t, y: D @ y, (0, cfg.dt), y0, method="DOP853",
                                    rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(st.B.mode((2, 1, 0)), sol.y[:, -1], atol=1e-12)


def test_step_rejects_dt_mismatch_and_nan():
    cfg = small_cfg()
    B0 = initial_field(cfg.initial, cfg.domain)
    with pytest.raises(ValueError):
        step(SimState(0.0, B0), zero_inc(cfg.spec, 2 * cfg.dt), cfg)
    bad = B0.copy()
    bad.coeffs[0, 1, 0, 0] = np.nan
    with pytest.raises(SimulationError) as err:
        step(SimState(0.0, bad, 7), zero_inc(cfg.spec, cfg.dt), cfg)
    assert err.value.step == 7


def test_mean_equation_bookkeeping():
    # M of one step equals the mean equation assembled from the k3 = 0 / k3 != 0 split
    cfg = small_cfg(N=2, rho=0.7)
    st = Stepper(cfg)
    d = cfg.domain
    B = initial_field(cfg.initial, d)
    inc = sample_increments(cfg.spec, cfg.dt, NoiseStream(4), 0)
    from thinmag.noise import velocity_field

    u = velocity_field(cfg.spec, inc)
    ub, up = mean_M(u), fluct_N(u)
    Bb, Bp = mean_M(B), fluct_N(B)
    xi = lie_derivative(ub, Bb, d, truncate=True) + mean_M(lie_derivative(up, Bp, d, truncate=True))
    want = SpectralField(d, st.apply_drift(Bb.coeffs + leray_project(xi).coeffs))
    got = mean_M(st.step(SimState(0.0, B), inc).B)
    assert norm_L2(got - want) < 1e-10 * norm_L2(want)


# -------------------------------------------------------------- simulate


def test_noise_off_heat_flow():
    cfg = small_cfg(rho=0.0, T=0.05)
    zero = CorrectorOperators(0.0, 0.0, np.zeros((3, 3, 3)))
    res = simulate(cfg, 0, noise=False, ops=zero)
    b0 = res.mean_B3[0]
    for t, b in zip(res.times, res.mean_B3):
        want = b0._like(b0.coeffs * np.exp(-cfg.spec.eta * t * b0.domain.ksq))
        assert norm_L2(b - want) < 1e-13 * norm_L2(b0)


def test_trajectory_invariants():
    cfg = small_cfg(N=3, rho=0.7, T=0.05)
    res = simulate(cfg, 3, 0, keep_trajectory=True)
    for dg in res.diagnostics:
        assert dg["poincare_ratio"] <= 1 + 1e-10
        assert dg["div_residual"] < 1e-11
    for B in res.trajectory:
        assert B.hermitian_defect() < 1e-11 * np.abs(B.coeffs).max()


def test_simulate_reproducible():
    cfg = small_cfg()
    a = simulate(cfg, 5, 2)
    b = simulate(cfg, 5, 2)
    c = simulate(cfg, 5, 3)
    np.testing.assert_array_equal(a.final.B.coeffs, b.final.B.coeffs)
    assert not np.allclose(a.final.B.coeffs, c.final.B.coeffs)
    assert len(a.times) == cfg.n_steps // cfg.record_every + 1


def test_energy_bounded_over_realizations():
    cfg = SimConfig(NoiseSpec(N=4, rho=0.7), dt=1e-3, T=0.1, record_every=20)
    e = np.array([[d["B3_mean_sq"] for d in simulate(cfg, 11, r).diagnostics] for r in range(16)])
    m = e.mean(axis=0)
    assert np.isfinite(e).all()
    assert m.max() < 2 * m[0]


def test_scheme_exact_in_mean():
    # E[xi] = 0, so the Monte-Carlo mean follows exp(t D) B0 up to sampling error
    cfg = small_cfg(N=2, rho=0.7, T=0.02, record_every=20)
    R = 64
    finals = np.stack([simulate(cfg, 13, r).final.B.coeffs for r in range(R)])
    det = simulate(cfg, 0, noise=False).final.B.coeffs
    mean, se = finals.mean(axis=0), finals.std(axis=0) / math.sqrt(R)
    assert np.all(np.abs(mean - det) <= 4.5 * se + 1e-13)


def test_weak_self_convergence():
    spec = NoiseSpec(N=1, rho=0.7)
    T, K, R = 0.04, 2, 16
    levels = [(2e-3, 4), (1e-3, 2), (5e-4, 1)]
    vals = []
    for dt, sub in levels:
        cfg = SimConfig(spec, dt=dt, T=T, Kmax=K, record_every=10**6, initial=InitialCondition(k0=2))
        vals.append(np.array([norm_L2(simulate(cfg, 1, r, substeps=sub).mean_B3[-1]) ** 2 for r in range(R)]))
    kappa = spec.eta + CorrectorOperators.from_spec(spec).eta_T_eps
    C = 3 * T * (kappa * K**2) ** 2 * vals[0].mean()
    for i, (dt, _) in enumerate(levels[:-1]):
        d = vals[i] - vals[i + 1]
        assert abs(d.mean()) <= C * dt + 3 * d.std(ddof=1) / math.sqrt(R)


# ------------------------------------------------------------ initial data


@pytest.mark.parametrize("kind", ["two_dim_plus_fluct", "single_mode", "random_lowmode"])
def test_initial_field_properties(kind):
    ic = InitialCondition(kind=kind, k0=3, mode=(1, 2, 1))
    for N in (2, 4):
        B = initial_field(ic, Domain.thin(N, 2 * N + 4, 3))
        assert B.is_real() and B.is_zero_mean() and B.is_divergence_free(1e-13)
        assert norm_L2(B) > 0


def test_initial_mean_profile_independent_of_N():
    ic = InitialCondition()
    prof = initial_mean_profile(ic)
    for N in (4, 8, 16):
        B = initial_field(ic, Domain.thin(N, 2 * N + 4, 3))
        p = resample(to_plane(mean_M(B)), prof.domain, truncate=True)
        assert norm_L2(p - prof) < 1e-14 * norm_L2(prof)
        f = fluct_N(B)
        assert norm_L2(mean_M(f)) == 0
        # rescaled fluctuation energy ||B'||^2 / eps stays fixed
        assert norm_L2(f) ** 2 * N == pytest.approx(norm_L2(fluct_N(initial_field(ic, Domain.thin(4, 12, 3)))) ** 2 * 4, rel=1e-12)


def test_mean_potentials():
    cfg = small_cfg(N=2)
    B = initial_field(cfg.initial, cfg.domain)
    a3 = mean_A3(B)
    from thinmag.spectral import biot_savart

    np.testing.assert_allclose(a3.coeffs, to_plane(biot_savart(mean_M(B)).component(2)).coeffs, atol=1e-14)
    np.testing.assert_allclose(mean_B3(B).coeffs, to_plane(B.component(2)).coeffs)
    dg = diagnostics(B)
    assert dg["A3_mean_sq"] == pytest.approx(norm_L2(biot_savart(mean_M(B)).component(2)) ** 2)


def test_config_validation():
    s = NoiseSpec(N=4)
    with pytest.raises(ValueError):
        SimConfig(s, dt=0.1, T=0.05)
    with pytest.raises(ValueError):
        SimConfig(s, Kmax=6)
    with pytest.raises(ValueError):
        SimConfig(s, dt=0.003, T=0.01)
    assert SimConfig(s).kmax == 12


def test_dt_warning():
    cfg = SimConfig(NoiseSpec(N=4), dt=1e-2, T=1e-2)
    with pytest.warns(DtWarning):
        simulate(cfg, 0)


def test_kmax_self_convergence():
    # same Brownian path (the noise table does not depend on Kmax); the mean field
    # at T changes less and less as the band grows
    spec = NoiseSpec(N=2, rho=0.7, jmax=1)
    finals = []
    for K in (6, 8, 10, 16):
        cfg = SimConfig(spec, dt=1e-3, T=0.02, Kmax=K, record_every=20, initial=InitialCondition(k0=2))
        finals.append(simulate(cfg, 2, 0).mean_B3[-1])
    ref = finals[-1]
    gaps = [norm_L2(resample(f, ref.domain) - ref) / norm_L2(ref) for f in finals[:-1]]
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 1e-2
