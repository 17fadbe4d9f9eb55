"""Exponential Euler-Maruyama integrator for the Ito system of the magnetic field.

Per mode k the drift D(k) = (-eta |k|^2 - eta_T (k1^2 + k2^2) - eta_R k3^2) I
+ M(k) is integrated exactly with a 3x3 matrix exponential, while the noise
term sum_{k,j} L_{sigma_{k,j}} B dW^{k,j} is applied explicitly:

    B_{n+1}(k) = exp(dt D(k)) [B_n(k) + xi_n(k)],  xi_n = P L_{u_n} B_n,

with u_n = sum sigma_{k,j} dW^{k,j}_n.  For divergence-free u and B,
L_u B = curl(B x u), which is what the stepper evaluates on a dealiased grid.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .corrector import CorrectorOperators
from .noise import NoiseSpec, NoiseStream, PathIncrements, noise_table, sample_increments, velocity_modes
from .spectral import (
    Domain,
    ProductGrid,
    SpectralField,
    biot_savart,
    curl,
    divergence,
    fluct_N,
    grid_shape,
    leray_project,
    mean_M,
    norm_L2,
    random_field,
    resample,
    sobolev_norm,
    stream_function,
    to_plane,
)


class SimulationError(RuntimeError):
    def __init__(self, step, message="non-finite values"):
        super().__init__(f"step {step}: {message}")
        self.step = step


class DtWarning(UserWarning):
    """The explicit noise increment is large compared with the resolved scales."""


# ------------------------------------------------------------ initial data


@dataclass(frozen=True)
class InitialCondition:
    """Initial field recipe.

    two_dim_plus_fluct: a random x3-independent divergence-free field on
        |kH| <= k0 plus a fluctuation c(kH) (kH_perp/|kH|, 0) on the layers
        k3 = +-N.  The random coefficients depend on ``seed`` only, so the
        profiles are the same for every N.
    single_mode: ``vector`` projected onto the plane orthogonal to
        k = (mode[0], mode[1], mode[2] N), plus its conjugate.
    random_lowmode: random divergence-free field on |kH| <= k0, k3 in {0, +-N}.
    """

    kind: str = "two_dim_plus_fluct"
    seed: int = 2024
    k0: int = 4
    mean_amplitude: float = 1.0
    fluct_amplitude: float = 0.5
    mode: tuple = (1, 0, 0)
    vector: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("two_dim_plus_fluct", "single_mode", "random_lowmode"):
            raise ValueError(f"unknown initial condition kind {self.kind!r}")
        if self.k0 < 1:
            raise ValueError("k0 must be >= 1")


def _rms_scale(f, amplitude):
    rms = norm_L2(f) / math.sqrt(f.domain.volume)
    return f * (amplitude / rms) if rms > 0 else f


def initial_mean_profile(ic):
    """The x3-independent part of two_dim_plus_fluct as a vector field on T^2."""
    rng = np.random.default_rng(ic.seed)
    return _rms_scale(random_field(Domain.plane(ic.k0), rng), ic.mean_amplitude)


def initial_field(ic, domain):
    """B_0 on ``domain``; real, zero mean and divergence free."""
    N = domain.N
    if ic.kind == "single_mode":
        k1, k2, m = (int(v) for v in ic.mode)
        if (k1, k2, m) == (0, 0, 0):
            raise ValueError("single_mode needs a nonzero wave vector")
        f = SpectralField.zeros(domain, 3)
        k = np.array([k1, k2, m * N], dtype=float)
        v = np.asarray(ic.vector, dtype=complex)
        v = v - k * (k @ v) / (k @ k)
        f.set_mode((k1, k2, m * N), v)
        return f
    rng = np.random.default_rng(ic.seed)
    if ic.kind == "random_lowmode":
        base = random_field(Domain.thin(1, ic.k0, 1), rng)
        f = leray_project(SpectralField(Domain.thin(N, ic.k0, 1), base.coeffs))
        return resample(_rms_scale(f, ic.mean_amplitude), domain)
    mean = random_field(Domain.plane(ic.k0), rng)
    mean = _rms_scale(mean, ic.mean_amplitude)
    # fluctuation on the k3 = +-N layers with horizontal direction kH_perp
    d1 = Domain.thin(1, ic.k0, 1)
    k1, k2, _ = d1.k
    kh = np.sqrt(d1.khsq)
    safe = np.where(kh == 0, 1.0, kh)
    c = rng.standard_normal(d1.shape) + 1j * rng.standard_normal(d1.shape)
    c = c * (kh > 0) * d1.mask * (d1.k[2] != 0) / safe
    fl = np.zeros((3,) + d1.shape, dtype=complex)
    fl[0] = -k2 / safe * c
    fl[1] = k1 / safe * c
    fluct = SpectralField(Domain.thin(N, ic.k0, 1), fl).realify()
    fluct = _rms_scale(fluct, ic.fluct_amplitude)
    out = SpectralField.zeros(domain, 3)
    out.coeffs[..., 0] = resample(mean, Domain.plane(domain.kmax)).coeffs[..., 0]
    return out + resample(fluct, domain)


# ----------------------------------------------------------------- config


@dataclass(frozen=True)
class SimConfig:
    spec: NoiseSpec
    dt: float = 1e-3
    T: float = 0.25
    Kmax: int | None = None
    record_every: int = 10
    initial: InitialCondition = field(default_factory=InitialCondition)

    def __post_init__(self):
        if self.dt <= 0 or self.T <= 0 or self.dt > self.T:
            raise ValueError("need 0 < dt <= T")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.Kmax is not None and self.Kmax < 2 * self.spec.N:
            raise ValueError(f"Kmax={self.Kmax} must be >= 2N = {2 * self.spec.N}")
        if self.kmax < self.initial.k0:
            raise ValueError("Kmax must contain the initial data band")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * steps:
            raise ValueError("T must be an integer multiple of dt")

    @property
    def kmax(self):
        return self.Kmax if self.Kmax is not None else 2 * self.spec.N + 4

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    @property
    def domain(self):
        return Domain.thin(self.spec.N, self.kmax, self.spec.jmax)

    def noise_energy(self):
        """dt * sum |theta|^2 * (Kmax^2 + max |k|^2): size of one noise kick."""
        tab = noise_table(self.spec)
        kk = float(np.max(np.sum(tab.modes.astype(float) ** 2, axis=1)))
        return self.dt * float(np.sum(np.abs(tab.theta) ** 2)) * (self.kmax**2 + kk)


# ------------------------------------------------------------------ drift


def expm3(A, tol=0.125):
    """Batched exponential of (..., 3, 3) matrices: Taylor order 6, scaling and squaring."""
    A = np.asarray(A, dtype=complex)
    nrm = float(np.abs(A).sum(axis=-1).max(initial=0.0))
    s = max(0, int(math.ceil(math.log2(nrm / tol)))) if nrm > tol else 0
    X = A / 2.0**s
    eye = np.broadcast_to(np.eye(3, dtype=complex), A.shape)
    E = eye.copy()
    term = eye.copy()
    for n in range(1, 7):
        term = term @ X / n
        E = E + term
    for _ in range(s):
        E = E @ E
    return E


def drift_matrix(k, ops, eta):
    """D(k) for a single wave vector."""
    k = np.asarray(k, dtype=float)
    if not np.any(k):
        raise ValueError("k must be nonzero")
    lam = -eta * (k @ k) - ops.eta_T_eps * (k[0] ** 2 + k[1] ** 2) - ops.eta_R_eps * k[2] ** 2
    G = ops.grad_Qrho0
    M = np.zeros((3, 3), dtype=complex)
    for l in range(2):
        M[:, l] = -1j * G[:, :, l] @ k
    return lam * np.eye(3) + M


def drift_exponentials(domain, ops, eta, dt):
    """exp(dt D(k)) for every mode of the band, shape (L, L, L3, 3, 3)."""
    lam = -eta * domain.ksq + ops.multiplier(domain)
    M = np.moveaxis(ops.rho_matrix(domain), (0, 1), (-2, -1))
    E = expm3(dt * M) if np.any(M) else np.broadcast_to(np.eye(3, dtype=complex), M.shape).copy()
    E *= np.exp(dt * lam)[..., None, None]
    return E


# ------------------------------------------------------------------ state


@dataclass
class SimState:
    t: float
    B: SpectralField
    step: int = 0


@dataclass
class SimResult:
    times: list
    diagnostics: list
    mean_B3: list  # scalar fields on T^2
    mean_A3: list
    final: SimState
    trajectory: list | None = None  # B_n for every step n (when kept)
    increments: list | None = None  # PathIncrements for every step


class Stepper:
    """Holds the per-mode drift exponentials and the dealiased product grid."""

    def __init__(self, cfg, ops=None):
        self.cfg = cfg
        self.spec = cfg.spec
        self.domain = cfg.domain
        self.ops = CorrectorOperators.from_spec(self.spec) if ops is None else ops
        self.expD = drift_exponentials(self.domain, self.ops, self.spec.eta, cfg.dt)
        tab = noise_table(self.spec)
        self.udomain = Domain.thin(self.spec.N, tab.kmax, self.spec.jmax)
        self.grid = ProductGrid(grid_shape(self.udomain, self.domain, out=self.domain))
        M1, M2, M3 = self.grid.shape
        up = tab.modes[:, 2] >= 0
        self._u_sel = np.flatnonzero(up)
        m = tab.modes[up]
        self._u_idx = (m[:, 0] % M1, m[:, 1] % M2, m[:, 2] // self.spec.N)
        self._half = (M1, M2, M3 // 2 + 1)

    def velocity_physical(self, inc):
        uc = velocity_modes(self.spec, inc)
        half = np.zeros((3,) + self._half, dtype=complex)
        half[(slice(None),) + self._u_idx] = uc[self._u_sel].T
        return sfft.irfftn(half, s=self.grid.shape, axes=(1, 2, 3), norm="forward")

    def noise_apply(self, B, inc):
        """P L_u B on the solution band, u = sum sigma_{k,j} dW^{k,j}."""
        u = self.velocity_physical(inc)
        b = self.grid.to_physical(B)
        bxu = np.cross(b, u, axis=0)
        return leray_project(curl(self.grid.from_physical(bxu, self.domain)))

    def apply_drift(self, coeffs):
        return np.einsum("...jl,l...->j...", self.expD, coeffs)

    def step(self, state, inc):
        if abs(inc.dt - self.cfg.dt) > 1e-15:
            raise ValueError("increment dt does not match the configuration")
        xi = self.noise_apply(state.B, inc)
        c = self.apply_drift(state.B.coeffs + xi.coeffs)
        B = leray_project(SpectralField(self.domain, c))
        if not np.all(np.isfinite(B.coeffs)):
            raise SimulationError(state.step)
        return SimState(state.t + self.cfg.dt, B, state.step + 1)


def noise_apply(B, inc, spec, domain=None):
    """P L_u B for a one-off call; ``domain`` defaults to the band of B."""
    cfg = SimConfig(spec, dt=inc.dt, T=inc.dt, Kmax=max(B.domain.kmax, 2 * spec.N),
                    initial=InitialCondition(k0=1))
    st = Stepper(cfg)
    out = st.noise_apply(resample(B, st.domain), inc)
    return resample(out, B.domain if domain is None else domain, truncate=True)


def step(state, inc, cfg, stepper=None):
    return (stepper or Stepper(cfg)).step(state, inc)


# ------------------------------------------------------------ diagnostics


def _grad_sq(f):
    return sobolev_norm(f, 1) ** 2


def diagnostics(B):
    """Energy-type quantities of the mean/fluctuation split (norms on T^3_eps)."""
    d = B.domain
    A = biot_savart(B, check=False)
    Bm, Bf = mean_M(B), fluct_N(B)
    Am, Af = mean_M(A), fluct_N(A)
    b3m, b3f, a3m = Bm.component(2), Bf.component(2), Am.component(2)
    d3 = np.sqrt(d.ksq - d.khsq)
    fl = norm_L2(Bf)
    dfl = math.sqrt(d.volume * float(np.sum((d3 * np.abs(Bf.coeffs)) ** 2)))
    return {
        "B3_mean_sq": norm_L2(b3m) ** 2,
        "grad_B3_mean_sq": _grad_sq(b3m),
        "A3_mean_sq": norm_L2(a3m) ** 2,
        "grad_A3_mean_sq": _grad_sq(a3m),
        "A_fluct_sq": norm_L2(Af) ** 2,
        "grad_A_fluct_sq": _grad_sq(Af),
        "B3_fluct_sq": norm_L2(b3f) ** 2,
        "grad_B3_fluct_sq": _grad_sq(b3f),
        "poincare_ratio": fl / (d.eps * dfl) if dfl > 0 else 0.0,
        "div_residual": norm_L2(divergence(B)) / max(sobolev_norm(B, 1), 1e-300),
    }


def mean_B3(B):
    return to_plane(B.component(2))


def mean_A3(B):
    """Third component of the potential of the mean field, via the 2D split."""
    return stream_function(to_plane(mean_M(B)))


def simulate(cfg, seed, realization=0, substeps=1, keep_trajectory=False, noise=True, ops=None):
    """Run one realization; deterministic in (seed, realization).

    ``substeps`` draws each increment as a sum of that many finer increments so
    that runs at dt and dt/substeps follow the same Brownian path.
    """
    if cfg.noise_energy() > 0.1 and noise:
        warnings.warn(f"noise increment energy {cfg.noise_energy():.3g} exceeds 0.1; "
                      "consider a smaller dt", DtWarning, stacklevel=2)
    stepper = Stepper(cfg, ops)
    stream = NoiseStream(seed, realization)
    B0 = initial_field(cfg.initial, cfg.domain)
    state = SimState(0.0, B0, 0)
    times, diags, b3, a3 = [], [], [], []
    traj = [] if keep_trajectory else None
    incs = [] if keep_trajectory else None
    tab = noise_table(cfg.spec)
    zero = PathIncrements(np.zeros((len(tab.modes), 2), dtype=complex), cfg.dt)

    def record(s):
        times.append(s.t)
        diags.append(diagnostics(s.B))
        b3.append(mean_B3(s.B))
        a3.append(mean_A3(s.B))

    record(state)
    for n in range(cfg.n_steps):
        inc = sample_increments(cfg.spec, cfg.dt, stream, n, substeps) if noise else zero
        if keep_trajectory:
            traj.append(state.B)
            incs.append(inc)
        state = stepper.step(state, inc)
        if (n + 1) % cfg.record_every == 0 or n + 1 == cfg.n_steps:
            record(state)
    return SimResult(times, diags, b3, a3, state, traj, incs)
