"""Mode-wise exact solvers for the 2D mean-field systems and the mild-form check.

Limit (and intermediate) systems on T^2:

    d_t A = kappa Delta A,
    d_t B = kappa Delta B + div(R grad_perp A),

with grad_perp = (-d2, d1).  At mode k the forcing multiplier is
f(k) = -k . (R k_perp), k_perp = (-k2, k1), and the solution is
A_t = e^{-kappa |k|^2 t} A_0,  B_t = e^{-kappa |k|^2 t} (B_0 + t f(k) A_0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .noise import alpha_matrix, eta_coefficients, noise_table, velocity_modes
from .solver import mean_A3, mean_B3
from .spectral import (
    Domain,
    SpectralField,
    advect,
    biot_savart,
    dot,
    fluct_N,
    from_modes,
    mean_M,
    to_plane,
    zero_mean,
)


@dataclass(frozen=True)
class LimitParams:
    kappa: float
    alpha_matrix: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.alpha_matrix, dtype=float)
        if R.shape != (2, 2) or np.abs(R + R.T).max() > 1e-12 * max(1.0, np.abs(R).max()):
            raise ValueError("alpha_matrix must be an antisymmetric 2x2 matrix")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")


def limit_params(spec):
    """kappa = eta + eta_T and R_gamma."""
    return LimitParams(spec.eta + eta_coefficients(spec).eta_T_limit, alpha_matrix(spec, limit=True))


def intermediate_params(spec):
    """kappa_eps = eta + eta_T^eps and R_{eps,gamma}."""
    return LimitParams(spec.eta + eta_coefficients(spec).eta_T_eps, alpha_matrix(spec))


def forcing_multiplier(domain, R):
    """Symbol of A -> div(R grad_perp A) on a T^2 band."""
    k1, k2, _ = domain.k
    k1, k2 = np.broadcast_arrays(k1, k2)
    kp1, kp2 = -k2, k1
    rk1 = R[0, 0] * kp1 + R[0, 1] * kp2
    rk2 = R[1, 0] * kp1 + R[1, 1] * kp2
    return -(k1 * rk1 + k2 * rk2)


def _check(t, *fields):
    if t < 0:
        raise ValueError("t must be >= 0")
    for f in fields:
        if not f.domain.flat or f.ncomp != 1:
            raise ValueError("expected scalar fields on T^2")


def solve_A3(A0, t, p):
    _check(t, A0)
    return A0._like(A0.coeffs * np.exp(-t * p.kappa * A0.domain.ksq))


def solve_B3(B0, A0, t, p):
    _check(t, B0, A0)
    if B0.domain != A0.domain:
        raise ValueError("B0 and A0 must share a band")
    d = B0.domain
    decay = np.exp(-t * p.kappa * d.ksq)
    f = forcing_multiplier(d, np.asarray(p.alpha_matrix, dtype=float))
    return B0._like(decay * (B0.coeffs + t * f * A0.coeffs))


def solve_intermediate(B0, A0, t, spec):
    p = intermediate_params(spec)
    return solve_A3(A0, t, p), solve_B3(B0, A0, t, p)


def vector_form_rhs(A, B, p, H):
    """Right-hand side kappa Delta Bvec + curl(Amat Bvec) with Bvec = (-grad_perp A, B).

    Amat = -(H/2) diag(1, 1, 0).  Returns the spectral coefficients (3, ...) of
    d_t Bvec for x3-independent fields.
    """
    d = A.domain
    k1, k2, _ = d.k
    a = A.coeffs[0]
    bvec = np.stack([1j * k2 * a, -1j * k1 * a, B.coeffs[0]])
    alpha = -0.5 * H
    ab = alpha * np.stack([bvec[0], bvec[1], np.zeros_like(a)])
    curl_ab = np.stack(
        [np.zeros_like(a), np.zeros_like(a), 1j * k1 * ab[1] - 1j * k2 * ab[0]]
    )
    return -p.kappa * d.ksq * bvec + curl_ab, bvec


# ------------------------------------------------------ mild reconstruction


class MildIntegrands:
    """Integrands of the two stochastic convolutions for one time step.

    z1 = M[u.grad B3 - B.grad u3]   (split into the k3 = 0 and k3 != 0 parts)
    z2 = ubar.grad Abar3 + Q[M(u'.grad A'3 + d3 u'.A')]
    both returned as scalar fields on the T^2 band of the solution.
    """

    def __init__(self, cfg):
        self.cfg = cfg
        self.spec = cfg.spec
        self.domain = cfg.domain
        tab = noise_table(self.spec)
        self.udomain = Domain.thin(self.spec.N, tab.kmax, self.spec.jmax)
        self.tab = tab

    def velocity(self, inc):
        return from_modes(self.udomain, self.tab.modes, velocity_modes(self.spec, inc))

    def __call__(self, B, inc):
        d = self.domain
        u = self.velocity(inc)
        ub, up = mean_M(u), fluct_N(u)
        Bb, Bp = mean_M(B), fluct_N(B)
        A = biot_savart(B, check=False)
        Ab, Ap = mean_M(A), fluct_N(A)

        def third(X, Y):
            return advect(X, Y, d, truncate=True).component(2)

        z1 = third(ub, Bb) - third(Bb, ub) + mean_M(third(up, Bp) - third(Bp, up))
        k3 = up.domain.k[2]
        d3u = up._like(1j * k3 * up.coeffs)
        z2 = third(ub, Ab) + zero_mean(mean_M(third(up, Ap) + dot(d3u, Ap, d, truncate=True)))
        return to_plane(z1), to_plane(z2)


def mild_reconstruct(path, trajectory, cfg):
    """Mild-form values of (Bbar3, Abar3) at t_n = n dt, n = 0..len(path).

    Left-point rule for the stochastic convolutions Z1, Z2 and for the alpha
    integral, with exact semigroup factors e^{-kappa_eps |h|^2 (t_n - t_m)}.
    """
    if len(path) != len(trajectory):
        raise ValueError("path and trajectory lengths differ")
    if len(trajectory) == 0:
        raise ValueError("empty trajectory")
    spec = cfg.spec
    p = intermediate_params(spec)
    integr = MildIntegrands(cfg)
    B0 = trajectory[0]
    b0, a0 = mean_B3(B0), mean_A3(B0)
    d = b0.domain
    decay = np.exp(-cfg.dt * p.kappa * d.ksq)
    f = forcing_multiplier(d, np.asarray(p.alpha_matrix))
    heat_b, heat_a = b0.coeffs.copy(), a0.coeffs.copy()
    Z1 = np.zeros_like(heat_b)
    Z2 = np.zeros_like(heat_a)
    alpha = np.zeros_like(heat_b)
    out_b, out_a = [b0], [a0]
    for B, inc in zip(trajectory, path):
        z1, z2 = integr(B, inc)
        a_m = mean_A3(B).coeffs
        Z1 = decay * (Z1 + z1.coeffs)
        Z2 = decay * (Z2 + z2.coeffs)
        alpha = decay * (alpha + cfg.dt * f * a_m)
        heat_b = decay * heat_b
        heat_a = decay * heat_a
        out_b.append(SpectralField(d, heat_b + Z1 + alpha))
        out_a.append(SpectralField(d, heat_a + Z2))
    return out_b, out_a
