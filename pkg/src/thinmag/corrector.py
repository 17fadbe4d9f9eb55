"""Ito-Stratonovich corrector operators and their brute-force check.

Lambda acts mode by mode as -(eta_T (k1^2 + k2^2) + eta_R k3^2).  Lambda_rho
acts as the 3x3 matrix M(k) built from the gradient of the cross-correlated
covariance at the origin.  ``lie_composition_sum`` evaluates the double Lie
sum directly from the noise modes with exact single-mode convolutions, so it
shares no formula with the operators it is compared against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .noise import covariance_grad0, eta_coefficients, noise_table
from .spectral import Domain, from_modes, lie_pair, norm_L2, random_field


@dataclass(frozen=True)
class CorrectorOperators:
    eta_T_eps: float
    eta_R_eps: float
    grad_Qrho0: np.ndarray  # G[j, m, l] = d_l Qrho^{j,m}(0)

    @classmethod
    def from_spec(cls, spec):
        e = eta_coefficients(spec)
        G, _ = covariance_grad0(spec)
        return cls(e.eta_T_eps, e.eta_R_eps, G)

    @classmethod
    def half_trace(cls, spec):
        """Operators built from half the covariance at the origin, Q0(0)/2.

        This is the second-order part that the double Lie sum produces mode by
        mode: eta_VT + zeta^N_{H,2}/(2 C1H^2) horizontally, eta_R vertically.
        """
        e = eta_coefficients(spec)
        G, _ = covariance_grad0(spec)
        return cls(e.eta_VT + 0.5 * e.zeta_HN2 / spec.c1h**2, e.eta_R_eps, G)

    def multiplier(self, domain):
        """Scalar symbol of Lambda on the band."""
        return -(self.eta_T_eps * domain.khsq + self.eta_R_eps * domain.k[2] ** 2)

    def rho_matrix(self, domain):
        """M(k) on the band, shape (3, 3, L, L, L3)."""
        G = self.grad_Qrho0
        kv = domain.kvec
        M = np.zeros((3, 3) + domain.shape, dtype=complex)
        for l in range(2):
            M[:, l] = -1j * np.einsum("jm,m...->j...", G[:, :, l], kv)
        return M


def lambda_op(F, ops):
    return F._like(F.coeffs * ops.multiplier(F.domain))


def lambda_rho_op(F, ops):
    M = ops.rho_matrix(F.domain)
    return F._like(np.einsum("jl...,l...->j...", M, F.coeffs))


def lie_composition_sum(F, spec):
    """sum_{k,j} L_{s_{k,j}} L_{s_{-k,j}} F + rho sum_{k3=0} (L_{s_{k,1}} L_{s_{-k,2}} + L_{s_{k,2}} L_{s_{-k,1}}) F.

    Every noise mode is applied as an exact spectral shift, batched over the
    noise table.  The intermediate field L_{s_{-k}} F lives on modes q - k and
    is kept as a sparse mode list, so no band truncation ever happens; the
    outer shift brings it back onto the modes of F.
    """
    if F.ncomp != 3:
        raise ValueError("expected a vector field")
    tab = noise_table(spec)
    q, fq = F.nonzero_modes()
    if len(q) == 0:
        return F._like(np.zeros_like(F.coeffs))
    p = tab.modes.astype(float)
    qf = q.astype(float)
    total = np.zeros((len(q), 3), dtype=complex)
    flat = tab.flat
    pairs = [(0, 0, None), (1, 1, None)]
    if spec.rho != 0:
        pairs += [(0, 1, flat), (1, 0, flat)]
    for jo, ji, sel in pairs:
        idx = np.arange(len(p)) if sel is None else np.flatnonzero(sel)
        pk = p[idx][:, None, :]
        inner = tab.sigma[tab.neg[idx], ji][:, None, :]
        outer = tab.sigma[idx, jo][:, None, :]
        g = lie_pair(-pk, inner, qf[None], fq[None])  # at modes q - k
        h = lie_pair(pk, outer, qf[None] - pk, g)  # back at modes q
        w = 1.0 if sel is None else spec.rho
        total += w * h.sum(axis=0)
    return from_modes(F.domain, q, total)


def verify_corrector(spec, trials, seed, kmax=3, jmax=1, ops=None):
    """Max relative L^2 residual of the double Lie sum against Lambda + Lambda_rho."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    ops = CorrectorOperators.from_spec(spec) if ops is None else ops
    rng = np.random.default_rng(seed)
    dom = Domain.thin(spec.N, kmax, jmax)
    per_trial = []
    for _ in range(trials):
        F = random_field(dom, rng)
        lhs = lie_composition_sum(F, spec)
        rhs = lambda_op(F, ops) + lambda_rho_op(F, ops)
        per_trial.append(norm_L2(lhs - rhs) / norm_L2(rhs))
    return max(per_trial), per_trial


# ------------------------------------------------------------ remainders


def _dir_grad(c1, p2, c2, q, fq):
    """((X . grad F) . grad) Y for X = c1 e^{i p1.x}, Y = c2 e^{i p2.x}, at q + p1 + p2."""
    return -np.sum(c1 * q, axis=-1, keepdims=True) * np.sum(fq * p2, axis=-1, keepdims=True) * c2


def remainder_R1(F, spec):
    """sum_{k,j} (s_{k,j}.grad F).grad s_{-k,j} + (s_{-k,j}.grad F).grad s_{k,j}, on the modes of F."""
    tab = noise_table(spec)
    q, fq = F.nonzero_modes()
    p = tab.modes.astype(float)[:, None, :]
    qf = q.astype(float)[None]
    total = 0.0
    for j in range(2):
        s = tab.sigma[:, j][:, None, :]
        sn = tab.sigma[tab.neg, j][:, None, :]
        total = total + _dir_grad(s, -p, sn, qf, fq[None]) + _dir_grad(sn, p, s, qf, fq[None])
    return from_modes(F.domain, q, total.sum(axis=0))


def second_remainder(spec):
    """Rows m = 1..3 of sum_{k,j} s_{k,j} . grad d_m s_{-k,j} (constant vectors)."""
    tab = noise_table(spec)
    k = tab.modes.astype(float)
    s = tab.sigma
    sn = s[tab.neg]
    # s_k . grad d_m s_{-k} = (s_k . (-ik)) (-i k_m) s_{-k}
    ak = np.einsum("njc,nc->nj", s, -1j * k)
    out = np.einsum("nj,nm,njc->mc", ak, -1j * k, sn)
    return out


def cross_symmetry_defect(F, spec):
    """Largest coefficient of (s_{-k,1}.grad F).grad s_{k,2} - (s_{k,1}.grad F).grad s_{-k,2}
    and of the j = 2, 1 analogue, over k3 = 0 noise modes.
    """
    tab = noise_table(spec)
    q, fq = F.nonzero_modes()
    idx = np.flatnonzero(tab.flat)
    p = tab.modes[idx].astype(float)[:, None, :]
    qf = q.astype(float)[None]
    fq = fq[None]
    worst = 0.0
    for a, b in ((0, 1), (1, 0)):
        sa = tab.sigma[idx, a][:, None, :]
        sa_n = tab.sigma[tab.neg[idx], a][:, None, :]
        sb = tab.sigma[idx, b][:, None, :]
        sb_n = tab.sigma[tab.neg[idx], b][:, None, :]
        lhs = _dir_grad(sa_n, p, sb, qf, fq)
        rhs = _dir_grad(sa, -p, sb_n, qf, fq)
        worst = max(worst, float(np.abs(lhs - rhs).max(initial=0.0)))
    return worst


def lambda_rho_plane_formula(F, spec):
    """-(0, 0, div_H(R F_H)) for an x3-independent field, via the 2x2 matrix R."""
    _, R = covariance_grad0(spec)
    k1, k2, _ = F.domain.k
    fh = F.coeffs[:2]
    rf = np.einsum("mn,n...->m...", R, fh)
    out = np.zeros_like(F.coeffs)
    out[2] = -(1j * k1 * rf[0] + 1j * k2 * rf[1])
    return F._like(out)
