"""Transport noise on the thin torus: coefficients, increments, covariance.

The velocity increment is u = sum_{k,j} sigma_{k,j} dW^{k,j} with
sigma_{k,j}(x) = theta_{k,j} a_{k,j} e^{i k.x}, summed over the annulus
N <= |kH| <= 2N and k3 in {0, +-N, ..., +-jmax N}.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .lattice import enumerate_modes, frame, gamma_sign, zeta_H, zeta_HN
from .spectral import Domain, SpectralField

ZETA_H0 = zeta_H(0)  # = 3 pi, area of the annulus 1 <= |x| <= 2
J2 = np.array([[0.0, -1.0], [1.0, 0.0]])


class AdmissibilityWarning(UserWarning):
    """C1H lies within 1% of the admissibility threshold."""


@dataclass(frozen=True)
class NoiseSpec:
    N: int
    beta: float = 4.0
    gamma: float = 4.0
    rho: float = 0.0
    c1h: float = 3.2
    c2h: float = 1.0
    cv: float = 1.0
    jmax: int = 3
    eta: float = 1.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        if self.beta < 4 or self.gamma < 4:
            raise ValueError("beta and gamma must be >= 4")
        if abs(self.rho) > 1:
            raise ValueError("|rho| must be <= 1")
        if min(self.c1h, self.c2h, self.cv) <= 0:
            raise ValueError("noise constants must be positive")
        if self.jmax < 1:
            raise ValueError("jmax must be >= 1")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        thr = self.c1h_threshold
        if self.c1h <= thr:
            if self.c1h >= 0.99 * thr:
                warnings.warn(
                    f"c1h={self.c1h} is within 1% of the admissibility bound {thr:.6g}",
                    AdmissibilityWarning,
                    stacklevel=3,
                )
            else:
                raise ValueError(
                    f"c1h={self.c1h} must exceed sqrt(3 pi / eta) = {thr:.6g}"
                )

    @property
    def c1h_threshold(self):
        return math.sqrt(ZETA_H0 / self.eta)

    @property
    def eps(self):
        return 1.0 / self.N


def theta(spec, k, j):
    """Noise coefficient theta_{k,j}; zero outside the enumerated support."""
    k = np.asarray(k, dtype=np.int64)
    return complex(_theta_array(spec, k[None])[0, j - 1])


def _in_support(spec, modes):
    N = spec.N
    kh2 = modes[:, 0] ** 2 + modes[:, 1] ** 2
    return (
        (kh2 >= N * N)
        & (kh2 <= 4 * N * N)
        & (modes[:, 2] % N == 0)
        & (np.abs(modes[:, 2]) <= spec.jmax * N)
    )


def _theta_array(spec, modes):
    kf = modes.astype(float)
    knorm = np.linalg.norm(kf, axis=1)
    safe = np.where(knorm == 0, 1.0, knorm)
    flat = modes[:, 2] == 0
    sgn = gamma_sign(modes)
    th = np.zeros((len(modes), 2), dtype=complex)
    th[:, 0] = np.where(flat, 1j * sgn / (spec.c1h * safe), 1.0 / (spec.cv * safe ** (spec.beta / 2)))
    th[:, 1] = np.where(flat, 1.0 / (spec.c2h * safe ** (spec.gamma / 2)),
                        1.0 / (spec.cv * safe ** (spec.beta / 2)))
    th[~_in_support(spec, modes)] = 0.0
    return th


@dataclass(frozen=True)
class NoiseTable:
    """All support modes with theta, frames and sigma coefficient vectors."""

    spec: NoiseSpec
    modes: np.ndarray  # (n, 3) int
    theta: np.ndarray  # (n, 2) complex
    frames: np.ndarray  # (n, 2, 3) real
    sigma: np.ndarray  # (n, 2, 3) complex, theta * a
    plus: np.ndarray  # indices of modes in Gamma_+
    neg: np.ndarray  # neg[i] is the index of -modes[i]

    @property
    def flat(self):
        return self.modes[:, 2] == 0

    @property
    def kmax(self):
        return 2 * self.spec.N


@lru_cache(maxsize=32)
def noise_table(spec):
    modes = enumerate_modes(spec.N, spec.jmax)
    th = _theta_array(spec, modes)
    a1, a2 = frame(modes)
    frames = np.stack([a1, a2], axis=1)
    sigma = th[:, :, None] * frames
    lookup = {tuple(m): i for i, m in enumerate(modes.tolist())}
    neg = np.array([lookup[(-a, -b, -c)] for a, b, c in modes.tolist()], dtype=np.int64)
    plus = np.flatnonzero(gamma_sign(modes) > 0)
    for arr in (modes, th, frames, sigma, neg, plus):
        arr.setflags(write=False)
    return NoiseTable(spec, modes, th, frames, sigma, plus, neg)


def sigma_field(spec, k, j):
    """The single-mode field sigma_{k,j} on the smallest band holding k."""
    k = np.asarray(k, dtype=np.int64)
    a1, a2 = frame(k)
    a = (a1, a2)[j - 1]
    dom = Domain.thin(spec.N, int(math.ceil(math.hypot(k[0], k[1]))), abs(int(k[2])) // spec.N)
    f = SpectralField.zeros(dom, 3)
    f.coeffs[(slice(None),) + dom.index(k)] = theta(spec, k, j) * a
    return f


# ----------------------------------------------------------- increments


class NoiseStream:
    """Counter-based Gaussian source keyed by (seed, realization, step).

    Each step gets its own Philox counter block, so any step can be drawn
    independently and runs at different dt can share the same path.
    """

    def __init__(self, seed, realization=0):
        self.seed = int(seed)
        self.realization = int(realization)

    def generator(self, step, lane=0):
        key = np.array([self.seed % 2**64, self.realization % 2**64], dtype=np.uint64)
        counter = np.array([0, int(step), int(lane), 0], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=counter))

    def normals(self, step, shape):
        return self.generator(step).standard_normal(shape)


@dataclass
class PathIncrements:
    """Complex increments dW^{k,j} aligned with ``noise_table(spec).modes``."""

    dW: np.ndarray  # (n, 2) complex
    dt: float


def increments_from_normals(spec, dt, z):
    """Map standard normals z of shape (..., n_plus, 2, 2) to increments (..., n, 2).

    z[..., i, s, j] drives the real motion B^{s k, j} for the i-th mode of
    Gamma_+ (s = 0 for +k, 1 for -k).  On the k3 = 0 plane the j = 1, 2
    components are correlated with coefficient rho.
    """
    tab = noise_table(spec)
    rho = spec.rho
    b = math.sqrt(dt) * np.asarray(z, dtype=float)
    flat = tab.flat[tab.plus]
    b2 = np.where(flat[:, None], rho * b[..., 0] + math.sqrt(1.0 - rho * rho) * b[..., 1], b[..., 1])
    b = np.stack([b[..., 0], b2], axis=-1)
    w = b[..., 0, :] + 1j * b[..., 1, :]
    out = np.empty(w.shape[:-2] + (len(tab.modes), 2), dtype=complex)
    out[..., tab.plus, :] = w
    out[..., tab.neg[tab.plus], :] = w.conj()
    return out


def sample_increments(spec, dt, stream, step=0, substeps=1):
    """Increments over [step dt, (step+1) dt] as a sum of ``substeps`` fine draws.

    The fine draw with global index step*substeps + s uses the counter block of
    that index, so a run at dt/2 with substeps=1 sees the same path.
    """
    tab = noise_table(spec)
    shape = (len(tab.plus), 2, 2)
    h = dt / substeps
    z = sum(stream.normals(step * substeps + s, shape) for s in range(substeps))
    return PathIncrements(increments_from_normals(spec, h, z), dt)


def sample_increments_batch(spec, dt, rng, size):
    """``size`` independent increment vectors, shape (size, n, 2)."""
    tab = noise_table(spec)
    z = rng.standard_normal((size, len(tab.plus), 2, 2))
    return increments_from_normals(spec, dt, z)


def velocity_modes(spec, inc):
    """Coefficient vectors of u = sum_j sigma_{k,j} dW^{k,j}, shape (n, 3)."""
    tab = noise_table(spec)
    return np.einsum("njc,nj->nc", tab.sigma, inc.dW)


def velocity_field(spec, inc, domain=None):
    from .spectral import from_modes

    tab = noise_table(spec)
    if domain is None:
        domain = Domain.thin(spec.N, tab.kmax, spec.jmax)
    return from_modes(domain, tab.modes, velocity_modes(spec, inc))


# ----------------------------------------------------------- covariance


def _pieces_at(spec, x):
    tab = noise_table(spec)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    ph = np.exp(1j * x @ tab.modes.T.astype(float))  # (p, n)
    s = tab.sigma
    flat = tab.flat

    def outer(i, j, sel):
        t = 2.0 * s[sel, i, :, None] * s[sel, j, None, :].conj()
        return np.einsum("pn,nab->pab", ph[:, sel], t)

    QT = outer(0, 0, flat)
    QR = outer(1, 1, flat)
    Qp = outer(0, 0, ~flat) + outer(1, 1, ~flat)
    Qrho = spec.rho * (outer(0, 1, flat) + outer(1, 0, flat))
    return {"QT": QT, "QR": QR, "Qprime": Qp, "Qrho": Qrho}


def covariance_pieces(spec, x):
    """Covariance pieces at displacement x, each a real (..., 3, 3) array.

    Keys: QT, QR (k3 = 0, j = 1 and j = 2), Qprime (k3 != 0), Qrho (the
    cross-correlated part), Q0 = QT + QR + Qprime and Q = Q0 + Qrho.
    """
    x = np.asarray(x, dtype=float)
    p = _pieces_at(spec, x)
    out = {}
    for key, val in p.items():
        v = val.real
        out[key] = v[0] if x.ndim == 1 else v
    out["Q0"] = out["QT"] + out["QR"] + out["Qprime"]
    out["Q"] = out["Q0"] + out["Qrho"]
    return out


def covariance_grad0(spec):
    """Derivative tensor G[m, n, l] = d_l Qrho^{m,n}(0) and the 2x2 matrix R.

    R[m, n] = d_n Qrho^{3,m}(0) for m, n in the horizontal directions.
    """
    tab = noise_table(spec)
    sel = tab.flat
    s = tab.sigma[sel]
    k = tab.modes[sel].astype(float)
    t = s[:, 0, :, None] * s[:, 1, None, :].conj() + s[:, 1, :, None] * s[:, 0, None, :].conj()
    G = 2.0 * spec.rho * np.einsum("nab,nl->abl", 1j * t, k)
    G = G.real
    return G, G[2, :2, :2].copy()


def grad_Q0_at_zero(spec):
    """d_l Q0^{m,n}(0) as a finite sum; vanishes by the k -> -k symmetry."""
    tab = noise_table(spec)
    s = tab.sigma
    k = tab.modes.astype(float)
    t = s[:, 0, :, None] * s[:, 0, None, :].conj() + s[:, 1, :, None] * s[:, 1, None, :].conj()
    return (2.0 * np.einsum("nab,nl->abl", 1j * t, k)).real


@dataclass(frozen=True)
class EtaCoefficients:
    eta_VT: float
    eta_VR: float
    eta_HR: float
    eta_T_eps: float
    eta_R_eps: float
    eta_T_limit: float
    zeta_HN2: float


def eta_coefficients(spec):
    """Turbulent diffusivities from the noise support.

    eta_VT, eta_VR come from the k3 != 0 modes, eta_HR from the j = 2
    horizontal modes, and the horizontal j = 1 modes contribute
    zeta^N_{H,2} / C1H^2 to the horizontal coefficient.
    """
    modes = enumerate_modes(spec.N, spec.jmax).astype(float)
    vert = modes[:, 2] != 0
    kv = modes[vert]
    ksq = np.sum(kv**2, axis=1)
    khsq = kv[:, 0] ** 2 + kv[:, 1] ** 2
    w = 1.0 / (spec.cv**2 * ksq ** (spec.beta / 2))
    eta_VT = math.fsum(w * (1.0 - khsq / (2.0 * ksq)))
    eta_VR = math.fsum(w * (1.0 - kv[:, 2] ** 2 / ksq))
    kh = modes[~vert]
    eta_HR = math.fsum(1.0 / (spec.c2h**2 * np.hypot(kh[:, 0], kh[:, 1]) ** spec.gamma))
    z2 = zeta_HN(2, spec.N)
    return EtaCoefficients(
        eta_VT=eta_VT,
        eta_VR=eta_VR,
        eta_HR=eta_HR,
        eta_T_eps=eta_VT + z2 / spec.c1h**2,
        eta_R_eps=eta_VR + eta_HR,
        eta_T_limit=zeta_H(2) / spec.c1h**2,
        zeta_HN2=z2,
    )


def _annulus_power_sum(N, p):
    return zeta_HN(p, N) * N ** (2 - p)


def helicity(spec):
    """(H^{eps,gamma}, H^gamma): -2 rho sum |kH|^(-gamma/2) / (C1H C2H) and its limit."""
    c = 2.0 * spec.rho / (spec.c1h * spec.c2h)
    h_eps = -c * _annulus_power_sum(spec.N, spec.gamma / 2)
    h_lim = -c * zeta_H(2) if spec.gamma == 4 else 0.0
    return h_eps, h_lim


def alpha_matrix(spec, limit=False):
    """R = -(H/2) J, the 2x2 matrix driving the mean-field alpha term."""
    h_eps, h_lim = helicity(spec)
    return -0.5 * (h_lim if limit else h_eps) * J2


def helicity_from_table(spec):
    """E[W . curl W] / (2T) summed mode by mode over the noise table."""
    tab = noise_table(spec)
    k = tab.modes.astype(float)
    s = tab.sigma
    sn = s[tab.neg]
    curl_neg = np.cross(-1j * k[:, None, :], sn)  # curl of sigma_{-k,m} at mode -k
    diag = np.einsum("njc,njc->", s, curl_neg)
    flat = tab.flat
    cross = np.einsum("nc,nc->", s[flat, 0], curl_neg[flat, 1]) + np.einsum(
        "nc,nc->", s[flat, 1], curl_neg[flat, 0]
    )
    return float((diag + spec.rho * cross).real)
