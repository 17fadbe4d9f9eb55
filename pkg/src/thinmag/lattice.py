"""Wave-vector lattice of the thin torus, sign convention, frames and zeta sums.

The thin torus is T^2 x R/(2 pi eps Z) with eps = 1/N, so admissible wave
vectors are k = (k1, k2, k3) with k1, k2 integers and k3 a multiple of N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DivergentSumError(ValueError):
    """Raised when a lattice zeta sum is requested at a divergent exponent."""


@dataclass(frozen=True)
class WaveVector:
    """A single wave vector of Z^2 x NZ."""

    k1: int
    k2: int
    k3: int
    N: int = 1

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be a positive integer")
        if self.k3 % self.N:
            raise ValueError(f"k3={self.k3} is not a multiple of N={self.N}")

    @property
    def array(self):
        return np.array([self.k1, self.k2, self.k3], dtype=np.int64)

    @property
    def norm(self):
        return math.sqrt(self.k1**2 + self.k2**2 + self.k3**2)

    @property
    def horizontal_norm(self):
        return math.hypot(self.k1, self.k2)

    def __neg__(self):
        return WaveVector(-self.k1, -self.k2, -self.k3, self.N)


def _as_int_array(k):
    if isinstance(k, WaveVector):
        return k.array
    return np.asarray(k, dtype=np.int64)


def gamma_sign(k):
    """+1 if k lies in Gamma_+, -1 if in Gamma_-, 0 for k = 0.

    Gamma_+ is the set with k3 > 0, or k3 = 0 and k2 > 0, or k3 = k2 = 0 and
    k1 > 0.  Accepts a single vector or an (..., 3) array.
    """
    k = _as_int_array(k)
    k1, k2, k3 = k[..., 0], k[..., 1], k[..., 2]
    key = np.where(k3 != 0, np.sign(k3), np.where(k2 != 0, np.sign(k2), np.sign(k1)))
    if key.ndim == 0:
        return int(key)
    return key.astype(np.int64)


def frame(k):
    """Orthonormal pair (a1, a2) spanning the plane orthogonal to k.

    For k in Gamma_+ with kH != 0, a1 = (-k2, k1, 0)/|kH| and a2 = k/|k| x a1;
    when k3 = 0 this gives a2 = e3.  For a purely vertical k we take a1 = e2.
    Frames are even: a(-k) = a(k).  Vectorised over (..., 3) input.
    """
    k = _as_int_array(k)
    if np.any(np.all(k == 0, axis=-1)):
        raise ValueError("frame is undefined for k = 0")
    s = gamma_sign(k)
    kp = (k * np.asarray(s)[..., None]).astype(float)
    kh = np.hypot(kp[..., 0], kp[..., 1])
    vertical = kh == 0
    safe = np.where(vertical, 1.0, kh)
    a1 = np.stack([-kp[..., 1] / safe, kp[..., 0] / safe, np.zeros_like(safe)], axis=-1)
    a1 = np.where(vertical[..., None], np.array([0.0, 1.0, 0.0]), a1)
    khat = kp / np.linalg.norm(kp, axis=-1, keepdims=True)
    a2 = np.cross(khat, a1)
    return a1, a2


def annulus(N):
    """Integer horizontal vectors with N <= |kH| <= 2N, shape (n, 2)."""
    r = np.arange(-2 * N, 2 * N + 1)
    k1, k2 = np.meshgrid(r, r, indexing="ij")
    r2 = k1**2 + k2**2
    keep = (r2 >= N * N) & (r2 <= 4 * N * N)
    return np.stack([k1[keep], k2[keep]], axis=-1).astype(np.int64)


def enumerate_modes(N, jmax=3):
    """Noise support: the horizontal annulus times k3 in {0, +-N, ..., +-jmax N}.

    Returns an (n, 3) integer array sorted by (k3, k1, k2); the set is closed
    under k -> -k.
    """
    if N < 1 or jmax < 0:
        raise ValueError("need N >= 1 and jmax >= 0")
    kh = annulus(N)
    layers = [np.column_stack([kh, np.full(len(kh), m * N)]) for m in range(-jmax, jmax + 1)]
    modes = np.concatenate(layers).astype(np.int64)
    order = np.lexsort((modes[:, 1], modes[:, 0], modes[:, 2]))
    return modes[order]


def zeta_HN(j, N):
    """N^(j-2) * sum over the annulus N <= |kH| <= 2N of |kH|^(-j)."""
    kh = annulus(N).astype(float)
    r = np.hypot(kh[:, 0], kh[:, 1])
    return float(N ** (j - 2) * math.fsum(r ** (-float(j))))


def zeta_H(j):
    """Continuum limit of zeta_HN: the integral of |x|^(-j) over 1 <= |x| <= 2."""
    if j == 2:
        return 2.0 * math.pi * math.log(2.0)
    return 2.0 * math.pi * (2.0 ** (2 - j) - 1.0) / (2 - j)


def zeta_l(l, tol=1e-12):
    """Half the sum of |k|^(-l) over nonzero integers k, for l > 1.

    Direct summation up to K followed by the Euler-Maclaurin tail
    K^(1-l)/(l-1) + K^(-l)/2 + l K^(-l-1)/12 - l(l+1)(l+2) K^(-l-3)/720; K is
    chosen so that the last included correction is already below tol.
    """
    if l <= 1:
        raise DivergentSumError(f"sum of |k|^-{l} diverges for l <= 1")
    # size of the last Euler-Maclaurin correction
    c = l * (l + 1) * (l + 2) / 720.0
    K = max(10, int(math.ceil((c / tol) ** (1.0 / (l + 3)))))
    head = math.fsum(np.arange(1, K, dtype=float) ** (-float(l)))
    tail = K ** (1 - l) / (l - 1) + 0.5 * K ** (-l) + l * K ** (-l - 1) / 12.0 - c * K ** (-l - 3)
    return head + tail
