"""Fourier representation of fields on the thin torus T^3_eps and on T^2.

A field is stored by its coefficients c_k against e^{i k.x} on a band
|kH| <= kmax, k3 = m N with |m| <= jmax.  Arrays have shape
(ncomp, L, L, L3), L = 2 kmax + 1, L3 = 2 jmax + 1, in FFT index order
(wavenumber n sits at index n mod L).  T^2 is the degenerate case with a
single vertical index and no x3 dependence.

Nonlinear terms are evaluated pseudo-spectrally on a zero-padded grid that is
large enough for the product to be exact on the requested output band.
Grid transforms are real FFTs, so dense products assume real (Hermitian)
inputs.
Single-mode and sparse convolutions are exact and used by the corrector
checks.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * math.pi


class BandOverflowError(ValueError):
    """An exact product does not fit the requested output band."""


@dataclass(frozen=True)
class Domain:
    """Spectral band on T^3_eps (eps = 1/N) or on T^2 when ``flat``."""

    kmax: int
    jmax: int = 0
    N: int = 1
    flat: bool = False

    def __post_init__(self):
        if self.kmax < 0 or self.jmax < 0 or self.N < 1:
            raise ValueError("kmax, jmax must be >= 0 and N >= 1")
        if self.flat and (self.jmax != 0 or self.N != 1):
            raise ValueError("a flat domain has jmax = 0 and N = 1")

    @classmethod
    def thin(cls, N, kmax, jmax):
        return cls(int(kmax), int(jmax), int(N), False)

    @classmethod
    def plane(cls, kmax):
        return cls(int(kmax), 0, 1, True)

    @property
    def eps(self):
        return 1.0 / self.N

    @property
    def shape(self):
        return (2 * self.kmax + 1, 2 * self.kmax + 1, 2 * self.jmax + 1)

    @property
    def volume(self):
        v = TWO_PI**2
        return v if self.flat else v * TWO_PI / self.N

    @cached_property
    def k(self):
        """Broadcastable float wavenumber arrays (k1, k2, k3)."""
        L, _, L3 = self.shape
        n = np.fft.fftfreq(L, 1.0 / L)
        m = np.fft.fftfreq(L3, 1.0 / L3) * self.N
        return n[:, None, None], n[None, :, None], m[None, None, :]

    @cached_property
    def kvec(self):
        k1, k2, k3 = self.k
        return np.stack(np.broadcast_arrays(k1, k2, k3))

    @cached_property
    def ksq(self):
        k1, k2, k3 = self.k
        return k1**2 + k2**2 + k3**2

    @cached_property
    def khsq(self):
        k1, k2, _ = self.k
        return np.broadcast_to(k1**2 + k2**2, self.shape)

    @cached_property
    def mask(self):
        return self.khsq <= self.kmax**2 + 1e-9

    @cached_property
    def plane_mask(self):
        """True on the k3 = 0 plane."""
        return np.broadcast_to(self.k[2] == 0, self.shape)

    def contains(self, other):
        return self.kmax >= other.kmax and self.jmax >= other.jmax

    def compatible(self, other):
        return self.flat == other.flat and (self.flat or self.N == other.N)

    def plane_domain(self):
        return Domain.plane(self.kmax)

    def index(self, k):
        """Array index of the integer wave vector k (k3 in physical units)."""
        k1, k2, k3 = (int(v) for v in k)
        if k3 % self.N:
            raise ValueError(f"k3={k3} is not a multiple of N={self.N}")
        m = k3 // self.N
        if k1 * k1 + k2 * k2 > self.kmax**2 or abs(m) > self.jmax:
            raise KeyError(f"wave vector {k} lies outside the band")
        L, _, L3 = self.shape
        return (k1 % L, k2 % L, m % L3)


def _flip(c):
    """c(-k) in FFT index order, along the three spatial axes."""
    return np.roll(np.flip(c, axis=(-3, -2, -1)), 1, axis=(-3, -2, -1))


class SpectralField:
    """Coefficients of a scalar (ncomp = 1) or vector (ncomp = 3) field."""

    __slots__ = ("domain", "coeffs")

    def __init__(self, domain, coeffs):
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.ndim == 3:
            coeffs = coeffs[None]
        if coeffs.shape[1:] != domain.shape:
            raise ValueError(f"coefficient shape {coeffs.shape} does not match {domain.shape}")
        self.domain = domain
        self.coeffs = coeffs

    @classmethod
    def zeros(cls, domain, ncomp=3):
        return cls(domain, np.zeros((ncomp,) + domain.shape, dtype=complex))

    @property
    def ncomp(self):
        return self.coeffs.shape[0]

    def copy(self):
        return SpectralField(self.domain, self.coeffs.copy())

    def _like(self, coeffs):
        return SpectralField(self.domain, coeffs)

    def _check(self, other):
        if other.domain != self.domain:
            raise ValueError("fields live on different domains")

    def __add__(self, other):
        self._check(other)
        return self._like(self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return self._like(self.coeffs - other.coeffs)

    def __neg__(self):
        return self._like(-self.coeffs)

    def __mul__(self, a):
        return self._like(self.coeffs * a)

    __rmul__ = __mul__

    def component(self, i):
        return self._like(self.coeffs[i : i + 1].copy())

    def mode(self, k):
        return self.coeffs[(slice(None),) + self.domain.index(k)]

    def set_mode(self, k, value, hermitian=True):
        """Set the coefficient at k and, by default, conj(value) at -k."""
        value = np.asarray(value, dtype=complex)
        self.coeffs[(slice(None),) + self.domain.index(k)] = value
        if hermitian:
            self.coeffs[(slice(None),) + self.domain.index([-int(v) for v in k])] = value.conj()
        return self

    def hermitian_defect(self):
        return float(np.abs(self.coeffs - _flip(self.coeffs).conj()).max(initial=0.0))

    def is_real(self, tol=1e-12):
        scale = max(1.0, float(np.abs(self.coeffs).max(initial=0.0)))
        return self.hermitian_defect() <= tol * scale

    def is_divergence_free(self, tol=1e-10):
        scale = max(1.0, float(np.abs(self.coeffs).max(initial=0.0)) * self.domain.kmax)
        return float(np.abs(divergence(self).coeffs).max(initial=0.0)) <= tol * scale

    def is_zero_mean(self, tol=1e-12):
        return float(np.abs(self.coeffs[:, 0, 0, 0]).max()) <= tol

    def realify(self):
        """Project onto real fields: (c(k) + conj c(-k)) / 2."""
        return self._like(0.5 * (self.coeffs + _flip(self.coeffs).conj()))

    def nonzero_modes(self, tol=0.0):
        """Integer wave vectors and coefficient rows where the field is nonzero."""
        nz = np.abs(self.coeffs).max(axis=0) > tol
        nz &= self.domain.mask
        kv = self.domain.kvec[:, nz].T
        return np.rint(kv).astype(np.int64), self.coeffs[:, nz].T.copy()

    def to_physical(self, shape=None):
        """Real values on a uniform grid (default: the smallest unaliased one)."""
        if shape is None:
            shape = grid_shape(self.domain)
        return ProductGrid(shape).to_physical(self)

    def __repr__(self):
        d = self.domain
        where = "T^2" if d.flat else f"T^3_eps(N={d.N})"
        return f"SpectralField(ncomp={self.ncomp}, {where}, kmax={d.kmax}, jmax={d.jmax})"


def from_modes(domain, modes, coeffs):
    """Dense field from integer wave vectors and coefficient rows (summed on repeats)."""
    coeffs = np.asarray(coeffs, dtype=complex)
    if coeffs.ndim == 1:
        coeffs = coeffs[:, None]
    f = SpectralField.zeros(domain, coeffs.shape[1])
    modes = np.asarray(modes, dtype=np.int64).reshape(-1, 3)
    if len(modes) == 0:
        return f
    L, _, L3 = domain.shape
    if np.any(modes[:, 2] % domain.N):
        raise ValueError("k3 not a multiple of N")
    m = modes[:, 2] // domain.N
    inside = (modes[:, 0] ** 2 + modes[:, 1] ** 2 <= domain.kmax**2) & (np.abs(m) <= domain.jmax)
    if not inside.all():
        raise BandOverflowError("modes fall outside the band")
    idx = (modes[:, 0] % L, modes[:, 1] % L, m % L3)
    for c in range(coeffs.shape[1]):
        np.add.at(f.coeffs[c], idx, coeffs[:, c])
    return f


def resample(f, domain, truncate=False):
    """Copy f onto another band of the same torus."""
    if not domain.compatible(f.domain):
        raise ValueError("domains live on different tori")
    src = f.domain
    out = SpectralField.zeros(domain, f.ncomp)
    K = min(src.kmax, domain.kmax)
    J = min(src.jmax, domain.jmax)
    n = np.arange(-K, K + 1)
    m = np.arange(-J, J + 1)
    Ls, _, Ls3 = src.shape
    Ld, _, Ld3 = domain.shape
    s = np.ix_(n % Ls, n % Ls, m % Ls3)
    d = np.ix_(n % Ld, n % Ld, m % Ld3)
    for c in range(f.ncomp):
        out.coeffs[c][d] = f.coeffs[c][s]
    out.coeffs *= domain.mask
    if not truncate:
        total = norm_L2(f) ** 2
        lost = total - norm_L2(out) ** 2
        if lost > 1e-12 * total + 1e-300:
            raise BandOverflowError("resampling would drop nonzero modes")
    return out


def to_plane(f):
    """The k3 = 0 plane of f as a field on T^2."""
    d = f.domain
    g = SpectralField(d.plane_domain(), f.coeffs[..., :1].copy())
    return g


def from_plane(g, domain):
    """Embed an x3-independent field on T^2 into a thin-torus band."""
    if not g.domain.flat:
        raise ValueError("expected a field on T^2")
    out = SpectralField.zeros(domain, g.ncomp)
    big = resample(g, Domain.plane(domain.kmax), truncate=False)
    out.coeffs[..., 0] = big.coeffs[..., 0]
    return out


# ---------------------------------------------------------------- linear ops


def mean_M(f):
    """Vertical average: keep only the k3 = 0 modes."""
    return f._like(f.coeffs * f.domain.plane_mask)


def fluct_N(f):
    return f._like(f.coeffs * ~f.domain.plane_mask)


def zero_mean(f):
    c = f.coeffs.copy()
    c[:, 0, 0, 0] = 0.0
    return f._like(c)


def _ik(domain):
    return 1j * domain.kvec


def grad(f):
    """Gradient of a scalar field; the third component is zero on T^2."""
    if f.ncomp != 1:
        raise ValueError("grad expects a scalar field")
    return f._like(_ik(f.domain) * f.coeffs[0])


def divergence(v):
    return v._like(np.sum(_ik(v.domain) * v.coeffs, axis=0, keepdims=True))


def curl(v):
    ik = _ik(v.domain)
    c = v.coeffs
    return v._like(
        np.stack(
            [
                ik[1] * c[2] - ik[2] * c[1],
                ik[2] * c[0] - ik[0] * c[2],
                ik[0] * c[1] - ik[1] * c[0],
            ]
        )
    )


def _inv_ksq(domain):
    ksq = domain.ksq.copy()
    ksq[0, 0, 0] = 1.0
    inv = 1.0 / ksq
    inv[0, 0, 0] = 0.0
    return inv


def laplacian_power(f, alpha):
    """(-Delta)^alpha; alpha < 0 needs a zero-mean field."""
    if alpha < 0 and np.abs(f.coeffs[:, 0, 0, 0]).max() > 1e-14:
        raise ValueError("negative Laplacian power of a field with nonzero mean")
    w = f.domain.ksq ** float(alpha) if alpha >= 0 else _inv_ksq(f.domain) ** float(-alpha)
    return f._like(f.coeffs * w)


def leray_project(v):
    """Remove the gradient part: v - k (k.v)/|k|^2."""
    kv = v.domain.kvec
    kdotv = np.sum(kv * v.coeffs, axis=0)
    return v._like(v.coeffs - kv * (kdotv * _inv_ksq(v.domain)))


def biot_savart(v, check=True):
    """Divergence-free zero-mean potential A with curl A = v, A_k = i k x v_k/|k|^2."""
    if check and not v.is_divergence_free(1e-8):
        raise ValueError("biot_savart needs a divergence-free field")
    ik = _ik(v.domain)
    c = v.coeffs
    cr = np.stack(
        [ik[1] * c[2] - ik[2] * c[1], ik[2] * c[0] - ik[0] * c[2], ik[0] * c[1] - ik[1] * c[0]]
    )
    return v._like(cr * _inv_ksq(v.domain))


def stream_function(bh):
    """Scalar A on T^2 with B_H = -grad_perp A, i.e. A_h = i (h_perp . B_h)/|h|^2.

    grad_perp = (-d2, d1) and h_perp = (-h2, h1).  Accepts a vector field on
    T^2 (third component ignored); returns a scalar field.
    """
    k1, k2, _ = bh.domain.k
    c = bh.coeffs
    a = 1j * (-k2 * c[0] + k1 * c[1]) * _inv_ksq(bh.domain)
    return bh._like(a[None])


def perp_grad(a):
    """-grad_perp A = (d2 A, -d1 A, 0) for a scalar A."""
    k1, k2, _ = a.domain.k
    c = a.coeffs[0]
    return a._like(np.stack([1j * k2 * c, -1j * k1 * c, np.zeros_like(c)]))


# ------------------------------------------------------------------- norms


def inner(f, g):
    """Real L^2 inner product over the domain (sum over components)."""
    f._check(g)
    return float(f.domain.volume * np.sum((f.coeffs * g.coeffs.conj()).real))


def norm_L2(f):
    return math.sqrt(f.domain.volume * float(np.sum(np.abs(f.coeffs) ** 2)))


def sobolev_norm(f, s):
    """Homogeneous H^s norm (vol * sum_k |k|^(2s) |c_k|^2)^(1/2)."""
    if s < 0 and np.abs(f.coeffs[:, 0, 0, 0]).max() > 1e-14:
        raise ValueError("negative Sobolev norm of a field with nonzero mean")
    if s == 0:
        return norm_L2(f)
    w = f.domain.ksq ** float(s) if s > 0 else _inv_ksq(f.domain) ** float(-s)
    return math.sqrt(f.domain.volume * float(np.sum(w * np.abs(f.coeffs) ** 2)))


# ---------------------------------------------------------- physical grids


def grid_shape(*domains, out=None):
    """Padded grid on which products of fields on ``domains`` are exact on ``out``."""
    K = sum(d.kmax for d in domains)
    J = sum(d.jmax for d in domains)
    Ko = out.kmax if out is not None else 0
    Jo = out.jmax if out is not None else 0
    widest = max(d.kmax for d in domains + ((out,) if out is not None else ()))
    mh = sfft.next_fast_len(max(K + Ko + 1, 2 * widest + 1))
    if domains[0].flat:
        return (mh, mh, 1)
    top = max(d.jmax for d in domains + ((out,) if out is not None else ()))
    m3 = sfft.next_fast_len(max(J + Jo + 1, 2 * top + 1), real=True)
    return (mh, mh, m3)


class ProductGrid:
    """Transforms between band coefficients and values on an (M1, M2, M3) grid."""

    def __init__(self, shape):
        self.shape = tuple(int(s) for s in shape)
        self._cache = {}

    def _indices(self, domain):
        key = domain
        if key not in self._cache:
            M1, M2, M3 = self.shape
            L, _, L3 = domain.shape
            if L > M1 or (not domain.flat and 2 * domain.jmax + 1 > M3):
                raise ValueError("grid too small for the band")
            n = np.arange(-domain.kmax, domain.kmax + 1)
            m = np.arange(0, domain.jmax + 1)
            src = np.ix_(n % L, n % L, m)
            dst = np.ix_(n % M1, n % M2, m)
            self._cache[key] = (src, dst)
        return self._cache[key]

    def to_physical(self, f):
        M1, M2, M3 = self.shape
        src, dst = self._indices(f.domain)
        half = np.zeros((f.ncomp, M1, M2, M3 // 2 + 1), dtype=complex)
        masked = f.coeffs * f.domain.mask
        half[(slice(None),) + dst] = masked[(slice(None),) + src]
        return sfft.irfftn(half, s=self.shape, axes=(1, 2, 3), norm="forward")

    def from_physical(self, values, domain):
        """Band coefficients of real grid values; modes outside the band are dropped."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 3:
            values = values[None]
        half = sfft.rfftn(values, axes=(1, 2, 3), norm="forward")
        src, dst = self._indices(domain)
        out = SpectralField.zeros(domain, values.shape[0])
        c = out.coeffs
        c[(slice(None),) + src] = half[(slice(None),) + dst]
        if domain.jmax > 0:
            # negative vertical indices from Hermitian symmetry
            L3 = domain.shape[2]
            for mm in range(1, domain.jmax + 1):
                c[:, :, :, (-mm) % L3] = _flip2(c[:, :, :, mm]).conj()
        c *= domain.mask
        return out


def _flip2(c):
    return np.roll(np.flip(c, axis=(-2, -1)), 1, axis=(-2, -1))


def from_function(domain, func, ncomp=3, shape=None):
    """Project a real function of (x1, x2, x3) onto the band by sampling."""
    if shape is None:
        shape = grid_shape(domain, domain)
    M1, M2, M3 = shape
    x1 = np.arange(M1) * TWO_PI / M1
    x2 = np.arange(M2) * TWO_PI / M2
    x3 = np.arange(M3) * TWO_PI / (domain.N * M3) if not domain.flat else np.zeros(1)
    X1, X2, X3 = np.meshgrid(x1, x2, x3, indexing="ij")
    vals = np.asarray(func(X1, X2, X3), dtype=float).reshape((ncomp,) + X1.shape)
    return ProductGrid(shape).from_physical(vals, domain)


def _product_setup(a, b, out_domain, truncate):
    if not a.domain.compatible(b.domain):
        raise ValueError("fields live on different tori")
    exact = Domain(a.domain.kmax + b.domain.kmax, a.domain.jmax + b.domain.jmax,
                   a.domain.N, a.domain.flat)
    if out_domain is None:
        out_domain = exact
    elif not out_domain.contains(exact) and not truncate:
        raise BandOverflowError(
            f"exact product needs kmax={exact.kmax}, jmax={exact.jmax}; "
            f"pass truncate=True to dealias onto kmax={out_domain.kmax}, jmax={out_domain.jmax}"
        )
    return ProductGrid(grid_shape(a.domain, b.domain, out=out_domain)), out_domain


def multiply(a, b, out_domain=None, truncate=False):
    """Componentwise product a*b (a scalar broadcasts against a vector)."""
    grid, out_domain = _product_setup(a, b, out_domain, truncate)
    return grid.from_physical(grid.to_physical(a) * grid.to_physical(b), out_domain)


def dot(a, b, out_domain=None, truncate=False):
    grid, out_domain = _product_setup(a, b, out_domain, truncate)
    return grid.from_physical(np.sum(grid.to_physical(a) * grid.to_physical(b), axis=0), out_domain)


def cross(a, b, out_domain=None, truncate=False):
    grid, out_domain = _product_setup(a, b, out_domain, truncate)
    return grid.from_physical(np.cross(grid.to_physical(a), grid.to_physical(b), axis=0), out_domain)


def _jacobian(f):
    """Stack of d_j f_i with shape (3 [j], ncomp, ...)."""
    return np.stack([1j * kj * f.coeffs for kj in f.domain.k])


def advect(X, Y, out_domain=None, truncate=False):
    """(X . grad) Y, componentwise in Y."""
    grid, out_domain = _product_setup(X, Y, out_domain, truncate)
    xv = grid.to_physical(X)
    dY = _jacobian(Y)
    acc = 0.0
    for j in range(3):
        acc = acc + xv[j] * grid.to_physical(Y._like(dY[j]))
    return grid.from_physical(acc, out_domain)


def lie_derivative(X, Y, out_domain=None, truncate=False):
    """Q[X . grad Y - Y . grad X] for vector fields X, Y.

    Exact on the output band when it holds the full product band, otherwise
    ``truncate=True`` is required and the result is the dealiased projection.
    """
    a = advect(X, Y, out_domain, truncate)
    b = advect(Y, X, a.domain, True)
    return zero_mean(a - b)


# ---------------------------------------------------------- sparse algebra


def lie_pair(p, xc, q, yc):
    """Coefficient of L_X Y at p + q for single modes X = xc e^{ip.x}, Y = yc e^{iq.x}.

    L_X Y = X . grad Y - Y . grad X gives i (xc . q) yc - i (yc . p) xc.
    All arguments broadcast over leading axes; the last axis has length 3.
    """
    xq = np.sum(xc * q, axis=-1, keepdims=True)
    yp = np.sum(yc * p, axis=-1, keepdims=True)
    return 1j * (xq * yc - yp * xc)


def advect_pair(p, xc, q, yc):
    """Coefficient of (X . grad) Y at p + q for single modes."""
    return 1j * np.sum(xc * q, axis=-1, keepdims=True) * yc


@dataclass
class ModeField:
    """Sparse field: integer wave vectors (n, 3) and coefficient rows (n, ncomp)."""

    modes: np.ndarray
    coeffs: np.ndarray
    N: int = 1

    @classmethod
    def from_field(cls, f, tol=0.0):
        modes, coeffs = f.nonzero_modes(tol)
        return cls(modes, coeffs, f.domain.N)

    def coalesce(self, tol=0.0):
        if len(self.modes) == 0:
            return self
        u, inv = np.unique(self.modes, axis=0, return_inverse=True)
        c = np.zeros((len(u), self.coeffs.shape[1]), dtype=complex)
        np.add.at(c, inv.reshape(-1), self.coeffs)
        keep = np.abs(c).max(axis=1) > tol
        return ModeField(u[keep], c[keep], self.N)

    def to_field(self, domain):
        return from_modes(domain, self.modes, self.coeffs)

    def band(self):
        kh = np.hypot(self.modes[:, 0], self.modes[:, 1])
        return int(np.ceil(kh.max(initial=0) - 1e-9)), int(np.abs(self.modes[:, 2]).max(initial=0) // self.N)


def _pairwise(X, Y, kernel):
    p = X.modes[:, None, :].astype(float)
    q = Y.modes[None, :, :].astype(float)
    out = kernel(p, X.coeffs[:, None, :], q, Y.coeffs[None, :, :])
    modes = (X.modes[:, None, :] + Y.modes[None, :, :]).reshape(-1, 3)
    return ModeField(modes, out.reshape(-1, 3), X.N).coalesce()


def lie_derivative_modes(X, Y):
    """Exact L_X Y by direct convolution of sparse fields."""
    return _pairwise(X, Y, lie_pair)


def advect_modes(X, Y):
    return _pairwise(X, Y, advect_pair)


# ------------------------------------------------------------- random data


def random_field(domain, rng, kmax=None, jmax=None, div_free=True, decay=1.0):
    """Real, zero-mean random field with Gaussian coefficients ~ |k|^-decay."""
    kmax = domain.kmax if kmax is None else kmax
    jmax = domain.jmax if jmax is None else jmax
    shape = (3,) + domain.shape
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    ksq = domain.ksq.copy()
    ksq[0, 0, 0] = 1.0
    _, _, k3 = domain.k
    sel = (domain.khsq <= kmax**2 + 1e-9) & (np.abs(k3) <= jmax * domain.N)
    c *= sel * ksq ** (-0.5 * decay)
    f = SpectralField(domain, c)
    if div_free:
        f = leray_project(f)
    return zero_mean(f.realify())


# --------------------------------------------------------------------- I/O


def write_field_csv(f, path):
    """One row per in-band mode: k1, k2, k3, then re/im of each component."""
    modes, coeffs = f.nonzero_modes(-1.0)
    order = np.lexsort((modes[:, 1], modes[:, 0], modes[:, 2]))
    header = ["k1", "k2", "k3"]
    for c in range(f.ncomp):
        header += [f"re_{c + 1}", f"im_{c + 1}"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in order:
            row = [int(v) for v in modes[i]]
            for c in range(f.ncomp):
                row += [repr(float(coeffs[i, c].real)), repr(float(coeffs[i, c].imag))]
            w.writerow(row)


def read_field_csv(path, domain):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    modes = data[:, :3].astype(np.int64)
    vals = data[:, 3::2] + 1j * data[:, 4::2]
    return from_modes(domain, modes, vals)
