"""Cutting a neck out of an immersion and filling the hole conformally.

Inside the cut ball the map is replaced by a flat-cap model glued to the
original through a biharmonic annulus. The glued map is then made conformal
by solving a Beltrami equation on a chart grid, and the domain vertices are
moved by the resulting quasiconformal homeomorphism. Images outside the
filled disc are never touched.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy import fft as sfft
from scipy.interpolate import RectBivariateSpline

from .concentration import ETA, annulus_content, level_set_boundary
from .errors import (
    IllConditionedMode,
    InputError,
    NotContracting,
    OrientationDegenerate,
    PreconditionEnergy,
    PreconditionViolation,
    ResolutionLimit,
    SupportOverflow,
)
from .geom_core import Immersion, point_diameter
from .mesh import geodesic, unit, vertex_neighbors
from .sphere_gauge import (
    ChartField,
    MobiusMap,
    inverse_stereographic,
    rotation_to_south,
    stereographic,
)

SIGMA_MAX = 0.5
SIGMA_FLOOR = 1e-12
N_FOURIER = 64
COND_LIMIT = 1e12
N_CANDIDATES = 32
SOLVE_TOL = 1e-10
MULTIPOLE_ORDER = 32


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("BUBBLETREE_THREADS", "1")))
    except ValueError:
        return 1


def _components(values) -> np.ndarray:
    """(ny, nx, k) real view of a chart field's values."""
    v = np.asarray(values)
    if np.iscomplexobj(v):
        return np.stack([v.real, v.imag], axis=-1)
    return v if v.ndim == 3 else v[..., None]


# ------------------------------------------------------------------ good radius

def candidate_radii(n: int = N_CANDIDATES) -> np.ndarray:
    """Evenly spaced radii in (1/2, 1) with 3/4 among them."""
    return 0.75 + (np.arange(n) - n // 2) / (2.0 * n + 2.0)


def hessian_norm2(field: ChartField) -> np.ndarray:
    """Sum over components of |D^2 f|^2 by central differences."""
    v = np.pad(_components(field.values), ((1, 1), (1, 1), (0, 0)), mode="reflect",
               reflect_type="odd")
    h2 = field.h**2
    fxx = (v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]) / h2
    fyy = (v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / h2
    fxy = (v[2:, 2:] - v[2:, :-2] - v[:-2, 2:] + v[:-2, :-2]) / (4 * h2)
    return np.sum(fxx**2 + 2 * fxy**2 + fyy**2, axis=-1)


def circle_integrals(field: ChartField, radii=None, samples: int = 256) -> np.ndarray:
    """Line integrals of |D^2 f|^2 over circles centred at the chart origin."""
    radii = candidate_radii() if radii is None else np.asarray(radii, dtype=float)
    H = ChartField(field.origin, field.h, field.nx, field.ny, hessian_norm2(field), field.chart)
    theta = 2 * np.pi * np.arange(samples) / samples
    return np.array([2 * np.pi * r * np.mean(H.sample(r * np.exp(1j * theta))) for r in radii])


def good_radius(field: ChartField, samples: int = 256) -> float:
    """Candidate radius with the smallest circle integral of |D^2 f|^2;
    near-ties go to the candidate closest to 3/4."""
    radii = candidate_radii()
    vals = circle_integrals(field, radii, samples)
    tol = 1e-8 * (1.0 + float(np.max(vals)))
    for i in np.argsort(np.abs(radii - 0.75), kind="stable"):
        if vals[i] <= vals.min() + tol:
            return float(radii[i])
    raise AssertionError("unreachable")


# ------------------------------------------------------------ biharmonic fill

def _radial_basis(n: int, rho, rho_in: float):
    """Values and rho-derivatives (4, len(rho)) of the radial factors of the
    biharmonic functions with angular dependence e^{i n theta}."""
    m = abs(n)
    rho = np.asarray(rho, dtype=float)
    L = np.log(rho)
    if m == 0:
        f = [np.ones_like(rho), L, rho**2, rho**2 * L]
        d = [np.zeros_like(rho), 1 / rho, 2 * rho, 2 * rho * L + rho]
    elif m == 1:
        f = [rho, 1 / rho, rho**3, rho * L]
        d = [np.ones_like(rho), -1 / rho**2, 3 * rho**2, L + 1]
    else:
        q = rho / rho_in
        f = [rho**m, q ** (-m), rho ** (m + 2), q ** (2 - m)]
        d = [m * rho ** (m - 1), -m * q ** (-m - 1) / rho_in, (m + 2) * rho ** (m + 1),
             (2 - m) * q ** (1 - m) / rho_in]
    return np.array(f), np.array(d)


def fourier_modes(n_modes: int = N_FOURIER) -> np.ndarray:
    return np.arange(-n_modes, n_modes + 1)


def fourier_coefficients(samples, n_modes: int = N_FOURIER) -> np.ndarray:
    """Coefficients c_n, n = -N..N, of equispaced samples (M, k) on a circle."""
    samples = np.asarray(samples)
    M = len(samples)
    if M < 2 * n_modes + 1:
        raise InputError("too few samples for the requested Fourier modes")
    c = sfft.fft(samples, axis=0) / M
    return c[fourier_modes(n_modes) % M]


@dataclass
class AnnulusFill:
    """Biharmonic map on r_in <= |z| <= r_out, stored per Fourier mode."""

    r_out: float
    r_in: float
    modes: np.ndarray
    coef: np.ndarray  # (modes, 4, k) complex
    real: bool
    conditions: np.ndarray

    def _eval(self, z, deriv: bool):
        z = np.asarray(z, dtype=complex)
        shape = z.shape
        z = z.reshape(-1)
        rho = np.abs(z) / self.r_out
        e = np.exp(1j * np.angle(z))
        out = np.zeros((len(z), self.coef.shape[2]), dtype=complex)
        rho_in = self.r_in / self.r_out
        phase = np.ones_like(e)
        # e^{i n theta} by repeated products keeps high modes cheap
        powers = {0: phase}
        for n in range(1, int(np.max(np.abs(self.modes))) + 1):
            powers[n] = powers[n - 1] * e
        for i, n in enumerate(self.modes):
            f, d = _radial_basis(n, rho, rho_in)
            radial = (d / self.r_out) if deriv else f
            ph = powers[n] if n >= 0 else np.conj(powers[-n])
            out += (radial.T @ self.coef[i]) * ph[:, None]
        out = out.real if self.real else out
        return out.reshape(shape + (out.shape[-1],))

    def evaluate(self, z) -> np.ndarray:
        return self._eval(z, False)

    def radial_derivative(self, z) -> np.ndarray:
        return self._eval(z, True)

    def chart_field(self, h: float) -> ChartField:
        n = int(np.ceil(2 * self.r_out / h)) + 1
        origin = complex(-self.r_out, -self.r_out)
        grid = origin + h * np.arange(n)[None, :] + 1j * h * np.arange(n)[:, None]
        vals = self.evaluate(grid)
        return ChartField(origin, h, n, n, vals)


def biharmonic_fill(r_out: float, r_in: float, out_values, out_normal, in_values,
                    in_normal, real: bool | None = None) -> AnnulusFill:
    """Clamped biharmonic fill from Fourier data on both circles.

    Each data array holds coefficients (2N+1, k) for modes -N..N of the
    values and the outward radial derivatives on |z| = r_out and |z| = r_in.
    """
    data = [np.asarray(x, dtype=complex) for x in (out_values, out_normal, in_values, in_normal)]
    if any(x.ndim == 1 for x in data):
        data = [x[:, None] if x.ndim == 1 else x for x in data]
    n_rows = data[0].shape[0]
    if n_rows % 2 != 1 or any(x.shape != data[0].shape for x in data):
        raise InputError("fill data must share shape (2N+1, k)")
    if not 0 < r_in < r_out:
        raise InputError("need 0 < r_in < r_out")
    modes = fourier_modes(n_rows // 2)
    rho_in = r_in / r_out
    coef = np.empty((len(modes), 4, data[0].shape[1]), dtype=complex)
    conds = np.empty(len(modes))
    for i, n in enumerate(modes):
        f1, d1 = _radial_basis(n, np.array([1.0]), rho_in)
        f2, d2 = _radial_basis(n, np.array([rho_in]), rho_in)
        A = np.stack([f1[:, 0], d1[:, 0], f2[:, 0], d2[:, 0]])
        conds[i] = np.linalg.cond(A)
        if conds[i] > COND_LIMIT:
            raise IllConditionedMode(f"mode {n}: condition number {conds[i]:.3g}")
        rhs = np.stack([data[0][i], data[1][i] * r_out, data[2][i], data[3][i] * r_out])
        coef[i] = np.linalg.solve(A, rhs)
    if real is None:
        real = all(np.allclose(x, np.conj(x[::-1]), atol=1e-14 * (1 + np.abs(x).max())) for x in data)
    return AnnulusFill(float(r_out), float(r_in), modes, coef, bool(real), conds)


def fill_from_functions(r_out: float, out_fn, out_dfn, in_fn, in_dfn, r_in: float | None = None,
                        n_modes: int = N_FOURIER, samples: int | None = None) -> AnnulusFill:
    """Sample boundary data from callables of complex points and fill."""
    r_in = 0.5 * r_out if r_in is None else r_in
    samples = samples or 4 * n_modes
    theta = 2 * np.pi * np.arange(samples) / samples
    e = np.exp(1j * theta)
    out = [fourier_coefficients(np.asarray(fn(r * e)).reshape(samples, -1), n_modes)
           for fn, r in ((out_fn, r_out), (out_dfn, r_out), (in_fn, r_in), (in_dfn, r_in))]
    return biharmonic_fill(r_out, r_in, *out)


# ------------------------------------------------------------ Beltrami data

@dataclass
class BeltramiField:
    field: ChartField  # complex sigma
    support_radius: float
    sup_norm: float

    @property
    def values(self) -> np.ndarray:
        return self.field.values


def _diff4(v, h, axis):
    """Fourth-order central difference in the interior, second order at
    the two outer layers."""
    out = np.gradient(v, h, axis=axis, edge_order=2)
    sl = [slice(None)] * v.ndim

    def s(a, b):
        sl2 = list(sl)
        sl2[axis] = slice(a, v.shape[axis] + b if b <= 0 else b)
        return tuple(sl2)

    inner = s(2, -2)
    out[inner] = (-v[s(4, 0)] + 8 * v[s(3, -1)] - 8 * v[s(1, -3)] + v[s(0, -4)]) / (12 * h)
    return out


def beltrami_coefficient(map_field: ChartField, support: float | None = None,
                         margin: int = 2) -> BeltramiField:
    """Complex dilatation of a chart map.

    Complex fields use f_zbar / f_z and must preserve orientation. Real
    vector fields use (g11 - g22 + 2i g12) / (g11 + g22 + 2 sqrt(det g)),
    which agrees with f_zbar / f_z for planar orientation-preserving maps.
    Values below 1e-12 in modulus are zeroed; with ``support`` given, sigma
    is zeroed for |z| > support and only that disc is checked.
    """
    v = np.asarray(map_field.values)
    h = map_field.h
    z = map_field.coords()
    region = np.zeros(v.shape[:2], dtype=bool)
    region[margin:-margin or None, margin:-margin or None] = True
    if support is not None:
        region &= np.abs(z) <= support
    if np.iscomplexobj(v) and v.ndim == 2:
        fx = _diff4(v, h, 1)
        fy = _diff4(v, h, 0)
        fz = 0.5 * (fx - 1j * fy)
        fzb = 0.5 * (fx + 1j * fy)
        jac = np.abs(fz) ** 2 - np.abs(fzb) ** 2
        if np.any(jac[region] <= 0):
            raise OrientationDegenerate("map reverses orientation or degenerates")
        with np.errstate(divide="ignore", invalid="ignore"):
            sigma = np.where(region, fzb / fz, 0.0)
    else:
        comps = _components(v)
        fx = _diff4(comps, h, 1)
        fy = _diff4(comps, h, 0)
        g11 = np.sum(fx * fx, axis=-1)
        g22 = np.sum(fy * fy, axis=-1)
        g12 = np.sum(fx * fy, axis=-1)
        det = g11 * g22 - g12 * g12
        if np.any(det[region] <= 0):
            raise OrientationDegenerate("metric degenerates on the grid")
        with np.errstate(divide="ignore", invalid="ignore"):
            sigma = (g11 - g22 + 2j * g12) / (g11 + g22 + 2 * np.sqrt(np.maximum(det, 0)))
        sigma = np.where(region, sigma, 0.0)
    sigma = np.where(np.abs(sigma) < SIGMA_FLOOR, 0.0, sigma)
    return make_beltrami(ChartField(map_field.origin, h, map_field.nx, map_field.ny, sigma,
                                    map_field.chart))


def make_beltrami(field: ChartField) -> BeltramiField:
    vals = np.asarray(field.values, dtype=complex)
    nz = vals != 0
    R = float(np.max(np.abs(field.coords()[nz]))) if nz.any() else 0.0
    sup = float(np.max(np.abs(vals))) if vals.size else 0.0
    return BeltramiField(ChartField(field.origin, field.h, field.nx, field.ny, vals, field.chart), R, sup)


# ------------------------------------------------------- Cauchy / Beurling

def _corner_sum(G, xc, yc, h):
    x0, x1 = xc - h / 2, xc + h / 2
    y0, y1 = yc - h / 2, yc + h / 2
    return G(x1 + 1j * y1) - G(x0 + 1j * y1) - G(x1 + 1j * y0) + G(x0 + 1j * y0)


@lru_cache(maxsize=8)
def cell_kernels(n: int, h: float):
    """Cell-integrated kernels of the Cauchy transform (1/(pi z)) and the
    Beurling transform (-1/(pi z^2)) for offsets -(n-1)..(n-1) cells.

    Exact antiderivatives in each cell: -i (z log z - z) for 1/z and
    -i log z for -1/z^2. Cells left of the imaginary axis use the parity of
    the kernels so no cell crosses the branch cut; the central cell is the
    principal value 0 for both.
    """
    k = np.arange(-(n - 1), n)
    xc = np.abs(k)[None, :] * h + 0.0 * k[:, None]
    yc = (k[:, None] * h) + 0.0 * k[None, :]
    sign = np.where(k[None, :] < 0, -1.0, 1.0) + 0.0 * k[:, None]
    yc = yc * sign  # reflect (x, y) -> (-x, -y) for x < 0
    with np.errstate(divide="ignore", invalid="ignore"):
        C = _corner_sum(lambda z: -1j * (z * np.log(z) - z), xc, yc, h) / np.pi
        S = _corner_sum(lambda z: -1j * np.log(z), xc, yc, h) / np.pi
    C = C * sign  # 1/z is odd
    mid = n - 1
    C[mid, mid] = 0.0
    S[mid, mid] = 0.0
    C.setflags(write=False)
    S.setflags(write=False)
    return C, S


@lru_cache(maxsize=8)
def _kernel_spectra(n: int, h: float):
    C, S = cell_kernels(n, h)
    L = 2 * n

    def wrap(K):
        out = np.zeros((L, L), dtype=complex)
        idx = np.arange(-(n - 1), n) % L
        out[np.ix_(idx, idx)] = K
        return sfft.fft2(out, workers=_workers())

    return wrap(C), wrap(S)


def _convolve(values, spectrum, n):
    L = 2 * n
    pad = np.zeros((L, L), dtype=complex)
    pad[:n, :n] = values
    out = sfft.ifft2(sfft.fft2(pad, workers=_workers()) * spectrum, workers=_workers())
    return out[:n, :n]


def cauchy_transform(values, h: float) -> np.ndarray:
    """(1/pi) int f(w) / (z - w) dA(w) on a square grid, f zero outside."""
    n = values.shape[0]
    return _convolve(values, _kernel_spectra(n, h)[0], n)


def beurling_transform(values, h: float) -> np.ndarray:
    """-(1/pi) p.v. int f(w) / (z - w)^2 dA(w) on a square grid."""
    n = values.shape[0]
    return _convolve(values, _kernel_spectra(n, h)[1], n)


@dataclass
class QuasiconformalMap:
    """Normalized solution psi = z + C h - (C h)(0) of d_zbar psi = sigma d_z psi.

    Grid values are interpolated by bicubic splines; outside the grid the
    Cauchy integral is summed from its multipole moments.
    """

    field: ChartField  # psi on the grid
    dbar: np.ndarray  # h = d_zbar psi
    dz: np.ndarray  # 1 + S h = d_z psi
    offset: complex  # (C h)(0)
    moments: np.ndarray
    iterations: int
    residual: float
    _splines: dict = field(default_factory=dict, repr=False)

    @property
    def h(self) -> float:
        return self.field.h

    def _spline(self, name):
        if name not in self._splines:
            f = self.field
            x = f.origin.real + f.h * np.arange(f.nx)
            y = f.origin.imag + f.h * np.arange(f.ny)
            vals = {"phi": f.values - f.coords(), "dbar": self.dbar, "dz": self.dz}[name]
            self._splines[name] = (RectBivariateSpline(x, y, vals.real.T),
                                   RectBivariateSpline(x, y, vals.imag.T))
        return self._splines[name]

    def _interp(self, name, z):
        re, im = self._spline(name)
        return re.ev(z.real, z.imag) + 1j * im.ev(z.real, z.imag)

    def _far(self, z):
        inv = 1.0 / z
        acc = np.zeros_like(z)
        for m in self.moments[::-1]:
            acc = acc * inv + m
        return acc * inv

    def _far_dz(self, z):
        k = np.arange(len(self.moments))
        inv = 1.0 / z
        acc = np.zeros_like(z)
        for kk, m in zip(k[::-1], self.moments[::-1]):
            acc = acc * inv - (kk + 1) * m
        return 1.0 + acc * inv * inv

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        out = np.array(z, dtype=complex)
        fin = np.isfinite(z)
        inside = self.field.contains(z)
        out[inside] = z[inside] + self._interp("phi", z[inside])
        far = fin & ~inside
        out[far] = z[far] + self._far(z[far]) - self.offset
        return out

    def derivatives(self, z):
        """(d_z psi, d_zbar psi) at chart points."""
        z = np.asarray(z, dtype=complex)
        dz = np.ones_like(z)
        db = np.zeros_like(z)
        inside = self.field.contains(z)
        dz[inside] = self._interp("dz", z[inside])
        db[inside] = self._interp("dbar", z[inside])
        far = np.isfinite(z) & ~inside
        dz[far] = self._far_dz(z[far])
        return dz, db

    def inverse(self, z, tol: float = 1e-13, max_iter: int = 60) -> np.ndarray:
        """psi^{-1} by Newton iteration on the real 2x2 Jacobian."""
        z = np.asarray(z, dtype=complex)
        shape = z.shape
        z = z.reshape(-1)
        w = np.array(z, dtype=complex)
        active = np.isfinite(z)
        for _ in range(max_iter):
            if not active.any():
                break
            wa = w[active]
            r = z[active] - self(wa)
            a, b = self.derivatives(wa)
            det = np.abs(a) ** 2 - np.abs(b) ** 2
            step = (np.conj(a) * r - b * np.conj(r)) / det
            w[active] = wa + step
            done = np.abs(step) <= tol * (1 + np.abs(wa))
            idx = np.flatnonzero(active)
            active[idx[done]] = False
        return w.reshape(shape)


def beltrami_normal_solve(sigma: BeltramiField, tol: float = SOLVE_TOL,
                          max_iter: int = 500, sigma_max: float = SIGMA_MAX) -> QuasiconformalMap:
    """Fixed point h = sigma (1 + S h) on the grid of ``sigma``; psi = z + C h."""
    f = sigma.field
    if f.nx != f.ny:
        raise InputError("the Beltrami solver needs a square grid")
    if sigma.sup_norm > sigma_max:
        raise NotContracting(f"sup |sigma| = {sigma.sup_norm:.3g} exceeds {sigma_max}")
    n, h = f.nx, f.h
    z = f.coords()
    s = np.asarray(f.values, dtype=complex)
    centre = f.origin + 0.5 * h * (n - 1) * (1 + 1j)
    quarter = 0.25 * h * (n - 1)
    nz = s != 0
    if nz.any():
        off = z[nz] - centre
        if np.max(np.maximum(np.abs(off.real), np.abs(off.imag))) > quarter + 1e-9 * h:
            raise SupportOverflow("sigma is supported outside the central half of the grid")
    hk = s.copy()
    last = np.inf
    growth = 0
    it = 0
    for it in range(1, max_iter + 1):
        nxt = s * (1.0 + beurling_transform(hk, h))
        diff = float(np.max(np.abs(nxt - hk)))
        hk = nxt
        if diff <= tol:
            break
        growth = growth + 1 if diff > last else 0
        if growth >= 5:
            raise NotContracting("fixed-point iterates grow")
        last = diff
    else:
        raise NotContracting("fixed-point iteration did not converge")
    Sh = beurling_transform(hk, h)
    residual = float(np.max(np.abs(hk - s * (1.0 + Sh))))
    Ch = cauchy_transform(hk, h)
    origin_idx = np.unravel_index(np.argmin(np.abs(z)), z.shape)
    if abs(z[origin_idx]) > 1e-9 * h:
        raise InputError("the grid must contain the chart origin as a node")
    offset = complex(Ch[origin_idx])
    w = hk * h * h / np.pi
    zm = np.ones_like(z)
    moments = []
    for _ in range(MULTIPOLE_ORDER):
        moments.append(complex(np.sum(w * zm)))
        zm = zm * z
    psi = ChartField(f.origin, h, n, n, z + Ch - offset, f.chart)
    return QuasiconformalMap(psi, hk, 1.0 + Sh, offset, np.array(moments), it, residual)


def centered_grid(half_width: float, n: int) -> tuple[complex, float]:
    """Origin and spacing of an n x n grid on [-w, w]^2 with a node at 0
    (n odd)."""
    if n % 2 == 0:
        raise InputError("centred grids need an odd node count")
    h = 2 * half_width / (n - 1)
    return complex(-half_width, -half_width), h


# ------------------------------------------------------------- cut and fill

@dataclass
class ChartFrame:
    """Scaled south chart centred at a domain point: the ball of geodesic
    radius s around ``center`` maps to the unit disc."""

    center: np.ndarray
    rotation: MobiusMap
    scale: float

    @classmethod
    def around(cls, a, s: float) -> "ChartFrame":
        a = unit(np.asarray(a, dtype=float))
        return cls(a, rotation_to_south(a), float(np.tan(s / 2)))

    def to_chart(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        far = p @ self.center < -1 + 1e-15
        with np.errstate(invalid="ignore", divide="ignore"):
            w = stereographic(self.rotation.apply(p), "south") / self.scale
        w[far] = np.inf
        return w

    def from_chart(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=complex)
        far = ~np.isfinite(w)
        p = inverse_stereographic(np.where(far, 0.0, w) * self.scale, "south")
        p[far] = (0.0, 0.0, 1.0)
        return self.rotation.inverse().apply(p)


@dataclass
class AnnulusSurrogate:
    """Least-squares Fourier x Chebyshev model of a chart map on an annulus."""

    r0: float
    r1: float
    modes: int
    degree: int
    coef: np.ndarray  # (basis, k)
    residual: float

    def _x(self, r):
        return (2 * r - (self.r0 + self.r1)) / (self.r1 - self.r0)

    def _basis(self, w, deriv=False):
        w = np.asarray(w, dtype=complex).reshape(-1)
        r = np.abs(w)
        th = np.angle(w)
        x = self._x(r)
        eye = np.eye(self.degree + 1)
        T = np.stack([cheb.chebval(x, eye[k]) for k in range(self.degree + 1)], axis=1)
        if deriv:
            T = np.stack([cheb.chebval(x, cheb.chebder(eye[k])) for k in range(self.degree + 1)],
                         axis=1) * (2 / (self.r1 - self.r0))
        ang = [np.ones_like(th)]
        for m in range(1, self.modes + 1):
            ang += [np.cos(m * th), np.sin(m * th)]
        A = np.stack(ang, axis=1)
        return (T[:, :, None] * A[:, None, :]).reshape(len(w), -1)

    @classmethod
    def fit(cls, w, values, r0, r1, modes=8, degree=4) -> "AnnulusSurrogate":
        s = cls(r0, r1, modes, degree, np.zeros(0), 0.0)
        B = s._basis(w)
        if len(w) < 2 * B.shape[1]:
            raise ResolutionLimit("too few mesh vertices in the cut annulus")
        coef, *_ = np.linalg.lstsq(B, values, rcond=None)
        s.coef = coef
        s.residual = float(np.max(np.abs(B @ coef - values)))
        return s

    def evaluate(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=complex)
        return (self._basis(w) @ self.coef).reshape(w.shape + (self.coef.shape[1],))

    def radial_derivative(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=complex)
        return (self._basis(w, True) @ self.coef).reshape(w.shape + (self.coef.shape[1],))


@dataclass
class FlatCap:
    """Holomorphic polynomial in an affine plane, optionally pushed radially
    onto the best-fit sphere of the annulus image."""

    origin: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    poly: np.ndarray  # ascending complex coefficients
    center: np.ndarray | None
    radius: float | None
    residual: float

    def planar(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=complex)
        p = np.polynomial.polynomial.polyval(w, self.poly)
        return (self.origin + p.real[..., None] * self.e1 + p.imag[..., None] * self.e2)

    def evaluate(self, w) -> np.ndarray:
        q = self.planar(w)
        if self.center is None:
            return q
        d = q - self.center
        return self.center + self.radius * d / np.linalg.norm(d, axis=-1, keepdims=True)

    def radial_derivative(self, w, step: float = 1e-6) -> np.ndarray:
        w = np.asarray(w, dtype=complex)
        u = w / np.abs(w)
        ds = step * np.abs(w)
        return (self.evaluate(w + ds * u) - self.evaluate(w - ds * u)) / (2 * ds[..., None])


def fit_flat_cap(w, X, degree: int = 4, flat_ratio: float = 1e3) -> FlatCap:
    c0 = X.mean(axis=0)
    Y = X - c0
    _, sv, vt = np.linalg.svd(Y, full_matrices=False)
    e1, e2 = vt[0], vt[1]
    V = np.vander(w, degree + 1, increasing=True)
    best = None
    for sgn in (1.0, -1.0):
        zeta = Y @ e1 + 1j * sgn * (Y @ e2)
        coef, *_ = np.linalg.lstsq(V, zeta, rcond=None)
        res = float(np.max(np.abs(V @ coef - zeta)))
        if best is None or res < best[0]:
            best = (res, coef, sgn)
    res, coef, sgn = best
    diam = point_diameter(X)
    center = radius = None
    planar = sv[-1] <= 1e-9 * sv[0] if len(sv) > 2 else True
    if not planar:
        A = np.concatenate([2 * X, np.ones((len(X), 1))], axis=1)
        sol, *_ = np.linalg.lstsq(A, np.sum(X * X, axis=1), rcond=None)
        C = sol[:-1]
        R2 = sol[-1] + C @ C
        if R2 > 0 and np.sqrt(R2) < flat_ratio * diam:
            center, radius = C, float(np.sqrt(R2))
    return FlatCap(c0, e1, sgn * e2, coef, center, radius, res)


@dataclass
class CutFillResult:
    xi: Immersion
    psi: QuasiconformalMap
    frame: ChartFrame
    outer: float
    inner: float
    good_radius: float
    content: float
    sigma_sup: float
    kappa: float
    eta_prime: float
    defect: float
    filled_diameter: float
    fit_residual: float
    modified: np.ndarray  # vertex mask with new images
    fill: AnnulusFill = field(repr=False, default=None)
    cap: FlatCap = field(repr=False, default=None)

    def exterior_faces(self, rings: int = 2) -> np.ndarray:
        """Faces whose curvature cannot see the modified vertices."""
        xi = self.xi
        off, nb = vertex_neighbors(xi.faces, xi.n_vertices)
        touched = self.modified.copy()
        for _ in range(rings):
            grow = touched.copy()
            for v in np.flatnonzero(touched):
                grow[nb[off[v] : off[v + 1]]] = True
            touched = grow
        return ~np.any(touched[xi.faces], axis=1)

    def report(self) -> dict:
        return {"outer": self.outer, "inner": self.inner, "good_radius": self.good_radius,
                "content": self.content, "sigma_sup": self.sigma_sup, "kappa": self.kappa,
                "eta_prime": self.eta_prime, "defect": self.defect,
                "filled_diameter": self.filled_diameter, "fit_residual": self.fit_residual,
                "iterations": self.psi.iterations, "residual": self.psi.residual}


def _glued(w, r, fill: AnnulusFill, cap: FlatCap) -> np.ndarray:
    w = np.asarray(w, dtype=complex)
    out = np.empty(w.shape + (fill.coef.shape[2],))
    in_cap = np.abs(w) < 0.5 * r
    out[in_cap] = cap.evaluate(w[in_cap])
    out[~in_cap] = fill.evaluate(w[~in_cap])
    return out


def cut_and_fill(Phi: Immersion, a, s: float, t: float, eta: float | None = ETA,
                 n_grid: int = 257, degree: int = 4,
                 sigma_max: float = SIGMA_MAX) -> CutFillResult:
    """Replace Phi inside the domain ball B_s(a) by a conformal cap.

    With ``eta`` set, the annulus B_s(a) minus B_t(a) must carry
    A + int |II|^2 below it. Pass ``eta=None`` to skip that check.
    """
    if not 0 < t < s < np.pi:
        raise InputError("need 0 < t < s < pi")
    a = unit(np.asarray(a, dtype=float))
    for bp in Phi.branch_points:
        d = geodesic(np.asarray(bp.location, dtype=float), a)
        if 0.5 * s <= d < s:
            raise PreconditionViolation("branch point inside the cut annulus")
    content = annulus_content(Phi, a, s, t)
    if eta is not None and content >= eta:
        raise PreconditionEnergy(f"annulus content {content:.4g} is not below eta = {eta}")
    frame = ChartFrame.around(a, s)
    w = frame.to_chart(Phi.domain)
    aw = np.abs(w)
    X = Phi.image

    ring = (aw >= 0.47) & (aw <= 1.05)
    sur = AnnulusSurrogate.fit(w[ring], X[ring], 0.47, 1.05)
    o, hg = centered_grid(1.05, 211)
    grid = o + hg * np.arange(211)[None, :] + 1j * hg * np.arange(211)[:, None]
    r = good_radius(ChartField(o, hg, 211, 211, sur.evaluate(grid)))

    band = (aw >= 0.5 * r) & (aw <= 1.0)
    cap = fit_flat_cap(w[band], X[band], degree)
    fill = fill_from_functions(r, sur.evaluate, sur.radial_derivative, cap.evaluate,
                               cap.radial_derivative)

    og, hs = centered_grid(2 * r, n_grid)
    zg = og + hs * np.arange(n_grid)[None, :] + 1j * hs * np.arange(n_grid)[:, None]
    G = _glued(zg, r, fill, cap)
    sigma = beltrami_coefficient(ChartField(og, hs, n_grid, n_grid, G), support=r)
    psi = beltrami_normal_solve(sigma, sigma_max=sigma_max)

    modified = aw < r
    image = X.copy()
    image[modified] = _glued(w[modified], r, fill, cap)
    new_w = psi(w)
    domain = frame.from_chart(new_w)
    domain[~np.isfinite(w)] = Phi.domain[~np.isfinite(w)]
    moved = tuple(type(b)(frame.from_chart(psi(frame.to_chart(b.location[None, :])))[0], b.order,
                          b.fit_constant, b.fit_residual, b.fit_window)
                  for b in Phi.branch_points)
    xi = Immersion(domain, image, Phi.level, Phi.target, moved)

    inside = aw < 1.0
    filled_diameter = point_diameter(image[modified]) if modified.any() else 0.0
    bnd = level_set_boundary(Phi, aw - 1.0)
    bdiam = point_diameter(bnd.reshape(-1, X.shape[1])) if len(bnd) else 0.0
    kappa = point_diameter(image[inside]) / bdiam if bdiam > 0 else float("inf")
    faces_in = np.all(inside[xi.faces], axis=1)
    cur = xi.curvature
    tf = np.maximum(cur.norm_II2 - 2 * np.sum(cur.mean_curvature**2, axis=1), 0.0)
    eta_prime = float(np.sum((1 + tf[faces_in]) * xi.image_areas[faces_in]))
    defect = _conformal_defect(psi, r, fill, cap, sur)
    return CutFillResult(xi, psi, frame, s, t, r, content, sigma.sup_norm, kappa, eta_prime,
                         defect, filled_diameter, sur.residual, modified, fill, cap)


def _conformal_defect(psi: QuasiconformalMap, r, fill, cap, sur, n: int = 129) -> float:
    """sup |sigma| of the filled map in the corrected coordinates, away
    from the two gluing circles where it is only C^1."""
    reach = float(np.max(np.abs(psi(r * np.exp(2j * np.pi * np.arange(64) / 64)))))
    o, h = centered_grid(reach, n)
    z = o + h * np.arange(n)[None, :] + 1j * h * np.arange(n)[:, None]
    w = psi.inverse(z)
    aw = np.abs(w)
    vals = np.where((aw < r)[..., None], _glued(w, r, fill, cap), sur.evaluate(w))
    bel = beltrami_coefficient(ChartField(o, h, n, n, vals), support=reach)
    seam = (np.abs(aw - r) < 4 * h) | (np.abs(aw - 0.5 * r) < 4 * h)
    keep = (aw < r) & ~seam
    return float(np.max(np.abs(bel.values[keep]))) if keep.any() else 0.0
