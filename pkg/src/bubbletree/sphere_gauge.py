"""Stereographic charts, Moebius maps, gauge normalization and chart grids.

Chart conventions: the ``south`` chart sends the south pole to 0 and the
north pole to infinity, z = (x + iy) / (1 - p3). The ``north`` chart is
w = (x - iy) / (1 + p3) = 1 / z.

Sphere points are handled internally through homogeneous coordinates
[u : v] with z = u / v in the south chart; this keeps Moebius actions exact
near the poles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import AntipodalAmbiguity, InputError, WindowTouchesPole
from .geom_core import Immersion

CHARTS = ("south", "north")


def _check_chart(chart: str):
    if chart not in CHARTS:
        raise InputError(f"unknown chart {chart!r}")


def to_homogeneous(p: np.ndarray):
    """South-chart homogeneous coordinates (u, v) of unit vectors."""
    p = np.asarray(p, dtype=float)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    low = z <= 0
    u = np.where(low, x + 1j * y, 1.0 + z)
    v = np.where(low, 1.0 - z, x - 1j * y)
    return u, v


def from_homogeneous(u, v) -> np.ndarray:
    uv = u * np.conj(v)
    au = np.abs(u) ** 2
    av = np.abs(v) ** 2
    s = au + av
    p = np.stack([2.0 * uv.real / s, 2.0 * uv.imag / s, (au - av) / s], axis=-1)
    return p / np.linalg.norm(p, axis=-1, keepdims=True)


def stereographic(p, chart: str = "south"):
    """Chart coordinate of unit vectors; the projection pole maps to ``inf``."""
    _check_chart(chart)
    p = np.asarray(p, dtype=float)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    if chart == "south":
        num, den = x + 1j * y, 1.0 - z
    else:
        num, den = x - 1j * y, 1.0 + z
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    at_pole = den <= 0
    if np.any(at_pole):
        out = np.where(at_pole, complex(np.inf, 0.0), out)
    return out


def inverse_stereographic(z, chart: str = "south") -> np.ndarray:
    _check_chart(chart)
    z = np.asarray(z, dtype=complex)
    if chart == "north":
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(np.isinf(z), 0.0, np.where(z == 0, np.inf, 1.0 / np.where(z == 0, 1.0, z)))
    inf = ~np.isfinite(z)
    big = (np.abs(z) > 1.0) & ~inf
    out = np.empty(z.shape + (3,))
    zs = np.where(big | inf, 0.0, z)
    r2 = np.abs(zs) ** 2
    out[..., 0] = 2 * zs.real / (1 + r2)
    out[..., 1] = 2 * zs.imag / (1 + r2)
    out[..., 2] = (r2 - 1) / (1 + r2)
    if np.any(big):
        w = 1.0 / np.where(big, z, 1.0)
        r2w = np.abs(w) ** 2
        alt = np.stack([2 * w.real, -2 * w.imag, 1 - r2w], axis=-1) / (1 + r2w)[..., None]
        out = np.where(big[..., None], alt, out)
    if np.any(inf):
        out[inf] = (0.0, 0.0, 1.0)
    return out


@dataclass(frozen=True)
class MobiusMap:
    """z -> (a z + b) / (c z + d) in the south chart, normalized to det 1."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex).reshape(2, 2)
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        if not np.isfinite(det) or abs(det) == 0:
            raise InputError("Moebius matrix must be invertible")
        if det != 1:
            m = m / np.sqrt(det)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "MobiusMap":
        return cls(np.eye(2))

    @classmethod
    def dilation(cls, factor: complex) -> "MobiusMap":
        """z -> factor * z."""
        return cls(np.array([[factor, 0.0], [0.0, 1.0]], dtype=complex))

    @classmethod
    def from_rotation(cls, R: np.ndarray) -> "MobiusMap":
        R = np.asarray(R, dtype=float)
        src = np.array([[0.0, 0.0, -1.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        return cls.from_three_points(src, src @ R.T)

    @classmethod
    def from_quaternion(cls, q) -> "MobiusMap":
        """Rotation from a (not necessarily unit) quaternion, scalar last."""
        return cls.from_rotation(Rotation.from_quat(np.asarray(q, dtype=float)).as_matrix())

    @classmethod
    def from_three_points(cls, src, dst) -> "MobiusMap":
        """The unique map sending sphere points src[k] to dst[k]."""
        return cls(_three_point_matrix(dst, inverse=True) @ _three_point_matrix(src))

    @property
    def det(self) -> complex:
        m = self.matrix
        return complex(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])

    def __matmul__(self, other: "MobiusMap") -> "MobiusMap":
        """Composition: (self @ other)(p) = self(other(p))."""
        return MobiusMap(self.matrix @ other.matrix)

    def inverse(self) -> "MobiusMap":
        a, b, c, d = self.matrix.reshape(-1)
        return MobiusMap(np.array([[d, -b], [-c, a]]))

    def apply_z(self, z):
        a, b, c, d = self.matrix.reshape(-1)
        z = np.asarray(z, dtype=complex)
        inf = ~np.isfinite(z)
        zs = np.where(inf, 0.0, z)
        num = np.where(inf, a, a * zs + b)
        den = np.where(inf, c, c * zs + d)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = num / den
        return np.where(den == 0, complex(np.inf, 0.0), out)

    def apply(self, p) -> np.ndarray:
        """Action on unit vectors."""
        p = np.asarray(p, dtype=float)
        u, v = to_homogeneous(p)
        a, b, c, d = self.matrix.reshape(-1)
        return from_homogeneous(a * u + b * v, c * u + d * v)

    def distance_to_identity(self) -> float:
        m = self.matrix
        return float(min(np.abs(m - np.eye(2)).max(), np.abs(m + np.eye(2)).max()))


def _three_point_matrix(pts, inverse: bool = False) -> np.ndarray:
    """Matrix sending pts[0] -> 0, pts[1] -> 1, pts[2] -> inf (or its inverse)."""
    u, v = to_homogeneous(np.asarray(pts, dtype=float))
    r1 = np.array([v[0], -u[0]])
    r3 = np.array([v[2], -u[2]])
    k1 = r1[0] * u[1] + r1[1] * v[1]
    k3 = r3[0] * u[1] + r3[1] * v[1]
    if abs(k1) < 1e-300 or abs(k3) < 1e-300:
        raise AntipodalAmbiguity("three-point normalization is degenerate")
    m = np.array([r1 / k1, r3 / k3])
    if not inverse:
        return m
    a, b, c, d = m.reshape(-1)
    return np.array([[d, -b], [-c, a]])


def random_mobius(rng: np.random.Generator, max_dilation: float = 1.5) -> MobiusMap:
    """Rotation, then a dilation in [1/max_dilation, max_dilation], then a rotation."""
    r1 = MobiusMap.from_quaternion(rng.normal(size=4))
    r2 = MobiusMap.from_quaternion(rng.normal(size=4))
    k = float(np.exp(rng.uniform(-np.log(max_dilation), np.log(max_dilation))))
    return r2 @ MobiusMap.dilation(k) @ r1


def mobius_apply(f: MobiusMap, Phi: Immersion) -> Immersion:
    """Phi o f on the same domain mesh by piecewise-linear interpolation."""
    pts = f.apply(Phi.domain)
    image = Phi.locator.interpolate(Phi.image, pts)
    if Phi.target.kind == "round_sphere":
        image *= Phi.target.radius / np.linalg.norm(image, axis=1, keepdims=True)
    moved = tuple(
        type(b)(f.inverse().apply(b.location), b.order, b.fit_constant, b.fit_residual, b.fit_window)
        for b in Phi.branch_points
    )
    return Immersion(Phi.domain, image, Phi.level, Phi.target, moved)


def reparametrize(Phi: Immersion, f: MobiusMap) -> Immersion:
    """Exact Phi o f: every sample keeps its image and its domain position
    moves to f^-1(v)."""
    g = f.inverse()
    moved = tuple(
        type(b)(g.apply(b.location), b.order, b.fit_constant, b.fit_residual, b.fit_window)
        for b in Phi.branch_points
    )
    return Immersion(g.apply(Phi.domain), Phi.image, Phi.level, Phi.target, moved)


def normalize_gauge(q1, q2) -> MobiusMap:
    """Map g with g(q1) = 0 and g(q2) = 1 in the south chart.

    The remaining rotation freedom is fixed by sending the antipode of q1 to
    infinity, which puts the midpoint of the q1-q2 great-circle arc on the
    positive real axis. Apply it as ``reparametrize(Phi, g.inverse())`` so the
    markers land at 0 and 1.
    """
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    q1 = q1 / np.linalg.norm(q1)
    q2 = q2 / np.linalg.norm(q2)
    if np.linalg.norm(np.cross(q1, q2)) < 1e-12:
        if np.dot(q1, q2) > 0:
            raise InputError("gauge markers coincide")
        raise AntipodalAmbiguity("antipodal markers leave the rotation undetermined")
    return MobiusMap.from_three_points(np.stack([q1, q2, -q1]), _ZERO_ONE_INF)


_ZERO_ONE_INF = np.array([[0.0, 0.0, -1.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def gauge_immersion(Phi: Immersion, q1, q2) -> tuple[Immersion, MobiusMap]:
    g = normalize_gauge(q1, q2)
    return reparametrize(Phi, g.inverse()), g


def rotation_to_south(a) -> MobiusMap:
    """Rotation taking the unit vector ``a`` to the south pole."""
    a = np.asarray(a, dtype=float)
    a = a / np.linalg.norm(a)
    s = np.array([0.0, 0.0, -1.0])
    axis = np.cross(a, s)
    sn = np.linalg.norm(axis)
    ang = np.arctan2(sn, np.dot(a, s))
    if sn < 1e-15:
        if ang < 1.0:
            return MobiusMap.identity()
        # half turn about the x-axis, z -> 1/z, exact in homogeneous form
        return MobiusMap(np.array([[0.0, 1j], [1j, 0.0]]))
    return MobiusMap.from_rotation(Rotation.from_rotvec(axis / sn * ang).as_matrix())


# ------------------------------------------------------------------ chart grids

@dataclass
class ChartField:
    origin: complex
    h: float
    nx: int
    ny: int
    values: np.ndarray  # (ny, nx) complex or (ny, nx, n) real
    chart: str = "south"

    def __post_init__(self):
        _check_chart(self.chart)
        if self.nx < 8 or self.ny < 8:
            raise InputError("chart fields need at least 8 x 8 samples")
        if self.h <= 0:
            raise InputError("grid spacing must be positive")
        self.values = np.asarray(self.values)
        if self.values.shape[:2] != (self.ny, self.nx):
            raise InputError("values do not match the grid dimensions")
        if not np.all(np.isfinite(self.values)):
            raise InputError("chart field values must be finite")

    def coords(self) -> np.ndarray:
        x = self.origin.real + self.h * np.arange(self.nx)
        y = self.origin.imag + self.h * np.arange(self.ny)
        return x[None, :] + 1j * y[:, None]

    def sample(self, z) -> np.ndarray:
        """Bilinear interpolation at chart points (clamped to the grid)."""
        z = np.asarray(z, dtype=complex)
        fx = (z.real - self.origin.real) / self.h
        fy = (z.imag - self.origin.imag) / self.h
        i = np.clip(np.floor(fx).astype(int), 0, self.nx - 2)
        j = np.clip(np.floor(fy).astype(int), 0, self.ny - 2)
        tx = fx - i
        ty = fy - j
        v = self.values
        v00, v10, v01, v11 = v[j, i], v[j, i + 1], v[j + 1, i], v[j + 1, i + 1]
        shape = tx.shape + (1,) * (v.ndim - 2)
        tx = tx.reshape(shape)
        ty = ty.reshape(shape)
        return v00 + tx * (v10 - v00) + ty * (v01 - v00) + tx * ty * (v11 - v10 - v01 + v00)

    def contains(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        x0, y0 = self.origin.real, self.origin.imag
        x1 = x0 + self.h * (self.nx - 1)
        y1 = y0 + self.h * (self.ny - 1)
        return np.isfinite(z) & (z.real >= x0) & (z.real <= x1) & (z.imag >= y0) & (z.imag <= y1)


def _grid_for(window, h):
    xmin, xmax, ymin, ymax = window
    nx = int(np.floor((xmax - xmin) / h + 1e-9)) + 1
    ny = int(np.floor((ymax - ymin) / h + 1e-9)) + 1
    return complex(xmin, ymin), nx, ny


def _check_window(window, h):
    xmin, xmax, ymin, ymax = window
    corners = np.array([complex(x, y) for x in (xmin, xmax) for y in (ymin, ymax)])
    rmax = float(np.max(np.abs(corners)))
    # geodesic distance from the projection pole of the farthest window point
    if rmax > 0 and 2.0 * np.arctan(1.0 / rmax) < 2.0 * h:
        raise WindowTouchesPole("chart window reaches the projection pole")


def resample_to_chart(Phi: Immersion, window, h: float, chart: str = "south",
                      values: np.ndarray | None = None) -> ChartField:
    """Interpolate per-vertex values (default: the image) onto a chart grid."""
    _check_window(window, h)
    origin, nx, ny = _grid_for(window, h)
    grid = ChartField(origin, h, nx, ny, np.zeros((ny, nx)), chart)
    pts = inverse_stereographic(grid.coords().reshape(-1), chart)
    src = Phi.image if values is None else np.asarray(values)
    vals = Phi.locator.interpolate(src, pts)
    grid.values = vals.reshape((ny, nx) + src.shape[1:])
    return grid


def resample_from_chart(field: ChartField, Phi: Immersion) -> Immersion:
    """Write chart values back to vertices whose projections lie in the grid."""
    z = stereographic(Phi.domain, field.chart)
    inside = field.contains(z)
    vals = field.sample(z[inside])
    image = Phi.image.copy()
    if np.iscomplexobj(vals):
        image[inside, 0] = vals.real
        image[inside, 1] = vals.imag
        image[inside, 2:] = 0.0
    else:
        image[inside] = vals
    return Immersion(Phi.domain, image, Phi.level, Phi.target, Phi.branch_points)


def write_cfd(field: ChartField, path) -> None:
    vals = field.values
    is_complex = np.iscomplexobj(vals)
    flat = vals.reshape(field.ny * field.nx, -1)
    if is_complex:
        flat = np.concatenate([flat.real, flat.imag], axis=1)
    ncomp = flat.shape[1]
    head = (f"cfd 1 {field.chart} {field.origin.real:.17g} {field.origin.imag:.17g} "
            f"{field.h:.17g} {field.nx} {field.ny} {ncomp} {'complex' if is_complex else 'real'}")
    fmt = " ".join(["%.17g"] * ncomp)
    with open(path, "w") as fh:
        fh.write(head + "\n")
        fh.write("\n".join(fmt % tuple(r) for r in flat) + "\n")


def read_cfd(path) -> ChartField:
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 10 or head[:2] != ["cfd", "1"]:
            raise InputError(f"{path}: not a cfd v1 file")
        chart = head[2]
        origin = complex(float(head[3]), float(head[4]))
        h = float(head[5])
        nx, ny, ncomp = int(head[6]), int(head[7]), int(head[8])
        data = np.loadtxt(fh, ndmin=2)
    if head[9] == "complex":
        half = ncomp // 2
        data = data[:, :half] + 1j * data[:, half:]
    vals = data.reshape(ny, nx, -1)
    if vals.shape[2] == 1:
        vals = vals[:, :, 0]
    return ChartField(origin, h, nx, ny, vals, chart)
