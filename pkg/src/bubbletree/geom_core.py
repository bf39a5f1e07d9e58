"""Discrete immersions of the 2-sphere and their first/second order geometry.

An :class:`Immersion` pairs a triangulated unit sphere (the domain) with an
image point in R^n per vertex. Connectivity is always the canonical
icosphere of the stored level; domain vertices may be displaced along the
sphere so that graded parametrizations share the same combinatorics.

Quadrature is one point per triangle. Curvature uses a per-vertex tangent
projector P (averaged from incident faces) differentiated across each face:
for tangent X, Y the second fundamental form is II(X, Y) = N dP(X) Y.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order
from scipy.spatial import ConvexHull

from .errors import (
    DegenerateTriangle,
    DegreeUnreliable,
    EmptyRegion,
    FrameDiscontinuity,
    InputError,
)
from .mesh import MeshLocator, geodesic, icosphere, level_from_vertex_count, vertex_faces


@dataclass(frozen=True)
class Target:
    """Ambient space: ``euclidean`` R^n or the round sphere of ``radius`` in R^n."""

    kind: str = "euclidean"
    dim: int = 3
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in ("euclidean", "round_sphere"):
            raise InputError(f"unknown target kind {self.kind!r}")
        if self.dim < 3:
            raise InputError("ambient dimension must be at least 3")

    @property
    def tag(self) -> str:
        if self.kind == "euclidean":
            return "euclidean"
        return f"round_sphere:{self.radius:.17g}"

    @classmethod
    def from_tag(cls, tag: str, dim: int) -> "Target":
        if tag == "euclidean":
            return cls("euclidean", dim)
        if tag.startswith("round_sphere:"):
            return cls("round_sphere", dim, float(tag.split(":", 1)[1]))
        raise InputError(f"unknown target tag {tag!r}")

    @property
    def curvature_bound(self) -> float:
        """sup |K| of the target (0 for Euclidean space)."""
        return 0.0 if self.kind == "euclidean" else 1.0 / self.radius**2


@dataclass(frozen=True)
class BranchPoint:
    location: np.ndarray
    order: int
    fit_constant: float = float("nan")
    fit_residual: float = 0.0
    fit_window: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.order < 2:
            raise ValueError("branch order must be at least 2")

    def to_dict(self):
        return {
            "location": [float(x) for x in self.location],
            "order": int(self.order),
            "fit_constant": float(self.fit_constant),
            "fit_residual": float(self.fit_residual),
            "fit_window": [float(x) for x in self.fit_window],
        }


@dataclass(eq=False)
class Immersion:
    domain: np.ndarray
    image: np.ndarray
    level: int
    target: Target = field(default_factory=Target)
    branch_points: tuple = ()
    nondegeneracy_floor: float | None = None

    def __post_init__(self):
        self.domain = np.ascontiguousarray(self.domain, dtype=float)
        self.image = np.ascontiguousarray(self.image, dtype=float)
        nv = len(icosphere(self.level)[0])
        if self.domain.shape != (nv, 3):
            raise InputError(f"domain must have shape ({nv}, 3)")
        if self.image.ndim != 2 or len(self.image) != nv:
            raise InputError("image must have one row per domain vertex")
        if self.image.shape[1] != self.target.dim:
            self.target = Target(self.target.kind, self.image.shape[1], self.target.radius)
        norms = np.linalg.norm(self.domain, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            self.domain = self.domain / norms[:, None]
        if not np.all(np.isfinite(self.image)):
            raise InputError("image contains non-finite values")
        if self.target.kind == "round_sphere":
            r = self.target.radius
            dev = np.abs(np.linalg.norm(self.image, axis=1) - r)
            if np.any(dev > 1e-8 * r):
                raise InputError("image leaves the round-sphere target")
        self.branch_points = tuple(self.branch_points)
        if self.nondegeneracy_floor is None:
            self.nondegeneracy_floor = _singular_ratio_floor(self)

    @property
    def faces(self) -> np.ndarray:
        return icosphere(self.level)[1]

    @property
    def n_vertices(self) -> int:
        return len(self.domain)

    def with_image(self, image, **kw) -> "Immersion":
        return Immersion(self.domain, image, self.level, kw.pop("target", self.target),
                         kw.pop("branch_points", self.branch_points), **kw)

    def with_domain(self, domain, **kw) -> "Immersion":
        return Immersion(domain, self.image, self.level, self.target,
                         kw.pop("branch_points", self.branch_points), **kw)

    @cached_property
    def locator(self) -> MeshLocator:
        return MeshLocator(self.domain, self.faces)

    @cached_property
    def face_centers(self) -> np.ndarray:
        """Domain barycenters pushed to the unit sphere."""
        c = self.domain[self.faces].sum(axis=1)
        return c / np.linalg.norm(c, axis=1, keepdims=True)

    @cached_property
    def domain_areas(self) -> np.ndarray:
        d = self.domain[self.faces]
        return 0.5 * np.linalg.norm(np.cross(d[:, 1] - d[:, 0], d[:, 2] - d[:, 0]), axis=1)

    @cached_property
    def image_areas(self) -> np.ndarray:
        x = self.image[self.faces]
        return _tri_area(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])

    @cached_property
    def branch_faces(self) -> np.ndarray:
        """Mask of one-ring faces around marked branch points."""
        mask = np.zeros(len(self.faces), dtype=bool)
        if not self.branch_points:
            return mask
        offsets, vf = vertex_faces(self.faces, self.n_vertices)
        locs = np.array([b.location for b in self.branch_points], dtype=float)
        _, nearest = self.locator.tree.query(locs)
        for v in np.atleast_1d(nearest):
            mask[vf[offsets[v] : offsets[v + 1]]] = True
        face, _ = self.locator.locate(locs)
        mask[face] = True
        return mask

    @cached_property
    def curvature(self) -> "CurvatureSample":
        return _curvature(self)

    def copy(self) -> "Immersion":
        return Immersion(self.domain.copy(), self.image.copy(), self.level, self.target,
                         self.branch_points, self.nondegeneracy_floor)


def _tri_area(e1, e2):
    g11 = np.sum(e1 * e1, axis=-1)
    g22 = np.sum(e2 * e2, axis=-1)
    g12 = np.sum(e1 * e2, axis=-1)
    return 0.5 * np.sqrt(np.maximum(g11 * g22 - g12 * g12, 0.0))


@dataclass
class MetricSample:
    g: np.ndarray  # (F, 2, 2)
    area_element: np.ndarray  # sqrt(det g)
    domain_area: np.ndarray  # |T| in the chosen coordinates


@dataclass
class FrameSample:
    e1: np.ndarray  # (F, n)
    e2: np.ndarray
    normals: np.ndarray  # (F, m-2, n) normal basis inside the target
    target_normal: np.ndarray | None = None  # radial unit normal for sphere targets


@dataclass
class CurvatureSample:
    second_form: np.ndarray  # (F, 2, 2, n) in an orthonormal tangent frame
    mean_curvature: np.ndarray  # (F, n)
    norm_II2: np.ndarray  # |II|^2
    norm_Dn2: np.ndarray  # |Dn|^2, computed from the transposed block
    gauss_curvature: np.ndarray  # intrinsic K via the Gauss equation
    excluded: np.ndarray  # faces carrying no curvature (branch rings, degenerate)


@dataclass
class EnergyReport:
    A: float
    W: float
    F: float
    epsilon: float = float("nan")
    regions: dict = field(default_factory=dict)

    @property
    def G(self) -> float:
        return self.A + self.F

    @property
    def L(self) -> float:
        return self.A + self.W

    @property
    def dn2(self) -> float:
        """Total curvature integral of |dn|^2 (= 2F)."""
        return 2.0 * self.F

    def to_dict(self):
        out = {"A": self.A, "W": self.W, "F": self.F, "G": self.G, "L": self.L}
        if self.regions:
            out["regions"] = {k: v.to_dict() for k, v in self.regions.items()}
        return out


def _local_domain_coords(Phi: Immersion, chart: str | None):
    """Edge vectors of every domain triangle in 2D coordinates."""
    d = Phi.domain[Phi.faces]
    if chart is None:
        e1 = d[:, 1] - d[:, 0]
        e2 = d[:, 2] - d[:, 0]
        t1 = e1 / np.linalg.norm(e1, axis=1, keepdims=True)
        nrm = np.cross(e1, e2)
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        t2 = np.cross(nrm, t1)
        E = np.empty((len(d), 2, 2))
        E[:, 0, 0] = np.sum(e1 * t1, axis=1)
        E[:, 1, 0] = np.sum(e1 * t2, axis=1)
        E[:, 0, 1] = np.sum(e2 * t1, axis=1)
        E[:, 1, 1] = np.sum(e2 * t2, axis=1)
        return E
    from .sphere_gauge import stereographic

    z = stereographic(d.reshape(-1, 3), chart).reshape(-1, 3)
    # faces touching the projection pole get NaN edges
    z = np.where(np.isfinite(z).all(axis=1, keepdims=True), z, np.nan)
    dz1 = z[:, 1] - z[:, 0]
    dz2 = z[:, 2] - z[:, 0]
    E = np.empty((len(d), 2, 2))
    E[:, 0, 0], E[:, 1, 0] = dz1.real, dz1.imag
    E[:, 0, 1], E[:, 1, 1] = dz2.real, dz2.imag
    return E


def jacobians(Phi: Immersion, chart: str | None = None):
    """Per-face affine differential dPhi as an (F, n, 2) array plus the 2D
    domain edge matrix used to form it."""
    x = Phi.image[Phi.faces]
    X = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=2)
    E = _local_domain_coords(Phi, chart)
    det = E[:, 0, 0] * E[:, 1, 1] - E[:, 0, 1] * E[:, 1, 0]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv = np.empty_like(E)
        inv[:, 0, 0] = E[:, 1, 1] / det
        inv[:, 1, 1] = E[:, 0, 0] / det
        inv[:, 0, 1] = -E[:, 0, 1] / det
        inv[:, 1, 0] = -E[:, 1, 0] / det
    J = np.einsum("fnk,fkj->fnj", X, inv)
    return J, E


def induced_metric(Phi: Immersion, chart: str | None = None, strict: bool = True) -> MetricSample:
    """Pull-back metric per triangle.

    ``chart=None`` uses an orthonormal frame of each flat domain triangle
    (the round metric of the domain sphere); ``'south'``/``'north'`` use
    stereographic chart coordinates.
    """
    J, E = jacobians(Phi, chart)
    g = np.einsum("fni,fnj->fij", J, J)
    det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] ** 2
    dom_area = 0.5 * np.abs(E[:, 0, 0] * E[:, 1, 1] - E[:, 0, 1] * E[:, 1, 0])
    if strict:
        bad = ~(det > 0) & ~Phi.branch_faces & np.isfinite(det)
        if np.any(bad):
            raise DegenerateTriangle(f"{int(bad.sum())} unmarked triangles with det g <= 0")
    return MetricSample(g=g, area_element=np.sqrt(np.maximum(det, 0.0)), domain_area=dom_area)


def _singular_ratio_floor(Phi: Immersion) -> float:
    J, _ = jacobians(Phi)
    with np.errstate(invalid="ignore"):
        s = np.linalg.svd(J, compute_uv=False)
        ratio = s[:, 1] / s[:, 0]
    ok = np.isfinite(ratio)
    if Phi.branch_points:
        ok &= ~Phi.branch_faces
    return float(ratio[ok].min()) if ok.any() else 0.0


def _face_tangent_frames(Phi: Immersion):
    x = Phi.image[Phi.faces]
    e1 = x[:, 1] - x[:, 0]
    e2 = x[:, 2] - x[:, 0]
    n1 = np.linalg.norm(e1, axis=1)
    t1 = e1 / np.where(n1 > 0, n1, 1.0)[:, None]
    w = e2 - np.sum(e2 * t1, axis=1)[:, None] * t1
    nw = np.linalg.norm(w, axis=1)
    t2 = w / np.where(nw > 0, nw, 1.0)[:, None]
    return t1, t2, e1, e2


def vertex_tangent_projectors(Phi: Immersion) -> np.ndarray:
    """Rank-2 tangent projector at every vertex.

    Face projectors are accumulated with Max's corner weights
    area / (|e_a|^2 |e_b|^2), which recover the exact normal for vertices
    on a sphere. Orientation free, so folds and branch covers are handled.
    """
    t1, t2, _, _ = _face_tangent_frames(Phi)
    x = Phi.image[Phi.faces]
    P = Phi.image_areas[:, None, None] * (t1[:, :, None] * t1[:, None, :] + t2[:, :, None] * t2[:, None, :])
    n = Phi.image.shape[1]
    acc = np.zeros((Phi.n_vertices, n, n))
    for k in range(3):
        ea = np.sum((x[:, (k + 1) % 3] - x[:, k]) ** 2, axis=1)
        eb = np.sum((x[:, (k + 2) % 3] - x[:, k]) ** 2, axis=1)
        w = 1.0 / np.where(ea * eb > 0, ea * eb, np.inf)
        np.add.at(acc, Phi.faces[:, k], w[:, None, None] * P)
    _, vecs = np.linalg.eigh(acc)
    top = vecs[:, :, -2:]
    return np.einsum("vik,vjk->vij", top, top)


def _curvature(Phi: Immersion) -> CurvatureSample:
    faces = Phi.faces
    n = Phi.image.shape[1]
    t1, t2, e1, e2 = _face_tangent_frames(Phi)
    Pv = vertex_tangent_projectors(Phi)
    A = np.empty((len(faces), 2, 2))
    A[:, 0, 0] = np.sum(e1 * t1, axis=1)
    A[:, 1, 0] = np.sum(e1 * t2, axis=1)
    A[:, 0, 1] = np.sum(e2 * t1, axis=1)
    A[:, 1, 1] = np.sum(e2 * t2, axis=1)
    det = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
    degenerate = ~(np.abs(det) > 1e-300) | ~(Phi.image_areas > 0)
    det = np.where(degenerate, 1.0, det)
    Ainv = np.empty_like(A)
    Ainv[:, 0, 0] = A[:, 1, 1] / det
    Ainv[:, 1, 1] = A[:, 0, 0] / det
    Ainv[:, 0, 1] = -A[:, 0, 1] / det
    Ainv[:, 1, 0] = -A[:, 1, 0] / det
    dP1 = Pv[faces[:, 1]] - Pv[faces[:, 0]]
    dP2 = Pv[faces[:, 2]] - Pv[faces[:, 0]]
    T = np.stack([t1, t2], axis=1)  # (F, 2, n)
    Pf = np.einsum("fki,fkj->fij", T, T)
    Nf = np.eye(n)[None] - Pf
    II = np.empty((len(faces), 2, 2, n))
    dn2 = np.zeros(len(faces))
    for i in range(2):
        dPi = dP1 * Ainv[:, 0, i, None, None] + dP2 * Ainv[:, 1, i, None, None]
        normal_block = np.einsum("fab,fbc->fac", Nf, dPi)
        for j in range(2):
            II[:, i, j] = np.einsum("fab,fb->fa", normal_block, T[:, j])
        tangent_block = np.einsum("fab,fbc,fcd->fad", Pf, dPi, Nf)
        dn2 += np.sum(tangent_block**2, axis=(1, 2))
    H = 0.5 * (II[:, 0, 0] + II[:, 1, 1])
    II2 = np.sum(II**2, axis=(1, 2, 3))
    off = 0.5 * (II[:, 0, 1] + II[:, 1, 0])
    K = np.sum(II[:, 0, 0] * II[:, 1, 1], axis=1) - np.sum(off * off, axis=1)
    # sphere targets are measured through the inclusion into R^n
    excluded = degenerate | Phi.branch_faces
    for arr in (II2, dn2, K):
        arr[excluded] = 0.0
    H[excluded] = 0.0
    II[excluded] = 0.0
    return CurvatureSample(II, H, II2, dn2, K, excluded)


def gauss_map(Phi: Immersion) -> FrameSample:
    """Oriented tangent frame and normal basis per face.

    For codimension above one the normal bases are aligned by orthogonal
    Procrustes along a breadth-first spanning tree of the dual mesh rooted
    at triangle 0.
    """
    t1, t2, e1, e2 = _face_tangent_frames(Phi)
    if np.any(~(Phi.image_areas > 0) & ~Phi.branch_faces):
        raise DegenerateTriangle("zero-area image triangle")
    n = Phi.image.shape[1]
    target_normal = None
    if Phi.target.kind == "round_sphere":
        c = Phi.image[Phi.faces].mean(axis=1)
        target_normal = c / np.linalg.norm(c, axis=1, keepdims=True)
    if n == 3:
        nrm = np.cross(t1, t2)
        if target_normal is not None:
            return FrameSample(t1, t2, np.zeros((len(t1), 0, 3)), target_normal)
        return FrameSample(t1, t2, nrm[:, None, :], None)
    # general codimension: complete (t1, t2[, radial]) to an orthonormal basis
    F = len(t1)
    fixed = [t1, t2] + ([target_normal] if target_normal is not None else [])
    basis = np.stack(fixed, axis=1)
    k = n - basis.shape[1]
    rng = np.eye(n)
    normals = np.empty((F, k, n))
    for f in range(F):
        q, _ = np.linalg.qr(np.concatenate([basis[f].T, rng], axis=1))
        normals[f] = q[:, basis.shape[1] : basis.shape[1] + k].T
    # orientation: (t1, t2, normals...) positively oriented in R^n
    full = np.concatenate([basis, normals], axis=1)
    sgn = np.sign(np.linalg.det(full))
    normals[sgn < 0, -1] *= -1
    _align_normal_frames(Phi, normals)
    return FrameSample(t1, t2, normals, target_normal)


def dual_adjacency(faces: np.ndarray):
    F = len(faces)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    fid = np.tile(np.arange(F), 3)
    key = np.sort(e, axis=1)
    order = np.lexsort((key[:, 1], key[:, 0]))
    ks = key[order]
    same = np.all(ks[1:] == ks[:-1], axis=1)
    a = fid[order][:-1][same]
    b = fid[order][1:][same]
    data = np.ones(2 * len(a))
    return coo_matrix((data, (np.concatenate([a, b]), np.concatenate([b, a]))), shape=(F, F)).tocsr()


def _align_normal_frames(Phi: Immersion, normals: np.ndarray):
    if normals.shape[1] <= 1:
        return
    adj = dual_adjacency(Phi.faces)
    order, pred = breadth_first_order(adj, 0, directed=False, return_predecessors=True)
    for f in order[1:]:
        p = pred[f]
        M = normals[f] @ normals[p].T
        u, s, vt = np.linalg.svd(M)
        if s.min() < 0.1:
            raise FrameDiscontinuity(f"normal planes of faces {p} and {f} do not overlap")
        R = u @ vt
        if np.linalg.det(R) < 0:
            u[:, -1] *= -1
            R = u @ vt
        normals[f] = R.T @ normals[f]


def second_fundamental_form(Phi: Immersion) -> CurvatureSample:
    return Phi.curvature


def face_mask(Phi: Immersion, region) -> np.ndarray:
    """Normalize a region spec (None, boolean face mask, or predicate on
    unit domain points) to a boolean face mask."""
    F = len(Phi.faces)
    if region is None:
        return np.ones(F, dtype=bool)
    if callable(region):
        return np.asarray(region(Phi.face_centers), dtype=bool)
    mask = np.asarray(region, dtype=bool)
    if mask.shape != (F,):
        raise InputError("region mask must have one entry per face")
    return mask


def ball_mask(Phi: Immersion, center, radius, inner: float = 0.0) -> np.ndarray:
    d = geodesic(Phi.face_centers, np.asarray(center, dtype=float)[None, :])
    return (d < radius) & (d >= inner)


def energies(Phi: Immersion, region=None, regions: dict | None = None) -> EnergyReport:
    mask = face_mask(Phi, region)
    cur = Phi.curvature
    area = Phi.image_areas
    rep = _sum_energy(area, cur, mask)
    rep.epsilon = mesh_tolerance(Phi.level)
    for key, sub in (regions or {}).items():
        rep.regions[key] = _sum_energy(area, cur, face_mask(Phi, sub) & mask)
    return rep


def _sum_energy(area, cur, mask) -> EnergyReport:
    a = area[mask]
    A = float(np.sum(a))
    W = float(np.sum(np.sum(cur.mean_curvature[mask] ** 2, axis=1) * a))
    F = float(0.5 * np.sum(cur.norm_Dn2[mask] * a))
    return EnergyReport(A, W, F)


def total_gauss_curvature(Phi: Immersion, region=None) -> float:
    mask = face_mask(Phi, region)
    return float(np.sum(Phi.curvature.gauss_curvature[mask] * Phi.image_areas[mask]))


def diameter(Phi: Immersion, region=None) -> float:
    """Maximum pairwise distance between image samples of the region."""
    if region is None:
        idx = np.arange(Phi.n_vertices)
    else:
        mask = face_mask(Phi, region)
        idx = np.unique(Phi.faces[mask])
    if len(idx) == 0:
        raise EmptyRegion("diameter of an empty region")
    return point_diameter(Phi.image[idx])


def _pairwise_max(A, B) -> float:
    d2 = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T
    i, j = np.unravel_index(np.argmax(d2), d2.shape)
    return float(np.linalg.norm(A[i] - B[j]))


def _kd_leaves(pts, size: int):
    stack, leaves = [np.arange(len(pts))], []
    while stack:
        idx = stack.pop()
        if len(idx) <= size:
            leaves.append(idx)
            continue
        axis = int(np.argmax(np.ptp(pts[idx], axis=0)))
        order = idx[np.argsort(pts[idx, axis], kind="stable")]
        half = len(order) // 2
        stack.extend((order[:half], order[half:]))
    return leaves


def point_diameter(pts: np.ndarray) -> float:
    """Exact maximum pairwise distance. Large sets are pruned with
    bounding boxes of kd leaves against a farthest-point lower bound."""
    pts = np.asarray(pts, dtype=float)
    if len(pts) < 2:
        return 0.0
    if np.max(np.ptp(pts, axis=0)) == 0:
        return 0.0
    if pts.shape[1] == 3 and len(pts) > 8:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except Exception:  # coplanar or degenerate point sets
            pass
    if len(pts) <= 2048:
        return _pairwise_max(pts, pts)
    best, i = 0.0, 0
    for _ in range(4):
        d = np.linalg.norm(pts - pts[i], axis=1)
        i = int(np.argmax(d))
        best = max(best, float(d[i]))
    leaves = _kd_leaves(pts, 128)
    lo = np.array([pts[l].min(axis=0) for l in leaves])
    hi = np.array([pts[l].max(axis=0) for l in leaves])
    gap = np.maximum(np.abs(hi[:, None] - lo[None, :]), np.abs(hi[None, :] - lo[:, None]))
    ub = np.sqrt(np.sum(gap * gap, axis=2))
    rows, cols = np.nonzero(np.triu(ub > best))
    for k in np.argsort(-ub[rows, cols]):
        a, b = rows[k], cols[k]
        if ub[a, b] <= best:
            break
        best = max(best, _pairwise_max(pts[leaves[a]], pts[leaves[b]]))
    return best


@dataclass(frozen=True)
class PolyForm:
    """Polynomial 2-form sum_k c_k x^{alpha_k} dx_{i_k} ^ dx_{j_k} on R^n."""

    terms: tuple  # of (coef, exponents tuple, i, j)

    def coefficient_at(self, x: np.ndarray, i: int, j: int) -> np.ndarray:
        out = np.zeros(len(x))
        for coef, alpha, a, b in self.terms:
            mono = coef * np.prod(x ** np.asarray(alpha, dtype=float)[None, :], axis=1)
            if (a, b) == (i, j):
                out += mono
            elif (a, b) == (j, i):
                out -= mono
        return out


def current_pairing(Phi: Immersion, omega: PolyForm, region=None) -> float:
    """Integral of Phi^* omega with barycentric quadrature (exact for
    linear coefficients on each flat triangle)."""
    mask = face_mask(Phi, region)
    x = Phi.image[Phi.faces[mask]]
    c = x.mean(axis=1)
    e1 = x[:, 1] - x[:, 0]
    e2 = x[:, 2] - x[:, 0]
    total = 0.0
    pairs = {(min(a, b), max(a, b)) for _, _, a, b in omega.terms}
    for i, j in sorted(pairs):
        proj = 0.5 * (e1[:, i] * e2[:, j] - e1[:, j] * e2[:, i])
        total += float(np.sum(omega.coefficient_at(c, i, j) * proj))
    return total


def standard_forms(n: int = 3) -> list[PolyForm]:
    """Six fixed non-closed 2-forms used to compare push-forward currents."""
    def e(k, p=1):
        a = [0] * n
        a[k] = p
        return tuple(a)

    return [
        PolyForm(((1.0, e(0), 1, 2),)),
        PolyForm(((1.0, e(1), 2, 0),)),
        PolyForm(((1.0, e(2), 0, 1),)),
        PolyForm(((1.0, e(0, 2), 1, 2),)),
        PolyForm(((1.0, e(1, 2), 2, 0),)),
        PolyForm(((1.0, e(2, 2), 0, 1),)),
    ]


def winding_number(Phi: Immersion, point) -> float:
    """Signed solid angle of the closed image surface seen from ``point``,
    divided by 4 pi (an integer for points off the surface)."""
    x = Phi.image[Phi.faces][:, :, :3] - np.asarray(point, dtype=float)[:3]
    a, b, c = x[:, 0], x[:, 1], x[:, 2]
    la, lb, lc = (np.linalg.norm(v, axis=1) for v in (a, b, c))
    num = np.sum(a * np.cross(b, c), axis=1)
    den = (la * lb * lc + np.sum(a * b, axis=1) * lc + np.sum(a * c, axis=1) * lb
           + np.sum(b * c, axis=1) * la)
    return float(np.sum(2.0 * np.arctan2(num, den)) / (4.0 * np.pi))


def degree(Phi: Immersion, tol: float = 0.1) -> tuple[int, float]:
    """Mapping degree onto the unit sphere target: (1/4pi) int Phi.(d1 Phi x d2 Phi)."""
    if Phi.target.kind != "round_sphere" or Phi.image.shape[1] != 3:
        raise InputError("degree is defined for round_sphere(3, r) targets")
    x = Phi.image[Phi.faces] / Phi.target.radius
    c = x.mean(axis=1)
    cross = 0.5 * np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
    val = float(np.sum(np.sum(c * cross, axis=1)) / (4.0 * np.pi))
    deg = int(np.rint(val))
    resid = abs(val - deg)
    if resid > tol:
        raise DegreeUnreliable(f"degree integral {val:.4f} is not near an integer")
    return deg, resid


# Worst relative deviation of A, W, F from 4 pi at level 6, scaled by 4^6.
# Reproduced by calibrate_mesh_constant(); the test suite checks the match.
MESH_CONSTANT = 4.440849917471787
CALIBRATION_LEVEL = 6
CALIBRATION_SEED = 20240611


def mesh_tolerance(level: int) -> float:
    """Error budget eps_l = C 4^-l for icosphere level ``level``."""
    return MESH_CONSTANT * 4.0 ** (-level)


def calibrate_mesh_constant(level: int = CALIBRATION_LEVEL, rotations: int = 4) -> float:
    """Worst relative error of A, W, F on the round sphere, over the mesh
    itself and over rigid rotations resampled by PL interpolation, times 4^l."""
    from .sphere_gauge import MobiusMap, mobius_apply

    base = identity_sphere(level)
    worst = _round_error(base)
    rng = np.random.default_rng(CALIBRATION_SEED)
    for _ in range(rotations):
        q = rng.normal(size=4)
        worst = max(worst, _round_error(mobius_apply(MobiusMap.from_quaternion(q), base)))
    return worst * 4.0**level


def _round_error(Phi: Immersion) -> float:
    e = _sum_energy(Phi.image_areas, Phi.curvature, np.ones(len(Phi.faces), dtype=bool))
    ref = 4.0 * np.pi
    return max(abs(e.A - ref), abs(e.W - ref), abs(e.F - ref)) / ref


# ---------------------------------------------------------------- file formats

def write_imm(Phi: Immersion, path) -> None:
    n = Phi.image.shape[1]
    lines = [f"imm 1 {Phi.level} {n} {Phi.target.tag}"]
    rows = np.concatenate([Phi.domain, Phi.image], axis=1)
    fmt = " ".join(["%.17g"] * (3 + n))
    lines.extend(fmt % tuple(r) for r in rows)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_imm(path) -> Immersion:
    try:
        with open(path) as fh:
            header = fh.readline().split()
            if len(header) != 5 or header[0] != "imm" or header[1] != "1":
                raise InputError(f"{path}: not an imm v1 file")
            level, n, tag = int(header[2]), int(header[3]), header[4]
            data = np.loadtxt(fh, ndmin=2)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if data.shape[1] != 3 + n:
        raise InputError(f"{path}: expected {3 + n} columns, found {data.shape[1]}")
    if level_from_vertex_count(len(data)) != level:
        raise InputError(f"{path}: vertex count does not match level {level}")
    return Immersion(data[:, :3], data[:, 3:], level, Target.from_tag(tag, n))


def write_obj(Phi: Immersion, path) -> None:
    x = Phi.image[:, :3]
    with open(path, "w") as fh:
        fh.write("".join(f"v {a:.17g} {b:.17g} {c:.17g}\n" for a, b, c in x))
        fh.write("".join(f"f {a + 1} {b + 1} {c + 1}\n" for a, b, c in Phi.faces))


def union_energies(parts: Sequence[Immersion]) -> EnergyReport:
    """Energies of a formal disjoint union of immersions."""
    reps = [energies(p) for p in parts]
    return EnergyReport(sum(r.A for r in reps), sum(r.W for r in reps), sum(r.F for r in reps),
                        epsilon=max(r.epsilon for r in reps))


def identity_sphere(level: int) -> Immersion:
    verts, _ = icosphere(level)
    return Immersion(verts.copy(), verts.copy(), level)


def region_from_predicate(fn: Callable[[np.ndarray], np.ndarray]):
    return fn
