"""Conformal factor, branch points, the singular Liouville equation and the
two elliptic tools used by cutting and filling (Coulomb frames, Wente)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.linalg import spsolve

from .errors import AmbiguousOrder, InputError, SolverDiverged, ThresholdExceeded
from .geom_core import BranchPoint, Immersion, face_mask, jacobians
from .mesh import geodesic, icosphere, vertex_faces, vertex_neighbors
from .sphere_gauge import (
    ChartField,
    MobiusMap,
    _check_window,
    rotation_to_south,
    stereographic,
)

SIGMA_MAX = 0.9
FRAME_THRESHOLD = 8.0 * np.pi / 3.0


# ------------------------------------------------------------ conformal factor

@dataclass
class ConformalFactorField:
    chart: str
    lam: np.ndarray  # per face, log of the chart stretch
    sigma: np.ndarray  # per face Beltrami coefficient of the pulled-back metric
    centers: np.ndarray  # chart coordinate of each face centroid
    chart_area: np.ndarray
    valid: np.ndarray


def _metric_from_jacobian(J):
    g11 = np.sum(J[:, :, 0] ** 2, axis=1)
    g22 = np.sum(J[:, :, 1] ** 2, axis=1)
    g12 = np.sum(J[:, :, 0] * J[:, :, 1], axis=1)
    return g11, g22, g12


def _lam_sigma(J):
    g11, g22, g12 = _metric_from_jacobian(J)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = 0.5 * np.log(0.5 * (g11 + g22))
        root = np.sqrt(np.maximum(g11 * g22 - g12 * g12, 0.0))
        sigma = (g11 - g22 + 2j * g12) / (g11 + g22 + 2.0 * root)
    return lam, sigma


def _chart_jacobians(z, image, faces):
    """Affine differential of the image over chart triangles with vertex
    coordinates ``z`` (complex)."""
    zt = z[faces]
    x = image[faces]
    X = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=2)
    dz1 = zt[:, 1] - zt[:, 0]
    dz2 = zt[:, 2] - zt[:, 0]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        det = dz1.real * dz2.imag - dz2.real * dz1.imag
        inv = np.empty((len(faces), 2, 2))
        inv[:, 0, 0] = dz2.imag / det
        inv[:, 1, 1] = dz1.real / det
        inv[:, 0, 1] = -dz2.real / det
        inv[:, 1, 0] = -dz1.imag / det
        J = np.einsum("fnk,fkj->fnj", X, inv)
        centers = zt.mean(axis=1)
    return J, 0.5 * np.abs(det), centers


def conformal_factor(Phi: Immersion, chart: str = "south", window=None,
                     rotation: MobiusMap | None = None) -> ConformalFactorField:
    """lambda = 1/2 log(1/2 tr g) and the metric's Beltrami coefficient per
    face, in the stereographic chart (optionally after a domain rotation).

    Faces touching the projection pole, branch triangles and faces with
    |sigma| >= 0.9 are masked off.
    """
    dom = Phi.domain if rotation is None else rotation.apply(Phi.domain)
    z = stereographic(dom, chart)
    J, area, centers = _chart_jacobians(z, Phi.image, Phi.faces)
    lam, sigma = _lam_sigma(J)
    valid = np.isfinite(lam) & np.isfinite(sigma) & ~Phi.branch_faces
    valid &= np.abs(np.where(valid, sigma, 1.0)) < SIGMA_MAX
    if window is not None:
        _check_window(window, float(np.median(np.sqrt(area[valid]))) if valid.any() else 0.0)
        xmin, xmax, ymin, ymax = window
        with np.errstate(invalid="ignore"):
            valid &= ((centers.real >= xmin) & (centers.real <= xmax)
                      & (centers.imag >= ymin) & (centers.imag <= ymax))
    lam = np.where(valid, lam, np.nan)
    sigma = np.where(valid, sigma, np.nan)
    return ConformalFactorField(chart, lam, sigma, centers, area, valid)


def log_stretch(Phi: Immersion) -> tuple[np.ndarray, np.ndarray]:
    """Chart-free log stretch against the round domain metric, per face and
    per vertex (vertex values average e^mu over incident faces by area)."""
    J, _ = jacobians(Phi)
    g11, g22, _ = _metric_from_jacobian(J)
    with np.errstate(divide="ignore"):
        mu = 0.5 * np.log(0.5 * (g11 + g22))
    w = Phi.domain_areas
    acc = np.zeros(Phi.n_vertices)
    wsum = np.zeros(Phi.n_vertices)
    for k in range(3):
        np.add.at(acc, Phi.faces[:, k], w * np.exp(mu))
        np.add.at(wsum, Phi.faces[:, k], w)
    with np.errstate(divide="ignore"):
        mu_v = np.log(acc / wsum)
    return mu, mu_v


# ---------------------------------------------------------------- branch points

@dataclass
class BranchCandidate:
    vertex: int
    location: np.ndarray
    slope: float
    order: int
    round_error: float
    residual: float
    fit_constant: float
    window: tuple[float, float]
    status: str  # accepted | ambiguous | rejected


def _lad_line(x, y, iters=60):
    """Least-absolute-deviation fit y ~ s x + c by reweighted least squares."""
    w = np.ones_like(x)
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef = np.zeros(2)
    for _ in range(iters):
        sw = np.sqrt(w)
        coef_new, *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
        r = np.abs(y - A @ coef_new)
        w = 1.0 / np.maximum(r, 1e-9)
        if np.allclose(coef_new, coef, atol=1e-12, rtol=0):
            coef = coef_new
            break
        coef = coef_new
    resid = float(np.mean(np.abs(y - A @ coef)))
    return float(coef[0]), float(coef[1]), resid


def fit_branch_order(Phi: Immersion, vertex: int) -> BranchCandidate:
    """Fit lambda ~ (n-1) log|z| + c around a domain vertex."""
    faces = Phi.faces
    b = Phi.domain[vertex]
    rot = rotation_to_south(b)
    offsets, vf = vertex_faces(faces, Phi.n_vertices)
    ring = vf[offsets[vertex] : offsets[vertex + 1]]
    edge = np.mean([geodesic(Phi.domain[i], Phi.domain[j])
                    for f in faces[ring] for i, j in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0]))])
    h_chart = 0.5 * edge
    r_min = 3.0 * h_chart
    r_max = max(0.1, 4.0 * r_min)
    near = geodesic(Phi.face_centers, b[None, :]) < 2.5 * np.arctan(r_max)
    idx = np.nonzero(near)[0]
    sub = faces[idx]
    used = np.unique(sub)
    z = np.full(Phi.n_vertices, np.nan + 0j)
    z[used] = stereographic(rot.apply(Phi.domain[used]), "south")
    J, _, centers = _chart_jacobians(z, Phi.image, sub)
    lam, sigma = _lam_sigma(J)
    r = np.abs(centers)
    sel = (r >= r_min) & (r <= r_max) & np.isfinite(lam)
    window = (float(r_min), float(r_max))
    if sel.sum() < 12:
        return BranchCandidate(vertex, b, float("nan"), 1, 0.5, float("inf"), float("nan"),
                               window, "rejected")
    s, c, resid = _lad_line(np.log(r[sel]), lam[sel])
    n = int(np.rint(s)) + 1
    rerr = abs(s + 1 - n)
    status = "accepted"
    if resid > 0.2 or n < 2:
        status = "rejected"
    elif rerr > 0.25:
        status = "ambiguous"
    return BranchCandidate(vertex, b.copy(), s, n, rerr, resid, float(np.exp(c) / max(n, 1)),
                           window, status)


def branch_candidates(Phi: Immersion, max_candidates: int = 32, ratio: float = 0.25):
    """Vertices where e^mu has a strict local minimum over the two-ring and
    falls below ``ratio`` times its median."""
    _, mu_v = log_stretch(Phi)
    nv = Phi.n_vertices
    off, nb = vertex_neighbors(Phi.faces, nv)
    src = np.repeat(np.arange(nv), np.diff(off))
    # min over the one-ring, then over the one-ring of that: two-ring min
    ring1 = np.full(nv, np.inf)
    np.minimum.at(ring1, src, mu_v[nb])
    ring2 = ring1.copy()
    np.minimum.at(ring2, src, ring1[nb])
    thresh = np.log(ratio) + np.median(mu_v[np.isfinite(mu_v)])
    with np.errstate(invalid="ignore"):
        cand = np.nonzero((mu_v < ring1) & (mu_v <= ring2) & (mu_v < thresh))[0]
    cand = cand[np.argsort(mu_v[cand], kind="stable")][:max_candidates]
    return [int(v) for v in cand]


def detect_branch_points(Phi: Immersion, strict: bool = False,
                         report: list | None = None) -> list[BranchPoint]:
    """Accepted branch points; per-candidate outcomes go to ``report``.

    With ``strict`` an ambiguous candidate raises AmbiguousOrder.
    """
    out = []
    for v in branch_candidates(Phi):
        cand = fit_branch_order(Phi, v)
        if report is not None:
            report.append(cand)
        if cand.status == "ambiguous" and strict:
            raise AmbiguousOrder(f"vertex {v}: slope {cand.slope:.3f} rounds ambiguously")
        if cand.status == "accepted":
            out.append(BranchPoint(cand.location, cand.order, cand.fit_constant,
                                   cand.residual, cand.window))
    return out


# ---------------------------------------------------------- Liouville residual

def _test_seeds():
    verts, _ = icosphere(0)
    cube = np.array([[sx, sy, sz] for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)],
                    dtype=float) / np.sqrt(3.0)
    return np.concatenate([verts, cube])


# 20 bump centres (the 12 icosahedron vertices and 8 cube corners) sharing
# one chart half-width
TEST_CENTERS = _test_seeds()
TEST_HALF_WIDTH = 0.5


def _bump(t):
    t = np.asarray(t, dtype=float)
    inside = np.abs(t) < 1
    s = np.where(inside, 1.0 - t * t, 1.0)
    b = np.where(inside, np.exp(-1.0 / s), 0.0)
    d2 = b * (4 * t * t / s**4 - 2.0 / s**2 - 8 * t * t / s**3)
    return b, np.where(inside, d2, 0.0)


def bump_test_function(z, rho=TEST_HALF_WIDTH):
    """phi(x, y) = beta(x/rho) beta(y/rho) with its Laplacian."""
    bx, bxx = _bump(np.real(z) / rho)
    by, byy = _bump(np.imag(z) / rho)
    return bx * by, (bxx * by + bx * byy) / rho**2


@dataclass
class LiouvilleResult:
    residual: float
    per_test: np.ndarray
    delta_terms: np.ndarray


def liouville_residual(Phi: Immersion, branches=None,
                       log_stretch_fn: Callable | None = None,
                       curvature_fn: Callable | None = None) -> LiouvilleResult:
    """Weak residual of -Delta lambda = K e^{2 lambda} - 2 pi sum (n_j - 1) delta_{b_j}.

    Each test chart is the south stereographic chart after rotating a seed
    to the south pole, with the flat chart metric as background. Optional
    callables on domain points give an exact log stretch against the round
    metric and an exact Gauss curvature; otherwise both are discrete.
    """
    branches = Phi.branch_points if branches is None else tuple(branches)
    K = Phi.curvature.gauss_curvature
    img_area = Phi.image_areas
    phi_max = _bump(0.0)[0] ** 2
    per_test = np.empty(len(TEST_CENTERS))
    deltas = np.empty(len(TEST_CENTERS))
    reach = 2.0 * np.arctan(TEST_HALF_WIDTH * np.sqrt(2.0)) + 1e-9
    for k, c in enumerate(TEST_CENTERS):
        rot = rotation_to_south(c)
        near = geodesic(Phi.face_centers, c[None, :]) < reach + 0.05
        idx = np.nonzero(near)[0]
        sub = Phi.faces[idx]
        used = np.unique(sub)
        z = np.full(Phi.n_vertices, np.nan + 0j)
        z[used] = stereographic(rot.apply(Phi.domain[used]), "south")
        J, chart_area, zc = _chart_jacobians(z, Phi.image, sub)
        phi, lap = bump_test_function(zc)
        if log_stretch_fn is None:
            # the PL stretch stays finite on branch rings; only their
            # curvature is carried by the delta terms
            lam, _ = _lam_sigma(J)
            lam = np.where(np.isfinite(lam), lam, 0.0)
            curv = K[idx] * img_area[idx]
        else:
            p = Phi.face_centers[idx]
            lam = np.asarray(log_stretch_fn(p)) + np.log(2.0 / (1.0 + np.abs(zc) ** 2))
            kk = K[idx] * img_area[idx] if curvature_fn is None else (
                np.asarray(curvature_fn(p)) * np.exp(2 * lam) * chart_area)
            curv = kk
        total = np.sum(lam * lap * chart_area) + np.sum(curv * phi)
        dsum = 0.0
        for bp in branches:
            zb = stereographic(rot.apply(np.asarray(bp.location, dtype=float)), "south")
            if np.isfinite(zb):
                dsum += 2.0 * np.pi * (bp.order - 1) * bump_test_function(zb)[0]
        deltas[k] = dsum / phi_max
        per_test[k] = abs(total - dsum) / phi_max
    return LiouvilleResult(float(per_test.max()), per_test, deltas)


# ------------------------------------------------------------ branch estimates

def weak_l2_quasinorm(values, weights, min_samples: int = 32) -> float:
    """sup_t t |{|f| > t}|^{1/2} for samples with area weights.

    Level sets holding fewer than ``min_samples`` samples are not resolved
    (a single cell at a singularity would dominate the sup) and are skipped.
    """
    v = np.abs(np.asarray(values, dtype=float)).reshape(-1)
    w = np.asarray(weights, dtype=float).reshape(-1)
    ok = np.isfinite(v)
    v, w = v[ok], w[ok]
    if not len(v):
        return 0.0
    order = np.argsort(-v, kind="stable")
    cum = np.cumsum(w[order])
    start = min(min_samples, len(v)) - 1
    return float(np.max(v[order][start:] * np.sqrt(cum[start:])))


def log_stretch_gradient(Phi: Immersion) -> np.ndarray:
    """|grad mu| per face on the round domain, mu the vertex log stretch."""
    _, mu_v = log_stretch(Phi)
    d = Phi.domain[Phi.faces]
    e1 = d[:, 1] - d[:, 0]
    e2 = d[:, 2] - d[:, 0]
    m = mu_v[Phi.faces]
    g11 = np.sum(e1 * e1, 1)
    g22 = np.sum(e2 * e2, 1)
    g12 = np.sum(e1 * e2, 1)
    det = g11 * g22 - g12 * g12
    d1 = m[:, 1] - m[:, 0]
    d2 = m[:, 2] - m[:, 0]
    with np.errstate(invalid="ignore"):
        # |grad|^2 = d^T G^{-1} d with G the edge Gram matrix
        grad2 = (g22 * d1 * d1 - 2 * g12 * d1 * d2 + g11 * d2 * d2) / det
    return np.sqrt(np.maximum(grad2, 0.0))


def branch_estimates(Phi: Immersion, branches=None) -> dict:
    """Both sides of the branch-order bound, the Gauss-Bonnet defect and the
    weak-L2 norm of the log-stretch gradient.

    Curvature is measured through the inclusion into R^n, so the ambient
    sectional curvature term vanishes.
    """
    branches = Phi.branch_points if branches is None else tuple(branches)
    cur = Phi.curvature
    area = Phi.image_areas
    excess = float(sum(b.order - 1 for b in branches))
    dn2 = float(np.sum(cur.norm_Dn2 * area))
    kbar = 0.0
    chi = 2.0
    rhs = dn2 / (4 * np.pi) + kbar * float(area.sum()) / (2 * np.pi) - chi
    gb = float(np.sum(cur.gauss_curvature * area)) / (2 * np.pi) - chi - excess
    grad = log_stretch_gradient(Phi)
    ok = ~Phi.branch_faces
    return {
        "lhs": excess,
        "rhs": float(rhs),
        "gauss_bonnet_check": gb,
        "weak_gradient_norm": weak_l2_quasinorm(grad[ok], Phi.domain_areas[ok]),
    }


# --------------------------------------------------------------- Coulomb frame

def cotangent_weights(points, faces):
    """Edge list (i, j) with 1/2 (cot alpha + cot beta) weights."""
    rows, cols, vals = [], [], []
    for k in range(3):
        i, j, o = faces[:, k], faces[:, (k + 1) % 3], faces[:, (k + 2) % 3]
        u = points[i] - points[o]
        v = points[j] - points[o]
        cot = np.sum(u * v, axis=1) / np.maximum(_wedge_norm(u, v), 1e-300)
        a, b = np.minimum(i, j), np.maximum(i, j)
        rows.append(a)
        cols.append(b)
        vals.append(0.5 * cot)
    n = len(points)
    W = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                   shape=(n, n)).tocsr()
    W.sum_duplicates()
    C = W.tocoo()
    return C.row, C.col, C.data


def _wedge_norm(u, v):
    uu = np.sum(u * u, 1)
    vv = np.sum(v * v, 1)
    uv = np.sum(u * v, 1)
    return np.sqrt(np.maximum(uu * vv - uv * uv, 0.0))


@dataclass
class CoulombFrame:
    vertices: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    theta: np.ndarray
    frame_energy: float
    normal_energy: float
    curvature_energy: float
    ratio: float
    _edges: tuple
    _init: tuple

    def energy(self, theta) -> float:
        """Discrete frame Dirichlet energy of the initial frame rotated by theta."""
        i, j, w, a, beta = self._edges
        s = theta[j] - theta[i] - beta
        return float(np.sum(w * (4.0 - 2.0 * a * np.cos(s))))


def _oriented_planes(Phi: Immersion, mask):
    """Per-vertex area-weighted tangent bivector from region faces."""
    from .geom_core import _face_tangent_frames

    t1, t2, _, _ = _face_tangent_frames(Phi)
    area = Phi.image_areas * mask
    B = area[:, None, None] * (t1[:, :, None] * t2[:, None, :] - t2[:, :, None] * t1[:, None, :])
    n = Phi.image.shape[1]
    acc = np.zeros((Phi.n_vertices, n, n))
    for k in range(3):
        np.add.at(acc, Phi.faces[:, k], B)
    return acc


def coulomb_frame(Phi: Immersion, region=None, threshold: float = FRAME_THRESHOLD,
                  max_newton: int = 30) -> CoulombFrame:
    """Tangent frame of least Dirichlet energy over a region (free boundary).

    An initial frame (a fixed ambient axis projected onto each tangent plane)
    is rotated by angles theta minimizing
    sum_edges w_ij (|e1_i - e1_j|^2 + |e2_i - e2_j|^2) with cotangent
    weights clipped at zero.
    """
    mask = face_mask(Phi, region) & ~Phi.branch_faces
    if not mask.any():
        raise InputError("empty frame region")
    cur = Phi.curvature
    curv_energy = float(np.sum(cur.norm_Dn2[mask] * Phi.image_areas[mask]))
    if curv_energy > threshold:
        raise ThresholdExceeded(f"int |dn|^2 = {curv_energy:.4f} exceeds {threshold:.4f}")
    faces = Phi.faces[mask]
    verts = np.unique(faces)
    local = np.full(Phi.n_vertices, -1)
    local[verts] = np.arange(len(verts))
    lf = local[faces]
    X = Phi.image[verts]
    B = _oriented_planes(Phi, mask)[verts]
    S = -np.einsum("vij,vjk->vik", B, B)  # B^T B, positive on the plane
    _, vecs = np.linalg.eigh(S)
    P = np.einsum("vik,vjk->vij", vecs[:, :, -2:], vecs[:, :, -2:])
    n = X.shape[1]
    # axis whose worst projection onto the planes is largest
    proj = np.linalg.norm(P, axis=1)  # |P e_k| per axis
    axis = int(np.argmax(proj.min(axis=0)))
    f1 = P[:, :, axis]
    f1 /= np.linalg.norm(f1, axis=1, keepdims=True)
    f2 = -np.einsum("vij,vj->vi", B, f1)
    f2 /= np.linalg.norm(f2, axis=1, keepdims=True)
    i, j, w = cotangent_weights(X, lf)
    keep = i != j
    i, j, w = i[keep], j[keep], np.maximum(w[keep], 0.0)
    m11 = np.sum(f1[i] * f1[j], 1)
    m22 = np.sum(f2[i] * f2[j], 1)
    m12 = np.sum(f1[i] * f2[j], 1)
    m21 = np.sum(f2[i] * f1[j], 1)
    cc = m11 + m22
    ss = m12 - m21
    a = np.hypot(cc, ss)
    beta = np.arctan2(ss, cc)
    nvl = len(verts)
    ne = len(i)
    D = csr_matrix((np.concatenate([np.ones(ne), -np.ones(ne)]),
                    (np.concatenate([np.arange(ne)] * 2), np.concatenate([j, i]))),
                   shape=(ne, nvl))
    free = np.arange(1, nvl)
    Df = D[:, free]
    theta = np.zeros(nvl)
    # quadratic start
    c = w * a
    H = (Df.T @ Df.multiply(c[:, None])).tocsc()
    H = H + 1e-12 * np.max(c, initial=1.0) * _eye(len(free))
    if len(free):
        theta[free] = spsolve(H, Df.T @ (c * beta))

    def energy(th):
        return float(np.sum(w * (4.0 - 2.0 * a * np.cos(th[j] - th[i] - beta))))

    E = energy(theta)
    for _ in range(max_newton):
        s = theta[j] - theta[i] - beta
        g = Df.T @ (2 * w * a * np.sin(s))
        if np.linalg.norm(g) < 1e-11 * max(1.0, E):
            break
        hdiag = np.maximum(2 * w * a * np.cos(s), 1e-3 * w * a)
        H = (Df.T @ Df.multiply(hdiag[:, None])).tocsc() + 1e-12 * _eye(len(free))
        step = spsolve(H, -g)
        t = 1.0
        while t > 1e-6:
            trial = theta.copy()
            trial[free] += t * step
            Et = energy(trial)
            if Et <= E:
                break
            t *= 0.5
        else:
            break
        theta, dE, E = trial, E - Et, Et
        if dE < 1e-15 * max(1.0, E):
            break
    if not np.isfinite(E):
        raise SolverDiverged("frame energy is not finite")
    ct, st = np.cos(theta)[:, None], np.sin(theta)[:, None]
    e1 = ct * f1 + st * f2
    e2 = -st * f1 + ct * f2
    nb = np.einsum("vi,vj->vij", e1, e2)
    nb = nb - np.swapaxes(nb, 1, 2)
    normal_energy = float(0.5 * np.sum(w * np.sum((nb[i] - nb[j]) ** 2, axis=(1, 2))))
    ratio = E / normal_energy if normal_energy > 0 else (0.0 if E < 1e-12 else float("inf"))
    return CoulombFrame(verts, e1, e2, theta, E, normal_energy, curv_energy, ratio,
                        (i, j, w, a, beta), (f1, f2))


def _eye(k):
    from scipy.sparse import identity

    return identity(k, format="csc")


# --------------------------------------------------------------------- Wente

@dataclass
class WenteResult:
    mu: np.ndarray  # grid values, zero outside the domain
    inside: np.ndarray
    sup_norm: float
    grad_norm: float
    grad_a: float
    grad_b: float
    ratio: float


def _grid_points(field: ChartField):
    return field.coords()


def domain_mask(field: ChartField, domain):
    """Unknown mask and, for discs, the centre/radius description."""
    z = _grid_points(field)
    if domain == "rectangle":
        inside = np.zeros(z.shape, dtype=bool)
        inside[1:-1, 1:-1] = True
        return inside, None
    kind, center, radius = domain
    if kind != "disc":
        raise InputError(f"unknown Wente domain {domain!r}")
    inside = np.abs(z - complex(center)) < radius - 1e-12 * radius
    inside[[0, -1], :] = False
    inside[:, [0, -1]] = False
    return inside, (complex(center), float(radius))


def _crossing(c0, d, center, radius, h):
    """Fraction of a grid step from c0 along unit direction d to the circle."""
    p = c0 - center
    bq = (p * np.conj(d)).real
    cq = abs(p) ** 2 - radius**2
    t = -bq + np.sqrt(bq * bq - cq)
    return np.clip(t / h, 1e-12, 1.0)


def poisson_dirichlet(field_like: ChartField, rhs, domain) -> tuple[np.ndarray, np.ndarray]:
    """Solve Delta u = rhs with u = 0 on the boundary.

    Rectangles use the five-point stencil on interior nodes; discs use the
    Shortley-Weller stencil, exact for quadratics.
    """
    inside, disc = domain_mask(field_like, domain)
    ny, nx = inside.shape
    h = field_like.h
    idx = -np.ones(inside.shape, dtype=np.int64)
    idx[inside] = np.arange(int(inside.sum()))
    z = _grid_points(field_like)
    rows, cols, vals = [], [], []
    jj, ii = np.nonzero(inside)
    diag = np.zeros(len(jj))
    for dj, di, d in ((0, 1, 1.0), (0, -1, -1.0), (1, 0, 1j), (-1, 0, -1j)):
        nj, ni = jj + dj, ii + di
        nb_in = inside[nj, ni]
        if disc is None:
            hn = np.ones(len(jj))
        else:
            hn = np.where(nb_in, 1.0, _crossing(z[jj, ii], d, disc[0], disc[1], h))
        # partner step along the same axis
        pj, pi = jj - dj, ii - di
        if disc is None:
            hp = np.ones(len(jj))
        else:
            hp = np.where(inside[pj, pi], 1.0, _crossing(z[jj, ii], -d, disc[0], disc[1], h))
        coef = 2.0 / (hn * (hn + hp) * h * h)
        diag -= coef
        r = idx[jj, ii]
        m = nb_in
        rows.append(r[m])
        cols.append(idx[nj[m], ni[m]])
        vals.append(coef[m])
    r = idx[jj, ii]
    rows.append(r)
    cols.append(r)
    vals.append(diag)
    A = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                   shape=(len(jj), len(jj))).tocsc()
    sol = spsolve(A, np.asarray(rhs)[inside])
    if not np.all(np.isfinite(sol)):
        raise SolverDiverged("Poisson solve returned non-finite values")
    u = np.zeros(inside.shape)
    u[inside] = sol
    return u, inside


def _components(values):
    v = np.asarray(values)
    if np.iscomplexobj(v):
        v = np.stack([v.real, v.imag], axis=-1)
    if v.ndim == 2:
        v = v[..., None]
    return v


def wente_solve(a: ChartField, b: ChartField, domain="rectangle") -> WenteResult:
    """Solve Delta mu = sum_k grad-perp a_k . grad b_k with mu = 0 on the
    boundary; report sup|mu|, the L2 norms of the gradients and
    sup|mu| / (|grad a|_2 |grad b|_2)."""
    if (a.nx, a.ny, a.h, a.origin) != (b.nx, b.ny, b.h, b.origin):
        raise InputError("Wente fields must share one grid")
    h = a.h
    A = _components(a.values)
    B = _components(b.values)
    if A.shape != B.shape:
        raise InputError("Wente fields must have matching components")
    ay, ax = np.gradient(A, h, axis=(0, 1))
    by, bx = np.gradient(B, h, axis=(0, 1))
    rhs = np.sum(ax * by - ay * bx, axis=-1)
    mu, inside = poisson_dirichlet(a, rhs, domain)
    muy, mux = np.gradient(mu, h)
    cell = h * h
    grad_mu = float(np.sqrt(np.sum((mux**2 + muy**2)[inside]) * cell))
    ga = float(np.sqrt(np.sum(np.sum(ax**2 + ay**2, axis=-1)[inside]) * cell))
    gb = float(np.sqrt(np.sum(np.sum(bx**2 + by**2, axis=-1)[inside]) * cell))
    sup = float(np.max(np.abs(mu)))
    denom = ga * gb
    return WenteResult(mu, inside, sup, grad_mu, ga, gb, sup / denom if denom > 0 else 0.0)
