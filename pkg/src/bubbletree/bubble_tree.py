"""Bubble-tree data model, decomposition of degenerating families, and the
quantization checks that compare a tree against its family."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .concentration import (
    BUBBLE_THRESHOLD,
    ETA,
    Family,
    NeckAnnulus,
    best_neck_annulus,
    concentration_report,
    find_neck,
)
from .cut_fill import SIGMA_MAX, cut_and_fill
from .errors import (
    DiameterCollapse,
    InputError,
    NotCauchy,
    RecursionBudgetExceeded,
)
from .geom_core import (
    EnergyReport,
    Immersion,
    current_pairing,
    degree,
    energies,
    mesh_tolerance,
    point_diameter,
    standard_forms,
    winding_number,
)
from .mesh import geodesic, icosphere, unit, vertex_faces
from .sphere_gauge import MobiusMap, reparametrize, rotation_to_south

NORTH = np.array([0.0, 0.0, 1.0])
# a child's attachment circle sits this far from its north pole
EXCLUSION_FRACTION = 0.1
MIN_CAUCHY_SAMPLES = 32
CAUCHY_BALL_FACTOR = 2.0  # concentration balls left out of the Cauchy test, in neck radii


@dataclass
class TreeConfig:
    d_min: float = 0.1
    cauchy_tol: float = 0.02
    quantum_margin: float = 0.1
    eta: float = ETA
    threshold: float = BUBBLE_THRESHOLD
    template_radius: float = 0.3
    sample_level: int = 4
    sigma_max: float = SIGMA_MAX

    @property
    def quantum(self) -> float:
        return 4 * math.pi * (1 - self.quantum_margin)


# ------------------------------------------------------------------ geometry

@dataclass
class Ball:
    """Closed geodesic cap on the domain sphere."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = unit(np.asarray(self.center, dtype=float))
        self.radius = float(self.radius)

    def distance(self, p) -> np.ndarray:
        return geodesic(np.asarray(p, dtype=float), self.center)

    def contains(self, p) -> np.ndarray:
        return self.distance(p) <= self.radius

    def inside(self, other: "Ball", margin: float = 0.0) -> bool:
        """Closure of self lies in the interior of other."""
        return float(geodesic(self.center, other.center)) + self.radius < other.radius - margin

    def disjoint(self, other: "Ball") -> bool:
        return float(geodesic(self.center, other.center)) > self.radius + other.radius

    def to_dict(self):
        return {"center": [float(x) for x in self.center], "radius": self.radius}

    @classmethod
    def from_dict(cls, d) -> "Ball":
        return cls(np.array(d["center"], dtype=float), float(d["radius"]))


def _frame(c):
    c = unit(c)
    a = np.array([1.0, 0.0, 0.0]) if abs(c[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = unit(a - (a @ c) * c)
    return e1, np.cross(c, e1)


def mobius_cap(M: MobiusMap, ball: Ball) -> Ball:
    """Image of a cap under a Moebius map (caps go to caps)."""
    e1, e2 = _frame(ball.center)
    phi = 2 * np.pi * np.arange(3) / 3
    rim = (np.cos(ball.radius) * ball.center[None, :]
           + np.sin(ball.radius) * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2))
    a, b, c = M.apply(rim)
    n = unit(np.cross(b - a, c - a))
    inner = M.apply(ball.center[None, :])[0]
    if n @ inner < n @ a:
        n = -n
    return Ball(n, float(np.arccos(np.clip(n @ a, -1, 1))))


@dataclass
class Blend:
    """Radial remap around ``center`` taking the geodesic annulus
    [template, 2 template] onto [actual, 2 template]."""

    center: np.ndarray
    actual: float
    template: float

    def apply(self, q) -> np.ndarray:
        q = np.array(q, dtype=float)
        rho = geodesic(q, self.center)
        R = self.template
        sel = (rho >= R) & (rho < 2 * R)
        if sel.any():
            new = self.actual + (rho[sel] - R) * (2 * R - self.actual) / R
            t = q[sel] - (q[sel] @ self.center)[:, None] * self.center
            u = t / np.linalg.norm(t, axis=1, keepdims=True)
            q[sel] = np.cos(new)[:, None] * self.center + np.sin(new)[:, None] * u
        return q

    def to_dict(self):
        return {"center": [float(x) for x in self.center], "actual": self.actual,
                "template": self.template}


@dataclass
class Gluing:
    """Chart map from the assembled domain into a node's own domain:
    a Moebius map followed by radial blends around the cut points."""

    mobius: MobiusMap
    blends: list = field(default_factory=list)

    def apply(self, p) -> np.ndarray:
        q = self.mobius.apply(np.atleast_2d(p))
        for b in self.blends:
            q = b.apply(q)
        return q

    def to_dict(self):
        m = self.mobius.matrix.reshape(-1)
        return {"mobius": [[float(z.real), float(z.imag)] for z in m],
                "blends": [b.to_dict() for b in self.blends]}


@dataclass
class ConstantRegion:
    ball: Ball
    value: np.ndarray

    def to_dict(self):
        return {"ball": self.ball.to_dict(), "value": [float(x) for x in self.value]}


@dataclass
class Node:
    id: str
    parent: str | None
    depth: int
    xi: Immersion | None
    ball: Ball
    child_balls: list
    gluing: Gluing | None
    constant_regions: list
    energy: EnergyReport
    degree: int
    cuts: list = field(default_factory=list)
    children: list = field(default_factory=list)  # ids, aligned with child_balls (None if stopped)

    @property
    def key(self) -> tuple:
        return tuple(int(x) for x in self.id.split("."))

    def to_dict(self):
        return {"id": self.id, "parent": self.parent, "depth": self.depth,
                "ball": self.ball.to_dict(), "energy": self.energy.to_dict(),
                "degree": self.degree,
                "child_balls": [b.to_dict() for b in self.child_balls],
                "children": list(self.children),
                "constant_regions": [c.to_dict() for c in self.constant_regions],
                "gluing": self.gluing.to_dict() if self.gluing else None,
                "cuts": list(self.cuts)}


@dataclass
class BubbleTree:
    nodes: list
    f: Immersion | None = None
    stored_energy: float | None = None
    quantization: dict | None = None

    @property
    def N(self) -> int:
        return len(self.nodes)

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def ordered(self) -> list:
        return sorted(self.nodes, key=lambda n: n.key)

    def to_dict(self) -> dict:
        G, table = tree_energy(self)
        out = {"N": self.N, "G": G, "nodes": [n.to_dict() for n in self.ordered()]}
        if self.quantization is not None:
            out["quantization"] = dict(self.quantization)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "BubbleTree":
        """Rebuild the combinatorial and energy data (no immersions)."""
        nodes = []
        for nd in d["nodes"]:
            e = nd["energy"]
            nodes.append(Node(nd["id"], nd["parent"], int(nd["depth"]), None,
                              Ball.from_dict(nd["ball"]),
                              [Ball.from_dict(b) for b in nd.get("child_balls", [])], None,
                              [ConstantRegion(Ball.from_dict(c["ball"]), np.array(c["value"]))
                               for c in nd.get("constant_regions", [])],
                              EnergyReport(e["A"], e["W"], e["F"]), int(nd["degree"]),
                              list(nd.get("cuts", [])), list(nd.get("children", []))))
        return cls(nodes, None, d.get("G"), d.get("quantization"))


def tree_energy(T: BubbleTree) -> tuple[float, list]:
    """G(T) summed in node-id order, with the per-node table."""
    table = [(n.id, n.energy.G) for n in T.ordered()]
    G = 0.0
    for _, g in table:
        G += g
    return G, table


# ---------------------------------------------------------------- validation

def validate_tree(T: BubbleTree, tol: float | None = None) -> dict:
    """Check every structural clause; returns {clause: {pass, value}}."""
    out = {}
    nodes = T.ordered()
    root = [n for n in nodes if n.parent is None]
    out["root_ball"] = {"pass": len(root) == 1 and root[0].ball.radius >= math.pi - 1e-12,
                        "value": len(root)}

    worst = 0
    ok = True
    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            if a.ball.disjoint(b.ball):
                continue
            nested = any(a.ball.inside(cb) for cb in b.child_balls) or \
                any(b.ball.inside(ca) for ca in a.child_balls)
            if not nested:
                ok = False
                worst += 1
    out["nesting"] = {"pass": ok, "value": worst}

    ok = True
    bad = 0
    for n in nodes:
        cb = n.child_balls
        for i, a in enumerate(cb):
            if not (a.inside(n.ball) or n.ball.radius >= math.pi - 1e-12 and a.radius < math.pi):
                ok, bad = False, bad + 1
            for b in cb[i + 1:]:
                if not a.disjoint(b):
                    ok, bad = False, bad + 1
    out["children_disjoint"] = {"pass": ok, "value": bad}

    if T.f is not None and all(n.xi is not None for n in nodes):
        err_node, err_const = _assembly_errors(T)
        scale = max(point_diameter(T.f.image), 1.0)
        tol = 1e-9 * scale if tol is None else tol
        out["f_matches_nodes"] = {"pass": err_node <= tol, "value": err_node}
        out["constant_regions"] = {"pass": err_const <= tol, "value": err_const}
    else:
        out["f_matches_nodes"] = {"pass": False, "value": None}
        out["constant_regions"] = {"pass": False, "value": None}

    G, _ = tree_energy(T)
    stored = T.stored_energy
    out["energy_sum"] = {"pass": stored is not None and G == stored, "value": G}
    out["valid"] = all(v["pass"] for v in out.values())
    return out


def _locate_nodes(T: BubbleTree, pts):
    """Owner of every assembled-domain point: (node id, constant index or -1)."""
    by_id = {n.id: n for n in T.nodes}
    owner = np.empty(len(pts), dtype=object)
    const = np.full(len(pts), -1)
    root = next(n for n in T.nodes if n.parent is None)

    def visit(node, idx):
        rest = idx
        for j, cb in enumerate(node.child_balls):
            hit = rest[cb.contains(pts[rest])]
            rest = rest[~cb.contains(pts[rest])]
            cid = node.children[j] if j < len(node.children) else None
            if cid is not None:
                child = by_id[cid]
                deep = hit[child.ball.contains(pts[hit])]
                visit(child, deep)
                hit = hit[~child.ball.contains(pts[hit])]
            owner[hit] = node.id
            const[hit] = j
        owner[rest] = node.id

    visit(root, np.arange(len(pts)))
    return owner, const


def _constant_for(node: Node, j: int) -> np.ndarray:
    return node.constant_regions[j].value


def assemble(T: BubbleTree, level: int) -> Immersion:
    pts, _ = icosphere(level)
    owner, const = _locate_nodes(T, pts)
    by_id = {n.id: n for n in T.nodes}
    dim = T.nodes[0].xi.image.shape[1]
    img = np.empty((len(pts), dim))
    for nid in sorted(set(owner), key=lambda s: tuple(int(x) for x in s.split("."))):
        node = by_id[nid]
        sel = owner == nid
        c = sel & (const >= 0)
        for j in np.unique(const[c]):
            img[c & (const == j)] = _constant_for(node, int(j))
        free = sel & (const < 0)
        if free.any():
            q = node.gluing.apply(pts[free])
            img[free] = node.xi.locator.interpolate(node.xi.image, q)
    return Immersion(pts.copy(), img, level)


def _assembly_errors(T: BubbleTree):
    f = T.f
    owner, const = _locate_nodes(T, f.domain)
    by_id = {n.id: n for n in T.nodes}
    e_node = e_const = 0.0
    for nid in set(owner):
        node = by_id[nid]
        sel = owner == nid
        free = sel & (const < 0)
        if free.any():
            q = node.gluing.apply(f.domain[free])
            ref = node.xi.locator.interpolate(node.xi.image, q)
            e_node = max(e_node, float(np.abs(f.image[free] - ref).max()))
        for j in np.unique(const[sel & (const >= 0)]):
            m = sel & (const == j)
            e_const = max(e_const, float(np.abs(f.image[m] - _constant_for(node, int(j))).max()))
    return e_node, e_const


# ---------------------------------------------------------------- extraction

@dataclass
class Extraction:
    family: Family  # gauged, aligned to the last member
    xi: Immersion
    points: list
    necks: list
    differences: list
    markers: tuple
    report: object = None


def _vertex_scales(Phi: Immersion) -> tuple[np.ndarray, np.ndarray]:
    """Log of the local image/domain length ratio per vertex and the
    vertex domain areas."""
    nv = Phi.n_vertices
    img = np.zeros(nv)
    dom = np.zeros(nv)
    for k in range(3):
        np.add.at(img, Phi.faces[:, k], Phi.image_areas)
        np.add.at(dom, Phi.faces[:, k], Phi.domain_areas)
    with np.errstate(divide="ignore"):
        return 0.5 * np.log(img / dom), dom


def _allowed(Phi: Immersion, exclude=None) -> np.ndarray:
    if exclude is None:
        return np.ones(Phi.n_vertices, dtype=bool)
    return geodesic(Phi.domain, exclude[0]) > exclude[1]


def body_vertices(Phi: Immersion, exclude=None, band: float = 2.0) -> np.ndarray:
    """Vertices whose length scale is within a factor ``band`` of the
    domain-weighted median: the part of the surface carrying most of the
    domain."""
    ls, w = _vertex_scales(Phi)
    ok = np.isfinite(ls) & _allowed(Phi, exclude)
    order = np.argsort(ls[ok])
    cw = np.cumsum(w[ok][order])
    med = ls[ok][order][np.searchsorted(cw, 0.5 * cw[-1])]
    return np.flatnonzero(ok & (np.abs(ls - med) <= math.log(band)))


def _align_member(m: Immersion, P, target, body, body_image, iters: int = 30,
                  tol: float = 1e-10):
    """Moebius map and image translation putting ``m`` onto the last member.

    Alternates two steps: the map sends the preimages of the translated
    marker points ``P`` to ``target``; the translation is the mean offset
    between the last member and the gauged member at the body domain
    points. Returns (map, translation)."""
    shift = np.zeros(m.image.shape[1])
    for _ in range(iters):
        mt = m.with_image(m.image + shift)
        q = np.stack([preimage(mt, x)[0] for x in P])
        align = MobiusMap.from_three_points(q, target)
        vals = m.locator.interpolate(m.image, align.inverse().apply(body))
        step = np.mean(body_image - vals, axis=0) - shift
        shift = shift + step
        if np.linalg.norm(step) < tol:
            break
    return align, shift


def choose_markers(Phi: Immersion, exclude=None) -> tuple[int, int, int]:
    """Three marker vertices on the body: the one farthest from the body's
    image centroid, the farthest one from it a quarter turn away in the
    domain, and the one farthest from both in the image."""
    idx = body_vertices(Phi, exclude)
    if len(idx) < 3:
        raise InputError("no usable marker vertices")
    X = Phi.image[idx]
    i1 = idx[int(np.argmax(np.linalg.norm(X - X.mean(axis=0), axis=1)))]
    sep = geodesic(Phi.domain[idx], Phi.domain[i1])
    ok = (sep >= math.pi / 4) & (sep <= 3 * math.pi / 4)
    if not ok.any():
        ok = sep > 0
    far = np.linalg.norm(X - Phi.image[i1], axis=1)
    i2 = idx[int(np.argmax(np.where(ok, far, -1.0)))]
    both = np.minimum(far, np.linalg.norm(X - Phi.image[i2], axis=1))
    i3 = idx[int(np.argmax(both))]
    return int(i1), int(i2), int(i3)


def preimage(Phi: Immersion, P) -> tuple[np.ndarray, np.ndarray]:
    """Domain point whose image is closest to ``P`` (to within one face),
    and that image point."""
    P = np.asarray(P, dtype=float)
    tree = cKDTree(Phi.image)
    _, v = tree.query(P)
    off, ids = vertex_faces(Phi.faces, Phi.n_vertices)
    best = None
    for f in ids[off[v] : off[v + 1]]:
        tri = Phi.faces[f]
        X = Phi.image[tri]
        E = np.stack([X[1] - X[0], X[2] - X[0]], axis=1)
        lam, *_ = np.linalg.lstsq(E, P - X[0], rcond=None)
        b = np.array([1 - lam.sum(), lam[0], lam[1]])
        if b.min() < -1e-9:
            continue
        Q = b @ X
        d = float(np.linalg.norm(Q - P))
        if best is None or d < best[0]:
            best = (d, unit(b @ Phi.domain[tri]), Q)
    if best is None:
        return Phi.domain[v].copy(), Phi.image[v].copy()
    return best[1], best[2]


def _sample_points(level: int) -> np.ndarray:
    return icosphere(level)[0]


def _neck_for(Phi: Immersion, c, cfg: TreeConfig) -> NeckAnnulus:
    neck = find_neck(Phi, c, cfg.eta)
    return neck if neck is not None else best_neck_annulus(Phi, c, eta=cfg.eta)


def _sample_with_sag(Phi: Immersion, pts):
    """Linear interpolation of the image at ``pts`` with the chord sag of
    the containing triangle, |II| h^2 / 8 for its longest image edge h."""
    face, bary = Phi.locator.locate(pts)
    tri = Phi.faces[face]
    X = Phi.image[tri]
    vals = np.einsum("ij,ijk->ik", bary, X)
    h2 = np.max([np.sum((X[:, i] - X[:, (i + 1) % 3]) ** 2, axis=1) for i in range(3)], axis=0)
    sag = np.sqrt(Phi.curvature.norm_II2[face]) * h2 / 8.0
    return vals, sag


def extract_bubble(F: Family, markers=None, exclude=None,
                   config: TreeConfig | None = None) -> Extraction:
    """Gauge a family, certify its tail and find its concentration points.

    Each member is reparametrized by the Moebius map taking the preimages
    of three marker image points to the last member's marker vertices and
    translated onto the last member's body, so the last member is untouched
    and the others are aligned with it.
    """
    cfg = config or TreeConfig()
    for m in F.members:
        if point_diameter(m.image) < cfg.d_min:
            raise DiameterCollapse(f"member diameter below d_min = {cfg.d_min}")
    last = F.last
    if markers is None:
        markers = choose_markers(last, exclude)
    markers = tuple(int(i) for i in markers)
    P = last.image[list(markers)]
    if len(set(markers)) != 3 or min(np.linalg.norm(P[i] - P[j])
                                     for i, j in ((0, 1), (0, 2), (1, 2))) < cfg.d_min / 4:
        raise InputError("markers must be three vertices at least d_min / 4 apart")
    target = last.domain[list(markers)]
    bv = body_vertices(last, exclude)
    gauged = []
    for m in F.members[:-1]:
        align, shift = _align_member(m, P, target, last.domain[bv], last.image[bv])
        gauged.append(reparametrize(m.with_image(m.image + shift), align.inverse()))
    gauged.append(last)
    G = Family(F.name, F.schedule, gauged, F.level, F.reference)

    rep = None
    points, necks = [], []
    if len(G) >= 3:
        rep = concentration_report(G, cfg.threshold, exclude)
        points = [np.asarray(p) for p in rep.points]
        necks = [_neck_for(last, p, cfg) for p in points]

    pts = _sample_points(min(cfg.sample_level, F.level))
    keep = np.ones(len(pts), dtype=bool)
    for p, nk in zip(points, necks):
        keep &= geodesic(pts, p) > CAUCHY_BALL_FACTOR * nk.outer
    if exclude is not None:
        keep &= geodesic(pts, exclude[0]) > exclude[1]
    if len(G) >= 2 and keep.sum() < MIN_CAUCHY_SAMPLES:
        raise NotCauchy("too few sample points outside the concentration balls")
    samples = [_sample_with_sag(m, pts[keep]) for m in G.members]
    diffs = [float(np.max(np.maximum(np.linalg.norm(vb - va, axis=1) - sa - sb, 0.0)))
             for (va, sa), (vb, sb) in zip(samples, samples[1:])]
    slack = mesh_tolerance(F.level)
    if diffs and (diffs[-1] > cfg.cauchy_tol
                  or any(b > a + slack for a, b in zip(diffs, diffs[1:]))):
        raise NotCauchy(f"successive differences {np.round(diffs, 4).tolist()} do not "
                        f"decrease to {cfg.cauchy_tol}")
    return Extraction(G, last, points, necks, diffs, markers, rep)


# ------------------------------------------------------------- decomposition

def _willmore_density(Phi: Immersion) -> np.ndarray:
    return np.sum(Phi.curvature.mean_curvature ** 2, axis=1) * Phi.image_areas


def conformal_barycenter(points, weights, tol: float = 1e-10, max_iter: int = 200) -> MobiusMap:
    """Moebius map sending the weighted point cloud on the sphere to one
    whose Euclidean centroid is the origin. Unique up to rotation."""
    x = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    M = MobiusMap.identity()
    for _ in range(max_iter):
        v = (w[:, None] * M.apply(x)).sum(axis=0) / w.sum()
        n = float(np.linalg.norm(v))
        if n < tol:
            break
        R = rotation_to_south(v / n)
        M = R.inverse() @ MobiusMap.dilation(math.sqrt((1 + n) / (1 - n))) @ R @ M
    return M


def _circle(c, radius, n=64):
    c = np.asarray(c, dtype=float)
    e = np.cross(c, [1.0, 0.0, 0.0] if abs(c[0]) < 0.9 else [0.0, 1.0, 0.0])
    e /= np.linalg.norm(e)
    f = np.cross(c, e)
    th = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
    return (math.cos(radius) * c[None, :]
            + math.sin(radius) * (np.cos(th)[:, None] * e + np.sin(th)[:, None] * f))


def _outer_quantum(dist, dens, outer: float, quantum: float) -> np.ndarray:
    """Faces of the disc dist < outer taken from the rim inward until they
    carry one quantum of Willmore energy: the first bubble below the neck,
    without whatever hangs further inside it."""
    inside = dist < outer
    idx = np.flatnonzero(inside)
    order = idx[np.argsort(-dist[idx], kind="stable")]
    cum = np.cumsum(dens[order])
    keep = np.zeros_like(inside)
    keep[order[: int(np.searchsorted(cum, quantum)) + 1]] = True
    return keep


def _child_family(G: Family, c, cfg: TreeConfig):
    """Blow up every member at ``c``: the outer quantum of Willmore measure
    inside the member's neck disc is moved to conformal barycenter zero and
    the disc boundary is turned to the north pole. Returns the family and the
    exclusion cap around north holding EXCLUSION_FRACTION of that measure
    on the last member."""
    members = []
    excl = None
    for k, m in enumerate(G.members):
        nk = _neck_for(m, c, cfg)
        dist = geodesic(m.face_centers, c)
        dens = _willmore_density(m)
        inside = _outer_quantum(dist, dens, nk.outer, cfg.quantum)
        M = conformal_barycenter(m.face_centers[inside], dens[inside])
        up = M.apply(_circle(c, nk.outer)).mean(axis=0)
        M = rotation_to_south(-up / np.linalg.norm(up)) @ M
        members.append(reparametrize(m, M.inverse()))
        if k == len(G.members) - 1:
            ang = geodesic(M.apply(m.face_centers[inside]), NORTH)
            order = np.argsort(ang)
            cum = np.cumsum(dens[inside][order])
            j = int(np.searchsorted(cum, EXCLUSION_FRACTION * cum[-1]))
            excl = float(ang[order][min(j, len(order) - 1)])
    return Family(G.name, G.schedule, members, G.level), (NORTH.copy(), excl)


def _track(res, p):
    """Where a domain point moves under one cut's domain correction."""
    p = np.asarray(p, dtype=float)[None, :]
    return res.frame.from_chart(res.psi(res.frame.to_chart(p)))[0]


def _cut_record(res, center, neck: NeckAnnulus, kind: str) -> dict:
    rep = res.report()
    rep.update({"kind": kind, "center": [float(x) for x in center],
                "neck_within_eta": bool(neck.within_eta), "neck_content": neck.content})
    return rep


def _node_degree(xi: Immersion) -> int:
    if xi.target.kind == "round_sphere":
        return degree(xi)[0]
    return int(round(winding_number(xi, xi.image.mean(axis=0))))


@dataclass
class _Budget:
    nodes: int = 0
    max_nodes: int = 0
    max_depth: int = 0


def decompose_family(F: Family, config: TreeConfig | None = None) -> BubbleTree:
    """Recursive bubble decomposition of a degenerating family."""
    cfg = config or TreeConfig()
    if point_diameter(F.last.image) < cfg.d_min:
        raise DiameterCollapse("last member is smaller than d_min")
    G_max = F.G_max
    budget = _Budget(0, max(1, int(G_max // cfg.quantum)), int(G_max // (4 * math.pi)) + 1)
    nodes: list[Node] = []
    _decompose(F, "1", None, 1, Ball(NORTH, math.pi), None, None, cfg, budget, nodes)
    T = BubbleTree(nodes)
    T.f = assemble(T, F.level)
    T.stored_energy = tree_energy(T)[0]
    return T


def _decompose(F, node_id, parent, depth, ball, exclusion, attach, cfg, budget, nodes):
    if depth > budget.max_depth:
        raise RecursionBudgetExceeded(f"depth {depth} exceeds {budget.max_depth}")
    budget.nodes += 1
    if budget.nodes > budget.max_nodes:
        raise RecursionBudgetExceeded(f"more than {budget.max_nodes} nodes")
    ext = extract_bubble(F, exclude=exclusion, config=cfg)
    xi = ext.xi
    cuts = []
    points = [np.asarray(p) for p in ext.points]
    attach_outer = None
    if exclusion is not None:
        neck = _neck_for(xi, NORTH, cfg)
        res = cut_and_fill(xi, NORTH, neck.outer, neck.inner,
                           eta=cfg.eta if neck.within_eta else None,
                           sigma_max=cfg.sigma_max)
        points = [_track(res, p) for p in points]
        xi = res.xi
        attach_outer = neck.outer
        cuts.append(_cut_record(res, NORTH, neck, "attachment"))
    tracked = []
    for j, (p, neck) in enumerate(zip(points, ext.necks)):
        res = cut_and_fill(xi, p, neck.outer, neck.inner,
                           eta=cfg.eta if neck.within_eta else None,
                           sigma_max=cfg.sigma_max)
        points = [p2 if k <= j else _track(res, p2) for k, p2 in enumerate(points)]
        xi = res.xi
        tracked.append(p)
        cuts.append(_cut_record(res, p, neck, "concentration"))

    # gluing from the assembled domain into this node's domain
    if parent is None:
        M = MobiusMap.identity()
    else:
        k = (1.0 / math.tan(attach_outer / 2)) / math.tan(ball.radius / 2)
        M = MobiusMap.dilation(k) @ rotation_to_south(ball.center)
    anchors = list(points) + ([NORTH] if exclusion is not None else [])
    sep = min((float(geodesic(a, b)) for i, a in enumerate(anchors) for b in anchors[i + 1:]),
              default=math.pi)
    blends, child_balls, consts, child_ids = [], [], [], []
    for j, (p, neck) in enumerate(zip(points, ext.necks)):
        R = max(min(cfg.template_radius, 0.25 * sep), 0.6 * neck.outer)
        blends.append(Blend(p, neck.outer, R))
        cb = mobius_cap(M.inverse(), Ball(p, R))
        child_balls.append(cb)
        value = xi.locator.interpolate(xi.image, p[None, :])[0]
        consts.append(ConstantRegion(cb, value))
    gluing = Gluing(M, blends)
    rep = energies(xi)
    node = Node(node_id, parent, depth, xi, ball, child_balls, gluing, consts, rep,
                _node_degree(xi), cuts, [None] * len(child_balls))
    nodes.append(node)

    for j, p in enumerate(ext.points):
        child_F, excl = _child_family(ext.family, p, cfg)
        clast = child_F.last
        outside = geodesic(clast.face_centers, NORTH) > excl[1]
        vmask = geodesic(clast.domain, NORTH) > excl[1]
        if not vmask.any() or point_diameter(clast.image[vmask]) < cfg.d_min:
            continue
        if energies(clast, outside).W < cfg.quantum:
            continue
        cid = f"{node_id}.{j + 1}"
        cball = Ball(child_balls[j].center, 0.5 * child_balls[j].radius)
        node.children[j] = cid
        _decompose(child_F, cid, node_id, depth + 1, cball, excl, None, cfg, budget, nodes)


# -------------------------------------------------------------- quantization

def _hausdorff(A, B) -> float:
    da, _ = cKDTree(B).query(A)
    db, _ = cKDTree(A).query(B)
    return float(max(da.max(), db.max()))


def verify_quantization(F: Family, T: BubbleTree, nodes=None) -> dict:
    """Compare the family's last member with the tree's nodes: area sum,
    image Hausdorff distance, degree or winding sum, and current pairings."""
    last = F.last
    nodes = T.ordered() if nodes is None else nodes
    xis = [n.xi for n in nodes]
    A_last = energies(last).A
    A_sum = sum(energies(x).A for x in xis)
    area_err = abs(A_last - A_sum) / A_last
    haus = _hausdorff(last.image, np.concatenate([x.image for x in xis]))
    if last.target.kind == "round_sphere":
        deg_last = degree(last)[0]
        deg_err = abs(deg_last - sum(degree(x)[0] for x in xis))
    else:
        probes = [x.image.mean(axis=0) for x in xis]
        deg_last = int(round(winding_number(last, probes[0]))) if probes else 0
        deg_err = 0
        for q in probes:
            w_last = int(round(winding_number(last, q)))
            w_sum = sum(int(round(winding_number(x, q))) for x in xis)
            deg_err = max(deg_err, abs(w_last - w_sum))
    forms = []
    for om in standard_forms(last.image.shape[1]):
        a = current_pairing(last, om)
        b = sum(current_pairing(x, om) for x in xis)
        mass = _form_mass(last, om)
        forms.append(abs(a - b) / mass if mass > 0 else 0.0)
    return {"area_last": A_last, "area_sum": A_sum, "area_rel_err": area_err,
            "hausdorff": haus, "degree_last": deg_last, "degree_sum_err": int(deg_err),
            "form_rel_err": max(forms) if forms else 0.0, "N": len(xis)}


def _form_mass(Phi: Immersion, om) -> float:
    """Upper bound for |<Phi, om>|: sum of |coefficient| times area."""
    x = Phi.image[Phi.faces]
    c = x.mean(axis=1)
    n = x.shape[2]
    tot = np.zeros(len(c))
    for i in range(n):
        for j in range(i + 1, n):
            tot += np.abs(om.coefficient_at(c, i, j))
    return float(np.sum(tot * Phi.image_areas))


def quantization_from_dict(tree: dict, drop: tuple = ()) -> dict:
    """Area and degree sums recomputed from serialized node data."""
    q = tree.get("quantization") or {}
    nodes = [n for n in tree["nodes"] if n["id"] not in drop]
    A_sum = sum(n["energy"]["A"] for n in nodes)
    A_last = q.get("area_last", float("nan"))
    out = dict(q)
    out["area_sum"] = A_sum
    out["area_rel_err"] = abs(A_last - A_sum) / A_last
    out["N"] = len(nodes)
    return out
