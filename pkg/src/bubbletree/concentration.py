"""Energy concentration across degenerating families and neck detection."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InputError, ResolutionLimit, ZeroDenominator
from .geom_core import Immersion, energies, face_mask, mesh_tolerance
from .mesh import geodesic, icosphere, mean_edge_angle, unit

ETA = 0.1
BUBBLE_THRESHOLD = 8.0 * np.pi / 3.0
N_SEEDS = 256
SHRINK_FACTOR = 2.0


@dataclass
class Family:
    name: str
    schedule: tuple
    members: list
    level: int
    reference: list | None = None

    def __post_init__(self):
        self.schedule = tuple(float(t) for t in self.schedule)
        if len(self.schedule) != len(self.members):
            raise InputError("one member per schedule entry")
        if any(b >= a for a, b in zip(self.schedule, self.schedule[1:])):
            raise InputError("schedule must be strictly decreasing")
        if any(m.level != self.level for m in self.members):
            raise InputError("members must share the subdivision level")

    def __len__(self):
        return len(self.members)

    @property
    def last(self) -> Immersion:
        return self.members[-1]

    @property
    def G_max(self) -> float:
        return max(energies(m).G for m in self.members)

    def map(self, fn) -> "Family":
        return Family(self.name, self.schedule, [fn(m) for m in self.members], self.level,
                      self.reference)


@dataclass
class NeckAnnulus:
    center: np.ndarray
    outer: float
    ratio: float
    content: float
    chain: int = 1
    within_eta: bool = True

    @property
    def inner(self) -> float:
        return self.outer * self.ratio

    def to_dict(self):
        return {"center": [float(x) for x in self.center], "outer": self.outer,
                "ratio": self.ratio, "content": self.content, "chain": self.chain,
                "within_eta": self.within_eta}


def fibonacci_points(n: int = N_SEEDS) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    phi = np.pi * (3.0 - np.sqrt(5.0)) * k
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _density(Phi: Immersion) -> np.ndarray:
    return Phi.curvature.norm_Dn2 * Phi.image_areas


def _chord2(pts, x):
    """Squared chord distance; monotone in the geodesic distance and
    accurate at tiny separations."""
    d = pts - x[None, :]
    return np.einsum("ij,ij->i", d, d)


def _chord_to_angle(c2):
    return 2.0 * np.arcsin(np.minimum(np.sqrt(c2) / 2.0, 1.0))


def _angle_to_chord2(rho):
    return (2.0 * np.sin(min(rho, np.pi) / 2.0)) ** 2


def _radius_from(c2, dens, threshold):
    order = np.argsort(c2, kind="stable")
    cum = np.cumsum(dens[order])
    if cum[-1] < threshold:
        return np.pi
    j = int(np.searchsorted(cum, threshold))
    hi = _chord_to_angle(c2[order[j]])
    lo = _chord_to_angle(c2[order[j - 1]]) if j > 0 else 0.0
    lo_c = cum[j - 1] if j > 0 else 0.0
    frac = (threshold - lo_c) / max(cum[j] - lo_c, 1e-300)
    return float(lo + frac * (hi - lo))


def energy_radius(Phi: Immersion, x, threshold: float = BUBBLE_THRESHOLD,
                  density: np.ndarray | None = None) -> float:
    """Smallest domain radius around ``x`` whose ball carries ``threshold``
    of |dn|^2; pi when the whole sphere carries less."""
    dens = _density(Phi) if density is None else np.asarray(density, dtype=float)
    x = unit(np.asarray(x, dtype=float))
    return _radius_from(_chord2(Phi.face_centers, x), dens, threshold)


def energy_radii(Phi: Immersion, points, threshold: float = BUBBLE_THRESHOLD) -> np.ndarray:
    dens = _density(Phi)
    c = Phi.face_centers
    return np.array([_radius_from(_chord2(c, p), dens, threshold) for p in np.atleast_2d(points)])


def local_edge_length(Phi: Immersion, x) -> float:
    """Mean domain edge length of the faces nearest to ``x``."""
    x = unit(np.asarray(x, dtype=float))
    near = np.argpartition(_chord2(Phi.face_centers, x), 6)[:6]
    tri = Phi.domain[Phi.faces[near]]
    e = [geodesic(tri[:, i], tri[:, (i + 1) % 3]) for i in range(3)]
    return float(np.mean(e))


def _descend(Phi: Immersion, x, rho, dens, threshold, candidates=8, steps=60):
    """Walk toward a local minimum of the energy radius. Candidates are the
    faces of highest |dn|^2 per unit domain area inside the current ball."""
    c = Phi.face_centers
    pdens = dens / np.maximum(Phi.domain_areas, 1e-300)
    for _ in range(steps):
        inside = np.flatnonzero(_chord2(c, x) < _angle_to_chord2(rho))
        if len(inside) == 0:
            break
        k = min(candidates, len(inside))
        top = inside[np.argpartition(-pdens[inside], k - 1)[:k]]
        radii = [_radius_from(_chord2(c, c[f]), dens, threshold) for f in top]
        j = int(np.argmin(radii))
        if radii[j] >= rho:
            break
        x, rho = c[top[j]], radii[j]
    return x, rho


@lru_cache(maxsize=None)
def seed_covering_radius(n: int = N_SEEDS, level: int = 6) -> float:
    """Largest distance from an icosphere vertex to its nearest seed."""
    from scipy.spatial import cKDTree

    d, _ = cKDTree(fibonacci_points(n)).query(icosphere(level)[0])
    return float(_chord_to_angle(np.max(d) ** 2))


@dataclass
class ConcentrationReport:
    points: list
    radii_first: list
    radii_last: list
    max_overlap: int
    rho_min: float
    seeds: int = N_SEEDS
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        return {"points": [[float(v) for v in p] for p in self.points],
                "radii_first": [float(r) for r in self.radii_first],
                "radii_last": [float(r) for r in self.radii_last],
                "max_overlap": int(self.max_overlap), "rho_min": self.rho_min,
                "seeds": self.seeds}


def concentration_report(F: Family, threshold: float = BUBBLE_THRESHOLD,
                         exclude=None) -> ConcentrationReport:
    """Points whose energy radius shrinks by 2x along the family and ends
    below four mean icosphere edge lengths, found from Fibonacci seeds.

    ``exclude`` is an optional (center, radius) domain cap whose seeds are
    ignored (used for sub-families that still carry the parent's cut).
    """
    if len(F) < 3:
        raise InputError("concentration detection needs at least 3 members")
    seeds = fibonacci_points()
    first, last = F.members[0], F.last
    edge = mean_edge_angle(F.level)
    rho_min = 4.0 * edge
    r_last = energy_radii(last, seeds, threshold)
    r_first = energy_radii(first, seeds, threshold)
    overlap = _max_overlap(last, seeds, r_last)
    # A seed's own radius cannot drop below its distance to a point
    # concentration. Since rho(seed) <= rho(p) + d(seed, p), only seeds
    # within rho_min + covering radius can lead to one; those descend to
    # a local minimum of the energy radius, where the tests are applied.
    dens = _density(last)
    cand = []
    for k in np.flatnonzero(r_last < rho_min + seed_covering_radius()):
        p, rho = _descend(last, seeds[k], r_last[k], dens, threshold)
        if exclude is not None and geodesic(p, exclude[0]) < exclude[1]:
            continue
        if rho < rho_min and energy_radius(first, p, threshold) >= SHRINK_FACTOR * rho:
            cand.append((rho, p))
    cand.sort(key=lambda c: c[0])
    merged = []
    for rho, p in cand:
        if all(geodesic(p, q) >= 2.0 * rho_min for _, q in merged):
            merged.append((rho, p))
    pts, rf, rl = [], [], []
    for rho, p in merged:
        loc = local_edge_length(last, p)
        if rho < 2.0 * loc:
            raise ResolutionLimit(
                f"energy radius {rho:.3g} at {np.round(p, 4)} is below two edge lengths ({loc:.3g})")
        pts.append(p)
        rl.append(rho)
        rf.append(energy_radius(first, p, threshold))
    order = sorted(range(len(pts)), key=lambda i: tuple(np.round(pts[i], 12)))
    return ConcentrationReport([pts[i] for i in order], [rf[i] for i in order],
                               [rl[i] for i in order], overlap, rho_min)


def concentration_points(F: Family, threshold: float = BUBBLE_THRESHOLD) -> list:
    return concentration_report(F, threshold).points


def _max_overlap(Phi: Immersion, seeds, radii) -> int:
    """Largest number of seed balls containing a single mesh vertex."""
    counts = np.zeros(Phi.n_vertices, dtype=np.int64)
    for p, r in zip(seeds, radii):
        counts += _chord2(Phi.domain, p) <= _angle_to_chord2(r)
    return int(counts.max())


def covers_domain(Phi: Immersion, threshold: float = BUBBLE_THRESHOLD) -> bool:
    seeds = fibonacci_points()
    radii = energy_radii(Phi, seeds, threshold)
    covered = np.zeros(Phi.n_vertices, dtype=bool)
    for p, r in zip(seeds, radii):
        covered |= _chord2(Phi.domain, p) <= _angle_to_chord2(r)
    return bool(covered.all())


# ------------------------------------------------------------------ necks

def annulus_content(Phi: Immersion, a, outer: float, inner: float) -> float:
    """A + int |II|^2 over the domain annulus inner <= d(x, a) < outer."""
    c2 = _chord2(Phi.face_centers, unit(np.asarray(a, dtype=float)))
    m = (c2 < _angle_to_chord2(outer)) & (c2 >= _angle_to_chord2(inner))
    cur = Phi.curvature
    return float(np.sum((1.0 + cur.norm_II2[m]) * Phi.image_areas[m]))


def _dyadic_contents(Phi, a, delta0, levels):
    radii = delta0 * 0.5 ** np.arange(levels + 1)
    return radii, np.array([annulus_content(Phi, a, radii[j], radii[j + 1]) for j in range(levels)])


def find_neck(Phi: Immersion, a, eta: float = ETA, delta0: float = 1.0,
              levels: int | None = None) -> NeckAnnulus | None:
    """First maximal chain of consecutive dyadic annuli B_d \\ B_{d/2},
    d = delta0 2^-j, each carrying content < eta / chain length.

    Chains of one annulus have ratio 1/2, which is not a neck (the ratio
    must be below 1/2), so at least two annuli are needed. Annuli whose
    inner radius is under two local edge lengths are not resolved and are
    never used.
    """
    a = unit(np.asarray(a, dtype=float))
    floor = 2.0 * local_edge_length(Phi, a)
    if levels is None:
        levels = max(int(np.floor(np.log2(delta0 / floor))), 0)
    radii, content = _dyadic_contents(Phi, a, delta0, levels)
    usable = radii[1:] >= floor
    best = None
    j = 0
    while j < levels:
        if not usable[j]:
            break
        # longest chain starting at j with every annulus under eta / length
        length = 0
        for L in range(1, levels - j + 1):
            seg = content[j : j + L]
            if not usable[j + L - 1] or np.any(seg >= eta / L):
                continue
            length = L
        if length >= 2:
            seg = content[j : j + length]
            best = NeckAnnulus(a, float(radii[j]), 0.5**length, float(seg.sum()), length)
            break
        j += 1
    return best


def best_neck_annulus(Phi: Immersion, a, chain: int = 2, eta: float = ETA,
                      per_octave: int = 12) -> NeckAnnulus:
    """Outermost low-content annulus B_d \\ B_{d 2^-chain} around ``a``.

    Stand-in for find_neck when no chain passes the eta test. Radii are
    scanned inward from pi/2; the first one whose content is minimal
    within one octave on either side is taken, so the cut sits where the
    outer surface meets whatever hangs off it. The inner ball must contain
    the energy ball of ``a`` and stay resolved. The result records whether
    its content is below eta.
    """
    a = unit(np.asarray(a, dtype=float))
    floor = max(2.0 * local_edge_length(Phi, a), energy_radius(Phi, a))
    lo = floor * 2.0**chain
    if lo >= np.pi / 2:
        raise ResolutionLimit("no resolvable annulus around the concentration point")
    n = max(int(np.ceil(per_octave * np.log2(np.pi / 2 / lo))), 2)
    deltas = np.geomspace(np.pi / 2, lo, n + 1)
    content = np.array([annulus_content(Phi, a, d, d * 0.5**chain) for d in deltas])
    k = None
    for i in range(len(deltas)):
        window = content[max(i - per_octave, 0) : i + per_octave + 1]
        if content[i] <= window.min():
            k = i
            break
    if k is None:
        k = int(np.argmin(content))
    c = float(content[k])
    return NeckAnnulus(a, float(deltas[k]), 0.5**chain, c, chain, c < eta)


# ------------------------------------------------------ boundary Willmore bound

def _level_values(Phi: Immersion, level) -> np.ndarray:
    vals = level(Phi.domain) if callable(level) else level
    vals = np.asarray(vals, dtype=float)
    if vals.shape != (Phi.n_vertices,):
        raise InputError("level function must give one value per vertex")
    # nudge exact zeros so every crossing lies strictly inside an edge
    return np.where(vals == 0.0, 1e-300, vals)


def _clip_fractions(lv):
    """Area fraction of each triangle where the linear interpolant of the
    per-corner values ``lv`` (F, 3) is negative."""
    neg = lv < 0
    count = neg.sum(axis=1)
    frac = np.where(count == 3, 1.0, 0.0)
    for odd_count, odd_neg in ((1, True), (2, False)):
        rows = count == odd_count
        if not rows.any():
            continue
        sub = lv[rows]
        k = np.argmax(neg[rows] == odd_neg, axis=1)
        a = sub[np.arange(len(sub)), k]
        b = sub[np.arange(len(sub)), (k + 1) % 3]
        c = sub[np.arange(len(sub)), (k + 2) % 3]
        corner = a * a / ((a - b) * (a - c))
        frac[rows] = corner if odd_neg else 1.0 - corner
    return frac


def level_set_boundary(Phi: Immersion, vals) -> np.ndarray:
    """Image segments (S, 2, n) of the zero isoline of a per-vertex field."""
    faces = Phi.faces
    lv = vals[faces]
    neg = lv < 0
    cut = (neg.sum(axis=1) == 1) | (neg.sum(axis=1) == 2)
    segs = []
    for f in np.flatnonzero(cut):
        pts = []
        for i in range(3):
            j = (i + 1) % 3
            if neg[f, i] != neg[f, j]:
                t = lv[f, i] / (lv[f, i] - lv[f, j])
                pts.append((1 - t) * Phi.image[faces[f, i]] + t * Phi.image[faces[f, j]])
        segs.append(pts)
    return np.array(segs).reshape(-1, 2, Phi.image.shape[1])


def region_willmore(Phi: Immersion, vals) -> float:
    frac = _clip_fractions(vals[Phi.faces])
    H2 = np.sum(Phi.curvature.mean_curvature**2, axis=1)
    return float(np.sum(frac * H2 * Phi.image_areas))


def boundary_willmore_bound(Phi: Immersion, level, branch_images=None, samples: int = 8) -> dict:
    """Willmore integral of the region {level < 0} plus 2 length(boundary
    image) / d, with d the sup over region image points of the distance to
    the boundary image together with the branch images.

    ``level`` is a per-vertex array or a function of domain points; the
    boundary is its piecewise-linear zero isoline.
    """
    from scipy.spatial import cKDTree

    vals = _level_values(Phi, level)
    segs = level_set_boundary(Phi, vals)
    if len(segs) == 0:
        raise InputError("region has no boundary")
    length = float(np.sum(np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1)))
    t = (np.arange(samples + 1) / samples)[None, :, None]
    curve = (segs[:, :1] * (1 - t) + segs[:, 1:] * t).reshape(-1, segs.shape[2])
    if branch_images is not None and len(branch_images):
        curve = np.concatenate([curve, np.atleast_2d(np.asarray(branch_images, dtype=float))])
    inside = vals < 0
    tri_in = np.all(vals[Phi.faces] < 0, axis=1)
    pts = np.concatenate([Phi.image[inside], Phi.image[Phi.faces[tri_in]].mean(axis=1)])
    d = float(cKDTree(curve).query(pts)[0].max()) if len(pts) else 0.0
    if d <= mesh_tolerance(Phi.level):
        raise ZeroDenominator("region image lies within mesh tolerance of its boundary")
    W = region_willmore(Phi, vals)
    boundary_term = 2.0 * length / d
    lhs = 4.0 * np.pi
    return {"lhs": lhs, "willmore_term": W, "boundary_term": boundary_term,
            "distance": d, "length": length,
            "satisfied": bool(W + boundary_term >= lhs * (1.0 - mesh_tolerance(Phi.level)))}


def ball_level(center, radius, outside: bool = False):
    """Level function of a geodesic domain ball (negative inside, or
    outside when ``outside`` is set)."""
    center = unit(np.asarray(center, dtype=float))
    sign = -1.0 if outside else 1.0
    return lambda p: sign * (geodesic(p, center[None, :]) - radius)
