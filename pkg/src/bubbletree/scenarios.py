"""Synthetic degenerating families.

Sphere chains (neck2, chain3, small_bubble) are surfaces of revolution
parametrized exactly conformally: a profile point at arclength s has the
log-polar coordinate u(s) = int ds / r, and the domain point with longitude
phi sits at south-chart coordinate exp(u_c - u + i phi). The top sphere
keeps the standard parametrization, so lower spheres shrink toward the
south pole of the domain as the necks pinch. Mesh vertices are
spread along the profile by a weight 1/max(r, R_i/2) so every sphere and
neck receives a comparable share of icosphere rings; their domain positions
follow from u, so the domain mesh is graded while the image mesh stays
roughly uniform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterOutOfRange
from .geom_core import BranchPoint, Immersion, Target, identity_sphere
from .mesh import icosphere
from .sphere_gauge import MobiusMap, inverse_stereographic, reparametrize, stereographic

SCENARIOS = ("round", "mobius_drift", "neck2", "chain3", "branched_cover", "small_bubble")

DEFAULT_SCHEDULES = {
    "round": (0.2, 0.1, 0.05, 0.025),
    "mobius_drift": (0.5, 0.25, 0.125, 0.0625),
    "neck2": (0.2, 0.1, 0.05, 0.025),
    "chain3": (0.2, 0.1, 0.05, 0.025),
    "branched_cover": (1.0,),
    "small_bubble": (0.4, 0.2, 0.1, 0.05),
}

_BLEND_LO = 1.3  # catenoid kept for r below this many waists
_BLEND_HI = 2.5
_SAMPLES = 40000


@dataclass
class ScenarioSpec:
    name: str
    level: int = 6
    schedule: tuple = ()
    degree: int = 2
    target: Target = field(default_factory=Target)

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ParameterOutOfRange(f"unknown scenario {self.name!r}")
        if not 0 <= self.level <= 8:
            raise ParameterOutOfRange("subdivision level must lie in [0, 8]")
        if not self.schedule:
            self.schedule = DEFAULT_SCHEDULES[self.name]
        self.schedule = tuple(float(x) for x in self.schedule)
        if any(b >= a for a, b in zip(self.schedule, self.schedule[1:])):
            raise ParameterOutOfRange("schedule must be strictly decreasing")
        if self.name in ("neck2", "chain3") and not all(0.01 <= t <= 0.3 for t in self.schedule):
            raise ParameterOutOfRange("waist t must lie in [0.01, 0.3]")
        if self.name == "small_bubble" and not all(0.01 <= b <= 0.5 for b in self.schedule):
            raise ParameterOutOfRange("bubble radius must lie in [0.01, 0.5]")
        if self.name == "mobius_drift" and not all(0 < t <= 1 for t in self.schedule):
            raise ParameterOutOfRange("drift parameter must lie in (0, 1]")
        if self.name == "branched_cover" and self.degree not in (2, 3, 4):
            raise ParameterOutOfRange("cover degree must be 2, 3 or 4")


@dataclass
class Profile:
    """Dense meridian polyline of a surface of revolution about the z-axis."""

    s: np.ndarray  # arclength from the north pole
    r: np.ndarray
    z: np.ndarray
    u: np.ndarray  # conformal log-polar coordinate (finite samples only)
    mesh: np.ndarray  # mesh coordinate in [0, pi]
    caps: tuple  # (north radius, south radius) of the end spheres
    z_poles: tuple

    @property
    def length(self) -> float:
        return float(self.s[-1])


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (10 - 15 * x + 6 * x * x)


def _blend_range(w, R_a, R_b):
    """Radii over which the catenoid is blended into the adjoining spheres.

    The catenoid slope w/r meets the sphere slope r/R near r = sqrt(wR);
    blending across that scale in log r keeps the curvature O(1/r).
    """
    R = min(R_a, R_b)
    return _BLEND_LO * w, min(_BLEND_HI * np.sqrt(w * R), 0.6 * R)


def _blend(rr, lo, hi, zc, zs):
    chi = _smoothstep(np.log(rr / lo) / np.log(hi / lo))
    return (1 - chi) * zc + chi * zs


def sphere_chain_profile(centers, radii, waists, n=_SAMPLES) -> Profile:
    """Spheres stacked top to bottom along z, consecutive ones joined by a
    catenoid neck of the given waist blended into both spheres."""
    centers = [float(c) for c in centers]
    radii = [float(r) for r in radii]
    k = len(centers)
    ranges = [_blend_range(waists[i], radii[i], radii[i + 1]) for i in range(k - 1)]
    pieces = []  # (r, z, mesh floor radius) ordered north to south
    for i in range(k):
        c, R = centers[i], radii[i]
        top = np.arcsin(ranges[i - 1][1] / R) if i > 0 else 0.0
        bot = np.pi - np.arcsin(ranges[i][1] / R) if i < k - 1 else np.pi
        a = np.linspace(top, bot, n)
        pieces.append((R * np.sin(a), c + R * np.cos(a), np.full(n, 0.5 * R)))
        if i == k - 1:
            break
        w = float(waists[i])
        lo, hi = ranges[i]
        c2, R2 = centers[i + 1], radii[i + 1]
        zm = 0.5 * ((c - R) + (c2 + R2))
        rr = np.geomspace(hi, lo, n)[1:]
        pieces.append((rr, _blend(rr, lo, hi, zm + w * np.arccosh(rr / w),
                                  c - np.sqrt(R * R - rr * rr)), np.zeros_like(rr)))
        zz = np.linspace(w * np.arccosh(_BLEND_LO), -w * np.arccosh(_BLEND_LO), n)[1:]
        pieces.append((w * np.cosh(zz / w), zm + zz, np.zeros_like(zz)))
        rr = np.geomspace(lo, hi, n)[1:]
        pieces.append((rr, _blend(rr, lo, hi, zm - w * np.arccosh(rr / w),
                                  c2 + np.sqrt(R2 * R2 - rr * rr)), np.zeros_like(rr)))
    r = np.concatenate([p[0] for p in pieces])
    z = np.concatenate([p[1] for p in pieces])
    rf = np.concatenate([p[2] for p in pieces])
    # drop duplicated joints
    keep = np.ones(len(r), dtype=bool)
    keep[1:] = np.hypot(np.diff(r), np.diff(z)) > 0
    r, z, rf = r[keep], z[keep], rf[keep]
    r[0] = r[-1] = 0.0
    ds = np.hypot(np.diff(r), np.diff(z))
    s = np.concatenate([[0.0], np.cumsum(ds)])
    # conformal coordinate: closed form on the end spheres, trapezoid elsewhere
    u = np.empty_like(s)
    Rn, Rs = radii[0], radii[-1]
    mid = (r > 0)
    inv = np.where(mid, 1.0 / np.where(mid, r, 1.0), 0.0)
    seg = 0.5 * (inv[1:] + inv[:-1]) * ds
    # anchor u on the interior using log tan on the north sphere
    j0 = int(np.searchsorted(s, 0.5 * np.pi * Rn))
    u[j0] = np.log(np.tan(s[j0] / (2 * Rn)))
    u[j0 + 1:] = u[j0] + np.cumsum(seg[j0:])
    u[:j0] = u[j0] - np.cumsum(seg[:j0][::-1])[::-1]
    north = s <= 0.5 * np.pi * Rn
    with np.errstate(divide="ignore"):
        u[north] = np.log(np.tan(s[north] / (2 * Rn)))
        L = s[-1]
        js = int(np.searchsorted(s, L - 0.5 * np.pi * Rs))
        south = s >= s[js]
        off = u[js] + np.log(np.tan((L - s[js]) / (2 * Rs)))
        u[south] = off - np.log(np.tan((L - s[south]) / (2 * Rs)))
    w = 1.0 / np.maximum(r, rf)
    m = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * ds)])
    m *= np.pi / m[-1]
    return Profile(s, r, z, u, m, (Rn, Rs), (float(z[0]), float(z[-1])))


def revolution_immersion(profile: Profile, level: int, u_center: float = 0.0) -> Immersion:
    """Mesh the profile. With ``u_center = 0`` the top sphere keeps the
    standard parametrization and lower spheres shrink toward the south pole."""
    verts, _ = icosphere(level)
    theta = np.arccos(np.clip(verts[:, 2], -1, 1))
    phi = np.arctan2(verts[:, 1], verts[:, 0])
    s = np.interp(theta, profile.mesh, profile.s)
    r = np.interp(s, profile.s, profile.r)
    z = np.interp(s, profile.s, profile.z)
    L = profile.length
    Rn, Rs = profile.caps
    # exact sphere geometry near both poles
    near_n = s < 0.5 * np.pi * Rn
    near_s = s > L - 0.5 * np.pi * Rs
    r[near_n] = Rn * np.sin(s[near_n] / Rn)
    z[near_n] = profile.z_poles[0] - Rn * (1 - np.cos(s[near_n] / Rn))
    r[near_s] = Rs * np.sin((L - s[near_s]) / Rs)
    z[near_s] = profile.z_poles[1] + Rs * (1 - np.cos((L - s[near_s]) / Rs))
    finite = np.isfinite(profile.u)
    with np.errstate(divide="ignore"):
        u = np.interp(s, profile.s[finite], profile.u[finite])
        u[near_n] = np.log(np.tan(s[near_n] / (2 * Rn)))
        js = int(np.searchsorted(profile.s, L - 0.5 * np.pi * Rs))
        off = profile.u[js] + np.log(np.tan((L - profile.s[js]) / (2 * Rs)))
        u[near_s] = off - np.log(np.tan((L - s[near_s]) / (2 * Rs)))
    # domain: south-chart coordinate exp(u_c - u) e^{i phi}; poles exact
    with np.errstate(over="ignore", invalid="ignore"):
        zc = np.exp(u_center - u + 1j * phi)
    dom = inverse_stereographic(zc, "south")
    dom[theta == 0] = (0.0, 0.0, 1.0)
    dom[theta == np.pi] = (0.0, 0.0, -1.0)
    image = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    image[theta == 0] = (0.0, 0.0, profile.z_poles[0])
    image[theta == np.pi] = (0.0, 0.0, profile.z_poles[1])
    return Immersion(dom, image, level)


def neck2_profile(t: float) -> Profile:
    return sphere_chain_profile([1 + t, -(1 + t)], [1.0, 1.0], [t])


def chain3_profile(t: float) -> Profile:
    return sphere_chain_profile([2 + 2 * t, 0.0, -(2 + 2 * t)], [1.0] * 3, [t, t])


def small_bubble_profile(b: float) -> Profile:
    w = 0.25 * b
    return sphere_chain_profile([0.0, -(1 + 2 * w + b)], [1.0, b], [w])


def profile_energies(profile: Profile) -> dict:
    """A, W, F of the surface of revolution by quadrature on the profile.

    Principal curvatures: k1 = z'' r' - r'' z' (meridian), k2 = z'/r
    (parallel), with arclength derivatives.
    """
    s, r, z = profile.s, profile.r, profile.z
    rp = np.gradient(r, s)
    zp = np.gradient(z, s)
    rpp = np.gradient(rp, s)
    zpp = np.gradient(zp, s)
    k1 = rp * zpp - zp * rpp
    with np.errstate(divide="ignore", invalid="ignore"):
        k2 = np.where(r > 1e-9, zp / r, k1)
    dA = 2 * np.pi * r
    integrate = lambda f: float(np.trapezoid(f * dA, s))
    A = integrate(np.ones_like(s))
    H2 = 0.25 * (k1 + k2) ** 2
    W = integrate(H2)
    F = 0.5 * integrate(k1 * k1 + k2 * k2)
    return {"A": A, "W": W, "F": F, "G": A + F, "L": A + W}


def branched_cover(d: int, level: int) -> Immersion:
    """z -> z^d in the south chart onto the unit sphere; both poles branch."""
    verts, _ = icosphere(level)
    z = stereographic(verts, "south")
    with np.errstate(invalid="ignore", over="ignore"):
        w = np.where(np.isfinite(z), z**d, np.inf)
    image = inverse_stereographic(w, "south")
    bps = (BranchPoint(np.array([0.0, 0.0, -1.0]), d), BranchPoint(np.array([0.0, 0.0, 1.0]), d))
    return Immersion(verts.copy(), image, level, Target("round_sphere", 3, 1.0), bps)


def member(spec: ScenarioSpec, param: float) -> Immersion:
    lvl = spec.level
    if spec.name == "round":
        return identity_sphere(lvl)
    if spec.name == "mobius_drift":
        return reparametrize(identity_sphere(lvl), MobiusMap.dilation(1.0 / param))
    if spec.name == "neck2":
        return revolution_immersion(neck2_profile(param), lvl)
    if spec.name == "chain3":
        return revolution_immersion(chain3_profile(param), lvl)
    if spec.name == "small_bubble":
        return revolution_immersion(small_bubble_profile(param), lvl)
    return branched_cover(spec.degree, lvl)


def scenario_profile(spec: ScenarioSpec, param: float) -> Profile | None:
    return {"neck2": neck2_profile, "chain3": chain3_profile,
            "small_bubble": small_bubble_profile}.get(spec.name, lambda _: None)(param)


def generate_scenario(spec: ScenarioSpec):
    from .concentration import Family

    members = [member(spec, p) for p in spec.schedule]
    refs = []
    for p in spec.schedule:
        prof = scenario_profile(spec, p)
        refs.append(profile_energies(prof) if prof is not None else None)
    return Family(spec.name, spec.schedule, members, spec.level, reference=refs)
