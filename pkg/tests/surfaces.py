"""Small closed test surfaces with known local geometry near the south pole."""

import numpy as np

from bubbletree.geom_core import Immersion
from bubbletree.mesh import icosphere
from bubbletree.sphere_gauge import stereographic

SOUTH = np.array([0.0, 0.0, -1.0])


def _south_chart(level):
    p, _ = icosphere(level)
    low = p[:, 2] < 0
    w = np.where(low, stereographic(p, "south"), 0)
    return p, low, w


def flat_disc_with_dome(level=6):
    """Unit disc |w| <= 1 in the plane z = 0 closed by the upper hemisphere."""
    p, low, w = _south_chart(level)
    flat = np.stack([w.real, w.imag, np.zeros(len(p))], axis=1)
    return Immersion(p, np.where(low[:, None], flat, p), level)


def paraboloid_cup(level=6):
    """Graph z = x^2 + y^2 over the unit disc, closed by a lifted hemisphere."""
    p, low, w = _south_chart(level)
    graph = np.stack([w.real, w.imag, np.abs(w) ** 2], axis=1)
    return Immersion(p, np.where(low[:, None], graph, p + [0.0, 0.0, 1.0]), level)


def flat_pillow(level=6, radius=1.5):
    """Flat disc |w| <= radius in the plane, closed by a half torus rim and a
    flat lid; the disc |w| < 1 is flat with a flat collar out to ``radius``."""
    p, _ = icosphere(level)
    z = stereographic(p, "south")
    # latitude-like parameter: s in [0, 1] below the rim, > 1 on the lid
    r = np.abs(np.where(np.isfinite(z), z, 0))
    theta = np.angle(np.where(np.isfinite(z), z, 1))
    phi = np.arccos(np.clip(p[:, 2], -1, 1))  # 0 at north, pi at south
    tube = 0.25
    cut = 2 * np.arctan(radius)  # polar angle of the |w| = radius circle from south
    # south part: the flat disc itself
    img = np.stack([z.real, z.imag, np.zeros(len(p))], axis=1)
    rest = (np.pi - phi) > cut
    # remaining cap is parametrized by u in (0, 1]: rim for u < 0.5, lid after
    u = ((np.pi - phi[rest]) - cut) / (np.pi - cut)
    ang = np.where(u < 0.5, np.pi * u / 0.5, np.pi)
    rad = np.where(u < 0.5, radius + tube * np.sin(ang), radius * (1 - (u - 0.5) / 0.5))
    hgt = np.where(u < 0.5, tube * (1 - np.cos(ang)), 2 * tube)
    img[rest] = np.stack([rad * np.cos(theta[rest]), rad * np.sin(theta[rest]), hgt], axis=1)
    img[~np.isfinite(img).all(axis=1)] = [0.0, 0.0, 2 * tube]
    return Immersion(p, img, level)


def south_faces(Phi, angle):
    """Faces whose domain center lies within ``angle`` of the south pole."""
    return Phi.face_centers @ SOUTH > np.cos(angle)
