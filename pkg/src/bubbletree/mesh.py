"""Canonical icosphere meshes and point location on spherical triangle meshes."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree

_PHI = (1.0 + 5.0**0.5) / 2.0

_ICO_VERTS = np.array(
    [
        [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
        [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
        [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
    ],
    dtype=float,
)

_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ],
    dtype=np.int64,
)


def _base_icosahedron():
    # rotate about the x-axis so that vertex 5 sits on the north pole
    alpha = np.arctan2(1.0, _PHI)
    c, s = np.cos(alpha), np.sin(alpha)
    rot = np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    verts = _ICO_VERTS @ rot.T
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    verts[5] = [0.0, 0.0, 1.0]
    verts[6] = [0.0, 0.0, -1.0]
    return verts, _ICO_FACES.copy()


def _subdivide(verts, faces):
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges.sort(axis=1)
    uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    mids = verts[uniq[:, 0]] + verts[uniq[:, 1]]
    mids /= np.linalg.norm(mids, axis=1, keepdims=True)
    nf = len(faces)
    base = len(verts)
    ab = base + inverse[:nf]
    bc = base + inverse[nf : 2 * nf]
    ca = base + inverse[2 * nf :]
    a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
    new_faces = np.concatenate(
        [
            np.stack([a, ab, ca], axis=1),
            np.stack([b, bc, ab], axis=1),
            np.stack([c, ca, bc], axis=1),
            np.stack([ab, bc, ca], axis=1),
        ]
    )
    return np.concatenate([verts, mids]), new_faces


@lru_cache(maxsize=None)
def icosphere(level: int):
    """Vertices and outward-oriented faces of the canonical icosphere.

    The base icosahedron has a vertex pair on the z-axis, so every level
    carries vertices exactly at both poles (indices 5 and 6).
    """
    if level < 0 or level > 9:
        raise ValueError(f"subdivision level {level} out of range")
    verts, faces = _base_icosahedron()
    for _ in range(level):
        verts, faces = _subdivide(verts, faces)
    verts.setflags(write=False)
    faces.setflags(write=False)
    return verts, faces


def vertex_count(level: int) -> int:
    return 10 * 4**level + 2


def level_from_vertex_count(nv: int) -> int:
    for lvl in range(10):
        if vertex_count(lvl) == nv:
            return lvl
    raise ValueError(f"{nv} vertices is not an icosphere size")


@lru_cache(maxsize=None)
def mean_edge_angle(level: int) -> float:
    """Mean geodesic edge length of the canonical icosphere."""
    verts, faces = icosphere(level)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    return float(np.mean(geodesic(verts[e[:, 0]], verts[e[:, 1]])))


def geodesic(p, q):
    """Great-circle distance, accurate for tiny separations."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    cross = np.linalg.norm(np.cross(p, q), axis=-1)
    dot = np.sum(p * q, axis=-1)
    return np.arctan2(cross, dot)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def vertex_faces(faces, nv):
    """CSR-style incidence: (offsets, face ids) with faces of vertex i in
    ``ids[offsets[i]:offsets[i+1]]``."""
    flat = faces.reshape(-1)
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=nv)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return offsets, order // 3


def vertex_neighbors(faces, nv):
    """Sorted unique neighbour lists as a CSR pair (offsets, ids)."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.concatenate([e, e[:, ::-1]])
    e = np.unique(e, axis=0)
    counts = np.bincount(e[:, 0], minlength=nv)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return offsets, e[:, 1]


def unique_edges(faces):
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def ray_barycentric(points, a, b, c):
    """Barycentric coordinates of the ray through ``points`` (from the
    origin) hitting the plane of triangle (a, b, c); returns (w0, w1, w2, t)."""
    e1 = b - a
    e2 = c - a
    pvec = np.cross(points, e2)
    det = np.sum(e1 * pvec, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        tvec = -a
        u = np.sum(tvec * pvec, axis=-1) * inv
        qvec = np.cross(tvec, e1)
        v = np.sum(points * qvec, axis=-1) * inv
        t = np.sum(e2 * qvec, axis=-1) * inv
    return 1.0 - u - v, u, v, t


class MeshLocator:
    """Locates query directions in a spherical triangle mesh.

    Works for graded meshes: candidates come from the faces incident to
    the k nearest vertices, falling back to wider searches and finally a
    brute-force scan.
    """

    def __init__(self, verts, faces):
        self.verts = np.asarray(verts, dtype=float)
        self.faces = np.asarray(faces)
        self.tree = cKDTree(self.verts)
        self.offsets, self.vf = vertex_faces(self.faces, len(self.verts))

    def _try(self, pts, k):
        k = min(k, len(self.verts))
        _, nn = self.tree.query(pts, k=k)
        nn = np.atleast_2d(nn).reshape(len(pts), k)
        deg = self.offsets[1:] - self.offsets[:-1]
        maxdeg = int(deg.max())
        cand = np.full((len(pts), k * maxdeg), -1, dtype=np.int64)
        for j in range(k):
            v = nn[:, j]
            for m in range(maxdeg):
                has = deg[v] > m
                idx = np.where(has, self.offsets[v] + m, 0)
                cand[:, j * maxdeg + m] = np.where(has, self.vf[idx], -1)
        safe = np.where(cand < 0, 0, cand)
        tri = self.faces[safe]
        a = self.verts[tri[..., 0]]
        b = self.verts[tri[..., 1]]
        c = self.verts[tri[..., 2]]
        p = np.broadcast_to(pts[:, None, :], a.shape)
        w0, w1, w2, t = ray_barycentric(p, a, b, c)
        score = np.minimum(np.minimum(w0, w1), w2)
        score = np.where((cand >= 0) & (t > 0) & np.isfinite(score), score, -np.inf)
        best = np.argmax(score, axis=1)
        rows = np.arange(len(pts))
        face = cand[rows, best]
        bary = np.stack([w0[rows, best], w1[rows, best], w2[rows, best]], axis=1)
        return face, bary, score[rows, best]

    def _brute(self, pts):
        tri = self.faces
        a, b, c = self.verts[tri[:, 0]], self.verts[tri[:, 1]], self.verts[tri[:, 2]]
        faces = np.empty(len(pts), dtype=np.int64)
        bary = np.empty((len(pts), 3))
        for i, p in enumerate(pts):
            w0, w1, w2, t = ray_barycentric(p[None, :], a, b, c)
            score = np.minimum(np.minimum(w0, w1), w2)
            score = np.where((t > 0) & np.isfinite(score), score, -np.inf)
            j = int(np.argmax(score))
            faces[i] = j
            bary[i] = (w0[j], w1[j], w2[j])
        return faces, bary

    def locate(self, points, tol=1e-9):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        face, bary, score = self._try(pts, 3)
        for k in (12, 48):
            bad = score < -tol
            if not bad.any():
                break
            f2, b2, s2 = self._try(pts[bad], k)
            face[bad], bary[bad], score[bad] = f2, b2, s2
        bad = score < -tol
        if bad.any():
            f3, b3 = self._brute(pts[bad])
            face[bad], bary[bad] = f3, b3
        bary = np.clip(bary, 0.0, None)
        bary /= bary.sum(axis=1, keepdims=True)
        return face, bary

    def interpolate(self, values, points):
        """Piecewise-linear interpolation of per-vertex ``values``.

        Coordinates within 1e-12 of a vertex snap to it, so sampling at the
        mesh's own vertices returns the stored values bit-exactly.
        """
        face, bary = self.locate(points)
        tri = self.faces[face]
        vals = np.asarray(values)
        v0 = vals[tri[:, 0]]
        shape = (-1,) + (1,) * (vals.ndim - 1)
        # anchored form keeps constant fields exact
        out = (v0 + bary[:, 1].reshape(shape) * (vals[tri[:, 1]] - v0)
               + bary[:, 2].reshape(shape) * (vals[tri[:, 2]] - v0))
        snap = bary.max(axis=1) > 1.0 - 1e-12
        if snap.any():
            k = np.argmax(bary[snap], axis=1)
            out[snap] = vals[tri[snap, k]]
        return out
