import json
import math

import numpy as np
import pytest

from bubbletree.bubble_tree import (
    NORTH,
    Ball,
    BubbleTree,
    Gluing,
    Node,
    assemble,
    conformal_barycenter,
    extract_bubble,
    mobius_cap,
    quantization_from_dict,
    tree_energy,
    validate_tree,
    verify_quantization,
)
from bubbletree.concentration import Family
from bubbletree.errors import DiameterCollapse
from bubbletree.geom_core import energies, identity_sphere, mesh_tolerance
from bubbletree.sphere_gauge import MobiusMap

from surfaces import SOUTH


def _node(node_id, parent, ball, xi, child_balls=(), children=()):
    depth = len(node_id.split("."))
    return Node(node_id, parent, depth, xi, ball, list(child_balls),
                Gluing(MobiusMap.identity()), [], energies(xi), 1, [], list(children))


def _single(level=4):
    xi = identity_sphere(level)
    T = BubbleTree([_node("1", None, Ball(NORTH, math.pi), xi)], f=xi)
    T.stored_energy = tree_energy(T)[0]
    return T


def _pair(level=4):
    xi = identity_sphere(level)
    root = _node("1", None, Ball(NORTH, math.pi), xi, [Ball(SOUTH, 0.4)], ["1.1"])
    child = _node("1.1", "1", Ball(SOUTH, 0.2), xi)
    return BubbleTree([root, child])


def test_ball_relations():
    a = Ball([0, 0, 2], 0.3)
    assert np.allclose(a.center, NORTH)
    assert Ball(NORTH, 0.1).inside(a)
    assert not a.inside(a)
    assert a.disjoint(Ball(SOUTH, 0.3))
    assert not a.disjoint(Ball([0, 0.2, 1], 0.3))
    assert a.contains(np.array([[0, 0, 1.0], [0, 0, -1.0]])).tolist() == [True, False]
    assert Ball.from_dict(a.to_dict()).to_dict() == a.to_dict()


def test_identity_maps_caps_to_caps():
    b = Ball([1, 1, 0], 0.4)
    c = mobius_cap(MobiusMap.identity(), b)
    assert np.allclose(c.center, b.center)
    assert c.radius == pytest.approx(b.radius)


def test_single_node_tree_is_valid():
    v = validate_tree(_single())
    assert v["valid"], v


def test_single_node_assembly_reproduces_xi():
    T = _single()
    assert np.max(np.abs(assemble(T, 4).image - T.f.image)) <= 1e-12


def test_stored_energy_mismatch_is_reported():
    T = _single()
    T.stored_energy += 1e-9
    v = validate_tree(T)
    assert not v["energy_sum"]["pass"] and not v["valid"]


def test_overlapping_nodes_fail_nesting():
    xi = identity_sphere(3)
    root = _node("1", None, Ball(NORTH, math.pi), xi, [Ball(SOUTH, 0.4)], ["1.1"])
    stray = _node("1.1", "1", Ball([1, 0, -1], 0.5), xi)
    assert not validate_tree(BubbleTree([root, stray]))["nesting"]["pass"]
    assert validate_tree(_pair(3))["nesting"]["pass"]


def test_overlapping_child_balls_are_rejected():
    xi = identity_sphere(3)
    root = _node("1", None, Ball(NORTH, math.pi), xi,
                 [Ball(SOUTH, 0.4), Ball([0.3, 0, -1], 0.4)])
    assert not validate_tree(BubbleTree([root]))["children_disjoint"]["pass"]


def test_tree_energy_of_round_spheres():
    G1, _ = tree_energy(_single(6))
    G2, table = tree_energy(_pair(6))
    assert G1 == pytest.approx(8 * math.pi, rel=0.01)
    assert G2 == pytest.approx(16 * math.pi, rel=0.01)
    assert [k for k, _ in table] == ["1", "1.1"]


def test_tree_energy_ignores_node_order():
    xi = identity_sphere(3)
    nodes = [_node("1", None, Ball(NORTH, math.pi), xi, [Ball(SOUTH, 0.4)], ["1.1"])]
    for j, s in enumerate((0.9, 1.1, 1.3), start=1):
        nodes.append(_node(f"1.{j}", "1", Ball(SOUTH, 0.1), xi.with_image(s * xi.image)))
    rng = np.random.default_rng(3)
    G = tree_energy(BubbleTree(nodes))[0]
    for _ in range(5):
        perm = [nodes[i] for i in rng.permutation(len(nodes))]
        assert tree_energy(BubbleTree(perm))[0] == G


def test_serialization_round_trip():
    T = _pair(3)
    T.quantization = {"area_last": 8 * math.pi}
    d = json.loads(json.dumps(T.to_dict()))
    back = BubbleTree.from_dict(d)
    assert back.N == 2
    assert back.node("1.1").ball.radius == 0.2
    assert tree_energy(back)[0] == d["G"]
    # gluings are not rebuilt; everything else survives
    strip = lambda nodes: [{k: v for k, v in n.items() if k != "gluing"} for n in nodes]  # noqa: E731
    assert strip(back.to_dict()["nodes"]) == strip(d["nodes"])


def test_dropping_a_node_from_serialized_tree():
    d = _pair(3).to_dict()
    d["quantization"] = {"area_last": 2 * energies(identity_sphere(3)).A}
    assert quantization_from_dict(d)["area_rel_err"] == pytest.approx(0.0, abs=1e-14)
    assert quantization_from_dict(d, drop=("1.1",))["area_rel_err"] == pytest.approx(0.5)


def test_barycenter_centres_the_cloud():
    rng = np.random.default_rng(0)
    p = rng.normal(size=(400, 3)) + [0, 0, 2.0]
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    w = rng.uniform(0.5, 1.5, len(p))
    M = conformal_barycenter(p, w)
    q = M.apply(p)
    assert np.linalg.norm((w[:, None] * q).sum(axis=0) / w.sum()) < 1e-9


def test_barycenter_of_balanced_cloud_is_identity():
    p = identity_sphere(2).domain
    M = conformal_barycenter(p, np.ones(len(p)))
    assert np.allclose(M.apply(p), p, atol=1e-12)


def test_shrinking_family_collapses():
    xi = identity_sphere(3)
    F = Family("shrink", (0.3, 0.2, 0.1), [xi.with_image(r * xi.image) for r in (0.3, 0.1, 0.03)], 3)
    with pytest.raises(DiameterCollapse):
        extract_bubble(F)


def test_drift_family_is_gauged_onto_its_limit(families):
    F = families("mobius_drift")
    ext = extract_bubble(F)
    assert ext.points == []
    for m in ext.family.members:
        assert np.max(np.abs(m.image - F.last.image)) <= mesh_tolerance(F.level)


def test_round_family_gives_one_node(trees):
    T = trees("round").value
    assert T.N == 1
    assert validate_tree(T)["valid"]


def test_single_node_verify(trees, families):
    F = families("round")
    q = verify_quantization(F, trees("round").value)
    eps = mesh_tolerance(F.level)
    assert q["area_rel_err"] <= eps
    assert q["hausdorff"] <= eps
    assert q["degree_sum_err"] == 0


def test_neck2_tree_structure(trees):
    T = trees("neck2").value
    root = T.node("1")
    assert root.children == ["1.1"]
    child = T.node("1.1")
    assert child.ball.inside(root.child_balls[0])
    # the bubble hangs off the south pole of the domain
    assert float(child.ball.center @ SOUTH) > math.cos(0.1)
    assert validate_tree(T)["valid"]
