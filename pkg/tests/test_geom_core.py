import numpy as np
import pytest

from bubbletree.errors import DegreeUnreliable, EmptyRegion, InputError
from bubbletree.geom_core import (
    Immersion,
    PolyForm,
    Target,
    current_pairing,
    degree,
    diameter,
    energies,
    gauss_map,
    identity_sphere,
    induced_metric,
    point_diameter,
    read_imm,
    second_fundamental_form,
    standard_forms,
    union_energies,
    write_imm,
    write_obj,
)
from bubbletree.scenarios import ScenarioSpec, branched_cover, member
from bubbletree.sphere_gauge import stereographic

from surfaces import SOUTH, flat_disc_with_dome, paraboloid_cup, south_faces

FOUR_PI = 4 * np.pi


@pytest.fixture(scope="module")
def round6():
    return identity_sphere(6)


def test_planar_chart_metric_is_identity():
    Phi = flat_disc_with_dome(5)
    m = induced_metric(Phi, chart="south")
    disc = south_faces(Phi, 1.2)
    assert np.allclose(m.g[disc], np.eye(2), atol=1e-12)
    assert np.allclose(m.area_element[disc], 1.0, atol=1e-12)


def test_scaled_chart_metric():
    Phi = flat_disc_with_dome(5)
    m = induced_metric(Phi.with_image(2 * Phi.image), chart="south")
    disc = south_faces(Phi, 1.2)
    assert np.allclose(m.g[disc], 4 * np.eye(2), atol=1e-11)


def test_sphere_area_quadrature(round6):
    m = induced_metric(round6)
    assert np.sum(m.area_element * m.domain_area) == pytest.approx(FOUR_PI, rel=2e-3)


def test_flat_normal_is_constant():
    Phi = flat_disc_with_dome(5)
    n = gauss_map(Phi).normals[:, 0]
    disc = south_faces(Phi, 1.2)
    assert np.allclose(np.abs(n[disc] @ [0, 0, 1]), 1.0, atol=1e-12)


def test_sphere_normal_is_position(round6):
    n = gauss_map(round6).normals[:, 0]
    c = round6.face_centers
    assert np.all(np.abs(np.sum(n * c, axis=1)) > 1 - 1e-3)


def test_flat_second_form_vanishes():
    Phi = flat_disc_with_dome(5)
    cs = second_fundamental_form(Phi)
    disc = south_faces(Phi, 1.2)
    assert np.max(np.abs(cs.second_form[disc])) < 1e-9
    assert np.max(np.abs(cs.mean_curvature[disc])) < 1e-9


def test_sphere_curvature(round6):
    cs = second_fundamental_form(round6)
    assert np.median(cs.norm_II2) == pytest.approx(2.0, rel=1e-2)
    assert np.median(np.linalg.norm(cs.mean_curvature, axis=1)) == pytest.approx(1.0, rel=1e-2)
    assert np.max(np.abs(cs.norm_II2 - 2.0)) < 0.1


def test_graph_at_critical_point():
    Phi = paraboloid_cup(6)
    origin = south_faces(Phi, 0.03)
    n = gauss_map(Phi).normals[origin, 0]
    assert np.allclose(np.abs(n[:, 2]), 1.0, atol=1e-3)
    II = second_fundamental_form(Phi).second_form[origin]
    proj = np.einsum("fijn,fn->fij", II, n)
    # trace-based comparisons are independent of the tangent frame rotation
    assert np.allclose(np.abs(proj[:, 0, 0]), 2.0, atol=0.1)
    assert np.allclose(np.abs(proj[:, 1, 1]), 2.0, atol=0.1)
    assert np.allclose(proj[:, 0, 1], 0.0, atol=0.1)


def test_round_energies(round6):
    e = energies(round6)
    for v in (e.A, e.W, e.F):
        assert v == pytest.approx(FOUR_PI, rel=0.01)
    assert e.G == pytest.approx(2 * FOUR_PI, rel=0.01)
    assert e.L == pytest.approx(2 * FOUR_PI, rel=0.01)


def test_union_doubles(round6):
    one = energies(round6)
    two = union_energies([round6, round6.with_image(round6.image + [5.0, 0, 0])])
    assert (two.A, two.W, two.F) == pytest.approx((2 * one.A, 2 * one.W, 2 * one.F), rel=1e-12)


def test_branched_cover_energies():
    e = energies(branched_cover(2, 6))
    assert e.A == pytest.approx(2 * FOUR_PI, rel=0.01)
    assert e.F == pytest.approx(2 * FOUR_PI, rel=0.02)


def test_diameters(round6):
    assert diameter(round6) == pytest.approx(2.0, abs=1e-12)
    assert diameter(round6.with_image(np.zeros_like(round6.image))) == 0.0
    neck = member(ScenarioSpec("neck2"), 0.1)
    assert diameter(neck) >= 4.0 - 1e-3
    with pytest.raises(EmptyRegion):
        diameter(round6, np.zeros(len(round6.faces), dtype=bool))


def test_point_diameter_matches_brute_force():
    rng = np.random.default_rng(4)
    for n in (5, 300, 4000):
        pts = rng.normal(size=(n, 3)) * [3, 1, 0.5]
        if n <= 300:
            ref = np.max(np.linalg.norm(pts[:, None] - pts[None], axis=2))
        else:
            ref = max(np.max(np.linalg.norm(pts[i] - pts, axis=1)) for i in range(n))
        assert point_diameter(pts) == pytest.approx(ref, rel=1e-14)


def test_exact_form_pairs_to_zero(round6):
    dx1dx2 = PolyForm(((1.0, (0, 0, 0), 0, 1),))
    neck = member(ScenarioSpec("neck2"), 0.1)
    for Phi in (round6, neck):
        assert abs(current_pairing(Phi, dx1dx2)) <= 1e-6 * energies(Phi).A


def test_standard_forms_on_sphere(round6):
    # x dy^dz over the unit ball volume: 4 pi / 3
    vals = [current_pairing(round6, w) for w in standard_forms()]
    assert vals[0] == pytest.approx(FOUR_PI / 3, rel=5e-3)
    assert vals[3] == pytest.approx(0.0, abs=1e-10)


def test_degree(round6):
    S = round6.with_image(round6.image, target=Target("round_sphere"))
    deg, resid = degree(S)
    assert deg == 1 and resid <= 1e-3
    assert degree(branched_cover(2, 6))[0] == 2
    with pytest.raises(InputError):
        degree(round6)


def test_folded_map_has_degree_zero(round6):
    img = round6.image.copy()
    img[:, 2] = np.abs(img[:, 2])
    img /= np.linalg.norm(img, axis=1, keepdims=True)
    assert degree(round6.with_image(img, target=Target("round_sphere")))[0] == 0


def test_coarse_scrambled_map_degree_is_unreliable():
    S = identity_sphere(0)
    x = np.random.default_rng(4).normal(size=(12, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    with pytest.raises(DegreeUnreliable):
        degree(S.with_image(x, target=Target("round_sphere")))


def test_imm_round_trip(tmp_path):
    Phi = member(ScenarioSpec("neck2", level=3), 0.1)
    write_imm(Phi, tmp_path / "a.imm")
    back = read_imm(tmp_path / "a.imm")
    assert back.level == 3
    assert np.array_equal(back.image, Phi.image)
    assert np.array_equal(back.domain, Phi.domain)


def test_obj_export(tmp_path):
    Phi = identity_sphere(2)
    write_obj(Phi, tmp_path / "a.obj")
    lines = (tmp_path / "a.obj").read_text().splitlines()
    assert sum(ln.startswith("v ") for ln in lines) == Phi.n_vertices
    assert sum(ln.startswith("f ") for ln in lines) == len(Phi.faces)


def test_immersion_validation():
    S = identity_sphere(2)
    with pytest.raises(InputError):
        Immersion(S.domain[:-1], S.image[:-1], 2)
    bad = S.image.copy()
    bad[0, 0] = np.nan
    with pytest.raises(InputError):
        Immersion(S.domain, bad, 2)
    with pytest.raises(InputError):
        Immersion(S.domain, 2 * S.image, 2, Target("round_sphere"))


def test_south_pole_is_chart_origin():
    assert stereographic(SOUTH[None], "south")[0] == 0


def test_mesh_constant_matches_calibration():
    from bubbletree.geom_core import MESH_CONSTANT, calibrate_mesh_constant, mesh_tolerance

    assert calibrate_mesh_constant() == pytest.approx(MESH_CONSTANT, rel=1e-9)
    assert mesh_tolerance(7) == pytest.approx(mesh_tolerance(6) / 4)
