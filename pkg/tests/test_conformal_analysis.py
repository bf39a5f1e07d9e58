import numpy as np
import pytest

from bubbletree.conformal_analysis import (
    BranchPoint,
    branch_estimates,
    conformal_factor,
    coulomb_frame,
    detect_branch_points,
    liouville_residual,
    weak_l2_quasinorm,
    wente_solve,
)
from bubbletree.errors import ThresholdExceeded
from bubbletree.geom_core import Immersion, identity_sphere, mesh_tolerance
from bubbletree.mesh import icosphere
from bubbletree.scenarios import branched_cover
from bubbletree.sphere_gauge import ChartField, stereographic

from surfaces import flat_disc_with_dome, south_faces

EPS6 = mesh_tolerance(6)
# suite baselines: the Coulomb frame/normal energy ratio on spherical caps
# below the frame threshold, and the Wente constant on the unit disc
C_FRAME = 1.25
C_WENTE = 1.0 / (4.0 * np.pi)


@pytest.fixture(scope="module")
def round6():
    return identity_sphere(6)


@pytest.fixture(scope="module")
def cover2():
    return branched_cover(2, 6)


def test_flat_chart_has_zero_log_factor():
    Phi = flat_disc_with_dome(5)
    cf = conformal_factor(Phi, "south")
    disc = south_faces(Phi, 1.2) & cf.valid
    assert np.max(np.abs(cf.lam[disc])) < 1e-12
    assert np.max(np.abs(cf.sigma[disc])) < 1e-12


def test_sphere_conformal_factor(round6):
    # the unit chart window covers the southern hemisphere
    cf = conformal_factor(round6, "south", window=(-1, 1, -1, 1))
    z = cf.centers[cf.valid]
    expected = 2.0 / (1.0 + np.abs(z) ** 2)
    assert np.max(np.abs(np.exp(cf.lam[cf.valid]) / expected - 1)) < 1e-3


def test_square_map_conformal_factor():
    p, _ = icosphere(6)
    z = stereographic(p)
    w = np.where(np.abs(z) < 2, z, 2 * np.exp(1j * np.angle(np.where(np.isfinite(z), z, 1)))) ** 2
    Phi = Immersion(p, np.stack([w.real, w.imag, np.zeros(len(p))], axis=1), 6)
    cf = conformal_factor(Phi, "south")
    r = np.abs(cf.centers)
    sel = cf.valid & (r > 0.4) & (r < 1.5)
    err = np.abs(cf.lam[sel] - np.log(2 * r[sel]))
    assert np.max(err) < 1e-3


@pytest.mark.parametrize("d", [2, 3])
def test_branch_points_of_covers(d):
    found = detect_branch_points(branched_cover(d, 6))
    assert sorted(round(b.location[2]) for b in found) == [-1, 1]
    assert all(b.order == d for b in found)


def test_round_sphere_has_no_branch_points(round6):
    assert detect_branch_points(round6) == []


def test_liouville_round_with_analytic_factor(round6):
    res = liouville_residual(round6, log_stretch_fn=lambda p: np.zeros(len(p)),
                             curvature_fn=lambda p: np.ones(len(p)))
    assert res.residual <= 2 * EPS6


def test_liouville_cover_with_deltas(cover2):
    assert liouville_residual(cover2).residual <= 5 * EPS6


def test_liouville_detects_wrong_order(cover2):
    wrong = [BranchPoint(b.location, 3) for b in cover2.branch_points]
    res = liouville_residual(cover2, branches=wrong)
    # every test function centred on a branch point sees 2 pi phi(b) extra
    assert res.residual >= 2 * np.pi - 5 * EPS6


def test_branch_inequality_equality_case(cover2):
    est = branch_estimates(cover2)
    assert est["lhs"] == 2
    assert est["rhs"] == pytest.approx(2.0, rel=0.03)


def test_round_gauss_bonnet(round6):
    est = branch_estimates(round6)
    assert est["lhs"] == 0
    assert abs(est["gauss_bonnet_check"]) <= 2 * EPS6


def test_weak_l2_of_inverse_radius():
    n = 2000
    r = (np.arange(n) + 0.5) / n
    w = 2 * np.pi * r / n
    assert weak_l2_quasinorm(1.0 / r, w) == pytest.approx(np.sqrt(np.pi), rel=0.02)


def test_constant_normal_frame():
    Phi = flat_disc_with_dome(5)
    cf = coulomb_frame(Phi, south_faces(Phi, 1.0))
    assert cf.frame_energy < 1e-20
    assert np.allclose(cf.e1, cf.e1[0], atol=1e-10)


@pytest.mark.parametrize("angle", [0.3, 0.6, 0.9])
def test_cap_frame_ratio(round6, angle):
    cf = coulomb_frame(round6, lambda p: p[:, 2] < -np.cos(angle))
    assert cf.ratio <= C_FRAME
    x = round6.image[cf.vertices]
    family = [cf.energy(t * x[:, 0]) for t in np.linspace(-3, 3, 25)]
    family += [cf.energy(t * np.arctan2(x[:, 1], x[:, 0])) for t in (0.5, 1.0)]
    assert cf.frame_energy <= min(family) + 1e-12


def test_frame_threshold(round6):
    with pytest.raises(ThresholdExceeded):
        coulomb_frame(round6, lambda p: p[:, 2] < 0.5)


def _disc_grid(n=129):
    h = 2.0 / (n - 1)
    x = np.linspace(-1, 1, n)
    X, Y = np.meshgrid(x, x)
    return h, n, X, Y


def test_wente_constant_frames():
    h, n, X, Y = _disc_grid(33)
    a = ChartField(-1 - 1j, h, n, n, np.ones((n, n, 3)))
    res = wente_solve(a, a, ("disc", 0, 1))
    assert np.all(res.mu == 0)


def test_wente_radial_solution():
    h, n, X, Y = _disc_grid()
    a = ChartField(-1 - 1j, h, n, n, X)
    b = ChartField(-1 - 1j, h, n, n, Y)
    res = wente_solve(a, b, ("disc", 0, 1))
    exact = (X**2 + Y**2 - 1) / 4
    assert np.max(np.abs(res.mu - exact)[res.inside]) <= 1e-4


def test_wente_ratio_on_random_fields():
    h, n, X, Y = _disc_grid(65)
    rng = np.random.default_rng(0)

    def field():
        c = rng.normal(size=(4, 4))
        ph = rng.uniform(0, 2 * np.pi, size=(4, 4))
        v = sum(c[i, j] * np.cos((i + 1) * X + j * Y + ph[i, j]) for i in range(4) for j in range(4))
        return ChartField(-1 - 1j, h, n, n, v)

    ratios = [wente_solve(field(), field(), ("disc", 0, 1)).ratio for _ in range(50)]
    assert max(ratios) <= C_WENTE
