import numpy as np
import pytest

from bubbletree.cut_fill import (
    beltrami_coefficient,
    beltrami_normal_solve,
    biharmonic_fill,
    candidate_radii,
    cauchy_transform,
    centered_grid,
    cut_and_fill,
    fill_from_functions,
    fourier_coefficients,
    good_radius,
    make_beltrami,
)
from bubbletree.errors import (
    InputError,
    NotContracting,
    OrientationDegenerate,
    PreconditionEnergy,
    PreconditionViolation,
    SupportOverflow,
)
from bubbletree.geom_core import energies, identity_sphere
from bubbletree.scenarios import ScenarioSpec, branched_cover, member
from bubbletree.sphere_gauge import ChartField

from fill_oracles import bump_integral, weak_bilaplacian
from surfaces import SOUTH, flat_disc_with_dome


def grid_field(fn, half=1.0, n=129, center=0j):
    o, h = centered_grid(half, n)
    o = o + center
    z = o + h * np.arange(n)[None, :] + 1j * h * np.arange(n)[:, None]
    return ChartField(o, h, n, n, fn(z))


def test_candidate_radii():
    r = candidate_radii()
    assert np.all((r > 0.5) & (r < 1.0))
    assert 0.75 in r
    assert np.all(np.diff(r) > 0)


def test_good_radius_tie_break_on_affine_map():
    f = grid_field(lambda z: (2 - 1j) * z + 0.3 * np.conj(z) + 1)
    assert good_radius(f) == 0.75


def test_good_radius_avoids_concentrated_hessian():
    bump = lambda z: np.exp(-((np.abs(z) - 0.9) / 0.03) ** 2)  # noqa: E731
    f = grid_field(lambda z: np.stack([z.real, z.imag, bump(z)], axis=-1), n=257)
    assert 0.5 < good_radius(f) <= 0.8


def _fill(u, du, r_out=1.0, r_in=0.5):
    return fill_from_functions(r_out, u, du, u, du, r_in=r_in)


def _annulus_points(r_out=1.0, r_in=0.5, n=200, seed=0):
    rng = np.random.default_rng(seed)
    r = rng.uniform(r_in, r_out, n)
    return r * np.exp(1j * rng.uniform(0, 2 * np.pi, n))


def test_fill_reproduces_r_squared():
    fill = _fill(lambda z: np.abs(z) ** 2, lambda z: 2 * np.abs(z))
    z = _annulus_points()
    assert np.max(np.abs(fill.evaluate(z)[:, 0] - np.abs(z) ** 2)) <= 1e-10


def test_fill_reproduces_harmonic_cubic():
    u = lambda z: (z**3).real  # noqa: E731
    du = lambda z: 3 * (z**3).real / np.abs(z)  # noqa: E731
    fill = _fill(u, du)
    z = _annulus_points()
    assert np.max(np.abs(fill.evaluate(z)[:, 0] - u(z))) <= 1e-10


def _random_data(n_modes=64, k=3, seed=1):
    rng = np.random.default_rng(seed)
    decay = 1.0 / (1.0 + np.abs(np.arange(-n_modes, n_modes + 1))) ** 2
    out = []
    for _ in range(4):
        c = (rng.normal(size=(2 * n_modes + 1, k)) + 1j * rng.normal(size=(2 * n_modes + 1, k)))
        c *= decay[:, None]
        # real-valued data: c_{-n} = conj(c_n)
        c = 0.5 * (c + np.conj(c[::-1]))
        out.append(c)
    return out


def test_random_data_boundary_match():
    data = _random_data()
    fill = biharmonic_fill(1.0, 0.5, *data)
    theta = 2 * np.pi * np.arange(512) / 512
    e = np.exp(1j * theta)
    got = [fill.evaluate(e), fill.radial_derivative(e),
           fill.evaluate(0.5 * e), fill.radial_derivative(0.5 * e)]
    for g, c in zip(got, data):
        assert np.max(np.abs(fourier_coefficients(g, 64) - c)) <= 1e-8


def test_random_fill_is_biharmonic():
    fill = biharmonic_fill(1.0, 0.5, *_random_data(n_modes=16))
    for center in (0.75, 0.75j, -0.7 + 0.1j):
        val, scale = weak_bilaplacian(fill.evaluate, center, 0.2)
        assert np.max(np.abs(val)) <= 1e-8 * max(1.0, np.max(scale))


def test_weak_probe_sees_nonbiharmonic_data():
    # Delta^2 |z|^4 = 64
    val, _ = weak_bilaplacian(lambda z: (np.abs(z) ** 4)[..., None], 0.75, 0.2)
    assert val[0] == pytest.approx(64 * bump_integral(0.2), rel=1e-8)


def test_fill_rejects_bad_data():
    d = _random_data(n_modes=4)
    with pytest.raises(InputError):
        biharmonic_fill(0.5, 1.0, *d)
    with pytest.raises(InputError):
        biharmonic_fill(1.0, 0.5, d[0][:-1], d[1], d[2], d[3])


def test_conformal_map_has_zero_dilatation():
    f = grid_field(lambda z: z**2, half=0.5, n=65, center=1.0 + 1.0j)
    sigma = beltrami_coefficient(f)
    assert sigma.sup_norm <= 1e-8


def test_affine_dilatation():
    c = 0.3 * np.exp(0.7j)
    f = grid_field(lambda z: z + c * np.conj(z), n=65)
    sigma = beltrami_coefficient(f, margin=0)
    assert np.max(np.abs(sigma.values - c)) <= 1e-8


def test_real_vector_field_matches_complex_form():
    c = 0.25 - 0.1j
    g = lambda z: z + c * np.conj(z) + 0.1 * z**2  # noqa: E731
    fc = beltrami_coefficient(grid_field(g, n=65))
    fr = beltrami_coefficient(grid_field(lambda z: np.stack([g(z).real, g(z).imag], -1), n=65))
    assert np.max(np.abs(fc.values - fr.values)) <= 1e-8


def test_anticonformal_map_is_rejected():
    with pytest.raises(OrientationDegenerate):
        beltrami_coefficient(grid_field(np.conj, n=33))


def test_zero_sigma_gives_identity():
    o, h = centered_grid(2.0, 65)
    psi = beltrami_normal_solve(make_beltrami(ChartField(o, h, 65, 65, np.zeros((65, 65), complex))))
    assert np.array_equal(psi.field.values, psi.field.coords())
    z = np.array([0.3 + 0.1j, 5.0 - 2j])
    assert np.array_equal(psi(z), z)


def test_cauchy_transform_of_disc_indicator():
    # C 1_{|z|<R}(z) = zbar inside the disc (normalized with a minus sign
    # convention: d_zbar C h = h)
    o, h = centered_grid(2.0, 257)
    z = o + h * np.arange(257)[None, :] + 1j * h * np.arange(257)[:, None]
    ind = (np.abs(z) < 1.0).astype(complex)
    C = cauchy_transform(ind, h)
    inner = np.abs(z) < 0.5
    dC = C[inner] - C[128, 128]
    assert np.max(np.abs(dC - (np.conj(z[inner]) - np.conj(z[128, 128])))) < 5e-3


def test_solver_guards():
    o, h = centered_grid(1.0, 33)
    big = make_beltrami(ChartField(o, h, 33, 33, np.full((33, 33), 0.6 + 0j)))
    with pytest.raises(NotContracting):
        beltrami_normal_solve(big)
    wide = make_beltrami(ChartField(o, h, 33, 33, np.full((33, 33), 0.1 + 0j)))
    with pytest.raises(SupportOverflow):
        beltrami_normal_solve(wide)
    with pytest.raises(InputError):
        centered_grid(1.0, 32)


def test_flat_cap_fixed_point():
    Phi = flat_disc_with_dome(5)
    res = cut_and_fill(Phi, SOUTH, 1.0, 0.3, eta=None)
    assert np.max(np.abs(res.xi.image - Phi.image)) <= 1e-8
    assert res.sigma_sup <= 1e-8
    assert res.good_radius == 0.75


# domain radius around the south pole at which the upper image ring of the
# neck2 member has radius 2t = 0.1
NECK_S = 0.0991


@pytest.fixture(scope="module")
def neck_cut():
    Phi = member(ScenarioSpec("neck2"), 0.05)
    return Phi, cut_and_fill(Phi, SOUTH, NECK_S, NECK_S / 16, eta=None)


def test_neck_cut_ring_radius(neck_cut):
    Phi, _ = neck_cut
    d = np.arccos(np.clip(Phi.domain @ SOUTH, -1, 1))
    ring = np.abs(d - NECK_S) < 0.01
    rho = np.linalg.norm(Phi.image[ring, :2], axis=1)
    assert np.max(rho) == pytest.approx(0.1, abs=0.01)


def test_neck_cut_small_filled_region(neck_cut):
    _, res = neck_cut
    assert res.filled_diameter <= 0.2


def test_neck_cut_leaves_exterior_energies(neck_cut):
    Phi, res = neck_cut
    ext = res.exterior_faces()
    a, b = energies(Phi, ext), energies(res.xi, ext)
    assert (a.A, a.W, a.F) == (b.A, b.W, b.F)


def test_neck_cut_energy_guard():
    Phi = member(ScenarioSpec("neck2"), 0.05)
    with pytest.raises(PreconditionEnergy):
        cut_and_fill(Phi, SOUTH, NECK_S, NECK_S / 16)


def test_branch_point_in_cut_annulus():
    Phi = branched_cover(2, 4)
    a = np.array([np.sin(0.6), 0.0, -np.cos(0.6)])
    with pytest.raises(PreconditionViolation):
        cut_and_fill(Phi, a, 1.0, 0.1, eta=None)


def test_cut_rejects_bad_radii():
    with pytest.raises(InputError):
        cut_and_fill(identity_sphere(3), SOUTH, 0.1, 0.2)
