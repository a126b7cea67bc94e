"""Forward simulation: Robin/CEM solves, interior data, scaling, noise,
and the non-uniqueness transform."""

import numpy as np
import pytest

from cdrecon.boundary import (
    ElectrodeSet,
    base_coefficients,
    electrode_integral,
    electrode_length,
    smoothed_coefficients,
)
from cdrecon.errors import DataError
from cdrecon.fields import ScalarField, boundary_trace, make_grid, rel_l2_error
from cdrecon.forward import (
    add_noise,
    cem_scaling,
    interior_data,
    nonuniqueness_transform,
    solve_cem_forward,
    solve_forward,
)


@pytest.fixture(scope="module")
def homog33():
    g = make_grid(33)
    el = ElectrodeSet()
    sigma = ScalarField.constant(g, 1.0)
    result = solve_forward(sigma, base_coefficients(el, g), g)
    return g, el, sigma, result


def test_forward_homogeneous_sharp(homog33):
    g, el, sigma, r = homog33
    exact = ScalarField.from_function(g, lambda x, y: (2 / 3) * y - 1 / 3)
    assert np.abs(r.u.values - exact.values).max() < 1e-11
    assert np.abs(r.a.values - 2 / 3).max() < 1e-11


def test_forward_smoothed_data_approaches_sharp(homog33):
    # the smoothed data converges to the sharp data as the whole smoothing
    # (floor AND transition width) is removed; at a fixed width the bands
    # keep the coefficients apart no matter how small the floor gets
    g, el, sigma, r0 = homog33
    h = g.h
    dists = []
    for eps, w in ((1e-2, 12 * h), (1e-3, 6 * h), (5e-4, 3 * h)):
        r = solve_forward(sigma, smoothed_coefficients(el, g, eps, w), g)
        dists.append(rel_l2_error(r.a, r0.a))
    assert dists[0] > dists[1] > dists[2]


def test_forward_no_naive_scaling(homog33):
    g, el, sigma, r1 = homog33
    coeffs = base_coefficients(el, g)
    r2 = solve_forward(ScalarField.constant(g, 2.0), coeffs, g)
    # the Robin b-term breaks pure 1/sigma scaling of the potential
    assert rel_l2_error(r2.u, ScalarField(g, 0.5 * r1.u.values)) > 1e-2
    # but the data responds continuously to a small conductivity change
    r3 = solve_forward(ScalarField.constant(g, 1.01), coeffs, g)
    assert rel_l2_error(r3.a, r1.a) < 0.05


def test_cem_forward_homogeneous():
    g = make_grid(33)
    el = ElectrodeSet()
    r = solve_cem_forward(ScalarField.constant(g, 1.0), el, g)
    assert r.cem_voltage == pytest.approx(1.5, abs=1e-9)
    assert np.abs(r.a.values - 1.0).max() < 1e-9
    exact = ScalarField.from_function(g, lambda x, y: y - 0.5)
    assert np.abs(r.u.values - exact.values).max() < 1e-10


def test_cem_current_linearity():
    g = make_grid(17)
    s = ScalarField.constant(g, 1.0)
    r1 = solve_cem_forward(s, ElectrodeSet(current=1.0), g)
    r2 = solve_cem_forward(s, ElectrodeSet(current=2.0), g)
    assert np.abs(r2.u.values - 2 * r1.u.values).max() < 1e-9
    assert r2.cem_voltage == pytest.approx(2 * r1.cem_voltage, abs=1e-9)


def test_interior_data_cases():
    g = make_grid(21)
    const = ScalarField.constant(g, 4.0)
    assert np.all(interior_data(const, ScalarField.constant(g, 1.0)).values == 0.0)

    u = ScalarField.from_function(g, lambda x, y: y)
    assert np.allclose(interior_data(ScalarField.constant(g, 2.0), u).values, 2.0, atol=1e-13)

    sigma = ScalarField.from_function(g, lambda x, y: 1 + x)
    a = interior_data(sigma, u).values2d
    x, _ = g.node_coords()
    assert np.allclose(a[1:-1, 1:-1], (1 + x)[1:-1, 1:-1], atol=1e-12)


def test_cem_scaling_value_and_consistency(homog33):
    g, el, sigma, r = homog33
    lam = cem_scaling(r, el, g)
    assert lam == pytest.approx(1.5, abs=1e-10)
    rc = solve_cem_forward(sigma, el, g)
    # lambda * u0 = v and V = lambda * z * I, both to solver tolerance
    assert rel_l2_error(ScalarField(g, lam * r.u.values), rc.u) < 1e-9
    assert rc.cem_voltage == pytest.approx(lam * el.z * el.current, abs=1e-9)


def _scaling_inverses(g, el, sigma):
    r = solve_forward(sigma, base_coefficients(el, g), g, tol=1e-12)
    tr = boundary_trace(r.u)
    length = electrode_length(el, g)
    inv_plus = length - electrode_integral(el, g, tr, "top") / (el.z * el.current)
    inv_minus = length + electrode_integral(el, g, tr, "bottom") / (el.z * el.current)
    return r, inv_plus, inv_minus


def test_cem_scaling_both_formulas_agree_full_aperture():
    # at full aperture the arc quadrature coincides with the assembly's face
    # quadrature, so the two expressions agree to solver tolerance for any
    # conductivity
    g = make_grid(33)
    el = ElectrodeSet(z=1.4, current=0.7)
    bumps = ScalarField.from_function(
        g, lambda x, y: 1 + 0.4 * np.exp(-((x - 0.4) ** 2 + (y - 0.6) ** 2) / 0.02)
    )
    r, inv_plus, inv_minus = _scaling_inverses(g, el, bumps)
    assert inv_plus == pytest.approx(inv_minus, abs=1e-9)
    assert cem_scaling(r, el, g) == pytest.approx(2.0 / (inv_plus + inv_minus), rel=1e-12)


def test_cem_scaling_formulas_agree_partial_aperture():
    # a reduced sharp aperture leaves an O(h) end-face mismatch between the
    # arc quadrature and the coefficient footprint (measured ~2e-5 at n=33)
    g = make_grid(33)
    el = ElectrodeSet(z=1.4, current=0.7, aperture=0.6)
    bumps = ScalarField.from_function(
        g, lambda x, y: 1 + 0.4 * np.exp(-((x - 0.4) ** 2 + (y - 0.6) ** 2) / 0.02)
    )
    r, inv_plus, inv_minus = _scaling_inverses(g, el, bumps)
    assert inv_plus == pytest.approx(inv_minus, abs=1e-4)


def test_add_noise_contract():
    g = make_grid(17)
    rng = np.random.default_rng(0)
    a = ScalarField(g, rng.uniform(0.5, 2.0, g.num_nodes))
    same = add_noise(a, 0.0, 123)
    assert np.array_equal(same.values, a.values)
    noisy = add_noise(a, 1e-5, 123)
    assert np.abs(noisy.values - a.values).max() <= 1e-5 * np.abs(a.values).max()
    again = add_noise(a, 1e-5, 123)
    assert np.array_equal(noisy.values, again.values)
    other = add_noise(a, 1e-5, 124)
    assert not np.array_equal(noisy.values, other.values)
    with pytest.raises(DataError):
        add_noise(a, -1e-3, 0)


def test_add_noise_clamps_at_zero():
    g = make_grid(5)
    a = ScalarField.constant(g, 1e-12)
    noisy = add_noise(a, 1.0, 3)
    assert np.all(noisy.values >= 0.0)


def test_nonuniqueness_identity_at_zero(homog33):
    g, el, sigma, r = homog33
    s_phi, u_phi = nonuniqueness_transform(r.u, sigma, 0.0)
    assert np.array_equal(s_phi.values, sigma.values)
    assert np.array_equal(u_phi.values, r.u.values)


def test_nonuniqueness_data_invariance(homog33):
    g, el, sigma, r = homog33
    a0 = interior_data(sigma, r.u)
    for s in (0.05, 0.1, 0.2):
        s_phi, u_phi = nonuniqueness_transform(r.u, sigma, s)
        a_phi = interior_data(s_phi, u_phi)
        assert rel_l2_error(a_phi, a0) <= 5 * g.h
        assert rel_l2_error(s_phi, sigma) >= 1e-2


def test_nonuniqueness_rejects_non_increasing(homog33):
    g, el, sigma, r = homog33
    with pytest.raises(DataError, match="not increasing"):
        nonuniqueness_transform(r.u, sigma, 1.5)
    with pytest.raises(DataError):
        nonuniqueness_transform(ScalarField.constant(g, 1.0), sigma, 0.1)
