import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpcmr.basis import (
    BasisSet,
    effect_curve,
    make_basis,
    poly_coefficients_in_t,
    score_transform_matrix,
    transform_scores,
)
from mpcmr.errors import DataError
from mpcmr.fpca import TimeGrid

from oracles import matmul_by_loop, riemann_inner_funcs, riemann_inner_nodes


def test_poly_basis_rows_are_monomials_in_rescaled_time():
    grid = TimeGrid.make(10.0, 30.0, 21)
    basis = make_basis("poly", 3, grid)
    u = (grid.points - 10.0) / 20.0
    assert np.allclose(basis.matrix[0], 1.0)
    assert np.allclose(basis.matrix[1], u)
    assert np.allclose(basis.matrix[2], u ** 2)
    assert basis.L == 3
    # evaluation off the grid follows the same monomials
    t = np.array([11.5, 17.25, 29.0])
    assert np.allclose(basis.evaluate(t)[2], ((t - 10.0) / 20.0) ** 2, atol=1e-12)


def test_make_basis_validation(model_c):
    grid = model_c.grid
    with pytest.raises(DataError):
        make_basis("poly", 0, grid)
    with pytest.raises(DataError):
        make_basis("spline", 2, grid)
    with pytest.raises(DataError):
        make_basis("eigen", 2, grid)
    with pytest.raises(DataError, match="exceeds"):
        make_basis("eigen", 3, grid, model_c)


def test_eigen_basis_transform_is_identity(model_c):
    basis = make_basis("eigen", 2, model_c.grid, model_c)
    B = score_transform_matrix(basis, model_c)
    assert np.max(np.abs(B - np.eye(2))) < 1e-6


def test_eigen_basis_single_component_selects_first_score(model_c):
    basis = make_basis("eigen", 1, model_c.grid, model_c)
    B = score_transform_matrix(basis, model_c)
    assert B.shape == (2, 1)
    assert B[0, 0] == pytest.approx(1.0, abs=1e-6)
    assert B[1, 0] == pytest.approx(0.0, abs=1e-6)
    out = transform_scores(model_c.scores, basis, model_c)
    scale = np.abs(model_c.scores[:, 0]).max()
    assert np.allclose(out[:, 0], model_c.scores[:, 0], atol=1e-6 * scale)


def test_constant_basis_entries_are_eigenfunction_integrals(model_c):
    basis = make_basis("poly", 1, model_c.grid)
    B = score_transform_matrix(basis, model_c)
    for k in range(2):
        direct = np.trapezoid(model_c.phi[k], model_c.grid.points)
        assert B[k, 0] == pytest.approx(direct, abs=1e-12)


def test_transform_matrix_against_riemann_oracle(model_c):
    basis = make_basis("poly", 2, model_c.grid)
    B = score_transform_matrix(basis, model_c)
    for k in range(2):
        for l in range(2):
            target = riemann_inner_nodes(model_c.phi[k], basis.matrix[l],
                                         model_c.grid.points)
            assert B[k, l] == pytest.approx(target, abs=1e-6)


def test_transform_matrix_analytic_functions():
    """Closed-form inner products of known functions, to a fine Riemann sum."""
    from rigs import analytic_linear_model

    fine = analytic_linear_model(n_points=4001)
    T = fine.grid.t_max
    basis = make_basis("poly", 2, fine.grid)
    B = score_transform_matrix(basis, fine)
    funcs = [lambda t: np.full_like(t, 1.0 / np.sqrt(T)),
             lambda t: (t - T / 2.0) * np.sqrt(12.0 / T ** 3)]
    bases = [lambda t: np.ones_like(t), lambda t: t / T]
    for k in range(2):
        for l in range(2):
            target = riemann_inner_funcs(funcs[k], bases[l], 0.0, T)
            assert abs(B[k, l] - target) < 1e-6


def test_transform_matrix_closed_form_values(linear_model):
    basis = make_basis("poly", 2, linear_model.grid)
    B = score_transform_matrix(basis, linear_model)
    T = linear_model.grid.t_max
    assert B[0, 0] == pytest.approx(np.sqrt(T), abs=1e-10)
    assert B[0, 1] == pytest.approx(np.sqrt(T) / 2.0, abs=1e-10)
    assert B[1, 0] == pytest.approx(0.0, abs=1e-10)
    assert B[1, 1] == pytest.approx(np.sqrt(T / 12.0), abs=1e-5)


def test_transform_scores_matches_loop_matmul(model_c):
    rng = np.random.default_rng(0)
    scores = rng.normal(size=(5, 2))
    basis = make_basis("poly", 2, model_c.grid)
    B = score_transform_matrix(basis, model_c)
    assert np.allclose(transform_scores(scores, basis, model_c),
                       matmul_by_loop(scores, B), atol=1e-12)


def test_transform_scores_shape_check(model_c):
    basis = make_basis("poly", 2, model_c.grid)
    with pytest.raises(DataError):
        transform_scores(np.zeros((4, 3)), basis, model_c)


def test_transform_matrix_full_rank(model_a, model_b, model_c):
    for model in (model_a, model_b, model_c):
        basis = make_basis("poly", 2, model.grid)
        sv = np.linalg.svd(score_transform_matrix(basis, model),
                           compute_uv=False)
        assert sv[-1] > 1e-8 * sv[0]


def test_effect_curve_zero_and_unit(model_c):
    basis = make_basis("eigen", 2, model_c.grid, model_c)
    assert np.allclose(effect_curve(np.zeros(2), basis), 0.0)
    assert np.allclose(effect_curve(np.array([1.0, 0.0]), basis),
                       model_c.phi[0], atol=1e-12)


def test_effect_curve_shape_check(model_c):
    basis = make_basis("poly", 2, model_c.grid)
    with pytest.raises(DataError):
        effect_curve(np.zeros(3), basis)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50.0, 50.0), min_size=2, max_size=2),
       st.lists(st.floats(-50.0, 50.0), min_size=2, max_size=2),
       st.floats(-5.0, 5.0), st.floats(-5.0, 5.0))
def test_effect_curve_linearity(g1, g2, a, b):
    grid = TimeGrid.make(0.0, 50.0, 11)
    basis = make_basis("poly", 2, grid)
    g1, g2 = np.asarray(g1), np.asarray(g2)
    lhs = effect_curve(a * g1 + b * g2, basis)
    rhs = a * effect_curve(g1, basis) + b * effect_curve(g2, basis)
    assert np.allclose(lhs, rhs, atol=1e-9 * (1.0 + np.abs(rhs).max()))


def test_effect_curve_round_trip_through_inner_products(model_c):
    rng = np.random.default_rng(1)
    gamma = rng.normal(size=2)
    basis = make_basis("eigen", 2, model_c.grid, model_c)
    curve = effect_curve(gamma, basis)
    w = model_c.grid.trapz_weights
    recovered = (model_c.phi * w) @ curve
    assert np.allclose(recovered, gamma, atol=1e-8)


def test_poly_coefficients_reproduce_curve(model_c):
    rng = np.random.default_rng(2)
    gamma = rng.normal(size=3)
    basis = make_basis("poly", 3, model_c.grid)
    coeffs = poly_coefficients_in_t(gamma, basis)
    t = model_c.grid.points
    direct = sum(c * t ** p for p, c in enumerate(coeffs))
    assert np.allclose(direct, effect_curve(gamma, basis), atol=1e-8)


def test_grid_mismatch_rejected(model_c):
    other = TimeGrid.make(0.0, 50.0, 41)
    basis = make_basis("poly", 2, other)
    with pytest.raises(DataError, match="grids differ"):
        score_transform_matrix(basis, model_c)


def test_eigen_basis_evaluate_interpolates(model_c):
    basis = make_basis("eigen", 2, model_c.grid, model_c)
    mid = 0.5 * (model_c.grid.points[3] + model_c.grid.points[4])
    vals = basis.evaluate(np.array([mid]))
    expected = 0.5 * (model_c.phi[:, 3] + model_c.phi[:, 4])
    assert np.allclose(vals[:, 0], expected, atol=1e-12)


def test_basis_set_row_shape_guard():
    grid = TimeGrid.make(0.0, 1.0, 11)
    with pytest.raises(DataError):
        BasisSet("poly", grid, np.ones((2, 10)))
