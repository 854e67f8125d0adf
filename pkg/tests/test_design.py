import numpy as np
import pytest

from fqr.basis import build_basis, eval_basis
from fqr.design import (CoarseGridWarning, DataError, FunctionalDataset, assemble_design,
                        load_csv, project_curves, project_curves_by_subinterval, save_csv,
                        trapezoid_weights)


def _dataset(X, grid, n=None):
    n = X.shape[0] if n is None else n
    return FunctionalDataset(grid, X, np.ones((n, 1)), np.zeros(n))


def _fine_integral(f, basis, n=100_001):
    t = np.linspace(basis.domain_start, basis.domain_end, n)
    return trapezoid_weights(t) @ (f(t)[:, None] * eval_basis(basis, t))


def test_constant_curve_gives_basis_integrals():
    basis = build_basis((0.0, 2.0), 5, 3)
    grid = np.linspace(0, 2, 4001)
    U = project_curves(np.ones((2, 1, grid.size)), grid, basis)
    np.testing.assert_allclose(U[0], _fine_integral(np.ones_like, basis), atol=1e-6)
    assert U[0].sum() == pytest.approx(2.0, abs=1e-12)


def test_zero_curve_gives_zero_block():
    basis = build_basis((0.0, 1.0), 4, 3)
    grid = np.linspace(0, 1, 50)
    assert np.all(project_curves(np.zeros((3, 1, 50)), grid, basis) == 0.0)


def test_linear_curve_matches_refined_quadrature():
    basis = build_basis((0.0, 1.0), 4, 3)
    grid = np.linspace(0, 1, 2001)
    U = project_curves(grid[None, None, :], grid, basis)
    np.testing.assert_allclose(U[0], _fine_integral(lambda t: t, basis), atol=1e-6)


def test_refinement_is_second_order():
    basis = build_basis((0.0, 1.0), 6, 3)
    exact = _fine_integral(np.sin, basis, 400_001)
    errs = []
    for G in (101, 201, 401):
        grid = np.linspace(0, 1, G)
        errs.append(np.abs(project_curves(np.sin(grid)[None, None, :], grid, basis)[0] - exact).max())
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.2)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.2)


def test_linearity(rng):
    basis = build_basis((-1.0, 1.0), 8, 3)
    grid = np.linspace(-1, 1, 61)
    X1, X2 = rng.standard_normal((2, 5, 2, 61))
    a, b = 1.7, -0.4
    lhs = project_curves(a * X1 + b * X2, grid, basis)
    rhs = a * project_curves(X1, grid, basis) + b * project_curves(X2, grid, basis)
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_column_grouping_by_covariate(rng):
    basis = build_basis((0.0, 1.0), 4, 2)
    grid = np.linspace(0, 1, 40)
    X = rng.standard_normal((3, 2, 40))
    U = project_curves(X, grid, basis)
    nb = basis.n_basis
    np.testing.assert_allclose(U[:, nb:], project_curves(X[:, 1], grid, basis), atol=1e-15)


def test_subinterval_pieces_sum_to_whole():
    basis = build_basis((0.0, 1.0), 5, 3)
    grid = np.linspace(0, 1, 1001)
    X = np.cos(3 * grid)[None, None, :]
    parts = project_curves_by_subinterval(X, grid, basis)
    np.testing.assert_allclose(parts.sum(2)[:, 0], project_curves(X, grid, basis), atol=1e-7)
    # a basis function only meets the subintervals of its support
    for k in range(basis.n_basis):
        lo, hi = basis.support(k)
        outside = np.ones(basis.num_subintervals, bool)
        outside[lo:hi + 1] = False
        assert np.all(parts[0, 0, outside, k] == 0.0)


def test_restricted_design_keeps_selected_pieces():
    basis = build_basis((0.0, 1.0), 4, 3)
    grid = np.linspace(0, 1, 201)
    data = _dataset(np.tile(grid, (2, 1))[:, None, :], grid)
    des = assemble_design(data, basis)
    keep = np.array([[True, False, False, True]])
    np.testing.assert_allclose(des.restricted_U(keep),
                               des.U_sub[:, 0, 0] + des.U_sub[:, 0, 3], atol=1e-15)
    np.testing.assert_allclose(des.restricted_U(np.ones((1, 4), bool)), des.U, atol=1e-5)


def test_coarse_grid_warns():
    basis = build_basis((0.0, 1.0), 10, 3)
    grid = np.linspace(0, 1, 20)
    with pytest.warns(CoarseGridWarning):
        project_curves(np.zeros((1, 1, 20)), grid, basis)


def test_domain_mismatch_rejected():
    basis = build_basis((0.0, 1.0), 4, 3)
    grid = np.linspace(0, 0.9, 40)
    with pytest.raises(DataError, match="basis domain"):
        project_curves(np.zeros((1, 1, 40)), grid, basis)


def test_dataset_validation():
    grid = np.linspace(0, 1, 5)
    with pytest.raises(DataError, match="intercept"):
        FunctionalDataset(grid, np.zeros((2, 1, 5)), np.zeros((2, 1)), np.zeros(2))
    X = np.zeros((2, 1, 5))
    X[1, 0, 3] = np.inf
    with pytest.raises(DataError, match=r"X at index \(1, 0, 3\)"):
        FunctionalDataset(grid, X, np.ones((2, 1)), np.zeros(2))
    with pytest.raises(DataError, match="sample counts"):
        FunctionalDataset(grid, np.zeros((2, 1, 5)), np.ones((3, 1)), np.zeros(2))


def _write_toy_csv(path, rows):
    header = "y,z1,z2,X_0.0,X_0.25,X_0.5,X_0.75,X_1.0\n"
    path.write_text(header + "\n".join(rows) + "\n")


def test_load_small_csv(tmp_path):
    csv = tmp_path / "toy.csv"
    _write_toy_csv(csv, ["1.0,0.1,2,0,1,2,3,4", "2.0,0.2,3,1,1,1,1,1", "3.0,0.3,4,0,0,0,0,0"])
    data = load_csv(csv, {"response": "y", "scalars": ["z1", "z2"],
                          "functional": [{"name": "X", "prefix": "X_"}]})
    assert data.n == 3 and data.d == 3 and data.m == 1
    np.testing.assert_array_equal(data.Z[:, 0], 1.0)
    np.testing.assert_allclose(data.Z[:, 1:], [[0.1, 2], [0.2, 3], [0.3, 4]])
    np.testing.assert_allclose(data.grid, [0, 0.25, 0.5, 0.75, 1.0])


def test_load_csv_names_bad_cell(tmp_path):
    csv = tmp_path / "bad.csv"
    _write_toy_csv(csv, ["1.0,0.1,2,0,1,2,3,4", "2.0,0.2,3,1,NaN,1,1,1"])
    schema = {"response": "y", "scalars": ["z1", "z2"], "functional": [{"name": "X", "prefix": "X_"}]}
    with pytest.raises(DataError, match=r"row 3, column 'X_0.25'"):
        load_csv(csv, schema)


def test_load_csv_missing_column(tmp_path):
    csv = tmp_path / "bad.csv"
    _write_toy_csv(csv, ["1.0,0.1,2,0,1,2,3,4"])
    with pytest.raises(DataError, match="missing column 'w'"):
        load_csv(csv, {"response": "w", "functional": [{"name": "X", "prefix": "X_"}]})


def test_save_load_round_trip(tmp_path, rng):
    grid = np.linspace(-1, 1, 7)
    data = FunctionalDataset(grid, rng.standard_normal((4, 2, 7)),
                             np.column_stack([np.ones(4), rng.standard_normal(4)]),
                             rng.standard_normal(4))
    save_csv(data, tmp_path / "d.csv")
    back = load_csv(tmp_path / "d.csv", tmp_path / "d.json")
    for name in ("grid", "X", "Z", "Y"):
        np.testing.assert_array_equal(getattr(back, name), getattr(data, name))


def test_subset_keeps_rows(small_problem):
    _, data, basis, _, des = small_problem
    idx = np.array([3, 1, 7])
    sub = des.subset(idx)
    np.testing.assert_array_equal(sub.U, des.U[idx])
    np.testing.assert_array_equal(sub.Y, data.Y[idx])
    np.testing.assert_array_equal(sub.U_sub, des.U_sub[idx])
