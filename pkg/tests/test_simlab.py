import json
import math

import numpy as np
import pytest

from fqr.basis import build_basis
from fqr.design import assemble_design, load_csv
from fqr.simlab import (BETAS, SimScenario, beta_middle, generate, l2_error, make_toy,
                        read_reports_csv, run_study, tdr_fdr, true_null, wiener_paths,
                        write_replicates_jsonl, write_reports_csv)


@pytest.mark.parametrize("law", ["normal", "cauchy"])
@pytest.mark.parametrize("tau", [0.1, 0.5, 0.9])
def test_errors_have_tau_quantile_zero(law, tau, rng):
    e = SimScenario(tau=tau, error_law=law).draw_errors(rng, 10**6)
    assert abs(np.mean(e <= 0) - tau) < 0.003


def test_error_density_at_zero():
    sc = SimScenario(tau=0.5, normal_sd=0.02)
    assert sc.error_density_at_quantile() == pytest.approx(1 / (0.02 * math.sqrt(2 * math.pi)))
    sc = SimScenario(tau=0.5, error_law="cauchy", cauchy_scale=0.01)
    assert sc.error_density_at_quantile() == pytest.approx(1 / (math.pi * 0.01))


def test_wiener_variance(rng):
    grid = np.linspace(-1, 1, 41)
    W = wiener_paths(rng, 20_000, grid)
    assert np.all(W[:, 0] == 0.0)
    v = W.var(axis=0)
    np.testing.assert_allclose(v[1:], grid[1:] - grid[0], rtol=0.05)


def test_zero_coefficient_leaves_response_unrelated():
    sc = SimScenario(n=2000, betas=("zero",), seed=3)
    data = generate(sc)
    U = assemble_design(data, build_basis(sc.domain, 10, 3)).U
    e = data.Y - data.Z @ np.asarray(sc.alpha)
    r = np.array([np.corrcoef(e, U[:, k])[0, 1] for k in range(U.shape[1])])
    assert np.max(np.abs(r)) < 3 / math.sqrt(sc.n)


def test_generate_shapes_and_reproducibility():
    sc = SimScenario.named("two-cov", n=50, seed=4)
    a, b = generate(sc), generate(sc)
    assert a.X.shape == (50, 2, 101) and a.Z.shape == (50, 3)
    np.testing.assert_array_equal(a.Y, b.Y)
    np.testing.assert_array_equal(a.Z[:, 0], 1.0)


def test_unknown_scenario():
    with pytest.raises(KeyError):
        SimScenario.named("laplace")


def test_true_null_middle():
    grid = np.linspace(-1, 1, 201)
    null = true_null(beta_middle, grid)
    np.testing.assert_array_equal(null, np.abs(grid) >= 0.5 - 1e-12)
    assert not null[100]  # isolated zero crossing at t = 0


def test_tdr_fdr_trivial_cases():
    grid = np.linspace(-1, 1, 201)
    truth = true_null(beta_middle, grid)
    assert tdr_fdr(truth, beta_middle, grid) == (1.0, 0.0)
    assert tdr_fdr(np.ones(201, bool), beta_middle, grid) == (1.0, 1.0)
    assert tdr_fdr(np.zeros(201, bool), beta_middle, grid) == (0.0, 0.0)
    tdr, fdr = tdr_fdr(np.ones(201, bool), BETAS["zero"], grid)
    assert tdr == 1.0 and math.isnan(fdr)
    with pytest.raises(ValueError):
        tdr_fdr(np.ones(5, bool), beta_middle, grid)


def test_l2_error():
    assert l2_error(BETAS["zero"], beta_middle, (-1, 1)) == pytest.approx(math.sqrt(0.5), rel=1e-5)
    assert l2_error(beta_middle, beta_middle, (-1, 1)) == 0.0


def test_run_study_deterministic():
    sc = SimScenario(n=200, seed=8)
    kw = dict(replicates=2, K=10, fixed=(0.03, 1e-5))
    a = run_study(sc, **kw)["close"]
    b = run_study(sc, threads=2, **kw)["close"]
    assert a.row() == b.row()
    assert a.replicates == 2 and len(a.per_replicate) == 2


def test_run_study_both_methods_share_data(tmp_path):
    sc = SimScenario(n=200, seed=8)
    res = run_study(sc, method="both", replicates=1, K=10, fixed=(0.03, 1e-5))
    assert set(res) == {"sql", "close"}
    assert res["sql"].tdr[0] == 0.0  # no sparsity penalty, nothing flagged
    write_reports_csv(res.values(), tmp_path / "m.csv")
    rows = read_reports_csv(tmp_path / "m.csv")
    assert [r["method"] for r in rows] == ["sql", "close"]
    assert rows[1]["l2"] == res["close"].l2_error[0]
    write_reports_csv(res.values(), tmp_path / "p.csv", extra={"n": 200}, paired=True)
    (row,) = read_reports_csv(tmp_path / "p.csv")
    assert row["n"] == 200 and "tdr_sql" in row and "tdr_close" in row
    write_replicates_jsonl(res.values(), tmp_path / "r.jsonl")
    lines = [json.loads(s) for s in (tmp_path / "r.jsonl").read_text().splitlines()]
    assert [ln["method"] for ln in lines] == ["sql", "close"]


def test_run_study_rejects_bad_arguments():
    with pytest.raises(ValueError):
        run_study(SimScenario(n=50), replicates=0)
    with pytest.raises(ValueError):
        run_study(SimScenario(n=50), method="lasso")


def test_bundled_toy_matches_generator():
    from fqr.cli import toy_paths

    csv_path, schema_path = toy_paths()
    data = load_csv(csv_path, schema_path)
    toy = make_toy()
    np.testing.assert_allclose(data.Y, toy.Y, atol=1e-12)
    np.testing.assert_allclose(data.X, toy.X, atol=1e-12)
    assert data.n == 400 and data.grid[0] == 0.0 and data.grid[-1] == 1.0
