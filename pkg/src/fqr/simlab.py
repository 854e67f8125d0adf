"""Simulation designs with locally sparse coefficients, and evaluation metrics."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .design import FunctionalDataset, trapezoid_weights


def beta_middle(t):
    """``sin(2 pi t)`` on ``[-0.5, 0.5]``, zero elsewhere."""
    t = np.asarray(t, dtype=float)
    return np.where((t >= -0.5) & (t <= 0.5), np.sin(2 * np.pi * t), 0.0)


def beta_left(t):
    """``sin(2 pi t)`` for ``t <= 0``, zero elsewhere."""
    t = np.asarray(t, dtype=float)
    return np.where(t <= 0.0, np.sin(2 * np.pi * t), 0.0)


def beta_zero(t):
    return np.zeros_like(np.asarray(t, dtype=float))


def beta_toy(t):
    """Zero on ``[0, 0.5]`` and ``sin(2 pi (t - 0.5))`` on ``(0.5, 1]``."""
    t = np.asarray(t, dtype=float)
    return np.where(t > 0.5, np.sin(2 * np.pi * (t - 0.5)), 0.0)


BETAS = {"middle": beta_middle, "left": beta_left, "zero": beta_zero, "toy": beta_toy}
SCENARIOS = {
    "normal": {"error_law": "normal", "betas": ("middle",)},
    "cauchy": {"error_law": "cauchy", "betas": ("middle",)},
    "two-cov": {"error_law": "normal", "betas": ("left", "middle")},
}


@dataclass(frozen=True)
class SimScenario:
    n: int = 500
    tau: float = 0.5
    error_law: str = "normal"
    betas: tuple = ("middle",)
    grid_size: int = 101
    domain: tuple = (-1.0, 1.0)
    alpha: tuple = (0.0, 1.0, 1.0)
    sigma_z: float = 0.1
    normal_sd: float = 0.02
    cauchy_scale: float = 0.01
    refine: int = 10
    seed: int = 0

    @classmethod
    def named(cls, name: str, **kw) -> "SimScenario":
        if name not in SCENARIOS:
            raise KeyError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
        return cls(**{**SCENARIOS[name], **kw})

    @property
    def m(self) -> int:
        return len(self.betas)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.domain[0], self.domain[1], self.grid_size)

    def beta_funcs(self):
        return [BETAS[b] if isinstance(b, str) else b for b in self.betas]

    def error_quantile(self) -> float:
        if self.error_law == "normal":
            return float(stats.norm.ppf(self.tau, scale=self.normal_sd))
        if self.error_law == "cauchy":
            return self.cauchy_scale * math.tan(math.pi * (self.tau - 0.5))
        raise ValueError(f"unknown error law {self.error_law!r}")

    def error_density_at_quantile(self) -> float:
        """Density of ``e - F^{-1}(tau)`` at zero."""
        q = self.error_quantile()
        if self.error_law == "normal":
            return float(stats.norm.pdf(q, scale=self.normal_sd))
        return float(stats.cauchy.pdf(q, scale=self.cauchy_scale))

    def draw_errors(self, rng, size) -> np.ndarray:
        if self.error_law == "normal":
            e = rng.normal(0.0, self.normal_sd, size)
        elif self.error_law == "cauchy":
            e = self.cauchy_scale * rng.standard_cauchy(size)
        else:
            raise ValueError(f"unknown error law {self.error_law!r}")
        return e - self.error_quantile()


def wiener_paths(rng, n: int, grid) -> np.ndarray:
    """Brownian paths started at 0 on ``grid[0]``; shape ``(n, len(grid))``."""
    dt = np.diff(grid)
    inc = rng.standard_normal((n, dt.size)) * np.sqrt(dt)
    return np.concatenate([np.zeros((n, 1)), np.cumsum(inc, axis=1)], axis=1)


def generate(scenario: SimScenario, rng=None) -> FunctionalDataset:
    """Draw one dataset; the curve integrals use a grid ``refine`` times finer
    than the observation grid, which is a subsample of it."""
    rng = np.random.default_rng(scenario.seed) if rng is None else rng
    n, G, r = scenario.n, scenario.grid_size, scenario.refine
    fine = np.linspace(scenario.domain[0], scenario.domain[1], (G - 1) * r + 1)
    w = trapezoid_weights(fine)
    X = np.empty((n, scenario.m, G))
    signal = np.zeros(n)
    for l, beta in enumerate(scenario.beta_funcs()):
        path = wiener_paths(rng, n, fine)
        signal += path @ (w * beta(fine))
        X[:, l] = path[:, ::r]
    alpha = np.asarray(scenario.alpha, dtype=float)
    Zs = rng.normal(0.0, scenario.sigma_z, (n, alpha.size - 1))
    Z = np.column_stack([np.ones(n), Zs])
    Y = Z @ alpha + signal + scenario.draw_errors(rng, n)
    names = {"response": "y", "scalars": [f"z{a}" for a in range(1, alpha.size)],
             "functional": [f"X{l + 1}" for l in range(scenario.m)]}
    return FunctionalDataset(scenario.grid, X, Z, Y, names)


def true_null(beta, grid, atol: float = 1e-12) -> np.ndarray:
    """Grid points in the closure of the open set where ``beta`` vanishes.

    Isolated zero crossings (``sin(2 pi t)`` at ``t = 0``) are not part of the
    null region; a point counts when ``beta`` is also zero just to its left
    or right.
    """
    grid = np.asarray(grid, dtype=float)
    delta = 1e-6 * float(np.min(np.diff(grid))) if grid.size > 1 else 1e-9

    def zero(t):
        return np.abs(np.asarray(beta(t), dtype=float)) <= atol

    return zero(grid) & (zero(grid - delta) | zero(grid + delta))


def tdr_fdr(estimated_null, true_beta, grid) -> tuple[float, float]:
    """True discovery rate on the null region and false discovery rate on the
    signal region, counting grid points. An empty region gives ``nan``."""
    est = np.asarray(estimated_null, dtype=bool)
    null = true_null(true_beta, np.asarray(grid, dtype=float))
    if est.shape != null.shape:
        raise ValueError("estimated null mask does not match the grid")
    sig = ~null
    tdr = float((est & null).sum() / null.sum()) if null.any() else float("nan")
    fdr = float((est & sig).sum() / sig.sum()) if sig.any() else float("nan")
    return tdr, fdr


def l2_error(beta_hat, beta, domain, n_points: int = 2001) -> float:
    t = np.linspace(domain[0], domain[1], n_points)
    diff = np.asarray(beta_hat(t)) - np.asarray(beta(t))
    return float(np.sqrt(trapezoid_weights(t) @ diff ** 2))


@dataclass
class MetricReport:
    method: str
    replicates: int
    tdr: list
    fdr: list
    l2_error: list
    imse: list
    alpha_bias: list
    alpha_se: list
    per_replicate: list = field(default_factory=list, repr=False)

    def row(self) -> dict:
        out = {"method": self.method, "replicates": self.replicates}
        for l in range(len(self.l2_error)):
            sfx = "" if len(self.l2_error) == 1 else f"_{l + 1}"
            out[f"tdr{sfx}"] = self.tdr[l]
            out[f"fdr{sfx}"] = self.fdr[l]
            out[f"l2{sfx}"] = self.l2_error[l]
            out[f"imse{sfx}"] = self.imse[l]
        for a in range(len(self.alpha_bias)):
            out[f"bias_alpha{a}"] = self.alpha_bias[a]
            out[f"se_alpha{a}"] = self.alpha_se[a]
        return out

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _nanmean(x):
    x = np.asarray(x, dtype=float)
    return float(np.nanmean(x)) if np.any(np.isfinite(x)) else float("nan")


def summarize(method: str, records: list, alpha_true) -> MetricReport:
    """Aggregate per-replicate records produced by :func:`score_fit`."""
    R = len(records)
    m = len(records[0]["l2"])
    alpha_hat = np.array([r["alpha"] for r in records])
    alpha_true = np.asarray(alpha_true, dtype=float)
    se = alpha_hat.std(axis=0, ddof=1) if R > 1 else np.full(alpha_true.size, np.nan)
    return MetricReport(
        method=method,
        replicates=R,
        tdr=[_nanmean([r["tdr"][l] for r in records]) for l in range(m)],
        fdr=[_nanmean([r["fdr"][l] for r in records]) for l in range(m)],
        l2_error=[_nanmean([r["l2"][l] for r in records]) for l in range(m)],
        imse=[_nanmean([r["l2"][l] ** 2 for r in records]) for l in range(m)],
        alpha_bias=(alpha_hat.mean(axis=0) - alpha_true).tolist(),
        alpha_se=se.tolist(),
        per_replicate=records,
    )


def score_fit(fit, scenario: SimScenario, replicate: int = 0) -> dict:
    grid = scenario.grid
    tdr, fdr, l2 = [], [], []
    for l, beta in enumerate(scenario.beta_funcs()):
        est_null = fit.null_mask(grid, l)
        a, b = tdr_fdr(est_null, beta, grid)
        tdr.append(a)
        fdr.append(b)
        l2.append(l2_error(lambda t, l=l: fit.beta(t, l), beta, scenario.domain))
    return {"replicate": replicate, "tdr": tdr, "fdr": fdr, "l2": l2,
            "alpha": fit.alpha.tolist(), "converged": bool(fit.converged)}


# ------------------------------------------------------------------ studies


class StudyError(RuntimeError):
    """A replicate failed; the message names it."""


def replicate_seed(base_seed: int, r: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=base_seed, spawn_key=(r,))


def _fit_replicate(method, design, basis, gram_set, base, grid, fixed, df_rule):
    from .solver import fit_close, fit_sql
    from .tune import TuneGrid, tune_fit
    from dataclasses import replace

    if method == "sql":
        if fixed is not None:
            return fit_sql(design, basis, gram_set, replace(base, lam=0.0, gamma=fixed[1])), (0.0, fixed[1])
        sgrid = TuneGrid((0.0,), grid.gamma_candidates)
        res = tune_fit(design, basis, gram_set, sgrid, base, df_rule=df_rule, threads=1)
        return res.fit, res.best
    if fixed is not None:
        cfg = replace(base, lam=fixed[0], gamma=fixed[1])
        return fit_close(design, basis, gram_set, cfg), tuple(fixed)
    res = tune_fit(design, basis, gram_set, grid, base, df_rule=df_rule, threads=1)
    return res.fit, res.best


def run_study(scenario: SimScenario, method: str = "close", replicates: int = 100, K: int = 50,
              p: int = 3, q: int = 2, grid=None, fixed=None, df_rule: str = "count",
              threads: int = 1, base_config=None) -> dict:
    """Generate, fit and score ``replicates`` datasets.

    ``method`` is ``"close"``, ``"sql"`` or ``"both"``; with ``both`` the two
    methods see the same datasets. ``fixed=(lam, gamma)`` skips tuning,
    otherwise ``grid`` (default :func:`fqr.tune.default_grid`) is searched by
    BIC. Replicate ``r`` draws its data from ``(scenario.seed, r)`` so the
    result does not depend on ``threads``. Returns ``{method: MetricReport}``.
    """
    from concurrent.futures import ThreadPoolExecutor

    from .basis import build_basis, compute_gram_set
    from .design import assemble_design
    from .solver import SolverConfig
    from .tune import default_grid

    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    methods = {"close": ["close"], "sql": ["sql"], "both": ["sql", "close"]}.get(method)
    if methods is None:
        raise ValueError(f"unknown method {method!r}")
    basis = build_basis(scenario.domain, K, p)
    gram_set = compute_gram_set(basis, q)
    base = base_config or SolverConfig(tau=scenario.tau, q=q)
    if base.tau != scenario.tau:
        raise ValueError("base_config.tau differs from the scenario")
    grid = grid or default_grid(scenario.n, K)

    def one(r):
        rng = np.random.default_rng(replicate_seed(scenario.seed, r))
        data = generate(scenario, rng)
        design = assemble_design(data, basis)
        out = {}
        for meth in methods:
            try:
                fit, pair = _fit_replicate(meth, design, basis, gram_set, base, grid, fixed, df_rule)
            except Exception as exc:  # noqa: BLE001 - re-raised with the replicate index
                raise StudyError(f"replicate {r} ({meth}): {exc}") from exc
            rec = score_fit(fit, scenario, r)
            rec["lambda"], rec["gamma"] = _plain(pair[0]), _plain(pair[1])
            out[meth] = rec
        return out

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(one, range(replicates)))
    else:
        results = [one(r) for r in range(replicates)]
    return {meth: summarize(meth, [res[meth] for res in results], scenario.alpha)
            for meth in methods}


def _plain(v):
    return [float(x) for x in v] if np.ndim(v) else float(v)


def _fmt17(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def paired_row(reports) -> dict:
    """One row with ``<metric>_<method>`` columns side by side per metric."""
    rows = {rep.method: rep.row() for rep in reports}
    keys = [k for k in next(iter(rows.values())) if k != "method"]
    out = {}
    for k in keys:
        for meth, row in rows.items():
            out[f"{k}_{meth}"] = row[k]
    return out


def write_reports_csv(reports, path, extra: dict | None = None, paired: bool = False) -> None:
    """One row per method, or a single paired row; ``extra`` columns (e.g.
    ``tau``, ``n``) lead."""
    write_sweep_csv([(extra or {}, list(reports))], path, paired)


def write_sweep_csv(groups, path, paired: bool = False) -> None:
    """Rows for several studies (e.g. a sweep over ``tau``); ``groups`` holds
    ``(extra, reports)`` pairs."""
    import csv

    rows = []
    for extra, reports in groups:
        reports = list(reports)
        if paired:
            rows.append({**extra, **paired_row(reports)})
        else:
            rows.extend({**extra, **rep.row()} for rep in reports)
    cols = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([_fmt17(row[c]) for c in cols])


def read_reports_csv(path) -> list:
    """Rows of a metrics CSV as dicts of floats (strings kept for ``method``);
    ``#`` comment lines are ignored."""
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    out = []
    for r in rows:
        conv = {}
        for k, v in r.items():
            try:
                conv[k] = float(v)
            except ValueError:
                conv[k] = v
        out.append(conv)
    return out


def write_replicates_jsonl(reports, path, extra: dict | None = None, mode: str = "w") -> None:
    with open(path, mode) as fh:
        for rep in reports:
            for rec in rep.per_replicate:
                fh.write(json.dumps({**(extra or {}), "method": rep.method, **rec}) + "\n")


TOY_SCENARIO = SimScenario(n=400, betas=("toy",), grid_size=121, domain=(0.0, 1.0),
                           alpha=(0.0, 1.0), seed=20240607)


def make_toy(digits: int = 6) -> FunctionalDataset:
    """The bundled toy dataset: one scalar, one curve on ``[0, 1]`` whose
    coefficient vanishes on ``[0, 0.5]``. Values are rounded to ``digits``
    decimals so the CSV stays small."""
    data = generate(TOY_SCENARIO)
    return FunctionalDataset(data.grid, np.round(data.X, digits), data.Z,
                             np.round(data.Y, digits), data.names)
