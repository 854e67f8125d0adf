"""Grid search over the sparsity and roughness parameters scored by BIC."""
from __future__ import annotations

import csv
import itertools
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .basis import GramSet, SplineBasis
from .design import DesignMatrices
from .loss import check_loss
from .solver import (ConvergenceError, FitResult, SolverConfig,
                     SignalRefit, design_response, fit_close, fit_sql, refit_signal_region)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TuneGrid:
    """Candidate values; one shared ``(lambda, gamma)`` pair per fit by default.

    With ``shared_across_l=False`` every covariate gets its own pair and the
    grid is the Cartesian product over covariates.
    """

    lambda_candidates: tuple
    gamma_candidates: tuple
    shared_across_l: bool = True

    def __post_init__(self):
        lam = tuple(sorted(float(v) for v in self.lambda_candidates))
        gam = tuple(sorted(float(v) for v in self.gamma_candidates))
        if not lam or not gam:
            raise ValueError("tuning grid is empty")
        if min(lam) < 0 or min(gam) < 0:
            raise ValueError("tuning candidates must be non-negative")
        object.__setattr__(self, "lambda_candidates", lam)
        object.__setattr__(self, "gamma_candidates", gam)

    @property
    def size(self) -> int:
        return len(self.lambda_candidates) * len(self.gamma_candidates)

    def pairs(self, m: int = 1) -> list:
        """Candidate ``(lam, gamma)`` entries; scalars when shared, else tuples."""
        base = list(itertools.product(self.lambda_candidates, self.gamma_candidates))
        if self.shared_across_l or m == 1:
            return base
        out = []
        for combo in itertools.product(base, repeat=m):
            out.append((tuple(c[0] for c in combo), tuple(c[1] for c in combo)))
        return out


def default_grid(n: int, K: int, n_lambda: int = 8, n_gamma: int = 6) -> TuneGrid:
    """``lambda`` log-spaced over ``[1e-3, 1] * sqrt(K / n)`` and ``gamma``
    log-spaced over ``[1e-8, 1e-2]``."""
    if n <= 0 or K <= 0:
        raise ValueError("n and K must be positive")
    scale = np.sqrt(K / n)
    return TuneGrid(tuple(scale * np.logspace(-3, 0, n_lambda)), tuple(np.logspace(-8, -2, n_gamma)))


# ----------------------------------------------------------------- scoring


def df_count(refit: SignalRefit, design: DesignMatrices) -> float:
    """Surviving spline coefficients plus scalar coefficients."""
    return float(np.count_nonzero(refit.free_mask) + design.d)


def df_effective(refit: SignalRefit, design: DesignMatrices) -> float:
    """Trace of the linearised smoother, which discounts coefficients tied
    down by the roughness penalty."""
    H = refit.hessian + refit.penalty
    return float(np.trace(np.linalg.solve(H, refit.hessian)))


DF_RULES = {"count": df_count, "effective": df_effective}


def bic_value(residuals, tau: float, df: float) -> float:
    """``log(mean check loss) + df log(n) / (2 n)``."""
    r = np.asarray(residuals, dtype=float)
    n = r.size
    loss = float(np.mean(check_loss(r, tau)))
    return float(np.log(max(loss, 1e-300)) + df * np.log(n) / (2.0 * n))


def bic_score(fit: FitResult, design: DesignMatrices, gram_set: GramSet, config: SolverConfig,
              Y=None, df_rule="count") -> tuple[float, float]:
    """BIC of ``fit`` after refitting on its estimated signal region.

    ``df_rule`` is a key of :data:`DF_RULES` or a callable
    ``(refit, design) -> float``. Returns ``(bic, df)``.
    """
    refit = refit_signal_region(design, fit.basis, gram_set, config, fit.null_flags, Y=Y,
                                x0=np.concatenate([fit.alpha, fit.theta]),
                                free_mask=fit.free_mask)
    rule = DF_RULES[df_rule] if isinstance(df_rule, str) else df_rule
    df = rule(refit, design)
    return bic_value(refit.residuals, config.tau, df), df


def n_threads(default: int = 1) -> int:
    """Worker count from ``FQR_THREADS`` (at least one)."""
    raw = os.environ.get("FQR_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"FQR_THREADS must be an integer, got {raw!r}") from None


@dataclass
class TuneResult:
    best: tuple
    fit: FitResult
    table: list

    def write_table(self, path) -> None:
        write_score_table(self.table, path)


def _fmt(v) -> str:
    if isinstance(v, (tuple, list)):
        return ";".join(_fmt(x) for x in v)
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    return format(float(v), ".17g")


def write_score_table(table: list, path) -> None:
    cols = ["lambda", "gamma", "bic", "df", "converged"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in table:
            w.writerow([_fmt(row[c]) for c in cols])


def read_score_table(path) -> list:
    """Rows of a score table as dicts; ``#`` comment lines are ignored."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))

    def num(text):
        vals = tuple(float(v) for v in text.split(";"))
        return vals[0] if len(vals) == 1 else vals

    out = []
    for r in rows:
        out.append({"lambda": num(r["lambda"]), "gamma": num(r["gamma"]),
                    "bic": float(r["bic"]), "df": float(r["df"]),
                    "converged": r["converged"] == "true"})
    return out


def tune_fit(design: DesignMatrices, basis: SplineBasis, gram_set: GramSet, grid: TuneGrid,
             base_config: SolverConfig, Y=None, df_rule="count",
             threads: int | None = None) -> TuneResult:
    """Fit every candidate pair, refit on the surviving coefficients without
    the sparsity penalty, and keep the pair with the smallest BIC.

    Ties go to the larger ``lambda`` (then the larger ``gamma``). Candidates
    whose solver raised get an infinite score.
    """
    Y = np.asarray(design_response(design, Y), dtype=float)
    design = design.with_response(Y)
    m = design.m
    pairs = grid.pairs(m)
    cfg0 = replace(base_config, polish=True)
    sql_cache: dict = {}

    def init_for(gam):
        key = gam if np.ndim(gam) == 0 else tuple(gam)
        if key not in sql_cache:
            sql_cache[key] = fit_sql(design, basis, gram_set, replace(cfg0, gamma=gam, lam=0.0))
        return sql_cache[key]

    for gam in sorted({p[1] for p in pairs}):
        init_for(gam)

    def run(pair):
        lam, gam = pair
        cfg = replace(cfg0, lam=lam, gamma=gam)
        try:
            fit = fit_close(design, basis, gram_set, cfg, init=init_for(gam))
        except ConvergenceError as exc:
            logger.warning("candidate lambda=%s gamma=%s failed: %s", lam, gam, exc)
            return {"lambda": lam, "gamma": gam, "bic": np.inf, "df": np.nan,
                    "converged": False}, None
        bic, df = bic_score(fit, design, gram_set, cfg, df_rule=df_rule)
        return {"lambda": lam, "gamma": gam, "bic": bic, "df": df,
                "converged": bool(fit.converged)}, fit

    workers = n_threads() if threads is None else max(1, int(threads))
    if workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(run, pairs))
    else:
        results = [run(p) for p in pairs]
    table = [r for r, _ in results]

    def key(i):
        row = table[i]
        lam, gam = np.atleast_1d(row["lambda"]), np.atleast_1d(row["gamma"])
        return (row["bic"], tuple(-lam), tuple(-gam))

    order = sorted(range(len(table)), key=key)
    best = order[0]
    if not np.isfinite(table[best]["bic"]):
        raise ConvergenceError("no candidate pair could be fitted")
    row = table[best]
    return TuneResult((row["lambda"], row["gamma"]), results[best][1], table)
