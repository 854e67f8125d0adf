"""Split-sample wild bootstrap, confidence bands and the sandwich oracle."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, stats

from .basis import GramSet, SplineBasis, eval_basis
from .design import DesignMatrices, FunctionalDataset, assemble_design
from .solver import (ConvergenceError, FitResult, SolverConfig, fit_close, fit_sql,
                     _penalty_matrix, _signal_problem_parts, flags_to_intervals,
                     refit_signal_region, roughness_matrix, support_mask)

logger = logging.getLogger(__name__)


class BootstrapError(ConvergenceError):
    """Too many bootstrap replicates failed."""


# ----------------------------------------------------------------- weights


@dataclass(frozen=True)
class WildWeightDist:
    """Two-point law ``-2 tau`` (probability ``tau``) or ``2 (1 - tau)``.

    It is the only two-point law whose ``tau``-quantile is zero and for which
    ``E[1{w > 0} / w] = 1/2`` and ``E[1{w < 0} / w] = -1/2``.
    """

    tau: float

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")

    @property
    def neg_value(self) -> float:
        return -2.0 * self.tau

    @property
    def pos_value(self) -> float:
        return 2.0 * (1.0 - self.tau)

    @property
    def neg_prob(self) -> float:
        return self.tau

    def cdf(self, x: float) -> float:
        if x < self.neg_value:
            return 0.0
        return self.neg_prob if x < self.pos_value else 1.0

    def inverse_moment_pos(self) -> float:
        """``E[1{w > 0} / w]``."""
        return (1.0 - self.neg_prob) / self.pos_value

    def inverse_moment_neg(self) -> float:
        """``E[1{w < 0} / w]``."""
        return self.neg_prob / self.neg_value

    def abs_mean(self) -> float:
        return self.neg_prob * -self.neg_value + (1.0 - self.neg_prob) * self.pos_value


def draw_weights(dist: WildWeightDist, n: int, rng) -> np.ndarray:
    u = rng.random(n)
    return np.where(u < dist.neg_prob, dist.neg_value, dist.pos_value)


# ---------------------------------------------------------------- bootstrap


@dataclass
class HalfBootstrap:
    """Replicates from one (pattern half, refit half) assignment."""

    pattern_idx: np.ndarray
    refit_idx: np.ndarray
    free_mask: np.ndarray
    null_flags: np.ndarray
    alpha_center: np.ndarray
    theta_center: np.ndarray
    alpha_reps: np.ndarray  # (B_kept, d)
    theta_reps: np.ndarray  # (B_kept, m * nb)
    dropped: int
    bandwidth: float
    masked: bool = True

    def curve_mask(self, basis: SplineBasis, t, l: int) -> np.ndarray:
        """1 where replicate curves are defined, 0 on this half's flagged set."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        keep = np.ones(t.shape)
        if self.masked:
            for a, b in flags_to_intervals(self.null_flags[l], basis):
                keep[(t >= a) & (t <= b)] = 0.0
        return keep


@dataclass
class BootstrapSummary:
    """Replicates from both half assignments plus derived variances."""

    B: int
    tau: float
    basis: SplineBasis
    halves: list
    level_defaults: tuple = (0.05,)
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.halves[0].theta_reps.shape[1] // self.basis.n_basis

    @property
    def d(self) -> int:
        return self.halves[0].alpha_reps.shape[1]

    @property
    def dropped(self) -> int:
        return int(sum(h.dropped for h in self.halves))

    @property
    def alpha_reps(self) -> np.ndarray:
        return np.vstack([h.alpha_reps for h in self.halves])

    def beta_reps(self, t, l: int = 0) -> np.ndarray:
        """Replicate curves on ``t``, both halves stacked: ``(B_total, len(t))``."""
        Bt = eval_basis(self.basis, np.atleast_1d(t))
        nb = self.basis.n_basis
        return np.vstack([(h.theta_reps[:, l * nb:(l + 1) * nb] @ Bt.T) * h.curve_mask(self.basis, t, l)
                          for h in self.halves])

    def theta_cov(self, l: int | None = None) -> np.ndarray:
        """Half-averaged replicate covariance of the spline coefficients."""
        nb = self.basis.n_basis
        sl = slice(None) if l is None else slice(l * nb, (l + 1) * nb)
        covs = [_cov(h.theta_reps[:, sl]) for h in self.halves]
        return sum(covs) / len(covs)

    @property
    def alpha_cov(self) -> np.ndarray:
        covs = [_cov(h.alpha_reps) for h in self.halves]
        C = sum(covs) / len(covs)
        return 0.5 * (C + C.T)

    def sigma_hat(self, t, l: int = 0) -> np.ndarray:
        """Pointwise variance of ``beta_l(t)``, averaged over the halves.

        A half whose pattern flags ``t`` as null carries no information on
        the variance there and is left out of the average; ``nan`` marks
        points flagged by both halves.
        """
        Bt = eval_basis(self.basis, np.atleast_1d(t))
        nb = self.basis.n_basis
        total = np.zeros(Bt.shape[0])
        count = np.zeros(Bt.shape[0])
        for h in self.halves:
            C = _cov(h.theta_reps[:, l * nb:(l + 1) * nb])
            keep = h.curve_mask(self.basis, t, l)
            total += np.einsum("gi,ij,gj->g", Bt, C, Bt) * keep
            count += keep
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(count > 0, total / np.maximum(count, 1), np.nan)
        return np.where(np.isnan(out), np.nan, np.maximum(out, 0.0))

    def to_dict(self) -> dict:
        return {
            "B": self.B,
            "tau": self.tau,
            "dropped": self.dropped,
            "basis": {"domain": [self.basis.domain_start, self.basis.domain_end],
                      "K": self.basis.num_subintervals, "p": self.basis.degree},
            "alpha_cov": self.alpha_cov.tolist(),
            "halves": [
                {
                    "pattern_idx": h.pattern_idx.tolist(),
                    "refit_idx": h.refit_idx.tolist(),
                    "null_flags": h.null_flags.astype(int).tolist(),
                    "bandwidth": h.bandwidth,
                    "masked": h.masked,
                    "dropped": h.dropped,
                    "alpha_center": h.alpha_center.tolist(),
                    "theta_center": h.theta_center.tolist(),
                    "alpha_reps": h.alpha_reps.tolist(),
                    "theta_reps": h.theta_reps.tolist(),
                }
                for h in self.halves
            ],
            **self.meta,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "BootstrapSummary":
        from .basis import build_basis

        b = d["basis"]
        basis = build_basis(tuple(b["domain"]), b["K"], b["p"])
        halves = []
        for h in d["halves"]:
            flags = np.asarray(h["null_flags"], bool)
            halves.append(HalfBootstrap(
                pattern_idx=np.asarray(h["pattern_idx"], int),
                refit_idx=np.asarray(h["refit_idx"], int),
                free_mask=support_mask(flags, basis),
                null_flags=flags,
                alpha_center=np.asarray(h["alpha_center"], float),
                theta_center=np.asarray(h["theta_center"], float),
                alpha_reps=np.asarray(h["alpha_reps"], float),
                theta_reps=np.asarray(h["theta_reps"], float),
                dropped=int(h["dropped"]),
                bandwidth=float(h["bandwidth"]),
                masked=bool(h.get("masked", True)),
            ))
        meta = {k: v for k, v in d.items()
                if k not in ("B", "tau", "dropped", "basis", "alpha_cov", "halves")}
        return cls(B=d["B"], tau=d["tau"], basis=basis, halves=halves, meta=meta)


def _cov(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.shape[0] < 2:
        return np.zeros((A.shape[1], A.shape[1]))
    return np.atleast_2d(np.cov(A, rowvar=False, ddof=1))


def split_halves(n: int, split_seed) -> tuple[np.ndarray, np.ndarray]:
    """Seeded random partition with ``floor(n / 2)`` indices in the first half."""
    perm = np.random.default_rng(split_seed).permutation(n)
    n1 = n // 2
    return np.sort(perm[:n1]), np.sort(perm[n1:])


def replicate_rng(base_seed, half: int, b: int) -> np.random.Generator:
    """Independent stream for replicate ``b`` of half assignment ``half``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=base_seed, spawn_key=(half, b)))


def _one_half(design: DesignMatrices, basis, gram_set, config, pattern_idx, refit_idx, B,
              seed, half, threads, max_drop) -> HalfBootstrap:
    d = design.d
    masked = bool(config.polish and config.restrict_curves)
    # Step 1: sparsity pattern from the pattern half
    pat = fit_close(design.subset(pattern_idx), basis, gram_set, config)
    flags = pat.null_flags
    free = support_mask(flags, basis)
    # Step 2: constrained roughness-only refit on the other half
    part = design.subset(refit_idx)
    h = config.resolve_bandwidth(part)
    cfg = replace(config, bandwidth=h)

    def refit(y, x0=None):
        if masked:
            r = refit_signal_region(part, basis, gram_set, cfg, flags, Y=y, x0=x0, free_mask=free)
            return r.alpha, r.theta, r.converged
        r = fit_sql(part, basis, gram_set, cfg, Y=y, free_mask=free, x0=x0)
        return r.alpha, r.theta, r.converged

    alpha0, theta0, _ = refit(part.Y)
    cols = part.restricted_U(~flags) if masked else part.U
    fitted = part.Z @ alpha0 + cols @ theta0
    # Step 4: residuals of the refit half
    abs_res = np.abs(part.Y - fitted)
    dist = WildWeightDist(config.tau)
    x0 = np.concatenate([alpha0, theta0])

    def rep(b):
        rng = replicate_rng(seed, half, b)
        w = draw_weights(dist, part.n, rng)  # Step 3
        try:
            a, th, ok = refit(fitted + w * abs_res, x0)  # Step 5
        except ConvergenceError as exc:
            logger.info("replicate %d of half %d failed: %s", b, half, exc)
            return None
        return (a, th) if ok else None

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            reps = list(ex.map(rep, range(B)))
    else:
        reps = [rep(b) for b in range(B)]
    ok = [r for r in reps if r is not None]
    dropped = B - len(ok)
    if dropped > max_drop * B:
        raise BootstrapError(f"{dropped} of {B} bootstrap replicates failed to converge")
    alpha_reps = np.array([r[0] for r in ok]).reshape(len(ok), d)
    theta_reps = np.array([r[1] for r in ok]).reshape(len(ok), -1)
    return HalfBootstrap(pattern_idx, refit_idx, free, flags, alpha0, theta0,
                         alpha_reps, theta_reps, dropped, h, masked)


def wild_bootstrap(data, basis: SplineBasis, gram_set: GramSet, config: SolverConfig, B: int,
                   split_seed, seed=None, threads: int = 1,
                   max_drop: float = 0.10) -> BootstrapSummary:
    """Split-sample wild bootstrap for the coefficient functions and ``alpha``.

    ``data`` is a :class:`FunctionalDataset` or an assembled
    :class:`DesignMatrices` with a response. One half of a seeded random
    partition fixes the sparsity pattern, the other half is refitted under
    that pattern and resampled with two-point wild weights. The halves then
    swap roles and the two variance estimates are averaged. Replicate
    streams derive from ``(seed, half, b)``, so results do not depend on
    ``threads``. Each half reuses the bandwidth of its centre fit.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    design = assemble_design(data, basis) if isinstance(data, FunctionalDataset) else data
    if design.Y is None:
        raise ValueError("the design has no response")
    n = design.n
    need = 2 * (basis.n_basis * design.m + design.d)
    if n // 2 < need:
        raise ValueError(f"half-sample of {n // 2} is too small; need at least {need}")
    if B < 50:
        logger.warning("B=%d bootstrap replicates is below the recommended 50", B)
    seed = split_seed if seed is None else seed
    I, II = split_halves(n, split_seed)
    halves = [
        _one_half(design, basis, gram_set, config, I, II, B, seed, 0, threads, max_drop),
        _one_half(design, basis, gram_set, config, II, I, B, seed, 1, threads, max_drop),
    ]
    return BootstrapSummary(B=B, tau=config.tau, basis=basis, halves=halves,
                            meta={"split_seed": _jsonable(split_seed), "seed": _jsonable(seed)})


def _jsonable(v):
    if isinstance(v, (int, np.integer)):
        return int(v)
    return v if v is None else str(v)


# ------------------------------------------------------------------- bands


def scb_critical_value(S: int, a: float) -> float:
    """Extreme-value critical value for a band over ``S`` points at level ``a``."""
    if S < 2:
        raise ValueError("a simultaneous band needs at least two evaluation points")
    if not 0.0 < a < 1.0:
        raise ValueError("level must lie in (0, 1)")
    L = 2.0 * math.log(S)
    return math.sqrt(L) - (math.log(-0.5 * math.log(1.0 - a))
                           + 0.5 * (math.log(math.log(S)) + math.log(4.0 * math.pi))) / math.sqrt(L)


def signal_midpoints(fit: FitResult, l: int = 0, density: int = 1) -> np.ndarray:
    """Default evaluation set: ``density`` equally spaced points inside each
    unflagged subinterval (midpoints when ``density`` is 1)."""
    bp = fit.basis.breakpoints
    offs = (np.arange(density) + 0.5) / density
    pts = [bp[j] + offs * (bp[j + 1] - bp[j]) for j in np.flatnonzero(~fit.null_flags[l])]
    return np.concatenate(pts) if pts else np.zeros(0)


@dataclass
class Band:
    t: np.ndarray
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    kind: str
    level: float
    critical_value: float

    def covers(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        return (v >= self.lower) & (v <= self.upper)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "estimate", "lower", "upper"])
            for row in zip(self.t, self.estimate, self.lower, self.upper):
                w.writerow([format(float(v), ".17g") for v in row])


def read_band_csv(path) -> dict:
    """Columns of a band CSV; ``#`` comment lines are ignored."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    if len(lines) > 1:
        arr = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    else:
        arr = np.empty((0, 4))
    return {"t": arr[:, 0], "estimate": arr[:, 1], "lower": arr[:, 2], "upper": arr[:, 3]}


def _band(summary, fit, l, t, crit, kind, a) -> Band:
    est = fit.beta(t, l)
    half = np.sqrt(summary.sigma_hat(t, l)) * crit
    return Band(np.asarray(t, float), est, est - half, est + half, kind, a, float(crit))


def _eval_points(summary, fit, l, eval_grid):
    t = signal_midpoints(fit, l) if eval_grid is None else np.asarray(eval_grid, dtype=float)
    ok = ~np.isnan(summary.sigma_hat(t, l))
    if not ok.all():
        logger.info("dropping %d evaluation points flagged null by both halves", int((~ok).sum()))
    return t[ok]


def build_scb(summary: BootstrapSummary, fit: FitResult, level: float = 0.05,
              eval_grid=None, l: int = 0) -> Band:
    """Simultaneous band ``beta_hat(t) +- sigma_hat(t)^(1/2) Q(a)``.

    ``eval_grid`` defaults to the midpoints of the unflagged subintervals.
    Points where the bootstrap has no variance estimate (flagged by both
    halves) are dropped before ``Q(a)`` is computed. A single remaining point
    gets the normal critical value. With none left the band is empty.
    """
    t = _eval_points(summary, fit, l, eval_grid)
    if t.size == 0:
        logger.warning("no signal points left for covariate %d; the band is empty", l)
        crit = math.nan
    elif t.size == 1:
        crit = float(stats.norm.ppf(1.0 - level / 2.0))
    else:
        crit = scb_critical_value(t.size, level)
    return _band(summary, fit, l, t, crit, "scb", level)


def build_pcb(summary: BootstrapSummary, fit: FitResult, level: float = 0.05,
              eval_grid=None, l: int = 0) -> Band:
    """Pointwise band with the normal critical value ``z_{1 - a/2}``."""
    t = _eval_points(summary, fit, l, eval_grid)
    return _band(summary, fit, l, t, stats.norm.ppf(1.0 - level / 2.0), "pcb", level)


def alpha_intervals(summary: BootstrapSummary, fit: FitResult, level: float = 0.05) -> list:
    """Intervals for ``alpha`` by the normal approximation and by replicate
    percentiles of the deviations from each half's centre, shifted to the
    full-sample estimate."""
    z = stats.norm.ppf(1.0 - level / 2.0)
    se = np.sqrt(np.maximum(np.diag(summary.alpha_cov), 0.0))
    dev = np.vstack([h.alpha_reps - h.alpha_center for h in summary.halves])
    lo_q = np.quantile(dev, level / 2.0, axis=0)
    hi_q = np.quantile(dev, 1.0 - level / 2.0, axis=0)
    rows = []
    for j in range(fit.alpha.size):
        a = float(fit.alpha[j])
        rows.append({"index": j, "estimate": a, "se": float(se[j]),
                     "normal_lower": a - z * se[j], "normal_upper": a + z * se[j],
                     "percentile_lower": a + lo_q[j], "percentile_upper": a + hi_q[j]})
    return rows


def write_alpha_table(rows: list, path) -> None:
    cols = ["index", "estimate", "se", "normal_lower", "normal_upper",
            "percentile_lower", "percentile_upper"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r["index"], *(format(float(r[c]), ".17g") for c in cols[1:])])


# ------------------------------------------------------------------ oracle


@dataclass
class SandwichOracle:
    cov: np.ndarray  # covariance of (alpha, free theta)
    free_mask: np.ndarray
    basis: SplineBasis
    d: int
    ridge: float
    null_flags: np.ndarray | None = None

    @property
    def alpha_cov(self) -> np.ndarray:
        return self.cov[:self.d, :self.d]

    def sigma(self, t, l: int = 0) -> np.ndarray:
        """Variance of ``beta_l(t)`` under the sandwich formula."""
        nb = self.basis.n_basis
        Bt = eval_basis(self.basis, np.atleast_1d(t))
        lam = np.zeros((Bt.shape[0], self.free_mask.size))
        lam[:, l * nb:(l + 1) * nb] = Bt
        lam = lam[:, self.free_mask]
        C = self.cov[self.d:, self.d:]
        out = np.maximum(np.einsum("gi,ij,gj->g", lam, C, lam), 0.0)
        if self.null_flags is not None:
            t = np.atleast_1d(np.asarray(t, dtype=float))
            for a, b in flags_to_intervals(self.null_flags[l], self.basis):
                out[(t >= a) & (t <= b)] = 0.0
        return out


def sandwich_variance_oracle(design: DesignMatrices, density_at_zero, tau: float,
                             free_mask=None, penalty=None, meat=None,
                             null_flags=None) -> SandwichOracle:
    """``tau (1 - tau) S2^-1 (S1 / n) S2^-1`` on the non-null coefficients.

    ``S1 = mean(z z')`` and ``S2 = mean(f_i(0) z z')`` with ``z`` the
    scalar covariates followed by the surviving spline integrals;
    ``density_at_zero`` is a scalar or one value per sample. ``penalty``
    optionally adds a matrix (on the full ``(alpha, theta)`` layout) to
    ``S2``. ``meat`` replaces ``tau (1 - tau)``; together with a smoothed
    density it gives the variance of the smoothed-loss estimator at a fixed
    bandwidth (see :func:`smoothed_score_moments`). With ``null_flags`` the
    curves are integrated over the unflagged subintervals only, matching a
    masked fit, and ``sigma`` is zero on the flagged set.
    """
    n = design.n
    nth = design.U.shape[1]
    free_mask = np.ones(nth, bool) if free_mask is None else np.asarray(free_mask, bool)
    if free_mask.size != nth:
        raise ValueError("sparsity pattern does not match the design")
    f = np.broadcast_to(np.asarray(density_at_zero, dtype=float), (n,))
    if np.any(f <= 0):
        raise ValueError("densities must be positive")
    U = design.U if null_flags is None else design.restricted_U(~np.asarray(null_flags, bool))
    Zs = np.hstack([design.Z, U[:, free_mask]])
    S1 = Zs.T @ Zs / n
    S2 = (Zs * f[:, None]).T @ Zs / n
    if penalty is not None:
        keep = np.concatenate([np.ones(design.d, bool), free_mask])
        S2 = S2 + np.asarray(penalty, float)[np.ix_(keep, keep)]
    ridge = 0.0
    try:
        S2inv = linalg.inv(S2, check_finite=False)
        if not np.all(np.isfinite(S2inv)):
            raise linalg.LinAlgError
        cond = np.linalg.cond(S2)
        if cond > 1e14:
            raise linalg.LinAlgError
    except linalg.LinAlgError:
        ridge = 1e-8 * np.trace(S2) / S2.shape[0]
        logger.warning("sandwich S2 singular; ridge %.3g added", ridge)
        S2inv = linalg.inv(S2 + ridge * np.eye(S2.shape[0]))
    meat = tau * (1.0 - tau) if meat is None else float(meat)
    cov = meat * S2inv @ S1 @ S2inv / n
    flags = None if null_flags is None else np.asarray(null_flags, bool)
    return SandwichOracle(0.5 * (cov + cov.T), free_mask, design.basis, design.d, ridge, flags)


def null_intervals(fit: FitResult, l: int = 0) -> list:
    return flags_to_intervals(fit.null_flags[l], fit.basis)


def smoothed_score_moments(error_pdf, tau: float, bandwidth: float, kernel="gaussian",
                           scale: float = 1.0) -> tuple[float, float]:
    """Curvature ``E[K_h(e)]`` and score variance ``E[(G_h(-e) - tau)^2]`` of
    the smoothed loss when the errors ``e`` have density ``error_pdf`` with
    their ``tau``-quantile at zero. ``scale`` sets the integration window
    (a multiple of it and of the bandwidth)."""
    from scipy import integrate

    from .loss import Kernel, SmoothedLossSpec, smoothed_grad_scalar, smoothed_hess_scalar

    spec = SmoothedLossSpec(tau, bandwidth, Kernel(kernel))
    lim = 50.0 * max(scale, bandwidth)
    opts = dict(limit=500, epsabs=1e-12, epsrel=1e-10, points=[0.0])
    curv, _ = integrate.quad(lambda e: float(smoothed_hess_scalar(spec, e)) * error_pdf(e),
                             -lim, lim, **opts)
    meat, _ = integrate.quad(lambda e: float(smoothed_grad_scalar(spec, -e)) ** 2 * error_pdf(e),
                             -lim, lim, **opts)
    return curv, meat


def matched_oracle_sigma(summary: BootstrapSummary, design: DesignMatrices, gram_set: GramSet,
                         config: SolverConfig, error_pdf, scale: float = 1.0):
    """Known-density sandwich variance laid out like :meth:`BootstrapSummary.sigma_hat`.

    Each half gets the sandwich of its constrained refit: the refit-half
    design, that half's sparsity pattern, the restricted roughness penalty,
    and curvature and score variance of the smoothed loss at the half's
    bandwidth under ``error_pdf``. Halves are averaged where they do not
    flag ``t``. Returns a callable ``sigma(t, l=0)``.
    """
    oracles = []
    for h in summary.halves:
        part = design.subset(h.refit_idx)
        cfg = replace(config, bandwidth=h.bandwidth)
        curv, meat = smoothed_score_moments(error_pdf, config.tau, h.bandwidth,
                                            kernel=config.kernel, scale=scale)
        if h.masked:
            _, P = _signal_problem_parts(part, gram_set, cfg, h.null_flags)
            flags = h.null_flags
        else:
            P = _penalty_matrix(part.d, roughness_matrix(gram_set, cfg.per_covariate("gamma", part.m)))
            flags = None
        oracles.append((h, sandwich_variance_oracle(part, curv, config.tau, free_mask=h.free_mask,
                                                    penalty=2.0 * P, meat=meat, null_flags=flags)))

    def sigma(t, l: int = 0) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        total = np.zeros(t.size)
        count = np.zeros(t.size)
        for h, orc in oracles:
            keep = h.curve_mask(summary.basis, t, l)
            total += orc.sigma(t, l) * keep
            count += keep
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(count > 0, total / np.maximum(count, 1), np.nan)

    return sigma
