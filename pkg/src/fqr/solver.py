"""Locally sparse functional quantile regression solvers.

:func:`fit_sql` minimises the smoothed quantile loss plus the roughness
penalty. :func:`fit_close` adds the fSCAD penalty through an outer loop of
local quadratic approximations, each minimised by damped Newton steps.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict, replace

import numpy as np
from scipy import linalg

from .basis import GramSet, SplineBasis, eval_basis
from .design import DesignMatrices
from .loss import Kernel, SmoothedLossSpec, default_bandwidth, smoothed_check, \
    smoothed_grad_scalar, smoothed_hess_scalar
from .penalty import ScadParams, fscad_value, lqa_weights, subinterval_norms

logger = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """The solver could not make progress."""


@dataclass(frozen=True)
class SolverConfig:
    """Tuning and numerical settings for :func:`fit_sql` / :func:`fit_close`.

    ``gamma`` and ``lam`` are scalars (shared by all functional covariates) or
    one value per covariate. ``bandwidth=0`` selects the plug-in rule. With
    every ``lam`` zero, :func:`fit_close` reduces to :func:`fit_sql`.
    ``zero_threshold=None`` flags subinterval ``j`` of covariate ``l`` when its
    RMS falls below ``max(zero_threshold_rel * max RMS, zero_threshold_rel * lam_l)``.
    ``zero_mode="support"`` zeroes the coefficients whose whole support is
    flagged; ``"active"`` zeroes every coefficient touching a flagged
    subinterval, so ``beta_l`` vanishes on all of it.
    With ``polish`` the surviving coefficients are refitted without the
    sparsity penalty. ``restrict_curves`` makes that refit use each curve
    only on its unflagged subintervals (see :func:`refit_signal_region`);
    the fitted ``beta_l`` is then ``B(t)' theta_l`` there and exactly zero on
    the flagged set.
    """

    tau: float = 0.5
    bandwidth: float = 0.0
    gamma: float | tuple = 1e-6
    lam: float | tuple = 0.0
    a: float = 3.7
    q: int = 2
    kernel: str = "gaussian"
    max_outer: int = 100
    max_inner: int = 100
    tol_inner: float = 1e-6
    tol_outer: float = 1e-5
    ls_rho: float = 0.5
    ls_c1: float = 1e-4
    ls_min_step: float = 1e-10
    zero_threshold: float | None = None
    zero_threshold_rel: float = 1e-3
    epsilon: float | None = None
    polish: bool = True
    restrict_curves: bool = True
    zero_mode: str = "support"

    def __post_init__(self):
        for name in ("tol_inner", "tol_outer", "ls_c1", "ls_min_step", "zero_threshold_rel"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.zero_mode not in ("support", "active"):
            raise ValueError("zero_mode must be 'support' or 'active'")
        if not 0 < self.ls_rho < 1:
            raise ValueError("ls_rho must lie in (0, 1)")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if self.bandwidth < 0:
            raise ValueError("bandwidth must be non-negative (0 selects the default)")
        if np.any(np.asarray(self.gamma) < 0) or np.any(np.asarray(self.lam) < 0):
            raise ValueError("gamma and lambda must be non-negative")
        for name in ("gamma", "lam"):
            v = getattr(self, name)
            if np.ndim(v):
                object.__setattr__(self, name, tuple(float(x) for x in v))

    def per_covariate(self, name: str, m: int) -> np.ndarray:
        v = np.asarray(getattr(self, name), dtype=float)
        if v.ndim == 0:
            return np.full(m, float(v))
        if v.size != m:
            raise ValueError(f"{name} has {v.size} entries for {m} functional covariates")
        return v

    def resolve_bandwidth(self, design: DesignMatrices) -> float:
        if self.bandwidth > 0:
            return float(self.bandwidth)
        b = design.basis
        return default_bandwidth(b.num_subintervals, b.degree, design.d, design.n)

    def loss_spec(self, design: DesignMatrices) -> SmoothedLossSpec:
        return SmoothedLossSpec(self.tau, self.resolve_bandwidth(design), Kernel(self.kernel))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitResult:
    """Estimates, sparsity pattern and solver diagnostics of one fit."""

    alpha: np.ndarray
    theta: np.ndarray
    basis: SplineBasis
    tau: float
    bandwidth: float
    null_flags: np.ndarray  # (m, K) bool
    objective_trace: list
    inner_traces: list
    converged: bool
    iterations: tuple
    free_mask: np.ndarray  # theta coefficients not forced to zero
    objective: float = np.nan
    diagnostics: dict = field(default_factory=dict)
    masked: bool = False  # beta_l is cut to zero on flagged subintervals

    @property
    def m(self) -> int:
        return self.theta.size // self.basis.n_basis

    @property
    def theta_blocks(self) -> np.ndarray:
        return self.theta.reshape(self.m, self.basis.n_basis)

    def beta(self, t, l: int | None = None) -> np.ndarray:
        """Coefficient functions at ``t``; shape ``(m, len(t))`` or ``(len(t),)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        B = eval_basis(self.basis, t)
        vals = self.theta_blocks @ B.T
        if self.masked:
            for j in range(self.m):
                vals[j][self.null_mask(t, j)] = 0.0
        return vals if l is None else vals[l]

    @property
    def null_regions(self) -> list:
        return [flags_to_intervals(f, self.basis) for f in self.null_flags]

    def null_mask(self, t, l: int = 0) -> np.ndarray:
        """Whether each point of ``t`` lies in a (closed) flagged interval."""
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, bool)
        for a, b in flags_to_intervals(self.null_flags[l], self.basis):
            out |= (t >= a) & (t <= b)
        return out

    def excluded_covariates(self) -> list:
        """Covariates whose every subinterval is flagged null."""
        return [l for l in range(self.m) if self.null_flags[l].all()]

    def design_columns(self, design: DesignMatrices) -> np.ndarray:
        """Curve integrals matching ``theta``: restricted to the unflagged
        subintervals for masked fits, the plain ``U`` otherwise."""
        if self.masked:
            return design.restricted_U(~self.null_flags)
        return design.U

    def predict(self, Z, U=None) -> np.ndarray:
        """Predicted quantiles for a :class:`DesignMatrices`, or for raw
        ``Z`` and curve-integral columns ``U`` (for a masked fit these must
        come from :meth:`design_columns`)."""
        if isinstance(Z, DesignMatrices):
            return Z.Z @ self.alpha + self.design_columns(Z) @ self.theta
        return np.asarray(Z) @ self.alpha + np.asarray(U) @ self.theta

    def to_dict(self) -> dict:
        return {
            "converged": bool(self.converged),
            "tau": self.tau,
            "bandwidth": self.bandwidth,
            "alpha": self.alpha.tolist(),
            "theta": self.theta_blocks.tolist(),
            "null_regions": [[list(iv) for iv in regs] for regs in self.null_regions],
            "null_flags": self.null_flags.astype(int).tolist(),
            "masked": bool(self.masked),
            "basis": {
                "domain": [self.basis.domain_start, self.basis.domain_end],
                "K": self.basis.num_subintervals,
                "p": self.basis.degree,
            },
            "diagnostics": {
                "converged": bool(self.converged),
                "iterations": list(self.iterations),
                "objective": self.objective,
                "objective_trace": list(self.objective_trace),
                **self.diagnostics,
            },
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        from .basis import build_basis

        b = d["basis"]
        basis = build_basis(tuple(b["domain"]), b["K"], b["p"])
        theta = np.asarray(d["theta"], dtype=float).ravel()
        diag = dict(d.get("diagnostics", {}))
        flags = np.asarray(d["null_flags"], dtype=bool).reshape(-1, basis.num_subintervals)
        return cls(
            alpha=np.asarray(d["alpha"], dtype=float),
            theta=theta,
            basis=basis,
            tau=d["tau"],
            bandwidth=d["bandwidth"],
            null_flags=flags,
            objective_trace=diag.pop("objective_trace", []),
            inner_traces=[],
            converged=diag.pop("converged", True),
            iterations=tuple(diag.pop("iterations", (0, 0))),
            free_mask=theta != 0,
            objective=diag.pop("objective", np.nan),
            diagnostics=diag,
            masked=bool(d.get("masked", False)),
        )


def flags_to_intervals(flags, basis: SplineBasis) -> list:
    """Merge runs of flagged subintervals into ``(start, end)`` pairs."""
    bp = basis.breakpoints
    out, start = [], None
    for j, f in enumerate(list(flags) + [False]):
        if f and start is None:
            start = j
        elif not f and start is not None:
            out.append((float(bp[start]), float(bp[j])))
            start = None
    return out


# ------------------------------------------------------------------ problem


class _Problem:
    """Smoothed loss plus a quadratic penalty ``x' P x`` in ``x = (alpha, theta)``."""

    def __init__(self, X, Y, spec: SmoothedLossSpec, P, offset=0.0):
        self.X, self.Y, self.spec, self.P, self.offset = X, Y, spec, P, offset
        self.n = Y.size

    def value(self, x) -> float:
        r = self.Y - self.X @ x
        return float(np.mean(smoothed_check(self.spec, r)) + x @ self.P @ x + self.offset)

    def grad(self, x) -> np.ndarray:
        v = self.X @ x - self.Y
        return self.X.T @ smoothed_grad_scalar(self.spec, v) / self.n + 2.0 * self.P @ x

    def hess(self, x) -> np.ndarray:
        v = self.X @ x - self.Y
        w = smoothed_hess_scalar(self.spec, v) / self.n
        return (self.X * w[:, None]).T @ self.X + 2.0 * self.P


def _solve_psd(H, g):
    """Solve ``H d = g`` by Cholesky, adding ridge ``1e-8 trace / dim`` if needed."""
    try:
        return linalg.cho_solve(linalg.cho_factor(H, check_finite=False), g, check_finite=False), 0.0
    except linalg.LinAlgError:
        pass
    base = 1e-8 * max(np.trace(H), 1e-300) / H.shape[0]
    ridge = base
    for _ in range(12):
        try:
            Hr = H + ridge * np.eye(H.shape[0])
            return linalg.cho_solve(linalg.cho_factor(Hr, check_finite=False), g, check_finite=False), ridge
        except linalg.LinAlgError:
            ridge *= 10.0
    raise ConvergenceError("Hessian singular beyond ridge repair")


def _line_search(prob: _Problem, x, f, free, g, d, cfg: SolverConfig):
    """Armijo backtracking along ``-d``; steps longer than ``10 (1 + |x|)``
    are shortened first. Returns ``(x_new, f_new)`` or ``(None, None)``."""
    cap = 10.0 * (1.0 + np.linalg.norm(x))
    size = np.linalg.norm(d)
    if not np.isfinite(size) or size == 0.0:
        return None, None
    if size > cap:
        d = d * (cap / size)
    slope = float(g @ d)
    if slope <= 0.0:
        return None, None
    eta = 1.0
    while eta >= cfg.ls_min_step:
        xn = x.copy()
        xn[free] -= eta * d
        fn = prob.value(xn)
        if fn <= f - cfg.ls_c1 * eta * slope and fn < f:
            return xn, fn
        eta *= cfg.ls_rho
    return None, None


def _newton(prob: _Problem, x0, free, cfg: SolverConfig, max_iter=None):
    """Damped Newton with Armijo backtracking over the ``free`` coordinates.

    Returns ``(x, trace, iterations, converged, max_ridge)``; ``trace`` holds
    the objective after every accepted step (starting value first).
    """
    max_iter = cfg.max_inner if max_iter is None else max_iter
    x = np.array(x0, dtype=float)
    x[~free] = 0.0
    f = prob.value(x)
    trace = [f]
    tol = cfg.tol_inner
    max_ridge = 0.0
    for it in range(1, max_iter + 1):
        g = prob.grad(x)[free]
        if np.max(np.abs(g), initial=0.0) <= 1e-12 * (1.0 + abs(f)):
            return x, trace, it - 1, True, max_ridge
        H = prob.hess(x)[np.ix_(free, free)]
        d, ridge = _solve_psd(H, g)
        max_ridge = max(max_ridge, ridge)
        xn, fn = _line_search(prob, x, f, free, g, d, cfg)
        if xn is None:
            # a (near-)flat Hessian can point nowhere useful; retry along -g
            xn, fn = _line_search(prob, x, f, free, g, g, cfg)
        if xn is None:
            newton_dec = float(g @ d)
            if newton_dec <= 1e-12 * (1.0 + abs(f)) or np.max(np.abs(g)) <= 1e-10 * (1.0 + abs(f)):
                # no descent left at floating-point resolution
                return x, trace, it, True, max_ridge
            raise ConvergenceError(
                f"line search failed: objective {f:.6g} not decreased "
                f"(Newton decrement {newton_dec:.3g})")
        step = np.linalg.norm(xn - x)
        df = f - fn
        x, f = xn, fn
        trace.append(f)
        if step <= tol * (1.0 + np.linalg.norm(x)) and df <= tol * (1.0 + abs(f)):
            return x, trace, it, True, max_ridge
    return x, trace, max_iter, False, max_ridge


# ------------------------------------------------------------------ helpers


def roughness_matrix(gram_set: GramSet, gamma) -> np.ndarray:
    """``Gamma kron V``."""
    return np.kron(np.diag(np.asarray(gamma, dtype=float)), gram_set.deriv_gram)


def _penalty_matrix(d: int, theta_block) -> np.ndarray:
    P = np.zeros((d + theta_block.shape[0],) * 2)
    P[d:, d:] = theta_block
    return P


def _check(design: DesignMatrices, basis: SplineBasis, gram_set: GramSet, Y):
    if design.basis is not basis and (design.basis.n_basis != basis.n_basis):
        raise ValueError("design was assembled with a different basis")
    if gram_set.full_gram.shape[0] != basis.n_basis:
        raise ValueError("gram set does not match the basis")
    if design.U.shape[1] % basis.n_basis:
        raise ValueError("U width is not a multiple of the basis size")
    Y = np.asarray(Y, dtype=float).ravel()
    if Y.size != design.n:
        raise ValueError(f"{Y.size} responses for {design.n} design rows")
    return Y


def _initial_x(design: DesignMatrices, Y, tau: float) -> np.ndarray:
    x = np.zeros(design.d + design.U.shape[1])
    x[0] = np.quantile(Y, tau)
    return x


def extract_null_regions(theta, basis: SplineBasis, gram_set: GramSet, threshold) -> np.ndarray:
    """Flag subintervals whose RMS of ``beta_l`` is below ``threshold``.

    ``threshold`` is a scalar or one value per covariate. Returns an
    ``(m, K)`` boolean array; see :func:`flags_to_intervals` for merging.
    """
    s = subinterval_norms(basis, gram_set, theta)
    thr = np.broadcast_to(np.asarray(threshold, dtype=float).reshape(-1, 1), (s.shape[0], 1))
    return s < thr


def active_mask(flags, basis: SplineBasis) -> np.ndarray:
    """Coefficients allowed to stay nonzero: those not active on any flagged
    subinterval, which makes ``beta_l`` vanish on every flagged subinterval."""
    p = basis.degree
    keep = np.ones((flags.shape[0], basis.n_basis), dtype=bool)
    for l, fl in enumerate(flags):
        for j in np.flatnonzero(fl):
            keep[l, j:j + p + 1] = False
    return keep.ravel()


def support_mask(flags, basis: SplineBasis) -> np.ndarray:
    """Coefficients allowed to stay nonzero: those with at least one
    unflagged subinterval in their support."""
    keep = np.ones((flags.shape[0], basis.n_basis), dtype=bool)
    for l, fl in enumerate(flags):
        for k in range(basis.n_basis):
            lo, hi = basis.support(k)
            keep[l, k] = not fl[lo:hi + 1].all()
    return keep.ravel()


def _finish(design, basis, gram_set, cfg, Y, x, flags, free, trace, inner, converged, iters, extra,
            masked=False):
    d = design.d
    theta = x[d:].copy()
    theta[~free] = 0.0
    spec = cfg.loss_spec(design)
    lam = cfg.per_covariate("lam", design.m)
    if masked:
        X, P = _signal_problem_parts(design, gram_set, cfg, flags)
    else:
        X = design.full
        P = _penalty_matrix(d, roughness_matrix(gram_set, cfg.per_covariate("gamma", design.m)))
    prob = _Problem(X, Y, spec, P)
    xx = np.concatenate([x[:d], theta])
    obj = prob.value(xx)
    if np.any(lam > 0):
        obj += fscad_value(basis, gram_set, [ScadParams(v, cfg.a) for v in lam], theta)
    return FitResult(
        alpha=x[:d].copy(), theta=theta, basis=basis, tau=cfg.tau,
        bandwidth=spec.bandwidth_h, null_flags=flags, objective_trace=trace,
        inner_traces=inner, converged=converged, iterations=iters, free_mask=free,
        objective=float(obj), diagnostics=extra, masked=masked,
    )


# ------------------------------------------------------------------ solvers


def fit_sql(design: DesignMatrices, basis: SplineBasis, gram_set: GramSet, config: SolverConfig,
            Y=None, free_mask=None, x0=None) -> FitResult:
    """Smoothed quantile loss plus roughness penalty (no sparsity penalty).

    ``free_mask`` restricts the fit to a subset of spline coefficients (the
    rest are held at exactly zero); ``x0`` warm-starts ``(alpha, theta)``.
    ``Y`` defaults to ``design.Y`` if the design carries one.
    """
    Y = _check(design, basis, gram_set, design_response(design, Y))
    d, m = design.d, design.m
    spec = config.loss_spec(design)
    P = _penalty_matrix(d, roughness_matrix(gram_set, config.per_covariate("gamma", m)))
    prob = _Problem(design.full, Y, spec, P)
    theta_free = np.ones(design.U.shape[1], bool) if free_mask is None else np.asarray(free_mask, bool)
    free = np.concatenate([np.ones(d, bool), theta_free])
    x0 = _initial_x(design, Y, config.tau) if x0 is None else np.asarray(x0, float)
    x, trace, it, conv, ridge = _newton(prob, x0, free, config)
    flags = np.zeros((m, basis.num_subintervals), bool)
    grad = prob.grad(x)[free]
    extra = {"grad_norm": float(np.linalg.norm(grad)), "ridge": ridge, "mode": "sql"}
    if ridge:
        logger.warning("Hessian needed ridge %.3g", ridge)
    return _finish(design, basis, gram_set, config, Y, x, flags, theta_free, trace, [trace], conv,
                   (0, it), extra)


def design_response(design, Y):
    if Y is None:
        Y = getattr(design, "Y", None)
    if Y is None:
        raise ValueError("response Y is required")
    return Y


def zero_thresholds(basis, gram_set, theta, cfg: SolverConfig, lam) -> np.ndarray:
    if cfg.zero_threshold is not None:
        return np.where(lam > 0, cfg.zero_threshold, 0.0)
    s = subinterval_norms(basis, gram_set, theta)
    smax = float(s.max(initial=0.0))
    rel = cfg.zero_threshold_rel
    return np.where(lam > 0, np.maximum(rel * smax, rel * lam), 0.0)


def fit_close(design: DesignMatrices, basis: SplineBasis, gram_set: GramSet, config: SolverConfig,
              Y=None, init: FitResult | None = None) -> FitResult:
    """Locally sparse fit: LQA outer loop, Newton inner loop, thresholding
    and an optional roughness-only polish on the surviving coefficients."""
    Y = _check(design, basis, gram_set, design_response(design, Y))
    d, m = design.d, design.m
    lam = config.per_covariate("lam", m)
    if not np.any(lam > 0):
        res = fit_sql(design, basis, gram_set, config, Y=Y)
        res.diagnostics["mode"] = "close(lambda=0)"
        return res
    spec = config.loss_spec(design)
    rough = roughness_matrix(gram_set, config.per_covariate("gamma", m))
    params = [ScadParams(v, config.a) for v in lam]
    X = design.full
    free = np.ones(X.shape[1], bool)

    start = init if init is not None else fit_sql(design, basis, gram_set, config, Y=Y)
    x = np.concatenate([start.alpha, start.theta])

    def true_objective(xx):
        prob = _Problem(X, Y, spec, _penalty_matrix(d, rough))
        return prob.value(xx) + fscad_value(basis, gram_set, params, xx[d:])

    trace = [true_objective(x)]
    inner_traces = []
    total_inner, converged, max_ridge = 0, False, 0.0
    outer = 0
    for outer in range(1, config.max_outer + 1):
        W = lqa_weights(basis, gram_set, params, x[d:], epsilon=config.epsilon)
        prob = _Problem(X, Y, spec, _penalty_matrix(d, rough + W.W_tau), offset=W.offset)
        x_new, itrace, it, _, ridge = _newton(prob, x, free, config)
        max_ridge = max(max_ridge, ridge)
        inner_traces.append(itrace)
        total_inner += it
        f_new = true_objective(x_new)
        dx = np.linalg.norm(x_new - x)
        df = abs(trace[-1] - f_new)
        x = x_new
        trace.append(f_new)
        if dx <= config.tol_outer * (1.0 + np.linalg.norm(x)) and df <= config.tol_outer * (1.0 + abs(f_new)):
            converged = True
            break
    thr = zero_thresholds(basis, gram_set, x[d:], config, lam)
    flags = extract_null_regions(x[d:], basis, gram_set, thr)
    extra = {"mode": "close", "ridge": max_ridge, "zero_threshold": thr.tolist(),
             "lqa_rms": subinterval_norms(basis, gram_set, x[d:]).tolist()}
    theta_free = active_mask(flags, basis) if config.zero_mode == "active" else support_mask(flags, basis)
    x[d:][~theta_free] = 0.0
    polish_it = 0
    masked = bool(config.polish and config.restrict_curves)
    if masked:
        ref = refit_signal_region(design, basis, gram_set, config, flags, Y=Y, x0=x,
                                  free_mask=theta_free)
        x = np.concatenate([ref.alpha, ref.theta])
        polish_it = ref.iterations
        extra["polish_converged"] = ref.converged
    elif config.polish:
        P = _penalty_matrix(d, rough)
        pprob = _Problem(X, Y, spec, P)
        pfree = np.concatenate([np.ones(d, bool), theta_free])
        x, ptrace, polish_it, pconv, ridge = _newton(pprob, x, pfree, config)
        extra["polish_converged"] = bool(pconv)
        extra["ridge"] = max(max_ridge, ridge)
    return _finish(design, basis, gram_set, config, Y, x, flags, theta_free, trace, inner_traces,
                   converged, (outer, total_inner + polish_it), extra, masked=masked)


def predict_quantile(fit: FitResult, z_row, u_row) -> float:
    """Predicted conditional quantile ``z' alpha + u' theta``."""
    z_row = np.asarray(z_row, dtype=float)
    u_row = np.asarray(u_row, dtype=float)
    if z_row.shape[-1] != fit.alpha.size or u_row.shape[-1] != fit.theta.size:
        raise ValueError("design row does not match the fitted dimensions")
    return z_row @ fit.alpha + u_row @ fit.theta


def with_config(config: SolverConfig, **changes) -> SolverConfig:
    return replace(config, **changes)


@dataclass
class SignalRefit:
    """Roughness-only fit that uses each curve only on its unflagged subintervals."""

    alpha: np.ndarray
    theta: np.ndarray
    free_mask: np.ndarray
    residuals: np.ndarray
    converged: bool
    iterations: int
    hessian: np.ndarray  # loss Hessian on the free coordinates
    penalty: np.ndarray  # matching block of the roughness penalty (times 2)


def _signal_problem_parts(design: DesignMatrices, gram_set: GramSet, config: SolverConfig, flags):
    """Design ``[Z, U_S]`` and penalty restricted to the unflagged subintervals."""
    keep = ~np.asarray(flags, dtype=bool)
    dsub = gram_set.deriv_sub_grams
    if dsub is None:
        raise ValueError("gram set lacks per-subinterval derivative Grams")
    gam = config.per_covariate("gamma", design.m)
    blocks = [g * np.einsum("j,jik->ik", kp.astype(float), dsub) for g, kp in zip(gam, keep)]
    P = _penalty_matrix(design.d, linalg.block_diag(*blocks))
    return np.hstack([design.Z, design.restricted_U(keep)]), P


def refit_signal_region(design: DesignMatrices, basis: SplineBasis, gram_set: GramSet,
                        config: SolverConfig, flags, Y=None, x0=None,
                        free_mask=None) -> SignalRefit:
    """Refit with ``beta_l(t) = B(t)' theta_l 1{t not flagged}``.

    The curves enter only through their integrals over the estimated signal
    region, so ``beta_l`` need not reach zero smoothly at its edges. The
    roughness penalty is restricted to the same region. Coefficients whose
    support is entirely flagged are fixed at zero unless ``free_mask`` says
    otherwise.
    """
    Y = _check(design, basis, gram_set, design_response(design, Y))
    flags = np.asarray(flags, dtype=bool)
    d = design.d
    X, P = _signal_problem_parts(design, gram_set, config, flags)
    prob = _Problem(X, Y, config.loss_spec(design), P)
    theta_free = support_mask(flags, basis) if free_mask is None else np.asarray(free_mask, bool)
    free = np.concatenate([np.ones(d, bool), theta_free])
    x0 = _initial_x(design, Y, config.tau) if x0 is None else np.asarray(x0, float)
    x, _, it, conv, ridge = _newton(prob, x0, free, config)
    if ridge:
        logger.warning("Hessian needed ridge %.3g", ridge)
    H = prob.hess(x)[np.ix_(free, free)]
    Pf = 2.0 * P[np.ix_(free, free)]
    return SignalRefit(alpha=x[:d].copy(), theta=x[d:].copy(), free_mask=theta_free,
                       residuals=Y - X @ x, converged=bool(conv), iterations=it,
                       hessian=H - Pf, penalty=Pf)
