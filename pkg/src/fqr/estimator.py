"""scikit-learn style wrapper around the locally sparse quantile fit."""
from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.metrics import mean_pinball_loss
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .basis import build_basis, compute_gram_set
from .design import FunctionalDataset, assemble_design
from .solver import SolverConfig, fit_close, fit_sql
from .tune import TuneGrid, default_grid, tune_fit


class CLoSEQuantileRegressor(RegressorMixin, BaseEstimator):
    """Locally sparse functional quantile regression.

    ``X`` is a wide 2-D array: the scalar covariates first, then each
    functional covariate sampled on ``grid`` (``len(grid)`` columns per
    curve, ``n_functional`` curves). An intercept is always fitted.

    Parameters
    ----------
    grid : array-like
        Shared observation points of the curves.
    n_functional : int, default=1
    tau : float, default=0.5
        Quantile level.
    n_subintervals, degree, roughness_order : int
        Spline basis size ``K``, degree ``p`` and penalised derivative ``q``.
    lam, gamma : float or None
        Sparsity and roughness parameters. ``None`` selects them by BIC over
        ``lambda_grid`` / ``gamma_grid`` (default grid when those are None).
    bandwidth : float, default=0
        Smoothing bandwidth; 0 uses the plug-in rule.
    sparse : bool, default=True
        ``False`` fits the roughness-only baseline.

    Attributes
    ----------
    intercept_, coef_ : fitted intercept and scalar coefficients.
    fit_result_ : :class:`fqr.solver.FitResult`
    best_params_ : ``(lam, gamma)`` actually used.
    """

    def __init__(self, grid=None, n_functional=1, tau=0.5, n_subintervals=50, degree=3,
                 roughness_order=2, lam=None, gamma=None, bandwidth=0.0, sparse=True,
                 lambda_grid=None, gamma_grid=None, df_rule="count"):
        self.grid = grid
        self.n_functional = n_functional
        self.tau = tau
        self.n_subintervals = n_subintervals
        self.degree = degree
        self.roughness_order = roughness_order
        self.lam = lam
        self.gamma = gamma
        self.bandwidth = bandwidth
        self.sparse = sparse
        self.lambda_grid = lambda_grid
        self.gamma_grid = gamma_grid
        self.df_rule = df_rule

    def _split(self, X):
        grid = np.asarray(self.grid, dtype=float)
        G, m = grid.size, int(self.n_functional)
        n_scalar = X.shape[1] - m * G
        if grid.ndim != 1 or G < 2:
            raise ValueError("grid must be a 1-D array with at least two points")
        if n_scalar < 0:
            raise ValueError(f"X has {X.shape[1]} columns, fewer than {m} curves x {G} points")
        Z = np.column_stack([np.ones(X.shape[0]), X[:, :n_scalar]])
        curves = X[:, n_scalar:].reshape(X.shape[0], m, G)
        return grid, Z, curves

    def _design(self, X, y=None):
        grid, Z, curves = self._split(X)
        y = np.zeros(X.shape[0]) if y is None else y
        return assemble_design(FunctionalDataset(grid, curves, Z, y), self.basis_)

    def fit(self, X, y):
        if self.grid is None:
            raise ValueError("grid is required")
        X, y = check_X_y(X, y, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        grid = np.asarray(self.grid, dtype=float)
        self.basis_ = build_basis((grid[0], grid[-1]), self.n_subintervals, self.degree)
        self.gram_set_ = compute_gram_set(self.basis_, self.roughness_order)
        design = self._design(X, y)
        config = SolverConfig(tau=self.tau, bandwidth=self.bandwidth, q=self.roughness_order)
        if not self.sparse:
            gammas = [self.gamma] if self.gamma is not None else \
                (self.gamma_grid or default_grid(design.n, self.n_subintervals).gamma_candidates)
            if len(gammas) == 1:
                fit = fit_sql(design, self.basis_, self.gram_set_, replace(config, gamma=gammas[0]))
                best = (0.0, gammas[0])
            else:
                res = tune_fit(design, self.basis_, self.gram_set_, TuneGrid((0.0,), tuple(gammas)),
                               config, df_rule=self.df_rule)
                fit, best = res.fit, res.best
        elif self.lam is not None and self.gamma is not None:
            fit = fit_close(design, self.basis_, self.gram_set_,
                            replace(config, lam=self.lam, gamma=self.gamma))
            best = (self.lam, self.gamma)
        else:
            dflt = default_grid(design.n, self.n_subintervals)
            lams = [self.lam] if self.lam is not None else (self.lambda_grid or dflt.lambda_candidates)
            gams = [self.gamma] if self.gamma is not None else (self.gamma_grid or dflt.gamma_candidates)
            res = tune_fit(design, self.basis_, self.gram_set_, TuneGrid(tuple(lams), tuple(gams)),
                           config, df_rule=self.df_rule)
            fit, best = res.fit, res.best
            self.score_table_ = res.table
        self.fit_result_ = fit
        self.best_params_ = best
        self.intercept_ = float(fit.alpha[0])
        self.coef_ = fit.alpha[1:].copy()
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_result_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.fit_result_.predict(self._design(X))

    def coef_function(self, t, l: int = 0):
        """Estimated coefficient function of curve ``l`` at ``t``."""
        check_is_fitted(self, "fit_result_")
        return self.fit_result_.beta(t, l)

    def null_regions(self, l: int = 0) -> list:
        check_is_fitted(self, "fit_result_")
        return self.fit_result_.null_regions[l]

    def score(self, X, y, sample_weight=None):
        """Negative mean check loss (higher is better)."""
        return -mean_pinball_loss(y, self.predict(X), alpha=self.tau, sample_weight=sample_weight)
