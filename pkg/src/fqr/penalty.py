"""SCAD, its functional (subinterval) version, and local quadratic weights."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from .basis import GramSet, SplineBasis


@dataclass(frozen=True)
class ScadParams:
    lam: float
    a: float = 3.7

    def __post_init__(self):
        if self.a <= 2:
            raise ValueError(f"SCAD requires a > 2, got {self.a}")
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")


def _nonneg(u):
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValueError("SCAD is defined for non-negative arguments")
    return u


def scad(params: ScadParams, u):
    """SCAD penalty value at ``u >= 0``."""
    u = _nonneg(u)
    lam, a = params.lam, params.a
    mid = -(u * u - 2 * a * lam * u + lam * lam) / (2 * (a - 1))
    return np.where(u <= lam, lam * u, np.where(u < a * lam, mid, 0.5 * (a + 1) * lam * lam))


def scad_deriv(params: ScadParams, u):
    """SCAD derivative at ``u >= 0`` (right derivative at 0)."""
    u = _nonneg(u)
    lam, a = params.lam, params.a
    return np.where(u <= lam, lam, np.maximum(a * lam - u, 0.0) / (a - 1))


def _as_params(params, m: int) -> list[ScadParams]:
    if isinstance(params, ScadParams):
        return [params] * m
    params = list(params)
    if len(params) != m:
        raise ValueError(f"need {m} SCAD parameter sets, got {len(params)}")
    return params


def split_theta(theta, n_basis: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size % n_basis:
        raise ValueError(f"theta of length {theta.size} is not a multiple of {n_basis}")
    return theta.reshape(-1, n_basis)


def subinterval_quad(gram_set: GramSet, theta_l) -> np.ndarray:
    """``theta_l' W_j theta_l`` for every subinterval ``j``."""
    q = np.einsum("i,jik,k->j", theta_l, gram_set.sub_grams, theta_l)
    return np.maximum(q, 0.0)


def subinterval_norms(basis: SplineBasis, gram_set: GramSet, theta) -> np.ndarray:
    """Root-mean-square of each ``beta_l`` on each subinterval, shape ``(m, K)``.

    This is ``sqrt((K / T) theta_l' W_j theta_l)``.
    """
    scale = basis.num_subintervals / basis.length
    blocks = split_theta(theta, basis.n_basis)
    return np.sqrt(scale * np.array([subinterval_quad(gram_set, th) for th in blocks]))


def fscad_value(basis: SplineBasis, gram_set: GramSet, params, theta) -> float:
    """Sum over covariates and subintervals of SCAD at the subinterval RMS."""
    s = subinterval_norms(basis, gram_set, theta)
    params = _as_params(params, s.shape[0])
    return float(sum(scad(pr, s_l).sum() for pr, s_l in zip(params, s)))


@dataclass(frozen=True)
class LqaWeights:
    """Block-diagonal quadratic weight matrix and the constant offset.

    ``theta' W_tau theta + offset`` approximates the fSCAD value near the
    anchor where the weights were computed.
    """

    W_tau: np.ndarray
    blocks: tuple
    offset: float
    epsilon: float

    def quad(self, theta) -> float:
        return float(theta @ self.W_tau @ theta)


def default_epsilon(basis: SplineBasis) -> float:
    return 1e-6 * basis.spacing


def lqa_weights(basis: SplineBasis, gram_set: GramSet, params, theta_anchor,
                epsilon: float | None = None) -> LqaWeights:
    """Modified LQA weights at ``theta_anchor``.

    Each block is ``0.5 * sum_j pdot(s_j) / (sqrt((T/K) th' W_j th) + eps) W_j``
    with ``s_j`` the subinterval RMS at the anchor.
    """
    theta_anchor = np.asarray(theta_anchor, dtype=float)
    if not np.all(np.isfinite(theta_anchor)):
        raise ValueError("non-finite LQA anchor")
    eps = default_epsilon(basis) if epsilon is None else float(epsilon)
    K, T = basis.num_subintervals, basis.length
    blocks = split_theta(theta_anchor, basis.n_basis)
    params = _as_params(params, blocks.shape[0])
    mats, offset = [], 0.0
    for pr, th in zip(params, blocks):
        qj = subinterval_quad(gram_set, th)
        s = np.sqrt(K / T * qj)
        dp = scad_deriv(pr, s)
        coef = 0.5 * dp / (np.sqrt(T / K * qj) + eps)
        mats.append(np.einsum("j,jik->ik", coef, gram_set.sub_grams))
        offset += float(np.sum(scad(pr, s) - 0.5 * dp * s))
    W = block_diag(*mats) if mats else np.zeros((0, 0))
    W = 0.5 * (W + W.T)
    return LqaWeights(W_tau=W, blocks=tuple(mats), offset=offset, epsilon=eps)
