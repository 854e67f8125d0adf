"""B-spline bases on equally spaced knots and the Gram matrices built from them."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline


@dataclass(frozen=True)
class SplineBasis:
    """Clamped B-spline system of order ``degree + 1`` on ``num_subintervals``
    equal pieces of ``[domain_start, domain_end]``.

    ``knots`` is the full clamped knot vector: the ``K + 1`` breakpoints with
    each boundary knot repeated ``degree`` extra times.
    """

    domain_start: float
    domain_end: float
    num_subintervals: int
    degree: int
    knots: np.ndarray = field(repr=False)

    @property
    def n_basis(self) -> int:
        return self.num_subintervals + self.degree

    @property
    def breakpoints(self) -> np.ndarray:
        p = self.degree
        return self.knots[p:len(self.knots) - p]

    @property
    def length(self) -> float:
        return self.domain_end - self.domain_start

    @property
    def spacing(self) -> float:
        return self.length / self.num_subintervals

    def support(self, k: int) -> tuple[int, int]:
        """Subinterval indices ``(first, last)`` (inclusive, 0-based) on which
        basis function ``k`` can be nonzero."""
        return max(k - self.degree, 0), min(k, self.num_subintervals - 1)

    def active(self, j: int) -> range:
        """Basis indices that are nonzero on subinterval ``j``."""
        return range(j, j + self.degree + 1)

    def locate(self, t) -> np.ndarray:
        """Index of the subinterval containing each ``t``; the last
        subinterval is closed on the right."""
        t = np.asarray(t, dtype=float)
        j = np.floor((t - self.domain_start) / self.spacing).astype(int)
        return np.clip(j, 0, self.num_subintervals - 1)

    def __call__(self, t, derivative: int = 0) -> np.ndarray:
        return eval_basis(self, t, derivative=derivative)


def build_basis(domain=(0.0, 1.0), K: int = 10, p: int = 3) -> SplineBasis:
    """Clamped B-spline basis with ``K`` equal subintervals and degree ``p``.

    Examples
    --------
    >>> b = build_basis((-1.0, 1.0), K=50, p=3)
    >>> b.n_basis
    53
    """
    a, b = float(domain[0]), float(domain[1])
    if not (np.isfinite(a) and np.isfinite(b)) or b <= a:
        raise ValueError(f"degenerate domain {domain!r}")
    if int(K) != K or K < 1:
        raise ValueError(f"K must be a positive integer, got {K!r}")
    if int(p) != p or p < 0:
        raise ValueError(f"p must be a non-negative integer, got {p!r}")
    K, p = int(K), int(p)
    inner = np.linspace(a, b, K + 1)
    knots = np.concatenate([np.full(p, a), inner, np.full(p, b)])
    knots.setflags(write=False)
    return SplineBasis(a, b, K, p, knots)


def eval_basis(basis: SplineBasis, t, derivative: int = 0) -> np.ndarray:
    """Evaluate all basis functions (or a derivative of them) at ``t``.

    Parameters
    ----------
    basis : SplineBasis
    t : float or array_like
        Points inside ``[domain_start, domain_end]``.
    derivative : int
        Derivative order, at most ``basis.degree``.

    Returns
    -------
    ndarray
        Shape ``(K + p,)`` for scalar ``t``, else ``(len(t), K + p)``.
    """
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    tol = 1e-12 * max(1.0, abs(basis.domain_start), abs(basis.domain_end))
    if np.any(~np.isfinite(t)) or np.any(t < basis.domain_start - tol) or np.any(t > basis.domain_end + tol):
        raise ValueError("evaluation points outside the basis domain")
    if derivative < 0 or derivative > basis.degree:
        raise ValueError(f"derivative order {derivative} not in [0, {basis.degree}]")
    t = np.clip(t, basis.domain_start, basis.domain_end)
    out = _identity_spline(basis)(t, nu=derivative)
    return out[0] if scalar else out


def _identity_spline(basis: SplineBasis) -> BSpline:
    # one output column per basis function
    return BSpline(np.asarray(basis.knots), np.eye(basis.n_basis), basis.degree, extrapolate=False)


@dataclass(frozen=True)
class GramSet:
    """Gram matrices of a basis.

    ``sub_grams[j]`` is the Gram matrix restricted to subinterval ``j``;
    these sum to ``full_gram``. ``deriv_gram`` integrates products of
    ``q``-th derivatives over the whole domain and ``deriv_sub_grams[j]``
    over subinterval ``j``.
    """

    full_gram: np.ndarray
    deriv_gram: np.ndarray
    sub_grams: np.ndarray
    q: int
    deriv_sub_grams: np.ndarray | None = None

    @property
    def V(self) -> np.ndarray:
        return self.deriv_gram


def _gauss_nodes(basis: SplineBasis, n_nodes: int):
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    bp = basis.breakpoints
    half = 0.5 * np.diff(bp)
    mid = 0.5 * (bp[:-1] + bp[1:])
    nodes = mid[:, None] + half[:, None] * x[None, :]
    weights = half[:, None] * w[None, :]
    return nodes, weights


def compute_gram_set(basis: SplineBasis, q: int = 2) -> GramSet:
    """Full Gram, ``q``-th derivative Gram and per-subinterval Grams.

    Products of degree-``p`` polynomials are integrated exactly with
    ``p + 2`` Gauss-Legendre nodes per subinterval.
    """
    if q < 0 or q > basis.degree:
        raise ValueError(f"roughness order q={q} must lie in [0, p={basis.degree}]")
    p, K, nb = basis.degree, basis.num_subintervals, basis.n_basis
    n_nodes = int(np.ceil((2 * p + 1) / 2)) + 1
    nodes, weights = _gauss_nodes(basis, n_nodes)

    sub = np.zeros((K, nb, nb))
    dsub = np.zeros((K, nb, nb))
    for j in range(K):
        # evaluate inside subinterval j only so the right-closed convention
        # never moves a node into the neighbour
        B = eval_basis(basis, nodes[j])
        idx = np.arange(j, j + p + 1)
        Bj = B[:, idx]
        sub[j][np.ix_(idx, idx)] = (Bj * weights[j][:, None]).T @ Bj
        D = eval_basis(basis, nodes[j], derivative=q)[:, idx]
        dsub[j][np.ix_(idx, idx)] = (D * weights[j][:, None]).T @ D
    sub = 0.5 * (sub + sub.transpose(0, 2, 1))
    dsub = 0.5 * (dsub + dsub.transpose(0, 2, 1))
    deriv = dsub.sum(axis=0)
    full = sub.sum(axis=0)
    for arr in (sub, dsub, deriv, full):
        arr.setflags(write=False)
    return GramSet(full_gram=full, deriv_gram=deriv, sub_grams=sub, q=q, deriv_sub_grams=dsub)
