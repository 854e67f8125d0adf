"""Convolution-smoothed check loss and its derivatives.

Two sign conventions are used on purpose. :func:`smoothed_check` takes a
residual ``u = y - fitted``. The derivative helpers take the negated
residual ``v = fitted - y``, so that the gradient of the empirical loss in
``beta`` is ``mean((G_h(v) - tau) * x)`` and the Hessian is
``mean(K_h(v) * x x')``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import ndtr

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Kernel(str, enum.Enum):
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"
    EPANECHNIKOV = "epanechnikov"


@dataclass(frozen=True)
class SmoothedLossSpec:
    tau: float
    bandwidth_h: float
    kernel: Kernel = Kernel.GAUSSIAN

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if not (self.bandwidth_h > 0 and np.isfinite(self.bandwidth_h)):
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth_h}")
        object.__setattr__(self, "kernel", Kernel(self.kernel))


def check_loss(u, tau: float):
    """Quantile check loss ``u * (tau - 1{u < 0})``."""
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0))


def kernel_pdf(kernel: Kernel, x):
    x = np.asarray(x, dtype=float)
    if kernel is Kernel.GAUSSIAN:
        return _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    if kernel is Kernel.UNIFORM:
        return np.where(np.abs(x) <= 1.0, 0.5, 0.0)
    return np.where(np.abs(x) <= 1.0, 0.75 * (1.0 - x * x), 0.0)


def kernel_cdf(kernel: Kernel, x):
    x = np.asarray(x, dtype=float)
    if kernel is Kernel.GAUSSIAN:
        return ndtr(x)
    xc = np.clip(x, -1.0, 1.0)
    if kernel is Kernel.UNIFORM:
        return 0.5 * (xc + 1.0)
    return 0.25 * (2.0 + 3.0 * xc - xc ** 3)


def _lg(x):
    return _SQRT_2_OVER_PI * np.exp(-0.5 * x * x) + x * (1.0 - 2.0 * ndtr(-x))


def smoothed_check(spec: SmoothedLossSpec, u):
    """``(rho_tau * K_h)(u)`` evaluated at residuals ``u``."""
    u = np.asarray(u, dtype=float)
    h, tau = spec.bandwidth_h, spec.tau
    x = u / h
    if spec.kernel is Kernel.GAUSSIAN:
        return 0.5 * h * _lg(x) + (tau - 0.5) * u
    inside = np.abs(x) < 1.0
    if spec.kernel is Kernel.UNIFORM:
        core = h * (0.25 * x * x + 0.25)
    else:
        core = 0.5 * h * (0.75 * x * x - x ** 4 / 8.0 + 3.0 / 8.0)
    return (tau - 0.5) * u + np.where(inside, core, 0.5 * np.abs(u))


def smoothed_grad_scalar(spec: SmoothedLossSpec, v):
    """``G_h(v) - tau`` with ``v = fitted - y``."""
    return kernel_cdf(spec.kernel, np.asarray(v, dtype=float) / spec.bandwidth_h) - spec.tau


def smoothed_hess_scalar(spec: SmoothedLossSpec, v):
    """``K_h(v) = K(v / h) / h``."""
    h = spec.bandwidth_h
    return kernel_pdf(spec.kernel, np.asarray(v, dtype=float) / h) / h


def numeric_smoothed_check(spec: SmoothedLossSpec, u: float, pdf=None) -> float:
    """Evaluate ``int rho_tau(v) K_h(v - u) dv`` by adaptive quadrature.

    ``pdf`` overrides the kernel density (it must be symmetric and integrate
    to one); otherwise ``spec.kernel`` is used. The integration window is
    ``u +- 10 h``, which holds all but ~1e-23 of the Gaussian mass.
    """
    h = spec.bandwidth_h
    pdf = pdf or (lambda x: kernel_pdf(spec.kernel, x))

    def f(v):
        return float(check_loss(v, spec.tau)) * float(pdf((v - u) / h)) / h

    lo, hi = u - 10.0 * h, u + 10.0 * h
    pts = [0.0] if lo < 0.0 < hi else None
    val, _ = integrate.quad(f, lo, hi, points=pts, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def default_bandwidth(K: int, p: int, d: int, n: int) -> float:
    """Plug-in bandwidth ``((K + p + d) / n) ** 0.4``."""
    if n <= 0:
        raise ValueError("n must be positive")
    if min(K, p + 1, d) <= 0:
        raise ValueError("K, d must be positive and p non-negative")
    return ((K + p + d) / n) ** 0.4
