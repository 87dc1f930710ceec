"""Closed-form optimal linear classifiers on the binary Gaussian mixture.

With ``w = 1`` the classifier is ``sign(sum(x) + b)``. The natural optimum
``b_nat = g(eta)`` balances the two class densities at the boundary; the
ell-infinity robust optimum is the same function evaluated at
``eta - eps`` because the worst-case shift moves both class means ``eps``
per coordinate towards the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .distributions import MixtureSpec


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class ClasswiseErrorPair:
    err_minus: float
    err_plus: float

    def __post_init__(self):
        for v in (self.err_minus, self.err_plus):
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"error probability out of range: {v}")

    @property
    def average(self) -> float:
        return 0.5 * (self.err_minus + self.err_plus)

    def as_tuple(self) -> tuple[float, float]:
        return (self.err_minus, self.err_plus)


@dataclass(frozen=True)
class ClosedFormTerms:
    a_term: float
    b_term: float
    q_k: float
    b_nat: float
    b_rob: float


def std_normal_cdf(z):
    """Phi(z). Scalars go through ``math.erfc``; arrays through ``ndtr``."""
    if np.ndim(z) == 0:
        z = float(z)
        if not math.isfinite(z):
            raise DomainError(f"std_normal_cdf needs a finite argument, got {z}")
        return 0.5 * math.erfc(-z / math.sqrt(2.0))
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise DomainError("std_normal_cdf needs finite arguments")
    return ndtr(z)


def q_factor(k_ratio: float) -> float:
    """2 log K / (K^2 - 1); tends to 1 as K -> 1+."""
    if not k_ratio > 1:
        raise DomainError(f"q_factor needs K > 1, got {k_ratio}")
    h = k_ratio - 1.0
    return 2.0 * math.log1p(h) / (h * (k_ratio + 1.0))


def _require_plain(spec: MixtureSpec) -> None:
    if spec.m != 0:
        raise DomainError("closed forms for m > 0 go through theorem3_errors")
    if not spec.k_ratio > 1:
        raise DomainError("closed forms need k_ratio > 1; use linear_classwise_errors for K = 1")


def _check_eps(spec: MixtureSpec, eps: float, allow_zero: bool) -> None:
    if eps < 0 or (eps == 0 and not allow_zero):
        raise DomainError(f"eps must be {'>=' if allow_zero else '>'} 0, got {eps}")
    if eps >= spec.eta:
        raise DomainError(f"eps={eps} must be below eta={spec.eta}")


def optimal_intercept(projected_mean: float, weight_norm_sq: float, sigma: float, k_ratio: float) -> float:
    """Bias minimising the average error of ``sign(w.x + b)`` for a fixed ``w``.

    ``projected_mean`` is ``w . theta`` and ``weight_norm_sq`` is ``|w|^2``.
    Solves ``phi(z_minus) = phi(z_plus) / K`` for the smaller root. The
    rationalised form avoids cancellation as ``K -> 1``.
    """
    k2m1 = (k_ratio - 1.0) * (k_ratio + 1.0)
    q = q_factor(k_ratio)
    a = projected_mean
    root = math.sqrt(4.0 * a * a + k2m1 * k2m1 * weight_norm_sq * sigma * sigma * q)
    if a >= 0:
        return k2m1 * (a * a - k_ratio**2 * weight_norm_sq * sigma * sigma * q) / ((k_ratio**2 + 1.0) * a + k_ratio * root)
    return ((k_ratio**2 + 1.0) * a - k_ratio * root) / k2m1


def _g(d: int, eta: float, sigma: float, k_ratio: float) -> float:
    return optimal_intercept(d * eta, float(d), sigma, k_ratio)


def natural_intercept(spec: MixtureSpec) -> float:
    """b_nat = (K^2+1)/(K^2-1) d eta - K sqrt(4 d^2 eta^2/(K^2-1)^2 + d sigma^2 q(K))."""
    _require_plain(spec)
    return _g(spec.d, spec.eta, spec.sigma, spec.k_ratio)


def robust_intercept(spec: MixtureSpec, eps: float) -> float:
    _require_plain(spec)
    _check_eps(spec, eps, allow_zero=True)
    return _g(spec.d, spec.eta - eps, spec.sigma, spec.k_ratio)


def _scaled_mean(d: int, eta: float, sigma: float, k_ratio: float) -> float:
    return 2.0 / ((k_ratio - 1.0) * (k_ratio + 1.0)) * (math.sqrt(d) * eta / sigma)


def closed_form_terms(spec: MixtureSpec, eps: float = 0.0) -> ClosedFormTerms:
    _require_plain(spec)
    _check_eps(spec, eps, allow_zero=True)
    return ClosedFormTerms(
        a_term=_scaled_mean(spec.d, spec.eta, spec.sigma, spec.k_ratio),
        b_term=_scaled_mean(spec.d, spec.eta - eps, spec.sigma, spec.k_ratio),
        q_k=q_factor(spec.k_ratio),
        b_nat=natural_intercept(spec),
        b_rob=robust_intercept(spec, eps),
    )


def _errors_from_scaled(a: float, k_ratio: float, shift_minus: float = 0.0, shift_plus: float = 0.0) -> ClasswiseErrorPair:
    root = math.sqrt(a * a + q_factor(k_ratio))
    return ClasswiseErrorPair(
        std_normal_cdf(a - k_ratio * root - shift_minus),
        std_normal_cdf(-k_ratio * a + root - shift_plus),
    )


def classwise_std_error_natural(spec: MixtureSpec) -> ClasswiseErrorPair:
    _require_plain(spec)
    return _errors_from_scaled(_scaled_mean(spec.d, spec.eta, spec.sigma, spec.k_ratio), spec.k_ratio)


def classwise_std_error_robust(spec: MixtureSpec, eps: float) -> ClasswiseErrorPair:
    """Clean errors of the ell-infinity robust optimum ``(1, b_rob)``."""
    _require_plain(spec)
    _check_eps(spec, eps, allow_zero=True)
    b = _scaled_mean(spec.d, spec.eta - eps, spec.sigma, spec.k_ratio)
    rd = math.sqrt(spec.d)
    return _errors_from_scaled(b, spec.k_ratio, rd / spec.sigma * eps, rd / (spec.k_ratio * spec.sigma) * eps)


def classwise_rob_error_robust(spec: MixtureSpec, eps: float) -> ClasswiseErrorPair:
    _require_plain(spec)
    _check_eps(spec, eps, allow_zero=True)
    return _errors_from_scaled(_scaled_mean(spec.d, spec.eta - eps, spec.sigma, spec.k_ratio), spec.k_ratio)


def linear_classwise_errors(spec: MixtureSpec, w, b: float, eps: float = 0.0, norm: str = "linf"):
    """Exact (standard, robust) error pairs of ``sign(w.x + b)`` on ``spec``.

    The projection ``w.x`` is Gaussian, so each class error is a single
    normal tail. The worst ell-infinity perturbation moves the projection by
    ``eps * |w|_1`` against the true label; ell-2 moves it by ``eps * |w|_2``.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (spec.dim,):
        raise DomainError(f"weight vector must have length {spec.dim}")
    if not np.any(w):
        raise DomainError("weight vector is zero")
    if eps < 0:
        raise DomainError("eps must be non-negative")
    if norm == "linf":
        shift = eps * float(np.abs(w).sum())
    elif norm == "l2":
        shift = eps * float(np.linalg.norm(w))
    else:
        raise DomainError(f"unknown norm {norm!r}")
    proj = float(w @ spec.theta)
    wn = float(np.linalg.norm(w))
    s_minus = spec.sigma * wn
    s_plus = spec.k_ratio * spec.sigma * wn
    std = ClasswiseErrorPair(
        std_normal_cdf((b - proj) / s_minus),
        std_normal_cdf((-b - proj) / s_plus),
    )
    rob = ClasswiseErrorPair(
        std_normal_cdf((b - proj + shift) / s_minus),
        std_normal_cdf((-b - proj + shift) / s_plus),
    )
    return std, rob


@dataclass(frozen=True)
class Theorem3Result:
    natural_std: ClasswiseErrorPair
    natural_rob: ClasswiseErrorPair
    robust_std: ClasswiseErrorPair
    robust_rob: ClasswiseErrorPair
    natural_weights: np.ndarray
    natural_bias: float
    robust_weights: np.ndarray
    robust_bias: float

    @property
    def rise_minus(self) -> float:
        return self.robust_std.err_minus - self.natural_std.err_minus

    @property
    def rise_plus(self) -> float:
        return self.robust_std.err_plus - self.natural_std.err_plus

    @property
    def gap_holds(self) -> bool:
        return self.rise_plus > self.rise_minus


def theorem3_errors(spec: MixtureSpec, eps: float) -> Theorem3Result:
    """Errors on the robust/non-robust feature mixture.

    The natural model weights every coordinate by its mean (``w = theta``);
    the robust model drops the non-robust coordinates (``w = (1_d, 0_m)``).
    The verdict is computed from the exact expressions, no asymptotics.
    """
    if spec.m <= 0:
        raise DomainError("theorem3_errors needs m > 0; use the plain closed forms")
    if not spec.k_ratio > 1:
        raise DomainError("theorem3_errors needs k_ratio > 1")
    if not spec.gamma < eps < spec.eta:
        raise DomainError(f"need gamma < eps < eta, got gamma={spec.gamma}, eps={eps}, eta={spec.eta}")
    k, s = spec.k_ratio, spec.sigma
    k2m1 = (k - 1.0) * (k + 1.0)
    a = 2.0 / (s * k2m1) * math.sqrt(spec.m * spec.gamma**2 + spec.d * spec.eta**2)
    b = 2.0 / (s * k2m1) * math.sqrt(spec.d) * (spec.eta - eps)
    rd = math.sqrt(spec.d)
    natural_std = _errors_from_scaled(a, k)
    robust_std = _errors_from_scaled(b, k, rd / s * eps, rd / (k * s) * eps)
    robust_rob = _errors_from_scaled(b, k)

    theta = spec.theta
    w_nat = theta.copy()
    b_nat = optimal_intercept(float(theta @ theta), float(theta @ theta), s, k)
    _, natural_rob = linear_classwise_errors(spec, w_nat, b_nat, eps)
    w_rob = np.concatenate([np.ones(spec.d), np.zeros(spec.m)])
    b_rob = _g(spec.d, spec.eta - eps, s, k)
    return Theorem3Result(natural_std, natural_rob, robust_std, robust_rob, w_nat, b_nat, w_rob, b_rob)
