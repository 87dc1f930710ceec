"""Reference computations that share no code with the package."""

import math

import mpmath as mp
from scipy.optimize import brentq

mp.mp.dps = 40


def phi_hp(z) -> float:
    return float(0.5 * mp.erfc(-mp.mpf(z) / mp.sqrt(2)))


def errors_hp(b, d, eta, sigma, k, shift=0.0):
    """Classwise errors of sign(sum(x) + b), class mean offset reduced by ``shift`` per coordinate."""
    scale = math.sqrt(d) * sigma
    m = d * (eta - shift)
    return phi_hp((b - m) / scale), phi_hp((-b - m) / (k * scale))


def intercept_root(d, eta, sigma, k, eps=0.0):
    """Stationary point of the average error in b, found by root bracketing."""
    scale = math.sqrt(d) * sigma
    m = d * (eta - eps)

    def slope(b):
        return -0.5 * ((b - m) / scale) ** 2 + 0.5 * ((b + m) / (k * scale)) ** 2 + math.log(k)

    # concave in b; the minimiser is the root left of the vertex
    vertex = m * (k * k + 1) / (k * k - 1)
    lo = vertex - 1.0
    while slope(lo) > 0:
        lo = vertex - 2 * (vertex - lo)
    return brentq(slope, lo, vertex, xtol=1e-15, rtol=1e-15)
