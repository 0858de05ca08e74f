"""Closed-form variances for the bivariate Gaussian design with a precision variable.

Covariates are two independent standard normals, the propensity is
``expit(theta0 + theta1 w1 + theta2 w2)`` and the outcome is normal with
arm-specific linear means and common noise SD ``sigma``. Every formula
here needs ``theta2 == 0`` (``w2`` is a pure precision variable) and
``gamma2 == beta2`` (no effect modification by ``w2``).

With ``B = E[1 / (pi (1 - pi))] = 2 + 2 cosh(theta0) exp(theta1^2 / 2)``,
which reduces to ``2 (1 + exp(theta1^2 / 2))`` at ``theta0 = 0``::

    sigma2_np  = sigma^2 B + (gamma1 - beta1)^2
    gain_h     = beta2^2 B
    gain_empty = beta2^2 / E[pi (1 - pi)]
    delta_M    = (sigma^2 + beta2^2) (B - 1) / (2 M)
    sigma2_M   = sigma2_np + gain_h + delta_M
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import integrate
from scipy.special import expit

QUAD_NODES = 64
# beyond this slope the integrand's complex poles approach the real axis and
# fixed-order Gauss-Hermite loses accuracy (about 1e-9 at 2, 1e-6 at 3)
GH_MAX_SLOPE = 2.0


@lru_cache(maxsize=8)
def _nodes(k):
    x, w = hermegauss(k)
    return x, w / math.sqrt(2 * math.pi)


def e_pi_one_minus_pi(theta0: float, theta1: float, nodes: int | None = None) -> float:
    """``E[pi (1 - pi)]`` for ``pi = expit(theta0 + theta1 Z)``, ``Z ~ N(0, 1)``.

    Gauss-Hermite with ``nodes`` points (default 64). When ``nodes`` is not
    given and ``|theta1| > GH_MAX_SLOPE``, adaptive quadrature over the
    linear predictor is used instead.
    """
    if theta1 == 0:
        pi = float(expit(theta0))
        return pi * (1 - pi)
    if nodes is None and abs(theta1) > GH_MAX_SLOPE:
        scale = abs(theta1)

        def integrand(eta):
            # density of theta0 + theta1 Z at eta, times the logistic density
            z = (eta - theta0) / scale
            return math.exp(-0.5 * z * z) / (scale * math.sqrt(2 * math.pi)) * float(expit(eta) * expit(-eta))

        val, _ = integrate.quad(integrand, -np.inf, np.inf, epsabs=1e-14, epsrel=1e-12, limit=200)
        return val
    x, w = _nodes(nodes or QUAD_NODES)
    pi = expit(theta0 + theta1 * x)
    return float(np.sum(w * pi * (1 - pi)))


def e_inv_pi_one_minus_pi(theta0: float, theta1: float) -> float:
    """``E[1 / (pi (1 - pi))] = 2 + exp(theta0) M(theta1) + exp(-theta0) M(-theta1)``."""
    return 2.0 + 2.0 * math.cosh(theta0) * math.exp(theta1**2 / 2)


@dataclass(frozen=True)
class AnalyticDesign:
    theta0: float = 0.0
    theta1: float = 1.0
    theta2: float = 0.0
    beta: tuple[float, float, float] = (1.0, 1.0, 1.0)
    gamma: tuple[float, float, float] = (0.0, 1.0, 1.0)
    sigma: float = 1.0
    m: int = 1

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.m < 1:
            raise ValueError("number of matches must be at least 1")
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))

    @property
    def ate(self) -> float:
        return self.beta[0] - self.gamma[0]

    def check_closed_form(self) -> None:
        if self.theta2 != 0:
            raise ValueError("closed forms require theta2 == 0")
        if self.gamma[2] != self.beta[2]:
            raise ValueError("closed forms require gamma2 == beta2")


def analytic_quantities(dz: AnalyticDesign) -> dict:
    dz.check_closed_form()
    _, b1, b2 = dz.beta
    _, g1, _ = dz.gamma
    s2 = dz.sigma**2
    big_b = e_inv_pi_one_minus_pi(dz.theta0, dz.theta1)
    sigma2_np = s2 * big_b + (g1 - b1) ** 2
    gain_h = b2**2 * big_b
    gain_empty = b2**2 / e_pi_one_minus_pi(dz.theta0, dz.theta1)
    delta = (s2 + b2**2) * (big_b - 1) / (2 * dz.m)
    sigma2_M = sigma2_np + gain_h + delta
    return {
        "sigma2_np": sigma2_np,
        "gain_empty": gain_empty,
        "gain_h": gain_h,
        "sigma2_M": sigma2_M,
        "delta_M": delta,
        "sigma2_star": sigma2_M - gain_empty,
        "sigma2_opt": sigma2_M - gain_h,
    }


def relative_efficiency(
    theta1: float,
    beta2bar: float,
    beta1bar: float = 1.0,
    gamma1bar: float = 1.0,
    theta0: float = 0.0,
    m: int = 1,
) -> float:
    """Variance of unaugmented over optimally augmented matching.

    Coefficients are standardized by the noise SD.
    """
    if m < 1:
        raise ValueError("number of matches must be at least 1")
    inv_e = 1.0 / e_pi_one_minus_pi(theta0, theta1)
    # both expectations reduce to 1 / (pi (1 - pi)) when theta1 == 0
    big_b = inv_e if theta1 == 0 else e_inv_pi_one_minus_pi(theta0, theta1)
    num = big_b - inv_e
    den = big_b + (gamma1bar - beta1bar) ** 2 + (1 + beta2bar**2) * (big_b - 1) / (2 * m)
    return 1.0 + beta2bar**2 * num / den
