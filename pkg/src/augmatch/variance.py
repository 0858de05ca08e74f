"""Plug-in estimates of the large-sample variance of (augmented) matching.

Conditional moments given the propensity are estimated by stratifying on
the fitted score into ``ceil(n ** (1/3))`` equal-count bins and removing a
within-bin linear trend in ``logit(p)``. Covariances and variances given
the propensity are taken over all units; for the true score the covariates
are independent of treatment given the score, so no arm restriction is
needed there. Only the outcome variance given ``(A, p)`` uses a single arm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats
from scipy.special import logit

from .data import Dataset
from .logit import CLAMP, DesignSpec, fisher_info
from .nuisance import AugmentationFn, NuisanceFit


class VarianceError(ValueError):
    pass


def n_strata(n: int) -> int:
    return max(1, math.ceil(n ** (1 / 3) - 1e-9))


def _strata(p, nbins):
    order = np.argsort(p, kind="stable")
    return [b for b in np.array_split(order, nbins) if len(b)]


def stratified_residuals(p, values, nbins: int | None = None):
    """Residuals of ``values`` about their estimated conditional mean given ``p``.

    Each bin gets a least-squares line in ``logit(p)`` (a constant when the
    bin has fewer than four units). Residuals are inflated by
    ``sqrt(n_b / (n_b - k))`` so that averaged products are unbiased for
    within-bin covariances. Returns the residuals and the number of bins
    skipped for having fewer than two units.
    """
    p = np.asarray(p, dtype=float)
    vals = np.asarray(values, dtype=float)
    squeeze = vals.ndim == 1
    vals = vals[:, None] if squeeze else vals
    nbins = nbins or n_strata(len(p))
    t = logit(np.clip(p, *CLAMP))
    out = np.zeros_like(vals)
    skipped = 0
    for b in _strata(p, nbins):
        nb = len(b)
        if nb < 2:
            skipped += 1
            continue
        if nb >= 4 and np.ptp(t[b]) > 0:
            design = np.column_stack([np.ones(nb), t[b] - t[b].mean()])
            k = 2
        else:
            design = np.ones((nb, 1))
            k = 1
        coef, *_ = np.linalg.lstsq(design, vals[b], rcond=None)
        out[b] = (vals[b] - design @ coef) * math.sqrt(nb / (nb - k))
    return (out[:, 0] if squeeze else out), skipped


class StratifiedVariance:
    """Piecewise-constant estimate of ``var(values | p)`` from one sample."""

    def __init__(self, p, values, nbins: int | None = None):
        p = np.asarray(p, dtype=float)
        resid, self.skipped = stratified_residuals(p, values, nbins or n_strata(len(p)))
        bins = _strata(p, nbins or n_strata(len(p)))
        self.upper = np.array([p[b].max() for b in bins])
        self.var = np.array([np.mean(resid[b] ** 2) if len(b) > 1 else np.nan for b in bins])
        if np.all(np.isnan(self.var)):
            raise VarianceError("too few units to estimate a conditional variance")
        # skipped bins borrow the pooled value
        self.var[np.isnan(self.var)] = np.nanmean(self.var)

    def __call__(self, p) -> np.ndarray:
        idx = np.searchsorted(self.upper[:-1], np.asarray(p, dtype=float), side="left")
        return self.var[idx]


def stratified_sbar(d: Dataset, nf: NuisanceFit):
    """``sbar(arm, p)``: outcome variance given treatment arm and propensity."""
    p = nf.pi(d.v)
    fits = {a: StratifiedVariance(p[d.a == a], d.y[d.a == a]) for a in (0, 1)}
    return lambda arm, q: fits[arm](q)


def estimate_sigma2_M(d: Dataset, nf: NuisanceFit, m: int, sbar=None, psi: float | None = None):
    """Return the two components ``(sigma2_1, sigma2_2M)`` of the oracle-score variance."""
    if m < 1:
        raise VarianceError("number of matches must be at least 1")
    sbar = sbar or stratified_sbar(d, nf)
    p = nf.pi(d.v)
    mb1, mb0 = nf.mu_bar_values(1, p), nf.mu_bar_values(0, p)
    if psi is None:
        psi = float(np.mean(mb1 - mb0))
    sb1, sb0 = sbar(1, p), sbar(0, p)
    s1 = np.mean(sb1 / p + sb0 / (1 - p) + (mb1 - mb0 - psi) ** 2)
    s2 = np.mean(sb1 * (1 / p - p) + sb0 * (1 / (1 - p) - 1 + p)) / (2 * m)
    return float(s1), float(s2)


def _regressors(d: Dataset, aug: AugmentationFn | None):
    r = d.w
    if aug is not None:
        r = np.column_stack([r, aug(d.v)])
    return r


def estimate_c_vector(d: Dataset, nf: NuisanceFit, aug: AugmentationFn | None = None) -> np.ndarray:
    """Plug-in for the vector ``c`` (or ``c_q`` with ``q = aug``).

    ``E[pi cov(r, mu(0,W) | pi) + (1 - pi) cov(r, mu(1,W) | pi)]`` with
    ``r = (1, V)`` or ``(1, V, aug(W))``.
    """
    p = nf.pi(d.v)
    r = _regressors(d, aug)
    mu = np.column_stack([nf.mu_values(0, d.v), nf.mu_values(1, d.v)])
    resid, _ = stratified_residuals(p, np.column_stack([r, mu]))
    r_t, mu0_t, mu1_t = resid[:, : r.shape[1]], resid[:, -2], resid[:, -1]
    weight = p * mu0_t + (1 - p) * mu1_t
    return np.mean(r_t * weight[:, None], axis=0)


def information(d: Dataset, nf: NuisanceFit, aug: AugmentationFn | None = None) -> np.ndarray:
    """Plug-in information at (base fit, zero augmentation coefficient)."""
    theta = nf.pi_fit.vartheta
    if aug is None:
        return fisher_info(DesignSpec(d.w), theta)
    return fisher_info(DesignSpec(d.w, aug(d.v)), np.append(theta, 0.0))


def gain(c, info) -> float:
    """``c^T info^{-1} c`` via a Cholesky solve; ``info`` must be positive definite."""
    c = np.asarray(c, dtype=float)
    info = np.asarray(info, dtype=float)
    if info.shape != (c.size, c.size):
        raise VarianceError("information matrix and c vector do not conform")
    if not np.allclose(info, info.T, rtol=1e-10, atol=1e-12):
        raise VarianceError("information matrix is not symmetric")
    try:
        factor = linalg.cho_factor(info)
    except linalg.LinAlgError:
        raise VarianceError("information matrix is not positive definite") from None
    if np.linalg.cond(info) > 1e12:
        raise VarianceError("information matrix is numerically singular")
    return max(0.0, float(c @ linalg.cho_solve(factor, c)))


def gain_h_direct(d: Dataset, nf: NuisanceFit, aug: AugmentationFn) -> float:
    """Optimal gain written as ``mean(pi (1 - pi) h^2)``."""
    p = nf.pi(d.v)
    return float(np.mean(p * (1 - p) * aug(d.v) ** 2))


def np_bound(d: Dataset, nf: NuisanceFit, s2=None, psi: float | None = None) -> float:
    """Plug-in nonparametric efficiency bound.

    ``s2(arm, v)`` gives the outcome variance given treatment and covariates;
    by default the fitted residual-variance regressions in ``nf``.
    """
    s2 = s2 or nf.s2_values
    p = nf.pi(d.v)
    mu1, mu0 = nf.mu_values(1, d.v), nf.mu_values(0, d.v)
    if psi is None:
        psi = float(np.mean(mu1 - mu0))
    return float(np.mean(s2(1, d.v) / p + s2(0, d.v) / (1 - p) + (mu1 - mu0 - psi) ** 2))


def delta_formula(d: Dataset, nf: NuisanceFit, m: int, s2=None) -> float:
    """Excess of the optimally augmented variance over the bound, closed form.

    Uses ``zeta(a, w) = var(mu(a, W) | pi)`` estimated from stratified residuals.
    """
    s2 = s2 or nf.s2_values
    p = nf.pi(d.v)
    mu = np.column_stack([nf.mu_values(0, d.v), nf.mu_values(1, d.v)])
    resid, _ = stratified_residuals(p, mu)
    zeta0, zeta1 = resid[:, 0] ** 2, resid[:, 1] ** 2
    term1 = (1 / p - p) * (s2(1, d.v) + zeta1)
    term0 = (1 / (1 - p) - 1 + p) * (s2(0, d.v) + zeta0)
    return float(np.mean(term1 + term0) / (2 * m))


def wald_ci(psi: float, sigma2_adj: float, n_eff: int, level: float = 0.95) -> tuple[float, float]:
    if sigma2_adj < 0:
        raise VarianceError("variance must be non-negative")
    if not 0 < level < 1:
        raise VarianceError("level must lie in (0, 1)")
    if n_eff < 1:
        raise VarianceError("effective sample size must be positive")
    half = stats.norm.ppf((1 + level) / 2) * math.sqrt(sigma2_adj / n_eff)
    return float(psi - half), float(psi + half)


@dataclass(frozen=True)
class VarianceReport:
    sigma2_1: float
    sigma2_2M: float
    sigma2_M: float
    gain: float
    sigma2_adj: float
    sigma2_np: float
    delta_M: float
    se: float
    ci: tuple[float, float]
    n_eff: int
    level: float
    gain_direct: float = float("nan")
    delta_M_formula: float = float("nan")
    flags: tuple[str, ...] = field(default=())

    def as_dict(self) -> dict:
        return {
            "sigma2_1": self.sigma2_1,
            "sigma2_2M": self.sigma2_2M,
            "sigma2_M": self.sigma2_M,
            "gain": self.gain,
            "gain_direct": self.gain_direct,
            "sigma2_adj": self.sigma2_adj,
            "sigma2_np": self.sigma2_np,
            "delta_M": self.delta_M,
            "delta_M_formula": self.delta_M_formula,
            "se": self.se,
            "ci": list(self.ci),
            "n_eff": self.n_eff,
            "level": self.level,
            "flags": list(self.flags),
        }


def variance_report(
    d: Dataset,
    nf: NuisanceFit,
    m: int,
    psi: float,
    aug: AugmentationFn | None = None,
    level: float = 0.95,
    sbar=None,
    s2=None,
) -> VarianceReport:
    """Assemble every variance quantity for a matching estimate computed on ``d``.

    Without ``aug`` the adjusted variance subtracts the gain of the base
    model; with it, the gain of the model augmented by ``aug``.
    """
    flags = []
    s1, s2m = estimate_sigma2_M(d, nf, m, sbar, psi)
    sigma2_M = s1 + s2m
    g = gain(estimate_c_vector(d, nf, aug), information(d, nf, aug))
    # optimal gain from the nuisances fitted on d itself, whatever aug was used
    g_direct = gain_h_direct(d, nf, AugmentationFn(nf))
    s_np = np_bound(d, nf, s2, psi)
    delta = sigma2_M - g_direct - s_np
    if delta < -1e-8 * max(1.0, s_np):
        flags.append("negative_delta")
    adj = sigma2_M - g
    if adj < 0:
        flags.append("negative_adjusted_variance")
        adj = 0.0
    se = math.sqrt(adj / d.n)
    return VarianceReport(
        sigma2_1=s1,
        sigma2_2M=s2m,
        sigma2_M=sigma2_M,
        gain=g,
        sigma2_adj=adj,
        sigma2_np=s_np,
        delta_M=delta,
        se=se,
        ci=wald_ci(psi, adj, d.n, level),
        n_eff=d.n,
        level=level,
        gain_direct=g_direct,
        delta_M_formula=delta_formula(d, nf, m, s2),
        flags=tuple(flags),
    )
