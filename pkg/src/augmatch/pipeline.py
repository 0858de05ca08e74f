"""End-to-end matching estimators, with and without the optimal augmentation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, SplitIndex, split_sample
from .logit import DesignSpec, PropensityFit, RankDeficientError, fit_mle, propensity
from .matching import ate_matching, match_1m
from .nuisance import MU_BAR_DEFAULT, MU_DEFAULT, NuisanceError, RegressorSpec, build_h, fit_nuisance
from .variance import VarianceError, VarianceReport, variance_report

NAN = float("nan")


@dataclass(frozen=True)
class EstimatorConfig:
    m: int = 1
    disc_k: float | None = None
    split_frac: float = 0.05
    level: float = 0.95
    mu_spec: Sequence[RegressorSpec] = MU_DEFAULT
    mu_bar_spec: Sequence[RegressorSpec] = MU_BAR_DEFAULT
    s2_spec: Sequence[RegressorSpec] = MU_DEFAULT
    seed: int = 0

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError("number of matches must be a positive integer")
        if not 0.0 <= self.split_frac <= 0.5:
            raise ValueError("split fraction must lie in [0, 0.5]")
        if not 0.0 < self.level < 1.0:
            raise ValueError("confidence level must lie in (0, 1)")
        if self.disc_k is not None and not self.disc_k > 0:
            raise ValueError("discretization constant must be positive")


@dataclass(frozen=True)
class EstimateResult:
    psi: float
    variance: VarianceReport
    fit_base: PropensityFit
    fit_aug: PropensityFit | None = None
    h_diag: dict | None = None
    split: SplitIndex | None = None
    flags: tuple[str, ...] = field(default=())

    @property
    def se(self) -> float:
        return self.variance.se

    @property
    def ci(self) -> tuple[float, float]:
        return self.variance.ci

    def as_dict(self) -> dict:
        out = {
            "psi": self.psi,
            "se": self.se,
            "ci": list(self.ci),
            "gain": self.variance.gain,
            "variance": self.variance.as_dict(),
            "theta_base": self.fit_base.vartheta.tolist(),
            "augmented": self.fit_aug is not None,
            "flags": list(self.flags),
        }
        if self.fit_aug is not None:
            out["vartheta_aug"] = self.fit_aug.vartheta.tolist()
        if self.h_diag is not None:
            out["h"] = dict(self.h_diag)
        if self.split is not None:
            out["split"] = {"m_n": self.split.m_n, "n_eff": self.split.n_eff, "seed": self.split.seed}
        return out


def _scores(fit: PropensityFit, design: DesignSpec, cfg: EstimatorConfig) -> tuple[PropensityFit, np.ndarray]:
    if cfg.disc_k is not None:
        fit = fit.discretized(cfg.disc_k, design.n, design)
        return fit, fit.scores
    return fit, propensity(design, fit.vartheta)


def _nuisance(d: Dataset, cfg: EstimatorConfig, pi_fit=None):
    return fit_nuisance(d, cfg.mu_spec, cfg.mu_bar_spec, cfg.s2_spec, pi_fit=pi_fit)


def unavailable_report(n: int, level: float) -> VarianceReport:
    """Placeholder when the sample is too small for the variance plug-ins."""
    return VarianceReport(
        NAN, NAN, NAN, NAN, NAN, NAN, NAN, NAN, (NAN, NAN), n, level, flags=("variance_unavailable",)
    )


def estimate_unaugmented(d: Dataset, cfg: EstimatorConfig = EstimatorConfig()) -> EstimateResult:
    """Match on the fitted base logistic propensity over the whole sample.

    If the nuisance regressions behind the variance cannot be fitted (tiny
    samples), the point estimate is still returned, with a NaN variance
    report flagged ``variance_unavailable``.
    """
    d.require_arms(cfg.m)
    design = DesignSpec(d.w)
    fit = fit_mle(design, d.a)
    fit_used, scores = _scores(fit, design, cfg)
    psi = ate_matching(d.y, d.a, match_1m(scores, d.a, cfg.m))
    try:
        nf = _nuisance(d, cfg, pi_fit=fit)
        report = variance_report(d, nf, cfg.m, psi, aug=None, level=cfg.level)
    except (NuisanceError, VarianceError):
        report = unavailable_report(d.n, cfg.level)
    return EstimateResult(psi, report, fit_used, flags=report.flags)


def estimate_augmented(d: Dataset, cfg: EstimatorConfig = EstimatorConfig()) -> EstimateResult:
    """Match on a propensity augmented by the estimated optimal covariate.

    With ``split_frac > 0`` the augmentation function is learnt on a random
    part A and everything else is computed on the complement B; with
    ``split_frac == 0`` the full sample serves both purposes.
    """
    d.require_arms(cfg.m)
    split = None
    if cfg.split_frac > 0:
        split = split_sample(d, cfg.split_frac, cfg.seed)
        d_fit, d_est = d.subset(split.idx_a), d.subset(split.idx_b)
    else:
        d_fit = d_est = d
    d_est.require_arms(cfg.m)

    nf_fit = _nuisance(d_fit, cfg)
    h = build_h(nf_fit, d_fit)
    base_design = DesignSpec(d_est.w)
    fit_base = fit_mle(base_design, d_est.a) if split is not None else nf_fit.pi_fit

    flags = []
    aug_design = DesignSpec(d_est.w, h(d_est.v))
    try:
        fit_aug = fit_mle(aug_design, d_est.a)
    except RankDeficientError:
        flags.append("augmentation_dropped_collinear")
        fit_aug = None

    if fit_aug is None:
        fit_used, scores = _scores(fit_base, base_design, cfg)
    else:
        fit_used, scores = _scores(fit_aug, aug_design, cfg)
    psi = ate_matching(d_est.y, d_est.a, match_1m(scores, d_est.a, cfg.m))

    nf_est = nf_fit if split is None else _nuisance(d_est, cfg, pi_fit=fit_base)
    report = variance_report(
        d_est, nf_est, cfg.m, psi, aug=h if fit_aug is not None else None, level=cfg.level
    )
    return EstimateResult(
        psi,
        report,
        fit_base,
        fit_used if fit_aug is not None else None,
        h.diagnostics,
        split,
        tuple(flags),
    )
