"""Logistic propensity model: Newton MLE, score, information, discretization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

CLAMP = (1e-6, 1 - 1e-6)
GRAD_TOL = 1e-10
MAX_ITER = 100
DIVERGENCE_BOUND = 30.0
COND_LIMIT = 1e10
# fitted probabilities this close to 0 or 1 only arise from (quasi-)separation
DEGENERATE_PI = 1e-10


class LogitError(RuntimeError):
    """Base class for propensity-fit failures."""


class RankDeficientError(LogitError):
    pass


class SeparationError(LogitError):
    pass


class ConvergenceError(LogitError):
    pass


@dataclass(frozen=True)
class DesignSpec:
    """Base design ``w`` (intercept first) plus an optional augmentation column."""

    base: np.ndarray
    aug: np.ndarray | None = None

    def __post_init__(self):
        base = np.atleast_2d(np.asarray(self.base, dtype=float))
        object.__setattr__(self, "base", base)
        if self.aug is not None:
            aug = np.asarray(self.aug, dtype=float).ravel()
            if aug.shape[0] != base.shape[0]:
                raise ValueError("augmentation column length does not match design")
            object.__setattr__(self, "aug", aug)

    @property
    def n(self) -> int:
        return self.base.shape[0]

    @property
    def dim(self) -> int:
        return self.base.shape[1] + (self.aug is not None)

    @property
    def matrix(self) -> np.ndarray:
        if self.aug is None:
            return self.base
        return np.column_stack([self.base, self.aug])

    def linear_predictor(self, vartheta) -> np.ndarray:
        # base and augmentation parts are summed separately so that a zero
        # augmentation coefficient reproduces the base predictor bit for bit
        vartheta = np.asarray(vartheta, dtype=float)
        if vartheta.shape != (self.dim,):
            raise ValueError(f"coefficient length {vartheta.shape} does not match design dim {self.dim}")
        k = self.base.shape[1]
        eta = self.base @ vartheta[:k]
        if self.aug is not None:
            eta = eta + self.aug * vartheta[k]
        return eta


@dataclass(frozen=True)
class PropensityFit:
    vartheta: np.ndarray
    converged: bool = True
    n_iter: int = 0
    grad_norm: float = 0.0
    scores: np.ndarray | None = None
    disc: tuple[float, int] | None = None

    @property
    def theta(self) -> np.ndarray:
        return self.vartheta

    def predict(self, design: DesignSpec) -> np.ndarray:
        """Clamped fitted propensities on ``design``."""
        return propensity(design, self.vartheta)

    def discretized(self, k: float, n: int, design: DesignSpec | None = None) -> "PropensityFit":
        vt = discretize(self.vartheta, k, n)
        scores = propensity(design, vt) if design is not None else None
        return PropensityFit(vt, self.converged, self.n_iter, self.grad_norm, scores, (float(k), int(n)))


def propensity(design: DesignSpec, vartheta, clamp=CLAMP) -> np.ndarray:
    return np.clip(expit(design.linear_predictor(vartheta)), *clamp)


def log_likelihood(design: DesignSpec, a, vartheta) -> float:
    eta = design.linear_predictor(vartheta)
    a = np.asarray(a, dtype=float)
    return float(np.sum(a * log_expit(eta) + (1 - a) * log_expit(-eta)))


def score(design: DesignSpec, a, vartheta) -> np.ndarray:
    """Gradient of the log-likelihood, ``sum_i r_i (a_i - pi_i)``."""
    a = np.asarray(a, dtype=float)
    if a.shape != (design.n,):
        raise ValueError("treatment vector length does not match design")
    resid = a - expit(design.linear_predictor(vartheta))
    return design.matrix.T @ resid


def fisher_info(design: DesignSpec, vartheta) -> np.ndarray:
    """Average information ``mean(pi (1 - pi) r r^T)``."""
    pi = expit(design.linear_predictor(vartheta))
    r = design.matrix
    info = (r * (pi * (1 - pi))[:, None]).T @ r / design.n
    return (info + info.T) / 2


def discretize(vartheta, k: float, n: int) -> np.ndarray:
    """Round onto the grid of spacing ``1 / (k sqrt(n))``, halves away from zero."""
    if not k > 0:
        raise ValueError("discretization constant must be positive")
    if n < 1:
        raise ValueError("sample size must be at least 1")
    scale = k * np.sqrt(n)
    x = np.asarray(vartheta, dtype=float) * scale
    return np.sign(x) * np.floor(np.abs(x) + 0.5) / scale


def check_rank(design: DesignSpec, limit: float = COND_LIMIT) -> float:
    """Condition number of the column-equilibrated ``r^T r``; raises above ``limit``."""
    r = design.matrix
    norms = np.linalg.norm(r, axis=0)
    if np.any(norms == 0):
        raise RankDeficientError("design has an all-zero column")
    gram = (r / norms).T @ (r / norms)
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > limit:
        raise RankDeficientError(f"design is rank deficient (condition number {cond:.3g})")
    return float(cond)


def _finish(vt, n_iter, gnorm, pi) -> PropensityFit:
    if np.min(np.minimum(pi, 1 - pi)) < DEGENERATE_PI:
        raise SeparationError("fitted probabilities numerically 0 or 1; treatment is (quasi-)separated")
    return PropensityFit(vt, True, n_iter, gnorm, np.clip(pi, *CLAMP))


def fit_mle(
    design: DesignSpec,
    a,
    tol: float = GRAD_TOL,
    max_iter: int = MAX_ITER,
    bound: float = DIVERGENCE_BOUND,
    history: list | None = None,
) -> PropensityFit:
    """Newton-Raphson maximum likelihood with step halving, started at zero.

    Convergence is declared once the score max-norm falls below ``tol``
    or below the rounding floor of the score sum, whichever is larger.
    If ``history`` is given, the log-likelihood of every accepted iterate
    (the start included) is appended to it.
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (design.n,):
        raise ValueError("treatment vector length does not match design")
    if a.min() == a.max():
        raise LogitError("both treatment values must be present")
    check_rank(design)
    r = design.matrix
    floor = 1024 * np.finfo(float).eps * float(np.abs(r).sum(axis=0).max())
    tol_eff = max(tol, floor)

    vt = np.zeros(design.dim)
    ll = log_likelihood(design, a, vt)
    if history is not None:
        history.append(ll)
    for it in range(1, max_iter + 1):
        pi = expit(design.linear_predictor(vt))
        grad = r.T @ (a - pi)
        gnorm = float(np.max(np.abs(grad)))
        if gnorm <= tol_eff:
            return _finish(vt, it - 1, gnorm, pi)
        hess = (r * (pi * (1 - pi))[:, None]).T @ r
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise SeparationError("information matrix became singular") from None
        # changes below the rounding noise of the likelihood sum count as ascent
        slack = 1e-12 * max(1.0, abs(ll))
        t = 1.0
        while True:
            cand = vt + t * step
            ll_cand = log_likelihood(design, a, cand)
            if ll_cand >= ll - slack or t < 1e-10:
                break
            t /= 2
        if ll_cand < ll - slack or np.array_equal(cand, vt):
            # no further ascent representable: at the numerical optimum
            break
        vt, ll = cand, max(ll, ll_cand)
        if history is not None:
            history.append(ll_cand)
        if np.max(np.abs(vt)) > bound:
            raise SeparationError(
                f"coefficient norm exceeded {bound}; treatment is (quasi-)separated"
            )
    pi = expit(design.linear_predictor(vt))
    gnorm = float(np.max(np.abs(r.T @ (a - pi))))
    if gnorm <= tol_eff:
        return _finish(vt, it, gnorm, pi)
    raise ConvergenceError(f"no convergence in {max_iter} iterations (score norm {gnorm:.3g})")
