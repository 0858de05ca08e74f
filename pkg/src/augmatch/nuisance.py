"""Outcome regressions, propensity-reduced regressions and the augmentation covariate.

Regressors share a tiny interface: ``predict(x)`` where ``x`` is an
``(n, d)`` array or a 1-d array for scalar inputs. A candidate list of
:class:`RegressorSpec` is resolved by K-fold cross-validated MSE.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logit

from .data import Dataset
from .logit import CLAMP, DesignSpec, PropensityFit, fit_mle

RIDGE = 1e-8
CV_FOLDS = 5


class NuisanceError(ValueError):
    pass


@dataclass(frozen=True)
class RegressorSpec:
    """Regressor family. ``kind`` is one of linear, poly, knn, loclin.

    ``logit_input`` maps scalar inputs in (0, 1) to the logit scale before
    fitting; it is meant for regressions on the propensity.
    """

    kind: str = "linear"
    degree: int = 3
    k: int | None = None
    bandwidth: float | None = None
    logit_input: bool = False
    ridge: float = RIDGE

    def __post_init__(self):
        if self.kind not in ("linear", "poly", "knn", "loclin"):
            raise ValueError(f"unknown regressor kind {self.kind!r}")
        if self.kind == "poly" and self.degree < 1:
            raise ValueError("polynomial degree must be at least 1")
        if self.ridge < 0:
            raise ValueError("ridge jitter must be non-negative")

    @property
    def label(self) -> str:
        base = {
            "linear": "linear",
            "poly": f"poly:{self.degree}",
            "knn": "knn" if self.k is None else f"knn:{self.k}",
            "loclin": "loclin" if self.bandwidth is None else f"loclin:{self.bandwidth:g}",
        }[self.kind]
        return base + ("@logit" if self.logit_input else "")


_SPEC_RE = re.compile(r"^(linear|poly|knn|loclin)(?::([0-9.eE+-]+))?(@logit)?$")


def parse_spec(text: str) -> RegressorSpec:
    """Parse ``linear``, ``poly:3``, ``knn:25``, ``loclin:0.2``, optionally ``@logit``."""
    match = _SPEC_RE.match(text.strip())
    if not match:
        raise ValueError(f"cannot parse regressor spec {text!r}")
    kind, arg, lg = match.groups()
    kw = {"kind": kind, "logit_input": bool(lg)}
    if arg is not None:
        if kind == "poly":
            kw["degree"] = int(arg)
        elif kind == "knn":
            kw["k"] = int(arg)
        elif kind == "loclin":
            kw["bandwidth"] = float(arg)
        else:
            raise ValueError("linear takes no argument")
    return RegressorSpec(**kw)


MU_DEFAULT = (RegressorSpec("linear"), RegressorSpec("poly", 3))
MU_BAR_DEFAULT = (
    RegressorSpec("poly", 1, logit_input=True),
    RegressorSpec("poly", 3, logit_input=True),
    RegressorSpec("poly", 3),
)


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def _input_transform(x, logit_input):
    x = _as_2d(x)
    if logit_input:
        x = logit(np.clip(x, *CLAMP))
    return x


class Regressor:
    spec: RegressorSpec

    def _predict(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, x) -> np.ndarray:
        return self._predict(_input_transform(x, self.spec.logit_input))


class LinearRegressor(Regressor):
    def __init__(self, spec, x, y):
        self.spec = spec
        design = np.column_stack([np.ones(len(y)), x])
        norms = np.linalg.norm(design, axis=0)
        if np.any(norms == 0) or np.linalg.cond((design / norms).T @ (design / norms)) > 1e10:
            raise NuisanceError("linear regression design is rank deficient")
        self.coef, *_ = np.linalg.lstsq(design, y, rcond=None)

    def _predict(self, x):
        return self.coef[0] + x @ self.coef[1:]


def _monomials(d, degree):
    return [c for deg in range(1, degree + 1) for c in combinations_with_replacement(range(d), deg)]


class PolynomialRegressor(Regressor):
    """Ridge-jittered polynomial in all monomials up to ``degree``.

    Inputs are clipped to the training range, so predictions beyond it are
    flat and continuous.
    """

    def __init__(self, spec, x, y):
        self.spec = spec
        self.terms = _monomials(x.shape[1], spec.degree)
        self.lo, self.hi = x.min(axis=0), x.max(axis=0)
        feats = self._features(x)
        self.center = feats.mean(axis=0)
        self.scale = feats.std(axis=0)
        self.scale[self.scale == 0] = 1.0
        z = (feats - self.center) / self.scale
        self.intercept = float(np.mean(y))
        lhs = z.T @ z + spec.ridge * np.eye(z.shape[1])
        self.coef = np.linalg.solve(lhs, z.T @ (y - self.intercept))

    def _features(self, x):
        return np.column_stack([np.prod(x[:, list(t)], axis=1) for t in self.terms])

    def _predict(self, x):
        x = np.clip(x, self.lo, self.hi)
        z = (self._features(x) - self.center) / self.scale
        return self.intercept + z @ self.coef


class KnnRegressor(Regressor):
    def __init__(self, spec, x, y):
        self.spec = spec
        n = len(y)
        k = spec.k if spec.k is not None else math.ceil(n**0.7)
        self.k = int(max(1, min(k, n // 4 if n >= 4 else n)))
        self.scale = x.std(axis=0)
        self.scale[self.scale == 0] = 1.0
        self.tree = cKDTree(x / self.scale)
        self.y = np.asarray(y, dtype=float)

    def _predict(self, x):
        _, idx = self.tree.query(x / self.scale, k=self.k)
        idx = idx.reshape(len(x), -1)
        return self.y[idx].mean(axis=1)


class LocalLinearRegressor(Regressor):
    """Gaussian-kernel local linear smoother; bandwidth is per standardized input."""

    def __init__(self, spec, x, y):
        self.spec = spec
        n, d = x.shape
        self.scale = x.std(axis=0)
        self.scale[self.scale == 0] = 1.0
        self.x = x / self.scale
        self.y = np.asarray(y, dtype=float)
        self.bandwidth = spec.bandwidth if spec.bandwidth is not None else 1.06 * n ** (-1 / (4 + d))

    def _predict(self, x, chunk=256):
        x = x / self.scale
        out = np.empty(len(x))
        for s in range(0, len(x), chunk):
            q = x[s : s + chunk]
            diff = self.x[None, :, :] - q[:, None, :]
            wts = np.exp(-0.5 * np.sum(diff**2, axis=2) / self.bandwidth**2)
            for r in range(len(q)):
                design = np.column_stack([np.ones(len(self.y)), diff[r]])
                sw = np.sqrt(wts[r])
                lhs = (design * sw[:, None]).T @ (design * sw[:, None])
                lhs[1:, 1:] += 1e-10 * np.eye(design.shape[1] - 1)
                rhs = (design * wts[r][:, None]).T @ self.y
                try:
                    out[s + r] = np.linalg.solve(lhs, rhs)[0]
                except np.linalg.LinAlgError:
                    out[s + r] = np.average(self.y, weights=wts[r]) if wts[r].sum() > 0 else self.y.mean()
        return out


class FunctionRegressor(Regressor):
    """Wraps a known function, e.g. a true regression used as an oracle."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], label: str = "function"):
        self.fn = fn
        self.spec = RegressorSpec("linear")
        self.label = label

    def predict(self, x):
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)


_KINDS = {
    "linear": LinearRegressor,
    "poly": PolynomialRegressor,
    "knn": KnnRegressor,
    "loclin": LocalLinearRegressor,
}


def _min_size(spec, dim):
    if spec.kind == "linear":
        return dim + 2
    if spec.kind == "poly":
        return len(_monomials(dim, spec.degree)) + 2
    return 4


def fit_regressor(x, y, spec: RegressorSpec) -> Regressor:
    x = _input_transform(x, spec.logit_input)
    y = np.asarray(y, dtype=float).ravel()
    if len(y) == 0:
        raise NuisanceError("cannot fit a regression on an empty sample")
    if len(y) < _min_size(spec, x.shape[1]):
        raise NuisanceError(f"{len(y)} observations are too few for {spec.label}")
    return _KINDS[spec.kind](spec, x, y)


def cv_folds(x, y, k: int = CV_FOLDS) -> np.ndarray:
    """Fold labels assigned round-robin along the (y, x) sort order.

    Depends on the values only, so relabelling units leaves the folds intact.
    """
    x = _as_2d(x)
    order = np.lexsort(tuple(x.T[::-1]) + (y,))
    folds = np.empty(len(y), dtype=int)
    folds[order] = np.arange(len(y)) % k
    return folds


def fit_stack(x, y, specs: Sequence[RegressorSpec] | RegressorSpec, folds: int = CV_FOLDS) -> Regressor:
    """Select a candidate by K-fold cross-validation and refit it on all data.

    Candidates are listed from simplest to most flexible. The simplest one
    whose CV MSE exceeds the best by at most one standard error of the
    paired difference in squared errors is chosen (one-SE rule).
    """
    if isinstance(specs, RegressorSpec):
        return fit_regressor(x, y, specs)
    specs = list(specs)
    if len(specs) == 1:
        return fit_regressor(x, y, specs[0])
    x2 = _as_2d(x)
    y = np.asarray(y, dtype=float).ravel()
    labels = cv_folds(x2, y, folds)
    n_train = len(y) - int(np.ceil(len(y) / folds))
    sq_err = {}
    for spec in specs:
        if n_train < _min_size(spec, x2.shape[1]):
            continue
        err = np.empty(len(y))
        try:
            for f in range(folds):
                test = labels == f
                reg = fit_regressor(x2[~test], y[~test], spec)
                err[test] = y[test] - reg.predict(x2[test])
        except NuisanceError:
            continue
        sq_err[spec] = err**2
    if not sq_err:
        raise NuisanceError("no candidate regressor could be fitted")
    best = min(sq_err, key=lambda sp: sq_err[sp].mean())
    chosen = best
    for spec in sq_err:
        diff = sq_err[spec] - sq_err[best]
        if diff.mean() <= diff.std(ddof=1) / math.sqrt(len(diff)):
            chosen = spec
            break
    reg = fit_regressor(x2, y, chosen)
    reg.cv_mse = float(sq_err[chosen].mean())
    return reg


def _arm(d: Dataset, arm: int) -> np.ndarray:
    if arm not in (0, 1):
        raise NuisanceError("arm must be 0 or 1")
    idx = np.flatnonzero(d.a == arm)
    if idx.size == 0:
        raise NuisanceError(f"arm {arm} is empty")
    return idx


def fit_outcome_regression(d: Dataset, arm: int, spec=MU_DEFAULT) -> Regressor:
    """Regression of Y on the covariates within treatment arm ``arm``."""
    idx = _arm(d, arm)
    return fit_stack(d.v[idx], d.y[idx], spec)


def fit_reduced_regression(
    d: Dataset, arm: int, mu: Regressor, pi_fit: PropensityFit, spec=MU_BAR_DEFAULT
) -> Regressor:
    """Regression of the fitted ``mu(arm, W)`` on the fitted propensity within ``arm``."""
    idx = _arm(d, arm)
    p = pi_fit.predict(DesignSpec(d.w[idx]))
    resp = mu.predict(d.v[idx])
    if np.ptp(p) == 0:
        if np.ptp(resp) > 1e-12 * max(1.0, np.abs(resp).max()):
            raise NuisanceError("propensity is constant but the response is not")
        const = float(resp.mean())
        return FunctionRegressor(lambda x: np.full(len(np.atleast_1d(x)), const), "constant")
    return fit_stack(p, resp, spec)


@dataclass(frozen=True)
class NuisanceFit:
    """Fitted ``mu(a, .)``, ``mu_bar(a, .)``, base propensity and residual variance."""

    mu: tuple[Regressor, Regressor]
    mu_bar: tuple[Regressor, Regressor]
    pi_fit: PropensityFit
    s2: tuple[Regressor, Regressor] | None = None
    clamp: tuple[float, float] = CLAMP

    def pi(self, v) -> np.ndarray:
        w = np.column_stack([np.ones(len(v)), _as_2d(v)])
        return np.clip(self.pi_fit.predict(DesignSpec(w)), *self.clamp)

    def mu_values(self, arm: int, v) -> np.ndarray:
        return self.mu[arm].predict(_as_2d(v))

    def mu_bar_values(self, arm: int, p) -> np.ndarray:
        return self.mu_bar[arm].predict(np.asarray(p, dtype=float))

    def s2_values(self, arm: int, v) -> np.ndarray:
        if self.s2 is None:
            raise NuisanceError("no conditional-variance regression was fitted")
        return np.maximum(self.s2[arm].predict(_as_2d(v)), 0.0)


def fit_nuisance(
    d: Dataset,
    mu_spec=MU_DEFAULT,
    mu_bar_spec=MU_BAR_DEFAULT,
    s2_spec=MU_DEFAULT,
    pi_fit: PropensityFit | None = None,
) -> NuisanceFit:
    """Fit every nuisance on ``d``; the propensity uses the unaugmented model."""
    if pi_fit is None:
        pi_fit = fit_mle(DesignSpec(d.w), d.a)
    mu = tuple(fit_outcome_regression(d, a, mu_spec) for a in (0, 1))
    mu_bar = tuple(fit_reduced_regression(d, a, mu[a], pi_fit, mu_bar_spec) for a in (0, 1))
    s2 = None
    if s2_spec is not None:
        s2 = []
        for a in (0, 1):
            idx = _arm(d, a)
            resid2 = (d.y[idx] - mu[a].predict(d.v[idx])) ** 2
            s2.append(fit_stack(d.v[idx], resid2, s2_spec))
        s2 = tuple(s2)
    return NuisanceFit(mu, mu_bar, pi_fit, s2)


@dataclass(frozen=True)
class AugmentationFn:
    """``h(w) = (mu1 - mu_bar1(pi)) / pi + (mu0 - mu_bar0(pi)) / (1 - pi)``."""

    nf: NuisanceFit
    diagnostics: dict = field(default_factory=dict)

    def __call__(self, v) -> np.ndarray:
        v = _as_2d(v)
        p = self.nf.pi(v)
        r1 = self.nf.mu_values(1, v) - self.nf.mu_bar_values(1, p)
        r0 = self.nf.mu_values(0, v) - self.nf.mu_bar_values(0, p)
        return r1 / p + r0 / (1 - p)


def build_h(nf: NuisanceFit, d: Dataset | None = None) -> AugmentationFn:
    diag = {}
    if d is not None:
        h = AugmentationFn(nf)(d.v)
        diag = {"mean": float(h.mean()), "var": float(h.var()), "max_abs": float(np.abs(h).max())}
    return AugmentationFn(nf, diag)
