"""Simulation scenarios, oracle nuisances and the seeded Monte Carlo engine."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit, logit

from .analytic import AnalyticDesign
from .data import Dataset
from .logit import CLAMP, PropensityFit
from .nuisance import FunctionRegressor, NuisanceFit
from .pipeline import EstimatorConfig, estimate_augmented, estimate_unaugmented

SCHEMA_VERSION = 1

# logit pi0, mu0(1, w), mu0(0, w) as (intercept, w1, w2) coefficients
TABLE1 = {
    1: ((0.2, 1.5, -1.0), (2.0, 4.0, -3.0), (1.0, 3.0, 3.0)),
    2: ((0.2, 1.5, 0.0), (2.0, 4.0, -3.0), (1.0, 3.0, 3.0)),
    3: ((0.2, 1.5, -1.0), (2.0, 0.0, -3.0), (1.0, 0.0, 3.0)),
    4: ((0.2, 1.5, -0.1), (2.0, 0.1, -3.0), (1.0, 0.1, 3.0)),
}
W1_HALF_WIDTH = 2.0

ESTIMATORS = ("unaugmented", "augmented")


class McError(RuntimeError):
    pass


@dataclass(frozen=True)
class Scenario:
    """Table-1 scenario (``id`` 1-4) or the Gaussian design (``id == "analytic"``)."""

    id: int | str
    design: AnalyticDesign | None = None

    def __post_init__(self):
        if self.id == "analytic":
            if self.design is None:
                object.__setattr__(self, "design", AnalyticDesign())
        elif self.id not in TABLE1:
            raise ValueError(f"unknown scenario {self.id!r}")

    @property
    def coefs(self):
        if self.id == "analytic":
            dz = self.design
            return (dz.theta0, dz.theta1, dz.theta2), dz.beta, dz.gamma
        return TABLE1[self.id]

    @property
    def sigma(self) -> float:
        return self.design.sigma if self.id == "analytic" else 1.0

    def pi0(self, v) -> np.ndarray:
        theta = np.asarray(self.coefs[0])
        v = np.atleast_2d(v)
        return expit(theta[0] + v @ theta[1:])

    def mu0(self, arm: int, v) -> np.ndarray:
        b = np.asarray(self.coefs[1] if arm == 1 else self.coefs[2])
        v = np.atleast_2d(v)
        return b[0] + v @ b[1:]

    def mu_bar0(self, arm: int, p) -> np.ndarray:
        """``E[mu0(arm, W) | pi0(W) = p]``, exact for every scenario."""
        theta, *_ = self.coefs
        b = np.asarray(self.coefs[1] if arm == 1 else self.coefs[2])
        t = logit(np.clip(np.asarray(p, dtype=float), *CLAMP)) - theta[0]
        if self.id == "analytic":
            ss = theta[1] ** 2 + theta[2] ** 2
            if ss == 0:
                return np.full(t.shape, b[0])
            return b[0] + (b[1] * theta[1] + b[2] * theta[2]) * t / ss
        # W1 uniform, W2 fair coin: weigh the two W2 values by feasibility of W1
        w1 = [(t - theta[2] * w2) / theta[1] for w2 in (0, 1)]
        slack = [W1_HALF_WIDTH - np.abs(x) for x in w1]
        feas = np.column_stack([s >= 0 for s in slack]).astype(float)
        none = feas.sum(axis=1) == 0
        if np.any(none):
            closer = np.column_stack(slack)[none].argmax(axis=1)
            feas[none, closer] = 1.0
        prob1 = feas[:, 1] / feas.sum(axis=1)
        m0 = b[0] + b[1] * np.clip(w1[0], -W1_HALF_WIDTH, W1_HALF_WIDTH)
        m1 = b[0] + b[1] * np.clip(w1[1], -W1_HALF_WIDTH, W1_HALF_WIDTH) + b[2]
        return (1 - prob1) * m0 + prob1 * m1

    def sigma2(self, arm: int, v) -> np.ndarray:
        return np.full(np.atleast_2d(v).shape[0], self.sigma**2)

    def oracle_nuisance(self) -> NuisanceFit:
        """Nuisance bundle holding the true regressions and propensity."""
        mu = tuple(FunctionRegressor(lambda v, a=a: self.mu0(a, v), f"mu0({a})") for a in (0, 1))
        mu_bar = tuple(
            FunctionRegressor(lambda p, a=a: self.mu_bar0(a, p), f"mu_bar0({a})") for a in (0, 1)
        )
        s2 = tuple(FunctionRegressor(lambda v, a=a: self.sigma2(a, v), "sigma2") for a in (0, 1))
        fit = PropensityFit(np.asarray(self.coefs[0], dtype=float))
        return NuisanceFit(mu, mu_bar, fit, s2)


def as_scenario(s) -> Scenario:
    return s if isinstance(s, Scenario) else Scenario(s)


def gen_scenario(s, n: int, seed) -> Dataset:
    """Draw ``n`` units; ``seed`` is an int, SeedSequence or Generator."""
    s = as_scenario(s)
    if n < 2:
        raise ValueError("need at least two units")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if s.id == "analytic":
        v = rng.standard_normal((n, 2))
    else:
        v = np.column_stack(
            [rng.uniform(-W1_HALF_WIDTH, W1_HALF_WIDTH, n), rng.integers(0, 2, n).astype(float)]
        )
    a = (rng.random(n) < s.pi0(v)).astype(np.int8)
    mean = np.where(a == 1, s.mu0(1, v), s.mu0(0, v))
    y = mean + s.sigma * rng.standard_normal(n)
    return Dataset(v, a, y, ("w1", "w2"))


def true_ate(s) -> float:
    s = as_scenario(s)
    if s.id == "analytic":
        return s.design.ate
    _, b, g = s.coefs
    # E[W1] = 0, E[W2] = 1/2
    return (b[0] - g[0]) + 0.5 * (b[2] - g[2])


@dataclass(frozen=True)
class McSummary:
    reps: int
    mean_psi: float
    bias: float
    emp_var_scaled: float
    mean_theor_var: float
    coverage: float
    mc_se: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "reps": self.reps,
            "mean_psi": self.mean_psi,
            "bias": self.bias,
            "emp_var_scaled": self.emp_var_scaled,
            "mean_theor_var": self.mean_theor_var,
            "coverage": self.coverage,
            "mc_se": dict(self.mc_se),
        }


def _var_se(x) -> float:
    """Standard error of the sample variance from the fourth central moment."""
    x = np.asarray(x, dtype=float)
    c = x - x.mean()
    return math.sqrt(max(np.mean(c**4) - np.mean(c**2) ** 2, 0.0) / len(x))


def summarize(psi, theor_var, covered, n_eff: int, psi0: float) -> McSummary:
    psi = np.asarray(psi, dtype=float)
    theor_var = np.asarray(theor_var, dtype=float)
    covered = np.asarray(covered, dtype=float)
    r = len(psi)
    if r < 2:
        raise McError("need at least two successful replications")
    sd = psi.std(ddof=1)
    cov = float(covered.mean())
    return McSummary(
        reps=r,
        mean_psi=float(psi.mean()),
        bias=float(psi.mean() - psi0),
        emp_var_scaled=float(n_eff * psi.var(ddof=1)),
        mean_theor_var=float(theor_var.mean()),
        coverage=cov,
        mc_se={
            "mean_psi": float(sd / math.sqrt(r)),
            "bias": float(sd / math.sqrt(r)),
            "emp_var_scaled": float(n_eff * _var_se(psi)),
            "mean_theor_var": float(theor_var.std(ddof=1) / math.sqrt(r)),
            "coverage": float(math.sqrt(cov * (1 - cov) / r)),
        },
    )


def variance_ratio(x, y) -> tuple[float, float]:
    """Ratio of sample variances of paired draws and its delta-method SE."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    vx, vy = x.var(), y.var()
    ratio = vx / vy
    infl = ((x - x.mean()) ** 2 - vx - ratio * ((y - y.mean()) ** 2 - vy)) / vy
    return float(x.var(ddof=1) / y.var(ddof=1)), float(infl.std(ddof=1) / math.sqrt(len(x)))


@dataclass
class McRun:
    scenario: Scenario
    n: int
    reps: int
    seed: int
    records: list
    summaries: dict
    failures: dict

    def change(self) -> tuple[float, float]:
        """Relative change in empirical variance, augmented vs unaugmented, and its SE."""
        rows = [r for r in self.records if r.get("psi_aug") is not None and r.get("psi_unaug") is not None]
        if len(rows) < 2:
            raise McError("both estimators are needed for a paired comparison")
        ratio, se = variance_ratio([r["psi_aug"] for r in rows], [r["psi_unaug"] for r in rows])
        n_eff = rows[0]["n_eff_aug"]
        ratio *= n_eff / self.n
        return ratio - 1.0, se * n_eff / self.n

    def summary_dict(self) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "scenario": self.scenario.id,
            "n": self.n,
            "reps": self.reps,
            "seed": self.seed,
            "true_ate": true_ate(self.scenario),
            "failures": dict(self.failures),
        }
        for name, summ in self.summaries.items():
            out[name] = summ.as_dict()
        if len(self.summaries) == 2:
            change, se = self.change()
            out["emp_var_change"] = change
            out["emp_var_change_se"] = se
        return out


def rep_seeds(seed: int, rep: int) -> tuple[np.random.Generator, int]:
    """Data generator and split seed for replication ``rep``; depend on (seed, rep) only."""
    ss = np.random.SeedSequence([seed, rep])
    data_ss, split_ss = ss.spawn(2)
    return np.random.default_rng(data_ss), int(split_ss.generate_state(1)[0])


def run_replication(s: Scenario, n: int, rep: int, seed: int, cfg: EstimatorConfig, estimators) -> dict:
    rng, split_seed = rep_seeds(seed, rep)
    d = gen_scenario(s, n, rng)
    psi0 = true_ate(s)
    row = {"rep": rep}
    for name in estimators:
        key = "aug" if name == "augmented" else "unaug"
        try:
            if name == "augmented":
                res = estimate_augmented(d, replace(cfg, seed=split_seed))
            else:
                res = estimate_unaugmented(d, cfg)
        except Exception as exc:  # noqa: BLE001 - failures are counted, not fatal
            row[f"psi_{key}"] = None
            row[f"error_{key}"] = f"{type(exc).__name__}: {exc}"
            continue
        v = res.variance
        if "variance_unavailable" in v.flags:
            row[f"psi_{key}"] = None
            row[f"error_{key}"] = "variance_unavailable"
            continue
        lo, hi = v.ci
        row.update(
            {
                f"psi_{key}": res.psi,
                f"var_{key}": v.sigma2_adj,
                f"ci_lo_{key}": lo,
                f"ci_hi_{key}": hi,
                f"covered_{key}": bool(lo <= psi0 <= hi),
                f"n_eff_{key}": v.n_eff,
                f"gain_{key}": v.gain,
                f"gain_direct_{key}": v.gain_direct,
                f"sigma2_M_{key}": v.sigma2_M,
                f"sigma2_np_{key}": v.sigma2_np,
                f"delta_M_{key}": v.delta_M,
                f"delta_M_formula_{key}": v.delta_M_formula,
            }
        )
    return row


def _run_chunk(args):
    s, n, reps, seed, cfg, estimators = args
    return [run_replication(s, n, r, seed, cfg, estimators) for r in reps]


def default_threads() -> int:
    env = os.environ.get("AUGMATCH_THREADS")
    if env:
        return max(1, int(env))
    return 1


def run_mc(
    s,
    n: int,
    reps: int,
    cfg: EstimatorConfig = EstimatorConfig(split_frac=0.0),
    seed: int = 0,
    estimators: Sequence[str] = ESTIMATORS,
    threads: int | None = None,
    max_fail: float = 0.01,
) -> McRun:
    """Replicate the estimators on independent draws and summarize.

    Replication ``r`` uses data and split seeds derived from ``(seed, r)``
    only, so results do not depend on ``threads``.
    """
    s = as_scenario(s)
    if reps < 2:
        raise McError("need at least two replications")
    for name in estimators:
        if name not in ESTIMATORS:
            raise ValueError(f"unknown estimator {name!r}")
    threads = threads or default_threads()
    idx = list(range(reps))
    if threads == 1:
        records = _run_chunk((s, n, idx, seed, cfg, tuple(estimators)))
    else:
        chunks = [idx[i::threads] for i in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = pool.map(_run_chunk, [(s, n, c, seed, cfg, tuple(estimators)) for c in chunks])
            records = sorted((row for part in parts for row in part), key=lambda r: r["rep"])

    psi0 = true_ate(s)
    summaries, failures = {}, {}
    for name in estimators:
        key = "aug" if name == "augmented" else "unaug"
        ok = [r for r in records if r.get(f"psi_{key}") is not None]
        failures[name] = reps - len(ok)
        if failures[name] > max_fail * reps:
            errors = sorted({r[f"error_{key}"] for r in records if f"error_{key}" in r})
            raise McError(f"{failures[name]} of {reps} {name} replications failed: {errors[:3]}")
        summaries[name] = summarize(
            [r[f"psi_{key}"] for r in ok],
            [r[f"var_{key}"] for r in ok],
            [r[f"covered_{key}"] for r in ok],
            ok[0][f"n_eff_{key}"],
            psi0,
        )
    return McRun(s, n, reps, seed, records, summaries, failures)


REP_COLUMNS = (
    "rep",
    "psi_aug",
    "psi_unaug",
    "var_aug",
    "var_unaug",
    "ci_lo",
    "ci_hi",
    "covered",
    "ci_lo_unaug",
    "ci_hi_unaug",
    "covered_unaug",
)


def write_replications(run: McRun, path) -> None:
    """Per-replication CSV to a path or open text handle.

    ``ci_lo/ci_hi/covered`` refer to the augmented estimator.
    """
    rename = {"ci_lo": "ci_lo_aug", "ci_hi": "ci_hi_aug", "covered": "covered_aug"}

    def fmt(x):
        if x is None:
            return ""
        if isinstance(x, bool):
            return str(int(x))
        if isinstance(x, float):
            return repr(float(x))
        return str(x)

    def write(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REP_COLUMNS)
        for row in run.records:
            writer.writerow([fmt(row.get(rename.get(c, c))) for c in REP_COLUMNS])

    if hasattr(path, "write"):
        write(path)
        return
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        write(fh)


def write_summary(run: McRun, path) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        json.dump(run.summary_dict(), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
