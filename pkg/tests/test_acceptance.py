"""Acceptance criteria; each test logs one PASS/FAIL line.

The Monte Carlo criteria share session-scoped runs: scenarios 1-4 at
n=2000 with 500 replications, and scenario 2 at n=5000 with 1000
replications, all with base seed 2026 and no sample splitting.
"""

import math
import subprocess
import sys
import time

import numpy as np
import pytest
from oracles import brute_force_match, profile_grid_oracle, random_instance
from scipy.special import expit

from augmatch.analytic import AnalyticDesign, analytic_quantities, relative_efficiency
from augmatch.data import write_csv
from augmatch.logit import DesignSpec, fisher_info, fit_mle, log_likelihood, score
from augmatch.matching import ate_matching, ate_matching_direct, match_1m
from augmatch.nuisance import AugmentationFn
from augmatch.pipeline import EstimatorConfig
from augmatch.simulate import Scenario, gen_scenario, run_mc
from augmatch.variance import estimate_c_vector, gain, gain_h_direct, information

SEED = 2026

# criterion 1
MATCH_INSTANCES, MATCH_MAX_N, MATCH_TIME_LIMIT = 200, 500, 5.0
# criterion 2
DUAL_INSTANCES, DUAL_TOL = 1000, 1e-12
# criterion 3
SCORE_TOL, GRID_PROBLEMS, GRID_TOL, FD_RTOL = 1e-8, 50, 1e-3, 1e-5
# criterion 4
ROUTE_N, ROUTE_GAP, ROUTE_CLOSED_RTOL, ROUTE_TIME_LIMIT = 20_000, 0.10, 0.05, 30.0
# criterion 5
RE_GRID, IDENTITY_TOL = 1000, 1e-12
# criterion 6
TARGET_UNAUG, TARGET_AUG, TARGET_RTOL = 42.62, 31.82, 0.20
DESK_REDUCTION = 0.10
# criterion 7
COVER_UNAUG, COVER_AUG_MIN = (0.92, 0.99), 0.90
# criterion 8
BIAS_SE = 3.0
# criterion 9
DELTA_FLOOR = -0.05

DESK = dict(n=2000, reps=500)
LARGE = dict(n=5000, reps=1000)
NO_SPLIT = EstimatorConfig(split_frac=0.0)


def report(log, number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    log.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="session")
def desk_runs():
    return {sid: run_mc(sid, cfg=NO_SPLIT, seed=SEED, **DESK) for sid in (1, 2, 3, 4)}


@pytest.fixture(scope="session")
def large_run():
    return run_mc(2, cfg=NO_SPLIT, seed=SEED, **LARGE)


def test_criterion_1_matching_oracle(acceptance_log):
    rng = np.random.default_rng(SEED)
    elapsed, mismatches = 0.0, 0
    for k in range(MATCH_INSTANCES):
        m = (1, 2, 4)[k % 3]
        n = int(rng.integers(2 * m + 2, MATCH_MAX_N + 1))
        s, a = random_instance(rng, n, m, ties=bool(k % 2))
        t0 = time.perf_counter()
        res = match_1m(s, a, m)
        elapsed += time.perf_counter() - t0
        mismatches += not np.array_equal(res.sets, brute_force_match(s, a, m))
    ok = mismatches == 0 and elapsed < MATCH_TIME_LIMIT
    report(acceptance_log, 1, ok, f"{mismatches} mismatches in {MATCH_INSTANCES} instances, {elapsed:.2f}s")


def test_criterion_2_dual_representation(acceptance_log):
    rng = np.random.default_rng(SEED + 1)
    worst = 0.0
    for k in range(DUAL_INSTANCES):
        m = (1, 2, 4)[k % 3]
        n = int(rng.integers(2 * m + 2, 300))
        s, a = random_instance(rng, n, m, ties=bool(k % 2))
        y = rng.normal(scale=rng.uniform(0.1, 10), size=n) + rng.normal() * 5
        match = match_1m(s, a, m)
        worst = max(worst, abs(ate_matching(y, a, match) - ate_matching_direct(y, a, match)))
    report(acceptance_log, 2, worst <= DUAL_TOL, f"max |difference| {worst:.2e} over {DUAL_INSTANCES} instances")


def _logistic_problem(rng, n, p):
    x = rng.normal(size=(n, p))
    theta = rng.normal(scale=0.8, size=p + 1)
    a = (rng.random(n) < expit(theta[0] + x @ theta[1:])).astype(int)
    return DesignSpec(np.column_stack([np.ones(n), x])), a


def test_criterion_3_mle(acceptance_log):
    rng = np.random.default_rng(SEED + 2)
    worst_score, fits = 0.0, 0
    for _ in range(200):
        design, a = _logistic_problem(rng, int(rng.integers(50, 2000)), int(rng.integers(1, 4)))
        fit = fit_mle(design, a)
        worst_score = max(worst_score, float(np.max(np.abs(score(design, a, fit.vartheta)))))
        fits += 1

    worst_grid = 0.0
    solved = 0
    while solved < GRID_PROBLEMS:
        n = int(rng.integers(10, 40))
        x = rng.normal(size=n)
        a = (rng.random(n) < expit(0.3 + 0.9 * x)).astype(int)
        if a.min() == a.max():
            continue
        design = DesignSpec(np.column_stack([np.ones(n), x]))
        try:
            fit = fit_mle(design, a)
        except Exception:  # separated draws have no MLE to compare
            continue
        if np.max(np.abs(fit.vartheta)) > 9:
            continue
        b, slope = profile_grid_oracle(x, a)
        worst_grid = max(worst_grid, abs(fit.vartheta[0] - b), abs(fit.vartheta[1] - slope))
        solved += 1

    worst_fd = 0.0
    for _ in range(10):
        design, a = _logistic_problem(rng, 300, 2)
        vt = rng.normal(scale=0.5, size=3)
        h = 1e-6
        fd_grad = np.array(
            [(log_likelihood(design, a, vt + h * e) - log_likelihood(design, a, vt - h * e)) / (2 * h) for e in np.eye(3)]
        )
        g = score(design, a, vt)
        worst_fd = max(worst_fd, float(np.max(np.abs(g - fd_grad) / np.maximum(np.abs(g), 1.0))))
        h = 1e-5
        fd_hess = np.column_stack(
            [(score(design, a, vt + h * e) - score(design, a, vt - h * e)) / (2 * h) for e in np.eye(3)]
        )
        info = fisher_info(design, vt) * design.n
        worst_fd = max(worst_fd, float(np.max(np.abs(info + fd_hess)) / np.max(np.abs(info))))

    ok = worst_score <= SCORE_TOL and worst_grid <= GRID_TOL and worst_fd <= FD_RTOL
    detail = (
        f"max score norm {worst_score:.1e} over {fits} fits; grid oracle gap {worst_grid:.1e} "
        f"on {GRID_PROBLEMS} problems; finite-difference relative error {worst_fd:.1e}"
    )
    report(acceptance_log, 3, ok, detail)


def test_criterion_4_two_routes(acceptance_log):
    t0 = time.perf_counter()
    s = Scenario("analytic")
    d = gen_scenario(s, ROUTE_N, SEED)
    nf = s.oracle_nuisance()
    h = AugmentationFn(nf)
    direct = gain_h_direct(d, nf, h)
    via_c = gain(estimate_c_vector(d, nf, h), information(d, nf, h))
    elapsed = time.perf_counter() - t0
    dz = s.design
    closed = 2 * dz.beta[2] ** 2 * (1 + math.exp(dz.theta1**2 / 2))
    gap = abs(direct - via_c) / via_c
    ok = (
        gap <= ROUTE_GAP
        and abs(direct / closed - 1) <= ROUTE_CLOSED_RTOL
        and abs(via_c / closed - 1) <= ROUTE_CLOSED_RTOL
        and elapsed < ROUTE_TIME_LIMIT
    )
    detail = f"direct {direct:.4f}, c-route {via_c:.4f}, closed form {closed:.4f}, gap {gap:.3f}, {elapsed:.1f}s"
    report(acceptance_log, 4, ok, detail)


def test_criterion_5_analytic_identities(acceptance_log):
    rng = np.random.default_rng(SEED + 3)
    nulls = relative_efficiency(0.0, 1.7, 0.3, -0.8, 0.0, 2) == 1.0 and relative_efficiency(1.4, 0.0, 1, 1, 0.0, 1) == 1.0
    worst, order_ok = 0.0, True
    for _ in range(RE_GRID):
        b2 = rng.uniform(-3, 3)
        dz = AnalyticDesign(
            theta0=rng.uniform(-1, 1),
            theta1=rng.uniform(-3, 3),
            beta=(rng.uniform(-2, 2), rng.uniform(-2, 2), b2),
            gamma=(rng.uniform(-2, 2), rng.uniform(-2, 2), b2),
            sigma=rng.uniform(0.2, 3),
            m=int(rng.integers(1, 9)),
        )
        q = analytic_quantities(dz)
        worst = max(worst, abs(q["sigma2_opt"] - q["sigma2_np"] - q["delta_M"]))
        order_ok &= q["gain_empty"] <= q["gain_h"]
    ok = nulls and worst <= IDENTITY_TOL and order_ok
    detail = f"RE null cases exact: {nulls}; identity error {worst:.1e}; gain order holds: {order_ok}"
    report(acceptance_log, 5, ok, detail)


def test_criterion_6_reproduction(acceptance_log, desk_runs, large_run):
    unaug = large_run.summaries["unaugmented"].emp_var_scaled
    aug = large_run.summaries["augmented"].emp_var_scaled
    large_ok = abs(unaug / TARGET_UNAUG - 1) <= TARGET_RTOL and abs(aug / TARGET_AUG - 1) <= TARGET_RTOL
    parts = [f"n=5000: unaug {unaug:.2f} (target {TARGET_UNAUG}), aug {aug:.2f} (target {TARGET_AUG})"]
    desk_ok = True
    for sid in (2, 4):
        run = desk_runs[sid]
        change, se = run.change()
        u = run.summaries["unaugmented"].emp_var_scaled
        g = run.summaries["augmented"].emp_var_scaled
        desk_ok &= g < u and change <= -DESK_REDUCTION
        parts.append(f"scenario {sid} n=2000: {u:.2f} -> {g:.2f} ({100 * change:+.1f}% +/- {100 * se:.1f})")
    report(acceptance_log, 6, large_ok and desk_ok, "; ".join(parts))


def test_criterion_7_coverage(acceptance_log, desk_runs):
    ok, parts = True, []
    for sid, run in desk_runs.items():
        cu = run.summaries["unaugmented"].coverage
        ca = run.summaries["augmented"].coverage
        ok &= COVER_UNAUG[0] <= cu <= COVER_UNAUG[1] and ca >= COVER_AUG_MIN
        parts.append(f"s{sid} {cu:.3f}/{ca:.3f}")
    report(acceptance_log, 7, ok, "coverage unaug/aug " + ", ".join(parts))


def test_criterion_8_bias(acceptance_log, desk_runs, large_run):
    ok, parts = True, []
    runs = [(f"s{sid}", run) for sid, run in desk_runs.items()] + [("s2 n=5000", large_run)]
    for label, run in runs:
        for name, summ in run.summaries.items():
            z = summ.bias / summ.mc_se["bias"]
            ok &= abs(z) <= BIAS_SE
            short = "aug" if name == "augmented" else "unaug"
            parts.append(f"{label} {short} {summ.bias:+.4f} ({z:+.1f} SE)")
    report(acceptance_log, 8, ok, "; ".join(parts))


def test_criterion_9_nonnegativity(acceptance_log, desk_runs, large_run):
    checked, bad = 0, []
    for run in [*desk_runs.values(), large_run]:
        for row in run.records:
            for key in ("unaug", "aug"):
                if row.get(f"psi_{key}") is None:
                    continue
                checked += 1
                ok = (
                    row[f"gain_{key}"] >= 0
                    and row[f"delta_M_{key}"] >= DELTA_FLOOR * row[f"sigma2_np_{key}"]
                    and row[f"var_{key}"] <= row[f"sigma2_M_{key}"]
                )
                if not ok:
                    bad.append((run.scenario.id, row["rep"], key))
    report(acceptance_log, 9, not bad, f"{checked} replication fits checked, {len(bad)} violations {bad[:3]}")


def _cli(*argv):
    out = subprocess.run([sys.executable, "-m", "augmatch", *argv], capture_output=True, check=False)
    return out.returncode, out.stdout


def test_criterion_10_determinism(acceptance_log, tmp_path):
    data = tmp_path / "d.csv"
    write_csv(gen_scenario(2, 2000, SEED), data)
    commands = [
        ["estimate", "--input", str(data), "--matches", "1", "--augment", "--split", "0.05", "--seed", "7"],
        ["estimate", "--input", str(data), "--no-augment", "--disc-k", "2", "--format", "csv"],
        ["simulate", "--scenario", "2", "--n", "500", "--reps", "6", "--seed", "1"],
        ["simulate", "--scenario", "4", "--n", "500", "--reps", "6", "--seed", "1", "--format", "csv"],
        ["releff", "--theta1-grid", "-3:3:0.1", "--beta2", "1", "--m", "1"],
    ]
    same = []
    for argv in commands:
        first, second = _cli(*argv), _cli(*argv)
        same.append(first == second and first[0] == 0 and len(first[1]) > 0)
    report(acceptance_log, 10, all(same), f"{sum(same)}/{len(commands)} commands byte-identical across two runs")
