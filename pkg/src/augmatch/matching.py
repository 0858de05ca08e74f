"""1:M nearest-neighbour matching with replacement on a scalar score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MatchingError(ValueError):
    pass


@dataclass(frozen=True)
class MatchResult:
    """``sets[i]`` holds the M opposite-arm matches of unit i, ``counts[i]`` = K_M(i)."""

    m: int
    sets: np.ndarray
    counts: np.ndarray

    @property
    def n(self) -> int:
        return self.sets.shape[0]


def _exact_nearest(s_sorted, idx_sorted, x, m):
    d = np.abs(s_sorted - x)
    order = np.lexsort((idx_sorted, d))
    return idx_sorted[order[:m]]


def _match_into(s_sorted, idx_sorted, queries, m):
    """Indices of the ``m`` targets closest to each query, ties to the smaller index.

    The ``m`` nearest always sit within ``m`` sorted positions on either side
    of the insertion point. A row is redone by brute force only when the
    distance tie at the ``m``-th match may continue past that window.
    """
    nt = s_sorted.shape[0]
    pos = np.searchsorted(s_sorted, queries, side="left")
    cand = pos[:, None] + np.arange(-m, m)[None, :]
    valid = (cand >= 0) & (cand < nt)
    cand_c = np.clip(cand, 0, nt - 1)
    dist = np.where(valid, np.abs(s_sorted[cand_c] - queries[:, None]), np.inf)
    gidx = np.where(valid, idx_sorted[cand_c], np.iinfo(np.int64).max)
    order = np.lexsort((gidx, dist), axis=-1)
    rows = np.arange(len(queries))[:, None]
    chosen = gidx[rows, order[:, :m]]
    dstar = dist[rows[:, 0], order[:, m - 1]]

    # distances monotone away from the insertion point: only the first
    # element beyond either end of the window can tie with the m-th match
    beyond_l = pos - m - 1
    beyond_r = pos + m
    tie_l = beyond_l >= 0
    tie_l[tie_l] = np.abs(s_sorted[beyond_l[tie_l]] - queries[tie_l]) == dstar[tie_l]
    tie_r = beyond_r < nt
    tie_r[tie_r] = np.abs(s_sorted[beyond_r[tie_r]] - queries[tie_r]) == dstar[tie_r]
    for r in np.flatnonzero(tie_l | tie_r):
        chosen[r] = _exact_nearest(s_sorted, idx_sorted, queries[r], m)
    return chosen


def match_1m(scores, a, m: int = 1) -> MatchResult:
    """Match every unit to its ``m`` nearest opposite-arm units by ``|score_j - score_i|``.

    Ties are broken in favour of the smaller unit index, so every matched
    set has exactly ``m`` members.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    a = np.asarray(a).ravel()
    n = scores.shape[0]
    if a.shape[0] != n:
        raise MatchingError("scores and treatment differ in length")
    if m < 1:
        raise MatchingError("number of matches must be at least 1")
    if not np.all(np.isfinite(scores)):
        raise MatchingError("scores must be finite")
    treated = np.flatnonzero(a == 1)
    control = np.flatnonzero(a == 0)
    if min(len(treated), len(control)) < m:
        raise MatchingError(f"fewer than {m} units in an arm")

    sets = np.empty((n, m), dtype=np.int64)
    for src, dst in ((treated, control), (control, treated)):
        order = np.argsort(scores[dst], kind="stable")
        s_sorted = scores[dst][order]
        idx_sorted = dst[order].astype(np.int64)
        sets[src] = _match_into(s_sorted, idx_sorted, scores[src], m)
    counts = np.bincount(sets.ravel(), minlength=n)
    return MatchResult(m, sets, counts)


def ate_matching(y, a, match: MatchResult) -> float:
    """Matching estimate via the match-count representation."""
    y = np.asarray(y, dtype=float).ravel()
    a = np.asarray(a).ravel()
    if not (y.shape[0] == a.shape[0] == match.n):
        raise MatchingError("outcome, treatment and match lengths differ")
    sign = 2.0 * a - 1.0
    return float(np.mean(sign * (1.0 + match.counts / match.m) * y))


def ate_matching_direct(y, a, match: MatchResult) -> float:
    """Same estimate written as mean of signed differences to matched means."""
    y = np.asarray(y, dtype=float).ravel()
    a = np.asarray(a).ravel()
    if not (y.shape[0] == a.shape[0] == match.n):
        raise MatchingError("outcome, treatment and match lengths differ")
    sign = 2.0 * a - 1.0
    return float(np.mean(sign * (y - y[match.sets].mean(axis=1))))


def ate_from_scores(d, scores, m: int = 1) -> float:
    return ate_matching(d.y, d.a, match_1m(scores, d.a, m))
