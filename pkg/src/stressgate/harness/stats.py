"""Wilcoxon signed-rank test: exact sign enumeration for small n, normal approximation above."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

EXACT_MAX_N = 12


@dataclass(frozen=True)
class WilcoxonResult:
    """``w`` is min(W+, W-); ``p_one_sided`` tests that the first sample is larger."""

    w: float
    p_two_sided: float
    p_one_sided: float
    n: int
    w_plus: float
    method: str

    @property
    def defined(self) -> bool:
        return self.n > 0


UNDEFINED = WilcoxonResult(float("nan"), float("nan"), float("nan"), 0, float("nan"), "undefined")


def _differences(x, y=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if y is None:
        if x.ndim == 2 and x.shape[1] == 2:
            return x[:, 0] - x[:, 1]
        return x.ravel()
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("paired samples must have equal length")
    return x - y


def sign_enumeration(ranks) -> np.ndarray:
    """W+ for every one of the 2^n sign assignments of ``ranks``."""
    ranks = np.asarray(ranks, dtype=float)
    n = ranks.size
    signs = (np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1
    return signs @ ranks


def wilcoxon_signed_rank(x, y=None, exact_max_n: int = EXACT_MAX_N) -> WilcoxonResult:
    """Signed-rank test on paired values (or on differences when ``y`` is omitted).

    Zero differences are dropped and tied magnitudes get average ranks. The
    exact two-sided p-value is the fraction of sign assignments whose
    min(W+, W-) is at most the observed one; the one-sided p-value is the
    fraction with W+ at least the observed W+. Above ``exact_max_n`` pairs a
    normal approximation with continuity and tie corrections is used.
    Returns :data:`UNDEFINED` when every difference is zero.
    """
    d = _differences(x, y)
    if d.size == 0:
        raise ValueError("need at least one pair")
    if not np.all(np.isfinite(d)):
        raise ValueError("differences must be finite")
    d = d[d != 0]
    n = d.size
    if n == 0:
        return UNDEFINED
    ranks = stats.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    total = n * (n + 1) / 2.0
    w = min(w_plus, total - w_plus)
    if n <= exact_max_n:
        wp = sign_enumeration(ranks)
        wmin = np.minimum(wp, total - wp)
        eps = 1e-9
        p2 = float(np.mean(wmin <= w + eps))
        p1 = float(np.mean(wp >= w_plus - eps))
        return WilcoxonResult(w, p2, p1, n, w_plus, "exact")
    mu = total / 2.0
    _, counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(counts**3 - counts) / 48.0
    sd = math.sqrt(var)
    z2 = max(0.0, abs(w_plus - mu) - 0.5) / sd
    p2 = float(min(1.0, 2 * stats.norm.sf(z2)))
    p1 = float(stats.norm.sf((w_plus - mu - 0.5) / sd))
    return WilcoxonResult(w, p2, p1, n, w_plus, "normal")
