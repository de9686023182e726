"""Diagnostics mirroring the regret analysis: the key partition, the
T1/T2/T3 decomposition, dynamic-regret computation and scaling fits.

Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import ComparatorSequence, LossBundle
from .meta import ExperimentTrace
from .oracle import OracleSolution, _as_2d

# The greedy spawn threshold is shaved by this relative margin so the per-bin
# TV bound survives floating-point re-summation of the jumps.
_SPAWN_SHAVE = 1e-9


@dataclass
class Partition:
    """Ordered bins [i_s, i_t] (1-based, inclusive) tiling [1, n], with the
    per-bin length n_i and internal oracle TV C_i."""

    bins: list
    n_i: np.ndarray
    C_i: np.ndarray
    B: float
    horizon: int

    @property
    def M(self) -> int:
        return len(self.bins)

    def check_tiling(self) -> bool:
        if not self.bins or self.bins[0][0] != 1 or self.bins[-1][1] != self.horizon:
            return False
        return all(b[0] == a[1] + 1 for a, b in zip(self.bins, self.bins[1:]))


def build_partition(u, B: float) -> Partition:
    """Greedy left-to-right binning of an oracle sequence.

    A bin [i_s, i_t] is closed as soon as the lookahead TV through i_t + 1
    exceeds B/sqrt(i_t - i_s + 2); afterwards, any bin boundary falling inside
    a constant stretch of u is moved so the stretch becomes its own bin.
    Every returned bin satisfies sum of internal l1 jumps <= B/sqrt(n_i) with
    the reported n_i = i_t - i_s + 1.
    """
    u2 = _as_2d(u)
    n = u2.shape[0]
    if B <= 0:
        raise ValueError("B must be positive")
    jumps = (np.sum(np.abs(np.diff(u2, axis=0)), axis=1)
             if n > 1 else np.zeros(0))

    ends: list[int] = []
    a = 1
    run = 0.0
    for e in range(1, n):
        run += jumps[e - 1]  # TV over [a, e+1]
        if run > (B / math.sqrt(e - a + 2)) * (1.0 - _SPAWN_SHAVE):
            ends.append(e)
            a = e + 1
            run = 0.0
    ends.append(n)

    # Post-processing: boundaries must not split a flat stretch of u.
    boundary_set = set(ends)
    flat_ranges = []
    for b in ends:
        if b < n and jumps[b - 1] == 0.0:
            p = b
            while p > 1 and jumps[p - 2] == 0.0:
                p -= 1
            q = b + 1
            while q < n and jumps[q - 1] == 0.0:
                q += 1
            flat_ranges.append((p, q))
    for p, q in flat_ranges:
        boundary_set -= set(range(p, q))
        if p - 1 >= 1:
            boundary_set.add(p - 1)
        boundary_set.add(q)
    boundary_set.add(n)
    final = sorted(boundary_set)

    bins = []
    start = 1
    for b in final:
        bins.append((start, b))
        start = b + 1
    n_i = np.array([e - s + 1 for s, e in bins], dtype=np.int64)
    C_i = np.array([float(np.sum(jumps[s: e])) if e > s else 0.0
                    for s, e in ((s - 1, e - 1) for s, e in bins)])
    return Partition(bins=bins, n_i=n_i, C_i=C_i, B=B, horizon=n)


@dataclass
class DecompositionRow:
    """Per-bin summands of the three-way regret split. ``pivot`` is the bin
    label mean for squared losses and the one-gradient-step point for
    exp-concave losses."""

    index: int
    i_s: int
    i_t: int
    n_i: int
    C_i: float
    T1: float
    T2: float
    T3: float
    bar_u: np.ndarray
    pivot: np.ndarray
    delta_s: np.ndarray
    gamma_net: np.ndarray

    @property
    def total(self) -> float:
        return self.T1 + self.T2 + self.T3


def regret_decompose(trace: ExperimentTrace, oracle: OracleSolution,
                     partition: Partition, bundle: LossBundle) -> list[DecompositionRow]:
    """T1 (learner vs bin pivot) + T2 (pivot vs bin mean of the oracle) +
    T3 (bin mean vs oracle). For squared losses the three sums telescope
    exactly to the dynamic regret against the oracle sequence."""
    n = trace.n
    if oracle.n != n or partition.horizon != n or len(bundle) != n:
        raise ValueError("trace, oracle, partition and losses must share the horizon")
    u = oracle.u
    d = u.shape[1]
    s_pad = np.vstack([np.zeros(d), oracle.s, np.zeros(d)]) if n > 1 else np.zeros((2, d))
    rows = []
    X = trace.predictions
    beta = bundle.curvature.beta
    for i, (i_s, i_t) in enumerate(partition.bins):
        sl = slice(i_s - 1, i_t)
        n_i = i_t - i_s + 1
        bar_u = np.mean(u[sl], axis=0)
        if bundle.kind == "squared":
            Y = bundle.labels[sl]
            pivot = np.mean(Y, axis=0)
            t1 = float(np.sum((X[sl] - Y) ** 2) - np.sum((Y - pivot) ** 2))
            t2 = float(np.sum((Y - pivot) ** 2) - np.sum((Y - bar_u) ** 2))
            t3 = float(np.sum((Y - bar_u) ** 2) - np.sum((Y - u[sl]) ** 2))
        else:
            grad_sum = np.zeros(d)
            for j in range(i_s - 1, i_t):
                grad_sum += bundle[j].grad(bar_u)
            pivot = bar_u - grad_sum / (n_i * beta)
            f_at = lambda pt: sum(bundle[j].value(pt) for j in range(i_s - 1, i_t))
            f_pred = sum(bundle[j].value(X[j]) for j in range(i_s - 1, i_t))
            f_orc = sum(bundle[j].value(u[j]) for j in range(i_s - 1, i_t))
            f_pivot = f_at(pivot)
            f_bar = f_at(bar_u)
            t1 = float(f_pred - f_pivot)
            t2 = float(f_pivot - f_bar)
            t3 = float(f_bar - f_orc)
        delta_s = s_pad[i_t] - s_pad[i_s - 1]
        gamma_net = np.sum(oracle.gamma_minus[sl] - oracle.gamma_plus[sl], axis=0)
        rows.append(DecompositionRow(
            index=i + 1, i_s=i_s, i_t=i_t, n_i=n_i, C_i=float(partition.C_i[i]),
            T1=t1, T2=t2, T3=t3, bar_u=bar_u, pivot=pivot,
            delta_s=delta_s, gamma_net=gamma_net))
    return rows


def dynamic_regret(trace: ExperimentTrace, comparator, bundle: LossBundle) -> float:
    """sum_t f_t(x_t) - f_t(w_t) against an arbitrary comparator path."""
    w = comparator.w if isinstance(comparator, ComparatorSequence) else _as_2d(comparator)
    if w.shape[0] != trace.n or len(bundle) != trace.n:
        raise ValueError("horizon mismatch between trace, comparator and losses")
    return float(np.sum(trace.loss_values) - np.sum(bundle.values_at(w)))


def fit_scaling_exponent(points) -> tuple[float, float, float]:
    """OLS fit of log(regret) on log(n); returns (slope, intercept, r2).
    Points with nonpositive regret are excluded with a warning."""
    pts = [(float(n), float(r)) for n, r in points]
    kept = [(n, r) for n, r in pts if r > 0 and n > 0]
    if len(kept) < len(pts):
        warnings.warn(f"fit_scaling_exponent: dropped {len(pts) - len(kept)} "
                      "nonpositive points", RuntimeWarning, stacklevel=2)
    if len(kept) < 3:
        raise ValueError("need at least 3 positive points for a scaling fit")
    x = np.log([n for n, _ in kept])
    yv = np.log([r for _, r in kept])
    slope, intercept = np.polyfit(x, yv, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((yv - pred) ** 2))
    ss_tot = float(np.sum((yv - np.mean(yv)) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2


# ---------------------------------------------------------------------------
# Interval regret helpers for squared-loss streams
# ---------------------------------------------------------------------------

def interval_static_regret(labels: np.ndarray, preds: np.ndarray,
                           r: int, s: int) -> float:
    """Static regret on [r, s] (1-based, inclusive) against the best fixed
    point, which for squared losses is the interval label mean."""
    Y = _as_2d(labels)[r - 1: s]
    X = _as_2d(preds)[r - 1: s]
    mean = np.mean(Y, axis=0)
    return float(np.sum((Y - X) ** 2) - np.sum((Y - mean) ** 2))


def max_dyadic_interval_regret(labels: np.ndarray, preds: np.ndarray,
                               min_len: int = 8) -> float:
    """Worst static regret over the dyadic interval grid (lengths min_len,
    2*min_len, ..., starts on half-length offsets): the strong-adaptivity
    summary reported by the CLI."""
    Y = _as_2d(labels)
    X = _as_2d(preds)
    n = Y.shape[0]
    s1 = np.vstack([np.zeros((1, Y.shape[1])), np.cumsum(Y, axis=0)])
    q1 = np.concatenate([[0.0], np.cumsum(np.sum(Y ** 2, axis=1))])
    c1 = np.concatenate([[0.0], np.cumsum(np.sum((Y - X) ** 2, axis=1))])
    worst = -np.inf
    length = min_len
    while length <= n:
        step = max(1, length // 2)
        for start in range(0, n - length + 1, step):
            end = start + length
            mean = (s1[end] - s1[start]) / length
            best_fixed = (q1[end] - q1[start]) - length * float(mean @ mean)
            reg = (c1[end] - c1[start]) - best_fixed
            worst = max(worst, reg)
        length *= 2
    return float(worst)


def ftl_interval_losses(labels: np.ndarray, r: int, s: int) -> np.ndarray:
    """Per-round squared losses on [r, s] of a fresh FTL born at round r
    (prediction at t is the mean of labels r..t-1; box center at t = r)."""
    Y = _as_2d(labels)[r - 1: s]
    m = Y.shape[0]
    csum = np.vstack([np.zeros((1, Y.shape[1])), np.cumsum(Y, axis=0)])
    counts = np.arange(m, dtype=float)[:, None]
    preds = np.zeros_like(Y)
    preds[1:] = csum[1:m] / counts[1:]
    return np.sum((Y - preds) ** 2, axis=1)
