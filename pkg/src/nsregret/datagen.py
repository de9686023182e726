"""Seeded generators for comparator paths, label streams and the worked
adversarial example with a budget dual that grows linearly in the horizon.

All randomness flows through numpy's PCG64 generator with an explicit seed,
so identical specs produce identical bytes on every platform.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .core import ComparatorSequence, ConfigError, total_variation

PROFILE_KINDS = ("constant", "piecewise_constant", "single_spike", "sinusoid",
                 "random_walk_projected")


@dataclass(frozen=True)
class SequenceProfile:
    kind: str
    n: int
    C_n: float
    B: float
    seed: int
    d: int = 1
    jump_count: int | None = None
    frequency: float | None = None

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ConfigError(f"unknown profile kind {self.kind!r}")
        if self.n < 1 or self.d < 1:
            raise ConfigError("n and d must be positive")
        if self.C_n < 0 or self.B <= 0:
            raise ConfigError("need C_n >= 0 and B > 0")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str  # "uniform" | "truncated_gaussian" | "none"
    sigma: float = 0.0
    clip: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("uniform", "truncated_gaussian", "none"):
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0:
            raise ConfigError("sigma must be nonnegative")

    @property
    def amplitude(self) -> float:
        """Largest possible |noise| draw."""
        if self.kind == "none" or self.sigma == 0.0:
            return 0.0
        if self.kind == "uniform":
            return self.sigma
        return self.clip if self.clip is not None else 3.0 * self.sigma


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _allocate_jump_sizes(rng, cells: int, target: float, cap: float) -> np.ndarray:
    """Random budget split over cells with each share capped; excess is
    redistributed to the remaining slack."""
    sizes = target * rng.dirichlet(np.ones(cells))
    for _ in range(10):
        excess = np.sum(np.maximum(sizes - cap, 0.0))
        sizes = np.minimum(sizes, cap)
        if excess <= 1e-12 * max(1.0, target):
            break
        slack = cap - sizes
        total_slack = np.sum(slack)
        if total_slack <= 0:
            break
        sizes = sizes + slack * (excess / total_slack)
    return np.minimum(sizes, cap)


def gen_comparator(profile: SequenceProfile) -> ComparatorSequence:
    """A sequence in TV^B(C_n), with realized TV in [0.9*C_n, C_n] for
    non-constant profiles. Raises ConfigError for infeasible requests."""
    n, d, B, C = profile.n, profile.d, profile.B, profile.C_n
    rng = _rng(profile.seed)
    target = 0.95 * C

    if C == 0.0 or profile.kind == "constant" or n == 1:
        value = rng.uniform(-B, B, d)
        w = np.tile(value, (n, 1))
        return ComparatorSequence(w)

    if profile.kind == "piecewise_constant":
        J = profile.jump_count if profile.jump_count is not None else 4
        if J < 1 or J > n - 1:
            raise ConfigError("jump_count must be in [1, n-1]")
        if 0.9 * C > J * B * d:
            raise ConfigError(
                f"infeasible: {J} jumps in a box of half-width {B} cannot "
                f"reach TV {C}")
        times = np.sort(rng.choice(np.arange(2, n + 1), size=J, replace=False))
        sizes = _allocate_jump_sizes(rng, J * d, target, B).reshape(J, d)
        w = np.empty((n, d))
        v = rng.uniform(-B / 2, B / 2, d)
        w[: times[0] - 1] = v
        for j, t in enumerate(times):
            for k in range(d):
                step = sizes[j, k]
                sgn = 1.0 if rng.random() < 0.5 else -1.0
                if abs(v[k] + sgn * step) > B:
                    sgn = -sgn
                v[k] = v[k] + sgn * step
            upto = times[j + 1] - 1 if j + 1 < J else n
            w[t - 1: upto] = v
        return ComparatorSequence(w)

    if profile.kind == "single_spike":
        h = target / 2.0
        if h > B:
            raise ConfigError("infeasible: spike height exceeds the box")
        if 2.0 * min(h, B) < 0.9 * C:
            raise ConfigError("infeasible spike request")
        t0 = int(rng.integers(n // 4 + 1, max(n // 2, n // 4 + 2)))
        t1 = int(rng.integers(t0 + 1, max(3 * n // 4, t0 + 2)))
        w = np.zeros((n, d))
        w[t0 - 1: t1 - 1, 0] = h
        return ComparatorSequence(w)

    if profile.kind == "sinusoid":
        freq = profile.frequency if profile.frequency is not None else 2.0
        t = np.arange(n)
        w = np.empty((n, d))
        per_coord = target / d
        for k in range(d):
            phase = rng.uniform(0, 2 * math.pi)
            unit = np.sin(2 * math.pi * freq * t / n + phase)
            tv_unit = total_variation(unit)
            amp = min(per_coord / max(tv_unit, 1e-12), B)
            w[:, k] = amp * unit
        if total_variation(w) < 0.9 * C:
            raise ConfigError("infeasible: sinusoid cannot reach the TV budget in the box")
        return ComparatorSequence(w)

    # random_walk_projected
    steps = rng.normal(0.0, 2.0 * C / n, (n, d))
    w = np.clip(np.cumsum(steps, axis=0), -B, B)
    mean = np.mean(w, axis=0)
    for _ in range(40):
        tv = total_variation(w)
        if 0.9 * C <= tv <= C:
            break
        if tv > C:
            w = mean + (target / tv) * (w - mean)
        else:
            w = np.clip(mean + (target / max(tv, 1e-12)) * (w - mean), -B, B)
            mean = np.mean(w, axis=0)
    else:
        raise ConfigError("infeasible: projected walk cannot match the TV budget")
    return ComparatorSequence(w)


def gen_labels(w: ComparatorSequence, noise: NoiseSpec, B: float) -> np.ndarray:
    """Labels w_t + eps_t, guaranteed inside [-B, B]: the noise amplitude must
    fit the headroom left by the comparator."""
    headroom = B - float(np.max(np.abs(w.w))) if w.w.size else B
    amp = noise.amplitude
    if amp > headroom + 1e-12:
        raise ConfigError(
            f"noise amplitude {amp} exceeds headroom {headroom:.6g} (labels "
            "would leave the box)")
    rng = _rng(noise.seed)
    shape = w.w.shape
    if noise.kind == "none" or noise.sigma == 0.0:
        eps = np.zeros(shape)
    elif noise.kind == "uniform":
        eps = rng.uniform(-noise.sigma, noise.sigma, shape)
    else:
        clip = noise.clip if noise.clip is not None else 3.0 * noise.sigma
        eps = np.clip(rng.normal(0.0, noise.sigma, shape), -clip, clip)
    labels = w.w + eps
    if np.any(np.abs(labels) > B + 1e-12):
        raise ConfigError("generated labels left the box")
    return np.clip(labels, -B, B)


@dataclass(frozen=True)
class LinearDualExample:
    """The adversarial stream whose TV-budget dual equals n/2: a two-level
    step comparator certified by an explicit subgradient ramp."""

    labels: np.ndarray        # (n,)
    expected_u: np.ndarray    # (n,)
    expected_lambda: float
    expected_s: np.ndarray    # (n-1,) subgradients, ramp with increment 2/n
    epsilon: float
    B: float = 2.0
    C_n: float = 1.0


def gen_linear_dual_example(n: int) -> LinearDualExample:
    """Label pattern (-2, -1, ..., -1, 1, 2, ..., 2) whose TV(1)-constrained
    optimum is the step 0 -> 1 at n/2 with dual exactly n/2."""
    if n < 6 or n % 2 != 0:
        raise ConfigError("the worked example needs an even n >= 6")
    half = n // 2
    y = np.empty(n)
    y[0] = -2.0
    y[1: half - 1] = -1.0
    y[half - 1] = 1.0
    y[half:] = 2.0
    u = np.concatenate([np.zeros(half - 1), np.ones(n - half + 1)])
    eps = 2.0 / n
    s = np.empty(n - 1)
    # ramp up to the jump: s_t = 1 - (half-1-t)*eps for t = 1..half-1 (1-based)
    idx = np.arange(1, half)
    s[idx - 1] = 1.0 - (half - 1 - idx) * eps
    # ramp down after the jump: s_t = (n - t)*eps for t = half..n-1
    idx = np.arange(half, n)
    s[idx - 1] = (n - idx) * eps
    return LinearDualExample(labels=y, expected_u=u, expected_lambda=n / 2.0,
                        expected_s=s, epsilon=eps)


def write_generated_csv(path, labels: np.ndarray, w: np.ndarray | None,
                        meta: dict) -> None:
    """Instance file with a JSON metadata header line and columns t,k,y[,w]."""
    labels = np.atleast_2d(labels.T).T if labels.ndim == 1 else labels
    payload = {"schema_version": 1}
    payload.update(meta)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# " + json.dumps(payload, sort_keys=True) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        if w is None:
            writer.writerow(["t", "k", "y"])
        else:
            writer.writerow(["t", "k", "y", "w"])
        for t in range(labels.shape[0]):
            for k in range(labels.shape[1]):
                row = [t + 1, k + 1, repr(float(labels[t, k]))]
                if w is not None:
                    row.append(repr(float(w[t, k])))
                writer.writerow(row)
