"""Follow-the-Leading-History meta-algorithm and its pruned variant.

FLH keeps one base learner per start time. Each round every live expert
predicts, the meta-prediction is the weight average, weights get an
exponential update from each expert's own loss, and a fresh expert enters
with mass 1/(t+1). AFLH additionally retires experts on a dyadic lifetime
schedule, keeping O(log t) alive.

Two learning rates coexist for exp-concave losses: the weight-update rate
here (``meta_zeta``) and the ONS curvature parameter of the base learners
(``ons_zeta``). They are distinct knobs and named accordingly.

The squared-loss/FTL configuration is served by a vectorized engine built on
label prefix sums (an FTL expert's prediction is a trailing mean, so no
per-expert state is needed); for d > 1 it runs the d independent
per-coordinate instances with per-coordinate weights. Other learners go
through a generic object pool.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .core import (ConfigError, CurvatureParams, DecisionBox, Loss, LossBundle,
                   NumericalError, RoundRecord, learner_box)
from .learners import make_learner

_FAULT_ENV = "NSREGRET_FAULT"


def _lifetime(birth: int) -> int:
    """Rounds an expert born at ``birth`` stays alive, counting the birth
    round: with birth = r * 2^k (r odd), the lifetime is 2^(k+2) + 1."""
    lsb = birth & -birth
    return 4 * lsb + 1


def aflh_alive(t: int) -> set[int]:
    """Birth times alive at round t under the pruning schedule: the expert
    born at i survives through round i + 2^(k+2)."""
    if t < 1:
        raise ValueError("t must be >= 1")
    return {i for i in range(1, t + 1) if i + 4 * (i & -i) >= t}


@dataclass
class Expert:
    """View of one pool entry (diagnostics; the pools store arrays/objects)."""

    birth: int
    learner: object
    weight: float
    last_prediction: np.ndarray | None = None


class _FtlPrefixPool:
    """FTL experts over squared losses, represented through label prefix sums."""

    def __init__(self, box: DecisionBox, horizon_hint: int = 256):
        self.box = box
        d = box.dim
        self._sums = np.zeros((max(horizon_hint, 2) + 1, d))
        self._seen = 0

    def observe_label(self, y: np.ndarray) -> None:
        if self._seen + 1 >= self._sums.shape[0]:
            grown = np.zeros((2 * self._sums.shape[0], self._sums.shape[1]))
            grown[: self._sums.shape[0]] = self._sums
            self._sums = grown
        self._sums[self._seen + 1] = self._sums[self._seen] + y
        self._seen += 1

    def predictions(self, births: np.ndarray, t: int) -> np.ndarray:
        """Round-t prediction of each expert: the clamped mean of the labels
        seen since its birth (box center before any). Births are ascending,
        so only the last entry can be the count-zero newborn."""
        counts = (t - births).astype(float)
        newborn = counts[-1] == 0.0
        if newborn:
            counts[-1] = 1.0
        out = (self._sums[t - 1] - self._sums[births - 1]) / counts[:, None]
        if newborn:
            out[-1] = 0.0
        hw = self.box.half_width
        return np.clip(out, -hw, hw, out=out)


class _GenericPool:
    """Object-based pool for OGD/ONS experts."""

    def __init__(self, learner_kind: str, box: DecisionBox, curv: CurvatureParams,
                 ons_zeta_override: float | None):
        self.learner_kind = learner_kind
        self.box = box
        self.curv = curv
        self.ons_zeta_override = ons_zeta_override
        self.learners: list = []

    def spawn(self) -> None:
        self.learners.append(make_learner(self.learner_kind, self.box, self.curv,
                                          self.ons_zeta_override))

    def predictions(self) -> np.ndarray:
        return np.stack([lrn.predict() for lrn in self.learners])

    def observe(self, loss: Loss) -> None:
        for lrn in self.learners:
            lrn.observe(loss)

    def keep(self, mask: np.ndarray) -> None:
        self.learners = [lrn for lrn, m in zip(self.learners, mask) if m]


def default_meta_zeta(loss_kind: str, learner: str, curv: CurvatureParams) -> float:
    """Weight-update rate: 1/(8B^2) for squared losses, alpha for exp-concave
    losses under ONS, H/G_dagger^2 for strongly convex losses under OGD."""
    if loss_kind == "squared" and learner == "ftl":
        return 1.0 / (8.0 * curv.B ** 2)
    if learner == "ogd":
        if curv.H <= 0 or curv.G_dagger <= 0:
            raise ConfigError("OGD meta rate needs positive H and G_dagger")
        return curv.H / curv.G_dagger ** 2
    return curv.alpha


class FlhState:
    """Expert pool plus the meta weight vector.

    ``weights`` has shape (m, dw): dw = 1 for a single vector-valued instance,
    dw = d for the d independent per-coordinate squared-loss instances.
    Buffers are preallocated; the public ``weights``/``births`` are live views.
    """

    def __init__(self, learner_kind: str, box: DecisionBox, curv: CurvatureParams,
                 meta_zeta: float, pruning: str = "none",
                 ons_zeta_override: float | None = None,
                 per_coordinate: bool = False, horizon_hint: int = 256,
                 simplex_check_stride: int = 1):
        if pruning not in ("none", "aflh"):
            raise ConfigError(f"unknown pruning mode {pruning!r}")
        if meta_zeta <= 0:
            raise ConfigError("meta learning rate must be positive")
        self.learner_kind = learner_kind
        self.box = box
        self.curv = curv
        self.zeta = float(meta_zeta)
        self.pruning = pruning
        self.t = 1
        self._fault = os.environ.get(_FAULT_ENV, "")
        self._check_stride = max(1, simplex_check_stride)
        dw = box.dim if per_coordinate else 1
        cap = 128 if pruning == "aflh" else max(horizon_hint + 2, 16)
        self._wbuf = np.zeros((cap, dw))
        self._wbuf[0] = 1.0
        self._bbuf = np.zeros(cap, dtype=np.int64)
        self._dbuf = np.zeros(cap, dtype=np.int64)
        self._bbuf[0] = 1
        self._dbuf[0] = 1 + 4
        self.m = 1
        if learner_kind == "ftl":
            self.pool: object = _FtlPrefixPool(box, horizon_hint)
        else:
            self.pool = _GenericPool(learner_kind, box, curv, ons_zeta_override)
            self.pool.spawn()

    @property
    def births(self) -> np.ndarray:
        return self._bbuf[: self.m]

    @property
    def weights(self) -> np.ndarray:
        return self._wbuf[: self.m]

    @property
    def n_experts(self) -> int:
        return self.m

    def experts(self) -> list[Expert]:
        """Diagnostic view of the pool (FTL experts carry no object state)."""
        preds = self.expert_predictions()
        learners = (self.pool.learners if isinstance(self.pool, _GenericPool)
                    else [None] * self.m)
        return [Expert(birth=int(self._bbuf[i]), learner=learners[i],
                       weight=float(self._wbuf[i].max()), last_prediction=preds[i])
                for i in range(self.m)]

    def _grow(self) -> None:
        cap = 2 * self._wbuf.shape[0]
        for name in ("_wbuf", "_bbuf", "_dbuf"):
            old = getattr(self, name)
            shape = (cap,) + old.shape[1:]
            new = np.zeros(shape, dtype=old.dtype)
            new[: old.shape[0]] = old
            setattr(self, name, new)

    def expert_predictions(self) -> np.ndarray:
        if isinstance(self.pool, _FtlPrefixPool):
            return self.pool.predictions(self.births, self.t)
        return self.pool.predictions()

    def predict(self) -> np.ndarray:
        if self.m == 0:
            raise NumericalError("empty expert pool")
        preds = self.expert_predictions()
        if self._wbuf.shape[1] == 1:
            return preds.T @ self.weights[:, 0]
        return np.sum(self.weights * preds, axis=0)

    def update_weights(self, losses_of_experts: np.ndarray) -> None:
        """Exponential reweighting by each expert's own loss, then the
        addition step (the newcomer gets mass 1/(t+1)), then pruning."""
        losses = np.asarray(losses_of_experts, dtype=float)
        if losses.ndim == 1:
            losses = losses[:, None]
        m = self.m
        if losses.shape != (m, self._wbuf.shape[1]):
            raise ValueError("one loss per live expert (per weight column) required")
        if not np.isfinite(losses).all():
            raise NumericalError("non-finite expert loss")
        w = self._wbuf[:m]
        shifted = losses - losses.min(axis=0, keepdims=True)
        np.multiply(shifted, -self.zeta, out=shifted)
        np.exp(shifted, out=shifted)
        w *= shifted
        total = w.sum(axis=0, keepdims=True)
        if total.min() <= 0.0:
            w[:] = np.where(shifted == shifted.max(axis=0, keepdims=True), 1.0, 0.0)
            total = w.sum(axis=0, keepdims=True)
        frac = 1.0 / (self.t + 1)
        if self._fault != "weight_norm":
            w *= (1.0 - frac) / total
        else:
            w *= 1.0 - frac
        if m + 1 >= self._wbuf.shape[0]:
            self._grow()
        birth = self.t + 1
        self._wbuf[m] = frac
        self._bbuf[m] = birth
        self._dbuf[m] = birth + 4 * (birth & -birth)
        self.m = m + 1
        self.t += 1
        if isinstance(self.pool, _GenericPool):
            self.pool.spawn()
        if self.pruning == "aflh":
            keep = self._dbuf[: self.m] >= self.t
            if not keep.all():
                nm = int(keep.sum())
                self._wbuf[:nm] = self._wbuf[: self.m][keep]
                self._bbuf[:nm] = self._bbuf[: self.m][keep]
                self._dbuf[:nm] = self._dbuf[: self.m][keep]
                self.m = nm
                if isinstance(self.pool, _GenericPool):
                    self.pool.keep(keep)
                norm = self._wbuf[:nm].sum(axis=0, keepdims=True)
                if norm.min() <= 0:
                    raise NumericalError("pruning removed all weight mass")
                if self._fault != "weight_norm":
                    self._wbuf[:nm] /= norm
        if self._fault != "weight_norm" and (self.t % self._check_stride == 0):
            err = np.abs(self.weights.sum(axis=0) - 1.0).max()
            if err > 1e-12 or self.weights.min() < 0:
                raise NumericalError(f"weight simplex violated (err={err:.2e})")


def flh_predict(state: FlhState) -> np.ndarray:
    """Weight-averaged prediction of the live experts."""
    return state.predict()


def flh_update(state: FlhState, losses_of_experts) -> FlhState:
    """Meta-weight update + addition step + pruning; mutates and returns state."""
    state.update_weights(losses_of_experts)
    return state


@dataclass
class ExperimentTrace:
    """Per-round protocol record in array form."""

    predictions: np.ndarray      # (n, d)
    loss_values: np.ndarray      # (n,)
    grad_norms: np.ndarray       # (n,)
    labels: np.ndarray | None = None  # (n, d) for squared streams

    @property
    def n(self) -> int:
        return self.predictions.shape[0]

    @property
    def dim(self) -> int:
        return self.predictions.shape[1]

    def round_records(self) -> list[RoundRecord]:
        return [RoundRecord(t + 1, self.predictions[t], float(self.loss_values[t]),
                            float(self.grad_norms[t]))
                for t in range(self.n)]


@dataclass
class RunConfig:
    """Configuration of one protocol run."""

    learner: str = "ftl"
    meta: str = "flh"        # flh | aflh | none (bare base learner)
    curvature: CurvatureParams | None = None
    dim: int = 1
    meta_zeta: float | None = None
    ons_zeta: float | None = None

    def validate(self, bundle: LossBundle) -> None:
        if self.learner not in ("ftl", "ogd", "ons"):
            raise ConfigError(f"unknown learner {self.learner!r}")
        if self.meta not in ("flh", "aflh", "none"):
            raise ConfigError(f"unknown meta mode {self.meta!r}")
        if self.learner == "ftl" and bundle.kind != "squared":
            raise ConfigError("FTL is defined only for squared losses")
        if bundle.dim != self.dim:
            raise ConfigError(f"bundle dimension {bundle.dim} != config dim {self.dim}")


def run_protocol(bundle: LossBundle, config: RunConfig) -> ExperimentTrace:
    """Full online loop: predict, observe, feed every live expert its own
    loss, update meta weights. Deterministic given the bundle and config."""
    config.validate(bundle)
    curv = config.curvature or bundle.curvature
    n, d = len(bundle), bundle.dim
    box = learner_box(curv, d, bundle.kind)
    meta_zeta = (config.meta_zeta if config.meta_zeta is not None
                 else default_meta_zeta(bundle.kind, config.learner, curv))

    if config.meta == "none":
        return _run_bare(bundle, config, box, curv)
    if bundle.kind == "squared" and config.learner == "ftl":
        if config.meta == "flh" and not os.environ.get(_FAULT_ENV, ""):
            return _run_ftl_flh_fast(bundle, box, meta_zeta)
        return _run_ftl_state(bundle, config, box, curv, meta_zeta)
    return _run_generic_flh(bundle, config, box, curv, meta_zeta)


def _run_bare(bundle: LossBundle, config: RunConfig, box: DecisionBox,
              curv: CurvatureParams) -> ExperimentTrace:
    learner = make_learner(config.learner, box, curv, config.ons_zeta)
    n, d = len(bundle), bundle.dim
    preds = np.empty((n, d))
    vals = np.empty(n)
    gnorms = np.empty(n)
    for t in range(n):
        x = learner.predict()
        loss = bundle[t]
        preds[t] = x
        vals[t] = loss.value(x)
        gnorms[t] = float(np.linalg.norm(loss.grad(x)))
        learner.observe(loss)
    return ExperimentTrace(preds, vals, gnorms, labels=bundle.labels)


def _run_ftl_state(bundle: LossBundle, config: RunConfig, box: DecisionBox,
                   curv: CurvatureParams, meta_zeta: float) -> ExperimentTrace:
    """FLH/AFLH over FTL via the FlhState machinery (d per-coordinate
    instances with per-coordinate weights)."""
    n, d = len(bundle), bundle.dim
    labels = bundle.labels
    state = FlhState("ftl", box, curv, meta_zeta,
                     pruning="aflh" if config.meta == "aflh" else "none",
                     per_coordinate=True, horizon_hint=n,
                     simplex_check_stride=64)
    preds_out = np.empty((n, d))
    vals = np.empty(n)
    gnorms = np.empty(n)
    pool: _FtlPrefixPool = state.pool  # type: ignore[assignment]
    for t in range(n):
        expert_preds = state.expert_predictions()          # (m, d)
        x = (state.weights * expert_preds).sum(axis=0)     # per-coordinate mix
        y = labels[t]
        preds_out[t] = x
        delta = y - x
        sq = float(delta @ delta)
        vals[t] = sq
        gnorms[t] = 2.0 * sq ** 0.5
        expert_losses = (y - expert_preds) ** 2            # (m, d) own losses
        pool.observe_label(y)
        state.update_weights(expert_losses)
    return ExperimentTrace(preds_out, vals, gnorms, labels=labels)


def _flh_ftl_1d(y: np.ndarray, zeta: float) -> np.ndarray:
    """One unpruned FLH-FTL instance over a scalar label stream; returns the
    per-round meta predictions.

    Expert j (born j) predicts the trailing mean (S[t-1]-S[j-1])/(t-j); the
    newborn predicts the box center. Labels satisfy |y| <= B, so trailing
    means never leave the box and the FTL clamp is inactive. The weight
    recursion is identical to FlhState.update_weights (equivalence is pinned
    by a test); the simplex check runs on a stride plus the final round.
    All buffers are contiguous 1D slices.
    """
    n = y.shape[0]
    S = np.concatenate([[0.0], np.cumsum(y)])
    inv = 1.0 / np.arange(1.0, n + 2.0)
    rinv = 1.0 / np.arange(n, 0, -1.0)  # rinv[n - c:] == [1/c, ..., 1/1]
    W = np.empty(n + 1)
    W[0] = 1.0
    P = np.empty(n)
    L = np.empty(n)
    out = np.empty(n)
    for t in range(1, n + 1):
        m = t
        c = m - 1
        Pm = P[:m]
        if c:
            np.subtract(S[t - 1], S[:c], out=Pm[:c])
            Pm[:c] *= rinv[n - c:]
        Pm[c] = 0.0
        Wm = W[:m]
        x = float(Wm @ Pm)
        y_t = y[t - 1]
        out[t - 1] = x
        Lm = L[:m]
        np.subtract(y_t, Pm, out=Lm)
        np.multiply(Lm, Lm, out=Lm)
        np.subtract(Lm.min(), Lm, out=Lm)
        np.multiply(Lm, zeta, out=Lm)
        np.exp(Lm, out=Lm)
        Wm *= Lm
        frac = inv[t]  # 1/(t+1)
        Wm *= (1.0 - frac) / Wm.sum()
        W[m] = frac
        if t % 64 == 0 or t == n:
            err = abs(W[: m + 1].sum() - 1.0)
            if err > 1e-12 or np.any(W[: m + 1] < 0):
                raise NumericalError(f"weight simplex violated (err={err:.2e})")
    return out


def _run_ftl_flh_fast(bundle: LossBundle, box: DecisionBox,
                      meta_zeta: float) -> ExperimentTrace:
    """Unpruned FLH-FTL: d independent per-coordinate instances."""
    labels = bundle.labels
    n, d = labels.shape
    preds_out = np.column_stack(
        [_flh_ftl_1d(np.ascontiguousarray(labels[:, k]), meta_zeta) for k in range(d)])
    delta = labels - preds_out
    vals = np.sum(delta * delta, axis=1)
    gnorms = 2.0 * np.sqrt(vals)
    return ExperimentTrace(preds_out, vals, gnorms, labels=labels)


def _run_generic_flh(bundle: LossBundle, config: RunConfig, box: DecisionBox,
                     curv: CurvatureParams, meta_zeta: float) -> ExperimentTrace:
    n, d = len(bundle), bundle.dim
    state = FlhState(config.learner, box, curv, meta_zeta,
                     pruning="aflh" if config.meta == "aflh" else "none",
                     ons_zeta_override=config.ons_zeta)
    preds_out = np.empty((n, d))
    vals = np.empty(n)
    gnorms = np.empty(n)
    for t in range(n):
        expert_preds = state.expert_predictions()
        x = expert_preds.T @ state.weights[:, 0]
        loss = bundle[t]
        preds_out[t] = x
        vals[t] = loss.value(x)
        gnorms[t] = float(np.linalg.norm(loss.grad(x)))
        expert_losses = np.array([loss.value(p) for p in expert_preds])
        state.pool.observe(loss)                           # type: ignore[union-attr]
        state.update_weights(expert_losses)
    return ExperimentTrace(preds_out, vals, gnorms, labels=bundle.labels)
