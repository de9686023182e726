"""Loss functions, curvature parameter bundles, decision boxes and protocol records.

Everything here is a plain value type: no hidden state, safe to share across
threads. Indices exposed through public APIs are 1-based (round ``t`` runs
from 1 to ``n``); internal arrays are 0-based numpy.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration or input (CLI exit code 1)."""


class NumericalError(RuntimeError):
    """A solver failed to reach its contracted tolerance (CLI exit code 2)."""


def _as_vector(x, dim: int) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1 or v.size != dim:
        raise ValueError(f"expected a vector of dimension {dim}, got shape {np.shape(x)}")
    return v


@dataclass(frozen=True)
class CurvatureParams:
    """Curvature and Lipschitz constants of a loss family.

    G is the Lipschitz bound on the comparator box, g_dagger the bound on the
    enlarged learner box, alpha the exp-concavity modulus, beta the strong
    smoothness modulus (>= 1 by convention), H the strong convexity modulus
    (0 if absent) and B the half-width of the comparator box.
    """

    G: float
    G_dagger: float
    alpha: float
    beta: float
    H: float
    B: float

    def __post_init__(self):
        if self.B <= 0:
            raise ValueError("B must be positive")
        if self.G < 0 or self.G_dagger < 0:
            raise ValueError("Lipschitz bounds must be nonnegative")
        if self.G > self.G_dagger + 1e-12:
            raise ValueError("G must not exceed G_dagger")
        if self.beta < 1:
            raise ValueError("beta must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.H < 0:
            raise ValueError("H must be nonnegative")


def squared_curvature(B: float) -> CurvatureParams:
    """Standard constants for the squared loss (y - x)^2 with |y| <= B on [-B, B]:
    2-strongly convex, 2-smooth, 1/(8B^2) exp-concave, 4B-Lipschitz."""
    if B <= 0:
        raise ValueError("B must be positive")
    return CurvatureParams(G=4.0 * B, G_dagger=4.0 * B, alpha=1.0 / (8.0 * B * B),
                           beta=2.0, H=2.0, B=B)


def glm_curvature(R: float, a: float, a_plus: float, b: float, c: float) -> CurvatureParams:
    """Curvature constants for losses of the form g(v^T x) with ||v||_2 <= R.

    a / a_plus bound |g'| on the comparator / learner box, b and c bound g''
    from above and below. Yields G = a*R, beta = b*R^2 (floored at 1),
    alpha = c / a_plus^2 and G_dagger = a_plus * R.
    """
    for name, val in (("R", R), ("a", a), ("a_plus", a_plus), ("b", b), ("c", c)):
        if val <= 0:
            raise ValueError(f"{name} must be positive, got {val}")
    if c > b:
        raise ValueError("c must not exceed b")
    if a > a_plus:
        raise ValueError("a must not exceed a_plus")
    return CurvatureParams(
        G=a * R,
        G_dagger=a_plus * R,
        alpha=c / (a_plus * a_plus),
        beta=max(1.0, b * R * R),
        H=0.0,
        B=1.0,  # placeholder; callers embed the real box via replace_B
    )


def with_box(params: CurvatureParams, B: float) -> CurvatureParams:
    """Copy of params with the comparator half-width replaced."""
    return dataclasses.replace(params, B=B)


@dataclass(frozen=True)
class DecisionBox:
    """Symmetric box {x : ||x||_inf <= half_width} in R^dim."""

    half_width: float
    dim: int = 1

    def __post_init__(self):
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    def clamp(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, -self.half_width, self.half_width)

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(x) <= self.half_width + tol))

    @property
    def center(self) -> np.ndarray:
        return np.zeros(self.dim)

    @property
    def l2_diameter(self) -> float:
        return 2.0 * self.half_width * math.sqrt(self.dim)


def learner_box(curv: CurvatureParams, dim: int, loss_kind: str) -> DecisionBox:
    """Decision box of the base learners.

    Squared losses are learned properly on the comparator box itself; general
    exp-concave losses use the enlarged box of half-width B + G (a single box
    independent of beta).
    """
    if loss_kind == "squared":
        return DecisionBox(curv.B, dim)
    return DecisionBox(curv.B + curv.G, dim)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GlmLink:
    """A scalar link g with its derivative, for losses of the form g(v^T x)."""

    g: Callable[[float], float]
    dg: Callable[[float], float]
    name: str = "link"

    def __repr__(self):
        return f"GlmLink({self.name})"


SQUARE_LINK = GlmLink(lambda z: z * z, lambda z: 2.0 * z, "square")
EXP_LINK = GlmLink(math.exp, math.exp, "exp")


def logistic_link(y: float) -> GlmLink:
    """Logistic regression link: z -> log(1 + exp(-y*z)) for a label y in {-1, +1}."""

    def g(z: float) -> float:
        return math.log1p(math.exp(-y * z)) if -y * z < 35 else -y * z

    def dg(z: float) -> float:
        return -y / (1.0 + math.exp(y * z))

    return GlmLink(g, dg, f"logistic(y={y:+g})")


def shifted_square_link(y: float) -> GlmLink:
    """Online-regression link: z -> (z - y)^2."""
    return GlmLink(lambda z: (z - y) ** 2, lambda z: 2.0 * (z - y), f"sq(y={y:g})")


class SquaredLoss:
    """f(x) = ||y - x||_2^2 with the label inside the comparator box."""

    __slots__ = ("y", "B")
    kind = "squared"

    def __init__(self, y, B: float):
        self.y = np.atleast_1d(np.asarray(y, dtype=float))
        self.B = float(B)
        if np.any(np.abs(self.y) > self.B + 1e-12):
            raise ValueError("squared-loss label exceeds the box bound B")

    @property
    def dim(self) -> int:
        return self.y.size

    def value(self, x) -> float:
        x = _as_vector(x, self.dim)
        return float(np.sum((self.y - x) ** 2))

    def grad(self, x) -> np.ndarray:
        x = _as_vector(x, self.dim)
        return 2.0 * (x - self.y)

    def __repr__(self):
        return f"SquaredLoss(y={self.y}, B={self.B})"


class GlmLoss:
    """f(x) = g(v^T x) for a convex scalar link g and a feature vector v."""

    __slots__ = ("link", "v")
    kind = "glm"

    def __init__(self, link: GlmLink, v):
        self.link = link
        self.v = np.atleast_1d(np.asarray(v, dtype=float))

    @property
    def dim(self) -> int:
        return self.v.size

    def value(self, x) -> float:
        x = _as_vector(x, self.dim)
        return float(self.link.g(float(self.v @ x)))

    def grad(self, x) -> np.ndarray:
        x = _as_vector(x, self.dim)
        return float(self.link.dg(float(self.v @ x))) * self.v

    def __repr__(self):
        return f"GlmLoss({self.link!r}, v={self.v})"


Loss = Union[SquaredLoss, GlmLoss]


def eval_loss(loss: Loss, x) -> float:
    """Loss value f_t(x)."""
    return loss.value(x)


def eval_grad(loss: Loss, x) -> np.ndarray:
    """Analytic gradient of f_t at x."""
    return loss.grad(x)


@dataclass
class LossBundle:
    """A time-indexed family of losses together with its curvature constants.

    For squared losses the labels are additionally kept as an (n, d) array so
    hot loops can work vectorized instead of through per-round objects.
    """

    losses: list
    curvature: CurvatureParams
    kind: str
    labels: np.ndarray | None = None  # (n, d), squared losses only

    @classmethod
    def squared(cls, labels, curvature: CurvatureParams | None = None) -> "LossBundle":
        labels = np.asarray(labels, dtype=float)
        if labels.ndim == 1:
            labels = labels[:, None]
        if curvature is None:
            curvature = squared_curvature(float(max(np.max(np.abs(labels)), 1e-12)))
        losses = [SquaredLoss(row, curvature.B) for row in labels]
        return cls(losses=losses, curvature=curvature, kind="squared", labels=labels)

    @classmethod
    def glm(cls, links: Sequence[GlmLink], features, curvature: CurvatureParams) -> "LossBundle":
        features = np.asarray(features, dtype=float)
        if features.ndim == 1:
            features = features[:, None]
        if len(links) != features.shape[0]:
            raise ValueError("one link per round is required")
        losses = [GlmLoss(link, v) for link, v in zip(links, features)]
        return cls(losses=losses, curvature=curvature, kind="glm", labels=None)

    def __len__(self) -> int:
        return len(self.losses)

    def __getitem__(self, t: int) -> Loss:
        return self.losses[t]

    @property
    def dim(self) -> int:
        return self.losses[0].dim

    def values_at(self, X: np.ndarray) -> np.ndarray:
        """Vector of f_t(x_t) for a whole (n, d) prediction array."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if self.kind == "squared":
            return np.sum((self.labels - X) ** 2, axis=1)
        return np.array([f.value(x) for f, x in zip(self.losses, X)])


@dataclass(frozen=True)
class RoundRecord:
    """One protocol round: 1-based index, prediction, loss value, gradient norm."""

    t: int
    x_t: np.ndarray
    loss_value: float
    grad_norm: float


class ComparatorSequence:
    """A comparator path w_1..w_n with its cached l1 total variation."""

    def __init__(self, w):
        w = np.asarray(w, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        self.w = w
        self.total_variation = total_variation(w)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def dim(self) -> int:
        return self.w.shape[1]

    def in_tv_class(self, C_n: float, B: float, tol: float = 1e-9) -> bool:
        """Membership in TV^B(C_n): entrywise bound B and path budget C_n."""
        return bool(np.all(np.abs(self.w) <= B + tol)) and self.total_variation <= C_n + tol


def total_variation(w) -> float:
    """Sum of l1 jumps of a sequence of vectors (or scalars)."""
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    if w.shape[0] < 2:
        return 0.0
    return float(np.sum(np.abs(np.diff(w, axis=0))))
