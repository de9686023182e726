"""Base online learners: FTL (squared loss), OGD (strongly convex) and ONS
(exp-concave), each restartable from any round.

Every learner starts at the box center, owns its state exclusively and is
advanced sequentially; its internal clock counts rounds since its own birth,
which is what makes mid-stream restarts inside a meta-algorithm work.
"""

from __future__ import annotations

import math

import numpy as np

from .core import CurvatureParams, DecisionBox, Loss, NumericalError


def generalized_projection(A: np.ndarray, z: np.ndarray, box: DecisionBox,
                           tol: float = 1e-10, max_sweeps: int = 20000) -> np.ndarray:
    """argmin_{y in box} (y - z)^T A (y - z) for symmetric positive definite A.

    Cyclic coordinate descent on the box-constrained QP, warm-started at
    clamp(z), run until the KKT residual drops below tol. Non-convergence
    within the sweep cap signals an ill-conditioned A.
    """
    A = np.asarray(A, dtype=float)
    z = np.asarray(z, dtype=float)
    d = z.size
    hw = box.half_width
    y = np.clip(z, -hw, hw)
    diag = np.diag(A).copy()
    if np.any(diag <= 0):
        raise NumericalError("projection matrix is not positive definite")
    for _ in range(max_sweeps):
        g = 2.0 * (A @ (y - z))
        kkt = 0.0
        for k in range(d):
            if y[k] >= hw:
                kkt = max(kkt, max(g[k], 0.0))
            elif y[k] <= -hw:
                kkt = max(kkt, max(-g[k], 0.0))
            else:
                kkt = max(kkt, abs(g[k]))
        if kkt <= tol:
            return y
        for k in range(d):
            # Partial minimization in coordinate k given the others.
            rk = A[k] @ (y - z) - A[k, k] * (y[k] - z[k])
            y[k] = min(hw, max(-hw, z[k] - rk / A[k, k]))
    raise NumericalError("generalized projection did not converge (ill-conditioned A)")


class FtlState:
    """Follow-The-Leader for squared losses: the running mean of labels,
    clamped to the box (inactive clamp while |y| <= B). The first prediction,
    before any label is seen, is the box center."""

    def __init__(self, box: DecisionBox):
        self.box = box
        self.count = 0
        self.running_sum = np.zeros(box.dim)

    def predict(self) -> np.ndarray:
        if self.count == 0:
            return self.box.center
        return self.box.clamp(self.running_sum / self.count)

    def step(self, y_t) -> tuple[np.ndarray, "FtlState"]:
        y_t = np.atleast_1d(np.asarray(y_t, dtype=float))
        if y_t.size != self.box.dim:
            raise ValueError("label dimension mismatch")
        self.count += 1
        self.running_sum = self.running_sum + y_t
        return self.predict(), self

    def observe(self, loss: Loss) -> None:
        if loss.kind != "squared":
            raise ValueError("FTL is defined only for squared losses")
        self.step(loss.y)


class OgdState:
    """Online gradient descent with the 1/(H t) step schedule for H-strongly
    convex losses; t counts rounds since this learner's birth."""

    def __init__(self, box: DecisionBox, H: float):
        if H <= 0:
            raise ValueError("OGD requires a positive strong-convexity modulus H")
        self.box = box
        self.H = float(H)
        self.t = 1
        self.x = box.center

    def predict(self) -> np.ndarray:
        return self.x

    def step(self, grad) -> tuple[np.ndarray, "OgdState"]:
        grad = np.atleast_1d(np.asarray(grad, dtype=float))
        if grad.size != self.box.dim:
            raise ValueError("gradient dimension mismatch")
        self.x = self.box.clamp(self.x - grad / (self.H * self.t))
        self.t += 1
        return self.x, self

    def observe(self, loss: Loss) -> None:
        self.step(loss.grad(self.x))


_ONS_REINVERT_EVERY = 512


class OnsState:
    """Online Newton Step: rank-one updates of the gradient outer-product
    matrix (Sherman-Morrison on the inverse, with periodic re-inversion to
    bound drift) and a generalized projection onto the box."""

    def __init__(self, box: DecisionBox, zeta: float, epsilon: float | None = None):
        if zeta <= 0:
            raise ValueError("ONS parameter zeta must be positive")
        self.box = box
        self.zeta = float(zeta)
        if epsilon is None:
            epsilon = 1.0 / (zeta ** 2 * box.l2_diameter ** 2)
        self.A = epsilon * np.eye(box.dim)
        self.A_inv = np.eye(box.dim) / epsilon
        self.x = box.center
        self._steps = 0

    def predict(self) -> np.ndarray:
        return self.x

    def _rebuild_inverse(self) -> None:
        try:
            chol = np.linalg.cholesky(self.A)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("ONS matrix lost positive definiteness") from exc
        inv_chol = np.linalg.inv(chol)
        self.A_inv = inv_chol.T @ inv_chol

    def step(self, grad) -> tuple[np.ndarray, "OnsState"]:
        grad = np.atleast_1d(np.asarray(grad, dtype=float))
        if grad.size != self.box.dim:
            raise ValueError("gradient dimension mismatch")
        self.A = self.A + np.outer(grad, grad)
        Ag = self.A_inv @ grad
        denom = 1.0 + float(grad @ Ag)
        if denom <= 0 or not np.isfinite(denom):
            self._rebuild_inverse()
        else:
            self.A_inv = self.A_inv - np.outer(Ag, Ag) / denom
        self._steps += 1
        if self._steps % _ONS_REINVERT_EVERY == 0:
            self._rebuild_inverse()
        z = self.x - (self.A_inv @ grad) / self.zeta
        if self.box.contains(z):
            self.x = z
        else:
            self.x = generalized_projection(self.A, z, self.box)
        return self.x, self

    def observe(self, loss: Loss) -> None:
        self.step(loss.grad(self.x))


def ons_zeta(curv: CurvatureParams, dim: int) -> float:
    """Default ONS parameter: min{1/(4 G^dagger (2B sqrt(d) + 2G/beta)), alpha},
    with the sqrt(d) factor dropped in one dimension."""
    root_d = 1.0 if dim == 1 else math.sqrt(dim)
    width = 2.0 * curv.B * root_d + 2.0 * curv.G / curv.beta
    if curv.G_dagger <= 0 or width <= 0:
        return curv.alpha
    return min(1.0 / (4.0 * curv.G_dagger * width), curv.alpha)


def make_learner(kind: str, box: DecisionBox, curv: CurvatureParams,
                 zeta_override: float | None = None):
    """Factory used by the meta-algorithm to spawn fresh base learners."""
    if kind == "ftl":
        return FtlState(box)
    if kind == "ogd":
        return OgdState(box, curv.H)
    if kind == "ons":
        zeta = zeta_override if zeta_override is not None else ons_zeta(curv, box.dim)
        return OnsState(box, zeta)
    raise ValueError(f"unknown learner kind: {kind!r}")
