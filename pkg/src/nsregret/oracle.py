"""Offline optimal comparators under a total-variation budget, with KKT certificates.

For squared losses the TV-constrained problem is solved exactly: the penalized
fused lasso is exact (dynamic programming), the budget constraint is met by
bisecting the penalty, and the dual certificates are recovered in closed form.
For general smooth losses only a tolerance-certified solution is produced
(proximal gradient with an inexact TV+box prox).

Dual parametrization: for squared labels the reported ``lam`` is the dual of
the 0.5*sum (y-u)^2 objective (the standard fused-lasso penalty, so the
stationarity identity reads y_t = u_t - lam*(s_t - s_{t-1})); for general
losses it is the dual of sum f_t, matching grad f_t(u_t) = lam*(s_t - s_{t-1})
+ gamma^- - gamma^+. Reported objectives are always the protocol loss
sum_t f_t(u_t) (unhalved).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from ._fused import dp_fused_lasso
from .core import LossBundle, NumericalError, total_variation

_FEAS_RTOL = 1e-8      # |TV(u) - C_n| <= _FEAS_RTOL * max(1, C_n)
_BRACKET_RTOL = 1e-13  # final bisection bracket width, relative


@dataclass
class KktReport:
    stationarity_max_residual: float = 0.0
    subgradient_violation: float = 0.0
    comp_slack_tv: float = 0.0
    comp_slack_box: float = 0.0

    def max_residual(self) -> float:
        return max(self.stationarity_max_residual, self.subgradient_violation,
                   self.comp_slack_tv, self.comp_slack_box)


@dataclass
class OracleSolution:
    """Optimal sequence with duals. u is (n, d); s holds the n-1 inner
    subgradients per coordinate (s_0 = s_n = 0 by convention)."""

    u: np.ndarray
    lam: float
    s: np.ndarray
    gamma_minus: np.ndarray
    gamma_plus: np.ndarray
    objective: float
    tv: float
    kkt: KktReport
    flags: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.u.shape[0]

    @property
    def dim(self) -> int:
        return self.u.shape[1]


def _as_2d(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2 or y.shape[0] < 1:
        raise ValueError("labels must be an (n,) or (n, d) array")
    return y


def fused_lasso_1d(y, lam: float) -> np.ndarray:
    """Exact minimizer of 0.5*sum (y_t - u_t)^2 + lam * sum |u_{t+1} - u_t|."""
    return dp_fused_lasso(np.asarray(y, dtype=float), lam)


def _fused_cols(y2d: np.ndarray, lam: float) -> np.ndarray:
    return np.column_stack([dp_fused_lasso(y2d[:, k], lam) for k in range(y2d.shape[1])])


def _bisect_lambda(tv_at, C_n: float, lam_hint: float):
    """Smallest penalty (up to bracket width) whose solution satisfies the
    TV budget. tv_at(lam) must be nonincreasing in lam."""
    if C_n < 0:
        raise ValueError("C_n must be nonnegative")
    tv0 = tv_at(0.0)
    if tv0 <= C_n:
        return 0.0, tv0
    hi = max(lam_hint, 1.0)
    for _ in range(80):
        if tv_at(hi) <= C_n:
            break
        hi *= 2.0
    else:
        raise NumericalError("failed to bracket the TV budget dual")
    lo = 0.0
    tv_hi = tv_at(hi)
    for _ in range(250):
        if hi - lo <= _BRACKET_RTOL * max(1.0, hi):
            break
        mid = 0.5 * (lo + hi)
        tv_mid = tv_at(mid)
        if tv_mid > C_n:
            lo = mid
        else:
            hi, tv_hi = mid, tv_mid
    if abs(tv_hi - C_n) > _FEAS_RTOL * max(1.0, C_n) and not (tv_hi <= C_n and C_n == 0.0):
        raise NumericalError(
            f"TV budget bisection did not converge: TV={tv_hi}, C_n={C_n}")
    return hi, tv_hi


def tv_constrained_solve(y, C_n: float, B: float) -> OracleSolution:
    """Exact squared-loss oracle: argmin sum ||y_t - u_t||^2 subject to
    sum ||u_t - u_{t-1}||_1 <= C_n. The box |u| <= B never binds because the
    labels already satisfy it (asserted)."""
    y = _as_2d(y)
    if C_n < 0:
        raise ValueError("C_n must be nonnegative")
    if np.any(np.abs(y) > B + 1e-9):
        raise ValueError("labels must satisfy |y| <= B for the squared-loss oracle")

    col_means = np.mean(y, axis=0)
    lam_hint = y.shape[0] * float(np.max(np.abs(y - col_means))) + 1.0
    lam, _ = _bisect_lambda(lambda l: total_variation(_fused_cols(y, l)), C_n, lam_hint)
    u = _fused_cols(y, lam)
    if np.any(np.abs(u) > B + 1e-9):
        raise NumericalError("squared-loss oracle left the comparator box")

    s, gm, gp, report, flags = kkt_extract(y, u, lam, C_n=C_n)
    return OracleSolution(
        u=u, lam=lam, s=s, gamma_minus=gm, gamma_plus=gp,
        objective=float(np.sum((y - u) ** 2)), tv=total_variation(u),
        kkt=report, flags=flags)


def kkt_extract(y_or_bundle, u, lam: float, *, C_n: float | None = None,
                B: float | None = None):
    """Recover subgradients s and box duals gamma+- plus a residual report.

    At jumps s_t is the jump sign; on flat stretches it is recovered through
    the forward stationarity recursion (one valid selection; flagged as
    non-unique when lam = 0 leaves it undetermined). For squared labels the
    stationarity identity is y_t = u_t - lam*(s_t - s_{t-1}); for a loss
    bundle it is grad f_t(u_t) = lam*(s_t - s_{t-1}) + gamma^- - gamma^+.
    """
    u = _as_2d(u)
    n, d = u.shape
    if isinstance(y_or_bundle, LossBundle):
        bundle = y_or_bundle
        grads = np.stack([bundle[t].grad(u[t]) for t in range(n)])
        if B is None:
            B = bundle.curvature.B
    else:
        y = _as_2d(y_or_bundle)
        if y.shape != u.shape:
            raise ValueError("labels and solution must have matching shapes")
        grads = u - y  # gradient of the half-quadratic objective
        B = np.inf if B is None else B

    du = np.diff(u, axis=0)
    is_jump = du != 0.0
    sign = np.sign(du)
    active_lo = np.abs(u + B) <= 1e-9 * max(1.0, B) if np.isfinite(B) else np.zeros_like(u, bool)
    active_hi = np.abs(u - B) <= 1e-9 * max(1.0, B) if np.isfinite(B) else np.zeros_like(u, bool)

    s_full = np.zeros((n + 1, d))
    gm = np.zeros((n, d))
    gp = np.zeros((n, d))
    flags: list = []

    if lam == 0.0:
        s_full[1:n] = np.where(is_jump, sign, 0.0)
        if np.any(~is_jump):
            flags.append("s_flat_nonunique")
        for t in range(n):
            for k in range(d):
                r = grads[t, k]
                if active_lo[t, k] and r > 0:
                    gm[t, k] = r
                elif active_hi[t, k] and r < 0:
                    gp[t, k] = -r
    else:
        for k in range(d):
            s_prev = 0.0
            for t in range(n):
                jump = t < n - 1 and is_jump[t, k]
                pinned = jump or t == n - 1
                cand = s_prev + grads[t, k] / lam
                if jump:
                    target = float(sign[t, k])
                elif t == n - 1:
                    target = 0.0
                else:
                    target = cand
                if active_lo[t, k] or active_hi[t, k]:
                    # A box dual can absorb what the subgradient cannot.
                    want = target if pinned else min(1.0, max(-1.0, cand))
                    resid = grads[t, k] - lam * (want - s_prev)
                    if active_lo[t, k] and resid > 0:
                        gm[t, k] = resid
                        target = want
                    elif active_hi[t, k] and resid < 0:
                        gp[t, k] = -resid
                        target = want
                if t < n - 1:
                    s_full[t + 1, k] = target
                    s_prev = target

    s = s_full[1:n]
    # Residuals from the final certificate.
    ds = np.diff(s_full[: n + 1], axis=0)  # (n, d): s_t - s_{t-1} for t = 1..n
    stat = grads - lam * ds - gm + gp
    report = KktReport()
    report.stationarity_max_residual = float(np.max(np.abs(stat))) if stat.size else 0.0
    report.subgradient_violation = float(max(0.0, np.max(np.abs(s)) - 1.0)) if s.size else 0.0
    if C_n is not None:
        report.comp_slack_tv = float(lam * abs(total_variation(u) - C_n))
    if np.isfinite(B):
        box_slack = np.maximum(np.abs(gm * (u + B)), np.abs(gp * (u - B)))
        report.comp_slack_box = float(np.max(box_slack)) if box_slack.size else 0.0
    return s, gm, gp, report, flags


# ---------------------------------------------------------------------------
# General smooth losses: proximal gradient with an inexact TV+box prox
# ---------------------------------------------------------------------------

def _prox_tv_box(V: np.ndarray, lam_over_beta: float, B: float,
                 sweeps: int = 50) -> np.ndarray:
    """Dykstra alternation between the exact per-coordinate TV prox and the
    box clamp. The composition is inexact; the sweep count is fixed so the
    inexactness is reproducible and shows up in the KKT report."""
    x = V.copy()
    p = np.zeros_like(V)
    q = np.zeros_like(V)
    for _ in range(sweeps):
        a = _fused_cols(x + p, lam_over_beta)
        p = x + p - a
        x_new = np.clip(a + q, -B, B)
        q = a + q - x_new
        if np.max(np.abs(x_new - x)) <= 1e-14:
            x = x_new
            break
        x = x_new
    return x


def _best_constant(bundle: LossBundle, B: float, beta: float,
                   max_iters: int) -> np.ndarray:
    """Projected gradient for the best single point of a loss bundle."""
    n, d = len(bundle), bundle.dim
    c = np.zeros(d)
    for _ in range(max_iters):
        g = np.zeros(d)
        for t in range(n):
            g += bundle[t].grad(c)
        c_new = np.clip(c - g / (n * beta), -B, B)
        if np.max(np.abs(c_new - c)) <= 1e-14 * max(1.0, float(np.max(np.abs(c)))):
            return c_new
        c = c_new
    return c


def oracle_general_loss(bundle: LossBundle, C_n: float, B: float,
                        tol: float = 1e-6, beta: float | None = None,
                        max_iters: int = 4000) -> OracleSolution:
    """Tolerance-certified oracle for smooth losses: proximal gradient with
    step 1/beta on the sequence variable, outer bisection on the TV dual.
    Raises NumericalError if the stationarity residual cannot be driven
    below tol within the iteration cap."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    n, d = len(bundle), bundle.dim
    beta = float(beta if beta is not None else bundle.curvature.beta)

    def grad_map(U):
        return np.stack([bundle[t].grad(U[t]) for t in range(n)])

    def finish(U, lam):
        s, gm, gp, report, flags = kkt_extract(bundle, U, lam, C_n=C_n, B=B)
        if report.stationarity_max_residual > tol:
            raise NumericalError(
                f"general-loss oracle stalled at stationarity residual "
                f"{report.stationarity_max_residual:.3e} > tol {tol:.3e}")
        objective = float(sum(bundle[t].value(U[t]) for t in range(n)))
        return OracleSolution(u=U, lam=lam, s=s, gamma_minus=gm, gamma_plus=gp,
                              objective=objective, tv=total_variation(U),
                              kkt=report, flags=flags)

    if C_n == 0.0:
        # Constant sequence; the smallest certifying dual is the largest
        # running gradient sum (per coordinate) along the horizon.
        c = _best_constant(bundle, B, beta, max_iters)
        U = np.tile(c, (n, 1))
        cums = np.cumsum(grad_map(U), axis=0)
        lam = float(np.max(np.abs(cums[:-1]))) if n > 1 else 0.0
        return finish(U, lam)

    warm = {"U": np.zeros((n, d))}

    def solve_penalized(lam: float, move_tol: float) -> np.ndarray:
        U = warm["U"].copy()
        for _ in range(max_iters):
            V = U - grad_map(U) / beta
            U_new = _prox_tv_box(V, lam / beta, B)
            delta = float(np.max(np.abs(U_new - U)))
            U = U_new
            if delta <= move_tol * max(1.0, float(np.max(np.abs(U)))):
                break
        warm["U"] = U
        return U

    def tv_at(lam: float) -> float:
        return total_variation(solve_penalized(lam, move_tol=1e-10))

    grad0 = np.max(np.abs(grad_map(np.zeros((n, d)))))
    lam, _ = _bisect_lambda(tv_at, C_n, n * float(grad0) + 1.0)
    U = solve_penalized(lam, move_tol=1e-13)
    return finish(U, lam)


# ---------------------------------------------------------------------------
# Brute-force test oracle (grid DP)
# ---------------------------------------------------------------------------

def brute_force_oracle(losses, C_n: float, B: float, grid_step: float):
    """Exhaustive DP over a value grid in [-B, B] with the TV budget tracked
    in exact grid units. Every candidate sequence is feasible for the original
    problem, so the returned objective upper-bounds the exact optimum. Only
    small 1D instances are supported."""
    if isinstance(losses, LossBundle):
        bundle = losses
    else:
        bundle = LossBundle.squared(np.asarray(losses, dtype=float))
    n, d = len(bundle), bundle.dim
    if d != 1:
        raise ValueError("brute_force_oracle supports d = 1 only")
    m = int(round(2.0 * B / grid_step)) + 1
    if n > 10 or m > 4001:
        raise ValueError("instance too large for brute-force enumeration")
    step = 2.0 * B / (m - 1)
    vals = np.linspace(-B, B, m)
    # the whole grid can never spend more than (n-1)(m-1) units of budget
    budget_units = min(int(np.floor(C_n / step + 1e-9)), (n - 1) * (m - 1))

    lrows = [np.array([bundle[t].value(np.array([v])) for v in vals]) for t in range(n)]

    nb = budget_units + 1
    table = np.empty((n, m, nb))
    table[0] = lrows[0][:, None]
    for t in range(1, n):
        prev = table[t - 1]
        up = prev.copy()
        for v in range(1, m):
            up[v, 1:] = np.minimum(up[v, 1:], up[v - 1, :-1])
        dn = prev.copy()
        for v in range(m - 2, -1, -1):
            dn[v, 1:] = np.minimum(dn[v, 1:], dn[v + 1, :-1])
        table[t] = np.minimum(up, dn) + lrows[t][:, None]

    v_star = int(np.argmin(table[n - 1, :, nb - 1]))
    objective = float(table[n - 1, v_star, nb - 1])
    # Backtrace: pick an optimal feasible predecessor of each chosen state.
    u_idx = np.empty(n, dtype=int)
    u_idx[n - 1] = v_star
    r = nb - 1
    for t in range(n - 1, 0, -1):
        v = u_idx[t]
        cand = [(table[t - 1, pv, r - abs(pv - v)], abs(pv - v), pv)
                for pv in range(m) if r - abs(pv - v) >= 0]
        _, dist, best_v = min(cand)
        u_idx[t - 1] = best_v
        r -= dist
    return vals[u_idx], objective


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

SCHEMA_VERSION = 1


def _meta_line(extra: dict) -> str:
    payload = {"schema_version": SCHEMA_VERSION}
    payload.update(extra)
    return "# " + json.dumps(payload, sort_keys=True)


def write_instance_csv(path, y, meta: dict | None = None) -> None:
    """Instance file: JSON metadata comment, header, then 1-based t,k,y rows."""
    y = _as_2d(y)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_meta_line(meta or {}) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "k", "y"])
        for t in range(y.shape[0]):
            for k in range(y.shape[1]):
                writer.writerow([t + 1, k + 1, repr(float(y[t, k]))])


def read_instance_csv(path):
    """Returns (y, meta). Raises ValueError with a line number on bad rows."""
    meta: dict = {}
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = None
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                try:
                    meta = json.loads(line[1:].strip())
                except json.JSONDecodeError:
                    pass
                continue
            parts = line.split(",")
            if header is None:
                header = [p.strip() for p in parts]
                if header[:3] != ["t", "k", "y"]:
                    raise ValueError(f"{path}:{lineno}: expected header t,k,y")
                continue
            try:
                rows.append((int(parts[0]), int(parts[1]), float(parts[2])))
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed row: {line!r}") from exc
    if not rows:
        raise ValueError(f"{path}: no data rows")
    n = max(r[0] for r in rows)
    d = max(r[1] for r in rows)
    y = np.full((n, d), np.nan)
    for t, k, val in rows:
        y[t - 1, k - 1] = val
    if np.any(np.isnan(y)):
        raise ValueError(f"{path}: missing entries for some (t, k)")
    return y, meta


def write_solution_csv(path, sol: OracleSolution, meta: dict | None = None) -> None:
    extra = {
        "lambda": sol.lam,
        "objective": sol.objective,
        "tv": sol.tv,
        "stationarity_max_residual": sol.kkt.stationarity_max_residual,
        "subgradient_violation": sol.kkt.subgradient_violation,
        "comp_slack_tv": sol.kkt.comp_slack_tv,
        "comp_slack_box": sol.kkt.comp_slack_box,
        "flags": sol.flags,
    }
    extra.update(meta or {})
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_meta_line(extra) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "k", "u"])
        for t in range(sol.n):
            for k in range(sol.dim):
                writer.writerow([t + 1, k + 1, repr(float(sol.u[t, k]))])


def read_solution_csv(path):
    u, meta = read_instance_csv_like(path, value_col="u")
    return u, meta


def read_instance_csv_like(path, value_col: str):
    meta: dict = {}
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = None
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                try:
                    meta = json.loads(line[1:].strip())
                except json.JSONDecodeError:
                    pass
                continue
            parts = line.split(",")
            if header is None:
                header = [p.strip() for p in parts]
                if header[:3] != ["t", "k", value_col]:
                    raise ValueError(f"{path}:{lineno}: expected header t,k,{value_col}")
                continue
            try:
                rows.append((int(parts[0]), int(parts[1]), float(parts[2])))
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed row: {line!r}") from exc
    n = max(r[0] for r in rows)
    d = max(r[1] for r in rows)
    arr = np.full((n, d), np.nan)
    for t, k, val in rows:
        arr[t - 1, k - 1] = val
    return arr, meta
