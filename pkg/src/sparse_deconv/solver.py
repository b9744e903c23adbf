"""Convex core: minimize the normalized l1 norm of the filtered output
over a finite filter window, subject to a linear anchoring constraint.

The program is

    minimize   (1/m) || w * y ||_1   over the valid region
    subject to <a_tilde, time_reverse(w)> = 1

solved by operator splitting (ADMM) with an auxiliary variable for the
filtered output: the z-update is coordinatewise soft thresholding, the
w-update solves a small equality-constrained least-squares system whose
bordered factorization is cached across iterations.  ``m`` is the number
of valid (truncation-free) output samples and is recorded on the result.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .filters import Filter
from .signals import Window


class DegenerateProblemError(RuntimeError):
    """The bordered system is singular (e.g. the observed window is all
    zeros), so the program has no isolated minimizer."""


@dataclass(frozen=True)
class SolverConfig:
    rho: float = 1.0
    max_iters: int = 20_000
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    over_relaxation: float = 1.5

    def __post_init__(self):
        if self.rho <= 0 or self.max_iters <= 0:
            raise ValueError("rho and max_iters must be positive")
        if not (0 < self.tol_primal < 1 and 0 < self.tol_dual < 1):
            raise ValueError("tolerances must lie in (0, 1)")
        if not (1.0 <= self.over_relaxation <= 1.9):
            raise ValueError("over_relaxation must lie in [1, 1.9]")


@dataclass(frozen=True)
class SolverResult:
    w: Filter
    objective: float
    iterations: int
    primal_residual: float
    dual_residual: float
    converged: bool
    n_valid: int

    def to_json(self) -> str:
        return json.dumps({
            "w": {"offset": self.w.offset, "coeffs": self.w.coeffs.tolist()},
            "objective": self.objective, "iterations": self.iterations,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "converged": self.converged, "n_valid": self.n_valid})


def _filter_matrix(y: Window, support: np.ndarray) -> tuple[np.ndarray, int, int]:
    """Rows are valid output samples of w * y, columns index the support."""
    j_lo, j_hi = int(support.min()), int(support.max())
    t_start = y.start + j_hi
    t_stop = y.stop + j_lo  # one past the last complete output index
    m = t_stop - t_start
    if m <= 0:
        raise ValueError("window too short for a nonempty valid region")
    cols = []
    for j in support:
        lo = (t_start - j) - y.start
        cols.append(y.values[lo:lo + m])
    return np.column_stack(cols), t_start, m


def _constraint_row(a_tilde: Filter, support: np.ndarray) -> np.ndarray:
    """<a_tilde, time_reverse(w)> = sum_j a_tilde(-j) w_j."""
    return np.array([a_tilde.value_at(-int(j)) for j in support])


def solve_l1(y: Window, k: int, a_tilde: Filter, cfg: SolverConfig = SolverConfig(),
             support: Sequence[int] | None = None,
             iterate_log: Callable[[int, float, float, float], None] | None = None
             ) -> SolverResult:
    """Solve the anchored l1 program over the window [-k, k] (or an
    explicit support index list).

    Raises DegenerateProblemError when the bordered system is singular;
    reaching ``max_iters`` sets ``converged = False`` without raising.
    ``iterate_log(iter, objective, r_primal, r_dual)`` streams residuals.
    """
    if a_tilde.is_zero:
        raise ValueError("constraint filter must be nonzero")
    if support is None:
        if k < 0:
            raise ValueError("half-length k must be >= 0")
        support = np.arange(-k, k + 1)
    else:
        support = np.asarray(sorted(int(j) for j in support))
        if support.size == 0:
            raise ValueError("empty support")
    A, t_start, m = _filter_matrix(y, support)
    c = _constraint_row(a_tilde, support)
    if not np.any(c):
        raise ValueError("constraint row is zero on the chosen support")
    n = support.size

    # normalize the data scale so iterates (and the stopping rule) are
    # invariant under y -> c*y; the objective is scaled back on return
    y_scale = float(np.abs(A).max())
    if y_scale == 0.0:
        raise DegenerateProblemError("observed window is all zeros")
    A = A / y_scale

    K = np.zeros((n + 1, n + 1))
    K[:n, :n] = A.T @ A
    K[:n, n] = c
    K[n, :n] = c
    try:
        Kinv = np.linalg.inv(K)
    except np.linalg.LinAlgError as exc:
        raise DegenerateProblemError("singular bordered system") from exc
    if not np.all(np.isfinite(Kinv)) or np.abs(Kinv).max() > 1e14:
        raise DegenerateProblemError("bordered system numerically singular")
    # w = M1 @ (z - u) + q solves the constrained least squares exactly
    M1 = Kinv[:n, :n] @ A.T
    q = Kinv[:n, n].copy()

    rho, alpha = cfg.rho, cfg.over_relaxation
    thresh = 1.0 / (m * rho)
    z = np.zeros(m)
    u = np.zeros(m)
    w = np.zeros(n)
    r_pri = r_dual = math.inf
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        w = M1 @ (z - u) + q
        Aw = A @ w
        z_old = z
        Aw_hat = alpha * Aw + (1.0 - alpha) * z_old
        v = Aw_hat + u
        z = np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)
        u = u + Aw_hat - z

        r_pri = float(np.linalg.norm(Aw - z))
        r_dual = float(rho * np.linalg.norm(A.T @ (z - z_old)))
        eps_pri = math.sqrt(m) * cfg.tol_primal + cfg.tol_primal * max(
            float(np.linalg.norm(Aw)), float(np.linalg.norm(z)))
        eps_dual = math.sqrt(n) * cfg.tol_dual + cfg.tol_dual * float(
            rho * np.linalg.norm(A.T @ u))
        if iterate_log is not None:
            iterate_log(it, y_scale * float(np.abs(Aw).sum() / m), r_pri, r_dual)
        if r_pri <= eps_pri and r_dual <= eps_dual:
            converged = True
            break

    objective = y_scale * float(np.abs(A @ w).sum() / m)
    j_lo = int(support.min())
    dense = np.zeros(int(support.max()) - j_lo + 1)
    dense[support - j_lo] = w  # support may have gaps
    w_filter = Filter(dense, j_lo)
    return SolverResult(w=w_filter, objective=objective, iterations=it,
                        primal_residual=r_pri, dual_residual=r_dual,
                        converged=converged, n_valid=m)


class OracleResult(NamedTuple):
    w1: float
    objective: float
    degenerate: bool


def solve_l1_oracle_1dof(y: Window, fixed_index: int, free_index: int) -> OracleResult:
    """Exact minimizer with w pinned to 1 at ``fixed_index`` and a single
    free coefficient at ``free_index``.

    The objective (1/m) sum_t |y_{t-fixed} + w1 y_{t-free}| is piecewise
    linear; the global minimum sits at a breakpoint -y_{t-fixed}/y_{t-free},
    found by exhaustive evaluation.  Ties resolve to the smallest w1.
    When every shifted sample vanishes the objective is constant and the
    result is flagged degenerate with w1 = 0.
    """
    if fixed_index == free_index:
        raise ValueError("fixed and free coefficients must differ")
    support = np.array(sorted((fixed_index, free_index)))
    A, _, m = _filter_matrix(y, support)
    base = A[:, list(support).index(fixed_index)]
    slope = A[:, list(support).index(free_index)]
    active = slope != 0.0
    if not np.any(active):
        return OracleResult(w1=0.0, objective=float(np.abs(base).sum() / m),
                            degenerate=True)
    bps = np.unique(-base[active] / slope[active])

    def phi(w1: float) -> float:
        return float(np.abs(base + w1 * slope).sum() / m)

    vals = np.array([phi(b) for b in bps])
    best = int(np.argmin(vals))  # argmin returns the first (smallest) tie
    return OracleResult(w1=float(bps[best]), objective=float(vals[best]),
                        degenerate=False)


class RecoveryCheck(NamedTuple):
    success: bool
    aligned_error: float


def check_recovery(w: Filter, a_inv: Filter, eps: float) -> RecoveryCheck:
    """Shift/scale-aligned l1 recovery test.

    Minimizes || alpha * shift(w, tau) - a_inv ||_1 / ||a_inv||_inf over
    integer shifts with the scale chosen by peak matching; success means
    the minimized value is below ``eps``.
    """
    if w.is_zero or a_inv.is_zero:
        raise ValueError("recovery check needs nonzero filters")
    inf_norm = a_inv.norm(math.inf)
    j_star = a_inv.offset + int(np.argmax(np.abs(a_inv.coeffs)))
    peak_val = a_inv.value_at(j_star)
    best = math.inf
    # shifts for which the supports overlap at all
    for tau in range(a_inv.start - (w.stop - 1), a_inv.stop - w.start):
        wv = w.value_at(j_star - tau)
        if wv == 0.0:
            continue
        alpha = peak_val / wv
        err = (w.shift(tau).scale(alpha) - a_inv).norm(1) / inf_norm
        best = min(best, err)
    return RecoveryCheck(success=best < eps, aligned_error=best)


def certificate_residual(y: Window, result: SolverResult, a_tilde: Filter,
                         kink_tol: float = 1e-6, iters: int = 500) -> float:
    """Norm of the best subgradient certificate at the returned solution.

    Searches over valid subgradients of the l1 objective (sign on the
    active residuals, free in [-1, 1] on the near-zero ones) for the one
    whose projection onto the constraint-tangent space is smallest; a
    small value certifies optimality.
    """
    support = np.arange(result.w.start, result.w.stop)
    A, _, m = _filter_matrix(y, support)
    c = _constraint_row(a_tilde, support)
    c = c / np.linalg.norm(c)
    wv = result.w.coeffs
    r = A @ wv
    scale = np.abs(r).max() or 1.0
    fixed = np.abs(r) > kink_tol * scale
    g_fixed = np.sign(r[fixed])
    base = A[:, :].T[:, fixed] @ g_fixed / m

    def proj(v):
        return v - c * (c @ v)

    F = A[:, :].T[:, ~fixed] / m  # n x f
    if F.shape[1] == 0:
        return float(np.linalg.norm(proj(base)))
    PF = np.column_stack([proj(F[:, j]) for j in range(F.shape[1])])
    h, *_ = np.linalg.lstsq(PF, -proj(base), rcond=None)
    h = np.clip(h, -1.0, 1.0)
    # polish within the box
    lip = np.linalg.norm(PF, 2) ** 2 or 1.0
    for _ in range(iters):
        grad = PF.T @ (proj(base) + PF @ h)
        h_new = np.clip(h - grad / lip, -1.0, 1.0)
        if np.max(np.abs(h_new - h)) < 1e-14:
            h = h_new
            break
        h = h_new
    return float(np.linalg.norm(proj(base) + PF @ h))
