"""Closed-form and Monte Carlo evaluation of the population-level theory.

Covers the Gaussian reduction of the l1 objective to a Bernoulli-support
expectation, the landscape values V_k on the sphere with their binomial
saddle formulas, folded-Gaussian means, recovery-threshold bounds and the
exact threshold via support decomposition, the directional-derivative
optimality test, the finite-difference gap bound, the finite-sample
objective floor, and the two noise-robustness bounds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .filters import Filter, angle_to_delta, convolve, deltaness, inverse_filter, unit, wiener_margin
from .signals import Window, linear_process, stream_rng

ROOT_2_OVER_PI = math.sqrt(2.0 / math.pi)

# exact support enumeration up to 2^20 subsets, Monte Carlo beyond
EXACT_SUPPORT_CAP = 20


@dataclass(frozen=True)
class McEstimate:
    """An expectation estimate with its standard error.

    ``stderr`` is 0 for exact enumeration.  ``rejected`` counts discarded
    draws (only used by conditional estimates such as negative moments).
    """

    mean: float
    stderr: float
    samples: int
    seed: int = 0
    rejected: int = 0

    def __post_init__(self):
        if self.stderr < 0 or self.samples < 1:
            raise ValueError("invalid Monte Carlo estimate")

    def to_json(self) -> str:
        return json.dumps({"mean": self.mean, "stderr": self.stderr,
                           "samples": self.samples, "seed": self.seed,
                           "rejected": self.rejected})


@dataclass(frozen=True)
class ThresholdReport:
    """Recovery-threshold report: closed-form bounds plus, when computed,
    the exact fixed point of p/(1-p) = val(Q1) and its support size."""

    lower: float
    upper: float
    exact: float | None = None
    support_argmin: int | None = None
    certified: bool = True
    bracket: tuple[float, float] | None = None
    product_form: float | None = None
    beta: tuple = ()
    tail_times: tuple = ()
    tail_signs: tuple = ()

    def __post_init__(self):
        if not (-1e-9 <= self.lower <= self.upper + 1e-9 <= 1.0 + 2e-9):
            raise ValueError(f"invalid bound ordering ({self.lower}, {self.upper})")

    def to_json(self) -> str:
        return json.dumps({
            "lower": self.lower, "upper": self.upper, "exact": self.exact,
            "support_argmin": self.support_argmin, "certified": self.certified,
            "bracket": self.bracket, "product_form": self.product_form,
            "beta": list(self.beta), "tail_times": list(self.tail_times),
            "tail_signs": list(self.tail_signs)})


# ---------------------------------------------------------------------------
# Bernoulli-support expectations
# ---------------------------------------------------------------------------


def _nonzero_values(psi: Filter) -> np.ndarray:
    vals = psi.coeffs[psi.coeffs != 0.0]
    if vals.size == 0:
        raise ValueError("expectation undefined for the zero filter")
    return vals


@lru_cache(maxsize=16)
def _subset_tables(n: int) -> tuple[np.ndarray, np.ndarray]:
    """(bit matrix 2^n x n, popcounts) for exhaustive support enumeration."""
    idx = np.arange(1 << n, dtype=np.uint32)
    bits = ((idx[:, None] >> np.arange(n, dtype=np.uint32)[None, :]) & 1).astype(np.float64)
    return bits, bits.sum(axis=1)


def _subset_weights(n: int, p: float) -> np.ndarray:
    _, pop = _subset_tables(n)
    return np.power(p, pop) * np.power(1.0 - p, n - pop)


def _masked_norms_exact(vals: np.ndarray) -> np.ndarray:
    bits, _ = _subset_tables(vals.size)
    return np.sqrt(bits @ (vals * vals))


def expected_masked_norm(psi: Filter, p: float, mode: str = "auto",
                         budget: int = 100_000, seed: int = 0) -> McEstimate:
    """E over Bernoulli(p) supports I of || psi restricted to I ||_2."""
    vals = _nonzero_values(psi)
    n = vals.size
    if mode not in ("auto", "exact", "mc"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "exact" and n > EXACT_SUPPORT_CAP:
        raise ValueError(f"exact enumeration capped at support {EXACT_SUPPORT_CAP}, got {n}")
    if mode == "exact" or (mode == "auto" and n <= EXACT_SUPPORT_CAP):
        norms = _masked_norms_exact(vals)
        mean = float(_subset_weights(n, p) @ norms)
        return McEstimate(mean=mean, stderr=0.0, samples=1 << n, seed=seed)
    rng = stream_rng(seed)
    draws = np.empty(budget)
    chunk = max(1, (1 << 22) // max(n, 1))
    done = 0
    while done < budget:
        b = min(chunk, budget - done)
        mask = rng.random((b, n)) < p
        draws[done:done + b] = np.sqrt((mask * (vals * vals)).sum(axis=1))
        done += b
    return McEstimate(mean=float(draws.mean()),
                      stderr=float(draws.std(ddof=1) / math.sqrt(budget)),
                      samples=budget, seed=seed)


def expected_abs_inner(psi: Filter, p: float, mode: str = "auto",
                       budget: int = 100_000, seed: int = 0) -> McEstimate:
    """E |sum_i psi_i X_i| for Bernoulli(p)-Gaussian X.

    Reduces to sqrt(2/pi) times the expected support-restricted norm of
    psi, which is enumerated exactly for supports up to 20 entries.
    """
    est = expected_masked_norm(psi, p, mode=mode, budget=budget, seed=seed)
    return McEstimate(mean=ROOT_2_OVER_PI * est.mean,
                      stderr=ROOT_2_OVER_PI * est.stderr,
                      samples=est.samples, seed=seed)


def abs_inner_mc_bg(psi: Filter, p: float, budget: int = 100_000, seed: int = 0) -> McEstimate:
    """Direct Monte Carlo of E |psi^T X| over Bernoulli-Gaussian draws.

    Independent of the support-enumeration path; used to cross-check the
    Gaussian reduction end to end.
    """
    vals = _nonzero_values(psi)
    rng = stream_rng(seed)
    n = vals.size
    draws = np.empty(budget)
    chunk = max(1, (1 << 22) // n)
    done = 0
    while done < budget:
        b = min(chunk, budget - done)
        x = rng.standard_normal((b, n))
        x *= rng.random((b, n)) < p
        draws[done:done + b] = np.abs(x @ vals)
        done += b
    return McEstimate(mean=float(draws.mean()),
                      stderr=float(draws.std(ddof=1) / math.sqrt(budget)),
                      samples=budget, seed=seed)


def v_landscape_mc(psi: Filter, p: float, k: int, budget: int = 100_000,
                   seed: int = 0) -> McEstimate:
    """Monte Carlo estimate of V_k(psi) = E_I ||psi_I||^k / ||psi||^k.

    For k < 0, draws with empty intersected support are rejected and
    counted; the estimate is conditional on a nonzero restriction.
    """
    if k == 0:
        raise ValueError("exponent k must be nonzero")
    vals = _nonzero_values(psi)
    scale = float(np.linalg.norm(vals)) ** k
    rng = stream_rng(seed)
    n = vals.size
    draws = np.empty(budget)
    rejected = 0
    done = 0
    chunk = max(1, (1 << 22) // n)
    while done < budget:
        b = min(chunk, budget - done)
        mask = rng.random((b, n)) < p
        norms = np.sqrt((mask * (vals * vals)).sum(axis=1))
        if k < 0:
            keep = norms > 0
            rejected += int(b - keep.sum())
            norms = norms[keep]
        take = min(norms.size, budget - done)
        draws[done:done + take] = norms[:take] ** k
        done += take
        if k < 0 and norms.size == 0 and rejected > 100 * budget:
            raise RuntimeError("rejection rate too high for conditional estimate")
    draws /= scale
    return McEstimate(mean=float(draws.mean()),
                      stderr=float(draws.std(ddof=1) / math.sqrt(budget)),
                      samples=budget, seed=seed, rejected=rejected)


# ---------------------------------------------------------------------------
# saddle values of the landscape
# ---------------------------------------------------------------------------

_LOG_SPACE_M = 60  # binomial coefficients overflow comfort zone


def _binomial_terms(M: int, p: float) -> np.ndarray:
    """Binomial(M, p) pmf over j = 0..M, exact combs for small M."""
    j = np.arange(M + 1)
    if p == 0.0:
        out = np.zeros(M + 1)
        out[0] = 1.0
        return out
    if p == 1.0:
        out = np.zeros(M + 1)
        out[M] = 1.0
        return out
    if M <= _LOG_SPACE_M:
        combs = np.array([math.comb(M, int(t)) for t in j], dtype=float)
        return combs * p ** j * (1.0 - p) ** (M - j)
    logc = np.array([math.lgamma(M + 1) - math.lgamma(t + 1) - math.lgamma(M - t + 1)
                     for t in j])
    return np.exp(logc + j * math.log(p) + (M - j) * math.log1p(-p))


def v1_saddle(M: int, p: float) -> float:
    """Stationary value of V_1 at an equal-magnitude vector on M entries:
    sum_j C(M,j) p^j (1-p)^(M-j) sqrt(j/M)."""
    if M < 1:
        raise ValueError("M must be >= 1")
    pmf = _binomial_terms(M, p)
    j = np.arange(M + 1)
    return float(pmf @ np.sqrt(j / M))


def v2k_saddle(M: int, p: float, k: int) -> float:
    """Stationary value of V_2k at an equal-magnitude vector on M entries:
    sum_j C(M,j) p^j (1-p)^(M-j) (j/M)^k."""
    if M < 1 or k < 1:
        raise ValueError("require M >= 1 and k >= 1")
    pmf = _binomial_terms(M, p)
    j = np.arange(M + 1)
    return float(pmf @ (j / M) ** k)


# ---------------------------------------------------------------------------
# folded Gaussian
# ---------------------------------------------------------------------------


def folded_gaussian_mean(mu: float, sigma: float) -> float:
    """E |mu + sigma G| for standard normal G; |mu| when sigma = 0."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0.0:
        return abs(mu)
    g = mu / sigma
    return (ROOT_2_OVER_PI * sigma * math.exp(-0.5 * g * g)
            + mu * math.erf(g / math.sqrt(2.0)))


def folded_ratio(gamma: float) -> float:
    """R(gamma) = sqrt(pi/2) E |gamma + G|: even, R(0) = 1, nondecreasing
    in |gamma|."""
    return (math.exp(-0.5 * gamma * gamma)
            + math.sqrt(math.pi / 2.0) * gamma * math.erf(gamma / math.sqrt(2.0)))


# ---------------------------------------------------------------------------
# recovery-threshold bounds
# ---------------------------------------------------------------------------


def pt_upper(e_tilde: Filter) -> float:
    """Upper bound on the recovery threshold: 1 - deltaness."""
    return 1.0 - deltaness(e_tilde)


def pt_lower(e_tilde: Filter) -> float:
    """Lower bound on the recovery threshold: 1 - tan of the angle to the
    delta at the peak, clipped at 0."""
    tan, _ = angle_to_delta(e_tilde)
    return max(0.0, 1.0 - tan)


def _val_qm(d_m: np.ndarray, p: float, restarts: int, max_iter: int,
            rng: np.random.Generator) -> tuple[float, np.ndarray]:
    """Minimize E_J ||beta_J||_2 over beta > 0 with <d_m, beta> = 1.

    The ambient problem restricted to the top-m support; the expectation
    enumerates all 2^m Bernoulli sub-supports.  Convex; projected gradient
    with Armijo backtracking, multi-start.
    """
    m = d_m.size
    if m == 1:
        return p / float(d_m[0]), np.array([1.0 / d_m[0]])
    bits, _ = _subset_tables(m)
    w = _subset_weights(m, p)
    dd = float(d_m @ d_m)
    floor = 1e-14

    def value(beta):
        return float(w @ np.sqrt(bits @ (beta * beta)))

    def grad(beta):
        norms = np.sqrt(bits @ (beta * beta))
        norms[0] = 1.0  # empty support row carries zero weight in the sum
        return beta * (bits.T @ (w / norms))

    def project(beta):
        beta = np.maximum(beta, floor)
        return beta / float(d_m @ beta)

    starts = [d_m / dd]  # the aligned direction, conjectured optimal
    for _ in range(max(0, restarts - 1)):
        starts.append(project(rng.exponential(size=m)))

    best_val, best_beta = math.inf, starts[0]
    for beta in starts:
        beta = project(np.asarray(beta, dtype=float))
        f = value(beta)
        step = 1.0
        for _ in range(max_iter):
            g = grad(beta)
            gt = g - (float(d_m @ g) / dd) * d_m
            gnorm2 = float(gt @ gt)
            if gnorm2 < 1e-22:
                break
            step = min(step * 2.0, 1e3)
            improved = False
            while step > 1e-18:
                cand = project(beta - step * gt)
                fc = value(cand)
                if fc <= f - 1e-4 * step * gnorm2:
                    beta, f = cand, fc
                    improved = True
                    break
                step *= 0.5
            if not improved:
                break
        if f < best_val:
            best_val, best_beta = f, beta
    return best_val, best_beta


def _val_q1(d: np.ndarray, p: float, m_cap: int, restarts: int,
            rng: np.random.Generator) -> tuple[float, int, np.ndarray]:
    """inf over top-m supports of the restricted problems; returns
    (value, argmin m, minimizing beta)."""
    best = (math.inf, 0, np.array([]))
    for m in range(1, min(d.size, m_cap) + 1):
        val, beta = _val_qm(d[:m], p, restarts=restarts, max_iter=500, rng=rng)
        if val < best[0] - 1e-15:
            best = (val, m, beta)
    return best


def pt_exact(e_tilde: Filter, tol: float = 1e-4, budget: int = 100_000,
             m_cap: int = 12, restarts: int = 4, seed: int = 0) -> ThresholdReport:
    """Exact recovery threshold via the support decomposition of val(Q1).

    Solves p/(1-p) = inf_m val(Q1 restricted to the top-m tail support)
    by bisection, with the closed-form deltaness/angle bounds attached.
    Monotonicity of the bisected function is verified on a grid; if it
    cannot be certified the report carries the bracket and certified =
    False.  ``support_argmin`` is the tail support size attaining the inf
    at the fixed point.
    """
    mags = np.abs(e_tilde.coeffs)
    order = np.argsort(-mags, kind="stable")
    peak = mags[order[0]]
    if peak == 0.0:
        raise ValueError("zero filter has no threshold")
    d_full = mags[order[1:]] / peak
    d = d_full[d_full > 0.0]
    lower = pt_lower(e_tilde)
    upper = pt_upper(e_tilde)
    signs = np.sign(e_tilde.coeffs[order])
    tail_times = tuple(int(e_tilde.offset + i) for i in order[1:] if mags[i] > 0)
    tail_signs = tuple(float(s) for i, s in zip(order[1:], signs[1:]) if mags[i] > 0)

    if d.size == 0:
        return ThresholdReport(lower=1.0, upper=1.0, exact=1.0, support_argmin=0)

    rng = stream_rng(seed)

    def f(p: float) -> float:
        val, _, _ = _val_q1(d, p, m_cap, restarts, rng)
        return p / (1.0 - p) - val

    lo = max(1e-9, lower - 0.02)
    hi = min(1.0 - 1e-9, upper + 0.02)
    for _ in range(40):
        if f(lo) <= 0:
            break
        lo /= 2.0
    for _ in range(40):
        if f(hi) >= 0:
            break
        hi = 0.5 * (1.0 + hi)
    flo, fhi = f(lo), f(hi)
    if flo > 0 or fhi < 0:
        return ThresholdReport(lower=lower, upper=upper, exact=None,
                               certified=False, bracket=(lo, hi),
                               tail_times=tail_times, tail_signs=tail_signs)

    grid = np.linspace(lo, hi, 7)
    fvals = [f(g) for g in grid]
    certified = all(b >= a - 1e-9 for a, b in zip(fvals, fvals[1:]))

    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    p_star = 0.5 * (lo + hi)
    val, m_star, beta = _val_q1(d, p_star, m_cap, restarts, rng)

    u = d[:m_star]
    cot = 1.0 / float(np.linalg.norm(u))
    v1_u = float(_subset_weights(m_star, p_star)
                 @ _masked_norms_exact(u / np.linalg.norm(u)))
    return ThresholdReport(lower=lower, upper=upper, exact=float(p_star),
                           support_argmin=m_star, certified=certified,
                           bracket=(lo, hi), product_form=v1_u * cot,
                           beta=tuple(float(b) for b in beta),
                           tail_times=tail_times, tail_signs=tail_signs)


# ---------------------------------------------------------------------------
# optimality and finite-difference tools
# ---------------------------------------------------------------------------


def kkt_directional(beta: Filter, p: float, mode: str = "auto",
                    budget: int = 100_000, seed: int = 0) -> float:
    """Directional derivative of the population objective at the unit
    delta along beta: p * beta_0 + (1-p) * E[ ||beta_I||_2 | 0 not in I ]."""
    if beta.is_zero:
        raise ValueError("direction must be nonzero")
    b0 = beta.value_at(0)
    times = np.arange(beta.start, beta.stop)
    tail_vals = beta.coeffs[(times != 0) & (beta.coeffs != 0.0)]
    if tail_vals.size == 0:
        return p * b0
    tail = Filter(tail_vals, 0)  # only magnitudes matter for the expectation
    cond = expected_masked_norm(tail, p, mode=mode, budget=budget, seed=seed)
    return p * b0 + (1.0 - p) * cond.mean


def bilipschitz_gap(p: float, t: float, beta: Filter, mode: str = "auto",
                    budget: int = 100_000, seed: int = 0) -> tuple[float, float]:
    """Finite-difference curvature gap at the unit delta and its bound.

    For a unit-norm direction beta and step t > 0, returns
    (B(e0, t*beta) - directional derivative, p*t/2); the gap always lies
    in [0, p*t/2].
    """
    if t <= 0:
        raise ValueError("t must be > 0")
    if abs(beta.norm(2) - 1.0) > 1e-8:
        raise ValueError("direction must have unit l2 norm")
    psi = unit() + beta.scale(t)
    e1 = expected_masked_norm(psi, p, mode=mode, budget=budget, seed=seed)
    fd = (e1.mean - p) / t
    gap = fd - kkt_directional(beta, p, mode=mode, budget=budget, seed=seed)
    return gap, 0.5 * p * t


def mu_min(a: Filter, p: float, k: int, w_l1: float, grid: int | None = None) -> float:
    """Objective floor lambda_m(a) sqrt(p/k) ||w||_1 / (sqrt(2) pi).

    ``k`` is the coefficient count of the inverse-filter window;
    lambda_m is the minimum transfer-function modulus.
    """
    if k < 1 or p <= 0 or w_l1 < 0:
        raise ValueError("require k >= 1, p > 0, w_l1 >= 0")
    lam_min, _ = wiener_margin(a, grid)
    if lam_min <= 1e-12:
        raise ValueError("filter is not invertible (vanishing transfer function)")
    return lam_min * math.sqrt(p / k) * w_l1 / (math.sqrt(2.0) * math.pi)


def gaussian_noise_bound(p: float, sigma: float) -> float:
    """Objective increase under moving-average Gaussian noise of level
    sigma: (1-p) sigma + p (sqrt(1+sigma^2) - 1)."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    return (1.0 - p) * sigma + p * (math.sqrt(1.0 + sigma * sigma) - 1.0)


def adversarial_noise_bound(p: float, eta: float) -> float:
    """Worst-case objective increase under sup-norm-bounded disturbance:
    p sqrt(2/pi) (R(eta) - 1) + (1-p) eta."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    return p * ROOT_2_OVER_PI * (folded_ratio(eta) - 1.0) + (1.0 - p) * eta


# ---------------------------------------------------------------------------
# distance metrics
# ---------------------------------------------------------------------------


class DistanceMetrics(NamedTuple):
    d_psi2: float
    d_w2: float
    d_x1: float
    d_x2: float


def distance_metrics(w: Filter, a: Filter, x: Window, y: Window) -> DistanceMetrics:
    """The four recovery metrics on the valid region.

    d_psi2 = ||a*w - e0||_2, d_w2 = ||w - a^{-1}||_2 (computed through the
    inverse-filter convolution identity), d_x1 and d_x2 the normalized l1
    and l2 signal-domain errors of w*y against x.
    """
    phi = convolve(a, w) - unit()
    d_psi2 = phi.norm(2)
    a_inv = inverse_filter(a)
    d_w2 = convolve(a_inv, phi).norm(2)
    wy = linear_process(w, y)
    lo = max(wy.start, x.start)
    hi = min(wy.stop, x.stop)
    if hi <= lo:
        raise ValueError("w*y and x have no overlapping valid region")
    res = wy.slice(lo, hi).values - x.slice(lo, hi).values
    m = res.size
    return DistanceMetrics(
        d_psi2=float(d_psi2),
        d_w2=float(d_w2),
        d_x1=float(np.abs(res).sum() / m),
        d_x2=float(math.sqrt((res * res).sum() / m)),
    )
