"""Reproducible experiment harnesses: phase-transition grid, stability
decay, noise-robustness curves, and sample-complexity scaling.

Every harness sweeps a parameter grid, runs the convex solver on freshly
sampled realizations, and collects per-cell statistics into rectangular
tables (CSV plus a JSON meta sidecar).  Cells are embarrassingly parallel
jobs keyed by (cell index, seed); results are gathered in deterministic
cell order regardless of completion order, and every row carries its cell
seed so any single cell re-runs in isolation.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .filters import (Filter, RootFactorization, convolve, filter_from_roots,
                      geometric_filter, geometric_length, inverse_error,
                      truncated_inverse, truncation_error_closed_form, unit)
from .signals import (BgModel, Window, add_adversarial_offset, add_ma_gaussian,
                      linear_process, sample_bg)
from .solver import DegenerateProblemError, SolverConfig, check_recovery, solve_l1
from .theory import (ROOT_2_OVER_PI, adversarial_noise_bound,
                     expected_masked_norm, gaussian_noise_bound)

DEFAULT_EPS = 1e-3


def worker_count(requested: int | None = None) -> int:
    """Resolve the worker cap: explicit argument, then the
    SPARSE_DECONV_WORKERS environment variable, then the CPU count."""
    if requested is not None and requested >= 1:
        return requested
    env = os.environ.get("SPARSE_DECONV_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, min(8, os.cpu_count() or 1))


def cell_seed(seed: int, cell_index: int) -> int:
    """Stable 63-bit per-cell seed derived from the run seed."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1),
                                spawn_key=(int(cell_index),))
    return int(ss.generate_state(1, np.uint64)[0] >> 1)


def spec_hash(spec: dict) -> str:
    blob = json.dumps(spec, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass(frozen=True)
class PhaseGridSpec:
    p_values: tuple
    s_values: tuple
    T: int = 200
    trials: int = 20
    eps: float = DEFAULT_EPS
    seed: int = 0
    k: int = 1

    def __post_init__(self):
        object.__setattr__(self, "p_values", tuple(float(p) for p in self.p_values))
        object.__setattr__(self, "s_values", tuple(float(s) for s in self.s_values))
        if not all(0.0 < p < 1.0 for p in self.p_values):
            raise ValueError("p values must lie in (0, 1)")
        if not all(0.0 < s < 1.0 for s in self.s_values):
            raise ValueError("s values must lie in (0, 1)")
        if self.trials < 1 or self.T < 1:
            raise ValueError("trials and T must be >= 1")


def default_phase_spec(seed: int = 0, T: int = 200, trials: int = 20,
                       dp: float = 0.05, ds: float = 0.1) -> PhaseGridSpec:
    """Grid defaults: p stepped by dp across (0,1), s by ds across (0,1)."""
    p_values = tuple(round(dp * i, 10) for i in range(1, int(round(1 / dp))))
    s_values = tuple(round(ds * i, 10) for i in range(1, int(round(1 / ds))))
    return PhaseGridSpec(p_values=p_values, s_values=s_values, T=T,
                         trials=trials, seed=seed)


@dataclass
class ExperimentTable:
    """Rectangular record set: named equal-length columns plus the meta
    needed to re-run bit-identically (spec echo, code version, seed)."""

    columns: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ValueError("all columns must have equal length")

    def __len__(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def column(self, name: str) -> list:
        return self.columns[name]

    def rows(self):
        names = list(self.columns)
        for i in range(len(self)):
            yield {n: self.columns[n][i] for n in names}

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        names = list(self.columns)
        writer.writerow(names)
        for row in zip(*(self.columns[n] for n in names)):
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
        return buf.getvalue()

    def write(self, out_dir, stem: str) -> list[Path]:
        """CSV plus meta sidecar; file names carry a spec content hash."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        tag = spec_hash(self.meta.get("spec", self.meta))
        csv_path = out_dir / f"{stem}_{tag}.csv"
        meta_path = out_dir / f"{stem}_{tag}.meta.json"
        csv_path.write_text(self.to_csv_text())
        meta_path.write_text(json.dumps(self.meta, indent=2, sort_keys=True))
        return [csv_path, meta_path]


def _base_meta(spec: dict, seed: int) -> dict:
    return {"spec": spec, "seed": seed, "code_version": __version__,
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%S")}


def _run_cells(fn, jobs, workers: int | None):
    nw = worker_count(workers)
    if nw <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=nw) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * nw))))


def spearman(x, y) -> float:
    """Spearman rank correlation (average ranks on ties)."""
    def ranks(v):
        v = np.asarray(v, dtype=float)
        order = np.argsort(v, kind="mergesort")
        r = np.empty(v.size)
        r[order] = np.arange(1, v.size + 1)
        for val in np.unique(v):
            sel = v == val
            if sel.sum() > 1:
                r[sel] = r[sel].mean()
        return r
    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float((rx @ rx) * (ry @ ry)))
    return float(rx @ ry / denom) if denom else 0.0


# ---------------------------------------------------------------------------
# phase diagram
# ---------------------------------------------------------------------------


def _phase_cell(job: dict) -> dict:
    p, s, T, trials, eps, k, cseed = (job["p"], job["s"], job["T"], job["trials"],
                                      job["eps"], job["k"], job["cell_seed"])
    L = geometric_length(s)
    a = geometric_filter(s, L)
    a_inv = Filter(np.array([1.0, -s]), 0)
    e0 = unit()
    model = BgModel(p=p, seed=cseed)
    successes = 0
    degenerate = 0
    for trial in range(trials):
        x = sample_bg(model, (-(T + k) - (L - 1), T + k + 1), stream=trial)
        y = linear_process(a, x)
        try:
            res = solve_l1(y, k, e0)
        except DegenerateProblemError:
            degenerate += 1
            continue
        if check_recovery(res.w, a_inv, eps).success:
            successes += 1
    return {"s": s, "p": p, "trials": trials, "successes": successes,
            "rate": successes / trials, "degenerate": degenerate,
            "cell_seed": cseed}


def phase_diagram(spec: PhaseGridSpec, workers: int | None = None
                  ) -> tuple[ExperimentTable, ExperimentTable]:
    """Empirical success-rate grid over (p, s) plus the fitted 50% line.

    Per cell: ``trials`` independent runs of the anchored l1 program on a
    geometric blur with ratio s, each scored by the shift/scale-aligned
    recovery test at threshold ``eps``.  Degenerate solves count as
    failures and are flagged.  The boundary table carries the per-row
    logistic 50% crossing with a one-stderr band.
    """
    jobs = []
    idx = 0
    for s in spec.s_values:
        for p in spec.p_values:
            jobs.append({"p": p, "s": s, "T": spec.T, "trials": spec.trials,
                         "eps": spec.eps, "k": spec.k,
                         "cell_seed": cell_seed(spec.seed, idx)})
            idx += 1
    rows = _run_cells(_phase_cell, jobs, workers)
    columns = {name: [r[name] for r in rows]
               for name in ("s", "p", "trials", "successes", "rate",
                            "degenerate", "cell_seed")}
    meta = _base_meta(asdict(spec), spec.seed)
    grid = ExperimentTable(columns=columns, meta=meta)

    bnd = {"s": [], "p50": [], "stderr": [], "slope": []}
    for s in spec.s_values:
        sel = [i for i, sv in enumerate(columns["s"]) if sv == s]
        ps = np.array([columns["p"][i] for i in sel])
        succ = np.array([columns["successes"][i] for i in sel])
        tr = np.array([columns["trials"][i] for i in sel])
        p50, se, slope = fit_logistic_crossing(ps, succ, tr)
        bnd["s"].append(s)
        bnd["p50"].append(p50)
        bnd["stderr"].append(se)
        bnd["slope"].append(slope)
    boundary = ExperimentTable(columns=bnd, meta=meta)
    return grid, boundary


def fit_logistic_crossing(p_values, successes, trials) -> tuple[float, float, float]:
    """Maximum-likelihood logistic fit of success counts against p.

    Returns (50% crossing, its delta-method stderr, slope).  A small ridge
    keeps the Newton iteration bounded when the data separate perfectly,
    which is the common case for sharp transitions.
    """
    x = np.asarray(p_values, dtype=float)
    yk = np.asarray(successes, dtype=float)
    nk = np.asarray(trials, dtype=float)
    X = np.column_stack([np.ones_like(x), x])
    beta = np.zeros(2)
    ridge = 1e-6
    for _ in range(200):
        eta = np.clip(X @ beta, -500, 500)
        mu = 1.0 / (1.0 + np.exp(-eta))
        wgt = nk * mu * (1.0 - mu) + 1e-12
        grad = X.T @ (yk - nk * mu) - ridge * beta
        H = (X * wgt[:, None]).T @ X + ridge * np.eye(2)
        step = np.linalg.solve(H, grad)
        beta = beta + step
        if np.max(np.abs(step)) < 1e-10:
            break
    b0, b1 = beta
    if abs(b1) < 1e-9:
        return float("nan"), float("inf"), float(b1)
    p50 = -b0 / b1
    eta = np.clip(X @ beta, -500, 500)
    mu = 1.0 / (1.0 + np.exp(-eta))
    H = (X * (nk * mu * (1 - mu) + 1e-12)[:, None]).T @ X + ridge * np.eye(2)
    cov = np.linalg.inv(H)
    grad_p50 = np.array([-1.0 / b1, b0 / b1**2])
    se = float(math.sqrt(max(grad_p50 @ cov @ grad_p50, 0.0)))
    return float(p50), se, float(b1)


# ---------------------------------------------------------------------------
# stability decay
# ---------------------------------------------------------------------------


def _stability_trial(job: dict) -> list[float]:
    rf = RootFactorization(plus_roots=tuple(job["plus"]),
                           minus_roots=tuple(job["minus"]), c0=job["c0"])
    a = filter_from_roots(rf)
    T = job["T"]
    r_values = job["r_values"]
    n_plus, n_minus = len(rf.plus_roots), len(rf.minus_roots)
    r_max = max(r_values)
    cfg = SolverConfig(**job["cfg"])
    model = BgModel(p=job["p"], seed=job["cell_seed"])
    # widest y window needed across r, then per-r slices keep the solver
    # valid region pinned to [-T, T]
    y_lo = -T - (r_max - 1) * n_plus
    y_hi = T + (r_max - 1) * n_minus
    x = sample_bg(model, (y_lo - (a.stop - 1), y_hi - a.start + 1), stream=0)
    y = linear_process(a, x)
    errs = []
    for r in r_values:
        sup = list(range(-(r - 1) * n_minus, (r - 1) * n_plus + 1))
        y_r = y.slice(-T - (r - 1) * n_plus, T + (r - 1) * n_minus + 1)
        res = solve_l1(y_r, 0, unit(), cfg=cfg, support=sup)
        errs.append(inverse_error(a, res.w))
    return errs


def stability_curve(roots, r_values, p: float, T: int, trials: int, seed: int,
                    cfg: SolverConfig | None = None, workers: int | None = None
                    ) -> ExperimentTable:
    """Composition error against truncation length r.

    The forward filter is expanded from its root factorization; at each r
    the solver searches the matching asymmetric window and the explicitly
    constructed truncated inverse supplies the decay ceiling.  The fitted
    log-error slope lands in ``meta["log_slope"]`` (natural log per unit
    r; exponential decay at the log of the largest root modulus).
    """
    rf = roots if isinstance(roots, RootFactorization) else RootFactorization(
        plus_roots=tuple(roots))
    if not rf.all_roots:
        raise ValueError("need at least one root")
    cfg = cfg or SolverConfig(tol_primal=1e-10, tol_dual=1e-10)
    r_values = [int(r) for r in r_values]
    trial_seeds = [cell_seed(seed, t) for t in range(trials)]
    jobs = [{"plus": rf.plus_roots, "minus": rf.minus_roots, "c0": rf.c0,
             "T": T, "p": p, "r_values": r_values, "cfg": asdict(cfg),
             "cell_seed": cs} for cs in trial_seeds]
    all_errs = np.array(_run_cells(_stability_trial, jobs, workers))
    med = np.median(all_errs, axis=0)
    a = filter_from_roots(rf)
    constructed = [inverse_error(a, truncated_inverse(rf, r)) for r in r_values]
    closed = [truncation_error_closed_form(rf, r) for r in r_values]

    rs = np.array(r_values, dtype=float)
    mask = med > 0
    slope, intercept = np.polyfit(rs[mask], np.log(med[mask]), 1)
    spec = {"roots": [repr(r) for r in rf.all_roots], "r_values": r_values,
            "p": p, "T": T, "trials": trials, "seed": seed}
    meta = _base_meta(spec, seed)
    meta["log_slope"] = float(slope)
    meta["log_intercept"] = float(intercept)
    meta["trial_seeds"] = trial_seeds
    columns = {"r": r_values,
               "median_solver_error": med.tolist(),
               "constructed_error": constructed,
               "closed_form_error": closed,
               "cell_seed": [seed] * len(r_values)}
    return ExperimentTable(columns=columns, meta=meta)


# ---------------------------------------------------------------------------
# robustness curves
# ---------------------------------------------------------------------------


def _robustness_cell(job: dict) -> dict:
    kind, level, p, T, trials, k, cseed, mc_budget = (
        job["kind"], job["level"], job["p"], job["T"], job["trials"],
        job["k"], job["cell_seed"], job["mc_budget"])
    a = Filter(np.asarray(job["a_coeffs"]), job["a_offset"])
    e0 = unit()
    model = BgModel(p=p, seed=cseed)
    errs, gaps, gap_ses = [], [], []
    for trial in range(trials):
        x = sample_bg(model, (-(T + k) - (a.stop - 1), T + k + 1 - a.start),
                      stream=2 * trial)
        if kind == "gaussian":
            x_noisy = add_ma_gaussian(x, level, e0, seed=cseed, stream=2 * trial + 1)
        elif kind == "adversarial":
            x_noisy = add_adversarial_offset(x, level)
        else:
            raise ValueError(f"unknown robustness kind {kind!r}")
        y = linear_process(a, x_noisy)
        res = solve_l1(y, k, e0)
        psi = convolve(a, res.w)
        errs.append((psi - e0).norm(2))
        est = expected_masked_norm(psi, p, budget=mc_budget, seed=cseed + trial)
        gap = est.mean - p
        se = est.stderr
        if kind == "adversarial":
            # the worst-case bound lives in l1-objective units
            gap *= ROOT_2_OVER_PI
            se *= ROOT_2_OVER_PI
        gaps.append(gap)
        gap_ses.append(se)
    gaps = np.asarray(gaps)
    n = len(gaps)
    stderr = (math.sqrt(gaps.var(ddof=1) / n + float(np.mean(np.square(gap_ses))) / n)
              if n > 1 else float(gap_ses[0]))
    bound = (gaussian_noise_bound(p, level) if kind == "gaussian"
             else adversarial_noise_bound(p, level))
    return {"kind": kind, "level": level, "median_error": float(np.median(errs)),
            "mean_gap": float(gaps.mean()), "gap_stderr": float(stderr),
            "bound": float(bound), "trials": trials, "cell_seed": cseed}


def robustness_curve(kind: str, levels, p: float, a: Filter, T: int, trials: int,
                     seed: int, k: int = 1, mc_budget: int = 100_000,
                     workers: int | None = None) -> ExperimentTable:
    """Error and objective-gap growth against the noise level.

    ``kind`` selects moving-average Gaussian noise (level = sigma) or the
    worst-case constant disturbance (level = eta).  Per level the table
    reports the median composition error, the mean measured objective gap
    with a combined stderr, and the matching theory bound; ``meta`` holds
    the monotone-trend statistic of error against level.
    """
    if kind not in ("gaussian", "adversarial"):
        raise ValueError(f"unknown robustness kind {kind!r}")
    jobs = [{"kind": kind, "level": float(lv), "p": p, "T": T, "trials": trials,
             "k": k, "cell_seed": cell_seed(seed, i), "mc_budget": mc_budget,
             "a_coeffs": a.coeffs.tolist(), "a_offset": a.offset}
            for i, lv in enumerate(levels)]
    rows = _run_cells(_robustness_cell, jobs, workers)
    columns = {name: [r[name] for r in rows]
               for name in ("kind", "level", "median_error", "mean_gap",
                            "gap_stderr", "bound", "trials", "cell_seed")}
    spec = {"kind": kind, "levels": [float(l) for l in levels], "p": p,
            "a": {"coeffs": a.coeffs.tolist(), "offset": a.offset},
            "T": T, "trials": trials, "seed": seed, "k": k}
    meta = _base_meta(spec, seed)
    meta["error_trend_spearman"] = spearman(columns["level"], columns["median_error"])
    return ExperimentTable(columns=columns, meta=meta)


# ---------------------------------------------------------------------------
# sample complexity
# ---------------------------------------------------------------------------


def _inverse_of_geometric_inverse(c: float, k: int, floor: float = 1e-15) -> Filter:
    """Forward filter whose exact inverse is (1, c, ..., c^(k-1)).

    Transfer function (1 - c z^-1) / (1 - c^k z^-k), expanded until the
    geometric tail drops below ``floor``.
    """
    if not (0.0 < abs(c) < 1.0):
        raise ValueError("need 0 < |c| < 1")
    top = Filter(np.array([1.0, -c]), 0)
    reps = max(1, math.ceil(math.log(floor) / (k * math.log(abs(c)))))
    comb = np.zeros(k * reps + 1)
    comb[::k] = float(c) ** (k * np.arange(reps + 1))
    return convolve(top, Filter(comb, 0))


def _samples_cell(job: dict) -> dict:
    k, N, p, c, trials, eps, cseed = (job["k"], job["N"], job["p"], job["c"],
                                      job["trials"], job["eps"], job["cell_seed"])
    a_inv = geometric_filter(c, k)
    a = _inverse_of_geometric_inverse(c, k)
    e0 = unit()
    model = BgModel(p=p, seed=cseed)
    support = list(range(k))
    successes = 0
    for trial in range(trials):
        lo = -(N // 2) - (k - 1)
        hi = lo + N + (k - 1)  # y range giving exactly N valid outputs
        x = sample_bg(model, (lo - (a.stop - 1), hi - a.start), stream=trial)
        y = linear_process(a, x, out_range=(lo, hi))
        try:
            res = solve_l1(y, 0, e0, support=support)
        except DegenerateProblemError:
            continue
        if check_recovery(res.w, a_inv, eps).success:
            successes += 1
    return {"k": k, "N": N, "trials": trials, "successes": successes,
            "rate": successes / trials, "cell_seed": cseed}


def sample_complexity_curve(k_values, N_values, p: float, seed: int,
                            trials: int = 20, c: float = 0.5,
                            eps: float = DEFAULT_EPS,
                            workers: int | None = None) -> ExperimentTable:
    """Success probability per (inverse length k, window length N) cell.

    ``meta["n90"]`` maps each k to the smallest tested N reaching 90%
    success and its ratio to k log k.
    """
    jobs = []
    idx = 0
    for k in k_values:
        for N in N_values:
            jobs.append({"k": int(k), "N": int(N), "p": p, "c": c,
                         "trials": trials, "eps": eps,
                         "cell_seed": cell_seed(seed, idx)})
            idx += 1
    rows = _run_cells(_samples_cell, jobs, workers)
    columns = {name: [r[name] for r in rows]
               for name in ("k", "N", "trials", "successes", "rate", "cell_seed")}
    spec = {"k_values": [int(k) for k in k_values],
            "N_values": [int(n) for n in N_values],
            "p": p, "c": c, "trials": trials, "seed": seed}
    meta = _base_meta(spec, seed)
    n90 = {}
    for k in k_values:
        k = int(k)
        hits = [(row["N"], row["rate"]) for row in rows if row["k"] == k]
        reached = [N for N, rate in sorted(hits) if rate >= 0.9]
        if reached:
            ratio = reached[0] / (k * math.log(k)) if k > 1 else float(reached[0])
            n90[str(k)] = {"N90": reached[0], "ratio": ratio}
        else:
            n90[str(k)] = {"N90": None, "ratio": None}
    meta["n90"] = n90
    return ExperimentTable(columns=columns, meta=meta)
