"""Command-line surface: data generation, single solves, threshold and
landscape queries, the theory self-test, and experiment sweeps.

Every run writes ``config-echo.json`` (the fully resolved parameters)
into the output directory so it can be replayed exactly.  Flags override
values from an optional ``--config`` JSON file.  Failures emit a
machine-readable error JSON on stderr and a nonzero exit code.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .filters import Filter, RootFactorization, convolve, geometric_filter, geometric_length, inverse_filter, parse_filter, unit
from .signals import BgModel, Window, linear_process, read_window, sample_bg, write_window
from .solver import SolverConfig, check_recovery, solve_l1
from . import theory
from .experiments import (PhaseGridSpec, default_phase_spec, phase_diagram,
                          robustness_curve, sample_complexity_curve,
                          stability_curve, worker_count)


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip() != ""]


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip() != ""]


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str))


def _echo_config(out_dir: Path, verb: str, params: dict) -> None:
    _write_json(out_dir / "config-echo.json",
                {"verb": verb, "version": __version__, "params": params})


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """File config < command-line flags < nothing; hard defaults fill holes."""
    cfg = {}
    if getattr(args, "config", None):
        cfg.update(json.loads(Path(args.config).read_text()))
    for key, value in vars(args).items():
        if key in ("config", "func", "verb") or value is None:
            continue
        cfg[key] = value
    for key, value in defaults.items():
        cfg.setdefault(key, value)
    return cfg


def _forward_filter(cfg: dict) -> Filter:
    if cfg.get("a"):
        return parse_filter(cfg["a"], int(cfg.get("a_offset", 0)))
    s = float(cfg["s"])
    return geometric_filter(s, geometric_length(s))


# ---------------------------------------------------------------------------
# verbs
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = _resolve(args, {"p": 0.1, "s": 0.5, "T": 200, "k": 1, "seed": 0,
                          "format": "json", "out": "."})
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    a = _forward_filter(cfg)
    T, k = int(cfg["T"]), int(cfg["k"])
    model = BgModel(p=float(cfg["p"]), seed=int(cfg["seed"]))
    x = sample_bg(model, (-(T + k) - (a.stop - 1), T + k + 1 - a.start))
    y = linear_process(a, x)
    files = write_window(out / "x", x, cfg["format"])
    files += write_window(out / "y", y, cfg["format"])
    _write_json(out / "meta.json", {
        "a": {"offset": a.offset, "coeffs": a.coeffs.tolist()},
        "p": model.p, "T": T, "k": k, "seed": model.seed,
        "x_range": [x.start, x.stop], "y_range": [y.start, y.stop]})
    _echo_config(out, "gen", cfg)
    return 0


def cmd_solve(args) -> int:
    cfg = _resolve(args, {"k": 1, "a_tilde": "1", "a_tilde_offset": 0,
                          "eps": 1e-3, "rho": 1.0, "tol": 1e-8,
                          "max_iters": 20000, "over_relaxation": 1.5,
                          "out": "."})
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    y = read_window(Path(cfg["y"]))
    a_tilde = parse_filter(cfg["a_tilde"], int(cfg["a_tilde_offset"]))
    solver_cfg = SolverConfig(rho=float(cfg["rho"]), max_iters=int(cfg["max_iters"]),
                              tol_primal=float(cfg["tol"]), tol_dual=float(cfg["tol"]),
                              over_relaxation=float(cfg["over_relaxation"]))
    support = _int_list(cfg["support"]) if cfg.get("support") else None

    iterate_rows = []
    log = (lambda it, obj, rp, rd: iterate_rows.append((it, obj, rp, rd))) \
        if cfg.get("dump_iterates") else None
    res = solve_l1(y, int(cfg["k"]), a_tilde, cfg=solver_cfg, support=support,
                   iterate_log=log)
    payload = json.loads(res.to_json())
    if cfg.get("a_inv"):
        a_inv = parse_filter(cfg["a_inv"], int(cfg.get("a_inv_offset", 0)))
        verdict = check_recovery(res.w, a_inv, float(cfg["eps"]))
        payload["recovery"] = {"success": bool(verdict.success),
                               "aligned_error": verdict.aligned_error,
                               "eps": float(cfg["eps"])}
    _write_json(out / "result.json", payload)
    if iterate_rows:
        lines = ["iter,objective,r_primal,r_dual"]
        lines += [f"{it},{obj!r},{rp!r},{rd!r}" for it, obj, rp, rd in iterate_rows]
        (out / "iterates.csv").write_text("\n".join(lines) + "\n")
    _echo_config(out, "solve", cfg)
    return 0


def cmd_threshold(args) -> int:
    cfg = _resolve(args, {"tol": 1e-4, "budget": 100000, "m_cap": 12,
                          "restarts": 4, "seed": 0, "out": "."})
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    if cfg.get("e_tilde"):
        e_tilde = parse_filter(cfg["e_tilde"], int(cfg.get("e_tilde_offset", 0)))
    elif cfg.get("a"):
        a = parse_filter(cfg["a"], int(cfg.get("a_offset", 0)))
        a_tilde = parse_filter(cfg.get("a_tilde", "1"),
                               int(cfg.get("a_tilde_offset", 0)))
        e_tilde = convolve(a_tilde, inverse_filter(a))
    else:
        raise ValueError("provide --e-tilde or --a (optionally with --a-tilde)")
    report = theory.pt_exact(e_tilde, tol=float(cfg["tol"]),
                             budget=int(cfg["budget"]), m_cap=int(cfg["m_cap"]),
                             restarts=int(cfg["restarts"]), seed=int(cfg["seed"]))
    _write_json(out / "threshold.json", json.loads(report.to_json()))
    _echo_config(out, "threshold", cfg)
    return 0


_LANDSCAPE_FNS = ("v1-saddle", "v2k-saddle", "v-mc", "abs-inner", "masked-norm",
                  "folded-mean", "folded-ratio", "kkt", "gaussian-bound",
                  "adversarial-bound", "mu-min")


def cmd_landscape(args) -> int:
    cfg = _resolve(args, {"p": 0.2, "M": 2, "k": 1, "budget": 100000,
                          "seed": 0, "mode": "auto", "out": "."})
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    fn = cfg["fn"]
    p = float(cfg["p"])
    if fn == "v1-saddle":
        result = theory.v1_saddle(int(cfg["M"]), p)
    elif fn == "v2k-saddle":
        result = theory.v2k_saddle(int(cfg["M"]), p, int(cfg["k"]))
    elif fn == "v-mc":
        est = theory.v_landscape_mc(parse_filter(cfg["psi"]), p, int(cfg["k"]),
                                    budget=int(cfg["budget"]), seed=int(cfg["seed"]))
        result = json.loads(est.to_json())
    elif fn == "abs-inner":
        est = theory.expected_abs_inner(parse_filter(cfg["psi"]), p,
                                        mode=cfg["mode"], budget=int(cfg["budget"]),
                                        seed=int(cfg["seed"]))
        result = json.loads(est.to_json())
    elif fn == "masked-norm":
        est = theory.expected_masked_norm(parse_filter(cfg["psi"]), p,
                                          mode=cfg["mode"], budget=int(cfg["budget"]),
                                          seed=int(cfg["seed"]))
        result = json.loads(est.to_json())
    elif fn == "folded-mean":
        result = theory.folded_gaussian_mean(float(cfg["mu"]), float(cfg["sigma"]))
    elif fn == "folded-ratio":
        result = theory.folded_ratio(float(cfg["gamma"]))
    elif fn == "kkt":
        result = theory.kkt_directional(
            parse_filter(cfg["beta"], int(cfg.get("beta_offset", 0))), p,
            mode=cfg["mode"], budget=int(cfg["budget"]), seed=int(cfg["seed"]))
    elif fn == "gaussian-bound":
        result = theory.gaussian_noise_bound(p, float(cfg["sigma"]))
    elif fn == "adversarial-bound":
        result = theory.adversarial_noise_bound(p, float(cfg["eta"]))
    elif fn == "mu-min":
        result = theory.mu_min(parse_filter(cfg["a"], int(cfg.get("a_offset", 0))),
                               p, int(cfg["k"]), float(cfg["w_l1"]))
    else:
        raise ValueError(f"unknown landscape function {fn!r}")
    payload = {"fn": fn, "result": result}
    _write_json(out / "landscape.json", payload)
    print(json.dumps(payload, default=str))
    _echo_config(out, "landscape", cfg)
    return 0


def _selftest_checks(seed: int) -> list[dict]:
    rng = np.random.Generator(np.random.Philox(seed))
    checks = []

    def record(name, passed, detail):
        checks.append({"name": name, "passed": bool(passed), "detail": detail})

    # V2 identity: the masked second moment equals the activity rate
    ok, detail = True, []
    for i in range(5):
        psi = Filter(rng.standard_normal(8))
        p = float(rng.uniform(0.1, 0.9))
        est = theory.v_landscape_mc(psi, p, 2, budget=40000, seed=seed + i)
        ok &= abs(est.mean - p) <= 5 * est.stderr
        detail.append(round(est.mean - p, 5))
    record("v2-identity", ok, detail)

    # Gaussian reduction: enumeration vs direct Monte Carlo
    ok, detail = True, []
    for i in range(5):
        psi = Filter(rng.standard_normal(8))
        p = float(rng.uniform(0.1, 0.9))
        exact = theory.expected_abs_inner(psi, p, mode="exact")
        mc = theory.abs_inner_mc_bg(psi, p, budget=40000, seed=seed + 100 + i)
        ok &= abs(exact.mean - mc.mean) <= 5 * mc.stderr
        detail.append(round(exact.mean - mc.mean, 5))
    record("gaussian-reduction", ok, detail)

    # folded mean vs trapezoid quadrature
    ok, worst = True, 0.0
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    grid = np.linspace(-12, 12, 100001)
    phi = np.exp(-0.5 * grid * grid) / math.sqrt(2 * math.pi)
    for mu in (-2.0, -0.5, 0.0, 0.7, 1.5):
        for sigma in (0.3, 1.0, 2.0):
            num = float(trapezoid(np.abs(mu + sigma * grid) * phi, grid))
            err = abs(num - theory.folded_gaussian_mean(mu, sigma))
            worst = max(worst, err)
            ok &= err < 1e-6
    record("folded-mean-quadrature", ok, worst)

    # threshold ordering on small random tails
    ok, detail = True, []
    for i in range(5):
        tail = rng.uniform(0.05, 0.95, size=int(rng.integers(1, 4)))
        e_tilde = Filter(np.concatenate([[1.0], tail]))
        rep = theory.pt_exact(e_tilde, tol=1e-3, seed=seed + i)
        good = (rep.exact is not None
                and rep.lower - 5e-3 <= rep.exact <= rep.upper + 5e-3)
        ok &= good
        detail.append((round(rep.lower, 4), round(rep.exact or -1, 4),
                       round(rep.upper, 4)))
    record("threshold-ordering", ok, detail)

    # finite-difference gap within [0, pt/2]
    ok, detail = True, 0
    for i in range(25):
        v = rng.standard_normal(int(rng.integers(2, 7)))
        beta = Filter(v / np.linalg.norm(v), int(rng.integers(-2, 1)))
        p = float(rng.uniform(0.05, 0.95))
        t = float(rng.uniform(0.01, 1.0))
        gap, bound = theory.bilipschitz_gap(p, t, beta)
        ok &= -1e-9 <= gap <= bound + 1e-9
        detail += 1
    record("bilipschitz-gap", ok, detail)

    # V1 range between p and sqrt(p)
    ok = True
    for i in range(5):
        psi = Filter(rng.standard_normal(int(rng.integers(2, 12))))
        p = float(rng.uniform(0.1, 0.9))
        est = theory.v_landscape_mc(psi, p, 1, budget=40000, seed=seed + 200 + i)
        ok &= p - 5 * est.stderr <= est.mean <= math.sqrt(p) + 5 * est.stderr
    record("v1-range", ok, None)
    return checks


def cmd_selftest(args) -> int:
    cfg = _resolve(args, {"seed": 0, "out": "."})
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    checks = _selftest_checks(int(cfg["seed"]))
    passed = all(c["passed"] for c in checks)
    payload = {"passed": passed, "checks": checks}
    print(json.dumps(payload, default=str))
    _write_json(out / "selftest.json", payload)
    _echo_config(out, "selftest", cfg)
    return 0 if passed else 2


def cmd_experiment(args) -> int:
    verb = args.what
    workers = getattr(args, "workers", None)
    if verb == "phase":
        cfg = _resolve(args, {"T": 200, "trials": 20, "eps": 1e-3, "seed": 0,
                              "dp": 0.05, "ds": 0.1, "out": "."})
        if cfg.get("p_values") or cfg.get("s_values"):
            spec = PhaseGridSpec(
                p_values=tuple(_float_list(cfg["p_values"])) if cfg.get("p_values")
                else default_phase_spec(dp=float(cfg["dp"])).p_values,
                s_values=tuple(_float_list(cfg["s_values"])) if cfg.get("s_values")
                else default_phase_spec(ds=float(cfg["ds"])).s_values,
                T=int(cfg["T"]), trials=int(cfg["trials"]),
                eps=float(cfg["eps"]), seed=int(cfg["seed"]))
        else:
            spec = default_phase_spec(seed=int(cfg["seed"]), T=int(cfg["T"]),
                                      trials=int(cfg["trials"]),
                                      dp=float(cfg["dp"]), ds=float(cfg["ds"]))
        grid, boundary = phase_diagram(spec, workers=workers)
        out = Path(cfg["out"])
        files = grid.write(out, "phase_grid") + boundary.write(out, "phase_boundary")
        _echo_config(out, "experiment-phase", cfg)
        print(json.dumps({"files": [str(f) for f in files]}))
        return 0
    if verb == "stability":
        cfg = _resolve(args, {"s": 0.5, "p": 0.1, "T": 400, "trials": 8,
                              "rmin": 4, "rmax": 16, "seed": 0, "out": "."})
        roots = _float_list(cfg["roots"]) if cfg.get("roots") else [float(cfg["s"])]
        minus = _float_list(cfg["minus_roots"]) if cfg.get("minus_roots") else []
        rf = RootFactorization(plus_roots=tuple(roots), minus_roots=tuple(minus))
        r_values = list(range(int(cfg["rmin"]), int(cfg["rmax"]) + 1))
        table = stability_curve(rf, r_values, float(cfg["p"]), int(cfg["T"]),
                                int(cfg["trials"]), int(cfg["seed"]),
                                workers=workers)
        out = Path(cfg["out"])
        files = table.write(out, "stability")
        _echo_config(out, "experiment-stability", cfg)
        print(json.dumps({"files": [str(f) for f in files],
                          "log_slope": table.meta["log_slope"]}))
        return 0
    if verb == "robustness":
        cfg = _resolve(args, {"kind": "gaussian", "p": 0.1, "s": 0.3, "T": 200,
                              "trials": 12, "seed": 0, "k": 1,
                              "levels": "0.0,0.05,0.1,0.15,0.2,0.25,0.3",
                              "out": "."})
        a = _forward_filter(cfg)
        table = robustness_curve(cfg["kind"], _float_list(cfg["levels"]),
                                 float(cfg["p"]), a, int(cfg["T"]),
                                 int(cfg["trials"]), int(cfg["seed"]),
                                 k=int(cfg["k"]), workers=workers)
        out = Path(cfg["out"])
        files = table.write(out, f"robustness_{cfg['kind']}")
        _echo_config(out, "experiment-robustness", cfg)
        print(json.dumps({"files": [str(f) for f in files]}))
        return 0
    if verb == "samples":
        cfg = _resolve(args, {"k_values": "2,4,8", "N_values": "32,64,128,256,512",
                              "p": 0.1, "trials": 20, "c": 0.5, "seed": 0,
                              "out": "."})
        table = sample_complexity_curve(_int_list(cfg["k_values"]),
                                        _int_list(cfg["N_values"]),
                                        float(cfg["p"]), int(cfg["seed"]),
                                        trials=int(cfg["trials"]),
                                        c=float(cfg["c"]), workers=workers)
        out = Path(cfg["out"])
        files = table.write(out, "samples")
        _echo_config(out, "experiment-samples", cfg)
        print(json.dumps({"files": [str(f) for f in files],
                          "n90": table.meta["n90"]}))
        return 0
    raise ValueError(f"unknown experiment verb {verb!r}")


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def _add_common(sp):
    sp.add_argument("--out", default=None)
    sp.add_argument("--config", default=None)
    sp.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sparse-deconv",
        description="Sparse blind deconvolution: l1 inverse-filter recovery, "
                    "threshold theory, and experiment harnesses.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen", help="generate a sparse source and its observation")
    _add_common(g)
    g.add_argument("--p", type=float, default=None)
    g.add_argument("--s", type=float, default=None)
    g.add_argument("--a", default=None)
    g.add_argument("--a-offset", dest="a_offset", type=int, default=None)
    g.add_argument("--T", type=int, default=None)
    g.add_argument("--k", type=int, default=None)
    g.add_argument("--format", choices=("json", "bin"), default=None)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="run the anchored l1 solver on a window")
    _add_common(s)
    s.add_argument("--y", required=True)
    s.add_argument("--k", type=int, default=None)
    s.add_argument("--support", default=None)
    s.add_argument("--a-tilde", dest="a_tilde", default=None)
    s.add_argument("--a-tilde-offset", dest="a_tilde_offset", type=int, default=None)
    s.add_argument("--a-inv", dest="a_inv", default=None)
    s.add_argument("--a-inv-offset", dest="a_inv_offset", type=int, default=None)
    s.add_argument("--eps", type=float, default=None)
    s.add_argument("--rho", type=float, default=None)
    s.add_argument("--tol", type=float, default=None)
    s.add_argument("--max-iters", dest="max_iters", type=int, default=None)
    s.add_argument("--over-relaxation", dest="over_relaxation", type=float, default=None)
    s.add_argument("--dump-iterates", dest="dump_iterates", action="store_const",
                   const=True, default=None)
    s.set_defaults(func=cmd_solve)

    t = sub.add_parser("threshold", help="recovery-threshold report")
    _add_common(t)
    t.add_argument("--e-tilde", dest="e_tilde", default=None)
    t.add_argument("--e-tilde-offset", dest="e_tilde_offset", type=int, default=None)
    t.add_argument("--a", default=None)
    t.add_argument("--a-offset", dest="a_offset", type=int, default=None)
    t.add_argument("--a-tilde", dest="a_tilde", default=None)
    t.add_argument("--a-tilde-offset", dest="a_tilde_offset", type=int, default=None)
    t.add_argument("--tol", type=float, default=None)
    t.add_argument("--budget", type=int, default=None)
    t.add_argument("--m-cap", dest="m_cap", type=int, default=None)
    t.add_argument("--restarts", type=int, default=None)
    t.set_defaults(func=cmd_threshold)

    l = sub.add_parser("landscape", help="evaluate a theory quantity")
    _add_common(l)
    l.add_argument("--fn", required=True, choices=_LANDSCAPE_FNS)
    l.add_argument("--p", type=float, default=None)
    l.add_argument("--M", type=int, default=None)
    l.add_argument("--k", type=int, default=None)
    l.add_argument("--psi", default=None)
    l.add_argument("--beta", default=None)
    l.add_argument("--beta-offset", dest="beta_offset", type=int, default=None)
    l.add_argument("--a", default=None)
    l.add_argument("--a-offset", dest="a_offset", type=int, default=None)
    l.add_argument("--mu", type=float, default=None)
    l.add_argument("--sigma", type=float, default=None)
    l.add_argument("--gamma", type=float, default=None)
    l.add_argument("--eta", type=float, default=None)
    l.add_argument("--w-l1", dest="w_l1", type=float, default=None)
    l.add_argument("--budget", type=int, default=None)
    l.add_argument("--mode", choices=("auto", "exact", "mc"), default=None)
    l.set_defaults(func=cmd_landscape)

    st = sub.add_parser("selftest", help="run the theory invariant suite")
    _add_common(st)
    st.set_defaults(func=cmd_selftest)

    e = sub.add_parser("experiment", help="run an experiment sweep")
    e.add_argument("what", choices=("phase", "stability", "robustness", "samples"))
    _add_common(e)
    e.add_argument("--workers", type=int, default=None)
    e.add_argument("--T", type=int, default=None)
    e.add_argument("--trials", type=int, default=None)
    e.add_argument("--eps", type=float, default=None)
    e.add_argument("--p", type=float, default=None)
    e.add_argument("--s", type=float, default=None)
    e.add_argument("--a", default=None)
    e.add_argument("--a-offset", dest="a_offset", type=int, default=None)
    e.add_argument("--p-values", dest="p_values", default=None)
    e.add_argument("--s-values", dest="s_values", default=None)
    e.add_argument("--dp", type=float, default=None)
    e.add_argument("--ds", type=float, default=None)
    e.add_argument("--roots", default=None)
    e.add_argument("--minus-roots", dest="minus_roots", default=None)
    e.add_argument("--rmin", type=int, default=None)
    e.add_argument("--rmax", type=int, default=None)
    e.add_argument("--kind", choices=("gaussian", "adversarial"), default=None)
    e.add_argument("--levels", default=None)
    e.add_argument("--k", type=int, default=None)
    e.add_argument("--k-values", dest="k_values", default=None)
    e.add_argument("--N-values", dest="N_values", default=None)
    e.add_argument("--c", type=float, default=None)
    e.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface every hard error as machine-readable JSON
        payload = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(payload), file=sys.stderr)
        out = getattr(args, "out", None)
        if out:
            try:
                _write_json(Path(out) / "error.json", payload)
            except OSError:
                pass
        return 1


if __name__ == "__main__":
    sys.exit(main())
