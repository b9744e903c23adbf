import math

import numpy as np
import pytest
from scipy.linalg import solve_banded

from sparse_deconv.filters import Filter, geometric_filter, geometric_length, unit
from sparse_deconv.signals import BgModel, Window, linear_process, sample_bg
from sparse_deconv.solver import (DegenerateProblemError, SolverConfig,
                                  SolverResult, certificate_residual,
                                  check_recovery, solve_l1,
                                  solve_l1_oracle_1dof)


def _bg_window(p, seed, lo, hi, stream=0):
    return sample_bg(BgModel(p=p, seed=seed), (lo, hi), stream=stream)


def _geometric_observation(s, p, T, k, seed, stream=0):
    L = geometric_length(s)
    a = geometric_filter(s, L)
    x = _bg_window(p, seed, -(T + k) - (L - 1), T + k + 1, stream)
    return linear_process(a, x), x


# ---------------------------------------------------------------------------
# end-to-end recovery
# ---------------------------------------------------------------------------


def test_identity_blur_recovers_unit():
    T, k = 200, 1
    y = _bg_window(0.2, seed=21, lo=-(T + k), hi=T + k + 1)
    res = solve_l1(y, k, unit())
    assert res.converged
    assert res.n_valid == 2 * T + 1
    verdict = check_recovery(res.w, unit(), 1e-3)
    assert verdict.success and verdict.aligned_error < 1e-6


def test_geometric_blur_recovers_short_inverse():
    # inside the success region p < 1 - s
    s, p, T, k = 0.5, 0.1, 200, 1
    y, _ = _geometric_observation(s, p, T, k, seed=42)
    res = solve_l1(y, k, unit())
    verdict = check_recovery(res.w, Filter(np.array([1.0, -s])), 1e-3)
    assert verdict.success


def test_symmetric_inverse_deblur_setup():
    # ground-truth inverse (0.5, 1, 0.5) centered: its transfer function
    # vanishes on the circle, so the observation is synthesized by solving
    # the banded system (0.5,1,0.5) * y = x on the window
    T, k, p = 1000, 1, 0.05
    a_inv = Filter(np.array([0.5, 1.0, 0.5]), -1)
    x = _bg_window(p, seed=7, lo=-(T + k), hi=T + k + 1)
    n = len(x)
    ab = np.zeros((3, n))
    ab[0, 1:] = 0.5
    ab[1, :] = 1.0
    ab[2, :-1] = 0.5
    yv = solve_banded((1, 1), ab, x.values)
    y = Window(yv, x.start)
    res = solve_l1(y, k, unit())
    verdict = check_recovery(res.w, a_inv, 1e-3)
    assert verdict.success


def test_scale_equivariance():
    s, p, T, k = 0.4, 0.15, 150, 1
    y, _ = _geometric_observation(s, p, T, k, seed=5)
    res1 = solve_l1(y, k, unit())
    res2 = solve_l1(Window(100.0 * y.values, y.start), k, unit())
    np.testing.assert_allclose(res1.w.coeffs, res2.w.coeffs, atol=1e-6)
    assert res2.objective == pytest.approx(100.0 * res1.objective, rel=1e-6)


def test_constraint_feasibility_general_a_tilde():
    s, p, T, k = 0.4, 0.15, 150, 2
    y, _ = _geometric_observation(s, p, T, k, seed=15)
    a_tilde = Filter(np.array([1.0, 0.2, -0.1]), -1)
    cfg = SolverConfig()
    res = solve_l1(y, k, a_tilde, cfg=cfg)
    lhs = sum(a_tilde.value_at(-j) * res.w.value_at(j)
              for j in range(res.w.start, res.w.stop))
    assert abs(lhs - 1.0) <= 10 * cfg.tol_primal


def test_k0_no_freedom_baseline():
    y = _bg_window(0.3, seed=8, lo=-50, hi=51)
    res = solve_l1(y, 0, unit())
    assert res.w == unit()
    assert res.objective == pytest.approx(np.abs(y.values).mean())
    assert res.converged


def test_degenerate_window_raises():
    y = Window(np.zeros(101), -50)
    with pytest.raises(DegenerateProblemError):
        solve_l1(y, 1, unit())


def test_nonconvergence_flag():
    y, _ = _geometric_observation(0.5, 0.2, 100, 1, seed=2)
    res = solve_l1(y, 1, unit(), cfg=SolverConfig(max_iters=3))
    assert not res.converged
    assert res.iterations == 3


def test_zero_a_tilde_rejected():
    y = _bg_window(0.3, seed=9, lo=0, hi=50)
    with pytest.raises(ValueError):
        solve_l1(y, 1, Filter(np.zeros(1)))
    with pytest.raises(ValueError):
        solve_l1(y, 1, Filter(np.array([1.0]), 5))  # zero on the support


def test_iterate_log_stream():
    y, _ = _geometric_observation(0.5, 0.2, 80, 1, seed=3)
    rows = []
    solve_l1(y, 1, unit(), iterate_log=lambda *r: rows.append(r))
    assert len(rows) >= 2
    assert rows[0][0] == 1 and rows[-1][2] < rows[0][2]


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(rho=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(over_relaxation=2.5)
    with pytest.raises(ValueError):
        SolverConfig(tol_primal=2.0)


def test_result_serialization():
    y, _ = _geometric_observation(0.5, 0.2, 60, 1, seed=4)
    res = solve_l1(y, 1, unit())
    import json
    d = json.loads(res.to_json())
    assert d["converged"] and d["n_valid"] == len(y) - 2
    assert len(d["w"]["coeffs"]) == 3 or d["w"]["coeffs"]


# ---------------------------------------------------------------------------
# 1-dof oracle
# ---------------------------------------------------------------------------


def test_oracle_degenerate_single_nonzero():
    # the only nonzero sits where the shifted column never reaches it
    y = Window(np.array([5.0, 0.0, 0.0, 0.0]), 0)
    out = solve_l1_oracle_1dof(y, 0, -3)
    assert out.degenerate and out.w1 == 0.0
    assert out.objective == pytest.approx(5.0)


def test_oracle_exact_root_on_sparse_spike_train():
    # observations from a one-pole blur of a very sparse source: the
    # minimizing free coefficient is exactly -s
    s = 0.6
    a = geometric_filter(s, geometric_length(s))
    x = Window(np.zeros(120), 0)
    xv = x.values.copy()
    xv[[10, 47, 80]] = [1.4, -2.0, 0.7]
    x = Window(xv, 0)
    xx = Window(np.concatenate([np.zeros(len(a) - 1), x.values]), -(len(a) - 1))
    y = linear_process(a, xx)
    out = solve_l1_oracle_1dof(y, 0, 1)
    assert out.w1 == pytest.approx(-s, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_oracle_matches_grid_scan(seed):
    y = _bg_window(0.4, seed=100 + seed, lo=0, hi=50)
    out = solve_l1_oracle_1dof(y, 0, 1)
    grid = np.linspace(out.w1 - 0.5, out.w1 + 0.5, 100_001)
    base, slope = y.values[1:], y.values[:-1]
    vals = np.abs(base[None, :] + grid[:, None] * slope[None, :]).sum(axis=1) / base.size
    assert out.objective <= vals.min() + 1e-12
    assert abs(grid[int(np.argmin(vals))] - out.w1) < 1e-5


def test_oracle_tie_resolves_to_smallest():
    # symmetric data with a flat segment between two breakpoints
    y = Window(np.array([1.0, 1.0, -1.0, -1.0, 1.0, 1.0]), 0)
    out = solve_l1_oracle_1dof(y, 0, 1)
    grid = np.linspace(-3, 3, 60_001)
    base, slope = y.values[1:], y.values[:-1]
    vals = np.abs(base[None, :] + grid[:, None] * slope[None, :]).sum(axis=1) / base.size
    assert out.objective == pytest.approx(vals.min(), abs=1e-12)
    minimizers = grid[vals <= vals.min() + 1e-12]
    assert out.w1 <= minimizers.min() + 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_admm_matches_oracle(seed):
    d = 1 + seed % 3
    y = _bg_window(0.25, seed=200 + seed, lo=0, hi=120)
    oracle = solve_l1_oracle_1dof(y, 0, d)
    res = solve_l1(y, 0, unit(), support=[0, d])
    assert abs(res.objective - oracle.objective) < 1e-8
    assert abs(res.w.value_at(d) - oracle.w1) < 1e-6


# ---------------------------------------------------------------------------
# recovery check
# ---------------------------------------------------------------------------


def test_check_recovery_exact_and_symmetries():
    a_inv = Filter(np.array([1.0, -0.5]))
    assert check_recovery(a_inv, a_inv, 1e-3) == (True, 0.0)
    scaled_shifted = a_inv.shift(3).scale(2.0)
    verdict = check_recovery(scaled_shifted, a_inv, 1e-3)
    assert verdict.success and verdict.aligned_error < 1e-15


def test_check_recovery_perturbation_fails():
    a_inv = Filter(np.array([1.0, -0.5]))
    w = a_inv + Filter(np.array([0.01]), 5)
    verdict = check_recovery(w, a_inv, 1e-3)
    assert not verdict.success
    assert verdict.aligned_error == pytest.approx(0.01)


def test_check_recovery_rejects_zero():
    with pytest.raises(ValueError):
        check_recovery(Filter(np.zeros(1)), unit(), 1e-3)


# ---------------------------------------------------------------------------
# optimality certificate
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(3))
def test_subgradient_certificate_small(seed):
    s, p, T, k = 0.5, 0.15, 150, 1
    y, _ = _geometric_observation(s, p, T, k, seed=300 + seed)
    cfg = SolverConfig()
    res = solve_l1(y, k, unit(), cfg=cfg)
    assert certificate_residual(y, res, unit()) <= 10 * cfg.tol_dual
