"""End-to-end acceptance suite.

Each test prints a single PASS/FAIL line with the measured quantity so the
whole gate can be read off `pytest -s`. The two simulation campaigns (desk
scale and full scale) are session fixtures shared across criteria.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from swarmdensity.cli import load_config
from swarmdensity.consensus import (
    CommGraph,
    disagreement,
    linop_round,
    metropolis_weights,
    required_loops,
    second_singular_value,
)
from swarmdensity.engine import (
    ScenarioConfig,
    build_context,
    init_swarm,
    lln_check,
    run_monte_carlo,
    step,
)
from swarmdensity.grid import Grid
from swarmdensity.guidance import (
    apply_constraints,
    build_markov,
    max_row_l1_to,
    xi_quantization_floor,
)
from swarmdensity.orbit import PERIOD, OrbitGridAdapter, bin_centroid_at

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

# metric-array column indices
STEP, HD_TRUE, HD_EST, TRANS, CUM_TRANS, CONS, XI, NLOOP, ALIVE = range(9)


def report(n, ok, detail):
    print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} — {detail}")
    assert ok, f"criterion {n}: {detail}"


def random_triple(rng, n_max=100):
    n = int(rng.integers(3, n_max + 1))
    pi = np.zeros(n)
    n_rec = int(rng.integers(2, n + 1))
    rec = rng.choice(n, size=n_rec, replace=False)
    pi[rec] = rng.dirichlet(np.ones(n_rec))
    d = rng.random(n) * 5.0
    d[rng.integers(n)] = 0.0
    alpha = 1.0 - d / (d.max() + 1.0)
    return pi, float(rng.random()), alpha


# --- shared campaigns -------------------------------------------------------

@pytest.fixture(scope="session")
def desk_runs():
    """50 independent desk-scale runs (5x5 letter formation, 700 agents)."""
    cfg = load_config(SCENARIOS / "letter.cfg")
    t0 = time.perf_counter()
    result = run_monte_carlo(cfg, 50)
    return cfg, result, time.perf_counter() - t0


@pytest.fixture(scope="session")
def full_scale_runs():
    """20 runs of the 30x30 damage scenario, adaptive and baseline."""
    t0 = time.perf_counter()
    psg = run_monte_carlo(load_config(SCENARIOS / "logo.cfg"), 20)
    base = run_monte_carlo(load_config(SCENARIOS / "logo_baseline.cfg"), 20)
    return psg, base, time.perf_counter() - t0


# --- criteria ---------------------------------------------------------------

def test_criterion_1_stationarity():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst_stat = worst_row = worst_neg = 0.0
    for _ in range(1000):
        pi, xi, alpha = random_triple(rng)
        M = build_markov(pi, xi, alpha)
        worst_stat = max(worst_stat, float(np.abs(pi @ M - pi).max()))
        worst_row = max(worst_row, float(np.abs(M.sum(axis=1) - 1.0).max()))
        worst_neg = min(worst_neg, float(M.min()))
    dt = time.perf_counter() - t0
    ok = worst_stat <= 1e-12 and worst_row <= 1e-12 and worst_neg >= 0.0 and dt < 5.0
    report(1, ok, f"1000 triples: stationarity {worst_stat:.2e}, "
                  f"row-sum {worst_row:.2e}, min entry {worst_neg:.1e}, {dt:.2f}s")


def test_criterion_2_constraints():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst_stat = worst_blocked = 0.0
    for _ in range(1000):
        pi, xi, alpha = random_triple(rng)
        n = pi.size
        A = rng.random((n, n)) < 0.5
        A |= A.T
        np.fill_diagonal(A, True)
        Mt = apply_constraints(build_markov(pi, xi, alpha), A)
        blocked = Mt[~A]
        if blocked.size:
            worst_blocked = max(worst_blocked, float(np.abs(blocked).max()))
        worst_stat = max(worst_stat, float(np.abs(pi @ Mt - pi).max()))
    dt = time.perf_counter() - t0
    ok = worst_blocked == 0.0 and worst_stat <= 1e-12 and dt < 5.0
    report(2, ok, f"1000 constrained cases: blocked mass {worst_blocked:.1e}, "
                  f"stationarity {worst_stat:.2e}, {dt:.2f}s")


def test_criterion_3_hellinger_reference_values():
    from fractions import Fraction as Fr

    from swarmdensity.guidance import hellinger
    pi = np.array([0.0, 0.0, 0.4, 0.0, 0.6])
    f1 = np.array([0.1, 0.0, 0.4, 0.0, 0.5])
    f2 = np.array([0.0, 0.0, 0.5, 0.0, 0.5])
    d1, d2 = hellinger(pi, f1), hellinger(pi, f2)
    # the l1 distances are rational; check them in exact arithmetic
    pi_x = [Fr(0), Fr(0), Fr(2, 5), Fr(0), Fr(3, 5)]
    f1_x = [Fr(1, 10), Fr(0), Fr(2, 5), Fr(0), Fr(1, 2)]
    f2_x = [Fr(0), Fr(0), Fr(1, 2), Fr(0), Fr(1, 2)]
    l1_1 = sum(abs(a - b) for a, b in zip(pi_x, f1_x))
    l1_2 = sum(abs(a - b) for a, b in zip(pi_x, f2_x))
    ok = (abs(d1 - 0.2286) <= 5e-5 and abs(d2 - 0.0712) <= 5e-5
          and l1_1 == Fr(1, 5) and l1_2 == Fr(1, 5))
    report(3, ok, f"D(pi,f1)={d1:.5f} (0.2286), D(pi,f2)={d2:.5f} (0.0712), "
                  f"l1 {l1_1}/{l1_2} (1/5 exactly)")


def test_criterion_4_consensus_bound():
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    worst_margin = -np.inf
    for _ in range(100):
        m = int(rng.integers(5, 201))
        adj = np.zeros((m, m), dtype=bool)
        order = rng.permutation(m)
        for a, b in zip(order, order[1:]):   # spanning path keeps it connected
            adj[a, b] = adj[b, a] = True
        extra = rng.random((m, m)) < 0.2
        adj |= extra | extra.T
        np.fill_diagonal(adj, False)
        P = metropolis_weights(CommGraph(m=m, adjacency=adj))
        est = rng.dirichlet(np.ones(10), size=m)
        truth = est.mean(axis=0)             # preserved by the balanced weights
        n_loop = required_loops(second_singular_value(P), m, 1.0 / m)
        for _ in range(n_loop):
            est = linop_round(est, P)
        _, norm = disagreement(est, truth)
        worst_margin = max(worst_margin, norm * m)   # pass iff <= 1 everywhere
    dt = time.perf_counter() - t0
    ok = worst_margin <= 1.0 and dt < 30.0
    report(4, ok, f"100 graphs: worst m*||theta||_2 = {worst_margin:.3f} "
                  f"(bound 1), {dt:.1f}s")


def test_criterion_5_desk_scale_convergence(desk_runs):
    cfg, result, dt = desk_runs
    finals = np.array([r[-1, HD_TRUE] for r in result.runs])
    n_converged = int((finals < 0.1).sum())
    xi_min = xi_quantization_floor(cfg.m)
    median_xi = float(np.median([r[-1, XI] for r in result.runs]))
    ok = n_converged >= 45 and median_xi < 2 * xi_min and dt < 120.0
    report(5, ok, f"{n_converged}/50 runs with final hd < 0.1, median xi at "
                  f"step 300 = {median_xi:.2e} (< {2 * xi_min:.2e}), {dt:.1f}s")


def test_criterion_6_full_scale_trends(full_scale_runs):
    psg, base, dt = full_scale_runs
    hd = psg.mean[:, HD_TRUE]

    ratio_200 = hd[200] / hd[0]
    cum_psg = psg.mean[500, CUM_TRANS]
    cum_base = base.mean[500, CUM_TRANS]
    cum_ratio = cum_psg / cum_base

    pre = hd[400:501].mean()
    jump = hd[501] - hd[500]
    below = np.flatnonzero(hd[501:652] < 1.5 * pre)
    recovery = int(below[0]) if below.size else -1

    ok = (ratio_200 <= 0.25 and cum_ratio <= 0.5 and jump > 0.0
          and 0 <= recovery <= 150 and dt < 900.0)
    report(6, ok,
           f"hd[200]/hd[0] = {ratio_200:.3f} (<=0.25); cumulative transitions "
           f"{cum_psg:.1f} vs baseline {cum_base:.1f}, ratio {cum_ratio:.2f} "
           f"(<=0.5); damage jump +{jump:.3f}, recovered {recovery} steps "
           f"after damage (<=150); {dt:.0f}s")


def test_criterion_7_identity_convergence(desk_runs):
    cfg, result, _ = desk_runs
    total = sum(float(r[250:301, TRANS].sum()) for r in result.runs)
    budget = 0.01 * cfg.m * 50
    ok = total <= budget
    report(7, ok, f"total transitions over steps 250-300 across 50 runs: "
                  f"{total:.0f} (<= {budget:.0f})")


def test_criterion_8_trapping_escape():
    cfg = ScenarioConfig(width=8, height=1, formation_text="0 0 0 0 0 0 0 1",
                         m=40, steps=0, motion_range=1)
    ctx, grid, formation = build_context(cfg)
    trapped_bins = np.array(sorted(ctx.constraint.trapping))
    recurrent = formation.recurrent
    swarm = init_swarm(cfg, 0, initial_density=np.full(8, 1.0 / 8))
    started_trapped = np.isin(swarm.bins, trapped_bins)

    reentered = False
    in_trap = started_trapped.copy()
    exit_step = np.where(started_trapped, -1, 0)
    for k in range(1, grid.n_cell + 1):
        swarm, _ = step(swarm, cfg, formation, grid)
        now = np.isin(swarm.bins, trapped_bins)
        reentered |= bool((now & ~in_trap).any())
        exit_step[(exit_step == -1) & ~now] = k
        in_trap = now
    all_in_pi = bool(np.isin(swarm.bins, recurrent).all())

    ok = (trapped_bins.size > 0 and started_trapped.any()
          and (exit_step[started_trapped] <= grid.n_cell).all()
          and not reentered and all_in_pi)
    report(8, ok, f"{started_trapped.sum()} agents started in the "
                  f"{trapped_bins.size}-bin trapping set; worst exit step "
                  f"{exit_step.max()} (<= {grid.n_cell}), re-entry={reentered}, "
                  f"all in recurrent set by step {grid.n_cell}: {all_in_pi}")


def test_criterion_9_ergodicity_diagnostic():
    rng = np.random.default_rng(9)
    t0 = time.perf_counter()
    pi = rng.dirichlet(np.ones(5))
    xi_min = xi_quantization_floor(100)
    prod = np.eye(5)
    dists = []
    for _ in range(30):
        d = rng.random(5) * 3.0
        d[rng.integers(5)] = 0.0
        alpha = 1.0 - d / (d.max() + 1.0)
        xi = float(xi_min + (1.0 - xi_min) * rng.random())
        prod = prod @ build_markov(pi, xi, alpha)
        dists.append(max_row_l1_to(prod, pi))
    dt = time.perf_counter() - t0
    monotone = all(b <= a + 1e-12 for a, b in zip(dists, dists[1:]))
    ok = dists[-1] < 1e-3 and monotone and dt < 1.0
    report(9, ok, f"30-matrix product: distance {dists[0]:.3f} -> "
                  f"{dists[-1]:.2e} (< 1e-3), monotone={monotone}, {dt:.2f}s")


def test_criterion_10_swarm_sizing_check():
    rng = np.random.default_rng(10)
    t0 = time.perf_counter()
    pi = rng.dirichlet(np.ones(25))
    rates = lln_check(pi, m=1000, n_trials=2000, eps_bin=0.05, seed=10)
    dt = time.perf_counter() - t0
    ok = rates.max() <= 0.1 and dt < 10.0
    report(10, ok, f"m=1000, 2000 trials: worst per-bin violation rate "
                   f"{rates.max():.4f} (<= 0.1), {dt:.2f}s")


def test_criterion_11_orbit_formulas():
    adapter = OrbitGridAdapter(Grid(width=30, height=30))
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(10000):
        i = int(rng.integers(900))
        k = int(rng.integers(0, 10**6))
        x, y = (float(v) for v in adapter.grid.centroids[i])
        phase = math.pi * ((k % PERIOD) / 10.0 + y / 300.0)
        amp = 1.0 + x / 15.0
        oracle = (0.5 * amp * math.sin(phase), amp * math.cos(phase))
        got = bin_centroid_at(adapter, i, k)
        worst = max(worst, abs(got[0] - oracle[0]), abs(got[1] - oracle[1]))
    periodic = all(
        np.array_equal(adapter.centroids_at(k), adapter.centroids_at(k + PERIOD))
        for k in range(PERIOD))
    ok = worst <= 1e-15 and periodic
    report(11, ok, f"10000 (bin, step) pairs: max deviation {worst:.1e} "
                   f"(<= 1e-15), exact period-{PERIOD} identity: {periodic}")
