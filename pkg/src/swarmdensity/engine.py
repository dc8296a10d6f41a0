"""Swarm simulation engine.

Runs the full per-agent guidance cycle over all agents and time steps:
consensus on the current swarm distribution, Hellinger tuning, transient /
trapped escape, constrained Markov sampling, plus damage injection, metrics,
Monte Carlo aggregation and the agent-count planner.

All agents move synchronously from the pre-step snapshot, so evaluation
order never affects results. Agents sharing a bin have identical consensus
estimates, which the engine exploits by running consensus on the quotient
graph of occupied bins (exact, not an approximation).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil

import numpy as np

from .consensus import BinGroupedConsensus, GraphDisconnectedError, required_loops
from .grid import Formation, Grid, load_formation
from .guidance import (
    ConstraintMatrix,
    escape_matrix,
    hellinger,
    reachability_constraint,
    select_transition,
    xi_quantization_floor,
)
from .orbit import OrbitGridAdapter, orbit_alpha_vector

SIGMA_EXACT_MAX_M = 512   # above this, fall back to the fixed loop budget
DEFAULT_N_LOOP_LARGE = 20

METRIC_COLUMNS = (
    "step", "hd_true", "hd_estimate_mean", "transitions",
    "cumulative_transitions_mean", "consensus_norm", "xi_mean", "n_loop",
    "m_alive",
)


class EngineError(RuntimeError):
    pass


@dataclass(frozen=True)
class DamageEvent:
    """Bernoulli removal of agents from a bin rectangle after a given step.

    Rows/cols are half-open [r0, r1) x [c0, c1) in raster coordinates.
    """

    step: int
    fraction: float
    row0: int
    row1: int
    col0: int
    col1: int

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("damage fraction must lie in [0, 1]")

    def region_bins(self, grid: Grid) -> np.ndarray:
        c = grid.centroids
        inside = ((c[:, 1] >= self.row0) & (c[:, 1] < self.row1)
                  & (c[:, 0] >= self.col0) & (c[:, 0] < self.col1))
        return np.flatnonzero(inside)


@dataclass(frozen=True)
class ScenarioConfig:
    width: int
    height: int
    formation_text: str
    m: int
    steps: int
    motion_range: int | None = None
    comm_radius: float | None = None
    eps_cons: float | None = None        # defaults to 1/m when unset
    n_loop: int | None = None            # overrides the spectral round bound
    algorithm: str = "psg-imc"
    damage: tuple[DamageEvent, ...] = ()
    snap_window: int = 10
    snap_xi_factor: float = 1.0
    snap_level_factor: float = 0.5
    snap_reset_factor: float = 2.0
    orbit: bool = False
    on_disconnect: str = "error"         # or "complete": uniform fallback graph
    fixed_reference_bin: int | None = None
    oracle_consensus: bool = False
    seed: int = 0
    snapshot_steps: tuple[int, ...] = ()

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.algorithm not in ("psg-imc", "homogeneous-baseline"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.on_disconnect not in ("error", "complete"):
            raise ValueError(f"unknown on_disconnect policy {self.on_disconnect!r}")


@dataclass
class AgentState:
    """Read-only view of one agent (the engine itself stores arrays)."""

    id: int
    bin: int
    estimate: np.ndarray
    xi_history: np.ndarray
    cumulative_transitions: int


@dataclass
class SwarmState:
    k: int
    bins: np.ndarray                      # current bin index per agent
    cumulative_transitions: np.ndarray
    xi_history: np.ndarray                # (m, window) ring, newest first
    xi_count: np.ndarray                  # valid entries per agent
    rngs: list                            # private np.random.Generator per agent
    n_cell: int
    baseline_ref_bin: int | None = None

    @property
    def m(self) -> int:
        return self.bins.size

    def counts(self) -> np.ndarray:
        return np.bincount(self.bins, minlength=self.n_cell)

    @property
    def true_distribution(self) -> np.ndarray:
        return self.counts() / self.m

    def agent_states(self) -> list[AgentState]:
        out = []
        for j in range(self.m):
            est = np.zeros(self.n_cell)
            est[self.bins[j]] = 1.0
            out.append(AgentState(
                id=j, bin=int(self.bins[j]), estimate=est,
                xi_history=self.xi_history[j, :self.xi_count[j]].copy(),
                cumulative_transitions=int(self.cumulative_transitions[j]),
            ))
        return out


@dataclass
class StepMetrics:
    step: int
    hd_true: float
    hd_estimate_mean: float
    transitions: int
    cumulative_transitions_mean: float
    consensus_norm: float
    xi_mean: float
    n_loop: int
    m_alive: int

    def as_row(self) -> tuple:
        return (self.step, self.hd_true, self.hd_estimate_mean,
                self.transitions, self.cumulative_transitions_mean,
                self.consensus_norm, self.xi_mean, self.n_loop, self.m_alive)


@dataclass(frozen=True)
class ConvergencePlan:
    eps_bin: float
    eps_conv: float

    @property
    def m_min(self) -> int:
        return min_agents(self.eps_bin, self.eps_conv)


def xi_noise_floor(m: int, n_rec: int) -> float:
    """Expected Hellinger distance between the target and an exact m-agent
    sample of it: sqrt((n_rec - 1) / (8 m)), floored at the 1/m quantization
    scale. Below this level residual error is sampling noise, not signal."""
    if m < 1 or n_rec < 1:
        raise ValueError("m and n_rec must be positive")
    return max(((n_rec - 1) / (8.0 * m)) ** 0.5, xi_quantization_floor(m))


def min_agents(eps_bin: float, eps_conv: float) -> int:
    """Smallest swarm whose per-bin density error exceeds eps_bin with
    probability at most eps_conv (Chebyshev bound)."""
    if eps_bin <= 0 or eps_conv <= 0:
        raise ValueError("tolerances must be positive")
    return max(1, ceil(1.0 / (4.0 * eps_bin**2 * eps_conv)))


def lln_check(pi: np.ndarray, m: int, n_trials: int, eps_bin: float,
              seed: int = 0) -> np.ndarray:
    """Empirical per-bin rate of |S/m - pi| > eps_bin over i.i.d. trials."""
    if m < 1 or n_trials < 1:
        raise ValueError("m and n_trials must be positive")
    pi = np.asarray(pi, dtype=float)
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(m, pi, size=n_trials)
    return (np.abs(counts / m - pi[None, :]) > eps_bin).mean(axis=0)


# ---------------------------------------------------------------------------
# Scenario context: everything derivable from (config, formation, grid) once.

class _Context:
    def __init__(self, config: ScenarioConfig, formation: Formation, grid: Grid):
        self.config = config
        self.grid = grid
        self.formation = formation
        self.pi = formation.pi
        self.rec = formation.recurrent
        self.in_pi = np.zeros(grid.n_cell, dtype=bool)
        self.in_pi[self.rec] = True
        A = reachability_constraint(grid, config.motion_range)
        self.constraint = ConstraintMatrix(A, formation)
        self.A = self.constraint.A
        self.C = escape_matrix(self.constraint, formation,
                               set(self.constraint.trapping),
                               self.constraint.escape)
        self.adapter = OrbitGridAdapter(grid) if config.orbit else None
        if self.adapter is None:
            # Guidance weight rows for every admissible reference bin,
            # indexed by position within the recurrent set.
            d = grid.distance_matrix[self.rec].astype(float)
            self.alpha_tab = 1.0 - d / (d.max(axis=1, keepdims=True) + 1.0)
            self.pialpha_tab = self.pi[None, :] * self.alpha_tab
            self.pa_tab = self.alpha_tab @ self.pi
        self.sqrt_pi = np.sqrt(self.pi)

    def alpha_rows_at(self, k: int, c_idx: np.ndarray):
        """(alpha rows, pi*alpha rows, pi@alpha) for reference-bin positions."""
        if self.adapter is None:
            return (self.alpha_tab[c_idx], self.pialpha_tab[c_idx],
                    self.pa_tab[c_idx])
        uniq, inverse = np.unique(c_idx, return_inverse=True)
        rows = np.stack([orbit_alpha_vector(self.adapter, int(self.rec[u]), k)
                         for u in uniq])
        alpha = rows[inverse]
        pialpha = self.pi[None, :] * alpha
        return alpha, pialpha, alpha @ self.pi


def build_context(config: ScenarioConfig) -> tuple[_Context, Grid, Formation]:
    grid = Grid(width=config.width, height=config.height)
    formation = load_formation(config.formation_text, grid)
    return _Context(config, formation, grid), grid, formation


_CONTEXT_CACHE: dict[tuple[int, int, int], _Context] = {}


def _context_for(config: ScenarioConfig, formation: Formation, grid: Grid) -> _Context:
    key = (id(config), id(formation), id(grid))
    ctx = _CONTEXT_CACHE.get(key)
    if ctx is None or ctx.config is not config:
        ctx = _Context(config, formation, grid)
        if len(_CONTEXT_CACHE) > 32:
            _CONTEXT_CACHE.clear()
        _CONTEXT_CACHE[key] = ctx
    return ctx


# ---------------------------------------------------------------------------
# Swarm construction and the per-step cycle.

def init_swarm(config: ScenarioConfig, seed: int,
               initial_density: np.ndarray | None = None) -> SwarmState:
    """Agents placed i.i.d. uniform over all bins (or from a given density),
    with one private RNG stream per agent."""
    grid = Grid(width=config.width, height=config.height)
    formation = load_formation(config.formation_text, grid)
    ss = np.random.SeedSequence(seed)
    init_ss, _damage_ss, agents_ss = ss.spawn(3)
    init_rng = np.random.default_rng(init_ss)
    if initial_density is None:
        bins = init_rng.integers(0, grid.n_cell, size=config.m)
    else:
        p = np.asarray(initial_density, dtype=float)
        bins = init_rng.choice(grid.n_cell, size=config.m, p=p / p.sum())
    ref = config.fixed_reference_bin
    if config.algorithm == "homogeneous-baseline" and ref is None:
        ref = int(formation.recurrent[init_rng.integers(formation.n_rec)])
    rngs = [np.random.default_rng(s) for s in agents_ss.spawn(config.m)]
    w = config.snap_window
    return SwarmState(
        k=0,
        bins=bins.astype(np.int64),
        cumulative_transitions=np.zeros(config.m, dtype=np.int64),
        xi_history=np.zeros((config.m, w)),
        xi_count=np.zeros(config.m, dtype=np.int64),
        rngs=rngs,
        n_cell=grid.n_cell,
        baseline_ref_bin=ref,
    )


def damage_rng(config: ScenarioConfig, seed: int) -> np.random.Generator:
    """The dedicated removal stream paired with init_swarm(config, seed)."""
    _, dmg_ss, _ = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(dmg_ss)


def _consensus_stage(ctx: _Context, swarm: SwarmState, counts: np.ndarray):
    """Per-agent tuning parameter and consensus diagnostics for this step."""
    config = ctx.config
    m = swarm.m
    pi = ctx.pi

    if config.oracle_consensus:
        xi = hellinger(pi, counts / m)
        return np.full(m, xi), 0.0, 0, xi

    occupied = np.flatnonzero(counts)
    gc = BinGroupedConsensus(occupied, counts[occupied],
                             ctx.grid.distance_matrix, config.comm_radius)
    if not gc.connected:
        if config.on_disconnect == "error":
            bins_by_comp = [[int(occupied[g]) for g in comp] for comp in gc.components]
            raise GraphDisconnectedError(bins_by_comp)
        gc = gc.make_complete()

    if config.n_loop is not None:
        n_loop = config.n_loop
    elif m <= SIGMA_EXACT_MAX_M:
        eps = config.eps_cons if config.eps_cons is not None else 1.0 / m
        n_loop = required_loops(gc.sigma(), m, eps)
    else:
        n_loop = DEFAULT_N_LOOP_LARGE

    est = gc.run(n_loop)  # (b, b): estimate of group g over occupied bin h
    occ_counts = counts[occupied]
    sq_pi_occ = ctx.sqrt_pi[occupied]
    missing = max(0.0, 1.0 - float(pi[occupied].sum()))
    xi_groups = np.sqrt(0.5 * (((np.sqrt(est) - sq_pi_occ[None, :]) ** 2).sum(axis=1)
                               + missing))
    xi_groups = np.clip(xi_groups, 0.0, 1.0)
    theta_groups = np.abs(est - occ_counts[None, :] / m).sum(axis=1)
    consensus_norm = float(np.sqrt((occ_counts * theta_groups**2).sum()))

    inv = np.full(ctx.grid.n_cell, -1, dtype=np.int64)
    inv[occupied] = np.arange(occupied.size)
    xi_agents = xi_groups[inv[swarm.bins]]
    hd_estimate_mean = float((occ_counts * xi_groups).sum() / m)
    return xi_agents, consensus_norm, n_loop, hd_estimate_mean


def _advance(swarm: SwarmState, config: ScenarioConfig, formation: Formation,
             grid: Grid, homogeneous: bool) -> tuple[SwarmState, StepMetrics]:
    ctx = _context_for(config, formation, grid)
    m = swarm.m
    bins = swarm.bins
    counts = np.bincount(bins, minlength=ctx.grid.n_cell)

    if homogeneous:
        xi_agents = np.ones(m)
        consensus_norm, n_loop, hd_estimate_mean = float("nan"), 0, float("nan")
    else:
        xi_agents, consensus_norm, n_loop, hd_estimate_mean = \
            _consensus_stage(ctx, swarm, counts)

    # Identity snap: once an agent's tuning parameter has dropped to the
    # finite-swarm noise floor and leveled out over the history window, it
    # uses the identity matrix (effective xi = 0) instead of chasing
    # irreducible sampling noise. Thresholds scale with the floor, which is
    # the expected Hellinger distance of an exact m-agent sample of the
    # target from the target itself (plus the 1/m quantization floor).
    xi_hist = swarm.xi_history.copy()
    xi_count = swarm.xi_count.copy()
    if homogeneous:
        snap = np.zeros(m, dtype=bool)
    else:
        floor = xi_noise_floor(m, ctx.formation.n_rec)
        xi_count[xi_agents > config.snap_reset_factor * floor] = 0
        xi_hist[:, 1:] = xi_hist[:, :-1]
        xi_hist[:, 0] = xi_agents
        xi_count = np.minimum(xi_count + 1, config.snap_window)
        full = xi_count >= config.snap_window
        leveled = (xi_hist.max(axis=1) - xi_hist.min(axis=1)
                   < config.snap_level_factor * floor)
        snap = (xi_agents < config.snap_xi_factor * floor) & full & leveled
        xi_agents = np.where(snap, 0.0, xi_agents)

    # Exactly two uniforms per agent per step (reference-bin pick and
    # inverse-CDF sample), drawn whether used or not so the private streams
    # stay aligned across algorithm variants.
    draws = np.empty((m, 2))
    for j, rng in enumerate(swarm.rngs):
        draws[j] = rng.random(2)
    u1, z = draws[:, 0], draws[:, 1]

    next_bins = bins.copy()
    in_pi = ctx.in_pi[bins]

    # Transient and trapped agents follow the escape matrix.
    for j in np.flatnonzero(~in_pi):
        next_bins[j] = select_transition(ctx.C[bins[j]], z[j])

    movers = np.flatnonzero(in_pi & ~snap & (xi_agents > 0.0))
    if movers.size:
        if homogeneous or config.fixed_reference_bin is not None:
            ref = (config.fixed_reference_bin if config.fixed_reference_bin is not None
                   else swarm.baseline_ref_bin)
            c_pos = np.flatnonzero(ctx.rec == ref)
            if c_pos.size == 0:
                raise EngineError(f"reference bin {ref} is not recurrent")
            c_idx = np.full(movers.size, c_pos[0], dtype=np.int64)
        else:
            c_idx = np.minimum((u1[movers] * ctx.rec.size).astype(np.int64),
                               ctx.rec.size - 1)
        alpha, pialpha, pa = ctx.alpha_rows_at(swarm.k, c_idx)
        own = bins[movers]
        ar = np.arange(movers.size)
        alpha_own = alpha[ar, own]
        xi_m = xi_agents[movers]
        rows = pialpha * (xi_m * alpha_own / pa)[:, None]
        rows[ar, own] += 1.0 - xi_m * alpha_own
        # Motion constraints: fold blocked mass onto the diagonal.
        allowed = ctx.A[own]
        folded = np.where(allowed, 0.0, rows).sum(axis=1)
        rows *= allowed
        rows[ar, own] += folded
        cdf = np.cumsum(rows, axis=1)
        dest = (cdf <= z[movers, None]).sum(axis=1)
        overflow = dest >= ctx.grid.n_cell
        for r in np.flatnonzero(overflow):
            dest[r] = np.flatnonzero(rows[r] > 0)[-1]
        next_bins[movers] = dest

    # Recurrent bins are absorbing: the matrix family puts no mass on
    # transient columns, so an agent inside the formation support stays there.
    if not ctx.in_pi[next_bins[in_pi]].all():
        raise EngineError("invariant violation: agent left the recurrent set")

    moved = next_bins != bins
    cumulative = swarm.cumulative_transitions + moved
    new_counts = np.bincount(next_bins, minlength=ctx.grid.n_cell)
    metrics = StepMetrics(
        step=swarm.k + 1,
        hd_true=hellinger(ctx.pi, new_counts / m),
        hd_estimate_mean=hd_estimate_mean,
        transitions=int(moved.sum()),
        cumulative_transitions_mean=float(cumulative.mean()),
        consensus_norm=consensus_norm,
        xi_mean=float(xi_agents.mean()),
        n_loop=n_loop,
        m_alive=m,
    )
    new_state = SwarmState(
        k=swarm.k + 1,
        bins=next_bins,
        cumulative_transitions=cumulative,
        xi_history=xi_hist,
        xi_count=xi_count,
        rngs=swarm.rngs,
        n_cell=swarm.n_cell,
        baseline_ref_bin=swarm.baseline_ref_bin,
    )
    return new_state, metrics


def step(swarm: SwarmState, config: ScenarioConfig, formation: Formation,
         grid: Grid) -> tuple[SwarmState, StepMetrics]:
    """One synchronous guidance cycle for every agent."""
    return _advance(swarm, config, formation, grid, homogeneous=False)


def baseline_step(swarm: SwarmState, config: ScenarioConfig, formation: Formation,
                  grid: Grid) -> tuple[SwarmState, StepMetrics]:
    """Homogeneous variant: xi fixed at 1, one global reference bin, no
    consensus and no identity snap; constraints and escape stay identical."""
    return _advance(swarm, config, formation, grid, homogeneous=True)


def inject_damage(swarm: SwarmState, region: np.ndarray, fraction: float,
                  rng: np.random.Generator | None = None) -> SwarmState:
    """Independently remove agents in the region with the given probability."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    if rng is None:
        rng = np.random.default_rng()
    region_mask = np.zeros(swarm.n_cell, dtype=bool)
    region_mask[np.asarray(region, dtype=np.int64)] = True
    in_region = region_mask[swarm.bins]
    removed = in_region & (rng.random(swarm.m) < fraction)
    keep = ~removed
    if not keep.any():
        raise EngineError("damage removed every agent")
    return SwarmState(
        k=swarm.k,
        bins=swarm.bins[keep],
        cumulative_transitions=swarm.cumulative_transitions[keep],
        xi_history=swarm.xi_history[keep],
        xi_count=swarm.xi_count[keep],
        rngs=[r for r, kept in zip(swarm.rngs, keep) if kept],
        n_cell=swarm.n_cell,
        baseline_ref_bin=swarm.baseline_ref_bin,
    )


@dataclass
class RunResult:
    metrics: list[StepMetrics]
    final: SwarmState
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)

    def metric_array(self) -> np.ndarray:
        return np.array([mt.as_row() for mt in self.metrics], dtype=float)


def run(config: ScenarioConfig, seed: int | None = None) -> RunResult:
    """Full deterministic run: steps+1 metric rows (row 0 is the initial
    state) and optional density snapshots at configured steps."""
    seed = config.seed if seed is None else seed
    ctx, grid, formation = build_context(config)
    _CONTEXT_CACHE[(id(config), id(formation), id(grid))] = ctx
    swarm = init_swarm(config, seed)
    dmg_rng = damage_rng(config, seed)
    homogeneous = config.algorithm == "homogeneous-baseline"

    metrics = [StepMetrics(
        step=0,
        hd_true=hellinger(formation.pi, swarm.true_distribution),
        hd_estimate_mean=float("nan"),
        transitions=0,
        cumulative_transitions_mean=0.0,
        consensus_norm=float("nan"),
        xi_mean=float("nan"),
        n_loop=0,
        m_alive=swarm.m,
    )]
    snapshots = {}
    if 0 in config.snapshot_steps:
        snapshots[0] = swarm.counts()

    outside_steps = np.zeros(swarm.m, dtype=np.int64)
    for k in range(1, config.steps + 1):
        swarm, mt = _advance(swarm, config, formation, grid, homogeneous)
        metrics.append(mt)
        # Transient-exit bound: escape takes at most n_cell consecutive steps.
        outside = ~ctx.in_pi[swarm.bins]
        outside_steps = np.where(outside, outside_steps + 1, 0)
        if (outside_steps > grid.n_cell).any():
            raise EngineError("invariant violation: agent stuck outside the recurrent set")
        if k in config.snapshot_steps:
            snapshots[k] = swarm.counts()
        for event in config.damage:
            if event.step == k:
                swarm = inject_damage(swarm, event.region_bins(grid),
                                      event.fraction, dmg_rng)
                outside_steps = np.zeros(swarm.m, dtype=np.int64)
    return RunResult(metrics=metrics, final=swarm, snapshots=snapshots)


@dataclass
class MonteCarloResult:
    columns: tuple[str, ...]
    runs: list[np.ndarray]          # per-run (steps+1, n_columns) arrays
    mean: np.ndarray
    sigma3: np.ndarray

    @property
    def n_runs(self) -> int:
        return len(self.runs)


def monte_carlo_seeds(base_seed: int, n_runs: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(base_seed).generate_state(n_runs)]


def run_monte_carlo(config: ScenarioConfig, n_runs: int) -> MonteCarloResult:
    """Independent reproducible runs with derived seeds, aggregated by step."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    rows = []
    for s in monte_carlo_seeds(config.seed, n_runs):
        rows.append(run(config, seed=s).metric_array())
    stacked = np.stack(rows)
    return MonteCarloResult(
        columns=METRIC_COLUMNS,
        runs=rows,
        mean=stacked.mean(axis=0),
        sigma3=3.0 * stacked.std(axis=0),
    )
