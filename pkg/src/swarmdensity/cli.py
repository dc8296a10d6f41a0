"""Command-line front end.

Subcommands: run, monte-carlo, verify, plan, formation preview. Scenarios
are described by INI-style `key = value` config files; every command writes
a manifest naming its outputs, and metrics go to CSV with a fixed column
schema. Density snapshots are binary PGM images (one pixel per bin).

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .consensus import (
    GraphDisconnectedError,
    disagreement,
    linop_round,
    metropolis_weights,
    required_loops,
    second_singular_value,
    CommGraph,
)
from .engine import (
    DamageEvent,
    EngineError,
    METRIC_COLUMNS,
    MonteCarloResult,
    RunResult,
    ScenarioConfig,
    lln_check,
    min_agents,
    run,
    run_monte_carlo,
)
from .grid import FormationError, Grid, load_formation
from .guidance import (
    apply_constraints,
    build_markov,
    chain_product,
    hellinger,
    max_row_l1_to,
    xi_quantization_floor,
)
from .orbit import OrbitGridAdapter


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# Config parsing. Unknown sections or keys are rejected, never ignored.

_SCHEMA = {
    "scenario": {"width", "height", "formation", "agents", "steps",
                 "algorithm", "seed"},
    "motion": {"range"},
    "consensus": {"radius", "eps", "loops", "on_disconnect", "oracle",
                  "reference_bin"},
    "damage": {"step", "fraction", "rows", "cols"},
    "output": {"snapshots", "orbit"},
}
_REQUIRED = {"scenario": {"width", "height", "formation", "agents", "steps"}}


def _parse_span(value: str, key: str) -> tuple[int, int]:
    try:
        lo, hi = value.split(":")
        return int(lo), int(hi)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected 'start:stop', got {value!r}") from exc


def _parse_bool(value: str, key: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def load_config(path: Path, overrides: list[str] = ()) -> ScenarioConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")

    for ov in overrides:
        try:
            dotted, value = ov.split("=", 1)
            section, key = dotted.strip().split(".", 1)
        except ValueError as exc:
            raise ConfigError(f"--override expects section.key=value, got {ov!r}") from exc
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key.strip(), value.strip())

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
    for section, keys in _REQUIRED.items():
        if not parser.has_section(section):
            raise ConfigError(f"missing config section [{section}]")
        for key in keys:
            if key not in parser[section]:
                raise ConfigError(f"missing config key {section}.{key}")

    def get(section, key, cast, default=None):
        if not parser.has_section(section) or key not in parser[section]:
            return default
        raw = parser[section][key]
        try:
            return cast(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from exc

    formation_path = Path(get("scenario", "formation", str))
    if not formation_path.is_absolute():
        formation_path = path.parent / formation_path
    if not formation_path.exists():
        raise ConfigError(f"formation file not found: {formation_path}")
    formation_text = formation_path.read_text()

    damage = ()
    if parser.has_section("damage"):
        for key in ("step", "fraction", "rows", "cols"):
            if key not in parser["damage"]:
                raise ConfigError(f"missing config key damage.{key}")
        r0, r1 = _parse_span(parser["damage"]["rows"], "damage.rows")
        c0, c1 = _parse_span(parser["damage"]["cols"], "damage.cols")
        damage = (DamageEvent(
            step=get("damage", "step", int),
            fraction=get("damage", "fraction", float),
            row0=r0, row1=r1, col0=c0, col1=c1,
        ),)

    snapshots = ()
    snap_raw = get("output", "snapshots", str)
    if snap_raw:
        try:
            snapshots = tuple(int(s) for s in snap_raw.split(",") if s.strip())
        except ValueError as exc:
            raise ConfigError(f"bad value for output.snapshots: {snap_raw!r}") from exc

    oracle = get("consensus", "oracle", str)
    on_disc = get("consensus", "on_disconnect", str, "error")
    try:
        return ScenarioConfig(
            width=get("scenario", "width", int),
            height=get("scenario", "height", int),
            formation_text=formation_text,
            m=get("scenario", "agents", int),
            steps=get("scenario", "steps", int),
            algorithm=get("scenario", "algorithm", str, "psg-imc"),
            seed=get("scenario", "seed", int, 0),
            motion_range=get("motion", "range", int),
            comm_radius=get("consensus", "radius", float),
            eps_cons=get("consensus", "eps", float),
            n_loop=get("consensus", "loops", int),
            on_disconnect=on_disc,
            oracle_consensus=_parse_bool(oracle, "consensus.oracle") if oracle else False,
            fixed_reference_bin=get("consensus", "reference_bin", int),
            damage=damage,
            orbit=_parse_bool(get("output", "orbit", str, "false"), "output.orbit"),
            snapshot_steps=snapshots,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Output writers.

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".12g")


def write_metrics_csv(path: Path, rows: list[tuple]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(METRIC_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_aggregate_csv(path: Path, result: MonteCarloResult) -> None:
    cols = ["step"]
    for name in METRIC_COLUMNS[1:]:
        cols += [f"{name}_mean", f"{name}_3sigma"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(result.mean.shape[0]):
            out = [str(int(result.mean[i, 0]))]
            for j in range(1, len(METRIC_COLUMNS)):
                out += [_fmt(result.mean[i, j]), _fmt(result.sigma3[i, j])]
            fh.write(",".join(out) + "\n")


def write_pgm(path: Path, counts: np.ndarray, grid: Grid) -> None:
    """Binary P5 image, one 8-bit pixel per bin, scaled to the max density."""
    img = counts.reshape(grid.height, grid.width).astype(float)
    peak = img.max()
    pixels = np.zeros_like(img, dtype=np.uint8) if peak == 0 else \
        np.round(255.0 * img / peak).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{grid.width} {grid.height}\n255\n".encode())
        fh.write(pixels.tobytes())


def write_orbit_scatter(path: Path, counts: np.ndarray, grid: Grid, k: int) -> None:
    pos = OrbitGridAdapter(grid).centroids_at(k)
    dens = counts / max(1, counts.sum())
    with open(path, "w") as fh:
        fh.write("kx,ky,density\n")
        for i in range(grid.n_cell):
            fh.write(f"{_fmt(pos[i, 0])},{_fmt(pos[i, 1])},{_fmt(dens[i])}\n")


def _config_echo(config: ScenarioConfig) -> dict:
    d = {f.name: getattr(config, f.name)
         for f in config.__dataclass_fields__.values()}
    d["damage"] = [{k: getattr(e, k) for k in
                    ("step", "fraction", "row0", "row1", "col0", "col1")}
                   for e in config.damage]
    d["snapshot_steps"] = list(config.snapshot_steps)
    return d


def write_manifest(path: Path, config: ScenarioConfig, seeds: list[int],
                   outputs: list[str], status: str) -> None:
    manifest = {
        "version": __version__,
        "status": status,
        "seeds": seeds,
        "config": _config_echo(config),
        "outputs": outputs,
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Commands.

def _emit_snapshots(result: RunResult, config: ScenarioConfig,
                    out_dir: Path) -> list[str]:
    grid = Grid(width=config.width, height=config.height)
    names = []
    for k, counts in sorted(result.snapshots.items()):
        name = f"snap_{k}.pgm"
        write_pgm(out_dir / name, counts, grid)
        names.append(name)
        if config.orbit:
            sname = f"scatter_{k}.csv"
            write_orbit_scatter(out_dir / sname, counts, grid, k)
            names.append(sname)
    return names


def cmd_run(args) -> int:
    config = load_config(Path(args.config), args.override)
    if args.seed is not None:
        config = _with_seed(config, args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.json"
    outputs = ["metrics.csv"] + [f"snap_{k}.pgm" for k in config.snapshot_steps]
    write_manifest(manifest_path, config, [config.seed], outputs, "running")
    try:
        result = run(config)
    except (GraphDisconnectedError, EngineError) as exc:
        write_manifest(manifest_path, config, [config.seed], [], "failed")
        print(f"error: {exc}", file=sys.stderr)
        return 2
    write_metrics_csv(out_dir / "metrics.csv", [mt.as_row() for mt in result.metrics])
    names = ["metrics.csv"] + _emit_snapshots(result, config, out_dir)
    write_manifest(manifest_path, config, [config.seed], names, "complete")
    print(f"wrote {out_dir / 'metrics.csv'} ({len(result.metrics)} rows, "
          f"final hd_true={result.metrics[-1].hd_true:.4f})")
    return 0


def cmd_monte_carlo(args) -> int:
    config = load_config(Path(args.config), args.override)
    if args.seed is not None:
        config = _with_seed(config, args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.json"
    write_manifest(manifest_path, config, [config.seed], ["aggregate.csv"], "running")
    try:
        result = run_monte_carlo(config, args.runs)
    except (GraphDisconnectedError, EngineError) as exc:
        write_manifest(manifest_path, config, [config.seed], [], "failed")
        print(f"error: {exc}", file=sys.stderr)
        return 2
    write_aggregate_csv(out_dir / "aggregate.csv", result)
    from .engine import monte_carlo_seeds
    write_manifest(manifest_path, config, monte_carlo_seeds(config.seed, args.runs),
                   ["aggregate.csv"], "complete")
    print(f"wrote {out_dir / 'aggregate.csv'} ({args.runs} runs)")
    return 0


def _with_seed(config: ScenarioConfig, seed: int) -> ScenarioConfig:
    import dataclasses
    return dataclasses.replace(config, seed=seed)


# --- verify suites ---------------------------------------------------------

def _random_triple(rng):
    n = int(rng.integers(3, 101))
    pi = np.zeros(n)
    n_rec = int(rng.integers(2, n + 1))
    rec = rng.choice(n, size=n_rec, replace=False)
    pi[rec] = rng.dirichlet(np.ones(n_rec))
    d = rng.random(n) * 5.0
    d[rng.integers(n)] = 0.0
    alpha = 1.0 - d / (d.max() + 1.0)
    xi = float(rng.random())
    return pi, xi, alpha


def _suite_stationarity(rng) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(200):
        pi, xi, alpha = _random_triple(rng)
        M = build_markov(pi, xi, alpha)
        worst = max(worst,
                    float(np.abs(pi @ M - pi).max()),
                    float(np.abs(M.sum(axis=1) - 1.0).max()))
        if M.min() < 0:
            return False, "negative transition probability"
    return worst <= 1e-12, f"max stationarity/row-sum residual {worst:.2e} over 200 triples"


def _suite_constraints(rng) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(200):
        pi, xi, alpha = _random_triple(rng)
        n = pi.size
        A = rng.random((n, n)) < 0.5
        A |= A.T
        np.fill_diagonal(A, True)
        Mt = apply_constraints(build_markov(pi, xi, alpha), A)
        off = Mt[~A]
        if off.size and np.abs(off).max() > 0:
            return False, "mass left on a blocked transition"
        worst = max(worst, float(np.abs(pi @ Mt - pi).max()))
    return worst <= 1e-12, f"max constrained stationarity residual {worst:.2e} over 200 cases"


def _suite_hellinger(rng) -> tuple[bool, str]:
    # Known-answer example: two empirical densities at the same l1 distance
    # from the target, but different Hellinger distances (mass appearing in
    # an empty bin costs far more than the same mass shifted between bins).
    pi = np.array([0.0, 0.0, 0.4, 0.0, 0.6])
    f1 = np.array([0.1, 0.0, 0.4, 0.0, 0.5])
    f2 = np.array([0.0, 0.0, 0.5, 0.0, 0.5])
    d1, d2 = hellinger(pi, f1), hellinger(pi, f2)
    l1_ok = (abs(np.abs(pi - f1).sum() - 0.2) < 1e-12
             and abs(np.abs(pi - f2).sum() - 0.2) < 1e-12)
    ok = l1_ok and abs(d1 - 0.2286) < 5e-5 and abs(d2 - 0.0712) < 5e-5
    return ok, f"D(pi,f1)={d1:.4f} (want 0.2286), D(pi,f2)={d2:.4f} (want 0.0712)"


def _suite_ergodicity(rng) -> tuple[bool, str]:
    pi = rng.dirichlet(np.ones(5))
    ximin = xi_quantization_floor(100)
    mats = []
    for _ in range(30):
        d = rng.random(5) * 3.0
        d[rng.integers(5)] = 0.0
        alpha = 1.0 - d / (d.max() + 1.0)
        xi = float(ximin + (1.0 - ximin) * rng.random())
        mats.append(build_markov(pi, xi, alpha))
    dists = []
    prod = mats[0]
    dists.append(max_row_l1_to(prod, pi))
    for M in mats[1:]:
        prod = prod @ M
        dists.append(max_row_l1_to(prod, pi))
    monotone = all(b <= a + 1e-12 for a, b in zip(dists, dists[1:]))
    return (dists[-1] < 1e-3 and monotone), \
        f"product-to-target trace {dists[0]:.3f} -> {dists[-1]:.2e}, monotone={monotone}"


def _suite_consensus(rng) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(20):
        m = int(rng.integers(5, 40))
        adj = np.zeros((m, m), dtype=bool)
        order = rng.permutation(m)
        for a, b in zip(order, order[1:]):   # random spanning path keeps it connected
            adj[a, b] = adj[b, a] = True
        extra = rng.random((m, m)) < 0.2
        adj |= extra | extra.T
        np.fill_diagonal(adj, False)
        P = metropolis_weights(CommGraph(m=m, adjacency=adj))
        est = rng.dirichlet(np.ones(6), size=m)
        n_loop = required_loops(second_singular_value(P), m, 1.0 / m)
        for _ in range(n_loop):
            est = linop_round(est, P)
        _, norm = disagreement(est, est.mean(axis=0))
        worst = max(worst, norm)
    return worst <= 1.0 / 5, f"worst disagreement norm {worst:.2e} after bounded loops"


_SUITES = {
    "stationarity": _suite_stationarity,
    "constraints": _suite_constraints,
    "hellinger": _suite_hellinger,
    "ergodicity": _suite_ergodicity,
    "consensus": _suite_consensus,
}


def cmd_verify(args) -> int:
    names = args.suite or list(_SUITES)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    all_ok = True
    for name in names:
        if name not in _SUITES:
            print(f"error: unknown suite {name!r} (have: {', '.join(_SUITES)})",
                  file=sys.stderr)
            return 1
        ok, detail = _SUITES[name](rng)
        all_ok &= ok
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return 0 if all_ok else 2


def cmd_plan(args) -> int:
    try:
        m_min = min_agents(args.eps_bin, args.eps_conv)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"m_min = {m_min}")
    if args.check:
        rng = np.random.default_rng(args.seed if args.seed is not None else 0)
        pi = rng.dirichlet(np.ones(25))
        rates = lln_check(pi, m_min, args.trials, args.eps_bin,
                          seed=int(rng.integers(2**32)))
        print(f"empirical violation rates over {args.trials} trials: "
              f"max {rates.max():.4f} (bound {args.eps_conv})")
    return 0


def cmd_formation(args) -> int:
    text = Path(args.path).read_text()
    formation = load_formation(text)
    n = formation.n_cell
    width = args.width
    if width is None:
        root = int(round(n ** 0.5))
        width = root if root * root == n else n
    height = n // width
    pi = formation.pi.reshape(height, width)
    peak = pi.max()
    shades = " .:-=+*#%@"
    for r in range(height):
        line = "".join(
            shades[min(len(shades) - 1, int(pi[r, c] / peak * (len(shades) - 1)))]
            if pi[r, c] > 0 else " "
            for c in range(width))
        print(line)
    print(f"{formation.n_rec} recurrent bins of {n}; peak density {peak:.4f}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="override the scenario seed")
    common.add_argument("--out-dir", default="out",
                        help="directory for output files")
    common.add_argument("--config", default="scenario.cfg",
                        help="scenario config file (INI-style key = value)")
    common.add_argument("--override", action="append", default=[],
                        metavar="SECTION.KEY=VALUE",
                        help="override a config entry (repeatable)")

    parser = argparse.ArgumentParser(
        prog="swarmdensity",
        description="Swarm density-guidance simulator: each agent follows a "
                    "time-varying Markov chain whose stationary distribution "
                    "is the target formation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="single deterministic run")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("monte-carlo", parents=[common],
                       help="independent runs with derived seeds, aggregated")
    p.add_argument("--runs", type=int, default=50)
    p.set_defaults(func=cmd_monte_carlo)

    p = sub.add_parser("verify", parents=[common],
                       help="numerical invariant suites")
    p.add_argument("suite", nargs="*",
                   help=f"suites to run (default all): {', '.join(_SUITES)}")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plan", parents=[common],
                       help="swarm sizing from per-bin accuracy targets")
    p.add_argument("eps_bin", type=float)
    p.add_argument("eps_conv", type=float)
    p.add_argument("--check", action="store_true",
                   help="also run the empirical sampling check")
    p.add_argument("--trials", type=int, default=2000)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("formation", parents=[common],
                       help="formation file utilities")
    p.add_argument("action", choices=["preview"])
    p.add_argument("path", help="formation raster file")
    p.add_argument("--width", type=int, default=None,
                   help="grid width (default: inferred square)")
    p.set_defaults(func=cmd_formation)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (GraphDisconnectedError, EngineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
