"""Command-line front end.

Experiments are described by INI config files with four sections --
``[lattice]``, ``[distribution]``, ``[params]``, ``[experiment]`` -- and
dispatched through subcommands.  Everything the library computes is written
as versioned CSV so downstream tooling never imports this package.

Exit codes: 0 success, 2 config/usage error, 3 invariant violation detected
during a run (an audit or verification failed; a report path is printed).
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import math
import os
import sys

import numpy as np

from . import _rng
from .energy import (EnergyFn, audit_run, consensus_bound_abs,
                     consensus_bound_optimal)
from .engine import ModelParams, simulate
from .experiments import (ExperimentConfig, RunResult, block_experiment,
                          classify_outcome, percolation_experiment,
                          run_results_to_csv, theta_sweep)
from .initial import (Affine, Beta, Discrete, Pareto, Uniform, UnionUniform,
                      centered_pareto, sample_blocks, sample_iid,
                      theoretical_theta_c)
from .lattice import LatticeSpec, build_lattice
from .sad import backward_profile, reconstruct


class ConfigError(Exception):
    """Anything wrong with the config file or flag values (exit 2)."""


class InvariantViolation(Exception):
    """A run-time audit failed (exit 3)."""


# ===================================================================
# config file parsing and emission
# ===================================================================

_SECTIONS = ("lattice", "distribution", "params", "experiment")
_LATTICE_KEYS = ("sides", "periodic")
_PARAMS_KEYS = ("mu", "theta")
_EXPERIMENT_KEYS = ("replicas", "events_per_edge", "horizon", "p", "seed",
                    "jobs", "delta_conv", "quiet_fraction", "checkpoints")
_DIST_KEYS = {
    "uniform": ("lower", "upper"),
    "beta": ("alpha", "beta"),
    "discrete": ("atoms", "weights"),
    "union": ("intervals",),
    "pareto": ("shape", "scale"),
    "centered_pareto": ("shape", "scale"),
    "blocks": (),
}


def _parse_float(section: str, key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: not a number: {raw!r}") from None


def _parse_int(section: str, key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: not an integer: {raw!r}") from None


def _parse_bool(section: str, key: str, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"[{section}] {key}: not a boolean: {raw!r}")


def _parse_float_list(section: str, key: str, raw: str) -> tuple[float, ...]:
    items = [s for s in (part.strip() for part in raw.split(",")) if s]
    if not items:
        raise ConfigError(f"[{section}] {key}: empty list")
    return tuple(_parse_float(section, key, s) for s in items)


def _check_keys(section: str, present, allowed) -> None:
    unknown = sorted(set(present) - set(allowed))
    if unknown:
        raise ConfigError(f"[{section}] unknown key(s): {', '.join(unknown)}"
                          f" (allowed: {', '.join(allowed)})")


def _parse_distribution(items: dict):
    kind = items.get("kind")
    if kind is None:
        raise ConfigError("[distribution] missing required key: kind")
    if kind not in _DIST_KEYS:
        raise ConfigError(f"[distribution] unknown kind: {kind!r} "
                          f"(one of: {', '.join(sorted(_DIST_KEYS))})")
    _check_keys("distribution", items, ("kind",) + _DIST_KEYS[kind])

    def need(key):
        if key not in items:
            raise ConfigError(f"[distribution] kind={kind} needs key: {key}")
        return items[key]

    if kind == "blocks":
        return None
    if kind == "uniform":
        return Uniform(_parse_float("distribution", "lower", need("lower")),
                       _parse_float("distribution", "upper", need("upper")))
    if kind == "beta":
        return Beta(_parse_float("distribution", "alpha", need("alpha")),
                    _parse_float("distribution", "beta", need("beta")))
    if kind == "discrete":
        atoms = _parse_float_list("distribution", "atoms", need("atoms"))
        weights = _parse_float_list("distribution", "weights", need("weights"))
        return Discrete(atoms, weights)
    if kind == "union":
        # intervals look like "0:0.125, 0.875:1"
        pairs = []
        for part in need("intervals").split(","):
            part = part.strip()
            if not part:
                continue
            bits = part.split(":")
            if len(bits) != 2:
                raise ConfigError(f"[distribution] intervals: bad pair {part!r}"
                                  " (want lo:hi)")
            pairs.append((_parse_float("distribution", "intervals", bits[0]),
                          _parse_float("distribution", "intervals", bits[1])))
        if not pairs:
            raise ConfigError("[distribution] intervals: empty list")
        return UnionUniform(tuple(pairs))
    shape = _parse_float("distribution", "shape", need("shape"))
    scale = _parse_float("distribution", "scale", items.get("scale", "1.0"))
    if kind == "pareto":
        return Pareto(shape, scale)
    return centered_pareto(shape, scale)


def parse_config(path: str) -> ExperimentConfig:
    """Read an INI experiment description into an ExperimentConfig."""
    cp = configparser.ConfigParser(interpolation=None,
                                   inline_comment_prefixes=("#", ";"))
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh, source=path)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from None

    unknown = sorted(set(cp.sections()) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}"
                          f" (allowed: {', '.join(_SECTIONS)})")
    if "lattice" not in cp:
        raise ConfigError("missing required section: [lattice]")

    lat = dict(cp["lattice"])
    _check_keys("lattice", lat, _LATTICE_KEYS)
    if "sides" not in lat:
        raise ConfigError("[lattice] missing required key: sides")
    sides = tuple(_parse_int("lattice", "sides", s.strip())
                  for s in lat["sides"].split(",") if s.strip())
    periodic = _parse_bool("lattice", "periodic", lat.get("periodic", "true"))

    distribution = Uniform(0.0, 1.0)
    if "distribution" in cp:
        distribution = _parse_distribution(dict(cp["distribution"]))

    mu, thetas = 0.5, (0.5,)
    if "params" in cp:
        par = dict(cp["params"])
        _check_keys("params", par, _PARAMS_KEYS)
        if "mu" in par:
            mu = _parse_float("params", "mu", par["mu"])
        if "theta" in par:
            thetas = _parse_float_list("params", "theta", par["theta"])

    kwargs = {}
    if "experiment" in cp:
        exp = dict(cp["experiment"])
        _check_keys("experiment", exp, _EXPERIMENT_KEYS)
        for key in ("replicas", "seed", "jobs", "checkpoints"):
            if key in exp:
                kwargs[key] = _parse_int("experiment", key, exp[key])
        for key in ("events_per_edge", "horizon", "p", "delta_conv",
                    "quiet_fraction"):
            if key in exp:
                kwargs[key] = _parse_float("experiment", key, exp[key])

    config = ExperimentConfig(lattice=LatticeSpec(sides, periodic=periodic),
                              distribution=distribution, mu=mu,
                              thetas=thetas, **kwargs)
    try:
        config.validate()
        if config.distribution is not None:
            config.distribution.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return config


def _emit_distribution(spec) -> list[str]:
    if spec is None:
        return ["kind = blocks"]
    if isinstance(spec, Uniform):
        return ["kind = uniform", f"lower = {spec.lower!r}",
                f"upper = {spec.upper!r}"]
    if isinstance(spec, Beta):
        return ["kind = beta", f"alpha = {spec.alpha!r}",
                f"beta = {spec.beta!r}"]
    if isinstance(spec, Discrete):
        return ["kind = discrete",
                "atoms = " + ", ".join(repr(a) for a in spec.atoms),
                "weights = " + ", ".join(repr(w) for w in spec.weights)]
    if isinstance(spec, UnionUniform):
        return ["kind = union",
                "intervals = " + ", ".join(f"{lo!r}:{hi!r}"
                                           for lo, hi in spec.intervals)]
    if isinstance(spec, Pareto):
        return ["kind = pareto", f"shape = {spec.shape!r}",
                f"scale = {spec.scale!r}"]
    if isinstance(spec, Affine) and isinstance(spec.base, Pareto):
        expected = centered_pareto(spec.base.shape, spec.base.scale)
        if spec == expected:
            return ["kind = centered_pareto", f"shape = {spec.base.shape!r}",
                    f"scale = {spec.base.scale!r}"]
    raise ConfigError(f"distribution not expressible in a config file: {spec!r}")


def emit_config(config: ExperimentConfig) -> str:
    """Render a config back to canonical INI text (parse -> emit -> parse
    is the identity)."""
    lines = ["[lattice]",
             "sides = " + ", ".join(str(s) for s in config.lattice.sides),
             f"periodic = {'true' if config.lattice.periodic else 'false'}",
             "", "[distribution]"]
    lines += _emit_distribution(config.distribution)
    lines += ["", "[params]", f"mu = {config.mu!r}",
              "theta = " + ", ".join(repr(t) for t in config.thetas),
              "", "[experiment]",
              f"replicas = {config.replicas}",
              f"events_per_edge = {config.events_per_edge!r}"]
    if config.horizon is not None:
        lines.append(f"horizon = {config.horizon!r}")
    if config.p is not None:
        lines.append(f"p = {config.p!r}")
    lines += [f"seed = {config.seed}",
              f"jobs = {config.jobs}",
              f"delta_conv = {config.delta_conv!r}",
              f"quiet_fraction = {config.quiet_fraction!r}",
              f"checkpoints = {config.checkpoints}"]
    return "\n".join(lines) + "\n"


# ===================================================================
# subcommands
# ===================================================================

def _apply_overrides(config: ExperimentConfig,
                     args: argparse.Namespace) -> ExperimentConfig:
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.replicas is not None:
        updates["replicas"] = args.replicas
    if args.jobs is not None:
        updates["jobs"] = args.jobs
    if args.theta is not None:
        updates["thetas"] = _parse_float_list("flags", "--theta", args.theta)
    if args.p is not None:
        updates["p"] = args.p
    if args.horizon is not None:
        updates["horizon"] = args.horizon
    if updates:
        config = dataclasses.replace(config, **updates)
    try:
        config.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return config


def _out(args: argparse.Namespace, name: str) -> str:
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def _initial_field(config: ExperimentConfig, graph, stream: int = 0):
    if config.distribution is None:
        return sample_blocks(graph, config.seed, stream=stream).values
    return sample_iid(config.distribution, graph, config.seed, stream=stream)


def cmd_simulate(config: ExperimentConfig, args: argparse.Namespace) -> int:
    graph = build_lattice(config.lattice)
    initial = _initial_field(config, graph)
    params = ModelParams(config.mu, config.thetas[0])
    run = simulate(graph, initial, params, config.horizon_value, config.seed)
    trace_path = _out(args, "trace.csv")
    run.log.to_csv(trace_path, graph=graph)

    outcome, blocked, max_gap, mean_dev = classify_outcome(
        run, params.theta, delta_conv=config.delta_conv,
        quiet_fraction=config.quiet_fraction)
    result = RunResult(
        replica=0, outcome=outcome, n_blocked=int(blocked.sum()),
        blocked_fraction=float(blocked.mean()) if blocked.size else 0.0,
        max_gap=max_gap, mean_abs_dev=mean_dev,
        blocked_degree=np.zeros(graph.n_vertices, dtype=np.int32),
        variance_samples=(np.array([0]), np.array([float(np.var(run.final))])),
        cluster_fraction=1.0)
    result_path = _out(args, "result.csv")
    run_results_to_csv([result], result_path, config.digest(), config.seed)
    print(f"wrote {trace_path} ({run.log.n_events} events, "
          f"{run.log.n_accepted} accepted)")
    print(f"wrote {result_path} ({outcome.kind.value})")

    audit = audit_run(run, EnergyFn.quadratic())
    if not audit.passed:
        report = _out(args, "audit-failure.txt")
        with open(report, "w", encoding="ascii") as fh:
            fh.write(f"energy={audit.energy} min_loss={audit.min_loss!r} "
                     f"max_global_drift={audit.max_global_drift!r} "
                     f"replay_mismatches={audit.replay_mismatches}\n")
        raise InvariantViolation(f"energy audit failed; report at {report}")
    return 0


def cmd_sweep(config: ExperimentConfig, args: argparse.Namespace) -> int:
    sweep = theta_sweep(config)
    path = _out(args, "sweep.csv")
    sweep.to_csv(path)
    for row in sweep.rows:
        print(f"theta={row.theta:g} blocked={row.blocked_replica_fraction:g} "
              f"strong={row.strong_fraction:g}")
    cross = "none" if sweep.crossing is None else f"{sweep.crossing:.6g}"
    print(f"crossing={cross} theta_c={sweep.theta_c:g}")
    print(f"wrote {path}")
    return 0


def cmd_percolate(config: ExperimentConfig, args: argparse.Namespace) -> int:
    if config.p is None:
        raise ConfigError("percolate needs p (config [experiment] or --p)")
    sweep = percolation_experiment(config)
    path = _out(args, "percolation.csv")
    sweep.to_csv(path)
    for row in sweep.rows:
        print(f"theta={row.theta:g} p={row.p:g} "
              f"blocked={row.blocked_replica_fraction:g}")
    print(f"wrote {path}")
    return 0


def cmd_blocks(config: ExperimentConfig, args: argparse.Namespace) -> int:
    try:
        report = block_experiment(config)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    path = _out(args, "blocks.csv")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# deffuant-blocks v1\n")
        fh.write(f"# config={config.digest()} seed={config.seed} "
                 f"theta={report.theta!r} n_events={report.n_events}\n")
        fh.write("replica,n_boundary_edges,boundary_acceptances,"
                 "flank_violations\n")
        for r in report.replicas:
            fh.write(f"{r.replica},{r.n_boundary_edges},"
                     f"{r.boundary_acceptances},{r.flank_violations}\n")
    print(f"wrote {path} (passed={report.passed})")
    if not report.passed:
        raise InvariantViolation(
            f"block flanks were disturbed; per-replica report at {path}")
    return 0


def cmd_sad_verify(config: ExperimentConfig, args: argparse.Namespace,
                   n_queries: int = 50, tolerance: float = 1e-10) -> int:
    if config.lattice.dimension != 1:
        raise ConfigError("sad-verify runs on 1-d lattices only")
    graph = build_lattice(config.lattice)
    initial = _initial_field(config, graph)
    params = ModelParams(config.mu, config.thetas[0])
    run = simulate(graph, initial, params, config.horizon_value, config.seed)
    gen = _rng.generator(config.seed, _rng.AUX, 0)
    path = _out(args, "sad.csv")
    worst = 0.0
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# deffuant-sadverify v1\n")
        fh.write(f"# config={config.digest()} seed={config.seed}\n")
        fh.write("vertex,time,predicted,actual,error\n")
        for _ in range(n_queries):
            v = int(gen.integers(graph.n_vertices))
            t = float(gen.uniform(0.0, run.horizon))
            predicted, actual = reconstruct(run, v, t)
            err = abs(predicted - actual)
            worst = max(worst, err)
            fh.write(f"{v},{t!r},{predicted!r},{actual!r},{err!r}\n")
    backward_profile(run, v, t).to_csv(_out(args, "profile.csv"))
    print(f"max reconstruction error = {worst:.3e} over {n_queries} queries")
    print(f"wrote {path}")
    if worst > tolerance:
        raise InvariantViolation(
            f"weight-profile reconstruction error {worst:.3e} exceeds "
            f"{tolerance:g}; report at {path}")
    return 0


def cmd_energy_audit(config: ExperimentConfig,
                     args: argparse.Namespace) -> int:
    graph = build_lattice(config.lattice)
    initial = _initial_field(config, graph)
    params = ModelParams(config.mu, config.thetas[0])
    run = simulate(graph, initial, params, config.horizon_value, config.seed)
    audits = [audit_run(run, EnergyFn.quadratic()),
              audit_run(run, EnergyFn.absolute())]
    path = _out(args, "energy-audit.csv")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# deffuant-energyaudit v1\n")
        fh.write(f"# config={config.digest()} seed={config.seed}\n")
        fh.write("energy,n_events,n_accepted,mass_drift,max_global_drift,"
                 "min_loss,max_pairwise_residual,replay_mismatches,passed\n")
        for a in audits:
            fh.write(f"{a.energy},{a.n_events},{a.n_accepted},"
                     f"{a.mass_drift!r},{a.max_global_drift!r},"
                     f"{a.min_loss!r},{a.max_pairwise_residual!r},"
                     f"{a.replay_mismatches},{int(a.passed)}\n")
    for a in audits:
        print(f"{a.energy}: drift={a.max_global_drift:.3e} "
              f"min_loss={a.min_loss:.3e} passed={a.passed}")
    print(f"wrote {path}")
    if not all(a.passed for a in audits):
        raise InvariantViolation(f"energy audit failed; report at {path}")
    return 0


def _dist_label(spec) -> str:
    if spec is None:
        return "blocks"
    text = repr(spec)
    return text.replace(", ", ";").replace(",", ";")


def cmd_bounds(config: ExperimentConfig, args: argparse.Namespace) -> int:
    spec = config.distribution
    if spec is None:
        raise ConfigError("bounds needs an iid distribution, not blocks")
    theta_c = theoretical_theta_c(spec)
    try:
        abs_bound = repr(consensus_bound_abs(spec))
    except ValueError:
        abs_bound = "nan"
    try:
        opt = consensus_bound_optimal(spec)
        opt_bound, bend, ratio = repr(opt.theta), repr(opt.bend), repr(opt.ratio)
    except ValueError:
        opt_bound = bend = ratio = "nan"
    header = "distribution,theta_c,bound_abs,bound_opt,bend,ratio"
    row = (f"{_dist_label(spec)},{theta_c!r},{abs_bound},{opt_bound},"
           f"{bend},{ratio}")
    print(header)
    print(row)
    path = _out(args, "bounds.csv")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# deffuant-bounds v1\n")
        fh.write(header + "\n")
        fh.write(row + "\n")
    print(f"wrote {path}")
    return 0


# ===================================================================
# entry point
# ===================================================================

_COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "percolate": cmd_percolate,
    "blocks": cmd_blocks,
    "sad-verify": cmd_sad_verify,
    "energy-audit": cmd_energy_audit,
    "bounds": cmd_bounds,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deffuant",
        description="Event-driven bounded-confidence dynamics on lattices.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cp = sub.add_parser(name)
        cp.add_argument("--config", required=True,
                        help="INI experiment description")
        cp.add_argument("--seed", type=int, default=None)
        cp.add_argument("--replicas", type=int, default=None)
        cp.add_argument("--jobs", type=int, default=None)
        cp.add_argument("--out-dir", default=".")
        cp.add_argument("--theta", default=None,
                        help="comma-separated threshold grid override")
        cp.add_argument("--p", type=float, default=None,
                        help="bond-percolation parameter override")
        cp.add_argument("--horizon", type=float, default=None)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _apply_overrides(parse_config(args.config), args)
        return _COMMANDS[args.command](config, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
