"""
Wavefunction Positivizer

Command-line entry point. Prepares ladder ground states, trains circuits that
make their sign structure positive, evaluates circuits and runs parameter
sweeps. Every command writes a manifest with checksums of its outputs.

Exit codes: 0 success, 1 unexpected failure, 2 usage error, 3 solver
failure, 4 numeric abort, 5 configuration error.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace

import numpy as np
from joblib import Parallel, delayed

from utils.circuit import Circuit, brick_wall
from utils.config import default_n_jobs, dump_config, load_config, setup_logging
from utils.exceptions import (
    CircuitError,
    ConfigError,
    DimensionError,
    NumericError,
    PositivizeError,
    SolverError,
)
from utils.ladder_model import MAX_SITES, LadderModel, chain_sublattice, ground_state
from utils.mps import MatrixProductState
from utils.optimizer import Checkpoint, angle_clusters, evaluate_circuit, train
from utils.run_io import RunManifest, SweepWriter, TraceWriter, read_trace, truncate_trace, write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_SOLVER = 3
EXIT_NUMERIC = 4
EXIT_CONFIG = 5

DEFAULT_MAX_RUNS = 64


class UsageError(Exception):
    pass


def _check_model_size(n):
    if n > MAX_SITES:
        raise UsageError(f"--n {n} exceeds the supported maximum of {MAX_SITES} sites")
    if n < 2 or n % 2:
        raise UsageError(f"--n must be even and at least 2, got {n}")


def _rz_angles(circuit):
    """Total z-rotation angle per site, or None if the circuit has other gates"""
    angles = np.zeros(circuit.n_sites)
    for gate in circuit.gates():
        if gate.kind != "rz":
            return None
        angles[gate.sites[0]] += gate.params[0]
    return angles


def cmd_groundstate(args):
    """
    Solve the ladder model and store its ground state as an MPS

    Args:
        args (argparse.Namespace): n, j1, j2, jr, out, cutoff, max_bond

    Returns:
        GroundStateResult: Solved ground state
    """
    _check_model_size(args.n)
    model = LadderModel(n_sites=args.n, j1=args.j1, j2=args.j2, jr=args.jr)
    manifest = RunManifest.start("groundstate", {"model": asdict(model), "cutoff": args.cutoff, "max_bond": args.max_bond})

    result = ground_state(model)
    psi = result.to_mps(cutoff=args.cutoff, max_bond=args.max_bond)
    path = args.out if args.out.endswith(".npz") else f"{args.out}.npz"
    psi.save(path, metadata=json.dumps(result.metadata()))

    manifest.add_output(path)
    manifest.finish(f"{path}.manifest.json")
    print(json.dumps(result.metadata(), indent=2))
    return result


def _load_state(path):
    if not os.path.exists(path):
        raise UsageError(f"State file {path} does not exist")
    return MatrixProductState.load(path)


def _resume_config(args, checkpoint):
    """
    Configuration of a resumed run

    The checkpoint's configuration is kept; only max_iters may change, from
    --max-iters or from the max_iters of --config.

    Args:
        args (argparse.Namespace): positivize arguments
        checkpoint (Checkpoint): Loaded checkpoint

    Returns:
        TrainConfig: Configuration the resumed run will use
    """
    config = checkpoint.config
    if args.config is not None:
        requested = load_config(args.config)
        if replace(requested, max_iters=config.max_iters) != config:
            raise UsageError(f"{args.config} differs from the checkpoint configuration; only max_iters may change on --resume")
        config = replace(config, max_iters=requested.max_iters)
    for flag, value, current in (
        ("--depth", args.depth, config.circuit.depth),
        ("--gate-kind", args.gate_kind, config.circuit.kind),
        ("--seed", args.seed, config.seed),
    ):
        if value is not None and value != current:
            raise UsageError(f"{flag} {value} differs from the checkpoint value {current}")
    if args.max_iters is not None:
        config = replace(config, max_iters=args.max_iters)
    if config.max_iters <= checkpoint.iteration:
        raise UsageError(
            f"Checkpoint is already at iteration {checkpoint.iteration}; raise --max-iters above it to continue"
        )
    return config


def cmd_positivize(args):
    """
    Train a circuit on a stored state and write trace, circuit and summary

    With --resume the run continues from the checkpoint in --out-dir under
    the checkpoint's configuration, and the trace and parameter snapshots
    are cut back to the checkpoint before new iterations are appended.

    Args:
        args (argparse.Namespace): state, depth, gate_kind, config, out_dir,
            max_iters, seed, resume

    Returns:
        dict: Summary record
    """
    psi_in = _load_state(args.state)
    os.makedirs(args.out_dir, exist_ok=True)
    trace_path = os.path.join(args.out_dir, "trace.jsonl")
    snapshot_path = os.path.join(args.out_dir, "parameters.jsonl")
    checkpoint_path = os.path.join(args.out_dir, "checkpoint.json")
    circuit_path = os.path.join(args.out_dir, "circuit.json")
    summary_path = os.path.join(args.out_dir, "summary.json")

    resume = None
    if args.resume:
        if not os.path.exists(checkpoint_path):
            raise UsageError(f"--resume given but {checkpoint_path} does not exist")
        resume = Checkpoint.load(checkpoint_path)
        config = _resume_config(args, resume)
        truncate_trace(trace_path, resume.iteration)
        truncate_trace(snapshot_path, resume.iteration, every=config.snapshot_every)
    else:
        overrides = {"circuit": {}}
        if args.depth is not None:
            overrides["circuit"]["depth"] = args.depth
        if args.gate_kind is not None:
            overrides["circuit"]["kind"] = args.gate_kind
        if args.max_iters is not None:
            overrides["max_iters"] = args.max_iters
        if args.seed is not None:
            overrides["seed"] = args.seed
        config = load_config(args.config, overrides)

    manifest = RunManifest.start("positivize", config.to_dict(), input_path=args.state)

    evaluation = dict(
        psi_in=psi_in,
        params=config.cost,
        cutoff=config.cutoff,
        max_bond=config.max_bond,
        rng_seed=config.seed,
        n_jobs=config.n_jobs,
        strict=config.strict_unitary,
    )
    initial = evaluate_circuit(brick_wall(psi_in.n_sites, 0), **evaluation)

    append = resume is not None
    with TraceWriter(trace_path, append=append) as writer, TraceWriter(snapshot_path, append=append) as snapshots:
        circuit, trace = train(
            psi_in,
            config,
            checkpoint_path=checkpoint_path,
            trace_writer=writer,
            resume=resume,
            snapshot_writer=snapshots,
        )
    circuit.save(circuit_path)

    history = read_trace(trace_path)
    final = evaluate_circuit(circuit, **evaluation)
    summary = {
        "config": config.to_dict(),
        "n_sites": psi_in.n_sites,
        "depth": circuit.depth,
        "n_params": circuit.n_params,
        "iterations": len(history),
        "resumed_from": resume.iteration if resume else None,
        "initial": initial,
        "final": final,
        "final_iteration": trace.final.to_dict() if trace.final else None,
        "truncation_total": float(history["truncation_error"].sum()),
    }
    angles = _rz_angles(circuit)
    if angles is not None and circuit.depth > 0:
        summary["angle_clusters"] = angle_clusters(angles, chain_sublattice(psi_in.n_sites))
    write_json(summary_path, summary)

    for path in (trace_path, snapshot_path, checkpoint_path, circuit_path, summary_path):
        manifest.add_output(path)
    manifest.finish(os.path.join(args.out_dir, "manifest.json"))
    logger.info(f"Final average sign {final['hard_avg_sign']:.6f} (initial {initial['hard_avg_sign']:.6f})")
    return summary


def cmd_eval(args):
    """
    Apply a stored circuit to a stored state and report sign metrics

    Args:
        args (argparse.Namespace): state, circuit, config, n_samples, seed, out

    Returns:
        dict: Metrics record
    """
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.n_samples is not None:
        config = replace(config, cost=replace(config.cost, n_samples=args.n_samples))
    psi_in = _load_state(args.state)
    try:
        circuit = Circuit.load(args.circuit)
    except OSError as e:
        raise UsageError(f"Cannot read circuit {args.circuit}: {e}")

    manifest = RunManifest.start("eval", config.to_dict(), input_path=args.state)
    metrics = evaluate_circuit(
        circuit,
        psi_in,
        config.cost,
        cutoff=config.cutoff,
        max_bond=config.max_bond,
        rng_seed=config.seed,
        n_jobs=config.n_jobs,
        strict=config.strict_unitary,
    )
    print(json.dumps(metrics, indent=2))
    write_json(args.out, {"metrics": metrics, "state": args.state, "circuit": args.circuit})
    manifest.add_output(args.out)
    manifest.finish(f"{args.out}.manifest.json")
    return metrics


def _sweep_run(n, jr, depth, seed, j1, j2, config):
    """One sweep point; failures become a row with status 'failed'"""
    row = {"jr": jr, "depth": depth, "n": n, "seed": seed}
    try:
        run_config = replace(config, seed=seed, circuit=replace(config.circuit, depth=depth))
        psi_in = ground_state(LadderModel(n_sites=n, j1=j1, j2=j2, jr=jr)).to_mps(config.cutoff, config.max_bond)
        circuit, trace = train(psi_in, run_config)
        final = evaluate_circuit(
            circuit, psi_in, run_config.cost, run_config.cutoff, run_config.max_bond, rng_seed=seed,
            strict=run_config.strict_unitary,
        )
        row.update(
            status="ok",
            final_sign=final["hard_avg_sign"],
            final_imag=final["imag_residual"],
            entropy=final["entropy"],
            truncation_error=final["truncation_error"],
            iterations=len(trace),
        )
    except Exception as e:
        logger.error(f"Sweep point n={n}, jr={jr}, depth={depth}, seed={seed} failed: {e}")
        row.update(status="failed", error=f"{type(e).__name__}: {e}")
    return row


def cmd_sweep(args):
    """
    Train over a grid of ring couplings, depths and sizes

    Rows are appended to the CSV as runs complete.

    Args:
        args (argparse.Namespace): jr, depth, n, seeds, j1, j2, config, out, n_jobs, max_runs

    Returns:
        list: Row dicts
    """
    if not (args.jr and args.depth and args.n):
        raise UsageError("The sweep grid is empty: give at least one value each for --jr, --depth and --n")
    for n in args.n:
        _check_model_size(n)

    config = load_config(args.config)
    seeds = args.seeds or [config.seed]
    grid = [(n, jr, depth, seed) for n in args.n for jr in args.jr for depth in args.depth for seed in seeds]
    if len(grid) > args.max_runs:
        raise UsageError(f"Sweep has {len(grid)} runs, above --max-runs {args.max_runs}")

    manifest = RunManifest.start("sweep", {"config": config.to_dict(), "grid": grid, "j1": args.j1, "j2": args.j2})
    writer = SweepWriter(args.out)
    n_jobs = args.n_jobs if args.n_jobs is not None else default_n_jobs()
    logger.info(f"Sweeping {len(grid)} runs on {n_jobs} worker(s)")

    rows = []
    results = Parallel(n_jobs=n_jobs, return_as="generator")(
        delayed(_sweep_run)(n, jr, depth, seed, args.j1, args.j2, config) for n, jr, depth, seed in grid
    )
    for row in results:
        writer.append(row)
        rows.append(row)

    manifest.add_output(args.out)
    manifest.finish(f"{args.out}.manifest.json")
    failed = sum(row["status"] != "ok" for row in rows)
    logger.info(f"Sweep finished: {len(rows) - failed} ok, {failed} failed")
    return rows


def cmd_print_config(args):
    text = dump_config(load_config(args.config))
    print(text)
    return text


def build_parser():
    parser = argparse.ArgumentParser(prog="positivize", description="Learn circuits that positivize wavefunction sign structures")
    parser.add_argument("--log-level", default=None, help="Logging level (default: POSITIVIZE_LOG_LEVEL or INFO)")
    commands = parser.add_subparsers(dest="command", required=True)

    gs = commands.add_parser("groundstate", help="Solve the ladder model and save the ground state")
    gs.add_argument("--n", type=int, required=True)
    gs.add_argument("--j1", type=float, default=1.0)
    gs.add_argument("--j2", type=float, default=0.0)
    gs.add_argument("--jr", type=float, default=0.0)
    gs.add_argument("--cutoff", type=float, default=1e-12)
    gs.add_argument("--max-bond", type=int, default=256)
    gs.add_argument("--out", required=True, help="Output .npz file")
    gs.set_defaults(handler=cmd_groundstate)

    pos = commands.add_parser("positivize", help="Train a positivizing circuit")
    pos.add_argument("--state", required=True)
    pos.add_argument("--depth", type=int, default=None)
    pos.add_argument("--gate-kind", choices=["rz", "general_two_qubit"], default=None)
    pos.add_argument("--config", default=None)
    pos.add_argument("--max-iters", type=int, default=None)
    pos.add_argument("--seed", type=int, default=None)
    pos.add_argument("--resume", action="store_true", help="Continue from the checkpoint in --out-dir")
    pos.add_argument("--out-dir", required=True)
    pos.set_defaults(handler=cmd_positivize)

    sweep = commands.add_parser("sweep", help="Positivize over a grid of couplings, depths and sizes")
    sweep.add_argument("--jr", type=float, nargs="*", default=[])
    sweep.add_argument("--depth", type=int, nargs="*", default=[])
    sweep.add_argument("--n", type=int, nargs="*", default=[])
    sweep.add_argument("--seeds", type=int, nargs="*", default=None)
    sweep.add_argument("--j1", type=float, default=1.0)
    sweep.add_argument("--j2", type=float, default=0.0)
    sweep.add_argument("--config", default=None)
    sweep.add_argument("--n-jobs", type=int, default=None)
    sweep.add_argument("--max-runs", type=int, default=DEFAULT_MAX_RUNS)
    sweep.add_argument("--out", required=True, help="Output CSV file")
    sweep.set_defaults(handler=cmd_sweep)

    ev = commands.add_parser("eval", help="Evaluate a circuit on a state")
    ev.add_argument("--state", required=True)
    ev.add_argument("--circuit", required=True)
    ev.add_argument("--config", default=None)
    ev.add_argument("--n-samples", type=int, default=None)
    ev.add_argument("--seed", type=int, default=None)
    ev.add_argument("--out", required=True, help="Output metrics JSON; the manifest goes next to it")
    ev.set_defaults(handler=cmd_eval)

    pc = commands.add_parser("print-config", help="Print the fully resolved configuration")
    pc.add_argument("--config", default=None)
    pc.set_defaults(handler=cmd_print_config)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    try:
        setup_logging(args.log_level)
        args.handler(args)
        return EXIT_OK
    except (UsageError, DimensionError, CircuitError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as e:
        residual = "" if e.residual is None else f" (residual {e.residual:.2e})"
        print(f"solver error: {e}{residual}", file=sys.stderr)
        return EXIT_SOLVER
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except PositivizeError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
