"""Command-line front end.

Subcommands::

    coherentfem run <config> [--output DIR]
    coherentfem validate <config>
    coherentfem traj gen --field NAME (--grid N,N | --count N) --times T,... --out FILE
    coherentfem traj degrade <file> --fraction F --seed S --out FILE
    coherentfem mesh dump <config> --out FILE

Exit codes: 0 success, 1 validation error, 2 runtime error.  The environment
variable ``COHERENT_MESH_THREADS`` caps the threads used by the numerical
libraries.
"""
import argparse
import json
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import flows, mesh, pipeline, trajectories
from .exceptions import CoherentFEMError, ConfigError, ParseError, ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
THREADS_ENV = "COHERENT_MESH_THREADS"


def _csv_floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _csv_ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _csv_periods(text):
    return [None if v.strip().lower() == "none" else float(v) for v in text.split(",")]


def _parser():
    p = argparse.ArgumentParser(prog="coherentfem",
                                description="Finite-element dynamic Laplacian coherent sets")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the configured pipeline")
    run.add_argument("config")
    run.add_argument("--output", help="override run.output")

    val = sub.add_parser("validate", help="print the normalized configuration")
    val.add_argument("config")

    traj = sub.add_parser("traj", help="trajectory utilities")
    tsub = traj.add_subparsers(dest="traj_command", required=True)
    gen = tsub.add_parser("gen", help="integrate a built-in field from grid or scattered seeds")
    gen.add_argument("--field", required=True)
    gen.add_argument("--params", default="", help="comma-separated key=value overrides")
    grp = gen.add_mutually_exclusive_group(required=True)
    grp.add_argument("--grid", type=_csv_ints)
    grp.add_argument("--count", type=int)
    gen.add_argument("--times", type=_csv_floats, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    deg = tsub.add_parser("degrade", help="delete a random fraction of observations")
    deg.add_argument("input")
    deg.add_argument("--fraction", type=float, required=True)
    deg.add_argument("--seed", type=int, default=0)
    deg.add_argument("--periods", type=_csv_periods)
    deg.add_argument("--out", required=True)

    msh = sub.add_parser("mesh", help="mesh utilities")
    msub = msh.add_subparsers(dest="mesh_command", required=True)
    dump = msub.add_parser("dump", help="write the initial mesh of a configuration")
    dump.add_argument("config")
    dump.add_argument("--out", required=True)
    return p


def _run(args):
    cfg = pipeline.load_config(args.config)
    report = pipeline.run_pipeline(cfg, args.output)
    out = args.output or cfg.output
    summary = {"output": out, "eigengap": report["eigengap"], "partition": report["partition"]["sizes"]}
    if "cheeger" in report:
        summary["cheeger"] = report["cheeger"]
    print(json.dumps(pipeline._json_floats(summary), sort_keys=True))


def _validate(args):
    cfg = pipeline.load_config(args.config)
    sys.stdout.write(cfg.to_ini())


def _traj_gen(args):
    params = pipeline._params(args.params) if args.params else {}
    dyn = flows.builtin_field(args.field, params)
    if args.grid is not None:
        if len(args.grid) != dyn.dim:
            raise ValidationError(f"--grid needs {dyn.dim} sizes")
        nodes = mesh.regular_grid(args.grid, dyn.bounds, periods=dyn.periods)
    else:
        seed = pipeline.seed_streams(args.seed)["nodes"]
        rng = np.random.default_rng(seed)
        lo, hi = dyn.bounds[:, 0], dyn.bounds[:, 1]
        nodes = lo + (hi - lo) * rng.random((args.count, dyn.dim))
    ds = trajectories.generate_trajectories(dyn, nodes, args.times)
    trajectories.save_trajectories(ds, args.out)


def _traj_degrade(args):
    ds = trajectories.load_trajectories(args.input, args.periods)
    seed = pipeline.seed_streams(args.seed)["deletion"]
    trajectories.save_trajectories(trajectories.delete_random(ds, args.fraction, seed), args.out)


def _mesh_dump(args):
    cfg = pipeline.load_config(args.config)
    problem = pipeline.build_problem(cfg, mesh_only=True)
    mesh.write_mesh(problem["mesh0"], args.out)


def _threads():
    val = os.environ.get(THREADS_ENV)
    if not val:
        return None
    try:
        n = int(val)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {val!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {val!r}")
    return n


def main(argv=None):
    """Entry point; returns the process exit code."""
    args = _parser().parse_args(argv)
    handlers = {"run": _run, "validate": _validate, "mesh": _mesh_dump,
                "traj": _traj_gen if getattr(args, "traj_command", None) == "gen" else _traj_degrade}
    try:
        with threadpool_limits(limits=_threads()):
            handlers[args.command](args)
    except pipeline.ConfigErrors as exc:
        for err in exc.errors:
            print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except pipeline.PipelineError as exc:
        status = EXIT_VALIDATION if isinstance(exc.error, ConfigError) else EXIT_RUNTIME
        print(f"error in stage {exc}", file=sys.stderr)
        return status
    except (ConfigError, ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CoherentFEMError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main_exit():
    """Console-script wrapper."""
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
