"""Command-line interface: ``chbell <command> [options]``.

Exit status: 0 success, 2 usage error, 3 invalid input or configuration,
4 runtime failure.  Only explicit flags are read; the environment is not
consulted.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, bundled_config, config_hash, get_float, load_config
from .model import angles_from_config, j_value, outcome_probabilities, params_from_config, state_from_config, OUTCOMES
from .stats import METHODS, REPORTED_METHOD, j_estimate, j_standard_error, pvalue, sigma_equivalent, UndefinedEstimateError

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3, 4

DEFAULT_CONFIG = {"model": "baseline.cfg", "optimize": "baseline.cfg", "simulate": "baseline.cfg",
                  "ingest": "baseline.cfg", "spacetime": "layout.cfg"}


class UsageError(Exception):
    pass


def _resolve_config(name: str | None, command: str) -> Path:
    if name is None:
        return bundled_config(DEFAULT_CONFIG[command])
    path = Path(name)
    if path.exists():
        return path
    if path.name == name and name in ("baseline.cfg", "layout.cfg"):
        return bundled_config(name)
    raise ConfigError(f"configuration file {name!r} not found")


def _metadata(args, config_path: Path | None) -> dict:
    return {
        "version": __version__,
        "command": args.command,
        "seed": getattr(args, "seed", None),
        "config": str(config_path) if config_path else None,
        "config_sha256": config_hash(config_path) if config_path else None,
    }


def _emit(args, result: dict, path: str | None = None) -> None:
    target = path or args.output
    if target:
        Path(target).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- commands ------------------------------------------------------------------------

def cmd_model(args) -> int:
    cfg_path = _resolve_config(args.config, "model")
    cfg = load_config(cfg_path)
    params, state, angles = params_from_config(cfg), state_from_config(cfg), angles_from_config(cfg)
    table = outcome_probabilities(state, angles, params)
    j = j_value(table)
    print(f"r = {state.r:g}; angles a1={angles.a1:g} a2={angles.a2:g} b1={angles.b1:g} b2={angles.b2:g} deg")
    print(f"{'pair':<6}" + "".join(f"{o:>14}" for o in OUTCOMES))
    for i in (1, 2):
        for jj in (1, 2):
            print(f"a{i}b{jj}  " + "".join(f"{table.p(i, jj, o):14.6e}" for o in OUTCOMES))
    print(f"J = {j:.6e}")
    _emit(args, {"metadata": _metadata(args, cfg_path), "j": j,
                 "table": {f"a{i}b{k}": {o: table.p(i, k, o) for o in OUTCOMES}
                           for i in (1, 2) for k in (1, 2)}})
    return EXIT_OK


def cmd_optimize(args) -> int:
    from .optimize import optimize_settings

    cfg_path = _resolve_config(args.config, "optimize")
    cfg = load_config(cfg_path)
    params = params_from_config(cfg)
    res = optimize_settings(params, seed=args.seed, n_starts=args.starts)
    a = res.angles
    print(f"optimum J* = {res.j_star:.6e}")
    print(f"r = {res.r:.6f}")
    print(f"a1 = {a.a1:.3f}  a2 = {a.a2:.3f}  b1 = {a.b1:.3f}  b2 = {a.b2:.3f}  (deg)")
    print(f"{res.n_starts} starts, {res.failed_starts} failed, {len(res.trace)} iterations")
    try:
        j_pub = j_value(outcome_probabilities(state_from_config(cfg), angles_from_config(cfg), params))
        print(f"J at configured point = {j_pub:.6e}")
    except ConfigError:
        j_pub = None
    _emit(args, {"metadata": _metadata(args, cfg_path), "result": res.to_dict(),
                 "j_at_config_point": j_pub})
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .ingest import export_raw
    from .records import write_records
    from .simulate import QuantumSource, rng_from_config

    if not args.output:
        raise UsageError("simulate needs --output for the record file")
    if args.trials < 0:
        raise ConfigError("--trials must be non-negative")
    cfg_path = _resolve_config(args.config, "simulate")
    cfg = load_config(cfg_path)
    params, state, angles = params_from_config(cfg), state_from_config(cfg), angles_from_config(cfg)
    rng = rng_from_config(cfg)
    meta = _metadata(args, cfg_path)
    header = {"metadata": meta, "n_trials": args.trials, "epsilon": rng.epsilon,
              "source": "quantum"}
    source = QuantumSource(params, angles, state, rng, args.seed)
    counts = write_records(args.output, source.iter_chunks(args.trials), header, args.format)
    result = {"metadata": meta, "n_trials": args.trials, "epsilon": rng.epsilon,
              "records": str(args.output), "counts": counts.to_dict(),
              "j_model": j_value(source.table)}
    if args.raw_dir:
        from .records import TrialBatch
        batch = TrialBatch.concat(source.iter_chunks(args.trials))
        paths = export_raw(batch, args.raw_dir, seed=args.seed,
                           slot_period=get_float(cfg, "slot_period_ns", 1000.0),
                           offset=get_float(cfg, "slot_offset_ns", 0.0),
                           decoy_rate=args.decoy_rate)
        result["raw_files"] = {k: str(v) for k, v in paths.items()}
    print(f"wrote {args.trials} trials to {args.output}")
    print(f"K = {counts.wins}  L = {counts.losses}  model J = {result['j_model']:.6e}")
    _emit(args, result, f"{args.output}.json")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .records import count_records

    header, counts = count_records(args.records)
    eps = args.epsilon if args.epsilon is not None else header.get("epsilon")
    if eps is None:
        raise UsageError("no --epsilon given and the record header does not carry one")
    try:
        j, se = j_estimate(counts), j_standard_error(counts)
    except UndefinedEstimateError:
        j = se = None
    results = {m: pvalue(counts, eps, m) for m in METHODS}
    reported = results[args.method]
    z = sigma_equivalent(log10_p=reported.log10_p)
    z = z if math.isfinite(z) else None  # p = 1 has no finite equivalent
    print(f"trials = {counts.total}")
    print(f"J = {j:.6e} +/- {se:.2e}" if j is not None else "J = undefined (a setting pair has no trials)")
    print(f"K = {reported.K}  L = {reported.L}  q = {reported.q:.6g}  (epsilon = {eps:g})")
    for m, r in results.items():
        mark = "*" if m == args.method else " "
        print(f"{mark} {m:<26} log10 p = {r.log10_p:.4f}")
    print(f"sigma-equivalent = {z:.3f}" if z is not None else "sigma-equivalent = none (p = 1)")
    _emit(args, {
        "metadata": {"version": __version__, "command": "analyze", "seed": header.get("metadata", {}).get("seed"),
                     "config_sha256": header.get("metadata", {}).get("config_sha256"),
                     "records": str(args.records)},
        "counts": counts.to_dict(), "j": j, "j_standard_error": se, "epsilon": eps,
        "reported": reported.to_dict(), "all_methods": {m: r.to_dict() for m, r in results.items()},
        "sigma_equivalent": z,
    })
    return EXIT_OK


def cmd_spacetime(args) -> int:
    from .spacetime import spacetime_from_config, verify_config

    cfg_path = _resolve_config(args.config, "spacetime")
    report = verify_config(spacetime_from_config(load_config(cfg_path)), k_sigma=args.k_sigma)
    print(report.render())
    _emit(args, {"metadata": _metadata(args, cfg_path), "report": report.to_dict()})
    return EXIT_OK


def cmd_ingest(args) -> int:
    from .ingest import ingest_files
    from .records import write_records

    if not args.output:
        raise UsageError("ingest needs --output for the record file")
    files = [args.settings_a, args.settings_b, args.traces_a, args.traces_b]
    if args.raw:
        raw = Path(args.raw)
        defaults = [raw / "settings_alice.bin", raw / "settings_bob.bin",
                    raw / "traces_alice.bin", raw / "traces_bob.bin"]
        files = [f or d for f, d in zip(files, defaults)]
    if any(f is None for f in files):
        raise UsageError("ingest needs --raw DIR or all of --settings-a/-b and --traces-a/-b")
    cfg_path = _resolve_config(args.config, "ingest")
    cfg = load_config(cfg_path)
    period = get_float(cfg, "slot_period_ns", 1000.0)
    offset = get_float(cfg, "slot_offset_ns", 0.0)
    batch, summary = ingest_files(*files, slot_period=period, offset=offset)
    meta = _metadata(args, cfg_path)
    eps = None
    try:
        from .simulate import rng_from_config
        eps = rng_from_config(cfg).epsilon
    except ConfigError:
        pass
    header = {"metadata": meta, "n_trials": len(batch), "epsilon": eps, "source": "ingest"}
    counts = write_records(args.output, [batch], header, args.format)
    print(f"assembled {len(batch)} trials into {args.output}")
    for side in ("a", "b"):
        print(f"  side {side}: {summary.traces[side]} traces, {summary.accepted[side]} accepted, "
              f"{summary.collapsed[side]} collapsed, {summary.outside[side]} outside the run")
    _emit(args, {"metadata": meta, "summary": summary.to_dict(), "counts": counts.to_dict(),
                 "slot_period_ns": period, "slot_offset_ns": offset}, f"{args.output}.json")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chbell", description="CH-Eberhard Bell-test workbench")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="key = value configuration file (bundled: baseline.cfg, layout.cfg)")
        if seed:
            p.add_argument("--seed", type=int, default=0)
        p.add_argument("--output", help="output file")
        return p

    p = common(sub.add_parser("model", help="outcome table and J at the configured point"), seed=False)
    p.set_defaults(func=cmd_model)

    p = common(sub.add_parser("optimize", help="maximize J over state and angles"))
    p.add_argument("--starts", type=int, default=20)
    p.set_defaults(func=cmd_optimize)

    p = common(sub.add_parser("simulate", help="simulate a quantum trial stream"))
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--format", choices=("binary", "text"), default="binary")
    p.add_argument("--raw-dir", help="also write setting logs and synthetic pulse traces here")
    p.add_argument("--decoy-rate", type=float, default=0.0,
                   help="per-trial probability of a blackbody-like decoy pulse in the raw traces")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("analyze", help="J estimate and local-realism p-value of a record file"))
    p.add_argument("--records", required=True)
    p.add_argument("--epsilon", type=float, help="setting predictability excess (default: from the record header)")
    p.add_argument("--method", choices=METHODS, default=REPORTED_METHOD)
    p.set_defaults(func=cmd_analyze)

    p = common(sub.add_parser("spacetime", help="light-cone margin audit"), seed=False)
    p.add_argument("--k-sigma", type=float, default=3.0)
    p.set_defaults(func=cmd_spacetime)

    p = common(sub.add_parser("ingest", help="pulse traces and setting logs to trial records"))
    p.add_argument("--raw", help="directory written by simulate --raw-dir")
    p.add_argument("--settings-a")
    p.add_argument("--settings-b")
    p.add_argument("--traces-a")
    p.add_argument("--traces-b")
    p.add_argument("--format", choices=("binary", "text"), default="binary")
    p.set_defaults(func=cmd_ingest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"chbell {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, FileNotFoundError) as exc:  # configuration, parameter, format, missing input
        print(f"chbell {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, RuntimeError) as exc:
        print(f"chbell {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
