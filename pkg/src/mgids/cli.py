"""Command line entry point: run, bounds, audit, validate.

Exit codes: 0 success, 1 validation error, 2 runtime failure, 3 audit violations.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import InvalidArgument
from .harness import BOUNDS, ExperimentConfig, lemma_audit, run_experiment, theoretical_bounds, write_outputs

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_AUDIT = 0, 1, 2, 3


def _parse_dims(items: list[str]) -> dict:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise InvalidArgument(f"expected key=value, got {item!r}")
        out[key.strip()] = float(value) if key.strip() in ("I", "epsilon") else int(value)
    return out


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if args.workers:
        cfg.workers = args.workers
    report = run_experiment(cfg)
    csv_path, json_path = write_outputs(report, cfg, cfg.output_dir or Path(args.config).with_suffix(""))
    for lab, agg in report.aggregates().items():
        print(f"{lab}: cum regret {agg['final_mean_cum_regret']:.4f} +/- {agg['final_stderr_cum_regret']:.4f}, "
              f"{report.bound_name} bound {agg['final_bound']:.4g}")
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def _cmd_bounds(args) -> int:
    dims = _parse_dims(args.dims)
    which = args.thm if args.thm.startswith("Thm") else f"Thm{args.thm}"
    extra = {k: dims.pop(k) for k in ("I", "epsilon") if k in dims}
    try:
        value = theoretical_bounds(
            dims.pop("S"), dims.pop("A"), dims.pop("B", 1), dims.pop("H"), dims.pop("K"), dims.pop("N", 1), which, extra or None
        )
    except KeyError as exc:
        raise InvalidArgument(f"missing dimension {exc.args[0]}") from exc
    if dims:
        raise InvalidArgument(f"unknown dimensions: {sorted(dims)}")
    print(repr(value))
    return EXIT_OK


def _cmd_audit(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.episodes:
        cfg.K = args.episodes
    if args.draws:
        cfg.num_prior_draws = args.draws
    audit = lemma_audit(cfg)
    doc = audit.to_dict()
    if args.output:
        Path(args.output).write_text(json.dumps(doc, indent=2))
    print(f"episodes checked {audit.episodes_checked}, checks {audit.checks}, violations {len(audit.violations)}")
    for note in audit.skipped:
        print(f"skipped {note}")
    return EXIT_OK if audit.ok else EXIT_AUDIT


def _cmd_validate(args) -> int:
    from .belief import _env_doc_to_obj

    doc = json.loads(Path(args.env).read_text())
    env = _env_doc_to_obj(doc, Path(args.env).parent)
    print(f"valid {type(env).__name__}: horizon {env.horizon}, states {env.num_states}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mgids", description="Information-directed learning in tabular Markov games")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config; writes regret.csv and report.json")
    r.add_argument("config")
    r.add_argument("--output-dir")
    r.add_argument("--workers", type=int)
    r.set_defaults(func=_cmd_run)

    b = sub.add_parser("bounds", help="evaluate a regret bound")
    b.add_argument("--thm", required=True, help=f"one of {', '.join(BOUNDS)} (or 1-4)")
    b.add_argument("--dims", nargs="+", required=True, metavar="KEY=VALUE", help="S A B H K [N] [I epsilon]")
    b.set_defaults(func=_cmd_bounds)

    a = sub.add_parser("audit", help="run a config while checking the per-episode lemmas")
    a.add_argument("config")
    a.add_argument("--episodes", type=int)
    a.add_argument("--draws", type=int)
    a.add_argument("--output")
    a.set_defaults(func=_cmd_audit)

    v = sub.add_parser("validate", help="check an environment JSON file")
    v.add_argument("env")
    v.set_defaults(func=_cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InvalidArgument, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any solver or runtime failure maps to one exit code
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
