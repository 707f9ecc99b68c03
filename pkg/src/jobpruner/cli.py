"""Command-line interface: run, prune, suggest-aggr, match, bench."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench, kbstore, matcher
from .orchestrator import AppCommand, RunConfig, report_to_csv, run
from .pruner import AUTO, PruneConfig, prune
from .space import SpaceError, load_space
from .variogram import suggest_aggressiveness


class CliError(SystemExit):
    def __init__(self, message: str):
        print(f"error: {message}", file=sys.stderr)
        super().__init__(2)


def _parse_paggr(text: str):
    if text == AUTO:
        return AUTO
    try:
        value = float(text)
    except ValueError:
        raise CliError(f"--paggr must be 'auto' or a float, got {text!r}")
    return value


def _load_prior(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return kbstore.entry_from_dict(doc).record


def _app_from_doc(doc: dict):
    if "builtin" in doc:
        _, fn = bench.resolve_builtin(doc["builtin"])
        return fn
    if "app" in doc:
        app = doc["app"]
        return AppCommand(command=app["command"],
                          objective_from=app.get("objective_from", "stdout"),
                          output_file=app.get("output_file"),
                          timeout=app.get("timeout"))
    raise CliError("experiment spec needs an 'app' command or a 'builtin' landscape id")


def _cmd_run(args) -> int:
    space, doc = load_space(args.spec)
    kb = [e.record for e in kbstore.load_kb(args.kb)] if args.kb else []
    cfg = RunConfig(
        space=space,
        app=_app_from_doc(doc),
        optimizer=args.optimizer,
        seed=args.seed,
        batch_size=args.batch_size,
        budget=args.budget if args.budget is not None else args.budget_frac,
        prune_cfg=PruneConfig(aggressiveness=_parse_paggr(args.paggr),
                              corr_threshold=args.corr_threshold),
        kb=kb,
    )
    report = run(cfg)
    csv_text = report_to_csv(report)
    if args.out:
        Path(args.out).write_text(csv_text, encoding="utf-8")
    else:
        sys.stdout.write(csv_text)
    print(f"best_value={report.best_value!r} best_point={report.best_point} "
          f"evaluations={report.evaluations}", file=sys.stderr)
    return 0


def _cmd_prune(args) -> int:
    prior = _load_prior(args.prior)
    space, _ = load_space(args.spec)
    outcome = prune(prior, space, args.paggr)
    for name, values in outcome.removed.items():
        print(f"removed,{name}," + ",".join(str(v) for v in values))
    print(f"reduction,{outcome.reduction!r}")
    return 0


def _cmd_suggest_aggr(args) -> int:
    prior = _load_prior(args.prior)
    suggestion = suggest_aggressiveness(prior, PruneConfig(cap=args.cap))
    print(f"s_aggr={suggestion.value!r}")
    print(f"nugget={suggestion.nugget!r}")
    print(f"sill={suggestion.sill!r}")
    print(f"normal_ok={suggestion.normal_ok}")
    print(f"stationary_ok={suggestion.stationary_ok}")
    print(f"fallback={suggestion.fallback}")
    return 0


def _cmd_match(args) -> int:
    current = _load_prior(args.current)
    kb = [e.record for e in kbstore.load_kb(args.kb)]
    surrogate = matcher.ensure_surrogate(current)
    result = matcher.select_previous(kb, surrogate, threshold=args.corr_threshold)
    if result is None:
        print("match=none")
    else:
        print(f"match={result.prior_id}")
        print(f"n_corr={result.n_corr!r}")
        print(f"sample_size={result.sample_size}")
    return 0


def _cmd_bench(args) -> int:
    family = bench.preset_family(args.family, seed=args.seed)
    reps = 30 if args.fast and args.reps is None else (args.reps or 200)
    kb_sizes = (0, 5, 10, 15, 20) if family.subjects > 20 else ()
    bench.run_study(family, optimizer_kinds=tuple(args.optimizer),
                    kb_sizes=kb_sizes, reps=reps, workers=args.workers,
                    out_dir=args.out)
    print(f"family={family.name} achieved_rho={family.achieved_rho:.4f} "
          f"space={len(family.points)} subjects={family.subjects} out={args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jobpruner",
                                     description="Search-space pruning for parameter sweeps")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("--spec", required=True)
    p.add_argument("--kb")
    p.add_argument("--optimizer", choices=("pso", "sa"), default="pso")
    p.add_argument("--paggr", default="auto")
    p.add_argument("--corr-threshold", type=float, default=0.5)
    p.add_argument("--budget-frac", type=float, default=0.1)
    p.add_argument("--budget", type=int, default=None, help="absolute budget (overrides --budget-frac)")
    p.add_argument("--batch-size", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("prune", help="prune a spec's space from a prior experiment")
    p.add_argument("--prior", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--paggr", type=float, required=True)
    p.set_defaults(fn=_cmd_prune)

    p = sub.add_parser("suggest-aggr", help="variogram-based aggressiveness suggestion")
    p.add_argument("--prior", required=True)
    p.add_argument("--cap", type=float, default=0.95)
    p.set_defaults(fn=_cmd_suggest_aggr)

    p = sub.add_parser("match", help="select the best prior for an experiment")
    p.add_argument("--kb", required=True)
    p.add_argument("--current", required=True)
    p.add_argument("--corr-threshold", type=float, default=0.5)
    p.set_defaults(fn=_cmd_match)

    p = sub.add_parser("bench", help="run the synthetic-family study")
    p.add_argument("--family", required=True, choices=sorted(bench.FAMILY_PRESETS))
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--fast", action="store_true", help="smoke-test repetition count")
    p.add_argument("--optimizer", action="append", default=None,
                   choices=("pso", "sa"))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "optimizer", None) is None and args.command == "bench":
        args.optimizer = ["pso"]
    try:
        return args.fn(args)
    except (SpaceError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
