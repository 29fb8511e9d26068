"""Command-line entry point: ``mba <verb> [flags]``.

Verbs write their artifacts under ``--out`` and print the main JSON document
to stdout.  Module errors exit with status 1 and an error JSON; argument
errors exit with status 2.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .analysis import compute_stats, write_stats_csv
from .arrangements import ArrangementError, initial_arrangement, worsen_arrangement
from .instance import (InstanceError, brute_force_opt, gen_gap_instance, load_instance,
                       save_instance)
from .lp import ColumnGenerationError, ProjectionError, project_to_assignment, \
    solve_assignment_lp, solve_configuration_lp
from .pipeline import (SCHEMA_VERSION, ConstantsConfig, PipelineError, PipelineReport,
                       append_summary_csv, run_pipeline)
from .rounding import (DecompositionError, build_bucket_graph, decompose_matchings,
                       exact_expected_value, sample_allocation, write_distribution_csv)
from .simplex import SimplexError
from .transforms import TransformError

MODULE_ERRORS = (InstanceError, SimplexError, ColumnGenerationError, ProjectionError,
                 DecompositionError, ArrangementError, TransformError, PipelineError,
                 FileNotFoundError, json.JSONDecodeError)


def _dump(obj: dict, path: Path | None = None) -> str:
    text = json.dumps({"schema_version": SCHEMA_VERSION, **obj}, indent=2, sort_keys=True) + "\n"
    if path is not None:
        path.write_text(text)
    return text


def _pairs(sol) -> list[dict]:
    return [{"player": p, "item": j, "x": v} for (p, j), v in sorted(sol.pairs().items())]


def load_config(path: str | None, overrides: list[str]) -> ConstantsConfig:
    data = {}
    if path:
        with open(path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError("config file must hold a JSON object")
        data.pop("schema_version", None)
    for kv in overrides:
        if "=" not in kv:
            raise ValueError(f"--set expects K=V, got {kv!r}")
        k, v = kv.split("=", 1)
        data[k.strip()] = v.strip()
    return ConstantsConfig.from_mapping(data)


# -- verbs ----------------------------------------------------------------

def cmd_solve(args, cfg) -> dict:
    inst = load_instance(args.instance)
    x = solve_assignment_lp(inst)
    y = solve_configuration_lp(inst)
    proj, rep = project_to_assignment(y, strict=False)
    return {
        "assignment_lp": {"objective": x.objective, "x": _pairs(x)},
        "configuration_lp": {
            "objective": y.objective,
            "upper_bound": y.upper_bound,
            "columns": [{"player": p, "items": sorted(C), "y": v}
                        for p, cols in y.columns.items() for C, v in cols if v > 0],
        },
        "projection": {"objective": proj.objective, "loss": rep.loss,
                       "trimmed": [list(t) for t in rep.trimmed], "x": _pairs(proj)},
    }


def cmd_round(args, cfg) -> dict:
    inst = load_instance(args.instance)
    x = solve_assignment_lp(inst)
    dist = decompose_matchings(build_bucket_graph(x))
    ev = exact_expected_value(dist)
    alloc = sample_allocation(dist, args.seed)
    write_distribution_csv(dist, args.out / "distribution.csv")
    return {"seed": args.seed, "lp_objective": x.objective, "expected_value": ev.total,
            "expected_per_player": ev.per_player, "support_size": dist.support_size,
            "allocation": dict(sorted(alloc.assignment.items())), "value": alloc.value}


def cmd_analyze(args, cfg) -> dict:
    inst = load_instance(args.instance)
    x = solve_assignment_lp(inst)
    g = build_bucket_graph(x)
    dist = decompose_matchings(g)
    ev = exact_expected_value(dist)
    write_stats_csv(x, args.out / "players.csv", args.out / "items.csv", ev.per_player)
    arr_out = {}
    for p in inst.players:
        if not g.player_edges(p):
            continue
        a0 = initial_arrangement(g, p)
        a1 = worsen_arrangement(a0)
        a1.to_csv(args.out / f"arrangement_{p}.csv")
        arr_out[p] = {"initial": a0.expected_value, "worsened": a1.expected_value,
                      "swaps": a1.swaps, "slack": a1.slack(), "st_exact": ev.per_player[p]}
    players, _ = compute_stats(x)
    return {"lp_objective": x.objective, "expected_value": ev.total,
            "players": {p: {"alpha": s.alpha, "b": s.b, "S": s.S, "val": s.val}
                        for p, s in players.items()},
            "arrangements": arr_out}


def cmd_pipeline(args, cfg) -> dict:
    inst = load_instance(args.instance)
    _, report = run_pipeline(inst, cfg, args.seed)
    (args.out / "report.json").write_text(report.to_json())
    append_summary_csv(report, Path(args.instance).stem, args.out / "summary.csv")
    return report.to_dict()


def cmd_gap(args, cfg) -> dict:
    inst = gen_gap_instance()
    save_instance(inst, args.out / "gap_instance.json")
    x = solve_assignment_lp(inst)
    opt, assign = brute_force_opt(inst)
    ev = exact_expected_value(decompose_matchings(build_bucket_graph(x)))
    return {"lp": x.objective, "opt": opt, "ratio": opt / x.objective,
            "st_expected": ev.total, "opt_allocation": dict(sorted(assign.items()))}


def _sweep_one(task):
    path, seed, cfg = task
    report: PipelineReport
    _, report = run_pipeline(load_instance(path), cfg, seed)
    return Path(path).stem, report


def cmd_sweep(args, cfg) -> dict:
    paths = []
    for spec in args.instance_list:
        p = Path(spec)
        paths += sorted(p.glob("*.json")) if p.is_dir() else [p]
    if not paths:
        raise InstanceError("sweep needs at least one instance")
    tasks = [(str(p), s, cfg) for p in paths for s in args.seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]
    out_csv = args.out / "sweep.csv"
    if out_csv.exists():
        out_csv.unlink()
    for name, rep in results:
        append_summary_csv(rep, name, out_csv)
    ratios = [r.ratio for _, r in results]
    return {"runs": len(results), "min_ratio": min(ratios), "mean_ratio": sum(ratios) / len(ratios),
            "csv": str(out_csv)}


VERBS = {"solve": cmd_solve, "round": cmd_round, "analyze": cmd_analyze,
         "pipeline": cmd_pipeline, "gap": cmd_gap, "sweep": cmd_sweep}


def _seed_list(text: str) -> list[int]:
    """``5`` -> [5]; ``0:10`` -> 0..9; ``1,4,9`` -> [1, 4, 9]."""
    try:
        if ":" in text:
            a, b = text.split(":")
            return list(range(int(a), int(b)))
        return [int(s) for s in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mba", description="Budgeted allocation LP rounding toolkit")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p, instance=True):
        if instance:
            p.add_argument("--instance", required=True, help="instance JSON file")
        p.add_argument("--config", help="JSON file with constant overrides")
        p.add_argument("--set", action="append", default=[], metavar="K=V",
                       help="override one constant (repeatable)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        return p

    common(sub.add_parser("solve", help="solve both LP relaxations"))
    common(sub.add_parser("round", help="ST rounding of the Assignment-LP optimum"))
    common(sub.add_parser("analyze", help="per-player statistics and arrangements"))
    common(sub.add_parser("pipeline", help="run the full case analysis"))
    common(sub.add_parser("gap", help="the 3/4 integrality-gap instance"), instance=False)
    sw = common(sub.add_parser("sweep", help="pipeline over instances x seeds"), instance=False)
    sw.add_argument("--instance", dest="instance_list", action="append", required=True,
                    help="instance file or directory of *.json (repeatable)")
    sw.add_argument("--seeds", type=_seed_list, default=[0], help="e.g. 0:10 or 1,2,3")
    sw.add_argument("--jobs", type=int, default=1)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
    except (ValueError, TypeError, OSError) as exc:
        ap.error(str(exc))
    if getattr(args, "jobs", 1) < 1:
        ap.error("--jobs must be at least 1")
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        result = VERBS[args.verb](args, cfg)
    except MODULE_ERRORS as exc:
        sys.stdout.write(_dump({"error": type(exc).__name__, "message": str(exc)}))
        return 1
    sys.stdout.write(_dump(result, args.out / f"{args.verb}.json"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
