"""Command-line entry point: ``mcaids parse|opf|synth|ckb|run``.

Exit status: 0 success, 1 invalid input, 2 solver failure, 64 usage error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import ContractError, TopologyError, ValidationError

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_SOLVER = 2
EXIT_USAGE = 64

CONFIG_ENV = "MCAIDS_CONFIG"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass
class RunManifest:
    command: list
    config_hash: str
    case_hash: str
    partition_hash: str
    seed: int
    version: str = __version__
    jobs: int = 1
    config: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def write(self, out_dir: Path) -> None:
        with open(out_dir / "manifest.json", "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


# ------------------------------------------------------------------ helpers

def _load_grid(case_arg: Optional[str], partition_arg: Optional[str]):
    """Bundled case39 when no case is named; a single all-bus substation when no partition exists."""
    from .case_io import (PartitionSpec, build_grid_case, data_path, load_case39,
                          parse_partition, read_case_file)

    if case_arg in (None, "case39"):
        if partition_arg is None:
            return load_case39()
        case_arg = str(data_path("case39.m"))
    raw, part = read_case_file(case_arg)
    if partition_arg is not None:
        part = parse_partition(Path(partition_arg).read_text(encoding="utf-8"), raw)
    elif part is None and Path(case_arg).name == "case39.m":
        part = parse_partition(data_path("case39_partition.json").read_text(encoding="utf-8"), raw)
    elif part is None:
        part = PartitionSpec((("all", frozenset(b.id for b in raw.bus_records)),))
    return build_grid_case(raw, part)


def _parse_detected(text: str, case) -> frozenset:
    names = case.substation_names
    out = set()
    for tok in filter(None, (t.strip() for t in text.split(","))):
        if tok in names:
            out.add(names.index(tok))
        elif tok.isdigit() and 1 <= int(tok) <= len(names):
            out.add(int(tok) - 1)
        else:
            raise ValidationError(f"unknown substation {tok!r}; known: {', '.join(names)}")
    return frozenset(out)


def _names(case, subset) -> list[str]:
    return [case.substation_names[k] for k in sorted(subset)]


def _read_demand(path, case) -> np.ndarray:
    """Demand CSV with ``bus,mw`` rows (header optional); unspecified buses keep the case value."""
    pd = case.pd.copy()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        cells = [c.strip() for c in line.split(",")]
        if not cells[0] or cells[0].startswith("#"):
            continue
        try:
            bus, mw = int(cells[0]), float(cells[1])
        except (ValueError, IndexError):
            if lineno == 1:
                continue
            raise ValidationError(f"{path}:{lineno}: expected 'bus,mw'") from None
        pd[case.bus_index(bus)] = mw / case.base_mva
    return pd


# -------------------------------------------------------------- subcommands

def cmd_parse(args) -> int:
    from .case_io import case_to_json, parse_partition, read_case_file

    raw, part = read_case_file(args.case)
    if args.validate:
        raw.validate()
        if args.partition:
            part = parse_partition(Path(args.partition).read_text(encoding="utf-8"), raw)
        if part is not None:
            part.validate(raw)
    print(f"{len(raw.bus_records)} buses, {len(raw.branch_records)} branches")
    if args.json:
        case = _load_grid(args.case, args.partition)
        text = case_to_json(case)
        if args.json == "-":
            sys.stdout.write(text + "\n")
        else:
            Path(args.json).write_text(text + "\n")
    return EXIT_OK


def cmd_opf(args) -> int:
    from .dcopf import DispatchModel, write_dispatch_csv
    from .grid import compute_shift_matrix, write_ptdf_csv

    case = _load_grid(args.case, args.partition)
    shift = compute_shift_matrix(case)
    if args.dump_ptdf:
        with open(args.dump_ptdf, "w") as fh:
            write_ptdf_csv(shift, case, fh)
    demand = _read_demand(args.demand_file, case) if args.demand_file else case.pd
    res = DispatchModel(case, shift).solve(demand)
    if not res.optimal:
        print(f"dispatch failed: {res.status}", file=sys.stderr)
        return EXIT_SOLVER
    write_dispatch_csv(case, res, sys.stdout)
    return EXIT_OK


def cmd_synth(args) -> int:
    from .attack import GridContext
    from .cig import deduce

    case = _load_grid(args.case, args.partition)
    ctx = GridContext(case)
    lines = [int(l) for l in args.line.split(",")]
    for l in lines:
        if not 1 <= l <= case.m:
            raise ValidationError(f"line {l} not in 1..{case.m}")
    safe = _parse_detected(args.safe, case) if args.safe else frozenset()
    abar = ctx.abar(args.abar_frac)
    tup = deduce(ctx, ctx.goal([l - 1 for l in lines], args.tau), abar, safe, args.budget)
    out = {
        "lines": lines,
        "tau": args.tau,
        "abar_frac": args.abar_frac,
        "reachable": tup.reachable,
        "kappa_star": tup.kappa_star,
        "cis": [_names(case, s) for s in tup.cis],
        # per CI: bus id -> corruption in MW, zero entries omitted
        "witnesses_mw": [
            {str(case.bus_ids[i]): round(float(v) * case.base_mva, 9)
             for i, v in enumerate(tup.witnesses[s]) if v != 0.0}
            for s in tup.cis
        ],
    }
    json.dump(out, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_ckb(args) -> int:
    from . import ckb

    case = _load_grid(args.case, args.partition)
    if args.action == "build":
        from .attack import GridContext
        from .harness import kb_meta

        ctx = GridContext(case)
        lines = [int(l) for l in args.lines.split(",")]
        kb = ckb.build_kb(ctx, [l - 1 for l in lines], args.tau, ctx.abar(args.abar_frac), args.budget)
        ckb.save_kb(kb, args.kb, case.substation_names, kb_meta(ctx, args.tau, args.abar_frac, args.budget))
        print(f"{len(kb)} records written to {args.kb}")
        return EXIT_OK

    kb = ckb.load_kb(args.kb, case.substation_names)
    detected = _parse_detected(args.detected, case)
    verdict = ckb.scan(kb, detected)
    out = {
        "detected": _names(case, detected),
        "is_existing": verdict.is_existing,
        "matched_rule": verdict.matched_rule,
        "partial": verdict.partial,
        "matched_cis": [{"record": rid, "ci": _names(case, s)} for rid, s in verdict.matched_cis],
    }
    if verdict.is_existing:
        goal = ckb.identify_targets(kb, verdict)
        out["targets"] = [[l + 1, tau] for l, tau in goal.targets]
    if args.action == "defend":
        if not verdict.is_existing:
            out["defense"] = None
        else:
            plan = ckb.derive_defense(s for _, s in verdict.matched_cis)
            out["defense"] = {
                "case_kind": plan.case_kind,
                "defend": _names(case, plan.defend),
                "assignments": [{"ci": _names(case, s), "defend": case.substation_names[k]}
                                for s, k in plan.per_ci_assignments.items()],
            }
            if args.verify:
                from .attack import GridContext

                ctx = GridContext(case)
                pairs = [(s, kb.records[rid].con) for rid, s in verdict.matched_cis]
                out["defense"]["verified"] = ckb.verify_defense(
                    ctx, plan, pairs, ctx.abar(args.abar_frac), args.budget)
    json.dump(out, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_run(args) -> int:
    from . import harness
    from .case_io import case_digest, partition_digest

    cfg_path = args.config or os.environ.get(CONFIG_ENV)
    cfg = harness.load_config(cfg_path) if cfg_path else harness.ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.which == "experiment2" and not (args.config or os.environ.get(CONFIG_ENV)):
        cfg = replace(cfg, p0_values=(0.25, 0.1, 0.05))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = args.jobs or os.cpu_count() or 1
    timings = {}

    t0 = time.perf_counter()
    ctx = harness.make_context(cfg)
    timings["load"] = time.perf_counter() - t0
    cache = out / "kb_cache"

    t0 = time.perf_counter()
    if args.which in ("experiment1", "experiment2"):
        table = harness.experiment_rates(cfg, cfg.p0_values, jobs, cache)
        (out / "rates.csv").write_text(table.to_csv())
        (out / "summary.csv").write_text(_summary_csv(table))
        (out / "boxplot.json").write_text(json.dumps(table.box(), indent=2, sort_keys=True) + "\n")
    else:
        sweep = harness.experiment_III(cfg, None, jobs, cache)
        (out / "table.csv").write_text(sweep.to_csv())
        (out / "replications.csv").write_text(sweep.replications_csv())
    timings["experiment"] = time.perf_counter() - t0

    manifest = RunManifest(
        command=["mcaids"] + list(args.argv),
        config_hash=harness.config_digest(cfg),
        case_hash=case_digest(ctx.case),
        partition_hash=partition_digest(ctx.case.partition),
        seed=cfg.seed,
        jobs=jobs,
        config=cfg.to_dict(),
        timings=timings,
    )
    manifest.write(out)
    print(f"results written to {out}")
    return EXIT_OK


def _summary_csv(table) -> str:
    import csv
    import io

    from .harness import CKBCIG, METRICS

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["p0_hat", "detector"] + [f"mean_{m}" for m in METRICS])
    box = table.box()
    for p0, cell in box.items():
        for det, stats in cell.items():
            row = [p0, det]
            for m in METRICS:
                mu = stats.get(m, {}).get("mean")
                row.append("NA" if mu is None else f"{mu:.6f}")
            w.writerow(row)
    return buf.getvalue()


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mcaids", description="Attack-aware intrusion analysis for power grids.")
    p.add_argument("--version", action="version", version=f"mcaids {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    sp = sub.add_parser("parse", help="parse and validate a case file")
    sp.add_argument("case")
    sp.add_argument("--partition")
    sp.add_argument("--validate", action="store_true")
    sp.add_argument("--json", metavar="PATH", help="write canonical JSON ('-' for stdout)")
    sp.set_defaults(func=cmd_parse)

    sp = sub.add_parser("opf", help="solve the dispatch and print it as CSV")
    sp.add_argument("case", nargs="?")
    sp.add_argument("--partition")
    sp.add_argument("--demand-file", help="CSV of bus,mw overrides")
    sp.add_argument("--dump-ptdf", metavar="PATH")
    sp.set_defaults(func=cmd_opf)

    sp = sub.add_parser("synth", help="deduce all minimum substation sets for a goal")
    sp.add_argument("--case")
    sp.add_argument("--partition")
    sp.add_argument("--line", required=True, help="1-based line number(s), comma separated")
    sp.add_argument("--tau", type=float, required=True)
    sp.add_argument("--abar-frac", type=float, default=0.1)
    sp.add_argument("--budget", type=int, default=200)
    sp.add_argument("--safe", help="substations the attacker cannot corrupt")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("ckb", help="knowledge-base operations")
    sp.add_argument("action", choices=("scan", "defend", "build"))
    sp.add_argument("--kb", required=True)
    sp.add_argument("--detected", default="")
    sp.add_argument("--case")
    sp.add_argument("--partition")
    sp.add_argument("--lines", default="3,4,13,18,25,29,30,42,43,44,45,46")
    sp.add_argument("--tau", type=float, default=0.15)
    sp.add_argument("--abar-frac", type=float, default=0.1)
    sp.add_argument("--budget", type=int, default=200)
    sp.add_argument("--verify", action="store_true", help="replay the defense against each CI")
    sp.set_defaults(func=cmd_ckb)

    sp = sub.add_parser("run", help="run a Monte-Carlo experiment")
    sp.add_argument("which", choices=("experiment1", "experiment2", "experiment3"))
    sp.add_argument("--config", help=f"experiment JSON (default: ${CONFIG_ENV} or built-in)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--jobs", type=int, help="worker processes (default: logical cores)")
    sp.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    args.argv = argv
    try:
        return args.func(args)
    except (ValidationError, ContractError, TopologyError, ValueError, KeyError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
