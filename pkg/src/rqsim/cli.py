"""Command line interface: gen-dataset, stats, simulate, analyze, compare."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any

from .adversary import SCENARIOS
from .analytic import ModelInput, expected_mean
from .client import PATTERN_BASED, RANDOM_SET
from .harness import (
    FULL,
    ExperimentConfig,
    compare_analytic,
    derive_rng,
    load_db,
    run_experiment,
    write_report,
)
from .patterns import SynthSpec, db_stats, gen_synthetic_db, save_pattern_file

log = logging.getLogger("rqsim")


def _parse_json_object(value: str) -> dict[str, Any]:
    path = Path(value)
    if path.exists():
        with path.open("r", encoding="utf-8") as fh:
            payload = json.load(fh)
    else:
        payload = json.loads(value)
    if not isinstance(payload, dict):
        raise ValueError("expected a JSON object")
    return payload


def _dummy_size(value: str) -> int | str:
    if value == FULL:
        return FULL
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer or 'full', got {value!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("dummy database size must be positive")
    return n


def _range(value: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in value.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MIN:MAX, got {value!r}") from None
    return lo, hi


def _add_source(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--db", help="pattern database (.jsonl or .csv)")
    src.add_argument("--synthetic-spec", help="synthetic spec as JSON text or path to a JSON file")
    p.add_argument("--seed", type=int, default=0, help="master seed")


def _add_experiment(p: argparse.ArgumentParser) -> None:
    _add_source(p)
    p.add_argument("--block-size", type=int, action="append", required=True, dest="block_sizes")
    p.add_argument("--dummy-db-size", type=_dummy_size, action="append", dest="dummy_db_sizes")
    p.add_argument("--sample", type=int, default=None, help="simulate a seeded random subset of patterns")
    p.add_argument("--trials", type=int, default=1, help="visits per pattern")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rqsim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-dataset", help="generate a synthetic pattern database")
    gen.add_argument("--synthetic-spec", required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", type=Path, required=True, help="output file")
    gen.add_argument("--format", choices=["csv", "json"], default="json", help="json writes JSONL")

    stats = sub.add_parser("stats", help="pattern database statistics")
    _add_source(stats)
    stats.add_argument("--format", choices=["csv", "json"], default="json")

    sim = sub.add_parser("simulate", help="run the attack experiment")
    _add_experiment(sim)
    sim.add_argument("--scenario", choices=[*SCENARIOS, "all"], action="append", dest="scenarios")
    sim.add_argument("--strategy", choices=[RANDOM_SET, PATTERN_BASED], default=RANDOM_SET)
    sim.add_argument("--dedupe", action="store_true", help="drop repeated names (stub resolver cache)")
    sim.add_argument("--variable-n", type=_range, default=None, metavar="MIN:MAX")
    sim.add_argument("--padding-multiple", type=int, default=None)
    sim.add_argument("--slack", type=int, default=1)

    ana = sub.add_parser("analyze", help="evaluate the analytic model")
    _add_source(ana)
    ana.add_argument("--block-size", type=int, action="append", required=True, dest="block_sizes")
    ana.add_argument("--dummy-db-size", type=_dummy_size, default=FULL)
    ana.add_argument("--out", type=Path, default=None)
    ana.add_argument("--format", choices=["csv", "json"], default="json")

    cmp_ = sub.add_parser("compare", help="analytic F(N) against simulated 1BD mean k")
    _add_experiment(cmp_)
    cmp_.add_argument("--format", choices=["csv", "json"], default="csv")
    return parser


def _experiment_config(args, **extra) -> ExperimentConfig:
    synthetic = SynthSpec.from_dict(_parse_json_object(args.synthetic_spec)) if args.synthetic_spec else None
    return ExperimentConfig(
        block_sizes=args.block_sizes,
        db_path=args.db,
        synthetic=synthetic,
        dummy_db_sizes=args.dummy_db_sizes or [FULL],
        trials_per_pattern=args.trials,
        master_seed=args.seed,
        sample=args.sample,
        workers=args.workers,
        **extra,
    )


def _source_db(args):
    synthetic = SynthSpec.from_dict(_parse_json_object(args.synthetic_spec)) if args.synthetic_spec else None
    cfg = ExperimentConfig(block_sizes=[1], db_path=args.db, synthetic=synthetic, master_seed=args.seed)
    cfg.validate()
    return load_db(cfg)


def _emit_rows(rows: list[dict], fmt: str, out=None) -> None:
    out = out or sys.stdout
    if fmt == "json":
        json.dump(rows, out, indent=2, sort_keys=True)
        out.write("\n")
    else:
        w = csv.DictWriter(out, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def cmd_gen_dataset(args) -> None:
    spec = SynthSpec.from_dict(_parse_json_object(args.synthetic_spec))
    # same stream as `simulate --synthetic-spec` so both see one database
    db = gen_synthetic_db(spec, derive_rng(args.seed, 0))
    save_pattern_file(db, args.out, "csv" if args.format == "csv" else "jsonl")
    log.info("wrote %d patterns to %s", len(db), args.out)


def cmd_stats(args) -> None:
    stats = db_stats(_source_db(args)).to_dict()
    if args.format == "json":
        print(json.dumps(stats, indent=2, sort_keys=True))
    else:
        hist = stats.pop("length_histogram")
        _emit_rows([stats], "csv")
        print()
        _emit_rows([{"length": k, "count": v} for k, v in hist.items()], "csv")


def cmd_simulate(args) -> None:
    scenarios = args.scenarios or ["1bd"]
    if "all" in scenarios:
        scenarios = list(SCENARIOS)
    cfg = _experiment_config(
        args,
        scenarios=list(dict.fromkeys(scenarios)),
        strategy=args.strategy,
        dedupe=args.dedupe,
        variable_n=args.variable_n,
        padding_multiple=args.padding_multiple,
        slack=args.slack,
    )
    res = run_experiment(cfg)
    write_report(res, args.out)
    for row in (c.summary() for c in res.cells):
        log.info("%s", row)


def cmd_analyze(args) -> None:
    db = _source_db(args)
    q = len(db.all_names) if args.dummy_db_size == FULL else args.dummy_db_size
    outputs = {n: expected_mean(ModelInput.from_db(db, n, Q_size=q)) for n in args.block_sizes}
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        with (args.out / "model.json").open("w", encoding="utf-8") as fh:
            json.dump({str(n): o.to_dict() for n, o in outputs.items()}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with (args.out / "e_by_length.csv").open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["N", "M", "E"])
            for n, o in outputs.items():
                for m, e in sorted(o.E_by_length.items()):
                    w.writerow([n, m, f"{e:.9f}"])
    _emit_rows([{"N": n, "Q_size": q, "F_N": o.F_N} for n, o in outputs.items()], args.format)


def cmd_compare(args) -> None:
    cfg = _experiment_config(args)
    rows = compare_analytic(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    dicts = [asdict(r) for r in rows]
    with (args.out / "compare.csv").open("w", encoding="utf-8") as fh:
        _emit_rows(dicts, "csv", fh)
    _emit_rows(dicts, args.format)


COMMANDS = {
    "gen-dataset": cmd_gen_dataset,
    "stats": cmd_stats,
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"rqsim: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
