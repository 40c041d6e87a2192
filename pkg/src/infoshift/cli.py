"""Command-line interface.

Subcommands: ingest, partition, balance, split, fit, pvi, regress, ablate,
design, run, seed-sweep, report. Exit codes: 0 success, 2 config error,
3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import date
from pathlib import Path

from . import __version__
from .errors import InfoshiftError
from . import pipeline as pl

logger = logging.getLogger("infoshift")


def _common(parser: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        parser.add_argument("--config", required=True, help="pipeline config (JSON)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override all config seeds with this value")
    parser.add_argument("--threads", type=int, default=1, help="within-stage parallelism")
    parser.add_argument("--resume", action="store_true",
                        help="skip stages whose inputs and outputs are unchanged")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="infoshift",
        description="Measure usable-information shifts in labeled text corpora.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="read and normalize a corpus file")
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="jsonl", choices=("jsonl", "csv"))
    p.add_argument("--out", required=True, help="normalized corpus output (jsonl)")

    p = sub.add_parser("partition", help="assign periods (and half-year bins)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--cutoff", default="2022-11-30")
    p.add_argument("--scheme", default="binary", choices=("binary", "halfyear"))
    p.add_argument("--out", required=True, help="assignment table (csv)")

    p = sub.add_parser("balance", help="downsample to a 1:1 label ratio per group")
    p.add_argument("--corpus", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--periods", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="kept listing ids (csv)")

    p = sub.add_parser("split", help="assign train/validation/test splits")
    p.add_argument("--ids", required=True, help="listing id table (csv)")
    p.add_argument("--ratios", default="0.8,0.1,0.1")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    for name, help_text in (
        ("fit", "train null and content models per group"),
        ("pvi", "score held-out listings and write the record table"),
        ("regress", "fit the configured regression specs"),
        ("ablate", "run token ablation over the held-out slice"),
        ("report", "render tables, figures, and the consolidated report"),
        ("run", "execute the full pipeline"),
    ):
        p = sub.add_parser(name, help=help_text)
        _common(p)

    p = sub.add_parser("seed-sweep", help="re-run the pipeline across seeds")
    _common(p)
    p.add_argument("--seeds", required=True, help="comma-separated seed list")

    p = sub.add_parser("design", help="solve or check a finite design scenario")
    p.add_argument("--scenario", required=True, help="scenario document (JSON)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--check-identity", action="store_true",
                   help="also verify the log-score identity and argmax agreement")

    return parser


def _apply_seed_override(config: pl.PipelineConfig, seed: int | None) -> pl.PipelineConfig:
    if seed is None:
        return config
    raw = json.loads(json.dumps(config.raw))
    raw["seeds"] = {"balance": seed, "split": seed, "fit": seed}
    return pl.parse_config(raw, base_dir=config.base_dir)


def _stage_subset(args, stages: tuple[str, ...]) -> int:
    """Run the pipeline prefix ending at the named stage (earlier stages resume)."""
    config = _apply_seed_override(pl.load_config(args.config), args.seed)
    run = pl.PipelineRun(config, args.out, resume=True, threads=args.threads)
    prefix_order = ("ingest", "labels", "partition", "balance", "split", "fit",
                    "pvi", "regress", "ablate", "report")
    last = max(prefix_order.index(s) for s in stages)
    _execute_prefix(run, prefix_order[: last + 1])
    return 0


def _execute_prefix(run: pl.PipelineRun, stages: tuple[str, ...]) -> None:
    config = run.config
    for stage in stages:
        if stage == "ingest":
            run._run_stage("ingest", {"corpus": config.corpus_path}, run.stage_ingest)
        elif stage == "labels":
            inputs = {"corpus_clean": run.corpus_clean}
            if config.label_path is not None:
                inputs["labels"] = config.label_path
            run._run_stage("labels", inputs, run.stage_labels)
        elif stage == "partition":
            run._run_stage("partition", {"corpus_clean": run.corpus_clean}, run.stage_partition)
        elif stage in ("balance", "split"):
            sample_inputs = {
                "corpus_clean": run.corpus_clean,
                "labels_clean": run.labels_clean,
                "periods": run.periods_csv,
            }
            ordered = config.stage_order
            if stage != ordered[0]:
                continue  # both handled together below in configured order
            if ordered == ("balance", "split"):
                run._run_stage("balance", sample_inputs, run.stage_balance)
                run._run_stage("split", {"balanced": run.balanced_csv}, run.stage_split)
            else:
                run._run_stage("split", sample_inputs, run.stage_split)
                run._run_stage("balance", {**sample_inputs, "splits": run.splits_csv},
                               run.stage_balance)
        elif stage == "fit":
            run._run_stage("fit", _data_inputs(run), run.stage_fit)
        elif stage == "pvi":
            run._run_stage("pvi", {**_data_inputs(run), "models": run.models_index},
                           run.stage_pvi)
        elif stage == "regress":
            run._run_stage("regress", {"pvi": run.pvi_csv, "corpus_clean": run.corpus_clean},
                           run.stage_regress)
        elif stage == "ablate":
            if not config.ablation_enabled:
                continue
            inputs = {**_data_inputs(run), "models": run.models_index}
            if config.ablation_lexicon is not None:
                inputs["lexicon"] = config.ablation_lexicon
            run._run_stage("ablate", inputs, run.stage_ablate)
        elif stage == "report":
            inputs = {"pvi": run.pvi_csv, "regress": run.regress_json}
            if config.ablation_enabled:
                inputs["ablation"] = run.ablation_json
            run._run_stage("report", inputs, run.stage_report)


def _data_inputs(run: pl.PipelineRun) -> dict:
    return {
        "corpus_clean": run.corpus_clean,
        "labels_clean": run.labels_clean,
        "periods": run.periods_csv,
        "balanced": run.balanced_csv,
        "splits": run.splits_csv,
    }


def _cmd_ingest(args) -> int:
    from .corpus import ingest, write_corpus
    corpus = ingest(args.input, args.format)
    write_corpus(corpus.listings, args.out)
    print(f"ingested {len(corpus.listings)} listings "
          f"({corpus.n_skipped} skipped of {corpus.n_read} rows) -> {args.out}")
    return 0


def _cmd_partition(args) -> int:
    from .corpus import ingest, partition, write_assignments
    corpus = ingest(args.corpus, "jsonl")
    assignments, diagnostics = partition(corpus, date.fromisoformat(args.cutoff), args.scheme)
    rows = [(a.listing_id, a.period, a.halfyear_bin or "") for a in assignments]
    write_assignments(rows, ("listing_id", "period", "halfyear_bin"), args.out)
    print(f"partitioned {len(rows)} listings ({len(diagnostics)} excluded) -> {args.out}")
    return 0


def _cmd_balance(args) -> int:
    from .corpus import balance, ingest, read_assignments, read_labels, write_assignments
    corpus = ingest(args.corpus, "jsonl")
    labels = {r.listing_id: r.label for r in read_labels(args.labels)}
    periods = read_assignments(args.periods)
    groups = {
        r["listing_id"]: (r.get("halfyear_bin") or r["period"]) for r in periods
    }
    kept = balance(corpus, labels, groups, args.seed)
    write_assignments([(k,) for k in kept], ("listing_id",), args.out)
    print(f"balanced sample: kept {len(kept)} of {len(groups)} listings -> {args.out}")
    return 0


def _cmd_split(args) -> int:
    from .corpus import read_assignments, split, write_assignments
    ids = [r["listing_id"] for r in read_assignments(args.ids)]
    ratios = tuple(float(x) for x in args.ratios.split(","))
    assignment = split(ids, args.seed, ratios)  # type: ignore[arg-type]
    write_assignments([(i, assignment[i]) for i in ids], ("listing_id", "split"), args.out)
    print(f"split {len(ids)} listings -> {args.out}")
    return 0


def _cmd_design(args) -> int:
    from .design import check_log_score_identity, load_scenario, solve
    env, taus, epsilon = load_scenario(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    solution = solve(env, taus, epsilon)
    doc = {
        "chosen": solution.chosen,
        "epsilon": solution.epsilon,
        "baseline_human_info": solution.baseline_human_info,
        "unconstrained": solution.unconstrained,
        "binding": solution.binding,
        "candidates": [
            {"tau": r.tau_id, "machine_info": r.machine_info,
             "human_info": r.human_info, "feasible": r.feasible}
            for r in solution.rows
        ],
    }
    if args.check_identity:
        report = check_log_score_identity(env, taus)
        doc["identity_check"] = {
            "value_identity_ok": report.value_identity_ok,
            "argmax_agrees": report.argmax_agrees,
            "ordering_by_info": list(report.ordering_by_info),
            "ordering_by_log_score": list(report.ordering_by_log_score),
            "max_identity_gap": max(r.identity_gap for r in report.rows),
        }
    (out / "design_solution.json").write_text(
        json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    mode = "unconstrained" if solution.unconstrained else "constrained"
    print(f"{'tau':<16}{'machine_info':>14}{'human_info':>14}{'feasible':>10}")
    for r in solution.rows:
        print(f"{r.tau_id:<16}{r.machine_info:>14.6f}{r.human_info:>14.6f}{str(r.feasible):>10}")
    print(f"verdict: chose {solution.chosen!r} ({mode}, epsilon={epsilon}, "
          f"binding={solution.binding})")
    return 0


def _cmd_run(args) -> int:
    config = _apply_seed_override(pl.load_config(args.config), args.seed)
    run = pl.PipelineRun(config, args.out, resume=args.resume, threads=args.threads)
    run.execute()
    print(f"run complete -> {args.out} (config hash {config.config_hash()[:12]})")
    return 0


def _cmd_seed_sweep(args) -> int:
    config = pl.load_config(args.config)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    report = pl.seed_sweep(config, seeds, args.out, threads=args.threads)
    print(f"seed sweep over {seeds}: beta spread {report['beta_spread']:.6f}, "
          f"ANOVA p={report['anova_p']:.4f} -> {args.out}")
    return 0


_STAGE_COMMANDS = {
    "fit": ("fit",),
    "pvi": ("pvi",),
    "regress": ("regress",),
    "ablate": ("ablate",),
    "report": ("report",),
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "ingest":
            return _cmd_ingest(args)
        if args.command == "partition":
            return _cmd_partition(args)
        if args.command == "balance":
            return _cmd_balance(args)
        if args.command == "split":
            return _cmd_split(args)
        if args.command == "design":
            return _cmd_design(args)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "seed-sweep":
            return _cmd_seed_sweep(args)
        if args.command in _STAGE_COMMANDS:
            return _stage_subset(args, _STAGE_COMMANDS[args.command])
        raise SystemExit(f"unhandled command {args.command!r}")
    except InfoshiftError as exc:
        logger.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
