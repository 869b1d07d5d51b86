"""Command-line entry point.

Verbs: ingest-stats (dataset statistics after cleanup), train (fit one
model on the full cleaned matrix and dump the factors), evaluate (folds +
per-user metrics CSV), audit (full pipeline), report (re-render tables and
charts from an existing per-user metrics CSV).

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import als, evaluation, popindex, report
from .config import AuditConfig, apply_overrides, load_config
from .errors import RecauditError
from .ingest import cold_start_filter
from .interactions import from_triples
from .interactions import stats as dataset_stats
from .util import fmt_float


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="audit config file (INI sections)")
    parser.add_argument("--seed", type=int, help="override all subsystem seeds")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--dataset", help="dataset directory with conventional file names")
    parser.add_argument("--threads", type=int, help="worker threads (never changes results)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recaudit",
                                     description="Recommender fairness audit pipeline")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, doc in (
        ("ingest-stats", "parse and clean the dataset, print its statistics"),
        ("train", "fit one model on the full cleaned matrix and dump factors"),
        ("evaluate", "run folds and write the per-user metrics CSV"),
        ("audit", "run the full audit pipeline"),
        ("report", "re-render tables and charts from a per-user metrics CSV"),
    ):
        sp = sub.add_parser(verb, help=doc)
        _add_common(sp)
        if verb == "train":
            sp.add_argument("--model-out", default="model.npz",
                            help="where to write the factor dump")
        if verb == "report":
            sp.add_argument("--metrics", required=True,
                            help="existing metrics_per_user.csv to re-render from")
    return parser


def _load(args: argparse.Namespace) -> AuditConfig:
    config = load_config(args.config)
    return apply_overrides(config, seed=args.seed, out=args.out,
                           threads=args.threads, dataset_dir=args.dataset)


def _cleaned_dataset(config: AuditConfig):
    raw, gdp = report._load_dataset(config)
    raw = cold_start_filter(raw, config.dataset.cold_start_min_items)
    matrix, umap, imap = from_triples(raw.triples)
    return raw, gdp, matrix, umap, imap


def cmd_ingest_stats(args: argparse.Namespace) -> int:
    config = _load(args)
    raw, _, matrix, _, _ = _cleaned_dataset(config)
    ds = dataset_stats(matrix)
    print(f"provenance:     {raw.provenance}")
    print(f"users:          {ds.n_users}")
    print(f"items:          {ds.n_items}")
    print(f"interactions:   {ds.n_interactions}")
    print(f"sparsity:       {ds.sparsity:.6f} ({100 * ds.sparsity:.2f}%)")
    print(f"skipped rows:   {raw.skipped_interactions}")
    print(f"removed users:  {raw.skipped_users}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _load(args)
    _, _, matrix, _, _ = _cleaned_dataset(config)
    model = als.fit(matrix, config.model, threads=config.output.threads)
    als.save_model(model, args.model_out)
    print(f"model written to {args.model_out} "
          f"({matrix.n_users} users x {matrix.n_items} items, k={config.model.factors})")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _load(args)
    audit = report.run_audit(config, emit=False)
    out_dir = Path(config.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "metrics_per_user.csv"
    audit.frame.to_csv(path)
    means = audit.frame.per_user_mean("ndcg")
    overall = sum(means.values()) / len(means) if means else 0.0
    print(f"metrics for {len(means)} users written to {path}")
    print(f"mean NDCG: {fmt_float(overall)}")
    return 0


def cmd_audit(args: argparse.Namespace) -> int:
    config = _load(args)
    audit = report.run_audit(config, emit=True)
    out_dir = Path(config.output.dir)
    print(f"audit complete: {audit.manifest['n_tested_users']} users evaluated")
    for name in sorted(audit.schemes):
        kw = audit.schemes[name].kw.get("ndcg")
        if kw is None:
            print(f"  {name:24s} not testable")
        else:
            adj = audit.schemes[name].p_adjusted["ndcg"]
            marker = " *" if adj is not None and adj < config.output.significance else ""
            print(f"  {name:24s} H={kw.H:10.3f}  p={kw.p_value:.3g}  "
                  f"p_bonf={adj:.3g}{marker}")
    print(f"outputs in {out_dir}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    config = _load(args)
    frame = evaluation.MetricFrame.from_csv(args.metrics)
    raw, gdp, matrix, umap, _ = _cleaned_dataset(config)
    attributes = report._complete_attributes(raw, umap)
    popindex.fill_attributes(attributes, matrix, umap.index, raw.provenance)
    audit = report.rebuild_report(config, frame, matrix, attributes, gdp, raw)
    out_dir = Path(config.output.dir)
    report.emit_tables(audit, out_dir)
    report.emit_charts(audit, out_dir)
    print(f"re-rendered report into {out_dir}")
    return 0


COMMANDS = {
    "ingest-stats": cmd_ingest_stats,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "audit": cmd_audit,
    "report": cmd_report,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.verb](args)
    except RecauditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
