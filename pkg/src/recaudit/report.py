"""Full audit orchestration: ingest, train, evaluate, group, test, explain,
and emit the report files.

Every random decision derives from the seeds recorded in the manifest, all
reductions happen in fixed order, and the per-user metrics CSV is the
single source for every downstream number.  A stage failure aborts with
the stage name and removes partial outputs.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import als, ebm, evaluation, grouping, popindex, stats
from .charts import render_scheme_chart
from .config import AuditConfig
from .errors import ConfigError, DataError, RecauditError
from .ingest import (GdpTable, PROVENANCE_ML1M, RawDataset,
                     cold_start_filter, load_gdp, load_lfm, load_ml1m)
from .interactions import (GENDER_NA, IdMap, InteractionMatrix, UserAttributes,
                           from_triples)
from .interactions import stats as dataset_stats
from .util import derive_seed, fmt_float

log = logging.getLogger(__name__)

METRICS = ("ndcg", "mrr", "rbp")

# schemes whose buckets describe who the user is, rather than how they consume
DEMOGRAPHIC_SCHEMES = ("age_original", "age_equal_range", "age_equal_count",
                       "gender", "country_prevalence", "country_gdp")


@dataclass
class SchemeResult:
    assignment: grouping.GroupAssignment
    counts: dict[str, int] = field(default_factory=dict)  # all matrix users
    tested: dict[str, int] = field(default_factory=dict)  # users with metrics
    means: dict[str, dict[str, float]] = field(default_factory=dict)  # metric -> label -> mean
    ses: dict[str, dict[str, float]] = field(default_factory=dict)
    kw: dict[str, Optional[stats.KwResult]] = field(default_factory=dict)
    p_adjusted: dict[str, Optional[float]] = field(default_factory=dict)
    ebm_shape: dict[str, float] = field(default_factory=dict)  # label -> score
    solo_importance: Optional[float] = None


@dataclass
class AuditReport:
    config: AuditConfig
    stats: "DatasetStatsView"
    frame: evaluation.MetricFrame
    schemes: dict[str, SchemeResult]
    ebm_importance: list[tuple[str, float]]  # all-features run, sorted desc
    ebm_model: Optional[ebm.EbmModel]
    crosstabs: dict[str, "CrossTab"]
    manifest: dict


@dataclass(frozen=True)
class DatasetStatsView:
    n_users: int
    n_items: int
    n_interactions: int
    sparsity: float
    skipped_rows: int
    removed_users: int


@dataclass
class CrossTab:
    """Integer percentage table; each column sums to exactly 100."""

    row_labels: list[str]
    col_labels: list[str]
    percentages: dict[str, dict[str, int]]  # col -> row -> pct
    col_totals: dict[str, int]


def _largest_remainder(shares: Sequence[float]) -> list[int]:
    """Round percentage shares to integers that sum to exactly 100."""
    if not shares:
        return []
    floors = [math.floor(s) for s in shares]
    remainder = 100 - sum(floors)
    order = sorted(range(len(shares)), key=lambda i: (floors[i] - shares[i], i))
    for i in order[:remainder]:
        floors[i] += 1
    return floors


def build_crosstab(rows_assignment: grouping.GroupAssignment,
                   cols_assignment: grouping.GroupAssignment) -> CrossTab:
    """Cross-tabulate two assignments: per demographic column, the integer
    percentage of its users in each row bucket.  Users missing the row
    attribute are left out of the column total."""
    row_labels = rows_assignment.non_na_labels()
    col_labels = list(cols_assignment.labels)
    pct: dict[str, dict[str, int]] = {}
    totals: dict[str, int] = {}
    row_of = rows_assignment.by_user
    for col in col_labels:
        members = [uid for uid in cols_assignment.members(col)
                   if row_of.get(uid, grouping.NA_LABEL) != grouping.NA_LABEL]
        totals[col] = len(members)
        counts = {row: 0 for row in row_labels}
        for uid in members:
            counts[row_of[uid]] += 1
        if members:
            shares = [100.0 * counts[row] / len(members) for row in row_labels]
            ints = _largest_remainder(shares)
        else:
            ints = [0] * len(row_labels)
        pct[col] = dict(zip(row_labels, ints))
    return CrossTab(row_labels=row_labels, col_labels=col_labels,
                    percentages=pct, col_totals=totals)


def _load_dataset(config: AuditConfig) -> tuple[RawDataset, Optional[GdpTable]]:
    ds = config.dataset
    if ds.provenance == PROVENANCE_ML1M:
        if not ds.ratings or not ds.users:
            raise ConfigError("ml1m provenance needs ratings and users paths")
        raw = load_ml1m(ds.ratings, ds.users)
    else:
        if not ds.interactions:
            raise ConfigError(f"{ds.provenance} provenance needs an interactions path")
        raw = load_lfm(ds.interactions, ds.profiles, provenance=ds.provenance)
    gdp = load_gdp(ds.gdp_table) if ds.gdp_table else None
    return raw, gdp


def _complete_attributes(raw: RawDataset, umap: IdMap) -> list[UserAttributes]:
    """Attribute records for every matrix user, in matrix index order."""
    by_id = raw.attribute_index()
    return [by_id.get(uid) or UserAttributes(user_id=uid, gender=GENDER_NA)
            for uid in umap.ids]


def build_assignments(config: AuditConfig, attributes: Sequence[UserAttributes],
                      gdp: Optional[GdpTable]) -> dict[str, grouping.GroupAssignment]:
    """All configured grouping schemes that the data can support."""
    gc = config.grouping
    ages = {a.user_id: a.age for a in attributes}
    have_ages = any(v is not None for v in ages.values())
    have_countries = any(a.country is not None for a in attributes)
    raw_ages = have_ages and config.dataset.provenance != PROVENANCE_ML1M

    out: dict[str, grouping.GroupAssignment] = {}
    for scheme in config.resolved_schemes():
        if scheme == "age_original" and have_ages:
            out[scheme] = grouping.bucket_from_brackets(scheme, ages, gc.age_brackets)
        elif scheme == "age_equal_range" and raw_ages:
            out[scheme] = grouping.bucket_equal_range(scheme, ages,
                                                      gc.age_range_width, anchor=1)
        elif scheme == "age_equal_count" and raw_ages:
            try:
                out[scheme] = grouping.bucket_equal_count(scheme, ages, gc.age_count_bins)
            except ValueError as exc:
                log.warning("skipping age_equal_count scheme: %s", exc)
        elif scheme == "gender":
            genders = {a.user_id: (a.gender if a.gender != GENDER_NA else None)
                       for a in attributes}
            out[scheme] = grouping.bucket_categorical(scheme, genders)
        elif scheme == "country_prevalence" and have_countries:
            out[scheme] = grouping.bucket_countries_by_prevalence(
                scheme, attributes, gc.country_buckets)
        elif scheme == "country_gdp" and have_countries and gdp is not None:
            out[scheme] = grouping.bucket_countries_by_gdp(scheme, attributes, gdp,
                                                           gc.country_buckets)
        elif scheme == "usage":
            usages = {a.user_id: a.usage for a in attributes}
            try:
                out[scheme] = grouping.bucket_equal_count(scheme, usages, gc.usage_bins)
            except ValueError as exc:
                log.warning("skipping usage scheme: %s", exc)
        elif scheme == "popindex":
            pops = {a.user_id: a.pop_index for a in attributes}
            out[scheme] = grouping.bucket_integer_values(scheme, pops,
                                                         gc.popindex_merge_at)
        elif scheme == "last_digit":
            out[scheme] = grouping.control_last_digit(
                scheme, [a.user_id for a in attributes])
    return out


def _ebm_feature_rows(attributes: Sequence[UserAttributes],
                      assignments: dict[str, grouping.GroupAssignment],
                      user_ids: Sequence) -> list[dict]:
    """Feature dicts for the all-features explainer run."""
    by_id = {a.user_id: a for a in attributes}
    country_prev = assignments.get("country_prevalence")
    country_gdp = assignments.get("country_gdp")
    rows = []
    for uid in user_ids:
        attr = by_id[uid]
        row = {
            "age": attr.age,
            "gender": None if attr.gender == GENDER_NA else attr.gender,
            "usage": attr.usage,
            "pop_index": attr.pop_index,
            "last_digit": str(uid)[-1].lower(),
        }
        for name, assignment in (("country_prevalence", country_prev),
                                 ("country_gdp", country_gdp)):
            if assignment is not None:
                label = assignment.by_user.get(uid, grouping.NA_LABEL)
                row[name] = None if label == grouping.NA_LABEL else label
        rows.append(row)
    return rows


def _ebm_specs(rows: list[dict], max_bins: int) -> list[ebm.FeatureSpec]:
    specs: list[ebm.FeatureSpec] = []
    names = list(rows[0].keys())
    numeric = {"age", "usage", "pop_index"}
    for name in names:
        values = [row[name] for row in rows]
        if all(v is None for v in values):
            continue
        if name in numeric:
            specs.append(ebm.bin_numeric(name, values, max_bins=max_bins))
        else:
            specs.append(ebm.categorical_spec(name, values))
    return specs


class _StageRunner:
    """Runs named stages, removing this run's outputs if one fails."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.created: list[Path] = []

    def track(self, path: Path) -> Path:
        self.created.append(path)
        return path

    def cleanup(self) -> None:
        for path in reversed(self.created):
            try:
                path.unlink(missing_ok=True)
            except OSError:
                pass


def run_audit(config: AuditConfig, emit: bool = True) -> AuditReport:
    """Execute the full audit pipeline and (optionally) write all outputs."""
    out_dir = Path(config.output.dir)
    runner = _StageRunner(out_dir)
    stage = "setup"
    try:
        stage = "ingest"
        raw, gdp = _load_dataset(config)
        stage = "cold_start"
        raw = cold_start_filter(raw, config.dataset.cold_start_min_items)
        stage = "matrix"
        matrix, umap, imap = from_triples(raw.triples)
        if matrix.nnz == 0:
            raise DataError("no interactions after cleanup")
        ds_view = _stats_view(matrix, raw)

        stage = "popularity"
        attributes = _complete_attributes(raw, umap)
        popindex.fill_attributes(attributes, matrix, umap.index, raw.provenance)

        stage = "folds"
        fold_scheme = config.resolved_fold_scheme()
        ev = config.evaluation
        plan = evaluation.make_folds(
            list(range(matrix.n_users)), ev.folds, fold_scheme, ev.seed,
            sample_size=ev.sample_size if fold_scheme == "sample" else None)
        evaluation.assign_holdouts(plan, matrix, umap.ids, ev.holdout_fraction)

        stage = "train_evaluate"
        frame = evaluation.MetricFrame()
        fold_seeds = {}
        for fold in plan.folds:
            fold_seed = derive_seed(config.model.seed, "fold", fold.index)
            fold_seeds[fold.index] = fold_seed
            hp = als.AlsHyperparams(
                factors=config.model.factors,
                regularization=config.model.regularization,
                iterations=config.model.iterations,
                alpha=config.model.alpha, seed=fold_seed)
            train_matrix = evaluation.fold_training_matrix(matrix, fold)
            model = als.fit(train_matrix, hp, threads=config.output.threads)
            frame.rows.extend(evaluation.evaluate_fold(
                model, fold, matrix, umap.ids, n=ev.depth,
                persistence=ev.rbp_persistence, filter_train=ev.filter_train,
                threads=config.output.threads))

        report = rebuild_report(config, frame, matrix, attributes, gdp, raw,
                                fold_seeds=fold_seeds, fold_scheme=fold_scheme)
        if emit:
            stage = "emit"
            emit_tables(report, out_dir, runner)
            emit_charts(report, out_dir)
            path = runner.track(out_dir / "manifest.json")
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(report.manifest, fh, indent=2, sort_keys=True)
        return report
    except RecauditError as exc:
        runner.cleanup()
        raise type(exc)(f"stage {stage}: {exc}") from exc
    except Exception:
        runner.cleanup()
        raise


def rebuild_report(config: AuditConfig, frame: evaluation.MetricFrame,
                   matrix: InteractionMatrix, attributes: Sequence[UserAttributes],
                   gdp: Optional[GdpTable], raw: RawDataset,
                   fold_seeds: Optional[dict] = None,
                   fold_scheme: Optional[str] = None) -> AuditReport:
    """Grouping, significance testing, explainer runs, and cross-tabs from
    an existing metric frame.  Used both by run_audit and by the ``report``
    verb that re-renders from a per-user metrics CSV."""
    ds_view = _stats_view(matrix, raw)
    assignments = build_assignments(config, attributes, gdp)

    schemes: dict[str, SchemeResult] = {}
    family: list[tuple[str, str]] = []
    per_metric_means = {m: frame.per_user_mean(m) for m in METRICS}
    tested_ids = set(per_metric_means["ndcg"])
    for name, assignment in assignments.items():
        result = SchemeResult(assignment=assignment)
        result.counts = assignment.sizes()
        for label in assignment.labels:
            members = [uid for uid in assignment.members(label) if uid in tested_ids]
            result.tested[label] = len(members)
        for metric in METRICS:
            means = per_metric_means[metric]
            result.means[metric] = {}
            result.ses[metric] = {}
            for label in assignment.labels:
                values = [means[uid] for uid in assignment.members(label)
                          if uid in means]
                if values:
                    arr = np.asarray(values)
                    result.means[metric][label] = float(arr.mean())
                    result.ses[metric][label] = (
                        float(arr.std(ddof=1) / math.sqrt(len(arr)))
                        if len(arr) > 1 else 0.0)
            kw = stats.test_grouping(frame, assignment, metric)
            result.kw[metric] = kw
            if kw is not None:
                family.append((name, metric))
        schemes[name] = result
    p_values = [schemes[n].kw[m].p_value for n, m in family]
    adjusted = stats.bonferroni(p_values)
    for (name, metric), p_adj in zip(family, adjusted):
        schemes[name].p_adjusted[metric] = p_adj

    tested_users = sorted(tested_ids, key=str)
    ndcg_means = per_metric_means["ndcg"]
    all_rows = _ebm_feature_rows(attributes, assignments, tested_users)
    targets = [ndcg_means[uid] for uid in tested_users]
    ebm_model = None
    ebm_importance: list[tuple[str, float]] = []
    if len(all_rows) >= 10:
        specs = _ebm_specs(all_rows, config.ebm.max_bins)
        if specs:
            ebm_model = ebm.fit_ebm(all_rows, targets, specs, config.ebm,
                                    threads=config.output.threads)
            ebm_importance = ebm.importance(ebm_model, all_rows)
    _solo_ebm_runs(config, schemes, tested_users, ndcg_means)

    crosstabs: dict[str, CrossTab] = {}
    for base in ("usage", "popindex"):
        rows_assignment = assignments.get(base)
        if rows_assignment is None:
            continue
        for name in DEMOGRAPHIC_SCHEMES:
            cols = assignments.get(name)
            if cols is not None:
                crosstabs[f"{base}_by_{name}"] = build_crosstab(rows_assignment, cols)

    manifest = {
        "config_hash": config.config_hash(),
        "config": config.canonical_lines(),
        "dataset": {
            "provenance": raw.provenance,
            "n_users": ds_view.n_users,
            "n_items": ds_view.n_items,
            "n_interactions": ds_view.n_interactions,
            "sparsity": ds_view.sparsity,
            "skipped_rows": ds_view.skipped_rows,
            "removed_users": ds_view.removed_users,
        },
        "seeds": {
            "model": config.model.seed,
            "evaluation": config.evaluation.seed,
            "ebm": config.ebm.seed,
            "per_fold_model": fold_seeds if fold_seeds is not None else {},
        },
        "fold_scheme": fold_scheme or config.resolved_fold_scheme(),
        "schemes": sorted(assignments),
        "n_tested_users": len(tested_users),
        "bonferroni_family_size": len(family),
    }
    return AuditReport(config=config, stats=ds_view, frame=frame,
                       schemes=schemes, ebm_importance=ebm_importance,
                       ebm_model=ebm_model, crosstabs=crosstabs,
                       manifest=manifest)


def _stats_view(matrix: InteractionMatrix, raw: RawDataset) -> DatasetStatsView:
    ds = dataset_stats(matrix)
    return DatasetStatsView(ds.n_users, ds.n_items, ds.n_interactions, ds.sparsity,
                            raw.skipped_interactions, raw.skipped_users)


def _solo_ebm_runs(config: AuditConfig, schemes: dict[str, SchemeResult],
                   tested_users: list, ndcg_means: dict) -> None:
    """Per-scheme single-feature explainer runs on balanced samples.

    The scheme label acts as one categorical feature; the resulting shape
    values feed the charts' score row and the solo importance ranking.
    """
    tested = set(tested_users)
    for name, result in schemes.items():
        assignment = result.assignment
        restricted = grouping.GroupAssignment(
            name=assignment.name, labels=list(assignment.labels),
            by_user={uid: lab for uid, lab in assignment.by_user.items()
                     if uid in tested})
        if not restricted.non_na_labels():
            continue
        try:
            sample = grouping.balanced_sample(restricted, config.ebm.seed)
        except ValueError:
            continue
        if len(sample) < 10:
            continue
        rows = [{"group": restricted.by_user[uid]} for uid in sample]
        targets = [ndcg_means[uid] for uid in sample]
        spec = ebm.categorical_spec("group", [row["group"] for row in rows])
        model = ebm.fit_ebm(rows, targets, [spec], config.ebm)
        result.ebm_shape = {label: model.shape_value("group", label)
                            for label in restricted.non_na_labels()}
        result.solo_importance = ebm.importance(model, rows)[0][1]


def _write_csv(runner: Optional[_StageRunner], path: Path, header: list[str],
               rows: list[list]) -> None:
    if runner is not None:
        runner.track(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def emit_tables(report: AuditReport, out_dir: str | Path,
                runner: Optional[_StageRunner] = None) -> list[Path]:
    """Write the CSV outputs; returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    path = out_dir / "metrics_per_user.csv"
    if runner is not None:
        runner.track(path)
    report.frame.to_csv(path)
    written.append(path)

    summary_rows = []
    for name in sorted(report.schemes):
        result = report.schemes[name]
        for label in result.assignment.labels:
            row = [name, label, result.counts.get(label, 0),
                   result.tested.get(label, 0)]
            for metric in METRICS:
                mean = result.means[metric].get(label)
                se = result.ses[metric].get(label)
                row.append(fmt_float(mean) if mean is not None else "")
                row.append(fmt_float(se) if se is not None else "")
            summary_rows.append(row)
    path = out_dir / "group_summary.csv"
    _write_csv(runner, path, ["scheme", "group", "n_users", "n_tested",
                              "mean_ndcg", "se_ndcg", "mean_mrr", "se_mrr",
                              "mean_rbp", "se_rbp"], summary_rows)
    written.append(path)

    stats_rows = []
    for name in sorted(report.schemes):
        result = report.schemes[name]
        for metric in METRICS:
            kw = result.kw.get(metric)
            if kw is None:
                stats_rows.append([name, metric, "", "", "", "not_testable",
                                   len(result.assignment.non_na_labels())])
            else:
                stats_rows.append([name, metric, fmt_float(kw.H), kw.df,
                                   fmt_float(kw.p_value),
                                   fmt_float(result.p_adjusted[metric]),
                                   len(kw.group_sizes)])
    path = out_dir / "stats_summary.csv"
    _write_csv(runner, path, ["scheme", "metric", "H", "df", "p", "p_bonferroni",
                              "n_groups"], stats_rows)
    written.append(path)

    imp_rows = [[feat, fmt_float(value), rank + 1]
                for rank, (feat, value) in enumerate(report.ebm_importance)]
    path = out_dir / "ebm_importance.csv"
    _write_csv(runner, path, ["feature", "importance", "rank"], imp_rows)
    written.append(path)

    solo = [(name, res.solo_importance) for name, res in report.schemes.items()
            if res.solo_importance is not None]
    solo.sort(key=lambda pair: (-pair[1], pair[0]))
    solo_rows = [[name, fmt_float(value), rank + 1]
                 for rank, (name, value) in enumerate(solo)]
    path = out_dir / "ebm_solo_importance.csv"
    _write_csv(runner, path, ["feature", "importance", "rank"], solo_rows)
    written.append(path)

    if report.ebm_model is not None:
        shape_rows = [["__intercept__", "", fmt_float(report.ebm_model.intercept)]]
        for spec in report.ebm_model.specs:
            labels = spec.bin_labels()
            for b, score in enumerate(report.ebm_model.shapes[spec.name]):
                shape_rows.append([spec.name, labels[b], fmt_float(score)])
        path = out_dir / "ebm_shapes.csv"
        _write_csv(runner, path, ["feature", "bin", "score"], shape_rows)
        written.append(path)

    for name in sorted(report.crosstabs):
        tab = report.crosstabs[name]
        header = ["bucket"] + [str(c) for c in tab.col_labels]
        rows = [[row] + [tab.percentages[col][row] for col in tab.col_labels]
                for row in tab.row_labels]
        rows.append(["n_users"] + [tab.col_totals[col] for col in tab.col_labels])
        path = out_dir / f"crosstab_{name}.csv"
        _write_csv(runner, path, header, rows)
        written.append(path)
    return written


def emit_charts(report: AuditReport, out_dir: str | Path) -> list[Path]:
    """Write one SVG per scheme.  Chart failures warn instead of aborting."""
    out_dir = Path(out_dir) / "charts"
    out_dir.mkdir(parents=True, exist_ok=True)
    significance = report.config.output.significance
    written = []
    for name in sorted(report.schemes):
        result = report.schemes[name]
        labels = list(result.assignment.labels)
        kw = result.kw.get("ndcg")
        if kw is None:
            annotation = "not testable"
        elif kw.p_value < significance:
            annotation = f"p < {significance:g}"
        else:
            annotation = f"p = {kw.p_value:.3g}"
        try:
            svg = render_scheme_chart(
                scheme=name,
                labels=labels,
                counts=[result.counts.get(lab, 0) for lab in labels],
                means=[result.means["ndcg"].get(lab, 0.0) for lab in labels],
                ses=[result.ses["ndcg"].get(lab, 0.0) for lab in labels],
                ebm_scores=[result.ebm_shape.get(lab, 0.0) for lab in labels]
                if result.ebm_shape else None,
                p_annotation=annotation)
            path = out_dir / f"{name}.svg"
            path.write_text(svg, encoding="utf-8")
            written.append(path)
        except Exception as exc:  # charts are best-effort
            log.warning("chart for %s failed: %s", name, exc)
    return written
