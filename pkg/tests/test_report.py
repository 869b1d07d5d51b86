import csv
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from recaudit import report as report_mod
from recaudit.config import apply_overrides, load_config
from recaudit.errors import ConfigError, DataError
from recaudit.evaluation import MetricFrame
from recaudit.grouping import bucket_categorical, bucket_integer_values
from recaudit.report import build_crosstab, run_audit
from recaudit.synthetic import generate_planted


@pytest.fixture(scope="session")
def small_audit(tmp_path_factory):
    """One small planted-bias audit, shared by the read-only tests below."""
    root = tmp_path_factory.mktemp("small_audit")
    truth = generate_planted(root / "data", n_users=240, n_items=100, seed=9)
    config_text = f"""
[dataset]
provenance = synthetic
interactions = {root / 'data' / 'interactions.tsv'}
profiles = {root / 'data' / 'profiles.tsv'}

[model]
factors = 12
iterations = 6
seed = 42

[evaluation]
scheme = partition
folds = 4
depth = 60
seed = 7

[ebm]
max_rounds = 200
bags = 4
seed = 11

[output]
dir = {root / 'out'}
threads = 2
"""
    config_path = root / "audit.ini"
    config_path.write_text(config_text)
    config = load_config(config_path)
    audit = run_audit(config)
    return config_path, config, audit, truth


class TestConfig:
    def test_defaults_match_protocol(self):
        config = load_config(None)
        assert config.model.factors == 50
        assert config.model.regularization == 0.01
        assert config.model.iterations == 30
        assert config.evaluation.folds == 5
        assert config.evaluation.holdout_fraction == 0.2
        assert config.evaluation.depth == 1000
        assert config.evaluation.sample_size == 5000
        assert config.evaluation.rbp_persistence == 0.85
        assert config.grouping.age_brackets == (1, 18, 25, 35, 45, 50, 56)
        assert config.ebm.learning_rate == 0.01
        assert config.ebm.bags == 8

    def test_missing_file_rejected(self):
        with pytest.raises(ConfigError):
            load_config("/nonexistent/audit.ini")

    def test_bad_values_rejected(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("[model]\nfactors = banana\n")
        with pytest.raises(ConfigError):
            load_config(bad)
        bad.write_text("[evaluation]\nholdout_fraction = 1.5\n")
        with pytest.raises(ConfigError):
            load_config(bad)
        bad.write_text("[dataset]\nprovenance = mystery\n")
        with pytest.raises(ConfigError):
            load_config(bad)

    def test_seed_override(self):
        config = apply_overrides(load_config(None), seed=100)
        assert config.model.seed == 100
        assert config.evaluation.seed == 101
        assert config.ebm.seed == 102

    def test_hash_stable_and_sensitive(self):
        a = load_config(None)
        b = load_config(None)
        assert a.config_hash() == b.config_hash()
        c = apply_overrides(a, seed=123)
        assert c.config_hash() != a.config_hash()

    def test_scheme_resolution(self, tmp_path):
        ini = tmp_path / "c.ini"
        ini.write_text("[dataset]\nprovenance = ml1m\n")
        assert load_config(ini).resolved_fold_scheme() == "partition"
        ini.write_text("[dataset]\nprovenance = lfm360k\n")
        assert load_config(ini).resolved_fold_scheme() == "sample"


class TestCrossTab:
    def test_columns_sum_to_100(self):
        rows = bucket_integer_values("pop", {f"u{i}": i % 5 for i in range(40)},
                                     merge_at=13)
        cols = bucket_categorical("g", {f"u{i}": ("a" if i < 25 else "b")
                                        for i in range(40)})
        tab = build_crosstab(rows, cols)
        for col in tab.col_labels:
            assert sum(tab.percentages[col].values()) == 100

    def test_uneven_shares_still_sum_100(self, rng):
        rows = bucket_integer_values(
            "pop", {f"u{i}": int(v) for i, v in enumerate(rng.integers(0, 7, 97))},
            merge_at=13)
        cols = bucket_categorical(
            "g", {f"u{i}": str(v) for i, v in enumerate(rng.integers(0, 3, 97))})
        tab = build_crosstab(rows, cols)
        for col in tab.col_labels:
            assert sum(tab.percentages[col].values()) == 100

    def test_empty_column_no_division_error(self):
        # ghost has no pop bucket, so the N/A gender column counts nobody
        rows = bucket_integer_values("pop", {"u0": 1, "u1": 2, "ghost": None},
                                     merge_at=13)
        cols = bucket_categorical("g", {"u0": "a", "u1": "a", "ghost": None})
        tab = build_crosstab(rows, cols)
        assert tab.col_totals["N/A"] == 0
        assert sum(tab.percentages["N/A"].values()) == 0
        assert sum(tab.percentages["a"].values()) == 100


class TestAuditEndToEnd:
    def test_planted_gap_flagged(self, small_audit):
        _, config, audit, truth = small_audit
        gender = audit.schemes["gender"]
        assert gender.kw["ndcg"] is not None
        assert gender.kw["ndcg"].p_value < 0.01
        assert gender.means["ndcg"]["m"] > gender.means["ndcg"]["f"]

    def test_control_scheme_quiet(self, small_audit):
        _, config, audit, _ = small_audit
        control = audit.schemes["last_digit"]
        assert control.kw["ndcg"] is not None
        assert control.kw["ndcg"].p_value > 0.05

    def test_all_output_files_exist(self, small_audit):
        _, config, audit, _ = small_audit
        out = Path(config.output.dir)
        for name in ("metrics_per_user.csv", "group_summary.csv",
                     "stats_summary.csv", "ebm_importance.csv",
                     "ebm_solo_importance.csv", "ebm_shapes.csv",
                     "manifest.json"):
            assert (out / name).exists(), name
        assert (out / "charts" / "gender.svg").exists()
        assert (out / "crosstab_usage_by_gender.csv").exists()

    def test_group_summary_matches_per_user_csv(self, small_audit):
        # spreadsheet oracle: recompute group means from the per-user CSV
        _, config, audit, _ = small_audit
        out = Path(config.output.dir)
        frame = MetricFrame.from_csv(out / "metrics_per_user.csv")
        means = frame.per_user_mean("ndcg")
        gender = audit.schemes["gender"]
        with open(out / "group_summary.csv", newline="") as fh:
            rows = [r for r in csv.DictReader(fh)
                    if r["scheme"] == "gender" and r["group"] == "m"]
        assert len(rows) == 1
        members = [uid for uid in gender.assignment.members("m") if uid in means]
        expected = sum(means[u] for u in members) / len(members)
        assert float(rows[0]["mean_ndcg"]) == pytest.approx(expected, abs=1e-12)
        assert int(rows[0]["n_tested"]) == len(members)

    def test_stats_csv_structure(self, small_audit):
        _, config, audit, _ = small_audit
        out = Path(config.output.dir)
        with open(out / "stats_summary.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert {r["metric"] for r in rows} == {"ndcg", "mrr", "rbp"}
        for r in rows:
            if r["H"]:
                assert float(r["p_bonferroni"]) >= float(r["p"]) - 1e-15
                assert float(r["p_bonferroni"]) <= 1.0

    def test_manifest_records_seeds_and_hash(self, small_audit):
        import json
        _, config, audit, _ = small_audit
        out = Path(config.output.dir)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config_hash"] == config.config_hash()
        assert manifest["seeds"]["model"] == 42
        assert manifest["seeds"]["evaluation"] == 7
        assert str(0) in {str(k) for k in manifest["seeds"]["per_fold_model"]}
        assert manifest["dataset"]["n_users"] == 240

    def test_rerun_identical_bytes(self, small_audit, tmp_path):
        config_path, config, _, _ = small_audit
        rerun = apply_overrides(load_config(config_path), out=str(tmp_path / "rerun"))
        run_audit(rerun)
        base = Path(config.output.dir)
        for name in ("metrics_per_user.csv", "group_summary.csv",
                     "stats_summary.csv", "ebm_importance.csv"):
            assert (tmp_path / "rerun" / name).read_bytes() == \
                (base / name).read_bytes(), name

    def test_ebm_importance_has_expected_features(self, small_audit):
        _, config, audit, _ = small_audit
        features = [name for name, _ in audit.ebm_importance]
        assert set(features) == {"age", "gender", "usage", "pop_index", "last_digit"}


@pytest.fixture(scope="module")
def country_audit(tmp_path_factory):
    """Hand-built LFM-format dataset with countries and a GDP table."""
    root = tmp_path_factory.mktemp("country")
    rng = np.random.default_rng(31)
    countries = ["Aland", "Borduria", "Cascadia", "Dorne"]
    gdp = {"Aland": 50000.0, "Borduria": 2000.0, "Cascadia": 30000.0}
    weights = [0.55, 0.25, 0.15, 0.05]
    with open(root / "interactions.tsv", "w") as ifh, \
            open(root / "profiles.tsv", "w") as pfh:
        for u in range(180):
            country = countries[int(rng.choice(4, p=weights))]
            gender = "m" if rng.random() < 0.5 else "f"
            items = rng.choice(60, size=int(rng.integers(12, 25)),
                               replace=False)
            for i in items:
                ifh.write(f"{u}\titem{i}\tItem {i}\t{1 + int(rng.poisson(2))}\n")
            pfh.write(f"{u}\t{gender}\t{int(rng.integers(18, 60))}\t{country}\t\n")
    gdp_path = root / "gdp.csv"
    gdp_path.write_text("country,gdp_per_capita\n" +
                        "".join(f"{c},{g}\n" for c, g in gdp.items()))
    ini = root / "audit.ini"
    ini.write_text(f"""
[dataset]
provenance = synthetic
interactions = {root / 'interactions.tsv'}
profiles = {root / 'profiles.tsv'}
gdp_table = {gdp_path}
[model]
factors = 8
iterations = 4
[evaluation]
scheme = partition
folds = 3
depth = 40
[ebm]
max_rounds = 100
bags = 2
[output]
dir = {root / 'out'}
""")
    return run_audit(load_config(ini))


class TestCountrySchemes:
    def test_both_country_schemes_present(self, country_audit):
        assert "country_prevalence" in country_audit.schemes
        assert "country_gdp" in country_audit.schemes

    def test_prevalence_buckets_ordered_low_to_high(self, country_audit):
        scheme = country_audit.schemes["country_prevalence"]
        assert scheme.assignment.non_na_labels() == ["low", "medium", "high"]
        sizes = scheme.assignment.sizes()
        # the dominant country alone should land in "high"
        assert sizes["high"] >= sizes["low"]

    def test_gdp_scheme_sends_unlisted_country_to_na(self, country_audit):
        scheme = country_audit.schemes["country_gdp"]
        sizes = scheme.assignment.sizes()
        assert sizes.get("N/A", 0) > 0  # Dorne has no GDP entry

    def test_country_features_reach_the_explainer(self, country_audit):
        features = {name for name, _ in country_audit.ebm_importance}
        assert "country_prevalence" in features
        assert "country_gdp" in features

    def test_country_crosstabs_emitted(self, country_audit):
        assert "usage_by_country_prevalence" in country_audit.crosstabs
        tab = country_audit.crosstabs["usage_by_country_prevalence"]
        for col in tab.col_labels:
            total = sum(tab.percentages[col].values())
            assert total == 100 or tab.col_totals[col] == 0


class TestFailureHandling:
    def test_missing_data_aborts_with_stage(self, tmp_path):
        ini = tmp_path / "c.ini"
        ini.write_text(f"[dataset]\nprovenance = synthetic\n"
                       f"interactions = {tmp_path}/nope.tsv\n"
                       f"[output]\ndir = {tmp_path}/out\n")
        with pytest.raises(Exception, match="stage ingest"):
            run_audit(load_config(ini))

    def test_partial_outputs_removed_on_failure(self, tmp_path, monkeypatch):
        truth = generate_planted(tmp_path / "data", n_users=60, n_items=40, seed=2)
        ini = tmp_path / "c.ini"
        ini.write_text(f"""
[dataset]
provenance = synthetic
interactions = {tmp_path / 'data' / 'interactions.tsv'}
profiles = {tmp_path / 'data' / 'profiles.tsv'}
[model]
factors = 4
iterations = 2
[evaluation]
scheme = partition
folds = 2
depth = 20
[ebm]
max_rounds = 20
bags = 2
[output]
dir = {tmp_path / 'out'}
""")

        def boom(report, out_dir):
            raise DataError("chart stage exploded")

        monkeypatch.setattr(report_mod, "emit_charts", boom)
        with pytest.raises(DataError, match="stage emit"):
            run_audit(load_config(ini))
        assert not (tmp_path / "out" / "metrics_per_user.csv").exists()
        assert not (tmp_path / "out" / "group_summary.csv").exists()


class TestCharts:
    def read_rects(self, svg_text, panel_index=0):
        root = ET.fromstring(svg_text)
        ns = {"svg": "http://www.w3.org/2000/svg"}
        return root.findall(".//svg:rect", ns)

    def test_single_group_no_crash(self):
        from recaudit.charts import render_scheme_chart
        svg = render_scheme_chart("solo", ["only"], [5], [0.5], [0.0], None,
                                  "not testable")
        assert "<svg" in svg and "solo" in svg

    def test_bar_heights_proportional_to_means(self, small_audit):
        _, config, audit, _ = small_audit
        svg_text = (Path(config.output.dir) / "charts" / "gender.svg").read_text()
        rects = self.read_rects(svg_text)
        by_label = {}
        for rect in rects:
            label = rect.get("data-label")
            by_label.setdefault(label, []).append(rect)
        gender = audit.schemes["gender"]
        # second rect per label is the mean-NDCG panel
        h_m = float(by_label["m"][1].get("height"))
        h_f = float(by_label["f"][1].get("height"))
        ratio = gender.means["ndcg"]["m"] / gender.means["ndcg"]["f"]
        assert h_m / h_f == pytest.approx(ratio, rel=0.01)
        assert float(by_label["m"][1].get("data-value")) == \
            pytest.approx(gender.means["ndcg"]["m"], abs=1e-12)

    def test_annotation_matches_significance(self, small_audit):
        _, config, audit, _ = small_audit
        charts_dir = Path(config.output.dir) / "charts"
        gender_svg = (charts_dir / "gender.svg").read_text()
        assert "p &lt; 0.01" in gender_svg
        control_svg = (charts_dir / "last_digit.svg").read_text()
        assert "p &lt; 0.01" not in control_svg
        assert "p = " in control_svg

    def test_whiskers_present(self, small_audit):
        _, config, _, _ = small_audit
        svg_text = (Path(config.output.dir) / "charts" / "gender.svg").read_text()
        assert 'class="whisker"' in svg_text
