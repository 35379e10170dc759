import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from idscaling import cli, io, reports
from idscaling.experiments import (
    ConfigError,
    config_hash,
    load_config,
    resume,
    run_experiment,
    validate_config,
)
from idscaling.rng import derive_seed


def mini_sweep_config(**overrides):
    cfg = {
        "schema_version": 1,
        "kind": "ts_sweep",
        "seed": 42,
        "teacher": {"shape": [8, 16, 16, 2], "feature_counts": [3]},
        "students": {"widths": [4, 6, 8, 12], "depths": [2]},
        "training": {
            "segments": [[1500, 50, 0.01], [500, 50, 0.001]],
            "loss_kind": "cross_entropy_logits",
            "eval_samples": 4000,
            "trace_every": 25,
        },
        "trials": {"count": 2, "keep": 2, "aggregation": "keep_lowest"},
        "id_measurement": {"k_values": [2], "vector_count": 400, "sizes": "prefix_top3"},
        "fit": {"apply_hull": True, "loss_threshold": 1e-9, "n_min": None},
    }
    cfg.update(overrides)
    return cfg


def tree_bytes(root: Path, exclude=("run_record.json", "manifest.json")):
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name not in exclude
    }


# -- config validation ----------------------------------------------------------


def test_config_rejects_bad_schema_version():
    with pytest.raises(ConfigError, match="schema_version"):
        validate_config({"schema_version": 99, "kind": "ts_sweep", "seed": 1})


def test_config_rejects_unknown_kind():
    with pytest.raises(ConfigError, match="kind"):
        validate_config({"schema_version": 1, "kind": "nope", "seed": 1})


def test_config_collects_multiple_problems():
    with pytest.raises(ConfigError) as err:
        validate_config({"schema_version": 1, "kind": "ts_sweep", "seed": "x"})
    message = str(err.value)
    assert "seed" in message and "teacher" in message


def test_config_validates_trials_block():
    cfg = mini_sweep_config(trials={"count": 2, "keep": 3, "aggregation": "keep_lowest"})
    with pytest.raises(ConfigError, match="trials.keep"):
        validate_config(cfg)


def test_config_hash_ignores_location_and_workers():
    a = validate_config(mini_sweep_config()).data
    b = validate_config(mini_sweep_config(output_dir="/elsewhere", workers=7)).data
    assert config_hash(a) == config_hash(b)
    c = validate_config(mini_sweep_config(seed=43)).data
    assert config_hash(a) != config_hash(c)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.json")


def test_load_config_bad_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(path)


# -- seed derivation ---------------------------------------------------------------


def test_unit_seeds_stable_under_grid_growth():
    # the seed of a unit depends only on the master seed and its coordinates
    seeds_small = {
        (w, t): derive_seed(42, "student_train", "k2", w, 2, t)
        for w in (4, 8) for t in range(2)
    }
    seeds_large = {
        (w, t): derive_seed(42, "student_train", "k2", w, 2, t)
        for w in (4, 8, 16, 32) for t in range(3)
    }
    for key, value in seeds_small.items():
        assert seeds_large[key] == value


def test_derive_seed_fits_int64():
    assert 0 <= derive_seed(2**62, "x", 10**9) < 2**63


# -- pipeline behaviors ---------------------------------------------------------------


@pytest.fixture(scope="module")
def sweep_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep_run")
    config = validate_config(mini_sweep_config())
    record = run_experiment(config, output_dir=out, workers=1)
    return out, config, record


def test_run_produces_units_curves_fits(sweep_run):
    out, config, record = sweep_run
    assert len(record.units) == 8  # 4 widths x 2 trials
    assert "k3" in record.curves and "k3" in record.fits
    assert (out / "curves/k3.csv").exists()
    assert (out / "fits/k3.json").exists()
    assert record.summary["k3"]["d_hat"] is not None


def test_manifest_lists_every_file_with_valid_checksums(sweep_run):
    out, config, record = sweep_run
    manifest = io.read_json(out / "manifest.json")
    on_disk = {
        p.relative_to(out).as_posix()
        for p in out.rglob("*")
        if p.is_file() and p.name != "manifest.json"
    }
    assert set(manifest["files"]) == on_disk
    for rel, digest in manifest["files"].items():
        assert io.sha256_file(out / rel) == digest


def test_record_units_traceable(sweep_run):
    out, config, record = sweep_run
    for unit in record.units:
        assert unit["seed"] == derive_seed(
            42, "student_train", unit["label"], unit["width"], unit["depth"], unit["trial"]
        )
        assert (out / unit["checkpoint_path"]).exists()


def test_rerun_identical_config_is_noop_and_identical(sweep_run):
    out, config, record = sweep_run
    before = tree_bytes(out)
    mtimes = {p: p.stat().st_mtime_ns for p in out.rglob("*") if p.is_file()}
    record2 = run_experiment(config, output_dir=out, workers=2)
    assert tree_bytes(out) == before
    # training artifacts not rewritten
    for p, t in mtimes.items():
        if p.name not in ("run_record.json", "manifest.json"):
            assert p.stat().st_mtime_ns == t
    assert record2.summary == record.summary


def test_differing_config_refused_with_diff(sweep_run):
    out, config, record = sweep_run
    other = validate_config(mini_sweep_config(seed=1042))
    with pytest.raises(ConfigError, match="seed"):
        run_experiment(other, output_dir=out)


def test_resume_requires_manifest(tmp_path):
    with pytest.raises(ConfigError, match="manifest"):
        resume(tmp_path)


def test_deleted_analysis_restored_byte_identically(sweep_run):
    out, config, record = sweep_run
    fit_path = out / "fits/k3.json"
    before = fit_path.read_bytes()
    fit_path.unlink()
    resume(out)
    assert fit_path.read_bytes() == before


def test_corrupt_checkpoint_retrained_others_untouched(sweep_run):
    out, config, record = sweep_run
    target = out / "students/k3/w4_d2_t0.json"
    other = out / "students/k3/w6_d2_t1.json"
    before_target = target.read_bytes()
    other_mtime = other.stat().st_mtime_ns
    target.write_text("garbage")
    resume(out)
    assert target.read_bytes() == before_target
    assert other.stat().st_mtime_ns == other_mtime


def test_two_directories_byte_identical(tmp_path):
    config = validate_config(mini_sweep_config())
    a, b = tmp_path / "a", tmp_path / "b"
    run_experiment(config, output_dir=a, workers=1)
    run_experiment(config, output_dir=b, workers=2)
    assert tree_bytes(a) == tree_bytes(b)


def test_single_size_gives_point_and_id_but_no_fit(tmp_path):
    cfg = mini_sweep_config()
    cfg["students"]["widths"] = [6]
    record = run_experiment(validate_config(cfg), output_dir=tmp_path / "one", workers=1)
    assert "k3" in record.curves
    assert record.fits == {}
    assert any(e["label"] == "k3" for e in record.estimates)
    assert "alpha" not in record.summary["k3"]


def test_mean_excluding_worst_aggregation(tmp_path):
    cfg = mini_sweep_config()
    cfg["trials"] = {"count": 3, "keep": 2, "aggregation": "mean_excluding_worst"}
    cfg["students"]["widths"] = [4, 6]
    record = run_experiment(validate_config(cfg), output_dir=tmp_path / "agg", workers=1)
    curve = io.read_curve_csv(tmp_path / "agg" / "curves/k3.csv")
    assert len(curve) == 2  # one aggregated point per size
    kept = {}
    for unit in record.units:
        if not unit.get("diverged"):
            kept.setdefault(unit["width"], []).append(unit["final_kl"])
    for i, width in enumerate(sorted(kept)):
        expected = float(np.mean(sorted(kept[width])[:2]))
        assert curve.loss[list(curve.width).index(width)] == pytest.approx(expected, rel=1e-12)


def test_keep_lowest_drops_worst_trial(tmp_path):
    cfg = mini_sweep_config()
    cfg["trials"] = {"count": 3, "keep": 2, "aggregation": "keep_lowest"}
    cfg["students"]["widths"] = [4]
    record = run_experiment(validate_config(cfg), output_dir=tmp_path / "keep", workers=1)
    curve = io.read_curve_csv(tmp_path / "keep" / "curves/k3.csv")
    assert len(curve) == 2
    metrics = sorted(u["final_kl"] for u in record.units)
    assert sorted(curve.loss.tolist()) == pytest.approx(metrics[:2], rel=1e-12)


def test_divergent_unit_recorded_and_skipped(tmp_path):
    cfg = mini_sweep_config()
    cfg["kind"] = "ts_sweep"
    cfg["teacher"] = {"shape": [6, 12, 12, 1], "feature_counts": [2]}
    cfg["students"] = {"widths": [4, 6, 8], "depths": [2], "output_dim": 1}
    cfg["training"]["loss_kind"] = "mse"
    cfg["training"]["segments"] = [[60, 8, 1e154]]  # squaring overflows to inf
    record = run_experiment(validate_config(cfg), output_dir=tmp_path / "div", workers=1)
    assert all(u["diverged"] for u in record.units)
    assert record.fits == {}  # nothing usable, but the experiment completed


def test_sweep_only_stops_before_analysis(tmp_path):
    cfg = mini_sweep_config()
    out = tmp_path / "sweeponly"
    record = run_experiment(validate_config(cfg), output_dir=out, workers=1, analysis=False)
    assert (out / "curves/k3.csv").exists()
    assert not (out / "fits").exists()
    assert record.estimates == []
    # full run afterwards reuses every trained unit
    mtimes = {p: p.stat().st_mtime_ns for p in (out / "students").rglob("*.json")}
    run_experiment(validate_config(cfg), output_dir=out, workers=1)
    assert (out / "fits/k3.json").exists()
    for p, t in mtimes.items():
        assert p.stat().st_mtime_ns == t


# -- reports ---------------------------------------------------------------------


def test_report_on_empty_dir_lists_missing(tmp_path):
    with pytest.raises(reports.ReportError, match="run_record.json, config.json"):
        reports.report(tmp_path, "fig4")


def test_report_unknown_figure(sweep_run):
    out, config, record = sweep_run
    with pytest.raises(reports.ReportError, match="unknown figure"):
        reports.report(out, "fig99")


def test_report_wrong_kind_enumerates_needs(sweep_run):
    out, config, record = sweep_run
    with pytest.raises(reports.ReportError, match="fig6 needs"):
        reports.report(out, "fig6")


def test_fig4_csv_columns(sweep_run):
    out, config, record = sweep_run
    csv_path, png_path = reports.report(out, "fig4")
    lines = csv_path.read_text().strip().split("\n")
    assert lines[0] == "label,N,L,L_fit"
    assert len(lines) > 1 and png_path.exists()
    # manifest refreshed to cover the report outputs
    manifest = io.read_json(out / "manifest.json")
    assert "reports/fig4.csv" in manifest["files"]


def test_fig16_reports_id_per_size(sweep_run):
    out, config, record = sweep_run
    csv_path, _ = reports.report(out, "fig16")
    lines = csv_path.read_text().strip().split("\n")
    assert lines[0] == "label,N,d_hat"
    assert len(lines) >= 2


# -- synthetic_id kind -----------------------------------------------------------


def test_synthetic_id_run_and_fig12(tmp_path):
    cfg = {
        "schema_version": 1,
        "kind": "synthetic_id",
        "seed": 5,
        "synthetic": {
            "manifolds": [{"family": "hypercube", "dim": 2, "n": 800}],
            "estimators": [{"method": "knn_cumulative", "k": 2},
                            {"method": "mle_unbiased", "k": 10}],
            "counts": [200, 800],
        },
    }
    out = tmp_path / "synth"
    record = run_experiment(validate_config(cfg), output_dir=out)
    assert (out / "clouds/hypercube_d2.csv").exists()
    knn = [e for e in record.estimates if e["method"] == "knn_cumulative"][0]
    assert abs(knn["d_hat"] - 2.0) < 0.5
    csv12, _ = reports.report(out, "fig12")
    assert csv12.read_text().startswith("family,dim,method,k,n_points,d_hat")
    csv13, _ = reports.report(out, "fig13")
    assert csv13.read_text().startswith("source,d_point")


# -- CLI --------------------------------------------------------------------------


def test_cli_sample_estimate_fit_roundtrip(tmp_path, capsys):
    cloud_path = tmp_path / "cloud.csv"
    assert cli.main(["sample", "--manifold", "hypercube", "--dim", "2", "--n", "400",
                     "--seed", "3", "--out", str(cloud_path)]) == 0
    est_path = tmp_path / "est.json"
    assert cli.main(["estimate-id", "--cloud", str(cloud_path), "--k", "2",
                     "--out", str(est_path)]) == 0
    est = io.read_json(est_path)
    assert est["method"] == "knn_cumulative" and 1.0 < est["d_hat"] < 3.0

    curve_path = tmp_path / "curve.csv"
    n = np.array([10, 30, 100, 300])
    with open(curve_path, "w") as fh:
        fh.write("N,L,width,depth,seed,loss_kind\n")
        for ni in n:
            fh.write(f"{ni},{20.0 * float(ni) ** -0.5!r},0,0,0,mse\n")
    fit_path = tmp_path / "fit.json"
    assert cli.main(["fit", "--curve", str(curve_path), "--threshold", "0.01",
                     "--out", str(fit_path)]) == 0
    fit = io.read_json(fit_path)
    assert fit["alpha"] == pytest.approx(0.5, abs=1e-9)
    assert fit["n_max_threshold"]["extrapolated"]


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["estimate-id", "--cloud", str(tmp_path / "missing.csv")]) == 2
    assert cli.main(["sample", "--manifold", "hypercube", "--dim", "0", "--n", "5",
                     "--seed", "1", "--out", str(tmp_path / "x.csv")]) == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["definitely-not-a-command"])
    assert exc.value.code == 1


def test_cli_run_and_resume(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    out = tmp_path / "run"
    cfg = mini_sweep_config()
    cfg["students"]["widths"] = [4, 6]
    cfg["trials"] = {"count": 1, "keep": 1, "aggregation": "keep_lowest"}
    cfg_path.write_text(json.dumps(cfg))
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert cli.main(["resume", "--run", str(out)]) == 0
    assert cli.main(["report", "--run", str(out), "--figure", "fig16"]) == 0
