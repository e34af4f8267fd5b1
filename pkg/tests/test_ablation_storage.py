"""Tests for the ablation driver and the SQLite run registry."""
import math
import os
import tempfile

import pytest

from app.ablation import (
    AblationEntry,
    AblationReport,
    coverage_drop,
    preset_configs,
    report_from_storage,
    run_ablation,
)
from app.core import ConfigError
from app.storage import Storage

TINY = {
    "d_hidden": [8],
    "g_hidden": [8],
    "batch_real": 8,
    "batch_fake": 8,
    "total_cycles": 6,
    "metrics_every": 3,
    "metric_samples": 64,
}


@pytest.fixture
def db():
    s = Storage(os.path.join(tempfile.mkdtemp(prefix="ganlab_db_"), "runs.db"))
    yield s
    s.close()


def _entry(variant, seed, coverage, verdict="converged"):
    return AblationEntry(
        variant=variant, seed=seed, verdict=verdict, coverage=coverage, n_modes=8,
        hq_fraction=0.9, hist_js=0.2, d_loss=1.0, g_loss=1.5, saturated_at=None,
    )


def _run_kwargs(**over):
    return dict(
        preset="default", variant="softmax", seed=0, config={"seed": 0}, verdict="converged",
        coverage=8, n_modes=8, hq_fraction=0.95, hist_js=0.1, d_loss=2.1, g_loss=4.9,
        saturated_at=None, **over,
    )


# ── Storage ─────────────────────────────────────────────────────────────────

def test_schema_is_migrated(db):
    assert db._conn.execute("PRAGMA user_version").fetchone()[0] == 2


def test_reopening_an_existing_database(db):
    db.record_run(**_run_kwargs())
    again = Storage(db.path)
    try:
        assert len(again.list_runs()) == 1
    finally:
        again.close()


def test_record_run_upserts_on_same_config(db):
    db.record_run(**_run_kwargs(finished_ts=100))
    db.record_run(**{**_run_kwargs(finished_ts=200), "coverage": 5, "verdict": "converged"})
    rows = db.list_runs()
    assert len(rows) == 1
    assert rows[0]["coverage"] == 5
    assert rows[0]["finished_ts"] == 200
    assert rows[0]["config"] == {"seed": 0}


def test_non_finite_metrics_are_stored_as_null(db):
    db.record_run(**{**_run_kwargs(), "verdict": "diverged", "d_loss": math.nan, "g_loss": math.inf})
    row = db.list_runs()[0]
    assert row["d_loss"] is None and row["g_loss"] is None
    assert row["hq_fraction"] == pytest.approx(0.95)


def test_list_runs_filters_and_orders(db):
    for variant in ("softmax", "baseline"):
        for seed in (2, 0, 1):
            db.record_run(**{**_run_kwargs(), "variant": variant, "seed": seed, "config": {"seed": seed}})
    db.record_run(**{**_run_kwargs(), "preset": "ratio-5-1"})
    rows = db.list_runs(preset="default")
    assert [(r["variant"], r["seed"]) for r in rows] == [
        ("baseline", 0), ("baseline", 1), ("baseline", 2),
        ("softmax", 0), ("softmax", 1), ("softmax", 2),
    ]
    assert len(db.list_runs(variant="softmax")) == 4
    assert len(db.list_runs(limit=2)) == 2


def test_checks_round_trip(db):
    results = [
        {"name": "mle_loss", "value": 1e-14, "tolerance": 1e-12, "pass": True},
        {"name": "kl_nonneg", "value": math.nan, "tolerance": 0.0, "pass": False},
    ]
    assert db.record_checks("theory", results, ts=7) == 2
    db.record_checks("gradient", results[:1], ts=8)
    rows = db.list_checks("theory")
    assert [r["name"] for r in rows] == ["mle_loss", "kl_nonneg"]
    assert rows[0]["pass"] is True and rows[1]["pass"] is False
    assert rows[1]["value"] is None
    assert len(db.list_checks()) == 3


# ── Reports ─────────────────────────────────────────────────────────────────

def test_report_is_keyed_by_variant_and_seed():
    report = AblationReport(preset="default")
    report.add(_entry("softmax", 1, 8))
    report.add(_entry("baseline", 1, 2, verdict="collapsed"))
    report.add(_entry("softmax", 0, 6))
    report.add(_entry("softmax", 0, 7))
    assert report.seeds == [0, 1]
    assert len(report.entries) == 3
    assert report.mean_coverage("softmax") == pytest.approx(7.5)
    assert report.mean_coverage("baseline") == pytest.approx(2.0)
    assert report.verdict_counts("baseline") == {"collapsed": 1}
    d = report.to_dict()
    assert [(r["variant"], r["seed"]) for r in d["runs"]] == [("baseline", 1), ("softmax", 0), ("softmax", 1)]
    table = report.format_table()
    assert "preset: default" in table
    assert "2/8" in table and "collapsed" in table


def test_coverage_drop_per_variant():
    r51, r15 = AblationReport("ratio-5-1"), AblationReport("ratio-1-5")
    r51.add(_entry("softmax", 0, 8))
    r51.add(_entry("baseline", 0, 7))
    r15.add(_entry("softmax", 0, 7))
    r15.add(_entry("baseline", 0, 2))
    assert coverage_drop(r51, r15) == {"softmax": 1.0, "baseline": 5.0}


def test_preset_configs_pair_variants_over_seeds():
    configs = preset_configs("ratio-1-5", [3, 4], total_cycles=10)
    assert [(c.loss_variant, c.seed) for c in configs] == [
        ("softmax", 3), ("softmax", 4), ("baseline", 3), ("baseline", 4),
    ]
    assert all(c.g_steps == 5 and c.total_cycles == 10 for c in configs)
    soft, base = configs[0], configs[2]
    assert soft.to_dict() | {"loss_variant": "baseline"} == base.to_dict()


def test_unknown_preset_is_a_config_error():
    with pytest.raises(ConfigError) as exc:
        preset_configs("dcgan", [0])
    assert exc.value.field == "preset"


# ── run_ablation ────────────────────────────────────────────────────────────

def test_ratio_preset_produces_six_runs(db):
    out = tempfile.mkdtemp(prefix="ganlab_abl_")
    report = run_ablation("ratio-5-1", seeds=[0, 1, 2], workers=1, out_dir=out, storage=db, **TINY)
    assert len(report.entries) == 6
    assert report.seeds == [0, 1, 2]
    for entry in report.entries.values():
        assert entry.verdict in ("converged", "collapsed", "diverged")
        assert os.path.exists(os.path.join(out, f"{entry.variant}-seed{entry.seed}", "log.csv"))
    assert len(db.list_runs(preset="ratio-5-1")) == 6

    rebuilt = report_from_storage("ratio-5-1", storage=db)
    assert set(rebuilt.entries) == set(report.entries)
    for key, entry in report.entries.items():
        assert rebuilt.entries[key].coverage == entry.coverage
        assert rebuilt.entries[key].verdict == entry.verdict
    assert rebuilt.mean_coverage("softmax") == report.mean_coverage("softmax")


def test_parallel_and_serial_reports_match(db):
    serial = run_ablation("default", seeds=[0, 1], workers=1, record=False, **TINY)
    parallel = run_ablation("default", seeds=[0, 1], workers=2, record=False, **TINY)
    assert parallel.to_dict() == serial.to_dict()
    assert db.list_runs() == []
