import json

import numpy as np
import pytest

from vepo.experiments import (
    COMPARISON_COLUMNS,
    REPORT_COLUMNS,
    ComparisonReport,
    ExperimentReport,
    ScenarioSpec,
    SweepSpec,
    emit_report,
    mean_stderr,
    parse_report,
    run_estimator_comparison,
    run_sweep,
    run_toy_scenario,
)


@pytest.fixture(scope="module")
def small_report():
    return run_toy_scenario("mod1", 0.5, 0.1, 10, 10, n_reps=3, seed=5, n_iters=2, mc_rollouts=50)


def test_report_shape(small_report):
    assert len(small_report.rows) == 3 * 3
    assert [r["iteration"] for r in small_report.rows[:3]] == [0, 1, 2]
    first = small_report.rows[0]
    assert first["eta1_hat"] == 0.0 and first["kl"] == 0.0
    assert all(r["kl"] <= 0.1 + 1e-4 for r in small_report.rows)
    assert [r["seed"] for r in small_report.rows[::3]] == [5, 6, 7]


def test_report_csv_roundtrip(tmp_path, small_report):
    path = emit_report(small_report, tmp_path / "r.csv")
    header = path.read_text().splitlines()[0].split(",")
    assert header == REPORT_COLUMNS
    back = parse_report(path)
    assert back.rows == small_report.rows
    summary = json.loads((tmp_path / "r.json").read_text())
    assert len(summary) == 3 and summary[0]["iteration"] == 0


def test_report_deterministic(small_report):
    again = run_toy_scenario("mod1", 0.5, 0.1, 10, 10, n_reps=3, seed=5, n_iters=2, mc_rollouts=50)
    assert again.rows == small_report.rows


def test_empty_report_writes_header(tmp_path):
    emit_report(ExperimentReport(), tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == ",".join(REPORT_COLUMNS) + "\n"
    assert json.loads((tmp_path / "e.json").read_text()) == []


def test_unwritable_path(tmp_path, small_report):
    with pytest.raises(OSError):
        emit_report(small_report, tmp_path / "missing" / "r.csv")


def test_summary_band(small_report):
    entry = small_report.summary()[-1]
    v = small_report.values("value_exact", iteration=2)
    m, se = mean_stderr(v)
    assert entry["value_exact"]["mean"] == m
    assert np.isclose(entry["value_exact"]["upper"] - entry["value_exact"]["lower"], 2 * 1.96 * se)


def test_mean_stderr_edge_cases():
    assert mean_stderr([2.0]) == (2.0, 0.0)
    m, se = mean_stderr([])
    assert np.isnan(m) and np.isnan(se)


def test_specs_validate():
    with pytest.raises(ValueError):
        ScenarioSpec("mod7")
    with pytest.raises(ValueError):
        SweepSpec(kappas=())
    with pytest.raises(ValueError):
        SweepSpec(n_replications=0)


def test_sweep_concatenates():
    sweep = SweepSpec(scenarios=("origin",), kappas=(0.5, 0.8), sizes=((6, 6),), n_replications=1, n_iters=1)
    rep = run_sweep(sweep, mc_rollouts=10)
    assert sorted({r["kappa"] for r in rep.rows}) == [0.5, 0.8]
    assert len(rep.rows) == 4


def test_comparison_report(tmp_path):
    rep = run_estimator_comparison([(10, 10)], ["origin", "mod3"], n_reps=3, seed=0)
    assert len(rep.rows) == 8
    assert abs(rep.oracle - (-0.14185)) < 1e-4
    row = rep.row("triply_robust", "origin", 10, 10)
    assert row["bias_vs_oracle"] == row["mean"] - rep.oracle
    rep.to_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0].split(",") == COMPARISON_COLUMNS
    assert ComparisonReport.read_csv(tmp_path / "c.csv") == rep.rows
    with pytest.raises(KeyError):
        rep.row("is3", "origin", 10, 10)
