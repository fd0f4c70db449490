import math

import numpy as np
import pytest

from pivotnet.errors import DataError
from pivotnet.evaluation import (
    SCORE_BIN_EDGES,
    ConditionalDensity,
    ams_scan,
    write_ams_csv,
    write_density_csv,
    write_summary_kv,
)
from pivotnet.datasets import Sample
from pivotnet.nets import init_params
from pivotnet.reporting import (
    plot_ams_scan,
    plot_score_densities,
    plot_training_curves,
    read_ams_csv,
    read_density_csv,
    read_summary_kv,
    render_report,
)
from pivotnet.training import IterationRecord, RunMetrics, write_metrics_csv


def example_densities():
    rng = np.random.default_rng(2)
    return [
        ConditionalDensity(z, SCORE_BIN_EDGES, rng.dirichlet(np.ones(50)))
        for z in (-1.0, 0.0, 1.0)
    ]


def example_scan():
    rng = np.random.default_rng(3)
    samples = [
        Sample(x=rng.normal(size=2), y=int(i % 2), z=0.0, weight=1.0) for i in range(400)
    ]
    f = init_params((2, 4, 1), ("tanh", "sigmoid"), seed=0)
    return ams_scan(f, samples, np.linspace(0.0, 1.0, 21))


def example_metrics():
    records = [
        IterationRecord(iteration=i, loss_f=0.7 - 0.01 * i, loss_r=1.4, e_lambda=0.7 - 0.01 * i - 1.4)
        for i in range(1, 21)
    ]
    return RunMetrics(records=records)


def test_density_csv_roundtrip(tmp_path):
    densities = example_densities()
    path = tmp_path / "densities.csv"
    write_density_csv(densities, path)
    back = read_density_csv(path)
    assert sorted(back) == [-1.0, 0.0, 1.0]
    for d in densities:
        edges, masses = back[d.z_value]
        np.testing.assert_array_equal(edges, d.bin_edges)
        np.testing.assert_array_equal(masses, d.bin_masses)


def test_density_csv_schema_checked(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(DataError):
        read_density_csv(path)


def test_ams_csv_roundtrip_with_undefined_cells(tmp_path):
    scan = example_scan()
    path = tmp_path / "ams.csv"
    write_ams_csv(scan, path)
    thresholds, ams_values = read_ams_csv(path)
    np.testing.assert_array_equal(thresholds, scan.thresholds)
    for got, want in zip(ams_values, scan.ams_values):
        if math.isnan(want):
            assert math.isnan(got)
        else:
            assert got == want
    # a high-enough threshold empties the selection: at least one NaN cell
    assert any(math.isnan(v) for v in ams_values)


def test_ams_csv_schema_checked(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("threshold,ams\n0.0,1.0\n")
    with pytest.raises(DataError):
        read_ams_csv(path)


def test_summary_roundtrip(tmp_path):
    path = tmp_path / "summary.txt"
    write_summary_kv({"lambda": 50.0, "max_ks": 0.031, "note": "a = b"}, path)
    back = read_summary_kv(path)
    assert back["lambda"] == "50.0"
    assert back["max_ks"] == "0.031"
    assert back["note"] == "a = b"  # only the first separator splits


def test_summary_malformed_rejected(tmp_path):
    path = tmp_path / "summary.txt"
    path.write_text("just words without separator\n")
    with pytest.raises(DataError):
        read_summary_kv(path)


def test_plots_write_svg(tmp_path):
    metrics_path = tmp_path / "metrics.csv"
    write_metrics_csv(example_metrics(), metrics_path)
    from pivotnet.training import read_metrics_csv

    curves = tmp_path / "curves.svg"
    plot_training_curves(read_metrics_csv(metrics_path), curves, lam=1.0, h_y_given_x=0.45)
    dens = tmp_path / "densities.svg"
    plot_score_densities(
        {d.z_value: (d.bin_edges, d.bin_masses) for d in example_densities()}, dens
    )
    scan = example_scan()
    amsfig = tmp_path / "ams.svg"
    plot_ams_scan(scan.thresholds, scan.ams_values, amsfig)
    for path in (curves, dens, amsfig):
        body = path.read_text()
        assert body.lstrip().startswith("<?xml")
        assert "</svg>" in body


def test_render_report_full_run_dir(tmp_path):
    run = tmp_path / "run"
    run.mkdir()
    write_metrics_csv(example_metrics(), run / "metrics.csv")
    write_summary_kv({"lambda": 1.0, "h_y_given_x": 0.4485}, run / "summary.txt")
    write_density_csv(example_densities(), run / "densities.csv")
    write_density_csv(example_densities(), run / "densities_pretrain.csv")
    write_ams_csv(example_scan(), run / "ams.csv")

    written = render_report(run)
    names = sorted(p.name for p in written)
    assert names == [
        "ams.svg",
        "densities.svg",
        "densities_pretrain.svg",
        "training_curves.svg",
    ]
    assert all(p.exists() for p in written)


def test_render_report_partial_run_dir(tmp_path):
    run = tmp_path / "run"
    run.mkdir()
    write_metrics_csv(example_metrics(), run / "metrics.csv")
    write_summary_kv({"lambda": 0.0}, run / "summary.txt")
    written = render_report(run)
    assert [p.name for p in written] == ["training_curves.svg"]


def test_render_report_separate_out_dir(tmp_path):
    run = tmp_path / "run"
    run.mkdir()
    write_metrics_csv(example_metrics(), run / "metrics.csv")
    write_summary_kv({"lambda": 0.0}, run / "summary.txt")
    out = tmp_path / "figures"
    written = render_report(run, out_dir=out)
    assert written == [out / "training_curves.svg"]
    assert (out / "training_curves.svg").exists()


def test_render_report_requires_completed_run(tmp_path):
    run = tmp_path / "not_a_run"
    run.mkdir()
    with pytest.raises(DataError, match="not_a_run"):
        render_report(run)
