import json

import numpy as np
import pytest

from retroconf import cli, reporting

FAST = ["--T", "280", "--ridge", "0.1", "--bandwidth-sq", "20"]


def _run(*argv):
    return cli.main([str(a) for a in argv])


def _csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def walk_csv(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((160, 2))
    y = X[:, 0] - 0.5 * X[:, 1] + 0.3 * rng.standard_normal(160)
    return _csv(tmp_path / "data.csv", ["a", "b", "y"], zip(X[:, 0], X[:, 1], y))


# -- parsing helpers ------------------------------------------------------------


def test_parse_seeds():
    assert cli.parse_seeds("1..5") == [1, 2, 3, 4, 5]
    assert cli.parse_seeds("3") == [3]
    assert cli.parse_seeds("1,4..5") == [1, 4, 5]
    with pytest.raises(Exception):
        cli.parse_seeds("5..1")


def test_worker_count_respects_env(monkeypatch):
    monkeypatch.setenv("RETROCONF_THREADS", "2")
    assert cli.worker_count(10) == 2
    assert cli.worker_count(1) == 1
    monkeypatch.setenv("RETROCONF_THREADS", "zero")
    with pytest.raises(cli.UsageError):
        cli.worker_count(3)


def test_usage_errors_exit_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        _run("run-synthetic", "--controller", "pid")
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        _run("run-synthetic", "--seeds", "9..2")
    assert exc.value.code == 2


# -- run-synthetic ------------------------------------------------------------------


def test_row_files_header_and_layout(tmp_path, capsys):
    out = tmp_path / "out"
    assert _run("run-synthetic", "--seeds", "1..3", "--strategy", "retro_adj", "fw_krr",
                "--controller", "aci", "--out-dir", out, *FAST) == 0
    for name in ("retro_adj_aci", "fw_krr_aci"):
        run_dir = out / name
        rows = sorted(run_dir.glob("seed_*.csv"))
        assert [p.name for p in rows] == ["seed_001.csv", "seed_002.csv", "seed_003.csv"]
        first = rows[0].read_text().splitlines()
        assert first[0] == "t,strategy,controller,alpha_t,lo,hi,width,covered,beta_t"
        assert len(first) == 1 + 30
        summary = json.loads((run_dir / "summary.json").read_text())
        for key in ("mean_coverage", "mean_width", "n_infinite_width", "n_empty", "per_seed", "loc_curves_path"):
            assert key in summary
        assert [p["seed"] for p in summary["per_seed"]] == [1, 2, 3]
        assert np.isclose(summary["mean_coverage"], np.mean([p["mean_coverage"] for p in summary["per_seed"]]))
    assert "retro_adj" in capsys.readouterr().out


def test_fifty_seeds_give_fifty_row_files(tmp_path):
    out = tmp_path / "o"
    assert _run("run-synthetic", "--seeds", "1..50", "--T", "252", "--ridge", "0.1",
                "--bandwidth-sq", "20", "--controller", "aci", "--out-dir", out) == 0
    run_dir = out / "retro_adj_aci"
    assert len(list(run_dir.glob("seed_*.csv"))) == 50
    assert len(list(run_dir.glob("summary.json"))) == 1


def test_rerun_is_byte_identical_and_parallel_matches_serial(tmp_path, monkeypatch):
    args = ["run-synthetic", "--seeds", "1..3", "--controller", "dtaci", "saocp", *FAST]
    monkeypatch.setenv("RETROCONF_THREADS", "1")
    assert _run(*args, "--out-dir", tmp_path / "a") == 0
    assert _run(*args, "--out-dir", tmp_path / "b") == 0
    monkeypatch.setenv("RETROCONF_THREADS", "3")
    assert _run(*args, "--out-dir", tmp_path / "c") == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    assert files
    for rel in files:
        ref = (tmp_path / "a" / rel).read_bytes()
        assert (tmp_path / "b" / rel).read_bytes() == ref
        assert (tmp_path / "c" / rel).read_bytes() == ref


def test_infinite_and_inapplicable_cells(tmp_path):
    out = tmp_path / "o"
    # alpha_1 far below zero forces the real line on the first step
    assert _run("run-synthetic", "--alpha-1", "-0.5", "--controller", "aci", "agaci",
                "--out-dir", out, *FAST) == 0
    aci = (out / "retro_adj_aci" / "seed_001.csv").read_text().splitlines()[1].split(",")
    assert aci[4:7] == ["-inf", "inf", "inf"]
    ag = (out / "retro_adj_agaci" / "seed_001.csv").read_text().splitlines()[1].split(",")
    assert ag[-1] == ""


def test_plot_writes_one_svg_per_metric(tmp_path):
    out = tmp_path / "o"
    assert _run("run-synthetic", "--plot", "--controller", "aci", "--local-window", "10", "--out-dir", out, *FAST) == 0
    svgs = sorted(p.name for p in out.glob("*.svg"))
    assert svgs == ["loc_coverage.svg", "loc_width.svg"]
    text = (out / "loc_coverage.svg").read_text()
    assert text.startswith("<?xml") and "LocCov" in text


# -- configuration ---------------------------------------------------------------------


def test_flags_override_config_override_defaults(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"alpha": 0.2, "gamma": 0.01, "controller": "aci", "ridge": 0.1,
                               "bandwidth_sq": 20, "T": 280}))
    out = tmp_path / "o"
    assert _run("run-synthetic", "--config", cfg, "--alpha", "0.15", "--out-dir", out) == 0
    record = json.loads((out / "retro_adj_aci" / "summary.json").read_text())["config"]
    assert record["alpha"] == 0.15
    assert record["gamma"] == 0.01
    assert record["window"] == 250
    first = (out / "retro_adj_aci" / "seed_001.csv").read_text().splitlines()[1].split(",")
    assert float(first[3]) == 0.15


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"bogus": 1}))
    assert _run("run-synthetic", "--config", bad) == 2
    assert "bogus" in capsys.readouterr().err
    bad.write_text(json.dumps({"controller": "pid"}))
    assert _run("run-synthetic", "--config", bad) == 2
    bad.write_text("{not json")
    assert _run("run-synthetic", "--config", bad) == 2
    assert _run("run-synthetic", "--config", tmp_path / "missing.json") == 4


# -- tune ------------------------------------------------------------------------------------


def test_tune_prints_and_persists(tmp_path, capsys):
    dest = tmp_path / "tuned.json"
    assert _run("tune", "--ridge-grid", "0.1", "1", "--out", dest) == 0
    printed = capsys.readouterr().out
    chosen = json.loads(dest.read_text())
    assert set(chosen) == {"kernel", "ridge", "bandwidth_sq"}
    assert f"ridge={chosen['ridge']:g}" in printed
    # the persisted selection is a valid config file
    out = tmp_path / "o"
    assert _run("run-synthetic", "--config", dest, "--T", "260", "--controller", "aci", "--out-dir", out) == 0
    per_seed = json.loads((out / "retro_adj_aci" / "summary.json").read_text())["per_seed"][0]
    assert per_seed["ridge"] == chosen["ridge"] and per_seed["bandwidth_sq"] == chosen["bandwidth_sq"]


def test_tune_on_csv(tmp_path, walk_csv, capsys):
    assert _run("tune", "--input", walk_csv, "--target", "y", "--t-init", "100", "--kernel", "ntk",
                "--out", tmp_path / "t.json") == 0
    assert json.loads((tmp_path / "t.json").read_text())["bandwidth_sq"] is None


# -- run-csv ---------------------------------------------------------------------------------


def test_run_csv_target_mode(tmp_path, walk_csv):
    out = tmp_path / "o"
    assert _run("run-csv", "--input", walk_csv, "--target", "y", "--t-init", "100", "--window", "50",
                "--out-dir", out) == 0
    lines = (out / "retro_adj_dtaci" / "seed_000.csv").read_text().splitlines()
    assert len(lines) == 1 + 60
    assert lines[1].startswith("101,retro_adj,dtaci,")


def test_run_csv_univariate_mode(tmp_path):
    series = np.cumsum(np.random.default_rng(1).standard_normal(200)) * 0.1
    path = _csv(tmp_path / "u.csv", ["v"], [[v] for v in series])
    out = tmp_path / "o"
    assert _run("run-csv", "--input", path, "--univariate", "v", "--lags", "3", "--t-init", "100",
                "--window", "50", "--controller", "aci", "--out-dir", out) == 0
    lines = (out / "retro_adj_aci" / "seed_000.csv").read_text().splitlines()
    assert len(lines) == 1 + 197 - 100


def test_run_csv_reports_missing_column(tmp_path, walk_csv, capsys):
    assert _run("run-csv", "--input", walk_csv, "--target", "price") == 2
    assert "price" in capsys.readouterr().err
    assert _run("run-csv", "--input", walk_csv, "--target", "y", "--features", "a,zz") == 2
    assert "zz" in capsys.readouterr().err


def test_run_csv_reports_bad_cell_line(tmp_path, capsys):
    path = _csv(tmp_path / "d.csv", ["a", "y"], [[1, 2], [3, 4], ["oops", 5]])
    assert _run("run-csv", "--input", path, "--target", "y") == 2
    err = capsys.readouterr().err
    assert "line 4" in err and "'a'" in err and "oops" in err


def test_run_csv_mode_errors(tmp_path, walk_csv):
    assert _run("run-csv", "--input", walk_csv) == 2
    assert _run("run-csv", "--input", walk_csv, "--target", "y", "--univariate", "a", "--lags", "2") == 2
    assert _run("run-csv", "--input", walk_csv, "--univariate", "a") == 2
    assert _run("run-csv", "--input", walk_csv, "--target", "y", "--lags", "2") == 2
    assert _run("run-csv", "--input", tmp_path / "none.csv", "--target", "y") == 4


def test_sort_train_asc_ordering(tmp_path):
    rng = np.random.default_rng(2)
    key = rng.permutation(20).astype(float)
    path = _csv(tmp_path / "s.csv", ["k", "y"], zip(key, rng.standard_normal(20)))
    stream = cli.csv_stream({"input": str(path), "target": "y", "sort_train_asc": "k", "t_init": 8})
    order = stream.X[:, 0]
    assert list(order[:8]) == list(range(8))
    assert list(order[8:]) == list(range(19, 7, -1))


def test_numerical_failure_exit_3(tmp_path, capsys):
    rng = np.random.default_rng(0)
    path = _csv(tmp_path / "dup.csv", ["x", "y"], [[i % 3, rng.normal()] for i in range(40)])
    code = _run("run-csv", "--input", path, "--target", "y", "--t-init", "10", "--window", "8",
                "--ridge", "1e-300", "--bandwidth-sq", "1", "--out-dir", tmp_path / "o")
    assert code == 3
    assert "numerical" in capsys.readouterr().err


# -- report ----------------------------------------------------------------------------------


def test_report_reads_runs_and_replots(tmp_path, capsys):
    out = tmp_path / "o"
    assert _run("run-synthetic", "--seeds", "1..2", "--controller", "aci", "dtaci", "--local-window", "10",
                "--out-dir", out, *FAST) == 0
    capsys.readouterr()
    assert _run("report", out, "--plot", "--out-dir", tmp_path / "plots", "--local-window", "10") == 0
    text = capsys.readouterr().out
    assert "aci" in text and "dtaci" in text
    assert (tmp_path / "plots" / "loc_width.svg").exists()
    assert _run("report", out / "retro_adj_aci" / "summary.json") == 0
    assert _run("report", tmp_path / "nowhere") == 4


def test_report_rejects_foreign_json(tmp_path):
    bogus = tmp_path / "x.json"
    bogus.write_text("{}")
    assert _run("report", bogus) == 2


def test_svg_output_is_reproducible(tmp_path):
    series = {"a": (np.arange(1, 11), np.linspace(0.8, 0.9, 10), np.linspace(1, 2, 10))}
    p1 = reporting.plot_curves(tmp_path / "1", series, 10)
    p2 = reporting.plot_curves(tmp_path / "2", series, 10)
    for a, b in zip(p1, p2):
        assert a.read_bytes() == b.read_bytes()


def test_run_csv_short_univariate_series(tmp_path):
    series = np.sin(np.arange(20) * 0.7) + 0.05 * np.arange(20)
    path = _csv(tmp_path / "short.csv", ["v"], [[v] for v in series])
    stream = cli.csv_stream({"input": str(path), "univariate": "v", "lags": 10, "t_init": 5})
    assert len(stream) == 10
    out = tmp_path / "o"
    assert _run("run-csv", "--input", path, "--univariate", "v", "--lags", "10", "--t-init", "5",
                "--controller", "aci", "--ridge", "1", "--bandwidth-sq", "5", "--out-dir", out) == 0
    assert len((out / "retro_adj_aci" / "seed_000.csv").read_text().splitlines()) == 1 + 5
    assert _run("run-csv", "--input", path, "--univariate", "v", "--lags", "25") == 2


def test_run_csv_many_features(tmp_path):
    rng = np.random.default_rng(5)
    X = rng.random((160, 127))
    y = X[:, :5].sum(axis=1) + 0.1 * rng.standard_normal(160)
    header = [f"f{j}" for j in range(127)] + ["target"]
    path = _csv(tmp_path / "wide.csv", header, np.column_stack([X, y]).tolist())
    out = tmp_path / "o"
    assert _run("run-csv", "--input", path, "--target", "target", "--t-init", "100", "--window", "100",
                "--out-dir", out) == 0
    summary = json.loads((out / "retro_adj_dtaci" / "summary.json").read_text())
    assert summary["per_seed"][0]["n_steps"] == 60
