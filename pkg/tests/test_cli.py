"""End-to-end CLI runs: config handling, artifacts, exit codes."""

import json

import numpy as np
import pytest

from gpdv.cli import load_config, main

BASE_CONFIG = """
[dataset]
kind = "synthetic-sinus"
n = 12
seed = 3

[kernel]
nugget = 0.05

[valuation]
methods = ["loo", "loo-schur"]
budget = 30

[split]
test_fraction = 0.25
"""


def _cfg(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_load_config_defaults_and_overrides(tmp_path):
    cfg = load_config(None)
    assert cfg["kernel"]["family"] == "squared-exponential"
    assert cfg["valuation"]["methods"] == ["loo-schur", "shapley-mc"]
    cfg2 = load_config(_cfg(tmp_path, BASE_CONFIG))
    assert cfg2["dataset"]["n"] == 12
    assert cfg2["kernel"]["nugget"] == 0.05
    assert cfg2["kernel"]["lengthscale"] == 1.0  # untouched default


def test_load_config_rejects_unknown_names(tmp_path):
    from gpdv import InputError

    with pytest.raises(InputError):
        load_config(_cfg(tmp_path, "[kernel]\nnuget = 0.1\n"))
    with pytest.raises(InputError):
        load_config(_cfg(tmp_path, "[mystery]\nx = 1\n"))
    with pytest.raises(InputError):
        load_config(_cfg(tmp_path, "[kernel]\nnugget = true\n"))
    with pytest.raises(InputError):
        load_config(_cfg(tmp_path, "not toml ["))
    with pytest.raises(InputError):
        load_config(str(tmp_path / "missing.toml"))


def test_value_command_writes_reports(tmp_path):
    out = tmp_path / "out"
    code = main(
        ["value", "--config", _cfg(tmp_path, BASE_CONFIG), "--out", str(out)]
    )
    assert code == 0
    loo = (out / "valuations_loo.csv").read_text().strip().split("\n")
    assert loo[0] == "index,value,std_error,samples,method"
    assert len(loo) == 10  # 9 training rows after the 25% split
    assert (out / "valuations_loo_schur.csv").is_file()
    assert (out / "valuations_loo.config.json").is_file()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["n_train"] == 9 and summary["n_test"] == 3
    assert summary["spearman"]["loo/loo-schur"] == 1.0


def test_value_rerun_is_byte_identical(tmp_path):
    cfg = _cfg(tmp_path, BASE_CONFIG)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["value", "--config", cfg, "--out", str(out1)]) == 0
    assert main(["value", "--config", cfg, "--out", str(out2)]) == 0
    for name in ("valuations_loo.csv", "valuations_loo_schur.csv", "summary.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_value_threads_do_not_change_results(tmp_path):
    text = BASE_CONFIG.replace('["loo", "loo-schur"]', '["shapley-mc"]')
    cfg = _cfg(tmp_path, text)
    out1, out2 = tmp_path / "t1", tmp_path / "t4"
    assert main(["value", "--config", cfg, "--out", str(out1), "--threads", "1"]) == 0
    assert main(["value", "--config", cfg, "--out", str(out2), "--threads", "4"]) == 0
    assert (
        (out1 / "valuations_shapley_mc.csv").read_bytes()
        == (out2 / "valuations_shapley_mc.csv").read_bytes()
    )


def test_value_seed_flag_overrides_config(tmp_path):
    text = BASE_CONFIG.replace('["loo", "loo-schur"]', '["shapley-mc"]')
    cfg = _cfg(tmp_path, text)
    out1, out2 = tmp_path / "s0", tmp_path / "s1"
    assert main(["value", "--config", cfg, "--out", str(out1), "--seed", "0"]) == 0
    assert main(["value", "--config", cfg, "--out", str(out2), "--seed", "1"]) == 0
    a = (out1 / "valuations_shapley_mc.csv").read_text()
    b = (out2 / "valuations_shapley_mc.csv").read_text()
    assert a != b


def test_value_missing_dataset_path_exits_2(tmp_path, capsys):
    text = '[dataset]\nkind = "csv"\npath = "/nonexistent/x.csv"\ntarget = "y"\n'
    code = main(
        ["value", "--config", _cfg(tmp_path, text), "--out", str(tmp_path / "o")]
    )
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_value_empty_method_list_exits_2(tmp_path, capsys):
    text = "[valuation]\nmethods = []\n"
    code = main(
        ["value", "--config", _cfg(tmp_path, text), "--out", str(tmp_path / "o")]
    )
    assert code == 2
    capsys.readouterr()


def test_value_on_ingested_csv(tmp_path):
    rng = np.random.default_rng(7)
    rows = ["a,b,y"] + [
        ",".join(f"{v:.5f}" for v in rng.normal(size=3)) for _ in range(15)
    ]
    data = tmp_path / "data.csv"
    data.write_text("\n".join(rows) + "\n")
    text = (
        f'[dataset]\nkind = "csv"\npath = "{data}"\ntarget = "y"\n'
        '[valuation]\nmethods = ["loo-schur"]\n'
        "[split]\ntest_fraction = 0.3\n"
    )
    out = tmp_path / "out"
    assert main(["value", "--config", _cfg(tmp_path, text), "--out", str(out)]) == 0
    lines = (out / "valuations_loo_schur.csv").read_text().strip().split("\n")
    assert len(lines) == 1 + 15 - round(0.3 * 15)


def test_removal_bench_artifacts(tmp_path):
    text = (
        BASE_CONFIG
        + '\n[benchmark]\nretention_grid = [1.0, 0.5, 0.2]\nbaseline_seeds = [0, 1]\n'
    )
    out = tmp_path / "bench"
    code = main(
        ["removal-bench", "--config", _cfg(tmp_path, text), "--out", str(out)]
    )
    assert code == 0
    lines = (out / "removal_curve.csv").read_text().strip().split("\n")
    assert lines[0] == "method,retention,metric,metric_std,seed_count"
    assert len(lines) == 1 + 3 * 3  # 3 grid points x (2 methods + random)
    assert (out / "removal_curve_iv.csv").is_file()
    assert (out / "summary.json").is_file()
    # determinism: a rerun reproduces the curve bytes
    out2 = tmp_path / "bench2"
    assert main(
        ["removal-bench", "--config", _cfg(tmp_path, text), "--out", str(out2)]
    ) == 0
    assert (out / "removal_curve.csv").read_bytes() == (
        out2 / "removal_curve.csv"
    ).read_bytes()


def test_synthetic_demo_emits_the_full_artifact_set(tmp_path):
    out = tmp_path / "demo"
    code = main(
        ["synthetic-demo", "--config", _cfg(tmp_path, BASE_CONFIG), "--out", str(out)]
    )
    assert code == 0
    for name in (
        "dataset.csv",
        "valuations_loo.csv",
        "summary.json",
        "iv_trace.csv",
        "valuations.svg",
        "iv_trace.svg",
    ):
        assert (out / name).is_file(), name
    trace = (out / "iv_trace.csv").read_text().strip().split("\n")
    assert trace[0] == "step,iv"
    assert len(trace) == 1 + 1 + 9  # header, prior row, one per training site


def test_plot_valuation_bars(tmp_path):
    out = tmp_path / "out"
    assert main(
        ["value", "--config", _cfg(tmp_path, BASE_CONFIG), "--out", str(out)]
    ) == 0
    code = main(
        [
            "plot", str(out / "valuations_loo.csv"),
            "--kind", "valuation-bars", "--out", str(out),
        ]
    )
    assert code == 0
    svg = (out / "valuations_loo.svg").read_text()
    assert svg.count("<rect") == 1 + 9  # background plus one bar per datum


def test_plot_removal_curves(tmp_path):
    text = (
        BASE_CONFIG
        + '\n[benchmark]\nretention_grid = [1.0, 0.5]\nbaseline_seeds = [0]\n'
    )
    out = tmp_path / "bench"
    assert main(
        ["removal-bench", "--config", _cfg(tmp_path, text), "--out", str(out)]
    ) == 0
    code = main(
        [
            "plot", str(out / "removal_curve.csv"),
            "--kind", "removal-curves", "--out", str(out),
        ]
    )
    assert code == 0
    svg = (out / "removal_curve.svg").read_text()
    assert svg.count("<polyline") == 3  # loo, loo-schur, random


def test_plot_iv_trace(tmp_path):
    trace = tmp_path / "iv_trace.csv"
    trace.write_text("step,iv\n0,1.0\n1,0.6\n2,0.5\n")
    assert main(
        ["plot", str(trace), "--kind", "iv-trace", "--out", str(tmp_path)]
    ) == 0
    assert (tmp_path / "iv_trace.svg").is_file()


def test_plot_schema_mismatch_exits_2(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(
        ["value", "--config", _cfg(tmp_path, BASE_CONFIG), "--out", str(out)]
    ) == 0
    code = main(
        [
            "plot", str(out / "valuations_loo.csv"),
            "--kind", "removal-curves", "--out", str(out),
        ]
    )
    assert code == 2
    capsys.readouterr()


def test_plot_empty_body_exits_2(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("index,value,std_error,samples,method\n")
    code = main(
        ["plot", str(empty), "--kind", "valuation-bars", "--out", str(tmp_path)]
    )
    assert code == 2
    missing = main(
        ["plot", str(tmp_path / "none.csv"), "--kind", "iv-trace", "--out", str(tmp_path)]
    )
    assert missing == 2
    capsys.readouterr()


def test_bad_log_level_warns_but_runs(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("GPDV_LOG", "noisy")
    out = tmp_path / "out"
    code = main(
        ["value", "--config", _cfg(tmp_path, BASE_CONFIG), "--out", str(out)]
    )
    assert code == 0
    assert "GPDV_LOG" in capsys.readouterr().err
