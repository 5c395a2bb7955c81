import io
import json

import pandas as pd
import pytest

import cli


def _write(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def test_analyze_prints_one_row(capsys, tmp_path):
    assert cli.main(["analyze", "--K", "3", "--C", "4", "--Q", "6", "--out", str(tmp_path)]) == 0
    df = pd.read_csv(io.StringIO(capsys.readouterr().out))
    assert len(df) == 1
    assert df.loc[0, "Q_S"] == 4
    assert df.loc[0, "t_upper"] == pytest.approx(3117, rel=0.01)
    assert len(pd.read_csv(tmp_path / "analyze.csv")) == 1


def test_analyze_rejects_too_few_channels(capsys):
    assert cli.main(["analyze", "--K", "4", "--C", "4", "--Q", "6"]) == 2
    assert capsys.readouterr().out == ""


def test_unknown_subcommand_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 2


def test_equilibria_counts(capsys, tmp_path):
    path = _write(tmp_path / "inst.json", {"K": 2, "C": 2, "Q": 6, "beta": 3.0})
    assert cli.main(["equilibria", "--config", path, "--limit", "5"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["counts"]["nash"] == 2
    assert payload["counts"]["satisfaction"] == 32
    assert payload["max_satisfiable"] == 2
    assert len(payload["nash"]) == 2
    assert payload["truncated"] is True


def test_equilibria_over_cap_exits_2(tmp_path):
    path = _write(tmp_path / "inst.json", {"K": 2, "C": 2, "Q": 6})
    assert cli.main(["equilibria", "--config", path, "--cap", "10"]) == 2


def test_instance_save_and_gains(capsys, tmp_path):
    path = _write(tmp_path / "inst.json", {"K": 2, "C": 2, "Q": 4, "channel": "rayleigh", "seed": 8})
    data = tmp_path / "data"
    gains = tmp_path / "g.csv"
    argv = ["instance", "--config", path, "--save", "r8", "--data-dir", str(data), "--gains-out", str(gains)]
    assert cli.main(argv) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["channel"] == "rayleigh" and printed["seed"] == 8
    assert (data / "r8.json").exists()
    assert len(pd.read_csv(gains)) == 8


def test_simulate_writes_requested_metrics(capsys, tmp_path):
    out = tmp_path / "out"
    path = _write(tmp_path / "exp.json", {
        "instance": {"K": 2, "C": 3, "Q": 4},
        "iterations": 300,
        "trials": 2,
        "metrics": ["occupancy", "passage", "curves"],
    })
    assert cli.main(["simulate", "--config", path, "--out", str(out), "--seed", "5", "--trace"]) == 0
    summaries = json.loads(capsys.readouterr().out)
    assert [s["seed"] for s in summaries] == [5, 6]
    assert all(s["iterations"] == 300 for s in summaries)
    occ = pd.read_csv(out / "occupancy.csv")
    assert len(occ) == 1 and occ.loc[0, "K"] == 2
    assert len(pd.read_csv(out / "curves.csv")) == 300
    trace = pd.read_csv(out / "trace_5.csv")
    assert len(trace) == 300 * 2


def test_simulate_override_is_validated(tmp_path):
    path = _write(tmp_path / "exp.json", {"instance": {"K": 1, "C": 2, "Q": 3}, "iterations": 10})
    assert cli.main(["simulate", "--config", path, "--iters", "0", "--out", str(tmp_path)]) == 2


def test_compare_joins_files(capsys, tmp_path):
    sim = tmp_path / "occupancy.csv"
    pd.DataFrame([{
        "K": 3, "C": 4, "Q": 6, "eps": 0.02, "channel": "simplified", "target": "ne",
        "sim_occupancy": 0.5, "dtmc_occupancy": 0.48,
    }]).to_csv(sim, index=False)
    assert cli.main(["analyze", "--K", "3", "--C", "4", "--Q", "6", "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    argv = ["compare", "--sim", str(sim), "--analyze", str(tmp_path / "analyze.csv"), "--out", str(tmp_path)]
    assert cli.main(argv) == 0
    merged = pd.read_csv(tmp_path / "compare.csv")
    assert len(merged) == 1
    assert merged.loc[0, "occupancy_gap"] == pytest.approx(0.5 - merged.loc[0, "occupancy"])
    assert merged.loc[0, "chain_gap"] == pytest.approx(0.5 - merged.loc[0, "chain_occupancy"])


def test_compare_missing_file_exits_2(tmp_path):
    assert cli.main(["compare", "--sim", str(tmp_path / "a.csv"), "--analyze", str(tmp_path / "b.csv")]) == 2


def test_fig5_accepts_instance_overrides(capsys, tmp_path):
    argv = [
        "fig5", "--K", "2", "--C", "3", "--Q", "4", "--gamma", "8", "--iters", "200", "--trials", "2",
        "--baseline-samples", "500", "--workers", "1", "--out", str(tmp_path),
    ]
    assert cli.main(argv) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["trials"] == 2
    # only the top level of 0, 3.33, 6.67, 10 clears an SINR of 8
    assert payload["random_profile_satisfaction"] < 0.3
    assert len(pd.read_csv(tmp_path / "fig5_curves.csv")) == 200


def test_fig5_rejects_bad_threshold(tmp_path):
    assert cli.main(["fig5", "--gamma", "0", "--iters", "10", "--trials", "1", "--out", str(tmp_path)]) == 2
