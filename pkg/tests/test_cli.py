"""Command-line front end: exit codes, parser validation, report formatting."""
import json

import pytest

from aeroalloc import cli, harness
from aeroalloc.harness import MetricsReport


@pytest.fixture(autouse=True)
def isolated_out(monkeypatch, tmp_path):
    # keep stray defaults from writing into the working directory
    monkeypatch.setenv(harness.OUT_ROOT_ENV, str(tmp_path / "default_root"))


def test_speed_list_parsing():
    assert cli._speeds("10,14.5") == (10.0, 14.5)
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["eval", "--model", "m.json", "--speeds", "ten"])


def test_eval_without_inputs_exits_2(tmp_path, capsys):
    import numpy as np

    from aeroalloc import dynamics
    from conftest import constant_affine_model

    model_path = tmp_path / "m.json"
    dynamics.save_dynamics_model(
        constant_affine_model(np.zeros(6), np.zeros((6, 4))), model_path
    )
    assert cli.main(["eval", "--model", str(model_path)]) == 2
    assert "needs --data or --speeds" in capsys.readouterr().err


def test_report_without_mode_exits_2(capsys):
    assert cli.main(["report"]) == 2
    assert "needs --run or --suite" in capsys.readouterr().err


def test_missing_data_file_exits_1(tmp_path, capsys):
    code = cli.main(["train-calib", "--data", str(tmp_path / "nope.csv")])
    assert code == 1
    assert "error" in capsys.readouterr().err.lower()


def test_bad_protocol_json_exits_1(tmp_path):
    proto = tmp_path / "proto.json"
    proto.write_text(json.dumps({"kind": "mystery"}))
    assert cli.main(["gen-data", "--protocol", str(proto)]) == 1


def test_report_formats_existing_suite(tmp_path, capsys):
    report = MetricsReport(
        seed=0, train_speeds=(10.0,), split_hash="f" * 64,
        variants={
            "affine_sym": {"rmse": {"in_dist": 0.5, "va14": 0.9},
                           "inflation_pct": {"va14": 80.0},
                           "per_channel_in_dist": [0.5] * 6, "sym_residual": 0.01},
            "unstructured": {"rmse": {"in_dist": 0.5, "va14": 1.2},
                             "inflation_pct": {"va14": 140.0},
                             "per_channel_in_dist": [0.5] * 6, "sym_residual": None},
        },
    )
    path = tmp_path / "suite_report.json"
    harness.write_report_json(report, path)
    assert cli.main(["report", "--suite", str(path)]) == 0
    out = capsys.readouterr().out
    assert "affine_sym" in out and "unstructured" in out

    assert cli.main(["report", "--suite", str(path), "--compare", "affine_sym"]) == 0
    out = capsys.readouterr().out
    assert "affine_sym" in out and "unstructured" not in out

    assert cli.main(["report", "--suite", str(path), "--compare", "mystery"]) == 1


def test_gen_data_writes_under_out_root(tmp_path, capsys):
    proto = tmp_path / "proto.json"
    proto.write_text(json.dumps(
        {"kind": "dynamics", "name": "smoke", "speed": 9.0, "duration_s": 2.0}
    ))
    root = tmp_path / "root"
    assert cli.main(["gen-data", "--protocol", str(proto), "--out", str(root)]) == 0
    assert (root / "datasets" / "smoke.csv").exists()
    assert (root / "datasets" / "smoke_conditions.csv").exists()
    assert "wrote" in capsys.readouterr().out
