import json

import pytest

from admm_adversary.classifier import load_model, save_model
from admm_adversary.cli import _build_parser, _overrides_from_args, cli
from admm_adversary.data import save_csv
from admm_adversary.engine import AdaptiveRho, BinarySearchC


@pytest.fixture(scope="module")
def trained_model_path(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-models") / "model.ckpt"
    code = cli(["train", "--dataset", "digits", "--format", "digits",
                "--epochs", "12", "--seed", "0", "--out", str(out)])
    assert code == 0
    return str(out)


FAST_FLAGS = ["--admm-iters", "2", "--inner-iters", "60",
              "--search-steps", "2", "--images", "2", "--seed", "3"]


def test_train_subcommand_writes_checkpoint(trained_model_path):
    model = load_model(trained_model_path)
    assert model.layer_dims == (64, 64, 64, 10)


def test_train_needs_out():
    assert cli(["train", "--dataset", "digits", "--format", "digits"]) == 1


def test_bench_reports_are_byte_identical(trained_model_path, tmp_path, capsys):
    args = ["bench", "--model", trained_model_path, "--norm", "l2",
            "--targets", "average", *FAST_FLAGS]
    out_a, out_b = tmp_path / "a.json", tmp_path / "b.json"
    assert cli(args + ["--out", str(out_a)]) == 0
    assert cli(args + ["--out", str(out_b)]) == 0
    assert out_a.read_bytes() == out_b.read_bytes()
    assert "admm" in capsys.readouterr().out


def test_attack_subcommand_runs(trained_model_path, tmp_path):
    out = tmp_path / "attack.json"
    code = cli(["attack", "--model", trained_model_path, "--norm", "l2",
                *FAST_FLAGS, "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["rows"][0]["method"] == "admm"


def test_missing_model_is_config_error(tmp_path):
    out = tmp_path / "never.json"
    code = cli(["attack", "--norm", "l2", "--out", str(out)])
    assert code == 1
    assert not out.exists()


def test_nonexistent_model_file_is_config_error(tmp_path):
    code = cli(["attack", "--model", str(tmp_path / "ghost.ckpt")])
    assert code == 1


def test_unknown_flag_is_config_error(capsys):
    assert cli(["bench", "--frobnicate"]) == 1
    assert "error" in capsys.readouterr().err


def test_help_exits_zero(capsys):
    assert cli(["--help"]) == 0
    assert "admm-adversary" in capsys.readouterr().out


def test_malformed_dataset_is_runtime_error(trained_model_path, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("label,p0\n1,7.5\n")
    code = cli(["attack", "--model", trained_model_path, "--dataset", str(bad),
                "--format", "csv", *FAST_FLAGS])
    assert code == 2
    assert "range" in capsys.readouterr().err


def test_csv_report_format(trained_model_path, tmp_path):
    out = tmp_path / "report.csv"
    code = cli(["attack", "--model", trained_model_path, "--norm", "l2",
                *FAST_FLAGS, "--report-format", "csv", "--out", str(out)])
    assert code == 0
    assert out.read_text().startswith("method,case,asr_pct")


def test_default_l0_attack_uses_nine_step_search():
    parser = _build_parser()
    args = parser.parse_args(["attack", "--model", "m", "--norm", "l0"])
    overrides = _overrides_from_args(args)
    assert "search" not in overrides  # driver default applies: 9 steps
    from admm_adversary.drivers import default_config
    from admm_adversary.numerics import Norm
    assert default_config(Norm.L0).search == AdaptiveRho(steps=9, rho_init=3.0)


def test_flag_overrides_rebuild_search_policies():
    parser = _build_parser()
    args = parser.parse_args(["attack", "--model", "m", "--norm", "l0",
                              "--search-steps", "3", "--rho", "5.0"])
    overrides = _overrides_from_args(args)
    assert overrides["search"] == AdaptiveRho(steps=3, rho_init=5.0)
    assert overrides["rho"] == 5.0

    args = parser.parse_args(["attack", "--model", "m", "--norm", "l2",
                              "--c", "0.01", "--kappa", "2.0"])
    overrides = _overrides_from_args(args)
    assert overrides["search"] == BinarySearchC(steps=9, c_init=0.01)
    assert overrides["kappa"] == 2.0


def test_transfer_subcommand_smoke(trained_model_path, tmp_path, capsys):
    out = tmp_path / "transfer.json"
    code = cli(["transfer", "--model", trained_model_path,
                "--kappas", "0", "--epochs", "6", "--transfer-seed", "5",
                *FAST_FLAGS, "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["rows"][0]["kappa"] == 0.0
    assert "transfer ASR" in capsys.readouterr().out


def test_distill_subcommand_smoke(tmp_path):
    out = tmp_path / "distill.json"
    code = cli(["distill", "--temperatures", "1", "--epochs", "6",
                *FAST_FLAGS, "--out", str(out)])
    assert code == 0
    rows = json.loads(out.read_text())["rows"]
    assert rows[0]["temperature"] == 1.0


def test_bad_numeric_flag_value():
    assert cli(["distill", "--temperatures", "hot"]) == 1
    assert cli(["bench", "--methods", "sorcery", "--model", "x"]) == 1
