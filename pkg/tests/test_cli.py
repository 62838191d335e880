import json

import numpy as np
import pytest
import yaml

from conftest import TINY
from intentdiff.cli import build_parser, main
from intentdiff.config import ExperimentConfig, load_config


@pytest.fixture
def tiny_yaml(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(yaml.safe_dump({**TINY, "max_steps": 1}))
    return p


def test_usage_errors_exit_1(capsys):
    assert main([]) == 1
    assert main(["train", "--no-such-flag"]) == 1
    assert main(["train", "--K", "abc"]) == 1
    assert main(["train", "--K", "30"]) == 1  # stride 20 does not divide 30
    assert "usage error" in capsys.readouterr().err


def test_config_errors(tmp_path):
    nested = tmp_path / "n.yaml"
    nested.write_text("K: 100\nmodel:\n  d: 3\n")
    assert main(["train", "--config", str(nested)]) == 1
    unknown = tmp_path / "u.yaml"
    unknown.write_text("K: 100\nbogus: 1\n")
    assert main(["train", "--config", str(unknown)]) == 1
    assert main(["train", "--config", str(tmp_path / "missing.yaml")]) == 1


def test_override_changes_digest(tiny_yaml):
    base = load_config(tiny_yaml)
    args = build_parser().parse_args(["train", "--config", str(tiny_yaml), "--K", "50", "--gamma", "10"])
    from intentdiff.cli import _config_from_args

    cfg = _config_from_args(args)
    assert cfg.K == 50 and cfg.gamma == 10 and cfg.d == TINY["d"]
    assert cfg.digest() != base.digest()
    assert ExperimentConfig().digest() == ExperimentConfig().digest()


def test_data_errors_exit_2(tmp_path):
    assert main(["train", "--dataset", "ethucy", "--data_dir", str(tmp_path / "none")]) == 2
    assert main(["eval", str(tmp_path / "missing.pt")]) == 2


def test_numeric_failure_exit_3(tiny_yaml, tmp_path, monkeypatch):
    from intentdiff.model import IntentDiffusion

    real = IntentDiffusion.compute_losses
    monkeypatch.setattr(
        IntentDiffusion, "compute_losses",
        lambda self, *a: {**real(self, *a), "total": real(self, *a)["total"] * float("inf")},
    )
    assert main(["train", "--config", str(tiny_yaml), "--out", str(tmp_path / "run")]) == 3


def test_baseline_eval_on_straight_lines_is_zero(tmp_path, capsys):
    out = tmp_path / "cv"
    assert main(["train", "--baseline", "--synthetic_kinds", "straight", "--synthetic_noise", "0",
                 "--synthetic_test_count", "10", "--out", str(out)]) == 0
    report = tmp_path / "r.json"
    assert main(["eval", str(out / "checkpoint.pt"), "--n", "1", "--out", str(report)]) == 0
    rep = json.loads(report.read_text())
    assert rep["average"]["ade"] < 1e-9 and rep["average"]["fde"] < 1e-9
    assert "SYNTHETIC" in capsys.readouterr().out


def test_train_eval_sample_plot(tiny_yaml, tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--config", str(tiny_yaml), "--out", str(run), "--evaluate"]) == 0
    ckpt = run / "checkpoint.pt"
    assert ckpt.is_file() and (run / "report.json").is_file() and (run / "config.yaml").is_file()

    r1, r2 = tmp_path / "e1.json", tmp_path / "e2.json"
    assert main(["eval", str(ckpt), "--n", "3", "--out", str(r1)]) == 0
    assert main(["eval", str(ckpt), "--n", "3", "--out", str(r2)]) == 0
    assert r1.read_text() == r2.read_text()

    npz = tmp_path / "s.npz"
    assert main(["sample", str(ckpt), "--windows", "0,2", "--n", "5", "--out", str(npz)]) == 0
    data = np.load(npz)
    assert data["samples"].shape == (2, 5, 12, 2)
    assert data["window_ids"].tolist() == [0, 2]
    assert main(["sample", str(ckpt), "--windows", "999", "--out", str(npz)]) == 1

    fig = tmp_path / "fig.png"
    assert main(["plot", str(ckpt), "--windows", "0,1", "--n", "6",
                 "--overlays", "observed,ground_truth,samples,endpoints,intent", "--out", str(fig)]) == 0
    side = json.loads((tmp_path / "fig.png.json").read_text())
    assert fig.stat().st_size > 0 and len(side["panels"]) == 2
    for panel in side["panels"]:
        assert panel["samples_drawn"] == 6
        assert panel["endpoint_markers"] == TINY["L"]
        assert panel["intent_arrows"] == 12
        assert sum(panel["endpoint_probs"]) == pytest.approx(1.0)


def test_plot_rejects_empty_overlays(tiny_yaml, tmp_path):
    assert main(["plot", "unused.pt", "--overlays", "", "--out", str(tmp_path / "f.png")]) == 1
    assert main(["plot", "unused.pt", "--overlays", "stars", "--out", str(tmp_path / "f.png")]) == 1


def test_ablate_command(tiny_yaml, tmp_path, capsys):
    assert main(["ablate", "--config", str(tiny_yaml), "--axis", "refine_io", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "[refine_io]" in out and "d_Y_0" in out
    assert (tmp_path / "ablation_refine_io.json").is_file()
