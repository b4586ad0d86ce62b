import json

import numpy as np
import pytest

from ssdm.cli import main
from ssdm.diffcore import sst
from ssdm.synthgeo import load_dataset, read_pgm

SMALL = {"seed": 7, "data": {"count": 6, "ratio": 0.5}, "train": {"epochs": 1, "batch_size": 2},
         "scene": {"height": 32, "width": 32, "embed_channels": 8},
         "model": {"input_size": [32, 32], "widths": [8, 8, 8, 8], "mask_channels": 8, "embed_channels": 8,
                   "variant": "full"}}


@pytest.fixture
def small(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "data")]) == 0
    return tmp_path, str(cfg)


def test_oracle_default_config_passes(capsys):
    assert main(["oracle"]) == 0
    assert "all checks passed" in capsys.readouterr().out


def test_gradcheck_writes_table(tmp_path):
    cfg = tmp_path / "g.json"
    cfg.write_text(json.dumps({"gradcheck": {"seeds": 1}}))
    assert main(["gradcheck", "--config", str(cfg), "--out", str(tmp_path / "g_out.json")]) == 0
    rep = json.loads((tmp_path / "g_out.json").read_text())
    assert rep["passed"] and {"block:smm_forward", "block:inject_semantic"} <= {c["name"] for c in rep["checks"]}


def test_gradcheck_failure_exits_one(tmp_path):
    cfg = tmp_path / "g.json"
    cfg.write_text(json.dumps({"gradcheck": {"seeds": 1, "tol": 0.0}}))
    assert main(["gradcheck", "--config", str(cfg)]) == 1


def test_bench_reports_closed_form(tmp_path):
    cfg = tmp_path / "b.json"
    cfg.write_text(json.dumps({"bench": {"grids": [[4, 6], [8, 8]], "width": 8, "repeats": 1}}))
    assert main(["bench", "--config", str(cfg), "--out", str(tmp_path / "b_out.json")]) == 0
    rep = json.loads((tmp_path / "b_out.json").read_text())
    assert rep["closed_form_match"] and rep["config_hash"] and rep["seed"] == 0
    assert [r["decomposed_macs"] for r in rep["results"]] == [2 * 24 * 10 * 9, 2 * 64 * 16 * 9]


def test_train_eval_round_trip_and_determinism(small):
    tmp, cfg = small
    data = str(tmp / "data")
    reports = []
    for run in ("a", "b"):
        assert main(["train", "--config", cfg, "--data", data, "--out", str(tmp / run)]) == 0
        assert main(["eval", "--config", cfg, "--data", data, "--checkpoint", str(tmp / run),
                     "--out", str(tmp / f"{run}.json")]) == 0
        reports.append((tmp / f"{run}.json").read_bytes())
    assert reports[0] == reports[1]
    rep = json.loads(reports[0])
    assert rep["seed"] == 7 and len(rep["config_hash"]) == 16 and rep["variant"] == "full"
    assert (tmp / "a.timing.json").exists()
    lines = (tmp / "a" / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss" and len(lines) == 1 + 2


def test_eval_of_ground_truth_predictions_is_perfect(small, capsys):
    tmp, cfg = small
    ds = load_dataset(tmp / "data")
    pred = tmp / "pred"
    pred.mkdir()
    for s in ds.test:
        sst.save(pred / f"{s.id}.sst", s.label)
    assert main(["eval", "--config", cfg, "--data", str(tmp / "data"), "--predictions", str(pred),
                 "--out", str(tmp / "p.json")]) == 0
    assert "OA 100.00  mIoU 100.00  mAcc 100.00" in capsys.readouterr().out
    rep = json.loads((tmp / "p.json").read_text())
    assert rep["fragmentation_index"] == 1.0


def test_export_masks(small):
    tmp, cfg = small
    data = str(tmp / "data")
    assert main(["train", "--config", cfg, "--data", data, "--out", str(tmp / "ck")]) == 0
    assert main(["export-masks", "--config", cfg, "--data", data, "--checkpoint", str(tmp / "ck"),
                 "--out", str(tmp / "masks")]) == 0
    ds = load_dataset(data)
    for s in ds.test:
        m = read_pgm(tmp / "masks" / f"{s.id}.pgm")
        assert m.shape == (32, 32)
        assert np.array_equal(read_pgm(tmp / "masks" / f"{s.id}.gt.pgm") // 51, s.label)


def test_config_errors_exit_two(small, capsys):
    tmp, cfg = small
    bad = tmp / "bad.json"
    bad.write_text(json.dumps({"trian": {}}))
    assert main(["oracle", "--config", str(bad)]) == 2
    assert "unknown key" in capsys.readouterr().err
    assert main(["train", "--config", cfg, "--data", str(tmp / "nowhere"), "--out", str(tmp / "x")]) == 2
    assert main(["eval", "--config", cfg, "--data", str(tmp / "data"), "--out", str(tmp / "r.json")]) == 2
    assert main(["eval", "--config", cfg, "--data", str(tmp / "data"), "--checkpoint", str(tmp / "x"),
                 "--variant", "sem", "--out", str(tmp / "r.json")]) == 2


def test_mismatched_checkpoint_exits_two(small):
    tmp, cfg = small
    data = str(tmp / "data")
    assert main(["train", "--config", cfg, "--data", data, "--out", str(tmp / "ck")]) == 0
    assert main(["eval", "--config", cfg, "--data", data, "--checkpoint", str(tmp / "ck"), "--variant", "sem",
                 "--out", str(tmp / "r.json")]) == 2


def test_usage_error_exits_two():
    with pytest.raises(SystemExit) as info:
        main(["no-such-command"])
    assert info.value.code == 2


def test_seed_env_override(small, monkeypatch):
    tmp, cfg = small
    monkeypatch.setenv("SSDM_SEED", "11")
    assert main(["gen-data", "--config", cfg, "--out", str(tmp / "d11")]) == 0
    run = json.loads((tmp / "d11" / "run.json").read_text())
    assert run["seed"] == 11 and load_dataset(tmp / "d11").spec.seed == 11
