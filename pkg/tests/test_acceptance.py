"""Acceptance criteria, each run at its stated tolerance.

Prints one PASS/FAIL line per criterion in the pytest terminal summary.
Run alone with ``python3 tests/test_acceptance.py`` (about 12 minutes on one core).
"""
import json
import time

import numpy as np
import pytest

from conftest import record_criterion
from ssdm.bench import bench_attention
from ssdm.cli import main
from ssdm.experiment import make_split, run_variant
from ssdm.metrics import ConfusionMatrix, compute_metrics, confusion
from ssdm.segnet import ModelConfig, Variant
from ssdm.synthgeo import SceneSpec
from ssdm.train import TrainConfig
from ssdm.verify import attention_oracle, gradcheck_suite, identity_oracle, shift_invariance_oracle, slice_oracle

REFERENCE_SEED = 0
SEEDS = (0, 1, 2, 3, 4)


def test_c01_gradient_correctness():
    t0 = time.perf_counter()
    rows = gradcheck_suite(n_seeds=20, tol=1e-4, eps=1e-5)
    secs = time.perf_counter() - t0
    worst = max(rows, key=lambda r: r.worst)
    ok = all(r.passed for r in rows) and secs <= 120
    record_criterion(1, "gradient correctness", ok,
                     f"{len(rows)} ops/blocks x 20 seeds, worst {worst.worst:.2e} ({worst.name}), {secs:.0f}s")
    assert ok


def test_c02_attention_oracle():
    r = attention_oracle(max_side=6, heads=2)
    record_criterion(2, "decomposed attention vs naive loops", r.passed,
                     f"{r.instances} grids 1..6 x 1..6, max |diff| {r.worst:.1e} (tol 1e-6)")
    assert r.passed


def test_c03_slice_consistency():
    r = slice_oracle(n_seeds=50, max_side=8)
    record_criterion(3, "directional slices == materialized affinity", r.passed,
                     f"{int(r.worst)} of {r.instances} instances differ bitwise")
    assert r.passed


def test_c04_identity_at_init():
    pos = identity_oracle(10, zero_init=True)
    neg = identity_oracle(10, zero_init=False)
    ok = pos.worst == 0 and neg.worst == neg.instances
    record_criterion(4, "identity at initialization", ok,
                     f"Full != Baseline on {int(pos.worst)}/10 inputs with zero-init, "
                     f"{int(neg.worst)}/10 without (negative control)")
    assert ok


def test_c05_shift_invariance():
    r = shift_invariance_oracle(n_seeds=10)
    record_criterion(5, "prior shift invariance", r.passed, f"max |diff| {r.worst:.1e} (tol 1e-6)")
    assert r.passed


@pytest.fixture(scope="session")
def ablation():
    """Reference seed: all four variants. Other seeds: Baseline and Full only."""
    t0 = time.perf_counter()
    out = {}
    for seed in SEEDS:
        spec = SceneSpec(seed=seed)
        train_set, test_set = make_split(spec, 250, 0.8)
        variants = list(Variant) if seed == REFERENCE_SEED else [Variant.Baseline, Variant.Full]
        out[seed] = {v.value: run_variant(v, train_set, test_set, ModelConfig(seed=seed),
                                          TrainConfig(epochs=15, seed=seed), spec,
                                          drift=0.1 if seed == REFERENCE_SEED else None)
                     for v in variants}
    return out, time.perf_counter() - t0


def test_c06_ablation_ordering(ablation):
    res, secs = ablation
    ref = {k: v.miou for k, v in res[REFERENCE_SEED].items()}
    order = ref["full"] > ref["struct"] > ref["sem"] > ref["baseline"]
    margin = ref["full"] >= ref["baseline"] + 5.0
    all_seeds = {s: (r["full"].miou, r["baseline"].miou) for s, r in res.items()}
    seeds_ok = all(f > b for f, b in all_seeds.values())
    ok = order and margin and seeds_ok and secs <= 30 * 60
    detail = (f"ref mIoU full {ref['full']:.2f} struct {ref['struct']:.2f} sem {ref['sem']:.2f} "
              f"baseline {ref['baseline']:.2f}; strict order {'holds' if order else 'FAILS'}; "
              f"full-baseline {ref['full'] - ref['baseline']:+.2f}; full>baseline on "
              f"{sum(f > b for f, b in all_seeds.values())}/{len(SEEDS)} seeds; {secs / 60:.1f} min")
    record_criterion(6, "ablation ordering", ok, detail)
    assert order, detail
    assert margin and seeds_ok and secs <= 30 * 60, detail


def test_c07_fragmentation(ablation):
    res, _ = ablation
    f, b = res[REFERENCE_SEED]["full"].fragmentation, res[REFERENCE_SEED]["baseline"].fragmentation
    ok = f <= 0.8 * b
    record_criterion(7, "fragmentation", ok, f"full {f:.3f} vs 0.8 x baseline {0.8 * b:.3f}")
    assert ok


def test_c08_drift_robustness(ablation):
    res, _ = ablation
    d, b = res[REFERENCE_SEED]["full"].drift_miou, res[REFERENCE_SEED]["baseline"].miou
    ok = d > b
    record_criterion(8, "drift robustness", ok, f"full at p=0.1 {d:.2f} vs baseline {b:.2f} mIoU")
    assert ok


def test_c09_metrics_correctness():
    sc = compute_metrics(ConfusionMatrix(np.array([[1, 1], [0, 2]])))
    hand = (round(sc.oa, 4), round(sc.miou, 4), round(sc.macc, 4)) == (0.75, 0.5833, 0.75)
    rng = np.random.default_rng(0)
    stream_ok = True
    for _ in range(20):
        gt = rng.integers(0, 6, (64, 64)).astype(np.uint8)
        pred = np.where(rng.random((64, 64)) < 0.7, gt, rng.integers(0, 6, (64, 64))).astype(np.uint8)
        gt[rng.random((64, 64)) < 0.05] = 255
        whole = confusion(gt, pred, 6)
        tiles = ConfusionMatrix.zeros(6)
        for i in range(0, 64, 16):
            for j in range(0, 64, 16):
                tiles = tiles + confusion(gt[i:i + 16, j:j + 16], pred[i:i + 16, j:j + 16], 6)
        stream_ok &= np.array_equal(tiles.counts, whole.counts) and compute_metrics(tiles) == compute_metrics(whole)
    ok = hand and stream_ok
    record_criterion(9, "metrics correctness", ok,
                     f"OA {sc.oa:.4f} mIoU {sc.miou:.4f} mAcc {sc.macc:.4f}; tile streaming exact: {stream_ok}")
    assert ok


def test_c10_cost_scaling():
    c32 = bench_attention(32, 32, width=32, heads=2, repeats=1)
    c64 = bench_attention(64, 64, width=32, heads=2, repeats=3)
    macs = c32.macs_match and c64.macs_match
    faster = c64.decomposed_seconds < c64.full_seconds
    ok = macs and faster
    record_criterion(10, "cost scaling", ok,
                     f"MACs match closed form at 32x32 and 64x64: {macs}; 64x64 decomposed "
                     f"{c64.decomposed_seconds * 1e3:.1f} ms vs full {c64.full_seconds * 1e3:.1f} ms")
    assert ok


def test_c11_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 7, "data": {"count": 20}, "train": {"epochs": 2},
                               "model": {"variant": "full"}}))
    data = str(tmp_path / "data")
    assert main(["gen-data", "--config", str(cfg), "--out", data]) == 0
    reports = []
    for run in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--data", data, "--out", str(tmp_path / run)]) == 0
        assert main(["eval", "--config", str(cfg), "--data", data, "--checkpoint", str(tmp_path / run),
                     "--out", str(tmp_path / f"{run}.json")]) == 0
        reports.append((tmp_path / f"{run}.json").read_bytes())
    ok = reports[0] == reports[1]
    record_criterion(11, "determinism", ok, f"two train+eval runs, seed 7: SegReport JSON byte-identical: {ok}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
