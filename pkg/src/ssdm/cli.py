"""Command-line entry point: ``ssdm <command> [options]``.

Exit codes: 0 success, 1 verification failure (or a diverged run), 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from ssdm import config as C
from ssdm.bench import bench_attention
from ssdm.checkpoint import load_model, save_model
from ssdm.diffcore import sst
from ssdm.errors import ConfigError, TrainingDiverged
from ssdm.metrics import ConfusionMatrix, compute_metrics, confusion, count_components
from ssdm.segnet import SegNet
from ssdm.synthgeo import drifted_embedding, gen_dataset, load_dataset, write_pgm
from ssdm.train import EvalResult, evaluate, train
from ssdm.verify import CheckRow, gradcheck_suite, oracle_suite

REPORT_SCHEMA = 1


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _stamp(cfg: C.RunConfig, command: str) -> dict:
    return {"schema": REPORT_SCHEMA, "command": command, "config_hash": cfg.hash(), "seed": cfg.seed}


def _timing_path(path: Path) -> Path:
    return path.with_name(path.stem + ".timing.json")


def _load(args) -> C.RunConfig:
    cfg = C.resolve_seed(C.load_config(args.config), getattr(args, "seed", None))
    if getattr(args, "variant", None):
        cfg = cfg.with_variant(args.variant)
    return cfg


def _print_rows(title: str, rows: list[CheckRow]) -> None:
    print(f"{title:<40} {'instances':>9} {'worst':>12} {'tol':>9}  result")
    for r in rows:
        print(f"{r.name:<40} {r.instances:>9} {r.worst:>12.3e} {r.tol:>9.1e}  {'pass' if r.passed else 'FAIL'}")


# -- commands ------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _load(args)
    out = gen_dataset(cfg.scene, cfg.data.count, cfg.data.ratio, args.out)
    _write_json(out / "run.json", {**_stamp(cfg, "gen-data"), "config": C.to_dict(cfg)})
    print(f"wrote {cfg.data.count} samples to {out} (config {cfg.hash()}, seed {cfg.seed})")
    return 0


def cmd_train(args) -> int:
    cfg = _load(args)
    ds = load_dataset(args.data)
    model = SegNet(cfg.model)
    t0 = time.perf_counter()
    res = train(model, ds.train, cfg.train)
    out = Path(args.out)
    stamp = _stamp(cfg, "train")
    save_model(out, model, {**stamp, "config": C.to_dict(cfg)})
    with open(out / "loss.csv", "w") as fh:
        fh.write("step,loss\n")
        for i, loss in enumerate(res.step_losses, 1):
            fh.write(f"{i},{loss!r}\n")
    _write_json(out / "train_report.json", {**stamp, "variant": cfg.model.variant.value, "steps": res.steps,
                                            "epoch_losses": res.epoch_losses,
                                            "final_loss": res.epoch_losses[-1] if res.epoch_losses else None})
    _write_json(_timing_path(out / "train_report.json"), {"wall_time_s": time.perf_counter() - t0})
    print(f"trained {cfg.model.variant.value} for {res.steps} steps; final epoch loss {res.epoch_losses[-1]:.4f}")
    return 0


def _predictions_from_dir(pred_dir: Path, samples, k: int) -> EvalResult:
    cm = ConfusionMatrix.zeros(k)
    pc = gc = 0
    for s in sorted(samples, key=lambda s: s.id):
        path = pred_dir / f"{s.id}.sst"
        if not path.exists():
            raise ConfigError(f"missing prediction {path}")
        pred = sst.load(path)
        if pred.shape != s.label.shape:
            raise ConfigError(f"prediction {path} has shape {pred.shape}, label is {s.label.shape}")
        cm = cm + confusion(s.label, pred, k)
        pc += count_components(pred, k)
        gc += count_components(s.label, k)
    return EvalResult(cm, pc, gc)


def seg_report(cfg: C.RunConfig, ev: EvalResult, split: str, n: int, source: str) -> dict:
    sc = compute_metrics(ev.cm)
    return {
        **_stamp(cfg, "eval"),
        "variant": cfg.model.variant.value if source == "checkpoint" else None,
        "source": source,
        "split": split,
        "num_samples": n,
        "drift": cfg.eval.drift,
        "oa": sc.oa,
        "miou": sc.miou,
        "macc": sc.macc,
        "per_class": [{"class": i, "iou": sc.iou[i], "acc": sc.acc[i]} for i in range(ev.cm.num_classes)],
        "evaluated_classes_iou": sc.evaluated_iou,
        "evaluated_classes_acc": sc.evaluated_acc,
        "fragmentation_index": ev.fragmentation,
        "pred_components": ev.pred_components,
        "gt_components": ev.gt_components,
        "confusion": ev.cm.counts.tolist(),
    }


def cmd_eval(args) -> int:
    cfg = _load(args)
    if (args.checkpoint is None) == (args.predictions is None):
        raise ConfigError("eval needs exactly one of --checkpoint or --predictions")
    ds = load_dataset(args.data)
    samples = ds.test if cfg.eval.split == "test" else ds.train
    t0 = time.perf_counter()
    if args.checkpoint is not None:
        model = load_model(args.checkpoint, expect=cfg.model)
        embeds = None
        if cfg.eval.drift > 0:
            embeds = {s.id: drifted_embedding(ds.spec, s, cfg.eval.drift) for s in samples}
        ev = evaluate(model, samples, embeds, keep_predictions=args.masks is not None)
        source = "checkpoint"
    else:
        ev = _predictions_from_dir(Path(args.predictions), samples, cfg.model.num_classes)
        source = "predictions"
    report = seg_report(cfg, ev, cfg.eval.split, len(samples), source)
    out = Path(args.out)
    _write_json(out, report)
    _write_json(_timing_path(out), {"wall_time_s": time.perf_counter() - t0})
    if args.masks is not None:
        _export(Path(args.masks), ev.predictions, samples, cfg.model.num_classes)
    print(f"OA {100 * report['oa']:.2f}  mIoU {100 * report['miou']:.2f}  mAcc {100 * report['macc']:.2f}  "
          f"fragmentation {report['fragmentation_index']:.3f}  ({len(samples)} {cfg.eval.split} tiles)")
    return 0


def _export(out: Path, predictions: dict, samples, k: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for s in samples:
        pred = predictions[s.id]
        sst.save(out / f"{s.id}.sst", pred)
        write_pgm(out / f"{s.id}.pgm", pred, k)
        write_pgm(out / f"{s.id}.gt.pgm", s.label, k)


def cmd_export_masks(args) -> int:
    cfg = _load(args)
    ds = load_dataset(args.data)
    samples = ds.test if cfg.eval.split == "test" else ds.train
    model = load_model(args.checkpoint, expect=cfg.model)
    embeds = None
    if cfg.eval.drift > 0:
        embeds = {s.id: drifted_embedding(ds.spec, s, cfg.eval.drift) for s in samples}
    ev = evaluate(model, samples, embeds, keep_predictions=True)
    _export(Path(args.out), ev.predictions, samples, cfg.model.num_classes)
    _write_json(Path(args.out) / "run.json", {**_stamp(cfg, "export-masks"), "ids": sorted(ev.predictions)})
    print(f"exported {len(samples)} masks to {args.out}")
    return 0


def _verification(cfg: C.RunConfig, command: str, rows: list[CheckRow], out: str | None) -> int:
    ok = all(r.passed for r in rows)
    if out:
        _write_json(Path(out), {**_stamp(cfg, command), "passed": ok,
                                "checks": [{"name": r.name, "instances": r.instances, "worst": r.worst,
                                            "tol": r.tol, "passed": r.passed} for r in rows]})
    print("all checks passed" if ok else "VERIFICATION FAILED")
    return 0 if ok else 1


def cmd_gradcheck(args) -> int:
    cfg = _load(args)
    g = cfg.gradcheck
    rows = gradcheck_suite(g.seeds, tol=g.tol, eps=g.eps)
    _print_rows("operation / block", rows)
    return _verification(cfg, "gradcheck", rows, args.out)


def cmd_oracle(args) -> int:
    cfg = _load(args)
    rows = oracle_suite()
    _print_rows("oracle", rows)
    return _verification(cfg, "oracle", rows, args.out)


def cmd_bench(args) -> int:
    cfg = _load(args)
    b = cfg.bench
    costs = [bench_attention(h, w, b.width, b.heads, b.repeats, cfg.seed) for h, w in b.grids]
    print(f"{'grid':>9} {'decomposed MACs':>16} {'full MACs':>14} {'decomposed s':>13} {'full s':>9}")
    for c in costs:
        print(f"{c.height:>4}×{c.width:<4} {c.decomposed_macs:>16} {c.full_macs:>14} "
              f"{c.decomposed_seconds:>13.4f} {c.full_seconds:>9.4f}")
    ok = all(c.macs_match for c in costs)
    if args.out:
        _write_json(Path(args.out), {**_stamp(cfg, "bench"), "closed_form_match": ok,
                                     "results": [c.to_dict() for c in costs]})
    if not ok:
        print("counted multiply-adds differ from the closed form")
    return 0 if ok else 1


# -- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssdm", description="Segmentation guided by a coarse geospatial embedding.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, fn, help_, variant=False):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
        s.add_argument("--seed", type=int, help=f"overrides the config seed and ${C.SEED_ENV}")
        if variant:
            s.add_argument("--variant", choices=["baseline", "sem", "struct", "full"])
        s.set_defaults(fn=fn)
        return s

    s = command("gen-data", cmd_gen_data, "generate a synthetic dataset")
    s.add_argument("--out", required=True)
    s = command("train", cmd_train, "train one variant", variant=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="checkpoint directory")
    s = command("eval", cmd_eval, "evaluate a checkpoint or a directory of predictions", variant=True)
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--predictions", help="directory of <id>.sst class maps")
    s.add_argument("--out", required=True, help="SegReport JSON path")
    s.add_argument("--masks", help="also export predicted masks here")
    s = command("export-masks", cmd_export_masks, "write predicted and ground-truth masks as P5 + SST", variant=True)
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    for name, fn, help_ in (("gradcheck", cmd_gradcheck, "finite-difference checks of every op and block"),
                            ("oracle", cmd_oracle, "attention, affinity-slice, identity and shift oracles"),
                            ("bench", cmd_bench, "decomposed vs full attention cost")):
        command(name, fn, help_).add_argument("--out", help="write results as JSON")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.fn(args)
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as e:  # ConfigError, ValidationError and DimensionError included
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
