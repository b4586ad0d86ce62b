from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from ssdm.diffcore import OptimState, Rng, Tensor, adamw_step, cross_entropy, no_grad
from ssdm.errors import TrainingDiverged, ValidationError
from ssdm.metrics import ConfusionMatrix, compute_metrics, confusion, count_components
from ssdm.segnet import SegNet, predict
from ssdm.synthgeo import Sample

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 8
    learning_rate: float = 2e-3
    weight_decay: float = 0.05
    warmup_steps: int = 20
    cosine: bool = True
    ignore_index: int = 255
    seed: int = 0


@dataclass
class TrainResult:
    step_losses: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    steps: int = 0
    wall_time: float = 0.0


def _lr_at(step: int, total: int, cfg: TrainConfig) -> float:
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return cfg.learning_rate * (step + 1) / cfg.warmup_steps
    if not cfg.cosine:
        return cfg.learning_rate
    span = max(total - cfg.warmup_steps, 1)
    t = min(max(step - cfg.warmup_steps, 0) / span, 1.0)
    return cfg.learning_rate * 0.5 * (1 + math.cos(math.pi * t))


def sample_loss(model: SegNet, s: Sample, ignore_index: int = 255) -> Tensor:
    dt = model.cfg.np_dtype
    emb = s.embed.astype(dt) if model.cfg.variant.needs_embedding else None
    logits = model.forward(Tensor(s.image.astype(dt)), None if emb is None else Tensor(emb))
    return cross_entropy(logits, s.label, ignore_index)


def train(model: SegNet, samples: Sequence[Sample], cfg: TrainConfig,
          on_step: Callable[[int, float], None] | None = None) -> TrainResult:
    """AdamW over shuffled mini-batches; gradients are averaged over each batch."""
    if not samples:
        raise ValidationError("training set is empty")
    params = model.parameters()
    state = OptimState(learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay)
    n = len(samples)
    per_epoch = math.ceil(n / cfg.batch_size)
    total = per_epoch * cfg.epochs
    res = TrainResult()
    t0 = time.perf_counter()
    shuffle = Rng(cfg.seed, "shuffle")
    for epoch in range(cfg.epochs):
        order = shuffle.child(epoch).permutation(n)
        epoch_loss = 0.0
        for b in range(per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            for p in params.values():
                p.grad = None
            batch_loss = 0.0
            for i in idx:
                loss = sample_loss(model, samples[i], cfg.ignore_index)
                loss.backward()
                batch_loss += loss.item()
            batch_loss /= len(idx)
            grads = {k: (p.grad / len(idx) if p.grad is not None else np.zeros_like(p.data))
                     for k, p in params.items()}
            gnorm = float(math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
            state.learning_rate = _lr_at(res.steps, total, cfg)
            if not (math.isfinite(batch_loss) and math.isfinite(gnorm)):
                raise TrainingDiverged(res.steps, state.learning_rate, gnorm, batch_loss)
            adamw_step(params, state, grads)
            res.steps += 1
            res.step_losses.append(batch_loss)
            epoch_loss += batch_loss * len(idx)
            if on_step is not None:
                on_step(res.steps, batch_loss)
        res.epoch_losses.append(epoch_loss / n)
        log.info("epoch %d loss %.4f", epoch, res.epoch_losses[-1])
    for p in params.values():
        p.grad = None
    res.wall_time = time.perf_counter() - t0
    return res


@dataclass
class EvalResult:
    cm: ConfusionMatrix
    pred_components: int
    gt_components: int
    predictions: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def fragmentation(self) -> float:
        return self.pred_components / self.gt_components

    def scores(self):
        return compute_metrics(self.cm)


def evaluate(model: SegNet, samples: Sequence[Sample], embeds: dict[str, np.ndarray] | None = None,
             keep_predictions: bool = False, ignore_index: int = 255) -> EvalResult:
    """Confusion matrix and component counts over ``samples``, reduced in sorted id order.

    ``embeds`` optionally replaces a sample's embedding (e.g. drifted copies).
    """
    k = model.cfg.num_classes
    dt = model.cfg.np_dtype
    cm = ConfusionMatrix.zeros(k)
    pc = gc = 0
    preds = {}
    with no_grad():
        for s in sorted(samples, key=lambda s: s.id):
            emb = (embeds or {}).get(s.id, s.embed)
            logits = model.forward(Tensor(s.image.astype(dt)),
                                   Tensor(emb.astype(dt)) if model.cfg.variant.needs_embedding else None)
            pred = predict(logits)
            cm = cm + confusion(s.label, pred, k, ignore_index)
            pc += count_components(pred, k)
            gc += count_components(s.label, k)
            if keep_predictions:
                preds[s.id] = pred
    return EvalResult(cm, pc, gc, preds)


def report_dict(ev: EvalResult) -> dict:
    sc = ev.scores()
    d = asdict(sc)
    d["fragmentation_index"] = ev.fragmentation
    d["confusion"] = ev.cm.counts.tolist()
    return d
