"""Desk-scale segmentation network hosting the structural and semantic modulation blocks.

Pipeline: two stride-2 stem convs, four conv stages (strides 4/8/16/32) with an
optional SMM after each, a top-down pixel decoder producing stride-4 mask
features, optional SeMM on those features, a 1×1 classifier, and a bilinear
upsample back to the input size.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ssdm.diffcore import Rng, Tensor, add, conv2d, gelu, resize_bilinear
from ssdm.errors import ConfigError
from ssdm.prior import GeoAdapterWeights, build_priors, init_adapter
from ssdm.semm import SEM_WIDTH, SemmWeights, encode_semantic, init_semm, inject_semantic
from ssdm.smm import SmmWeights, init_smm, smm_forward

STRIDES = (4, 8, 16, 32)


class Variant(str, enum.Enum):
    Baseline = "baseline"
    SemOnly = "sem"
    StructOnly = "struct"
    Full = "full"

    @property
    def uses_smm(self) -> bool:
        return self in (Variant.StructOnly, Variant.Full)

    @property
    def uses_semm(self) -> bool:
        return self in (Variant.SemOnly, Variant.Full)

    @property
    def needs_embedding(self) -> bool:
        return self is not Variant.Baseline

    @classmethod
    def parse(cls, value: str | Variant) -> Variant:
        if isinstance(value, Variant):
            return value
        lowered = str(value).lower()
        for v in cls:
            if lowered in (v.value, v.name.lower()):
                return v
        raise ConfigError(f"unknown variant {value!r}; expected one of {[v.value for v in cls]}")


@dataclass
class ModelConfig:
    variant: Variant = Variant.Baseline
    num_classes: int = 6
    input_size: tuple[int, int] = (64, 64)
    widths: tuple[int, ...] = (32, 64, 128, 256)
    mask_channels: int = 64
    embed_channels: int = 64
    adapter_dim: int = 16
    smm_heads: int = 2
    smm_per_block: bool = False
    tau_init: float = 8.0
    sem_width: int = SEM_WIDTH
    zero_init: bool = True
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        self.input_size = tuple(int(v) for v in self.input_size)
        self.widths = tuple(int(v) for v in self.widths)
        if not 1 <= len(self.widths) <= 4:
            raise ConfigError(f"between 1 and 4 stage widths required, got {self.widths}")
        h, w = self.input_size
        top = STRIDES[len(self.widths) - 1]
        if h % top or w % top:
            raise ConfigError(f"input size {self.input_size} must be a multiple of {top}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def stage_sizes(self) -> list[tuple[int, int]]:
        h, w = self.input_size
        return [(h // s, w // s) for s in STRIDES[: len(self.widths)]]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["input_size"] = list(self.input_size)
        d["widths"] = list(self.widths)
        return d


@dataclass
class ForwardTrace:
    """Intermediate values of one forward pass, for wiring checks."""

    pyramid: list[Tensor] = field(default_factory=list)
    mask: Tensor | None = None
    mask_refined: Tensor | None = None
    logits: Tensor | None = None


def _he_conv(seed: int, name: str, o: int, i: int, k: int, dtype) -> tuple[Tensor, Tensor]:
    w = Rng(seed, name).normal((o, i, k, k), std=math.sqrt(2.0 / (i * k * k)), dtype=dtype)
    return Tensor(w, requires_grad=True, name=f"{name}_w"), Tensor(np.zeros(o, dtype=dtype), requires_grad=True)


class SegNet:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        dt = cfg.np_dtype
        s = cfg.seed
        self.base: dict[str, Tensor] = {}

        def conv(name, o, i, k):
            self.base[f"{name}_w"], self.base[f"{name}_b"] = _he_conv(s, name, o, i, k, dt)

        w0 = cfg.widths[0]
        conv("stem.0", max(w0 // 2, 1), 3, 3)
        conv("stem.1", w0, max(w0 // 2, 1), 3)
        prev = w0
        for l, c in enumerate(cfg.widths):
            conv(f"stage{l}.0", c, prev, 3)
            conv(f"stage{l}.1", c, c, 3)
            conv(f"decoder.lat{l}", cfg.mask_channels, c, 1)
            prev = c
        conv("decoder.smooth", cfg.mask_channels, cfg.mask_channels, 3)
        conv("head", cfg.num_classes, cfg.mask_channels, 1)

        v = cfg.variant
        self.adapter: GeoAdapterWeights | None = None
        self.smm: list[SmmWeights] = []
        self.semm: SemmWeights | None = None
        if v.uses_smm:
            self.adapter = init_adapter(cfg.embed_channels, cfg.adapter_dim, len(cfg.widths), s, dtype=dt,
                                        tau_init=cfg.tau_init)
            per_stage = 2 if cfg.smm_per_block else 1
            for l, c in enumerate(cfg.widths):
                for b in range(per_stage):
                    self.smm.append(init_smm(c, s, f"smm{l}.{b}", heads=cfg.smm_heads, dtype=dt,
                                             zero_init=cfg.zero_init))
        if v.uses_semm:
            self.semm = init_semm(cfg.embed_channels, cfg.mask_channels, s, width=cfg.sem_width, dtype=dt,
                                  zero_init=cfg.zero_init)

    def parameters(self) -> dict[str, Tensor]:
        out = dict(self.base)
        if self.adapter is not None:
            out.update(self.adapter.named("adapter"))
        per_stage = 2 if self.cfg.smm_per_block else 1
        for i, w in enumerate(self.smm):
            out.update(w.named(f"smm{i // per_stage}.{i % per_stage}"))
        if self.semm is not None:
            out.update(self.semm.named("semm"))
        return out

    def num_parameters(self, group: str | None = None) -> int:
        params = self.parameters()
        if group is not None:
            params = {k: p for k, p in params.items() if k.startswith(group)}
        return sum(p.size for p in params.values())

    def _conv(self, name: str, x: Tensor, stride: int = 1) -> Tensor:
        return conv2d(x, self.base[f"{name}_w"], self.base[f"{name}_b"], stride=stride)

    def encode(self, image: Tensor, emb: Tensor | None = None) -> list[Tensor]:
        cfg = self.cfg
        x = gelu(self._conv("stem.0", image, 2))
        x = gelu(self._conv("stem.1", x, 2))
        priors = build_priors(emb, self.adapter, cfg.stage_sizes()) if cfg.variant.uses_smm else None
        per_stage = 2 if cfg.smm_per_block else 1
        pyramid = []
        for l in range(len(cfg.widths)):
            x = gelu(self._conv(f"stage{l}.0", x, 1 if l == 0 else 2))
            if priors is not None and per_stage == 2:
                x = smm_forward(x, priors[l], self.smm[2 * l])
            x = gelu(self._conv(f"stage{l}.1", x))
            if priors is not None:
                x = smm_forward(x, priors[l], self.smm[per_stage * l + per_stage - 1])
            pyramid.append(x)
        return pyramid

    def pixel_decode(self, pyramid: list[Tensor]) -> Tensor:
        """Lateral 1×1 projections, top-down upsample-and-add, one 3×3 smoothing conv."""
        top = self._conv(f"decoder.lat{len(pyramid) - 1}", pyramid[-1])
        for l in range(len(pyramid) - 2, -1, -1):
            lat = self._conv(f"decoder.lat{l}", pyramid[l])
            top = add(lat, resize_bilinear(top, lat.shape[1], lat.shape[2]))
        return gelu(self._conv("decoder.smooth", top))

    def trace(self, image: Tensor | np.ndarray, emb: Tensor | np.ndarray | None = None) -> ForwardTrace:
        cfg = self.cfg
        if not isinstance(image, Tensor):
            image = Tensor(np.asarray(image, dtype=cfg.np_dtype))
        if image.shape != (3,) + cfg.input_size:
            raise ConfigError(f"image shape {image.shape} does not match configured (3, {cfg.input_size})")
        if cfg.variant.needs_embedding:
            if emb is None:
                raise ConfigError(f"variant {cfg.variant.value!r} requires a geospatial embedding")
            if not isinstance(emb, Tensor):
                emb = Tensor(np.asarray(emb, dtype=cfg.np_dtype))
        t = ForwardTrace()
        t.pyramid = self.encode(image, emb)
        t.mask = self.pixel_decode(t.pyramid)
        m = t.mask
        if cfg.variant.uses_semm:
            m = inject_semantic(m, encode_semantic(emb, self.semm), self.semm)
        t.mask_refined = m
        t.logits = resize_bilinear(self._conv("head", m), *cfg.input_size)
        return t

    def forward(self, image, emb=None) -> Tensor:
        return self.trace(image, emb).logits

    def copy_base_from(self, other: SegNet) -> None:
        for k, p in other.base.items():
            self.base[k].data[...] = p.data


def predict(logits: Tensor | np.ndarray) -> np.ndarray:
    """Per-pixel argmax; ties go to the lower class index."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.argmax(arr, axis=0).astype(np.uint8)
