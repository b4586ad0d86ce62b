"""Synthetic (image, embedding, label) tiles.

Label maps are Voronoi partitions with one class per cell. Images are class
colours corrupted by a per-region brightness offset and smoothed per-pixel
texture noise, so local appearance is unreliable. The coarse embedding grid
carries each block's majority-class prototype, optionally swapped to another
class ("drift") to mimic land-cover change between acquisition years.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from ssdm.diffcore import Rng, sst
from ssdm.errors import ValidationError
from ssdm.prior import GeoEmbedding

DATASET_SCHEMA = 1


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    num_classes: int = 6
    n_cells: int = 12
    texture: float = 0.4
    brightness: float = 0.3
    grid_factor: int = 8
    drift: float = 0.0
    seed: int = 0
    embed_channels: int = 64
    embed_noise: float = 0.05
    texture_sigma: float = 1.0
    saturation: float = 0.35

    def __post_init__(self):
        if self.n_cells < self.num_classes:
            raise ValidationError(f"n_cells ({self.n_cells}) must be >= num_classes ({self.num_classes})")
        if not 0.0 <= self.drift <= 1.0:
            raise ValidationError(f"drift probability must lie in [0, 1], got {self.drift}")
        if self.height % self.grid_factor or self.width % self.grid_factor:
            raise ValidationError(f"grid factor {self.grid_factor} must divide {self.height}×{self.width}")
        if not 0.0 <= self.texture <= 1.0:
            raise ValidationError(f"texture amplitude must lie in [0, 1], got {self.texture}")
        if self.n_cells > self.height * self.width:
            raise ValidationError("more Voronoi sites than pixels")
        if self.num_classes > 255:
            raise ValidationError("at most 255 classes fit a u8 label map")

    @property
    def embed_size(self) -> tuple[int, int]:
        return self.height // self.grid_factor, self.width // self.grid_factor

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **kw) -> SceneSpec:
        d = asdict(self)
        d.update(kw)
        return SceneSpec(**d)


@dataclass
class Sample:
    id: str
    image: np.ndarray  # 3 × H × W float32
    embed: np.ndarray  # C_e × H_e × W_e float32
    label: np.ndarray  # H × W uint8


def class_palette(spec: SceneSpec) -> np.ndarray:
    """Class colours evenly spaced in hue around mid-grey.

    Hues lie in the plane orthogonal to (1, 1, 1), so the per-region brightness
    offset never moves one class onto another; only the phase is seeded.
    """
    u = np.array([1.0, -1.0, 0.0]) / np.sqrt(2)
    v = np.array([1.0, 1.0, -2.0]) / np.sqrt(6)
    phase = Rng(spec.seed, "palette").uniform(1, 0, 2 * np.pi)[0]
    ang = phase + 2 * np.pi * np.arange(spec.num_classes) / spec.num_classes
    return 0.5 + spec.saturation * (np.cos(ang)[:, None] * u + np.sin(ang)[:, None] * v)


def class_prototypes(spec: SceneSpec) -> np.ndarray:
    rng = Rng(spec.seed, "prototypes")
    while True:
        p = rng.normal((spec.num_classes, spec.embed_channels))
        p /= np.linalg.norm(p, axis=1, keepdims=True)
        d = np.linalg.norm(p[:, None] - p[None], axis=-1)
        if spec.num_classes == 1 or d[~np.eye(spec.num_classes, dtype=bool)].min() > 1e-6:
            return p


def sample_rng(spec: SceneSpec, sample_id: str) -> Rng:
    return Rng(spec.seed, f"sample:{sample_id}")


def gen_labelmap(spec: SceneSpec, rng: Rng) -> np.ndarray:
    h, w = spec.height, spec.width
    flat = rng.choice(h * w, spec.n_cells)
    sy, sx = np.divmod(flat, w)
    yy, xx = np.mgrid[0:h, 0:w]
    d2 = (yy[None] - sy[:, None, None]) ** 2 + (xx[None] - sx[:, None, None]) ** 2
    cells = np.argmin(d2, axis=0)  # ties resolve to the lower site index
    classes = np.concatenate([rng.permutation(spec.num_classes),
                              rng.integers(0, spec.num_classes, spec.n_cells - spec.num_classes)])
    classes = classes[rng.permutation(spec.n_cells)]
    return classes[cells].astype(np.uint8)


def regions(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected same-class regions: (region id map, count)."""
    out = np.zeros(labels.shape, dtype=np.int64)
    total = 0
    for c in np.unique(labels):
        lab, n = ndimage.label(labels == c)
        out[lab > 0] = lab[lab > 0] + total
        total += n
    return out - 1, total


def render_image(labels: np.ndarray, spec: SceneSpec, rng: Rng) -> np.ndarray:
    palette = class_palette(spec)
    img = palette[labels].transpose(2, 0, 1).copy()  # 3 × H × W
    reg, n = regions(labels)
    offsets = rng.uniform(n, -spec.brightness, spec.brightness) if spec.brightness > 0 else np.zeros(n)
    img += offsets[reg][None]
    noise = rng.normal((3, spec.height, spec.width))
    if spec.texture > 0:
        if spec.texture_sigma > 0:
            noise = np.stack([ndimage.gaussian_filter(ch, spec.texture_sigma, mode="reflect") for ch in noise])
        noise /= max(noise.std(), 1e-12)
        img += spec.texture * noise
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def majority_classes(labels: np.ndarray, spec: SceneSpec) -> np.ndarray:
    s = spec.grid_factor
    he, we = spec.embed_size
    blocks = labels.reshape(he, s, we, s).transpose(0, 2, 1, 3).reshape(he, we, s * s)
    counts = np.stack([(blocks == c).sum(-1) for c in range(spec.num_classes)], axis=-1)
    return np.argmax(counts, axis=-1)  # ties -> lower class


def gen_embedding(labels: np.ndarray, spec: SceneSpec, rng: Rng, tile_id: str = "") -> GeoEmbedding:
    protos = class_prototypes(spec)
    cls = majority_classes(labels, spec)
    he, we = cls.shape
    k = spec.num_classes
    swap = rng.uniform((he, we)) < spec.drift
    shift = rng.integers(1, max(k, 2), (he, we))  # always consumed, keeps streams aligned
    if k > 1:
        cls = np.where(swap, (cls + shift) % k, cls)
    vec = protos[cls]  # he × we × C
    noise = rng.normal(vec.shape, std=spec.embed_noise)
    if spec.embed_noise > 0:
        vec = vec + noise
        vec /= np.linalg.norm(vec, axis=-1, keepdims=True)
    return GeoEmbedding(vec.transpose(2, 0, 1).astype(np.float32), tile_id=tile_id)


def gen_sample(spec: SceneSpec, sample_id: str) -> Sample:
    rng = sample_rng(spec, sample_id)
    labels = gen_labelmap(spec, rng.child("labels"))
    image = render_image(labels, spec, rng.child("image"))
    emb = gen_embedding(labels, spec, rng.child("embed"), tile_id=sample_id)
    return Sample(sample_id, image, emb.values, labels)


def drifted_embedding(spec: SceneSpec, sample: Sample, drift: float) -> np.ndarray:
    """Re-draw a sample's embedding with drift probability ``drift``."""
    rng = sample_rng(spec, sample.id).child(f"drift:{drift!r}")
    return gen_embedding(sample.label, spec.replace(drift=drift), rng, sample.id).values


def split_ids(spec: SceneSpec, count: int, ratio: float) -> tuple[list[str], list[str]]:
    ids = [f"{i:06d}" for i in range(count)]
    n_train = int(round(count * ratio))
    perm = Rng(spec.seed, "split").permutation(count)
    train = sorted(ids[i] for i in perm[:n_train])
    test = sorted(ids[i] for i in perm[n_train:])
    return train, test


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def gen_dataset(spec: SceneSpec, count: int, ratio: float, out_dir: str | os.PathLike) -> Path:
    if count < 2:
        raise ValidationError("a dataset needs at least 2 samples")
    if not 0.0 < ratio < 1.0:
        raise ValidationError(f"split ratio must lie in (0, 1), got {ratio}")
    out = Path(out_dir)
    train, test = split_ids(spec, count, ratio)
    sums = {}
    for sid in sorted(train + test):
        s = gen_sample(spec, sid)
        d = out / "samples" / sid
        d.mkdir(parents=True, exist_ok=True)
        for name, arr in (("image", s.image), ("embed", s.embed), ("label", s.label)):
            p = d / f"{name}.sst"
            sst.save(p, arr)
            sums[f"samples/{sid}/{name}.sst"] = _sha256(p)
    meta = {"schema": DATASET_SCHEMA, "spec": spec.to_dict(), "seed": spec.seed, "count": count,
            "ratio": ratio, "splits": {"train": train, "test": test}}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    sums["meta.json"] = _sha256(out / "meta.json")
    (out / "checksums.json").write_text(json.dumps(sums, indent=2, sort_keys=True) + "\n")
    return out


def verify_checksums(root: str | os.PathLike) -> list[str]:
    """Relative paths whose content no longer matches the checksum manifest."""
    root = Path(root)
    sums = json.loads((root / "checksums.json").read_text())
    return [rel for rel, digest in sums.items() if not (root / rel).exists() or _sha256(root / rel) != digest]


@dataclass
class Dataset:
    root: Path
    spec: SceneSpec
    train: list[Sample]
    test: list[Sample]


def load_sample(root: Path, sid: str) -> Sample:
    d = root / "samples" / sid
    return Sample(sid, sst.load(d / "image.sst"), sst.load(d / "embed.sst"), sst.load(d / "label.sst"))


def load_dataset(root: str | os.PathLike, verify: bool = True) -> Dataset:
    root = Path(root)
    meta = json.loads((root / "meta.json").read_text())
    if meta.get("schema") != DATASET_SCHEMA:
        raise ValidationError(f"unsupported dataset schema {meta.get('schema')!r}")
    if verify:
        bad = verify_checksums(root)
        if bad:
            raise ValidationError(f"checksum mismatch for {len(bad)} file(s), e.g. {bad[0]}")
    spec = SceneSpec(**meta["spec"])
    return Dataset(root, spec,
                   [load_sample(root, s) for s in meta["splits"]["train"]],
                   [load_sample(root, s) for s in meta["splits"]["test"]])


def write_pgm(path: str | os.PathLike, mask: np.ndarray, num_classes: int | None = None) -> None:
    """Binary P5 export; class indices are stretched over 0..255 for viewing."""
    mask = np.asarray(mask)
    k = int(num_classes if num_classes is not None else mask.max() + 1)
    step = 255 // max(k - 1, 1)
    img = np.clip(mask.astype(np.int64) * step, 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValidationError("not a binary PGM (P5) file")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval > 255:
        raise ValidationError("only 8-bit PGM is supported")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)
