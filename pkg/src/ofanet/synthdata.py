"""Deterministic synthetic imagery per modality.

Every sample is a pure function of (global_seed, modality id, index), seeded
through sha-256 counters, so generation is random-access, reproducible
bit-for-bit, and safe to parallelize. Images combine three ingredients with
fixed amplitudes: a spectral vector broadcast over all pixels (1.0), a
per-channel spatially correlated field (0.5), and white noise (0.1), clamped
to [-3, 3].

Labeled variants reuse the same recipe with a palette of class signatures
whose spectral vectors are kept >= 0.5 apart in L2, which keeps the linear
probing tasks solvable by construction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .modalities import ModalitySpec
from .seeds import generator, parallel_map

DESK_IMAGE_SIZE = 32
IMAGE_CLAMP = 3.0
SPECTRAL_AMP = 1.0
FIELD_AMP = 0.5
NOISE_AMP = 0.1
MIN_CLASS_SEPARATION = 0.5
SEG_FIELD_PASSES = 8

_DATASET_MAGIC = b"OFAD"
_DATASET_VERSION = 1
LABEL_NONE, LABEL_CLASS, LABEL_MASK = 0, 1, 2


@dataclass
class SynthSample:
    image: np.ndarray  # [h, w, c] float32 in [-3, 3]
    label: int | None = None
    mask: np.ndarray | None = None  # [h, w] uint8 class indices


@dataclass(frozen=True)
class ClassSignature:
    class_index: int
    spectral: np.ndarray  # [c] in [-1, 1]
    texture_passes: int


def _smooth_once(fields: np.ndarray) -> np.ndarray:
    """One 3x3 binomial pass over the trailing two axes, edge-clamped."""
    h, w = fields.shape[-2:]
    pad = [(0, 0)] * (fields.ndim - 2) + [(1, 1), (1, 1)]
    p = np.pad(fields, pad, mode="edge")
    out = np.zeros_like(fields)
    weights = ((1, 2, 1), (2, 4, 2), (1, 2, 1))
    for dy in range(3):
        for dx in range(3):
            out += weights[dy][dx] * p[..., dy : dy + h, dx : dx + w]
    return out / 16.0


def _smooth(fields: np.ndarray, passes: int) -> np.ndarray:
    for _ in range(passes):
        fields = _smooth_once(fields)
    return fields


def _standardize(fields: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance over the trailing two axes."""
    mu = fields.mean(axis=(-2, -1), keepdims=True)
    sd = fields.std(axis=(-2, -1), keepdims=True)
    return (fields - mu) / np.maximum(sd, 1e-12)


def gen_field(h: int, w: int, smooth_passes: int, rng_key: int) -> np.ndarray:
    """Standardized correlated noise field [h, w], float32."""
    if h < 4 or w < 4:
        raise ValueError(f"field size must be >= 4, got {h}x{w}")
    rng = np.random.Generator(np.random.PCG64(rng_key))
    field = _standardize(_smooth(rng.standard_normal((h, w)), smooth_passes))
    return field.astype(np.float32)


def _texture_fields(rng: np.random.Generator, c: int, h: int, w: int, passes: int) -> np.ndarray:
    """[c, h, w] independent standardized fields from one stream."""
    return _standardize(_smooth(rng.standard_normal((c, h, w)), passes))


def _assemble(spectral: np.ndarray, fields: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Spectral + texture + noise mix in [h, w, c], clamped."""
    img = (
        SPECTRAL_AMP * spectral[None, None, :]
        + FIELD_AMP * np.moveaxis(fields, 0, -1)
        + NOISE_AMP * noise
    )
    return np.clip(img, -IMAGE_CLAMP, IMAGE_CLAMP).astype(np.float32)


def gen_pretrain_sample(
    spec: ModalitySpec, global_seed: int, index: int, size: int = DESK_IMAGE_SIZE
) -> SynthSample:
    """Unlabeled sample: a fresh random signature per index."""
    if index < 0:
        raise ValueError(f"index must be >= 0, got {index}")
    rng = generator("pretrain", global_seed, spec.id, index)
    spectral = rng.uniform(-1.0, 1.0, spec.channels)
    passes = int(rng.integers(2, 7))
    fields = _texture_fields(rng, spec.channels, size, size, passes)
    noise = rng.standard_normal((size, size, spec.channels))
    return SynthSample(image=_assemble(spectral, fields, noise))


def gen_pretrain_stream(
    spec: ModalitySpec, global_seed: int, count: int, size: int = DESK_IMAGE_SIZE
) -> list[SynthSample]:
    """count pretrain samples, indices 0..count-1, generated in parallel."""
    return parallel_map(lambda i: gen_pretrain_sample(spec, global_seed, i, size), range(count))


def class_palette(spec: ModalitySpec, k_classes: int, global_seed: int) -> list[ClassSignature]:
    """k signatures with pairwise spectral separation >= 0.5 in L2."""
    _check_classes(k_classes)
    rng = generator("palette", global_seed, spec.id, k_classes)
    for _ in range(10_000):
        vectors = rng.uniform(-1.0, 1.0, (k_classes, spec.channels))
        diffs = vectors[:, None, :] - vectors[None, :, :]
        dist = np.sqrt((diffs**2).sum(axis=-1))
        dist[np.diag_indices(k_classes)] = np.inf
        if dist.min() >= MIN_CLASS_SEPARATION:
            passes = rng.integers(2, 7, k_classes)
            return [
                ClassSignature(i, vectors[i].copy(), int(passes[i])) for i in range(k_classes)
            ]
    raise ValueError(
        f"cannot place {k_classes} signatures {MIN_CLASS_SEPARATION} apart "
        f"with {spec.channels} channel(s)"
    )


def _check_classes(k_classes: int) -> None:
    if k_classes < 2:
        raise ValueError(f"k_classes must be >= 2, got {k_classes}")
    if k_classes > 255:
        raise ValueError(f"k_classes must be <= 255, got {k_classes}")


def gen_cls_dataset(
    spec: ModalitySpec,
    n: int,
    k_classes: int,
    global_seed: int,
    size: int = DESK_IMAGE_SIZE,
) -> list[SynthSample]:
    """Labeled classification set; class counts balanced within one."""
    _check_classes(k_classes)
    if n < k_classes:
        raise ValueError(f"need n >= k_classes, got n={n}, k={k_classes}")
    palette = class_palette(spec, k_classes, global_seed)
    labels = np.array([i % k_classes for i in range(n)])
    generator("cls-labels", global_seed, spec.id, n, k_classes).shuffle(labels)

    def build(index: int) -> SynthSample:
        sig = palette[labels[index]]
        rng = generator("cls", global_seed, spec.id, index)
        fields = _texture_fields(rng, spec.channels, size, size, sig.texture_passes)
        noise = rng.standard_normal((size, size, spec.channels))
        return SynthSample(
            image=_assemble(sig.spectral, fields, noise), label=int(labels[index])
        )

    return parallel_map(build, range(n))


def gen_seg_dataset(
    spec: ModalitySpec,
    n: int,
    k_classes: int,
    global_seed: int,
    size: int = DESK_IMAGE_SIZE,
) -> list[SynthSample]:
    """Labeled segmentation set; mask = per-pixel argmax over k smooth fields."""
    _check_classes(k_classes)
    if n < k_classes:
        raise ValueError(f"need n >= k_classes, got n={n}, k={k_classes}")
    palette = class_palette(spec, k_classes, global_seed)
    spectra = np.stack([sig.spectral for sig in palette])  # [k, c]

    def build(index: int) -> SynthSample:
        rng = generator("seg", global_seed, spec.id, index)
        class_fields = _standardize(_smooth(rng.standard_normal((k_classes, size, size)), SEG_FIELD_PASSES))
        mask = class_fields.argmax(axis=0).astype(np.uint8)
        noise = rng.standard_normal((size, size, spec.channels))
        img = SPECTRAL_AMP * spectra[mask] + NOISE_AMP * noise
        img = np.clip(img, -IMAGE_CLAMP, IMAGE_CLAMP).astype(np.float32)
        return SynthSample(image=img, mask=mask)

    return parallel_map(build, range(n))


def resize_nearest(image: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbor resize of [h, w] or [h, w, c] to size x size.

    Pure index arithmetic: label-safe for masks, bit-exact across runs.
    """
    h, w = image.shape[:2]
    rows = (np.arange(size) * h) // size
    cols = (np.arange(size) * w) // size
    return np.ascontiguousarray(image[rows][:, cols])


# ---------------------------------------------------------------------------
# OFAD dataset files


@dataclass
class LoadedDataset:
    modality_id: str
    images: np.ndarray  # [n, h, w, c] float32
    labels: np.ndarray | None = None  # [n] int
    masks: np.ndarray | None = None  # [n, h, w] uint8

    @property
    def label_kind(self) -> int:
        if self.labels is not None:
            return LABEL_CLASS
        if self.masks is not None:
            return LABEL_MASK
        return LABEL_NONE

    def to_samples(self) -> list[SynthSample]:
        out = []
        for i in range(self.images.shape[0]):
            out.append(
                SynthSample(
                    image=self.images[i],
                    label=int(self.labels[i]) if self.labels is not None else None,
                    mask=self.masks[i] if self.masks is not None else None,
                )
            )
        return out


def stack_samples(modality_id: str, samples: list[SynthSample]) -> LoadedDataset:
    images = np.stack([s.image for s in samples]).astype(np.float32)
    labels = masks = None
    if samples and samples[0].label is not None:
        labels = np.array([s.label for s in samples], dtype=np.int64)
    if samples and samples[0].mask is not None:
        masks = np.stack([s.mask for s in samples]).astype(np.uint8)
    return LoadedDataset(modality_id, images, labels, masks)


def save_dataset(path: str | Path, dataset: LoadedDataset) -> None:
    """Write an OFAD file atomically (temp file + rename; no partials)."""
    path = Path(path)
    n, h, w, c = dataset.images.shape
    kind = dataset.label_kind
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(_DATASET_MAGIC)
            fh.write(struct.pack("<H", _DATASET_VERSION))
            ident = dataset.modality_id.encode("ascii")
            fh.write(struct.pack("<I", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<IHHHB", n, h, w, c, kind))
            for i in range(n):
                fh.write(np.ascontiguousarray(dataset.images[i], dtype="<f4").tobytes())
                if kind == LABEL_CLASS:
                    fh.write(struct.pack("<H", int(dataset.labels[i])))
                elif kind == LABEL_MASK:
                    fh.write(np.ascontiguousarray(dataset.masks[i], dtype=np.uint8).tobytes())
        tmp.replace(path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def load_dataset(path: str | Path) -> LoadedDataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _DATASET_MAGIC:
        raise ValueError(f"{path}: not an OFAD dataset file")
    off = 4
    (version,) = struct.unpack_from("<H", raw, off)
    off += 2
    if version != _DATASET_VERSION:
        raise ValueError(f"{path}: unsupported OFAD version {version}")
    (id_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    modality_id = raw[off : off + id_len].decode("ascii")
    off += id_len
    n, h, w, c, kind = struct.unpack_from("<IHHHB", raw, off)
    off += struct.calcsize("<IHHHB")
    img_bytes = h * w * c * 4
    images = np.empty((n, h, w, c), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64) if kind == LABEL_CLASS else None
    masks = np.empty((n, h, w), dtype=np.uint8) if kind == LABEL_MASK else None
    for i in range(n):
        images[i] = np.frombuffer(raw, dtype="<f4", count=h * w * c, offset=off).reshape(h, w, c)
        off += img_bytes
        if kind == LABEL_CLASS:
            (labels[i],) = struct.unpack_from("<H", raw, off)
            off += 2
        elif kind == LABEL_MASK:
            masks[i] = np.frombuffer(raw, dtype=np.uint8, count=h * w, offset=off).reshape(h, w)
            off += h * w
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes after sample data")
    return LoadedDataset(modality_id, images, labels, masks)
