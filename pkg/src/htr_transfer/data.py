"""Line-image datasets: manifests, alphabets, preprocessing and batching.

A manifest is a UTF-8 text file with one ``<image path>\\t<transcript>`` record
per line; image paths are relative to the manifest. Images are any grayscale
raster Pillow can read (the synthetic generator writes PNG).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from PIL import Image

from .ctc import min_frames


class ManifestError(ValueError):
    pass


class UnknownCharacterError(ValueError):
    def __init__(self, message: str, chars: Sequence[str] = ()):
        super().__init__(message)
        self.chars = list(chars)


class InfeasibleSampleError(ValueError):
    pass


@dataclass
class Sample:
    image: np.ndarray  # [H, W]
    transcript: str
    id: str = ""


@dataclass(frozen=True)
class Alphabet:
    chars: tuple

    def __post_init__(self):
        if len(set(self.chars)) != len(self.chars):
            raise ValueError("alphabet characters must be unique")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.chars)})

    @property
    def size(self) -> int:
        return len(self.chars)

    @property
    def blank(self) -> int:
        return len(self.chars)

    def __len__(self) -> int:
        return len(self.chars)

    def __contains__(self, ch) -> bool:
        return ch in self._index

    def unknown(self, text: str) -> list[str]:
        return sorted({c for c in text if c not in self._index})

    def encode(self, text: str, sample_id: str = "") -> list[int]:
        missing = self.unknown(text)
        if missing:
            who = f"sample {sample_id!r}: " if sample_id else ""
            raise UnknownCharacterError(f"{who}characters not in alphabet: {missing!r}", missing)
        return [self._index[c] for c in text]

    def decode(self, labels: Iterable[int]) -> str:
        return "".join(self.chars[k] for k in labels)


def build_alphabet(samples: Sequence[Sample]) -> Alphabet:
    """Sorted (code point order) set of characters across all transcripts."""
    if not samples:
        raise ValueError("cannot build an alphabet from zero samples")
    chars = set()
    for s in samples:
        chars.update(s.transcript)
    return Alphabet(tuple(sorted(chars)))


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"))


def load_manifest(path, load_images: bool = True) -> list[Sample]:
    base = os.path.dirname(os.path.abspath(path))
    samples, seen = [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ManifestError(f"{path}:{lineno}: expected '<image>\\t<transcript>'")
            rel, text = line.split("\t", 1)
            if not rel:
                raise ManifestError(f"{path}:{lineno}: empty image path")
            if rel in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate image {rel!r} (first on line {seen[rel]})")
            seen[rel] = lineno
            full = os.path.join(base, rel)
            if not os.path.isfile(full):
                raise ManifestError(f"{path}:{lineno}: missing image {rel!r}")
            image = read_image(full) if load_images else None
            samples.append(Sample(image, text, rel))
    return samples


def write_manifest(path, records: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rel, text in records:
            if "\t" in text or "\n" in text:
                raise ManifestError(f"transcript for {rel!r} contains a tab or newline")
            fh.write(f"{rel}\t{text}\n")


# --- preprocessing ---------------------------------------------------------

def _normalize(image: np.ndarray) -> tuple[np.ndarray, bool]:
    """Scale to [0, 1] with the usual dark-ink-on-light convention preserved."""
    img = np.asarray(image)
    if img.ndim == 3:
        img = img.mean(axis=2)
    if img.ndim != 2 or img.size == 0 or min(img.shape) < 1:
        raise ValueError(f"expected a non-empty 2-D image, got shape {np.shape(image)}")
    if np.issubdtype(img.dtype, np.integer):
        top = 255.0 if img.max() <= 255 else float(np.iinfo(img.dtype).max)
        x = img.astype(np.float64) / top
    else:
        x = img.astype(np.float64)
        if x.max() > 1.0:
            x = x / 255.0
    values = np.unique(x)
    binary = len(values) <= 2 and set(values.tolist()) <= {0.0, 1.0}
    return np.clip(x, 0.0, 1.0), binary


def resize_to_height(x: np.ndarray, height: int) -> np.ndarray:
    """Aspect-preserving bilinear resize of a float [H, W] matrix."""
    h, w = x.shape
    if h == height:
        return x.copy()
    new_w = max(1, int(round(w * height / h)))
    im = Image.fromarray(x.astype(np.float32), mode="F")
    return np.asarray(im.resize((new_w, height), Image.BILINEAR), dtype=np.float64)


def preprocess(image: np.ndarray, target_height: int = 128) -> np.ndarray:
    """Grayscale [H, W] -> float [target_height, W'] with ink = 1, background = 0.

    Two-level (binarized) inputs stay two-level after resizing.
    """
    x, binary = _normalize(image)
    x = 1.0 - x
    x = resize_to_height(x, target_height)
    if binary:
        x = (x >= 0.5).astype(np.float64)
    return np.clip(x, 0.0, 1.0)


def preprocess_samples(samples: Sequence[Sample], target_height: int) -> list[Sample]:
    return [Sample(preprocess(s.image, target_height), s.transcript, s.id) for s in samples]


# --- batching ----------------------------------------------------------------

@dataclass
class Batch:
    images: np.ndarray  # [B, W_max, H, 1]
    widths: np.ndarray  # [B]
    targets: list  # encoded label lists
    ids: list
    transcripts: list = field(default_factory=list)

    def input_lengths(self, downsample: int = 8) -> np.ndarray:
        return self.widths // downsample

    def __len__(self) -> int:
        return len(self.ids)


def check_feasible(samples: Sequence[Sample], alphabet: Alphabet, downsample: int = 8):
    """Split samples into (trainable, rejected) where rejected items carry a reason."""
    ok, rejected = [], []
    for s in samples:
        if not s.transcript:
            rejected.append((s, "empty transcript"))
            continue
        labels = alphabet.encode(s.transcript, s.id)
        frames = s.image.shape[1] // downsample
        need = min_frames(labels)
        if frames < need:
            rejected.append((s, f"{frames} frames for a target needing {need}"))
        else:
            ok.append(s)
    return ok, rejected


def collate(samples: Sequence[Sample], alphabet: Alphabet | None = None, downsample: int = 8,
            min_width: int = 8) -> Batch:
    """Stack preprocessed [H, W] samples into a width-padded [B, W_max, H, 1] batch."""
    if not samples:
        raise ValueError("cannot collate an empty batch")
    heights = {s.image.shape[0] for s in samples}
    if len(heights) != 1:
        raise ValueError(f"samples have mixed heights {sorted(heights)}")
    h = heights.pop()
    widths = np.array([max(s.image.shape[1], min_width) for s in samples], dtype=np.int64)
    images = np.zeros((len(samples), int(widths.max()), h, 1), dtype=np.float64)
    targets = []
    for j, s in enumerate(samples):
        images[j, :s.image.shape[1], :, 0] = s.image.T
        if alphabet is not None:
            labels = alphabet.encode(s.transcript, s.id)
            if len(labels) and widths[j] // downsample < min_frames(labels):
                raise InfeasibleSampleError(
                    f"sample {s.id!r}: {widths[j] // downsample} frames cannot carry {s.transcript!r}")
            targets.append(labels)
    return Batch(images, widths, targets, [s.id for s in samples], [s.transcript for s in samples])


def make_batches(samples: Sequence[Sample], alphabet: Alphabet, batch_size: int = 20,
                 rng: np.random.Generator | None = None, downsample: int = 8,
                 transform: Callable[[np.ndarray], np.ndarray] | None = None) -> list[Batch]:
    """Shuffle (when ``rng`` is given), optionally transform, and collate."""
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    order = np.arange(len(samples)) if rng is None else rng.permutation(len(samples))
    picked = [samples[i] for i in order]
    if transform is not None:
        picked = [Sample(transform(s.image), s.transcript, s.id) for s in picked]
    return [collate(picked[i:i + batch_size], alphabet, downsample)
            for i in range(0, len(picked), batch_size)]
