"""Manifests, batching and synthetic desk-scale datasets.

The label vocabulary is the ten urban scene classes, frozen in alphabetical
order so confusion-matrix axes and one-hot encodings are canonical.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Tuple, Union

import numpy as np

from .errors import InputError, ParseError

SCENE_LABELS = ("airport", "bus", "metro", "metro_station", "park",
                "public_square", "shopping_mall", "street_pedestrian",
                "street_traffic", "tram")

LABEL_TO_INDEX = {name: i for i, name in enumerate(SCENE_LABELS)}


@dataclass
class Manifest:
    """Relative clip paths with their scene labels, for one split."""
    entries: Tuple[Tuple[str, str], ...] = ()
    split: str = "train"

    def __post_init__(self) -> None:
        self.entries = tuple((path, label) for path, label in self.entries)
        if self.split not in ("train", "validation"):
            raise InputError(f"split must be 'train' or 'validation', got {self.split!r}")
        for path, label in self.entries:
            if label not in LABEL_TO_INDEX:
                raise InputError(f"unknown scene label {label!r} for {path!r}")

    def label_indices(self) -> List[int]:
        return [LABEL_TO_INDEX[label] for _, label in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def parse_manifest(text: str, split: str = "train",
                   source: str = "<manifest>") -> Manifest:
    """One 'relative/path.wav<TAB>label' per line; blanks and # comments ignored."""
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "\t" not in line:
            raise ParseError(f"{source} line {lineno}: expected 'path<TAB>label', "
                             f"got {line!r}")
        path, _, label = line.partition("\t")
        path = path.strip()
        label = label.strip()
        if not path:
            raise ParseError(f"{source} line {lineno}: empty path")
        if label not in LABEL_TO_INDEX:
            raise ParseError(f"{source} line {lineno}: unknown scene label {label!r}")
        entries.append((path, label))
    return Manifest(entries, split)


def load_manifest(path: Union[str, Path], split: str = "train") -> Manifest:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_manifest(fh.read(), split, source=str(path))


def format_manifest(manifest: Manifest) -> str:
    return "".join(f"{p}\t{l}\n" for p, l in manifest.entries)


def save_manifest(path: Union[str, Path], manifest: Manifest) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_manifest(manifest))


def one_hot(labels, num_classes: int = len(SCENE_LABELS)) -> np.ndarray:
    """Row-per-sample one-hot float64 matrix."""
    idx = np.asarray(labels, dtype=np.int64)
    if idx.ndim != 1:
        raise InputError(f"labels must be a 1-D sequence, got rank {idx.ndim}")
    if idx.size and (idx.min() < 0 or idx.max() >= num_classes):
        raise InputError(f"label index out of range [0, {num_classes})")
    out = np.zeros((idx.size, num_classes), dtype=np.float64)
    out[np.arange(idx.size), idx] = 1.0
    return out


def batcher(features: np.ndarray, labels: np.ndarray, batch_size: int,
            shuffle_seed: int | None = None,
            num_classes: int = len(SCENE_LABELS)) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield (batch_features, one_hot_labels) covering the set exactly once.

    With a seed, a seeded permutation fixes the order; the final short batch
    is kept. Labels arrive as integer indices and leave one-hot.
    """
    features = np.asarray(features)
    labels = np.asarray(labels)
    n = features.shape[0]
    if n == 0:
        raise InputError("cannot batch an empty dataset")
    if labels.shape[0] != n:
        raise InputError(f"{n} feature rows but {labels.shape[0]} labels")
    if batch_size < 1:
        raise InputError(f"batch_size must be >= 1, got {batch_size}")
    if shuffle_seed is None:
        order = np.arange(n)
    else:
        order = np.random.Generator(np.random.PCG64(shuffle_seed)).permutation(n)
    for start in range(0, n, batch_size):
        pick = order[start:start + batch_size]
        yield features[pick], one_hot(labels[pick], num_classes)


def synth_dataset(classes: int = 10, per_class: int = 4,
                  shape: Tuple[int, int, int] = (8, 20, 3),
                  seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Class-conditional unit-variance Gaussian blobs.

    Class k gets mean 3/sqrt(2) at flattened position k and zero elsewhere,
    so any two class means sit exactly 3 sigma apart. Returns features of
    shape (classes*per_class, *shape) and integer labels.
    """
    if classes < 1:
        raise InputError(f"classes must be >= 1, got {classes}")
    if per_class < 1:
        raise InputError(f"per_class must be >= 1, got {per_class}")
    flat = int(np.prod(shape))
    if classes > flat:
        raise InputError(f"{classes} classes need at least {classes} feature "
                         f"dimensions, shape {shape} has {flat}")
    rng = np.random.Generator(np.random.PCG64(seed))
    n = classes * per_class
    labels = np.repeat(np.arange(classes), per_class)
    means = np.zeros((n, flat), dtype=np.float64)
    means[np.arange(n), labels] = 3.0 / np.sqrt(2.0)
    features = means + rng.standard_normal((n, flat))
    return features.reshape((n,) + tuple(shape)), labels
