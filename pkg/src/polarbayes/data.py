"""Synthetic Gaussian-mixture datasets, mean-shifted OOD variants, and JSON
Lines persistence.

Class means sit on a seeded random orthonormal frame scaled by the overlap
parameter, so every pair of classes is equally separated; unit-variance
isotropic noise around each mean makes the overlap parameter directly the
separation-to-noise ratio (up to the fixed sqrt(2) frame geometry).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch, EmptyDataset, LabelOutOfRange, ParseError, ShapeMismatch
from .numerics import Rng, as_matrix, qr_orthonormalize


@dataclass
class Dataset:
    x: np.ndarray  # (N, d0)
    y: np.ndarray  # (N,) int labels in [0, C)
    num_classes: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = as_matrix(self.x)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.shape[0] != self.y.shape[0]:
            raise DimMismatch("x and y row counts differ")
        if self.x.shape[0] < 1:
            raise EmptyDataset("dataset needs at least one example")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise LabelOutOfRange("label outside [0, num_classes)")
        if not np.all(np.isfinite(self.x)):
            raise ParseError("non-finite feature value")

    @property
    def input_dim(self) -> int:
        return self.x.shape[1]


@dataclass
class SynthSpec:
    classes: int
    dim: int
    per_class: int
    overlap: float
    seed: int
    shift: np.ndarray | None = None

    def __post_init__(self):
        if self.classes < 2:
            raise ShapeMismatch("need at least two classes")
        if self.overlap <= 0:
            raise ValueError("overlap scale must be positive")
        if self.dim < self.classes:
            raise DimMismatch(
                f"input dim {self.dim} must be >= classes {self.classes} "
                "to place means on an orthonormal frame"
            )


def class_means(spec: SynthSpec) -> np.ndarray:
    """The (C, d0) means implied by a spec; useful as a nearest-mean oracle."""
    rng = Rng(spec.seed)
    frame = qr_orthonormalize(rng.standard_normal(spec.dim, spec.classes))
    return spec.overlap * frame.T


def gen_gaussian_mixture(spec: SynthSpec) -> Dataset:
    """Unit-noise Gaussian blobs around the frame means, deterministic per seed."""
    rng = Rng(spec.seed)
    frame = qr_orthonormalize(rng.standard_normal(spec.dim, spec.classes))
    means = spec.overlap * frame.T
    xs, ys = [], []
    for c in range(spec.classes):
        xs.append(means[c] + rng.standard_normal(spec.per_class, spec.dim))
        ys.append(np.full(spec.per_class, c, dtype=np.int64))
    x = np.vstack(xs)
    y = np.concatenate(ys)
    ds = Dataset(
        x=x,
        y=y,
        num_classes=spec.classes,
        provenance={
            "kind": "synthetic",
            "classes": spec.classes,
            "dim": spec.dim,
            "per_class": spec.per_class,
            "overlap": spec.overlap,
            "seed": spec.seed,
        },
    )
    if spec.shift is not None:
        ds = shift(ds, spec.shift)
    return ds


def shift(dataset: Dataset, delta) -> Dataset:
    """Translate every input by delta; labels are untouched."""
    delta = np.asarray(delta, dtype=np.float64).reshape(-1)
    if delta.shape[0] != dataset.input_dim:
        raise ShapeMismatch(f"shift dim {delta.shape[0]} != input dim {dataset.input_dim}")
    prov = dict(dataset.provenance)
    prov["shift"] = delta.tolist()
    return Dataset(x=dataset.x + delta, y=dataset.y.copy(), num_classes=dataset.num_classes, provenance=prov)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelOutOfRange(f"label outside [0, {num_classes})")
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def save_jsonl(dataset: Dataset, path) -> None:
    """One {"x": [...], "y": int} record per line, floats at 17 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        for row, label in zip(dataset.x, dataset.y):
            coords = ", ".join(f"{v:.17g}" for v in row)
            fh.write(f'{{"x": [{coords}], "y": {int(label)}}}\n')


def load_jsonl(path) -> Dataset:
    """Parse a JSON Lines dataset, validating dimensions line by line.

    The class count is 1 + max(label); all lines must share one input dim.
    """
    xs: list[list[float]] = []
    ys: list[int] = []
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: {exc}") from exc
            if not isinstance(rec, dict) or "x" not in rec or "y" not in rec:
                raise ParseError(f"line {lineno}: record needs 'x' and 'y'")
            xvec = rec["x"]
            if not isinstance(xvec, list) or not all(isinstance(v, (int, float)) for v in xvec):
                raise ParseError(f"line {lineno}: 'x' must be a list of numbers")
            if dim is None:
                dim = len(xvec)
            elif len(xvec) != dim:
                raise DimMismatch(f"line {lineno}: dim {len(xvec)} != {dim}")
            label = rec["y"]
            if not isinstance(label, int) or isinstance(label, bool) or label < 0:
                raise LabelOutOfRange(f"line {lineno}: 'y' must be a nonnegative integer")
            xs.append([float(v) for v in xvec])
            ys.append(label)
    if not xs:
        raise EmptyDataset(f"no records in {path}")
    return Dataset(
        x=np.array(xs, dtype=np.float64),
        y=np.array(ys, dtype=np.int64),
        num_classes=int(max(ys)) + 1,
        provenance={"kind": "file", "path": str(path)},
    )
