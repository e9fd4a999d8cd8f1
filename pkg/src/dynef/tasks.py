"""Multi-task spike-train classification with a two-layer network.

Input neurons (one per pixel) drive every output neuron causally; each
output neuron also has a self-loop. Output neurons are split into groups,
one per task, and neurons of the same group are laterally coupled.

Encoding: a pixel of intensity ``p`` spikes i.i.d. with probability
``0.5 * p``. The target neuron of each group spikes once every four steps
(at ``t = 1, 5, 9, ...`` by default; the offset is ``label_phase``) and the
others stay silent. Decoding picks the neuron with the most spikes.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import _rng
from .basis import BasisBank
from .graph import GraphPair
from .model import ModelParams, TimeSeries, sample_sequence

log = logging.getLogger(__name__)

ORIENTATIONS = ("v", "r")


@dataclass
class ImageExample:
    pixels: np.ndarray      # (H, W) in [0, 1]
    digit: int              # class index
    orientation: int = 0    # 0 = upright ("v"), 1 = rotated ("r")
    raw_label: str = ""

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim != 2:
            raise ValueError("pixels must be an H x W array")
        if px.size and (np.nanmin(px) < 0.0 or np.nanmax(px) > 1.0 or np.isnan(px).any()):
            raise ValueError("pixel values must lie in [0, 1]")
        self.pixels = px

    @property
    def labels(self) -> dict[str, int]:
        return {"digit": self.digit, "orientation": self.orientation}


@dataclass(frozen=True)
class TwoLayerSpec:
    n_inputs: int
    groups: tuple[tuple[str, int], ...] = (("digit", 2), ("orientation", 2))
    T: int = 40
    label_phase: int = 1

    def __post_init__(self):
        if not 1 <= self.label_phase <= 4:
            raise ValueError("label_phase must be in 1..4")
        if self.n_inputs < 1:
            raise ValueError("need at least one input neuron")
        object.__setattr__(self, "groups", tuple((str(n), int(c)) for n, c in self.groups))
        for name, n in self.groups:
            if n < 2:
                raise ValueError(f"output group {name!r} needs at least 2 classes")

    @property
    def n_outputs(self) -> int:
        return sum(n for _, n in self.groups)

    @property
    def n_units(self) -> int:
        return self.n_inputs + self.n_outputs

    def group_units(self) -> list[np.ndarray]:
        out, start = [], self.n_inputs
        for _, n in self.groups:
            out.append(np.arange(start, start + n))
            start += n
        return out

    @property
    def output_units(self) -> np.ndarray:
        return np.arange(self.n_inputs, self.n_units)


def build_two_layer_graphs(spec: TwoLayerSpec, lateral: bool = True) -> GraphPair:
    """Inputs -> every output, output self-loops, cliques within output groups."""
    outputs = spec.output_units.tolist()
    causal = [(j, i) for j in range(spec.n_inputs) for i in outputs]
    causal += [(i, i) for i in outputs]
    lat = []
    if lateral:
        for units in spec.group_units():
            u = units.tolist()
            lat += [(u[a], u[b]) for a in range(len(u)) for b in range(a + 1, len(u))]
    return GraphPair.from_edges(spec.n_units, causal, lat)


def rate_encode(pixels, T: int, seed: int = 0) -> np.ndarray:
    """``(n_pixels, T)`` Bernoulli spike trains with rate ``0.5 * pixel``."""
    p = np.asarray(pixels, dtype=float).ravel()
    if p.size and (p.min() < 0.0 or p.max() > 1.0 or np.isnan(p).any()):
        raise ValueError("pixel values must lie in [0, 1]")
    rng = _rng.stream(seed, "rate_encode")
    return (rng.random((p.size, T)) < 0.5 * p[:, None]).astype(np.int64)


def label_encode(cls: int, group_size: int, T: int, phase: int = 1) -> np.ndarray:
    """``(group_size, T)`` target trains: one spike every four steps on ``cls``.

    The first spike falls at time ``phase`` (1-based). With ``phase=4`` the
    pattern opens with three silent steps, which lets the first target spike
    depend on the input traces.
    """
    if not 0 <= cls < group_size:
        raise ValueError(f"class {cls} out of range for a group of {group_size}")
    if not 1 <= phase <= 4:
        raise ValueError("phase must be in 1..4")
    out = np.zeros((group_size, T), dtype=np.int64)
    out[cls, phase - 1::4] = 1
    return out


def rate_decode(counts) -> tuple[int, ...]:
    """Argmax of spike counts per group; ties go to the lowest index."""
    return tuple(int(np.argmax(np.asarray(c))) for c in counts)


def encode_example(example: ImageExample, spec: TwoLayerSpec, seed: int = 0) -> TimeSeries:
    """Full training sequence: rate-coded inputs stacked over label-coded outputs."""
    labels = example.labels
    parts = [rate_encode(example.pixels, spec.T, seed)]
    if parts[0].shape[0] != spec.n_inputs:
        raise ValueError(f"example has {parts[0].shape[0]} pixels, spec expects {spec.n_inputs}")
    for name, n in spec.groups:
        parts.append(label_encode(labels[name], n, spec.T, spec.label_phase))
    return TimeSeries(np.concatenate(parts, axis=0), 2)


def encode_dataset(examples, spec: TwoLayerSpec, seed: int = 0) -> list[TimeSeries]:
    return [encode_example(ex, spec, _rng.child_seed(seed, "encode", k)) for k, ex in enumerate(examples)]


def classify(params: ModelParams, graphs: GraphPair, bank: BasisBank, input_trains,
             spec: TwoLayerSpec, seed: int = 0, mode: str = "auto", gibbs=None) -> tuple[int, ...]:
    """Predict one class per output group.

    Inputs are clamped to ``input_trains``; outputs are sampled forward in
    time from the model and their spikes counted per group.
    """
    trains = np.asarray(input_trains, dtype=np.int64)
    if trains.shape[0] != spec.n_inputs:
        raise ValueError(f"expected {spec.n_inputs} input trains, got {trains.shape[0]}")
    T = trains.shape[1]
    clamp = {u: trains[u] for u in range(spec.n_inputs)}
    x = sample_sequence(params, graphs, bank, T, seed, clamp=clamp, mode=mode, gibbs=gibbs)
    counts = [x.symbols[units].sum(axis=1) for units in spec.group_units()]
    return rate_decode(counts)


def evaluate_accuracy(params: ModelParams, graphs: GraphPair, bank: BasisBank, examples,
                      spec: TwoLayerSpec, seed: int = 0) -> dict[str, float]:
    """Per-task accuracy on freshly encoded test inputs."""
    if not examples:
        return {name: math.nan for name, _ in spec.groups}
    hits = np.zeros(len(spec.groups))
    for k, ex in enumerate(examples):
        trains = rate_encode(ex.pixels, spec.T, _rng.child_seed(seed, "test-encode", k))
        pred = classify(params, graphs, bank, trains, spec, _rng.child_seed(seed, "classify", k))
        truth = ex.labels
        hits += [pred[g] == truth[name] for g, (name, _) in enumerate(spec.groups)]
    return {name: float(h / len(examples)) for (name, _), h in zip(spec.groups, hits)}


# ---------------------------------------------------------------------------
# datasets


def rotate_example(ex: ImageExample, angle: float) -> ImageExample:
    """Bilinear rotation about the image center, clipped back to [0, 1]."""
    px = ndimage.rotate(ex.pixels, angle, reshape=False, order=1, mode="constant", cval=0.0)
    return ImageExample(np.clip(px, 0.0, 1.0), ex.digit, 1, ex.raw_label)


def augment_rotations(examples, seed: int = 0, rotation_range=(30.0, 150.0)) -> list[ImageExample]:
    """Originals (orientation ``v``) followed by one rotated copy of each (``r``)."""
    lo, hi = rotation_range
    rng = _rng.stream(seed, "rotate")
    upright = [ImageExample(ex.pixels, ex.digit, 0, ex.raw_label) for ex in examples]
    rotated = [rotate_example(ex, rng.uniform(lo, hi)) for ex in upright]
    return upright + rotated


def _square_side(n: int) -> int:
    side = int(round(math.sqrt(n)))
    if side * side != n:
        raise ValueError(f"{n} pixels is not a square image; pass height and width")
    return side


def load_dataset(path, height: int | None = None, width: int | None = None,
                 classes=None, augment: bool = False, rotation_range=(30.0, 150.0),
                 seed: int = 0) -> list[ImageExample]:
    """Read an image CSV.

    The header names the pixel columns (any names) followed by ``label`` and
    an optional ``orientation`` column (``v``/``r``). Labels are mapped to
    class indices in sorted order unless ``classes`` fixes the order.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        log.warning("dataset %s is empty", path)
        return []
    header = [h.strip() for h in rows[0]]
    if "label" not in header:
        raise ValueError(f"{path}:1: header has no 'label' column")
    li = header.index("label")
    oi = header.index("orientation") if "orientation" in header else None
    pix_cols = [k for k in range(len(header)) if k not in (li, oi)]
    n_pix = len(pix_cols)
    if height is None or width is None:
        height = width = _square_side(n_pix)
    if height * width != n_pix:
        raise ValueError(f"{path}:1: {n_pix} pixel columns do not fit {height}x{width}")

    parsed = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            px = np.array([float(row[k]) for k in pix_cols])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-numeric pixel value ({exc})") from None
        if np.isnan(px).any() or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError(f"{path}:{lineno}: pixel values must lie in [0, 1]")
        orient = 0
        if oi is not None:
            o = row[oi].strip().lower()
            if o not in ORIENTATIONS:
                raise ValueError(f"{path}:{lineno}: orientation must be 'v' or 'r', got {row[oi]!r}")
            orient = ORIENTATIONS.index(o)
        parsed.append((px.reshape(height, width), row[li].strip(), orient))

    labels = sorted({p[1] for p in parsed}, key=_label_key) if classes is None else [str(c) for c in classes]
    index = {lab: k for k, lab in enumerate(labels)}
    out = []
    for lineno, (px, lab, orient) in enumerate(parsed, start=2):
        if lab not in index:
            raise ValueError(f"{path}:{lineno}: label {lab!r} not among classes {labels}")
        out.append(ImageExample(px, index[lab], orient, lab))
    if augment:
        out = augment_rotations(out, seed, rotation_range)
    return out


def _label_key(lab: str):
    try:
        return (0, float(lab), lab)
    except ValueError:
        return (1, 0.0, lab)


def write_dataset(examples, path, classes=None) -> None:
    """Write examples in the CSV layout :func:`load_dataset` reads."""
    examples = list(examples)
    n = examples[0].pixels.size if examples else 0
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"p{k}" for k in range(n)] + ["label", "orientation"])
        for ex in examples:
            lab = ex.raw_label or (str(classes[ex.digit]) if classes else str(ex.digit))
            w.writerow([repr(float(v)) for v in ex.pixels.ravel()] + [lab, ORIENTATIONS[ex.orientation]])


def synthetic_digits(n_per_class: int, size: int = 8, seed: int = 0, noise: float = 0.1) -> list[ImageExample]:
    """Upright "1"- and "7"-like strokes with random jitter and pixel noise.

    A desk-scale stand-in for handwritten digits: class 0 is a vertical bar,
    class 1 a top bar joined to a descending diagonal.
    """
    rng = _rng.stream(seed, "synthetic-digits")
    out = []
    for k in range(2 * n_per_class):
        cls = k % 2
        img = np.zeros((size, size))
        top = rng.integers(0, 2)
        bottom = size - rng.integers(0, 2)
        if cls == 0:
            col = size // 2 + rng.integers(-1, 2)
            img[top:bottom, col] = 1.0
            if rng.random() < 0.5:
                img[top:bottom, min(col + 1, size - 1)] = 0.6
        else:
            left = rng.integers(1, 3)
            right = size - rng.integers(1, 3)
            img[top, left:right] = 1.0
            rows = np.arange(top + 1, bottom)
            cols = np.round(np.linspace(right - 1, left + 1, len(rows))).astype(int)
            img[rows, cols] = 1.0
        img = np.clip(img + noise * rng.random((size, size)), 0.0, 1.0)
        out.append(ImageExample(img, cls, 0, ("1", "7")[cls]))
    return out
