"""Synthetic multi-view classification data.

Base samples come from ``C`` Gaussian clusters in ``R^D``.  Each view is an
independently distorted and optionally occluded copy of the base sample.
The image distortions of the reference levels are mapped to vectors:

* pixel erasure -> each coordinate zeroed with probability ``erase_rate``
* rotation range ``+-theta`` -> additive noise with scale
  ``theta / 5 * 0.1 * ||x|| / sqrt(D)``
* image scale ``[a, b]`` -> multiplicative gain uniform in ``[a, b]``
* translation ``p`` -> circular coordinate shift by up to ``round(p * D)``

Occlusions view the coordinates as a ``rows x cols`` grid and keep the
left/right/upper/bottom half (or a quadrant) plus a small overlap band.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

__all__ = [
    "DistortionLevel",
    "LEVELS",
    "ViewSpec",
    "SynthDataset",
    "CSVSchema",
    "generate",
    "grid_shape",
    "occlusion_mask",
    "write_csv",
    "load_csv",
    "dump_binary",
    "load_binary",
    "CSVFormatError",
]


@dataclass(frozen=True)
class DistortionLevel:
    name: str
    erase_rate: float
    rotation: float
    gain_range: tuple
    shift_frac: float

    def __post_init__(self):
        if not 0.0 <= self.erase_rate <= 1.0:
            raise ValueError("erase_rate must lie in [0, 1]")
        lo, hi = self.gain_range
        if not 0 < lo <= hi:
            raise ValueError("gain range must be a positive interval")
        if self.rotation < 0 or not 0.0 <= self.shift_frac <= 1.0:
            raise ValueError("rotation must be >= 0 and shift_frac in [0, 1]")

    @property
    def noise_scale(self) -> float:
        """Noise standard deviation per unit of ``||x|| / sqrt(D)``."""
        return self.rotation / 5.0 * 0.1


LEVELS: Dict[str, DistortionLevel] = {
    lvl.name: lvl
    for lvl in (
        DistortionLevel("Light", 0.05, 5.0, (0.9, 1.1), 0.0),
        DistortionLevel("Medium", 0.10, 7.5, (0.8, 1.2), 0.0),
        DistortionLevel("Heavy", 0.20, 10.0, (0.6, 1.4), 0.20),
        DistortionLevel("Ultimate", 0.40, 20.0, (0.5, 1.5), 0.40),
    )
}

OCCLUSIONS = ("left", "right", "upper", "bottom", "left_upper", "right_upper", "left_bottom", "right_bottom")


@dataclass(frozen=True)
class ViewSpec:
    """``kind`` is ``"full"`` or one of the occlusion names; ``level`` a level name or object."""

    kind: str = "full"
    level: Optional[object] = None

    def __post_init__(self):
        if self.kind != "full" and self.kind not in OCCLUSIONS:
            raise ValueError(f"unknown view kind {self.kind!r}; use 'full' or one of {OCCLUSIONS}")
        if isinstance(self.level, str):
            if self.level not in LEVELS:
                raise ValueError(f"unknown distortion level {self.level!r}; use one of {list(LEVELS)}")
            object.__setattr__(self, "level", LEVELS[self.level])

    def to_dict(self):
        return {"kind": self.kind, "level": None if self.level is None else self.level.name}


def grid_shape(D: int):
    """``(rows, cols)`` with ``rows`` the largest divisor of ``D`` not above ``sqrt(D)``."""
    rows = max(r for r in range(1, int(np.sqrt(D)) + 1) if D % r == 0)
    return rows, D // rows


def _half(n, first, overlap):
    """Index range of the first or second half of ``n`` cells plus the overlap band."""
    band = max(1, int(round(overlap * n))) if n > 1 else 0
    mid = n // 2
    if first:
        return 0, min(n, mid + band)
    return max(0, n - mid - band), n


def occlusion_mask(kind: str, D: int, overlap: float = 0.1) -> np.ndarray:
    """Boolean mask of the coordinates a view keeps."""
    if kind == "full":
        return np.ones(D, dtype=bool)
    rows, cols = grid_shape(D)
    r_lo, r_hi, c_lo, c_hi = 0, rows, 0, cols
    parts = kind.split("_")
    for part in parts:
        if part in ("left", "right"):
            c_lo, c_hi = _half(cols, part == "left", overlap)
        elif part in ("upper", "bottom"):
            r_lo, r_hi = _half(rows, part == "upper", overlap)
        else:
            raise ValueError(f"unknown occlusion {kind!r}")
    grid = np.zeros((rows, cols), dtype=bool)
    grid[r_lo:r_hi, c_lo:c_hi] = True
    return grid.reshape(-1)


@dataclass
class SynthDataset:
    """Train split and ghost split of a multi-view dataset."""

    views: List[np.ndarray]
    y: np.ndarray
    ghost_views: List[np.ndarray]
    ghost_y: np.ndarray
    n_classes: int
    meta: dict = field(default_factory=dict)
    noise: Optional[List[np.ndarray]] = None

    @property
    def n_views(self) -> int:
        return len(self.views)


def _distort(x, level: Optional[DistortionLevel], rng, keep_noise):
    n, D = x.shape
    if level is None:
        return x.copy(), np.zeros_like(x) if keep_noise else None
    gain = rng.uniform(*level.gain_range, size=(n, 1))
    scale = level.noise_scale * np.linalg.norm(x, axis=1, keepdims=True) / np.sqrt(D)
    noise = rng.standard_normal((n, D)) * scale
    out = gain * x + noise
    max_shift = int(round(level.shift_frac * D))
    if max_shift:
        shifts = rng.integers(-max_shift, max_shift + 1, size=n)
        cols = (np.arange(D)[None, :] - shifts[:, None]) % D
        out = np.take_along_axis(out, cols, axis=1)
    erase = rng.random((n, D)) < level.erase_rate
    out[erase] = 0.0
    return out, noise if keep_noise else None


def generate(
    n: int = 2000,
    C: int = 4,
    D: int = 32,
    K: int = 1,
    view_specs: Sequence = None,
    separation: float = 3.0,
    seed: int = 0,
    class_probs=None,
    overlap: float = 0.1,
    keep_noise: bool = False,
) -> SynthDataset:
    """Draw a train split of ``n`` samples and a ghost split of equal size.

    Parameters
    ----------
    n, C, D, K : int
        Samples per split, classes, base dimension and number of views.
    view_specs : sequence of ViewSpec (or dicts / level names), length K
        Defaults to undistorted full views.
    separation : float
        Pairwise distance between class means (unit-variance clusters).
    seed : int
    class_probs : array-like, optional
        Class frequencies; uniform by default.
    overlap : float
        Overlap band of complementary occlusions, as a fraction of the split axis.
    keep_noise : bool
        Keep the additive noise of each view (train split) in ``noise``.
    """
    if min(n, C, D, K) < 1:
        raise ValueError("n, C, D and K must be positive")
    if separation <= 0:
        raise ValueError("separation must be positive")
    specs = [ViewSpec() for _ in range(K)] if view_specs is None else [_as_spec(s) for s in view_specs]
    if len(specs) != K:
        raise ValueError(f"expected {K} view specs, got {len(specs)}")
    masks = [occlusion_mask(s.kind, D, overlap) for s in specs]
    for s, m in zip(specs, masks):
        if s.kind != "full" and m.mean() < 0.4:
            raise ValueError(f"occlusion {s.kind!r} keeps {m.mean():.0%} of D={D} coordinates (< 40%)")
    probs = np.full(C, 1.0 / C) if class_probs is None else np.asarray(class_probs, dtype=float)
    if probs.shape != (C,) or np.any(probs < 0) or not np.isclose(probs.sum(), 1.0):
        raise ValueError("class_probs must be a probability vector of length C")

    ss = np.random.SeedSequence(int(seed))
    base_ss, *view_ss = ss.spawn(1 + K)
    base = np.random.default_rng(base_ss)
    # orthonormal directions so every pair of class means is `separation` apart
    if C <= D:
        dirs = np.linalg.qr(base.standard_normal((D, C)))[0].T
    else:
        dirs = base.standard_normal((C, D))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centers = separation / np.sqrt(2.0) * dirs

    def draw(rng_base, view_rngs, keep):
        y = rng_base.choice(C, size=n, p=probs)
        x = centers[y] + rng_base.standard_normal((n, D))
        views, noises = [], []
        for spec, mask, rng in zip(specs, masks, view_rngs):
            v, noise = _distort(x, spec.level, rng, keep)
            v[:, ~mask] = 0.0
            views.append(v)
            noises.append(noise)
        return views, y, noises

    view_rngs = [np.random.default_rng(s) for s in view_ss]
    views, y, noises = draw(base, view_rngs, keep_noise)
    ghost_views, ghost_y, _ = draw(base, view_rngs, False)
    meta = {
        "n": n, "C": C, "D": D, "K": K, "separation": separation, "seed": int(seed),
        "overlap": overlap, "views": [s.to_dict() for s in specs],
        "class_probs": probs.tolist(),
    }
    return SynthDataset(views, y, ghost_views, ghost_y, C, meta, noises if keep_noise else None)


def _as_spec(s) -> ViewSpec:
    if isinstance(s, ViewSpec):
        return s
    if isinstance(s, str):
        return ViewSpec(level=s) if s in LEVELS else ViewSpec(kind=s)
    if isinstance(s, dict):
        return ViewSpec(kind=s.get("kind", "full"), level=s.get("level"))
    raise TypeError(f"cannot interpret view spec {s!r}")


# -- CSV ---------------------------------------------------------------------------


class CSVFormatError(ValueError):
    """Malformed CSV input; ``line`` is 1-based and counts the header."""

    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path, self.line = str(path), line


@dataclass(frozen=True)
class CSVSchema:
    """Per-view column counts and the class count; columns ``v{k}_{j}`` then ``label``."""

    view_dims: tuple
    n_classes: int

    def header(self) -> List[str]:
        cols = [f"v{k}_{j}" for k, D in enumerate(self.view_dims) for j in range(D)]
        return cols + ["label"]


def write_csv(path, views: Sequence[np.ndarray], y) -> None:
    """Write one row per sample; floats use ``repr`` so reading back is exact."""
    views = [np.asarray(v, dtype=float) for v in views]
    y = np.asarray(y)
    schema = CSVSchema(tuple(v.shape[1] for v in views), 0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(schema.header())
        X = np.concatenate(views, axis=1)
        for row, label in zip(X, y):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv(path, schema: CSVSchema):
    """Strictly parse a dataset CSV; returns ``(views, y)``.

    Raises
    ------
    CSVFormatError
        Header mismatch, wrong column count, non-numeric cell or label
        outside ``[0, n_classes)``, reported with its line number.
    """
    expected = schema.header()
    width = len(expected)
    rows, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CSVFormatError(path, 1, "empty file") from None
        if header != expected:
            raise CSVFormatError(path, 1, f"header does not match schema ({width} columns expected)")
        for line, row in enumerate(reader, start=2):
            if len(row) != width:
                raise CSVFormatError(path, line, f"expected {width} columns, got {len(row)}")
            try:
                vals = [float(v) for v in row[:-1]]
                label = int(row[-1])
            except ValueError as exc:
                raise CSVFormatError(path, line, f"non-numeric cell ({exc})") from None
            if not all(np.isfinite(vals)):
                raise CSVFormatError(path, line, "non-finite value")
            if not 0 <= label < schema.n_classes:
                raise CSVFormatError(path, line, f"label {label} outside [0, {schema.n_classes})")
            rows.append(vals)
            labels.append(label)
    X = np.asarray(rows, dtype=float).reshape(len(rows), width - 1)
    splits = np.cumsum(schema.view_dims)[:-1]
    return list(np.split(X, splits, axis=1)), np.asarray(labels, dtype=np.int64)


# -- binary dump ---------------------------------------------------------------------


def dump_binary(ds: SynthDataset, path) -> None:
    """``path.bin`` holds train views, train labels, ghost views, ghost labels as little-endian float64."""
    path = Path(path)
    arrays = list(ds.views) + [ds.y] + list(ds.ghost_views) + [ds.ghost_y]
    with open(path.with_suffix(".bin"), "wb") as fh:
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    sidecar = {
        "format": "gpmdl.dataset",
        "version": 1,
        "n_classes": ds.n_classes,
        "shapes": [list(a.shape) for a in arrays],
        "meta": ds.meta,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))


def load_binary(path) -> SynthDataset:
    path = Path(path)
    side = json.loads(path.with_suffix(".json").read_text())
    blob = path.with_suffix(".bin").read_bytes()
    arrays, offset = [], 0
    for shape in side["shapes"]:
        count = int(np.prod(shape, dtype=np.int64))
        if offset + 8 * count > len(blob):
            raise ValueError(f"{path}: truncated at byte {offset}")
        arrays.append(np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).copy())
        offset += 8 * count
    K = (len(arrays) - 2) // 2
    return SynthDataset(
        views=arrays[:K],
        y=arrays[K].astype(np.int64),
        ghost_views=arrays[K + 1: 2 * K + 1],
        ghost_y=arrays[2 * K + 1].astype(np.int64),
        n_classes=side["n_classes"],
        meta=side["meta"],
    )
