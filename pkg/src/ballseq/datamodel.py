"""Value types, annotation ingestion and the Gaussian teaching signal."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from PIL import Image

from .exceptions import AnnotationError, DataError

#: Spatial reduction between an input frame and its heatmap.
DOWNSAMPLE = 4
#: (rows, cols) of the default output heatmap.
OUTPUT_SHAPE = (120, 160)
INPUT_SHAPE = (OUTPUT_SHAPE[0] * DOWNSAMPLE, OUTPUT_SHAPE[1] * DOWNSAMPLE)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ImageFrame:
    pixels: np.ndarray
    source_id: str = ""
    timestamp_index: int = 0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected an HxWx3 image, got shape {px.shape}")
        if px.shape[0] % DOWNSAMPLE or px.shape[1] % DOWNSAMPLE:
            raise ValueError(f"image size {px.shape[:2]} is not divisible by {DOWNSAMPLE}")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")
        if self.timestamp_index < 0:
            raise ValueError("timestamp_index must be >= 0")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]

    @property
    def output_shape(self) -> tuple[int, int]:
        return self.shape[0] // DOWNSAMPLE, self.shape[1] // DOWNSAMPLE


@dataclass(frozen=True, eq=False)
class Heatmap:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"heatmap must be 2-D, got shape {v.shape}")
        if v.size and v.min() < 0:
            raise ValueError("heatmap values must be non-negative")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def zeros(cls, shape: tuple[int, int] = OUTPUT_SHAPE) -> "Heatmap":
        return cls(np.zeros(shape))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


HeatmapLike = Union[Heatmap, np.ndarray]


def as_array(m: HeatmapLike) -> np.ndarray:
    return m.values if isinstance(m, Heatmap) else np.asarray(m, dtype=np.float64)


@dataclass(frozen=True)
class BoundingBoxAnnotation:
    """Ground-truth ball box in heatmap pixel coordinates.

    When ``present`` is false the coordinates carry no meaning.
    """

    x_min: float = 0.0
    y_min: float = 0.0
    x_max: float = 0.0
    y_max: float = 0.0
    present: bool = True

    @classmethod
    def absent(cls) -> "BoundingBoxAnnotation":
        return cls(present=False)

    @property
    def is_degenerate(self) -> bool:
        return self.x_max <= self.x_min or self.y_max <= self.y_min

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.x_max + self.x_min), 0.5 * (self.y_max + self.y_min)

    @property
    def radius(self) -> float:
        return 0.5 * min(self.x_max - self.x_min, self.y_max - self.y_min)

    def check_bounds(self, shape: tuple[int, int]) -> None:
        if not self.present:
            return
        if self.is_degenerate:
            raise ValueError("degenerate box")
        rows, cols = shape
        if self.x_min < 0 or self.y_min < 0 or self.x_max > cols or self.y_max > rows:
            raise ValueError(f"box {self} lies outside a {cols}x{rows} heatmap")

    def scaled(self, factor: float) -> "BoundingBoxAnnotation":
        if not self.present:
            return self
        return BoundingBoxAnnotation(
            self.x_min * factor, self.y_min * factor, self.x_max * factor, self.y_max * factor
        )


@dataclass(frozen=True)
class BallCenter:
    c_x: float = -1.0
    c_y: float = -1.0

    @property
    def detected(self) -> bool:
        return not (self.c_x == -1 and self.c_y == -1)

    def distance(self, other: tuple[float, float]) -> float:
        return math.hypot(self.c_x - other[0], self.c_y - other[1])

    def __iter__(self):
        yield self.c_x
        yield self.c_y


NO_BALL = BallCenter(-1.0, -1.0)


@dataclass(frozen=True, eq=False)
class SequenceSample:
    """A window of ``h`` history items followed by ``p`` target heatmaps.

    History items are heatmaps for synthetic data, or raw frames when the
    detector produces the history on the fly.
    """

    history: tuple
    targets: tuple
    target_centers: tuple = field(default=())
    start_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "history", tuple(self.history))
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "target_centers", tuple(self.target_centers))
        if not self.history or not self.targets:
            raise ValueError("a sequence sample needs h >= 1 history items and p >= 1 targets")
        if self.target_centers and len(self.target_centers) != len(self.targets):
            raise ValueError("target_centers must match targets in length")

    @property
    def h(self) -> int:
        return len(self.history)

    @property
    def p(self) -> int:
        return len(self.targets)

    @property
    def timestamps(self) -> range:
        return range(self.start_index, self.start_index + self.h + self.p)


def gaussian_map(center: tuple[float, float], sigma: float, shape: tuple[int, int] = OUTPUT_SHAPE) -> np.ndarray:
    """Peak-normalised isotropic Gaussian sampled at integer pixel coordinates."""
    rows, cols = shape
    cx, cy = center
    dx2 = (np.arange(cols, dtype=np.float64) - cx) ** 2
    dy2 = (np.arange(rows, dtype=np.float64) - cy) ** 2
    return np.exp(-(dy2[:, None] + dx2[None, :]) / (2.0 * sigma * sigma))


def teaching_signal(box: BoundingBoxAnnotation, shape: tuple[int, int] = OUTPUT_SHAPE) -> Heatmap:
    """Render the target heatmap for one annotated frame.

    The Gaussian is centred on the box centre with spread equal to half the
    shorter box side, scaled so the peak is 1. Absent boxes give zeros.
    """
    if not box.present:
        return Heatmap.zeros(shape)
    if box.is_degenerate:
        raise ValueError("degenerate box")
    return Heatmap(gaussian_map(box.center, box.radius, shape))


# -- annotation index ------------------------------------------------------

@dataclass(frozen=True)
class AnnotationRecord:
    image_path: Path
    box: BoundingBoxAnnotation  # source-image pixels
    row: int


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_annotation_index(path: Union[str, Path]) -> list[AnnotationRecord]:
    """Parse ``image_path,x_min,y_min,x_max,y_max`` rows.

    Relative image paths resolve against the index file's directory. A first
    line whose second field is non-numeric is treated as a header.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"annotation index not found: {path}")
    records = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and len(row) > 1 and row[1].strip() and not _is_number(row[1].strip()):
                continue
            if len(row) != 5:
                raise AnnotationError(f"row {lineno}: expected 5 fields, got {len(row)}")
            name, *coords = (c.strip() for c in row)
            if not name:
                raise AnnotationError(f"row {lineno}: empty image path")
            if all(c == "" for c in coords):
                box = BoundingBoxAnnotation.absent()
            else:
                try:
                    x0, y0, x1, y1 = (float(c) for c in coords)
                except ValueError:
                    raise AnnotationError(f"row {lineno}: malformed coordinates {coords}") from None
                box = BoundingBoxAnnotation(x0, y0, x1, y1)
                if box.is_degenerate:
                    raise AnnotationError(f"row {lineno}: degenerate box")
            img = Path(name)
            if not img.is_absolute():
                img = path.parent / img
            records.append(AnnotationRecord(img, box, lineno))
    return records


def load_image(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"image file not found: {path}")
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def split_indices(n: int, split_ratio: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < split_ratio < 1.0:
        raise ValueError("split_ratio must lie strictly between 0 and 1")
    order = np.random.default_rng(seed).permutation(n)
    n_train = math.floor(n * split_ratio + 1e-9)
    return order[:n_train], order[n_train:]


def load_clip(path) -> list[tuple[ImageFrame, BoundingBoxAnnotation]]:
    """All annotated frames in file order, boxes rescaled to heatmap coordinates.

    Row order defines ``timestamp_index``, so a clip annotated frame by frame
    can be cut into sequences directly.
    """
    items = []
    for i, rec in enumerate(read_annotation_index(path)):
        frame = ImageFrame(load_image(rec.image_path), source_id=str(rec.image_path), timestamp_index=i)
        box = rec.box.scaled(1.0 / DOWNSAMPLE)
        try:
            box.check_bounds(frame.output_shape)
        except ValueError as exc:
            raise AnnotationError(f"row {rec.row}: {exc}") from None
        items.append((frame, box))
    return items


def load_annotations(path, split_ratio: float = 0.7, seed: int = 0):
    """Load an annotation index and split it into train and test lists.

    Each item is ``(ImageFrame, BoundingBoxAnnotation)`` with the box already
    rescaled to heatmap coordinates.
    """
    items = load_clip(path)
    train_idx, test_idx = split_indices(len(items), split_ratio, seed)
    return [items[i] for i in train_idx], [items[i] for i in test_idx]


def boxes_to_array(boxes: Sequence[BoundingBoxAnnotation]) -> np.ndarray:
    """(n, 4) array with NaN rows for absent boxes."""
    out = np.full((len(boxes), 4), np.nan)
    for i, b in enumerate(boxes):
        if b.present:
            out[i] = (b.x_min, b.y_min, b.x_max, b.y_max)
    return out


def boxes_from_array(a) -> list[BoundingBoxAnnotation]:
    if len(a) and isinstance(a[0], BoundingBoxAnnotation):
        return list(a)
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    return [BoundingBoxAnnotation.absent() if np.isnan(r).any() else BoundingBoxAnnotation(*r) for r in a]
