"""Heatmap to ball-centre postprocessing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import ndimage

from .datamodel import (
    NO_BALL,
    OUTPUT_SHAPE,
    BallCenter,
    BoundingBoxAnnotation,
    HeatmapLike,
    as_array,
    teaching_signal,
)

THRESHOLD = 0.1
_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True, eq=False)
class Contour:
    rows: np.ndarray
    cols: np.ndarray
    mass: float

    @property
    def area(self) -> int:
        return int(self.rows.size)

    @property
    def pixels(self) -> set[tuple[int, int]]:
        """Member pixels as (x, y)."""
        return set(zip(self.cols.tolist(), self.rows.tolist()))

    @property
    def anchor(self) -> tuple[int, int]:
        """(row, col) of the topmost-leftmost pixel."""
        i = np.lexsort((self.cols, self.rows))[0]
        return int(self.rows[i]), int(self.cols[i])

    def centroid(self, m: np.ndarray) -> BallCenter:
        w = m[self.rows, self.cols]
        s = w.sum()
        return BallCenter(float((w * self.cols).sum() / s), float((w * self.rows).sum() / s))


def find_contours(m: HeatmapLike, threshold: float = THRESHOLD) -> list[Contour]:
    """8-connected components of ``m > threshold``."""
    m = as_array(m)
    labels, n = ndimage.label(m > threshold, structure=_EIGHT)
    out = []
    for sl_idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        r, c = np.nonzero(labels[sl] == sl_idx)
        r = r + sl[0].start
        c = c + sl[1].start
        out.append(Contour(r, c, float(m[r, c].sum())))
    return out


def _rank(c: Contour):
    row, col = c.anchor
    return (-c.area, -c.mass, row, col)


def extract_center(m: HeatmapLike, a_min: float = 0.0, threshold: float = THRESHOLD) -> BallCenter:
    """Confidence-weighted centroid of the largest blob above threshold.

    Returns ``(-1, -1)`` when nothing exceeds the threshold or the largest
    blob's area does not exceed ``a_min``. Equal areas are broken by mass,
    then by the topmost-leftmost pixel.
    """
    if a_min < 0:
        raise ValueError("a_min must be >= 0")
    m = as_array(m)
    contours = find_contours(m, threshold)
    if not contours:
        return NO_BALL
    best = min(contours, key=_rank)
    if best.area <= a_min:
        return NO_BALL
    return best.centroid(m)


def extract_centers_topk(m: HeatmapLike, k: int, a_min: float = 0.0, threshold: float = THRESHOLD) -> list[BallCenter]:
    """Centroids of the ``k`` largest blobs (test utility for multi-ball frames)."""
    m = as_array(m)
    ranked = sorted(find_contours(m, threshold), key=_rank)
    return [c.centroid(m) for c in ranked[:k] if c.area > a_min]


def estimate_a_min(boxes: Iterable[BoundingBoxAnnotation], shape: tuple = OUTPUT_SHAPE,
                   threshold: float = THRESHOLD) -> float:
    """Smallest thresholded teaching-signal area over the present boxes."""
    areas = [
        int((teaching_signal(b, shape).values > threshold).sum())
        for b in boxes
        if b.present
    ]
    if not areas:
        raise ValueError("no present annotations to estimate A_min from")
    return float(min(areas))
