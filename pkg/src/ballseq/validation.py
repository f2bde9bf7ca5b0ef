"""Input checks shared by the estimator wrappers and the CLI."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.utils.validation import check_array

from .datamodel import BoundingBoxAnnotation, ImageFrame, boxes_from_array


def check_frames(X) -> list[ImageFrame]:
    """Accept ImageFrames or an (n, H, W, 3) array with values in [0, 1]."""
    if len(X) and all(isinstance(f, ImageFrame) for f in X):
        return list(X)
    a = check_array(np.asarray(X), allow_nd=True, dtype=np.float32, ensure_min_features=1)
    if a.ndim != 4 or a.shape[-1] != 3:
        raise ValueError(f"frames must be (n, H, W, 3), got {a.shape}")
    return [ImageFrame(f, source_id=f"array[{i}]", timestamp_index=i) for i, f in enumerate(a)]


def check_boxes(y, n: Optional[int] = None) -> list[BoundingBoxAnnotation]:
    """Boxes as annotations or an (n, 4) array where NaN rows mean no ball."""
    boxes = boxes_from_array(y)
    if n is not None and len(boxes) != n:
        raise ValueError(f"got {len(boxes)} boxes for {n} frames")
    return boxes


def check_heatmaps(M) -> np.ndarray:
    """(n, H, W) non-negative float64 maps; a single 2-D map is promoted."""
    a = np.asarray(M, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    a = check_array(a, allow_nd=True, dtype=np.float64)
    if a.ndim != 3:
        raise ValueError(f"heatmaps must be (n, H, W), got {a.shape}")
    if (a < 0).any():
        raise ValueError("heatmaps must be non-negative")
    return a


def check_histories(X, h: int) -> np.ndarray:
    """(n, h, H, W) float32 histories; a single (h, H, W) history is promoted."""
    a = np.asarray(X, dtype=np.float32)
    if a.ndim == 3:
        a = a[None]
    a = check_array(a, allow_nd=True, dtype=np.float32)
    if a.ndim != 4:
        raise ValueError(f"histories must be (n, h, H, W), got {a.shape}")
    if a.shape[1] != h:
        raise ValueError(f"expected a history of {h} frames, got {a.shape[1]}")
    return a


def check_centers(centers, n: Optional[int] = None) -> np.ndarray:
    c = check_array(np.asarray(centers, dtype=np.float64).reshape(-1, 2), dtype=np.float64)
    if n is not None and len(c) != n:
        raise ValueError(f"got {len(c)} centres for {n} samples")
    return c
