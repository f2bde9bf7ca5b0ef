"""Artificial moving-ball sequences rendered directly in heatmap space."""

from __future__ import annotations

import io
import math
import zipfile
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

from .datamodel import Heatmap, SequenceSample, gaussian_map

RADII = (3, 4, 5)
STEP_RANGE = (30, 60)
#: (W_out, H_out)
DEFAULT_FRAME = (160, 120)


@dataclass(frozen=True)
class TrajectorySpec:
    radius: int
    start: tuple
    steps: int
    rng_seed: int

    def __post_init__(self):
        if self.radius not in RADII:
            raise ValueError(f"radius must be one of {RADII}")
        if not STEP_RANGE[0] <= self.steps <= STEP_RANGE[1]:
            raise ValueError(f"steps must lie in {STEP_RANGE}")

    @property
    def displacement(self) -> tuple[float, float]:
        return self.start[0] / self.steps, self.start[1] / self.steps


@dataclass(frozen=True, eq=False)
class SyntheticSequence:
    positions: tuple
    radius: int
    frame: tuple = DEFAULT_FRAME
    rng_seed: int = 0
    dropped: frozenset = frozenset()
    companions: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "positions", tuple((float(x), float(y)) for x, y in self.positions))
        object.__setattr__(self, "frame", tuple(int(v) for v in self.frame))
        object.__setattr__(self, "dropped", frozenset(int(i) for i in self.dropped))

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def shape(self) -> tuple[int, int]:
        return self.frame[1], self.frame[0]

    def render(self, index: int) -> np.ndarray:
        if index in self.dropped:
            return np.zeros(self.shape)
        m = gaussian_map(self.positions[index], math.sqrt(self.radius), self.shape)
        for other in self.companions:
            m = np.maximum(m, other.render(index))
        return m

    @cached_property
    def maps(self) -> np.ndarray:
        """All frames as one (n, H, W) float32 array."""
        a = np.stack([self.render(i) for i in range(len(self))]).astype(np.float32)
        a.setflags(write=False)
        return a

    @property
    def heatmaps(self) -> list[Heatmap]:
        return [Heatmap(m) for m in self.maps]


def _rng_for(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def draw_trajectory(rng: np.random.Generator, frame: tuple = DEFAULT_FRAME) -> TrajectorySpec:
    width, height = frame
    radius = int(rng.choice(RADII))
    x1 = int(rng.integers(0, width))
    y1 = int(rng.integers(0, height))
    steps = int(rng.integers(STEP_RANGE[0], STEP_RANGE[1] + 1))
    return TrajectorySpec(radius, (x1, y1), steps, rng_seed=0)


def walk(spec: TrajectorySpec, rng: np.random.Generator, frame: tuple = DEFAULT_FRAME) -> list[tuple[float, float]]:
    """Random +/- steps of fixed size, clamped to the frame after each step."""
    width, height = frame
    dx, dy = spec.displacement
    x, y = float(spec.start[0]), float(spec.start[1])
    pts = [(x, y)]
    for _ in range(spec.steps):
        sx, sy = rng.choice((-1, 1), size=2)
        x = min(max(x + sx * dx, 0.0), width - 1.0)
        y = min(max(y + sy * dy, 0.0), height - 1.0)
        pts.append((x, y))
    return pts


def make_sequence(seed: int, index: int, frame: tuple = DEFAULT_FRAME) -> SyntheticSequence:
    rng = _rng_for(seed, index)
    spec = draw_trajectory(rng, frame)
    return SyntheticSequence(walk(spec, rng, frame), spec.radius, frame, rng_seed=seed)


def generate_sequences(n: int, frame: tuple = DEFAULT_FRAME, seed: int = 0) -> list[SyntheticSequence]:
    """Draw ``n`` independent trajectories.

    Sequence ``i`` depends only on ``(seed, i)``, so prefixes agree for
    different ``n`` and generation parallelises trivially.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    return [make_sequence(seed, i, frame) for i in range(n)]


def sample_radii(n: int, seed: int = 0) -> np.ndarray:
    return np.array([draw_trajectory(_rng_for(seed, i)).radius for i in range(n)])


def occlude(seq, drop_indices: Iterable[int], targets: Iterable[int] = ()):
    """Blank the heatmaps at ``drop_indices``; ground-truth positions stay.

    Works on a whole :class:`SyntheticSequence` (protect indices via
    ``targets``) or on a :class:`SequenceSample`, where only history indices
    may be dropped.
    """
    drop = frozenset(int(i) for i in drop_indices)
    if isinstance(seq, SequenceSample):
        bad = [i for i in drop if not 0 <= i < seq.h + seq.p]
        if bad:
            raise IndexError(f"indices {sorted(bad)} out of range")
        if any(i >= seq.h for i in drop):
            raise ValueError("cannot drop a target frame")
        history = tuple(
            Heatmap.zeros(np.shape(as_map)) if i in drop else as_map
            for i, as_map in enumerate(seq.history)
        )
        return SequenceSample(history, seq.targets, seq.target_centers, seq.start_index)
    bad = [i for i in drop if not 0 <= i < len(seq)]
    if bad:
        raise IndexError(f"indices {sorted(bad)} out of range")
    if drop & frozenset(targets):
        raise ValueError("cannot drop a target frame")
    return SyntheticSequence(seq.positions, seq.radius, seq.frame, seq.rng_seed, seq.dropped | drop, seq.companions)


def random_drop(h: int, fraction: float, rng: np.random.Generator) -> set[int]:
    k = math.ceil(fraction * h - 1e-9)
    return set(int(i) for i in rng.choice(h, size=k, replace=False))


def generate_two_ball(seed: int, frame: tuple = DEFAULT_FRAME) -> SyntheticSequence:
    a = make_sequence(seed, 0, frame)
    b = make_sequence(seed, 1, frame)
    return superimpose(a, b)


def superimpose(a: SyntheticSequence, b: SyntheticSequence) -> SyntheticSequence:
    n = min(len(a), len(b))
    b = SyntheticSequence(b.positions[:n], b.radius, b.frame, b.rng_seed)
    return SyntheticSequence(a.positions[:n], a.radius, a.frame, a.rng_seed, companions=(b,))


def window_count(length: int, h: int = 20, p: int = 1) -> int:
    return max(0, length - h - p + 1)


def windows(seq: SyntheticSequence, h: int = 20, p: int = 1) -> list[SequenceSample]:
    """Stride-1 (history, target) windows as heatmap samples."""
    maps = seq.maps
    return [
        SequenceSample(
            tuple(Heatmap(m) for m in maps[j - h:j]),
            tuple(Heatmap(m) for m in maps[j:j + p]),
            target_centers=seq.positions[j:j + p],
            start_index=j - h,
        )
        for j in range(h, len(seq) - p + 1)
    ]


def window_arrays(seq: SyntheticSequence, j: int, h: int = 20, p: int = 1):
    """History/target arrays for the window whose first target is frame ``j``."""
    maps = seq.maps
    return maps[j - h:j], maps[j:j + p], seq.positions[j:j + p]


# -- on-disk cache -----------------------------------------------------------

_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_sequence(seq: SyntheticSequence, path) -> Path:
    """Write a sequence as a zip of ``.npy`` members with fixed timestamps.

    Identical sequences give byte-identical files, which a plain
    ``np.savez`` does not guarantee.
    """
    path = Path(path)
    arrays = {
        "positions": np.asarray(seq.positions, dtype=np.float64),
        "radius": np.asarray(seq.radius, dtype=np.int64),
        "seed": np.asarray(seq.rng_seed, dtype=np.int64),
        "frame": np.asarray(seq.frame, dtype=np.int64),
        "dropped": np.asarray(sorted(seq.dropped), dtype=np.int64),
        "heatmaps": seq.maps,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.save(buf, arr, allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())
    return path


def load_sequence(path) -> SyntheticSequence:
    with np.load(Path(path), allow_pickle=False) as z:
        seq = SyntheticSequence(
            tuple(map(tuple, z["positions"])),
            int(z["radius"]),
            tuple(int(v) for v in z["frame"]),
            int(z["seed"]),
            frozenset(int(i) for i in z["dropped"]),
        )
        maps = z["heatmaps"].astype(np.float32)
    maps.setflags(write=False)
    seq.__dict__["maps"] = maps
    return seq


def occlusion_suite(n: int, frame: tuple = DEFAULT_FRAME, seed: int = 0, fraction: float = 0.3,
                    h: int = 20, p: int = 1) -> list[tuple[np.ndarray, tuple[float, float]]]:
    """One window per fresh sequence with ``ceil(fraction * h)`` history frames blanked.

    Items are ``(history array (h, H, W), first target position)``.
    """
    suite = []
    for i in range(n):
        seq = make_sequence(seed, i, frame)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i, 1)))
        j = int(rng.integers(h, len(seq) - p + 1))
        hist = np.array(seq.maps[j - h:j])
        hist[sorted(random_drop(h, fraction, rng))] = 0.0
        suite.append((hist, seq.positions[j]))
    return suite
