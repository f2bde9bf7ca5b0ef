import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from ballseq.datamodel import Heatmap, SequenceSample
from ballseq.postproc import extract_center
from ballseq.synthgen import (
    RADII,
    SyntheticSequence,
    TrajectorySpec,
    generate_sequences,
    generate_two_ball,
    load_sequence,
    make_sequence,
    occlude,
    occlusion_suite,
    random_drop,
    sample_radii,
    save_sequence,
    superimpose,
    walk,
    window_count,
    windows,
)

FRAME = (40, 30)


def test_regeneration_is_bit_identical():
    a = generate_sequences(2, FRAME, seed=11)
    b = generate_sequences(2, FRAME, seed=11)
    assert [s.positions for s in a] == [s.positions for s in b]
    assert all(np.array_equal(x.maps, y.maps) for x, y in zip(a, b))


def test_prefix_stability_and_seed_sensitivity():
    a = generate_sequences(3, FRAME, seed=1)
    b = generate_sequences(5, FRAME, seed=1)
    assert [s.positions for s in a] == [s.positions for s in b[:3]]
    assert generate_sequences(1, FRAME, seed=2)[0].positions != a[0].positions


def test_zero_start_keeps_axis_fixed():
    spec = TrajectorySpec(radius=3, start=(0, 17), steps=45, rng_seed=0)
    pts = walk(spec, np.random.default_rng(0), FRAME)
    assert len(pts) == 46
    assert all(x == 0.0 for x, _ in pts)


@given(seed=st.integers(0, 2**32 - 1), index=st.integers(0, 50))
def test_trajectory_invariants(seed, index):
    s = make_sequence(seed, index, FRAME)
    assert s.radius in RADII
    assert 31 <= len(s) <= 61
    pos = np.asarray(s.positions)
    assert pos[:, 0].min() >= 0 and pos[:, 0].max() <= FRAME[0] - 1
    assert pos[:, 1].min() >= 0 and pos[:, 1].max() <= FRAME[1] - 1
    step = np.abs(np.diff(pos, axis=0))
    dx, dy = pos[0, 0] / (len(s) - 1), pos[0, 1] / (len(s) - 1)
    assert np.all(step[:, 0] <= dx + 1e-9) and np.all(step[:, 1] <= dy + 1e-9)
    assert window_count(len(s), 20, 1) >= 10


def test_radius_frequencies_uniform():
    r = sample_radii(10_000, seed=0)
    for v in RADII:
        assert abs(np.mean(r == v) - 1 / 3) <= 0.02


def test_argmax_near_position():
    s = make_sequence(3, 0, FRAME)
    for m, (x, y) in zip(s.maps, s.positions):
        r, c = np.unravel_index(m.argmax(), m.shape)
        assert abs(c - round(x)) <= 1 and abs(r - round(y)) <= 1


def test_render_variance_equals_radius():
    s = SyntheticSequence([(20.0, 15.0)], radius=4, frame=FRAME)
    m = s.maps[0]
    assert m[15, 20] == 1.0
    assert m[15, 22] == pytest.approx(math.exp(-4 / (2 * 4)), rel=1e-6)


def test_interior_round_trip():
    rng = np.random.default_rng(0)
    worst = 0.0
    for r in RADII:
        for _ in range(20):
            x, y = rng.uniform(2 * r, FRAME[0] - 1 - 2 * r), rng.uniform(2 * r, FRAME[1] - 1 - 2 * r)
            c = extract_center(SyntheticSequence([(x, y)], r, FRAME).maps[0])
            worst = max(worst, c.distance((x, y)))
    assert worst <= 0.5


def test_occlude_empty_is_identity():
    s = make_sequence(0, 0, FRAME)
    assert np.array_equal(occlude(s, set()).maps, s.maps)


def test_occlude_whole_history_keeps_targets():
    s = make_sequence(0, 0, FRAME)
    (w,) = windows(occlude(s, range(20), targets=[20]), 20, 1)[:1]
    assert all(m.values.max() == 0 for m in w.history)
    assert np.array_equal(w.targets[0].values, s.maps[20])
    assert occlude(s, range(20)).positions == s.positions


def test_occlude_half_counts():
    s = make_sequence(4, 2, FRAME)
    drop = random_drop(20, 0.5, np.random.default_rng(0))
    occ = occlude(s, drop)
    zeros = sum(m.max() == 0 for m in occ.maps[:20])
    assert zeros == math.ceil(20 / 2)


def test_occlude_refuses_targets():
    s = make_sequence(0, 0, FRAME)
    with pytest.raises(ValueError):
        occlude(s, {20}, targets=[20])
    sample = windows(s)[0]
    with pytest.raises(ValueError):
        occlude(sample, {20})
    out = occlude(sample, {0, 19})
    assert out.history[0].values.max() == 0 and out.targets[0] is sample.targets[0]
    with pytest.raises(IndexError):
        occlude(s, {len(s)})


def test_two_identical_balls_equal_one():
    a = make_sequence(9, 0, FRAME)
    assert np.array_equal(superimpose(a, a).maps, a.maps)


def test_two_ball_maxima():
    a = SyntheticSequence([(8.0, 8.0), (9.0, 8.0)], 3, FRAME)
    b = SyntheticSequence([(30.0, 22.0), (29.0, 21.0)], 4, FRAME)
    both = superimpose(a, b)
    for i in range(2):
        m = both.maps[i]
        peaks = (m == ndimage.maximum_filter(m, size=3)) & (m > 0.5)
        got = sorted(zip(*np.nonzero(peaks)))
        want = sorted([(int(a.positions[i][1]), int(a.positions[i][0])),
                       (int(b.positions[i][1]), int(b.positions[i][0]))])
        assert got == want


def test_two_ball_peak_bound():
    s = generate_two_ball(3, FRAME)
    assert s.maps.max() <= 1.0 and len(s.companions) == 1


def test_windows_stride_one():
    s = make_sequence(1, 1, FRAME)
    ws = windows(s, 20, 1)
    assert len(ws) == window_count(len(s), 20, 1) == len(s) - 20
    assert isinstance(ws[0], SequenceSample) and ws[1].start_index == 1
    assert np.array_equal(ws[0].targets[0].values, s.maps[20])


def test_cache_round_trip_is_byte_stable(tmp_path):
    s = occlude(make_sequence(7, 3, FRAME), {2, 5})
    p1 = save_sequence(s, tmp_path / "a.seq")
    p2 = save_sequence(occlude(make_sequence(7, 3, FRAME), {5, 2}), tmp_path / "b.seq")
    assert p1.read_bytes() == p2.read_bytes()
    back = load_sequence(p1)
    assert back.positions == s.positions and back.radius == s.radius
    assert back.dropped == s.dropped and np.array_equal(back.maps, s.maps)


def test_heatmaps_are_heatmap_objects():
    s = make_sequence(0, 0, FRAME)
    assert isinstance(s.heatmaps[0], Heatmap) and len(s.heatmaps) == len(s.positions)


def test_occlusion_suite_blanks_thirty_percent():
    suite = occlusion_suite(5, FRAME, seed=3)
    for hist, (x, y) in suite:
        assert hist.shape == (20, FRAME[1], FRAME[0])
        assert sum(m.max() == 0 for m in hist) >= 6
        assert 0 <= x <= FRAME[0] - 1 and 0 <= y <= FRAME[1] - 1
