import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ballseq.datamodel import (
    NO_BALL,
    BallCenter,
    BoundingBoxAnnotation,
    Heatmap,
    ImageFrame,
    SequenceSample,
    boxes_from_array,
    boxes_to_array,
    load_annotations,
    load_clip,
    read_annotation_index,
    split_indices,
    teaching_signal,
)
from ballseq.exceptions import AnnotationError, DataError
from oracles import gaussian_pixel, gaussian_sum_loop


def test_teaching_signal_worked_example():
    m = teaching_signal(BoundingBoxAnnotation(10, 10, 20, 20)).values
    assert m.shape == (120, 160)
    assert m[15, 15] == 1.0
    assert m[15, 20] == pytest.approx(math.exp(-25 / 50), abs=1e-15)
    assert np.unravel_index(m.argmax(), m.shape) == (15, 15)


def test_teaching_signal_absent_is_zero():
    m = teaching_signal(BoundingBoxAnnotation.absent()).values
    assert m.max() == 0.0 and m.shape == (120, 160)


def test_teaching_signal_full_frame_matches_loop():
    box = BoundingBoxAnnotation(0, 0, 160, 120)
    assert box.radius == 60
    m = teaching_signal(box).values
    assert m.sum() == pytest.approx(gaussian_sum_loop(80, 60, 60, 120, 160), rel=1e-12)


def test_teaching_signal_degenerate_box():
    with pytest.raises(ValueError, match="degenerate box"):
        teaching_signal(BoundingBoxAnnotation(5, 5, 5, 9))


@given(
    x0=st.floats(0, 140), y0=st.floats(0, 100),
    w=st.floats(1, 20), h=st.floats(1, 20),
)
def test_teaching_signal_properties(x0, y0, w, h):
    box = BoundingBoxAnnotation(x0, y0, x0 + w, y0 + h)
    m = teaching_signal(box).values
    assert m.min() >= 0.0 and m.max() <= 1.0
    cx, cy = box.center
    x, y = int(round(cx)) % 160, int(round(cy)) % 120
    assert m[y, x] == pytest.approx(gaussian_pixel(x, y, cx, cy, 0.5 * min(w, h)), rel=1e-12)


def test_heatmap_rejects_negative():
    with pytest.raises(ValueError):
        Heatmap(np.full((4, 4), -0.1))


def test_image_frame_validation():
    ImageFrame(np.zeros((8, 12, 3)))
    with pytest.raises(ValueError):
        ImageFrame(np.zeros((8, 10, 3)))
    with pytest.raises(ValueError):
        ImageFrame(np.full((8, 8, 3), 1.5))
    f = ImageFrame(np.zeros((480, 640, 3)))
    assert f.output_shape == (120, 160)
    with pytest.raises(ValueError):
        f.pixels[0, 0, 0] = 1.0


def test_ball_center_sentinel():
    assert not NO_BALL.detected
    assert BallCenter(3.0, 4.0).distance((0.0, 0.0)) == 5.0


def test_sequence_sample_lengths():
    z = Heatmap.zeros((4, 4))
    s = SequenceSample([z] * 20, [z], start_index=3)
    assert (s.h, s.p) == (20, 1)
    assert list(s.timestamps) == list(range(3, 24))
    with pytest.raises(ValueError):
        SequenceSample([], [z])


def test_split_counts():
    tr, te = split_indices(10, 0.7, 0)
    assert (len(tr), len(te)) == (7, 3)
    tr, te = split_indices(4562, 0.7, 0)
    assert (len(tr), len(te)) == (3193, 1369)
    assert sorted(np.concatenate([tr, te]).tolist()) == list(range(4562))


def test_split_is_seeded():
    a = split_indices(50, 0.7, 3)
    b = split_indices(50, 0.7, 3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_load_fixture_annotations(annotations_csv):
    train, test = load_annotations(annotations_csv, 0.7, 0)
    assert (len(train), len(test)) == (14, 6)
    frame, box = train[0]
    assert frame.shape == (240, 320) and frame.output_shape == (60, 80)
    assert box.present and 0 <= box.x_min < box.x_max <= 80


def test_load_clip_keeps_order(annotations_csv):
    clip = load_clip(annotations_csv)
    assert [f.timestamp_index for f, _ in clip] == list(range(20))
    assert clip[0][0].source_id.endswith("frame_00.png")


def _write(tmp_path, text):
    p = tmp_path / "idx.csv"
    p.write_text(text)
    return p


def test_malformed_row_names_row(tmp_path, fixtures_dir):
    p = _write(tmp_path, f"{fixtures_dir}/frame_00.png,1,2,3,4\n{fixtures_dir}/frame_01.png,1,x,3,4\n")
    with pytest.raises(AnnotationError, match="row 2"):
        read_annotation_index(p)


def test_missing_image_names_path(tmp_path):
    p = _write(tmp_path, "nothere.png,1,2,3,4\n")
    with pytest.raises(DataError, match="nothere.png"):
        load_annotations(p)


def test_empty_coordinates_mean_absent(tmp_path, fixtures_dir):
    p = _write(tmp_path, "image_path,x_min,y_min,x_max,y_max\n" f"{fixtures_dir}/frame_00.png,,,,\n")
    (rec,) = read_annotation_index(p)
    assert not rec.box.present


def test_box_array_round_trip():
    boxes = [BoundingBoxAnnotation(1, 2, 3, 4), BoundingBoxAnnotation.absent()]
    a = boxes_to_array(boxes)
    assert np.isnan(a[1]).all()
    back = boxes_from_array(a)
    assert back[0] == boxes[0] and not back[1].present
