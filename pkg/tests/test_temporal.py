import numpy as np
import pytest
import torch

from ballseq.datamodel import Heatmap, gaussian_map
from ballseq.estimators import _ArraySequence
from ballseq.ffnet import FeatureTaps, ModelSpec, build_model
from ballseq.synthgen import make_sequence
from ballseq.temporal import (
    FusionGate,
    HeadKind,
    TemporalDetector,
    TemporalHeadSpec,
    build_head,
    fuse,
    predict_sequence,
)
from ballseq.trainer import fit_head

KINDS = [k.value for k in HeadKind]
SHAPE = (12, 16)


def _taps(b=1, dtype=torch.float32):
    g = torch.Generator().manual_seed(0)
    return FeatureTaps(torch.rand(b, 16, 24, 32, generator=g, dtype=dtype),
                       torch.rand(b, 32, 6, 8, generator=g, dtype=dtype))


def _gate(w):
    torch.manual_seed(0)
    gate = FusionGate(16, 32, w_init=w)
    return gate


def test_gate_defaults():
    g = FusionGate(16, 32)
    assert g.w.item() == 0.5 and g.w.numel() == 1
    assert g.mix.kernel_size == (7, 7) and g.mix.out_channels == 1


def test_closed_gate_is_identity():
    s = torch.rand(1, 1, *SHAPE)
    with torch.no_grad():
        assert torch.equal(fuse(s, _taps(), _gate(0.0)), s)


def test_zero_mix_is_identity():
    gate = _gate(1.0)
    with torch.no_grad():
        gate.mix.weight.zero_()
        gate.mix.bias.zero_()
        s = torch.rand(1, 1, *SHAPE)
        assert torch.equal(fuse(s, _taps(), gate), s)


def test_fuse_accepts_heatmap_and_keeps_shape():
    m = Heatmap(np.random.default_rng(0).random(SHAPE))
    with torch.no_grad():
        out = fuse(m, _taps(), _gate(0.5))
    assert tuple(out.shape[-2:]) == SHAPE


@pytest.mark.parametrize("a", [-2.0, 0.3, 3.5])
def test_gate_is_linear_in_w(a):
    s, taps = torch.rand(1, 1, *SHAPE, dtype=torch.float64), _taps(dtype=torch.float64)
    w = 0.7

    def f(wv):
        g = _gate(0.0).double()
        with torch.no_grad():
            g.w.fill_(wv)
            return fuse(s, taps, g)

    lhs = f(a * w) - f(0.0)
    rhs = a * (f(w) - f(0.0))
    assert torch.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_gate_batch_mismatch():
    with pytest.raises(ValueError):
        fuse(torch.rand(2, 1, *SHAPE), _taps(1), _gate(0.5))


def test_gate_channel_mismatch():
    with pytest.raises(ValueError):
        taps = _taps()
        FusionGate(8, 32)(torch.rand(1, 1, *SHAPE), taps.early, taps.late)


def test_w_gradient_central_difference():
    s, taps = torch.rand(1, 1, *SHAPE, dtype=torch.float64), _taps(dtype=torch.float64)
    target = torch.rand(1, 1, *SHAPE, dtype=torch.float64)
    gate = _gate(0.5).double()

    def loss():
        return ((fuse(s, taps, gate) - target) ** 2).mean()

    (g,) = torch.autograd.grad(loss(), [gate.w])
    h = 1e-3
    with torch.no_grad():
        gate.w += h
        up = loss().item()
        gate.w -= 2 * h
        down = loss().item()
        gate.w += h
    num = (up - down) / (2 * h)
    assert abs(num - g.item()) <= 1e-4 * abs(num)


def test_spec_invariants():
    spec = TemporalHeadSpec()
    assert spec.receptive_field == 31 >= spec.history
    assert spec.rnn_channels == (32, 64, 32, 1)
    assert TemporalHeadSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        TemporalHeadSpec(kind="TCN", init="identity")
    with pytest.raises(ValueError):
        TemporalHeadSpec(rnn_channels=(8, 2))


def _history(seed=0, h=20, shape=SHAPE):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(1, h, *shape, generator=g)


@pytest.mark.parametrize("kind", KINDS)
def test_head_output_shape_and_sign(kind):
    torch.manual_seed(0)
    head = build_head(TemporalHeadSpec(kind=kind, horizon=2)).eval()
    with torch.no_grad():
        out = head(_history())
    assert tuple(out.shape) == (1, 2, *SHAPE)
    assert out.min() >= 0 and torch.isfinite(out).all()


@pytest.mark.parametrize("kind", KINDS)
def test_wrong_history_length(kind):
    head = build_head(kind)
    with pytest.raises(ValueError, match="expected a history of 20 frames, got 19"):
        predict_sequence(head, np.zeros((19, *SHAPE)))


@pytest.mark.parametrize("kind", KINDS)
def test_zero_history_is_finite(kind):
    (m,) = predict_sequence(build_head(kind), [Heatmap.zeros(SHAPE)] * 20)
    assert np.isfinite(m.values).all()


@pytest.mark.parametrize("kind", KINDS)
def test_heads_accept_short_histories(kind):
    head = build_head(TemporalHeadSpec(kind=kind, history=1))
    assert len(predict_sequence(head, np.zeros((1, *SHAPE)))) == 1


@pytest.mark.parametrize("kind", ["ConvLSTM", "ConvGRU"])
def test_recurrent_heads_are_stateless(kind):
    torch.manual_seed(1)
    head = build_head(kind)
    hist = _history(3)
    a = predict_sequence(head, hist)[0].values
    predict_sequence(head, _history(4))
    b = predict_sequence(head, hist)[0].values
    assert np.array_equal(a, b)


def test_lstm_forget_bias():
    head = build_head("ConvLSTM")
    for cell in head.cells:
        hid = cell.hidden
        b = cell.gates.bias.detach()
        assert torch.all(b[hid:2 * hid] == 1.0) and b[:hid].abs().sum() == 0


def _tcn():
    torch.manual_seed(0)
    return build_head("TCN").eval()


def test_tcn_sees_last_and_first_frame():
    head, hist = _tcn(), _history()
    with torch.no_grad():
        base = head(hist)
        for t in (19, 0):
            h2 = hist.clone()
            h2[:, t] = 0
            assert not torch.equal(head(h2), base)


def test_tcn_order_matters():
    seq = make_sequence(5, 0, (16, 12))
    hist = torch.from_numpy(np.array(seq.maps[:20]))[None]
    head = _tcn()
    with torch.no_grad():
        assert not torch.allclose(head(hist), head(hist.flip(1)))


def test_tcn_ignores_frames_after_history():
    frames = _history(h=30)
    head = _tcn()
    with torch.no_grad():
        base = head(frames[:, :20])
        frames[:, 20:] = torch.rand_like(frames[:, 20:])
        assert torch.equal(head(frames[:, :20]), base)


def test_normalized_activations_bounded():
    head = _tcn()
    with torch.no_grad():
        acts = head.features(_history(h=20) * 7)
    for a in acts:
        assert a.min() >= 0 and a.max() <= 1 + 1e-5


def test_identity_gru_tracks_stationary_ball():
    torch.manual_seed(0)
    head = build_head(TemporalHeadSpec(kind="ConvGRU", init="identity"))
    shape = (16, 16)

    def still(c):
        return np.stack([gaussian_map(c, 2.0, shape)] * 21).astype(np.float32)

    rng = np.random.default_rng(0)
    seqs = [_ArraySequence(still((rng.integers(3, 13), rng.integers(3, 13)))) for _ in range(6)]
    report = fit_head(head, seqs, lr=1e-4, epochs=3)
    assert report.epoch_losses[-1] < report.epoch_losses[0]
    for c in [(5, 9), (11, 4), (3, 3), (12, 12)]:
        (m,) = predict_sequence(head, still(c)[:20])
        r, col = np.unravel_index(m.values.argmax(), shape)
        assert abs(col - c[0]) <= 1 and abs(r - c[1]) <= 1


def test_temporal_detector_end_to_end():
    torch.manual_seed(0)
    det = build_model(ModelSpec(input_shape=(32, 48))).eval()
    model = TemporalDetector(det, build_head(TemporalHeadSpec(kind="TCN", history=3)))
    with torch.no_grad():
        out = model(torch.rand(2, 3, 3, 32, 48))
    assert tuple(out.shape) == (2, 1, 8, 12)
