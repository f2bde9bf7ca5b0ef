"""Temporal heads (TCN, ConvLSTM, ConvGRU) and the gated feature fusion."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .datamodel import Heatmap, as_array
from .ffnet import FeatureTaps, SweatyNet


class HeadKind(str, Enum):
    TCN = "TCN"
    CONVLSTM = "ConvLSTM"
    CONVGRU = "ConvGRU"


@dataclass(frozen=True)
class TemporalHeadSpec:
    kind: HeadKind = HeadKind.TCN
    tcn_channels: tuple = (64, 96)
    rnn_channels: tuple = (32, 64, 32, 1)
    rnn_kernel: int = 5
    tcn_kernel: int = 3
    tcn_dilations: tuple = (1, 2, 4, 8)
    history: int = 20
    horizon: int = 1
    init: str = "default"  # "identity" is available for ConvGRU

    def __post_init__(self):
        object.__setattr__(self, "kind", HeadKind(self.kind))
        for name in ("tcn_channels", "rnn_channels", "tcn_dilations"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.history < 1 or self.horizon < 1:
            raise ValueError("history and horizon must be >= 1")
        if self.rnn_channels[-1] != 1:
            raise ValueError("the last recurrent layer must have one channel")
        if self.init not in ("default", "identity"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.init == "identity" and self.kind is not HeadKind.CONVGRU:
            raise ValueError("identity init is only defined for ConvGRU")

    @property
    def receptive_field(self) -> int:
        return 1 + (self.tcn_kernel - 1) * sum(self.tcn_dilations)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TemporalHeadSpec":
        return cls(**d)


# -- fusion ----------------------------------------------------------------

class FusionGate(nn.Module):
    """Adds ``w * conv7x7(concat(early, late))`` to the detector heatmap."""

    def __init__(self, early_channels: int, late_channels: int, w_init: float = 0.5):
        super().__init__()
        self.w = nn.Parameter(torch.tensor(float(w_init)))
        self.mix = nn.Conv2d(early_channels + late_channels, 1, 7, padding=3)

    @classmethod
    def for_detector(cls, net: SweatyNet, early_block: int = 2, late_block: int = 6) -> "FusionGate":
        return cls(net.block_widths[early_block], net.block_widths[late_block])

    def residual(self, early: torch.Tensor, late: torch.Tensor, size) -> torch.Tensor:
        early = F.interpolate(early, size=size, mode="bilinear", align_corners=False)
        late = F.interpolate(late, size=size, mode="bilinear", align_corners=False)
        if early.shape[0] != late.shape[0]:
            raise ValueError(f"tap batch sizes differ: {early.shape[0]} vs {late.shape[0]}")
        feats = torch.cat([early, late], dim=1)
        if feats.shape[1] != self.mix.in_channels:
            raise ValueError(
                f"taps carry {feats.shape[1]} channels after concatenation, gate expects {self.mix.in_channels}"
            )
        return self.mix(feats)

    def forward(self, sweaty_out: torch.Tensor, early: torch.Tensor, late: torch.Tensor) -> torch.Tensor:
        return sweaty_out + self.w * self.residual(early, late, sweaty_out.shape[-2:])


def fuse(sweaty_out, taps: FeatureTaps, gate: FusionGate) -> torch.Tensor:
    """Gate-weighted residual fusion; accepts a heatmap or a (B,1,H,W) tensor."""
    if isinstance(sweaty_out, (Heatmap, np.ndarray)):
        sweaty_out = torch.tensor(as_array(sweaty_out), dtype=taps.early.dtype)[None, None]
    if taps.early.shape[0] != sweaty_out.shape[0]:
        raise ValueError(f"taps have batch {taps.early.shape[0]}, detector output has {sweaty_out.shape[0]}")
    return gate(sweaty_out, taps.early, taps.late)


# -- heads -----------------------------------------------------------------

def normalized_relu(x: torch.Tensor, batch: int, eps: float = 1e-5) -> torch.Tensor:
    """ReLU scaled by its per-channel max over time and space.

    ``x`` is laid out as (batch * pixels, channels, time).
    """
    x = F.relu(x)
    n, c, t = x.shape
    v = x.reshape(batch, n // batch, c, t)
    peak = v.amax(dim=(1, 3), keepdim=True)
    return (v / (peak + eps)).reshape(n, c, t)


class TemporalHead(nn.Module):
    def __init__(self, spec: TemporalHeadSpec):
        super().__init__()
        self.spec = spec

    def check_history(self, history: torch.Tensor) -> None:
        if history.dim() != 4:
            raise ValueError(f"history must be (batch, time, rows, cols), got {tuple(history.shape)}")
        if history.shape[1] != self.spec.history:
            raise ValueError(f"expected a history of {self.spec.history} frames, got {history.shape[1]}")

    def step(self, history: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def forward(self, history: torch.Tensor) -> torch.Tensor:
        """(B, h, H, W) history -> (B, p, H, W) non-negative predictions."""
        self.check_history(history)
        preds = []
        for _ in range(self.spec.horizon):
            nxt = self.step(history)
            preds.append(nxt)
            history = torch.cat([history[:, 1:], nxt[:, None]], dim=1)
        return torch.stack(preds, dim=1)


class TCNHead(TemporalHead):
    """Per-pixel causal dilated convolutions over time.

    Each frame is lifted to ``tcn_channels[0]`` features by a shared 3x3
    conv; the first half of the dilation schedule runs at the encoder width,
    the rest at the decoder width. A 1x1 conv maps the last time step back
    to one channel.
    """

    def __init__(self, spec: TemporalHeadSpec):
        super().__init__(spec)
        enc_c, dec_c = spec.tcn_channels
        self.lift = nn.Conv2d(1, enc_c, 3, padding=1)
        n_enc = len(spec.tcn_dilations) // 2
        self.temporal = nn.ModuleList()
        c = enc_c
        for i, d in enumerate(spec.tcn_dilations):
            oc = enc_c if i < n_enc else dec_c
            self.temporal.append(nn.Conv1d(c, oc, spec.tcn_kernel, dilation=d))
            c = oc
        self.out = nn.Conv2d(c, 1, 1)

    def features(self, history: torch.Tensor) -> list[torch.Tensor]:
        b, t, rows, cols = history.shape
        z = F.relu(self.lift(history.reshape(b * t, 1, rows, cols)))
        z = z.reshape(b, t, -1, rows * cols).permute(0, 3, 2, 1).reshape(b * rows * cols, -1, t)
        acts = []
        for conv in self.temporal:
            pad = (conv.kernel_size[0] - 1) * conv.dilation[0]
            z = normalized_relu(conv(F.pad(z, (pad, 0))), b)
            acts.append(z)
        return acts

    def step(self, history: torch.Tensor) -> torch.Tensor:
        b, _, rows, cols = history.shape
        last = self.features(history)[-1][..., -1]
        last = last.reshape(b, rows, cols, -1).permute(0, 3, 1, 2)
        return F.relu(self.out(last))[:, 0]


class ConvLSTMCell(nn.Module):
    def __init__(self, cin: int, hidden: int, kernel: int):
        super().__init__()
        self.hidden = hidden
        self.gates = nn.Conv2d(cin + hidden, 4 * hidden, kernel, padding=kernel // 2)
        with torch.no_grad():
            self.gates.bias.zero_()
            self.gates.bias[hidden:2 * hidden].fill_(1.0)  # forget gate

    def init_state(self, x: torch.Tensor):
        z = x.new_zeros(x.shape[0], self.hidden, *x.shape[-2:])
        return z, z

    def forward(self, x, state):
        h, c = state
        i, f, o, g = self.gates(torch.cat([x, h], dim=1)).chunk(4, dim=1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return h, (h, c)


class ConvGRUCell(nn.Module):
    def __init__(self, cin: int, hidden: int, kernel: int):
        super().__init__()
        self.cin = cin
        self.hidden = hidden
        self.gates = nn.Conv2d(cin + hidden, 2 * hidden, kernel, padding=kernel // 2)
        self.candidate = nn.Conv2d(cin + hidden, hidden, kernel, padding=kernel // 2)
        with torch.no_grad():
            self.gates.bias.zero_()
            self.candidate.bias.zero_()

    def identity_(self) -> None:
        """Pass the channel-mean of the input through the candidate path.

        Gates sit at 0.5, so the state becomes a leaky average of the input.
        """
        k = self.candidate.kernel_size[0]
        with torch.no_grad():
            self.gates.weight.zero_()
            self.gates.bias.zero_()
            self.candidate.weight.zero_()
            self.candidate.bias.zero_()
            self.candidate.weight[:, : self.cin, k // 2, k // 2] = 1.0 / self.cin

    def init_state(self, x: torch.Tensor):
        return x.new_zeros(x.shape[0], self.hidden, *x.shape[-2:])

    def forward(self, x, h):
        z, r = torch.sigmoid(self.gates(torch.cat([x, h], dim=1))).chunk(2, dim=1)
        cand = torch.tanh(self.candidate(torch.cat([x, r * h], dim=1)))
        h = (1 - z) * h + z * cand
        return h, h


class RecurrentHead(TemporalHead):
    """Stack of convolutional recurrent cells; state starts at zero per call."""

    cell_type = None

    def __init__(self, spec: TemporalHeadSpec):
        super().__init__(spec)
        cells = []
        c = 1
        for hid in spec.rnn_channels:
            cells.append(self.cell_type(c, hid, spec.rnn_kernel))
            c = hid
        self.cells = nn.ModuleList(cells)
        if spec.init == "identity":
            for cell in self.cells:
                cell.identity_()

    def _advance(self, x, states):
        new = []
        for cell, st in zip(self.cells, states):
            x, st = cell(x, st)
            new.append(st)
        return x, new

    def forward(self, history: torch.Tensor) -> torch.Tensor:
        self.check_history(history)
        frames = history[:, :, None]
        states = [cell.init_state(frames[:, 0]) for cell in self.cells]
        out = None
        for t in range(frames.shape[1]):
            out, states = self._advance(frames[:, t], states)
        preds = [F.relu(out[:, 0])]
        for _ in range(self.spec.horizon - 1):
            out, states = self._advance(preds[-1][:, None], states)
            preds.append(F.relu(out[:, 0]))
        return torch.stack(preds, dim=1)


class ConvLSTMHead(RecurrentHead):
    cell_type = ConvLSTMCell


class ConvGRUHead(RecurrentHead):
    cell_type = ConvGRUCell


_HEADS = {HeadKind.TCN: TCNHead, HeadKind.CONVLSTM: ConvLSTMHead, HeadKind.CONVGRU: ConvGRUHead}


def build_head(spec) -> TemporalHead:
    if not isinstance(spec, TemporalHeadSpec):
        spec = TemporalHeadSpec(kind=spec)
    return _HEADS[spec.kind](spec)


def history_tensor(history: Sequence, dtype=torch.float32) -> torch.Tensor:
    if isinstance(history, torch.Tensor):
        return history
    arr = np.stack([as_array(m) for m in history]) if not isinstance(history, np.ndarray) else history
    return torch.as_tensor(arr, dtype=dtype)


def predict_sequence(head: TemporalHead, history: Sequence) -> list[Heatmap]:
    """Predict the next ``p`` heatmaps from exactly ``h`` past heatmaps."""
    x = history_tensor(history)
    if x.dim() == 3:
        x = x[None]
    if x.shape[1] != head.spec.history:
        raise ValueError(f"expected a history of {head.spec.history} frames, got {x.shape[1]}")
    head.eval()
    with torch.no_grad():
        out = head(x)[0]
    return [Heatmap(o.double().numpy()) for o in out]


class TemporalDetector(nn.Module):
    """Detector, fusion gate and temporal head wired end to end.

    Input frames are (B, T, 3, H_in, W_in); the detector runs per frame,
    its output is fused with the tap residual, and the fused maps form the
    history consumed by the head.
    """

    def __init__(self, detector: SweatyNet, head: TemporalHead, gate: Optional[FusionGate] = None,
                 early_block: int = 2, late_block: int = 6):
        super().__init__()
        self.detector = detector
        self.head = head
        self.early_block = early_block
        self.late_block = late_block
        self.gate = gate if gate is not None else FusionGate.for_detector(detector, early_block, late_block)

    def fused(self, frames: torch.Tensor) -> torch.Tensor:
        b, t = frames.shape[:2]
        out, taps = self.detector(frames.reshape(b * t, *frames.shape[2:]), return_taps=True)
        fused = self.gate(out, taps[self.early_block], taps[self.late_block])
        return fused.reshape(b, t, *fused.shape[-2:])

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        return self.head(self.fused(frames))
