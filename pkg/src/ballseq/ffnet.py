"""SweatyNet encoder-decoder detectors built from a declarative layer table."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .datamodel import DOWNSAMPLE, INPUT_SHAPE, Heatmap, ImageFrame


class Variant(str, Enum):
    SWEATYNET1 = "SweatyNet1"
    SWEATYNET2 = "SweatyNet2"
    SWEATYNET3 = "SweatyNet3"


@dataclass(frozen=True)
class LayerDescriptor:
    kind: str  # conv, batchnorm, relu, maxpool, bilinear_upsample, dropout, concat_skip
    kernel: int = 0
    in_channels: int = 0
    out_channels: int = 0
    block: int = 0


@dataclass(frozen=True)
class BlockSpec:
    """One block: a run of conv-BN-ReLU layers given as (kernel, out_channels)."""

    layers: tuple
    pool_after: bool = False
    upsample_after: bool = False
    skip_from: Optional[int] = None  # 1-based index of the block whose output is concatenated onto the input
    dropout: bool = False


# Per-block layer table for SweatyNet-1, in units of the base channel count.
# Blocks 1-5 are the encoder, 6-7 the decoder. This is the single place to
# correct if the reference layer counts turn out different.
_SWEATYNET1 = (
    ((1,),),
    ((2, 2, 2),),
    ((4, 4, 4),),
    ((8, 8, 8),),
    ((16, 16, 8),),  # halved before the first upsampling
    ((8, 8, 4),),  # halved before the second upsampling
    ((4, 4, 4),),
)
_SKIPS = {6: 4, 7: 3}
_SLIMMED_BLOCKS = (2, 3, 4, 5)  # encoder blocks touched by variants 2 and 3
_ONE_BY_ONE_BLOCKS = _SLIMMED_BLOCKS + (6, 7)


def block_table(variant: Variant, base_channels: int = 8, dropout_p: float = 0.0) -> list[BlockSpec]:
    variant = Variant(variant)
    blocks = []
    for idx, (mults,) in enumerate(_SWEATYNET1, start=1):
        layers = [(3, m * base_channels) for m in mults]
        if variant is Variant.SWEATYNET2 and idx in _SLIMMED_BLOCKS:
            layers = layers[1:]
        if variant is Variant.SWEATYNET3 and idx in _ONE_BY_ONE_BLOCKS:
            layers[0] = (1, layers[0][1])
        blocks.append(
            BlockSpec(
                layers=tuple(layers),
                pool_after=idx <= 4,
                upsample_after=idx in (5, 6),
                skip_from=_SKIPS.get(idx),
                dropout=dropout_p > 0 and idx in _SLIMMED_BLOCKS,
            )
        )
    return blocks


@dataclass(frozen=True)
class ModelSpec:
    variant: Variant = Variant.SWEATYNET1
    base_channels: int = 8
    dropout_p: float = 0.0
    input_shape: tuple = INPUT_SHAPE

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if self.base_channels < 1:
            raise ValueError("base_channels must be positive")
        if any(s % 16 for s in self.input_shape):
            raise ValueError(f"input shape {self.input_shape} must be divisible by 16 (four 2x pools)")

    @property
    def output_shape(self) -> tuple:
        return tuple(s // DOWNSAMPLE for s in self.input_shape)

    def blocks(self) -> list[BlockSpec]:
        return block_table(self.variant, self.base_channels, self.dropout_p)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "base_channels": self.base_channels,
            "dropout_p": self.dropout_p,
            "input_shape": list(self.input_shape),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["variant"], int(d["base_channels"]), float(d["dropout_p"]), tuple(d["input_shape"]))


def describe_blocks(blocks: Sequence[BlockSpec], in_channels: int = 3) -> list[LayerDescriptor]:
    """Flatten a block table into the layer sequence the network executes."""
    out = []
    outputs = {}
    c = in_channels
    for idx, blk in enumerate(blocks, start=1):
        if blk.skip_from is not None:
            skip_c = outputs[blk.skip_from]
            out.append(LayerDescriptor("concat_skip", 0, c, c + skip_c, idx))
            c += skip_c
        for k, oc in blk.layers:
            out.append(LayerDescriptor("conv", k, c, oc, idx))
            out.append(LayerDescriptor("batchnorm", 0, oc, oc, idx))
            out.append(LayerDescriptor("relu", 0, oc, oc, idx))
            c = oc
        if blk.dropout:
            out.append(LayerDescriptor("dropout", 0, c, c, idx))
        outputs[idx] = c
        if blk.pool_after:
            out.append(LayerDescriptor("maxpool", 2, c, c, idx))
        if blk.upsample_after:
            out.append(LayerDescriptor("bilinear_upsample", 2, c, c, idx))
    out.append(LayerDescriptor("conv", 1, c, 1, 0))
    out.append(LayerDescriptor("relu", 0, 1, 1, 0))
    return out


def describe(spec: ModelSpec) -> list[LayerDescriptor]:
    return describe_blocks(spec.blocks())


def _layer(k: int, cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, k, padding=k // 2),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class SweatyNet(nn.Module):
    """Fully convolutional encoder-decoder with skip concatenations.

    ``forward`` returns the 1-channel heatmap and, when asked, the outputs of
    every block keyed by 1-based block index (the feature taps).
    """

    def __init__(self, blocks: Sequence[BlockSpec], in_channels: int = 3, dropout_p: float = 0.0,
                 spec: Optional[ModelSpec] = None):
        super().__init__()
        self.spec = spec
        self.block_specs = list(blocks)
        self.blocks = nn.ModuleList()
        widths = {}
        c = in_channels
        for idx, blk in enumerate(self.block_specs, start=1):
            if blk.skip_from is not None:
                c += widths[blk.skip_from]
            layers = []
            for k, oc in blk.layers:
                layers.append(_layer(k, c, oc))
                c = oc
            if blk.dropout:
                layers.append(nn.Dropout2d(dropout_p))
            self.blocks.append(nn.Sequential(*layers))
            widths[idx] = c
        self.block_widths = widths
        self.head = nn.Conv2d(c, 1, 1)

    @classmethod
    def from_spec(cls, spec: ModelSpec) -> "SweatyNet":
        return cls(spec.blocks(), dropout_p=spec.dropout_p, spec=spec)

    def forward(self, x: torch.Tensor, return_taps: bool = False):
        taps = {}
        for idx, (blk, bs) in enumerate(zip(self.blocks, self.block_specs), start=1):
            if bs.skip_from is not None:
                x = torch.cat([x, taps[bs.skip_from]], dim=1)
            x = blk(x)
            taps[idx] = x
            if bs.pool_after:
                x = F.max_pool2d(x, 2)
            if bs.upsample_after:
                x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        out = F.relu(self.head(x))
        return (out, taps) if return_taps else out


def build_model(spec: ModelSpec) -> SweatyNet:
    return SweatyNet.from_spec(spec)


def param_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


@dataclass
class FeatureTaps:
    """Early (block 2) and late (block 6) activations used by the fusion gate."""

    early: torch.Tensor
    late: torch.Tensor
    extra: dict = field(default_factory=dict)


def frames_to_tensor(batch: Sequence, input_shape: Optional[tuple] = None) -> torch.Tensor:
    arrs = [f.pixels if isinstance(f, ImageFrame) else np.asarray(f, dtype=np.float32) for f in batch]
    if not arrs:
        raise ValueError("empty batch")
    expected = tuple(input_shape) if input_shape is not None else arrs[0].shape[:2]
    for a in arrs:
        if a.ndim != 3 or a.shape[2] != 3 or tuple(a.shape[:2]) != expected:
            raise ValueError(f"expected frames of shape {expected + (3,)}, got {a.shape}")
    return torch.from_numpy(np.stack(arrs).astype(np.float32)).permute(0, 3, 1, 2).contiguous()


def forward(net: SweatyNet, batch: Sequence, early_block: int = 2, late_block: int = 6):
    """Inference-mode forward pass on a list of frames.

    Returns ``(heatmaps, taps)``. The network is switched to eval mode, so
    dropout is off and batch norm uses running statistics.
    """
    shape = net.spec.input_shape if net.spec is not None else None
    x = frames_to_tensor(batch, shape)
    net.eval()
    with torch.no_grad():
        out, taps = net(x, return_taps=True)
    heatmaps = [Heatmap(o[0].double().numpy()) for o in out]
    return heatmaps, FeatureTaps(taps[early_block], taps[late_block], taps)
