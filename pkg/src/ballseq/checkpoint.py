"""Versioned checkpoint container for detector, fusion gate and heads."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import torch

from .exceptions import CheckpointError
from .ffnet import ModelSpec, SweatyNet
from .temporal import FusionGate, TemporalHead, TemporalHeadSpec, build_head

FORMAT_TAG = "ballseq-checkpoint"
FORMAT_VERSION = 2


@dataclass
class Checkpoint:
    model_spec: Optional[ModelSpec] = None
    detector_state: Optional[dict] = None
    gate_state: Optional[dict] = None
    heads: dict = field(default_factory=dict)  # kind -> (TemporalHeadSpec, state_dict)
    meta: dict = field(default_factory=dict)

    def detector(self) -> SweatyNet:
        if self.model_spec is None or self.detector_state is None:
            raise CheckpointError("checkpoint holds no detector")
        net = SweatyNet.from_spec(self.model_spec)
        net.load_state_dict(self.detector_state)
        net.eval()
        return net

    def gate(self, detector: SweatyNet) -> FusionGate:
        gate = FusionGate.for_detector(detector)
        if self.gate_state is not None:
            gate.load_state_dict(self.gate_state)
        return gate

    def head(self, kind) -> TemporalHead:
        key = str(getattr(kind, "value", kind))
        if key not in self.heads:
            raise CheckpointError(f"checkpoint holds no {key} head (has: {sorted(self.heads)})")
        spec, state = self.heads[key]
        head = build_head(spec)
        head.load_state_dict(state)
        head.eval()
        return head

    @property
    def w(self) -> Optional[float]:
        return None if self.gate_state is None else float(self.gate_state["w"])


def make_checkpoint(detector: Optional[SweatyNet] = None, gate: Optional[FusionGate] = None,
                    heads=(), meta: Optional[dict] = None) -> Checkpoint:
    ck = Checkpoint(meta=dict(meta or {}))
    if detector is not None:
        ck.model_spec = detector.spec
        ck.detector_state = {k: v.detach().clone() for k, v in detector.state_dict().items()}
    if gate is not None:
        ck.gate_state = {k: v.detach().clone() for k, v in gate.state_dict().items()}
    for head in heads:
        ck.heads[head.spec.kind.value] = (head.spec, {k: v.detach().clone() for k, v in head.state_dict().items()})
    return ck


def save_checkpoint(ck: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "model_spec": None if ck.model_spec is None else ck.model_spec.to_dict(),
        "detector": ck.detector_state,
        "gate": ck.gate_state,
        "heads": {k: {"spec": s.to_dict(), "state": st} for k, (s, st) in ck.heads.items()},
        "meta": ck.meta,
        "batchnorm": {"momentum": 0.1, "eps": 1e-5},
    }
    torch.save(blob, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from None
    if not isinstance(blob, dict) or blob.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{path}: not a {FORMAT_TAG} file")
    if blob.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint format version {blob.get('version')} is not supported (expected {FORMAT_VERSION})"
        )
    ck = Checkpoint(meta=blob.get("meta") or {})
    if blob.get("model_spec") is not None:
        ck.model_spec = ModelSpec.from_dict(blob["model_spec"])
        ck.detector_state = blob["detector"]
    ck.gate_state = blob.get("gate")
    for k, v in (blob.get("heads") or {}).items():
        ck.heads[k] = (TemporalHeadSpec.from_dict(v["spec"]), v["state"])
    return ck
