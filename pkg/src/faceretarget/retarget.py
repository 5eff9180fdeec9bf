"""Transfer expression and head pose onto a character rig; landmark-driven tracking."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from . import morphable_model as mm
from .detection_eval import EvalBox
from .errors import InvalidInputError


@dataclasses.dataclass(frozen=True)
class RigEntry:
    source: int  # 1-based blendshape index
    target: str
    gain: float = 1.0
    clamp: tuple = (0.0, 1.0)

    def __post_init__(self):
        if not 1 <= self.source <= mm.N_EXP_FREE:
            raise InvalidInputError(f"source blendshape index {self.source} outside 1..{mm.N_EXP_FREE}")
        if not np.isfinite(self.gain):
            raise InvalidInputError("gain must be finite")
        lo, hi = self.clamp
        if not 0.0 <= lo <= hi <= 1.0:
            raise InvalidInputError(f"clamp interval {self.clamp} must satisfy 0 <= lo <= hi <= 1")


@dataclasses.dataclass(frozen=True)
class RigMapping:
    entries: tuple
    pass_pose: bool = True

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        sources = [e.source for e in self.entries]
        if len(set(sources)) != len(sources):
            raise InvalidInputError("rig mapping lists a source blendshape more than once")

    @classmethod
    def identity(cls) -> "RigMapping":
        return cls(tuple(RigEntry(i, f"blendshape_{i:02d}") for i in range(1, mm.N_EXP_FREE + 1)))

    @classmethod
    def from_dict(cls, d: dict) -> "RigMapping":
        entries = []
        for e in d.get("entries", []):
            entries.append(RigEntry(int(e["source"]), str(e["target"]), float(e.get("gain", 1.0)),
                                    tuple(e.get("clamp", (0.0, 1.0)))))
        return cls(tuple(entries), bool(d.get("pass_pose", True)))

    @classmethod
    def load(cls, path) -> "RigMapping":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "entries": [{"source": e.source, "target": e.target, "gain": e.gain, "clamp": list(e.clamp)}
                        for e in self.entries],
            "pass_pose": self.pass_pose,
        }


@dataclasses.dataclass
class RigPose:
    weights: dict
    rotation: np.ndarray

    def to_dict(self) -> dict:
        return {"weights": dict(self.weights), "rotation": np.asarray(self.rotation).tolist()}


def map_to_rig(params: mm.FaceParams, mapping: RigMapping) -> RigPose:
    """Drive rig blendshapes from expression weights; identity, translation and
    focal are not transferred."""
    weights = {}
    for e in mapping.entries:
        if e.target in weights:
            raise InvalidInputError(f"rig target {e.target!r} is driven by more than one source")
        lo, hi = e.clamp
        weights[e.target] = float(np.clip(e.gain * params.w_free[e.source - 1], lo, hi))
    rotation = mm.canonical_quat(params.quat) if mapping.pass_pose else np.array([1.0, 0.0, 0.0, 0.0])
    return RigPose(weights, rotation)


def track_next_bbox(prev_landmarks, margin: float = 0.1) -> EvalBox:
    """Search box for the next frame: landmark bounds padded by ``margin * max(w, h)``."""
    pts = mm.check_landmarks(prev_landmarks)
    if margin < 0:
        raise InvalidInputError("margin must be non-negative")
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    extent = max(x1 - x0, y1 - y0)
    if extent <= 0:
        raise InvalidInputError("landmarks are degenerate (all points coincide)")
    pad = margin * extent
    # a collinear landmark set still gets a box with positive area
    pad_x = pad if x1 > x0 or pad > 0 else extent * 1e-9
    pad_y = pad if y1 > y0 or pad > 0 else extent * 1e-9
    return EvalBox(x0 - pad_x, y0 - pad_y, x1 + pad_x, y1 + pad_y)
