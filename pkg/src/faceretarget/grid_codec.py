"""Encode and decode the 9x9 grid of 5 anchor slots, 109 values per slot.

Slot layout::

    0..3     t_x, t_y, t_w, t_h        box offsets
    4        t_o                       objectness logit
    5..54    identity weights          (raw)
    55..100  expression weights        (logits)
    101..104 quaternion                (raw, normalized on decode)
    105..107 translation               (raw, t_z forced to 0)
    108      focal                     (logit of the position in the focal range)

Face parameters stored in a slot live in a *box frame*: projecting them gives
landmarks relative to the box, which ``landmark_denorm`` maps to pixels via
``lm = (b + b_dim * lm_hat) * cell_px``. The stored focal is multiplied by the
tensor's reference face width, so a value of 1 means the mean neutral face is
exactly as wide as its box.
"""

from __future__ import annotations

import dataclasses
import struct
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

from . import morphable_model as mm
from .detection_eval import EvalBox
from .errors import CollisionError, InvalidInputError

GRID = 9
N_ANCHORS = 5
N_SLOTS = GRID * GRID * N_ANCHORS
SLOT_LEN = 109
GRID_SHAPE = (GRID, GRID, N_ANCHORS, SLOT_LEN)

TX, TY, TW, TH, TO = range(5)
V_ID = slice(5, 55)
V_EXP = slice(55, 101)
V_QUAT = slice(101, 105)
V_T = slice(105, 108)
V_F = 108

EPS = 1e-7

_GRID_MAGIC = b"GRD1"


@dataclasses.dataclass(frozen=True)
class AnchorPrior:
    p_w: float
    p_h: float

    def __post_init__(self):
        if not (self.p_w > 0 and self.p_h > 0):
            raise InvalidInputError("anchor prior dimensions must be positive")


DEFAULT_PRIORS = (
    AnchorPrior(1.0, 1.4),
    AnchorPrior(1.6, 2.2),
    AnchorPrior(2.4, 3.2),
    AnchorPrior(3.4, 4.6),
    AnchorPrior(5.0, 6.6),
)


@dataclasses.dataclass
class DetectionBox:
    """A decoded slot. Box geometry is in cell units; landmarks are in pixels."""

    bx: float
    by: float
    bw: float
    bh: float
    objectness: float
    params: mm.FaceParams
    landmarks: np.ndarray
    cell: tuple = (0, 0)
    anchor: int = 0

    def eval_box(self, cell_px: float) -> EvalBox:
        return EvalBox(
            (self.bx - self.bw / 2) * cell_px,
            (self.by - self.bh / 2) * cell_px,
            (self.bx + self.bw / 2) * cell_px,
            (self.by + self.bh / 2) * cell_px,
            score=self.objectness,
        )

    def image_params(self, cell_px: float) -> mm.FaceParams:
        """Slot parameters re-expressed so they project straight to pixels."""
        p = self.params
        f_img = p.f * cell_px * self.bw
        t = p.t[:2] + np.array([self.bx, self.by]) * cell_px / f_img
        return mm.FaceParams(p.w_id, p.w_free, p.quat, t, f_img)

    def to_dict(self) -> dict:
        return {
            "bx": self.bx,
            "by": self.by,
            "bw": self.bw,
            "bh": self.bh,
            "obj": self.objectness,
            "cell": list(self.cell),
            "anchor": self.anchor,
            "params": self.params.to_dict(),
            "landmarks": np.asarray(self.landmarks).tolist(),
        }


@dataclasses.dataclass
class GridEntry:
    cell: int
    anchor: int
    target: np.ndarray

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=np.float64)
        if not (0 <= self.cell < GRID * GRID and 0 <= self.anchor < N_ANCHORS):
            raise InvalidInputError(
                f"slot (cell {self.cell}, anchor {self.anchor}) is outside the {GRID}x{GRID}x{N_ANCHORS} grid"
            )
        if self.target.shape != (SLOT_LEN,):
            raise InvalidInputError(f"slot target must have length {SLOT_LEN}")

    @property
    def cell_xy(self) -> tuple:
        return self.cell % GRID, self.cell // GRID


@dataclasses.dataclass
class GridGroundTruth:
    """Responsible slots (the indicator) with their target raw values."""

    entries: list = dataclasses.field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            key = (e.cell, e.anchor)
            if key in seen:
                raise InvalidInputError(f"duplicate ground-truth slot {key}")
            seen.add(key)

    def indicator(self) -> np.ndarray:
        mask = np.zeros((GRID, GRID, N_ANCHORS), dtype=bool)
        for e in self.entries:
            cx, cy = e.cell_xy
            mask[cy, cx, e.anchor] = True
        return mask

    def to_dict(self) -> dict:
        return {"entries": [{"cell": e.cell, "anchor": e.anchor, "target": e.target.tolist()} for e in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> "GridGroundTruth":
        return cls([GridEntry(int(e["cell"]), int(e["anchor"]), e["target"]) for e in d["entries"]])


def check_grid(raw) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != GRID_SHAPE:
        raise InvalidInputError(f"grid tensor must have shape {GRID_SHAPE}, got {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise InvalidInputError("grid tensor contains non-finite values")
    return raw


def save_grid(path, raw) -> None:
    raw = check_grid(raw)
    Path(path).write_bytes(_GRID_MAGIC + struct.pack("<4I", *GRID_SHAPE) + raw.astype("<f8").tobytes())


def load_grid(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != _GRID_MAGIC:
        raise InvalidInputError("not a grid tensor blob (bad magic)")
    dims = struct.unpack("<4I", blob[4:20])
    if dims != GRID_SHAPE:
        raise InvalidInputError(f"grid blob has dims {dims}, expected {GRID_SHAPE}")
    payload = blob[20:]
    if len(payload) != 8 * N_SLOTS * SLOT_LEN:
        raise InvalidInputError("grid blob is truncated or has trailing bytes")
    return check_grid(np.frombuffer(payload, dtype="<f8").reshape(GRID_SHAPE).copy())


def landmark_denorm(bx, by, bw, bh, lm_hat, cell_px: float) -> np.ndarray:
    """Box-relative landmarks -> pixels."""
    if not (bw > 0 and bh > 0):
        raise InvalidInputError("box dimensions must be positive")
    lm_hat = np.asarray(lm_hat, dtype=np.float64)
    out = np.empty_like(lm_hat)
    out[:, 0] = (bx + bw * lm_hat[:, 0]) * cell_px
    out[:, 1] = (by + bh * lm_hat[:, 1]) * cell_px
    return out


def landmark_normalize(bx, by, bw, bh, landmarks, cell_px: float) -> np.ndarray:
    """Inverse of :func:`landmark_denorm`."""
    landmarks = np.asarray(landmarks, dtype=np.float64)
    out = np.empty_like(landmarks)
    out[:, 0] = (landmarks[:, 0] / cell_px - bx) / bw
    out[:, 1] = (landmarks[:, 1] / cell_px - by) / bh
    return out


def shape_iou(w, h, p_w, p_h) -> float:
    """IoU of two co-centered boxes given only their sizes."""
    inter = min(w, p_w) * min(h, p_h)
    return inter / (w * h + p_w * p_h - inter)


def _safe_logit(u):
    return logit(np.clip(u, EPS, 1.0 - EPS))


@dataclasses.dataclass(frozen=True)
class GridCodec:
    tensor: mm.FaceTensor
    image_size: float = 288.0
    priors: tuple = DEFAULT_PRIORS
    focal_range: tuple = (0.2, 5.0)

    def __post_init__(self):
        if len(self.priors) != N_ANCHORS:
            raise InvalidInputError(f"exactly {N_ANCHORS} anchor priors are required")
        lo, hi = self.focal_range
        if not 0 < lo < hi:
            raise InvalidInputError("focal range must satisfy 0 < f_min < f_max")
        if self.image_size <= 0:
            raise InvalidInputError("image size must be positive")

    @property
    def cell_px(self) -> float:
        return self.image_size / GRID

    # -- focal

    def _focal_decode(self, t):
        lo, hi = self.focal_range
        return (lo + (hi - lo) * expit(t)) / self.tensor.reference_width

    def _focal_encode(self, f_box):
        lo, hi = self.focal_range
        return _safe_logit((f_box * self.tensor.reference_width - lo) / (hi - lo))

    # -- decoding

    def decode_slot(self, raw_slot, cell, anchor: int) -> DetectionBox:
        raw = np.asarray(raw_slot, dtype=np.float64)
        if raw.shape != (SLOT_LEN,):
            raise InvalidInputError(f"slot must have {SLOT_LEN} values")
        cx, cy = cell
        prior = self.priors[anchor]
        bx = expit(raw[TX]) + cx
        by = expit(raw[TY]) + cy
        bw = prior.p_w * np.exp(raw[TW])
        bh = prior.p_h * np.exp(raw[TH])
        obj = expit(raw[TO])

        q = raw[V_QUAT]
        if not np.linalg.norm(q) > 0:
            q = np.array([1.0, 0.0, 0.0, 0.0])
        params = mm.FaceParams(
            raw[V_ID],
            mm.project_expression(expit(raw[V_EXP])),
            mm.canonical_quat(q),
            np.array([raw[V_T][0], raw[V_T][1], 0.0]),
            self._focal_decode(raw[V_F]),
        )
        lm_hat = mm.project_landmarks(self.tensor, params)
        landmarks = landmark_denorm(bx, by, bw, bh, lm_hat, self.cell_px)
        return DetectionBox(float(bx), float(by), float(bw), float(bh), float(obj), params, landmarks,
                            (int(cx), int(cy)), int(anchor))

    def decode_grid(self, grid, objectness_threshold: float = 0.5) -> list:
        """All slots with objectness above the threshold, highest first."""
        if not 0 <= objectness_threshold < 1:
            raise InvalidInputError("objectness threshold must lie in [0, 1)")
        raw = check_grid(grid)
        obj = expit(raw[..., TO])
        boxes = []
        for cy, cx, k in zip(*np.nonzero(obj > objectness_threshold)):
            boxes.append(self.decode_slot(raw[cy, cx, k], (cx, cy), k))
        boxes.sort(key=lambda b: -b.objectness)
        return boxes

    # -- encoding

    def to_box_frame(self, params: mm.FaceParams, bx, by, bw) -> mm.FaceParams:
        """Image-frame parameters -> box-frame parameters (exact when bw == bh)."""
        f_box = params.f / (self.cell_px * bw)
        t = params.t[:2] - np.array([bx, by]) * self.cell_px / params.f
        return mm.FaceParams(params.w_id, params.w_free, params.quat, t, f_box)

    def detection_from_face(self, params: mm.FaceParams, box: EvalBox, landmarks=None) -> DetectionBox:
        """Ground-truth slot contents for a face given in pixels."""
        c = self.cell_px
        bx, by = (box.x0 + box.x1) / 2 / c, (box.y0 + box.y1) / 2 / c
        bw, bh = (box.x1 - box.x0) / c, (box.y1 - box.y0) / c
        if landmarks is None:
            landmarks = mm.project_landmarks(self.tensor, params)
        return DetectionBox(bx, by, bw, bh, 1.0, self.to_box_frame(params, bx, by, bw), np.asarray(landmarks))

    def assign(self, box: DetectionBox) -> tuple:
        """(cell_x, cell_y, anchor) responsible for a ground-truth box."""
        if not (0 <= box.bx <= GRID and 0 <= box.by <= GRID):
            raise InvalidInputError(f"box center ({box.bx}, {box.by}) lies outside the grid")
        cx = min(int(np.floor(box.bx)), GRID - 1)
        cy = min(int(np.floor(box.by)), GRID - 1)
        ious = [shape_iou(box.bw, box.bh, p.p_w, p.p_h) for p in self.priors]
        return cx, cy, int(np.argmax(ious))

    def encode_slot(self, box: DetectionBox, cx: int, cy: int, anchor: int) -> np.ndarray:
        prior = self.priors[anchor]
        p = box.params
        raw = np.zeros(SLOT_LEN)
        raw[TX] = _safe_logit(box.bx - cx)
        raw[TY] = _safe_logit(box.by - cy)
        raw[TW] = np.log(box.bw / prior.p_w)
        raw[TH] = np.log(box.bh / prior.p_h)
        raw[TO] = _safe_logit(box.objectness)
        raw[V_ID] = p.w_id
        raw[V_EXP] = _safe_logit(p.w_free)
        raw[V_QUAT] = mm.canonical_quat(p.quat)
        raw[V_T] = (p.t[0], p.t[1], 0.0)
        raw[V_F] = self._focal_encode(p.f)
        return raw

    def encode_gt(self, faces) -> tuple:
        """Assign faces to slots and build the target grid.

        Returns ``(GridGroundTruth, grid)``. Unassigned slots get objectness
        logit ``logit(EPS)`` and zeros elsewhere.
        """
        grid = np.zeros(GRID_SHAPE)
        grid[..., TO] = logit(EPS)
        owners = {}
        entries = []
        for i, box in enumerate(faces):
            if not (box.bw > 0 and box.bh > 0):
                raise InvalidInputError(f"face {i} has a non-positive box size")
            cx, cy, k = self.assign(box)
            key = (cy * GRID + cx, k)
            if key in owners:
                raise CollisionError(key, owners[key], i)
            owners[key] = i
            raw = self.encode_slot(box, cx, cy, k)
            grid[cy, cx, k] = raw
            entries.append(GridEntry(key[0], k, raw))
        return GridGroundTruth(entries), grid
