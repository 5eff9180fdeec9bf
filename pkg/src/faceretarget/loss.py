"""Single-face and grid training losses with the epoch-decayed parameter weight."""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.special import expit

from . import grid_codec as gc
from . import morphable_model as mm
from .errors import InvalidInputError


@dataclasses.dataclass(frozen=True)
class LossSchedule:
    epoch: int

    def __post_init__(self):
        if int(self.epoch) != self.epoch or self.epoch < 1:
            raise InvalidInputError("epoch must be an integer >= 1")


@dataclasses.dataclass
class LossBreakdown:
    """Loss components. ``total`` covers the parameter and landmark terms only;
    ``coord_sse`` and ``obj_sse`` are the box and objectness terms of the grid
    loss, reported separately because their weighting is left to the trainer.
    """

    id_l1: float
    exp_l1: float
    rot_l1: float
    landmark_rmse: float
    total: float
    coord_sse: float = 0.0
    obj_sse: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def tau(schedule) -> float:
    epoch = schedule.epoch if isinstance(schedule, LossSchedule) else schedule
    return 10.0 / LossSchedule(epoch).epoch


def _rot_terms(q_pred, q_gt):
    return np.abs(mm.canonical_quat(q_pred) - mm.canonical_quat(q_gt))


def sfn_loss(pred: mm.FaceParams, pred_landmarks, gt: mm.FaceParams, gt_landmarks, schedule) -> LossBreakdown:
    id_l1 = float(np.mean(np.abs(pred.w_id - gt.w_id)))
    exp_l1 = float(np.mean(np.abs(pred.w_free - gt.w_free)))
    rot_l1 = float(np.mean(_rot_terms(pred.quat, gt.quat)))
    d = np.asarray(pred_landmarks, dtype=np.float64) - np.asarray(gt_landmarks, dtype=np.float64)
    lm = float(np.sqrt(np.sum(d * d) / mm.N_LANDMARKS))
    total = tau(schedule) * (id_l1 + exp_l1 + rot_l1) + lm
    return LossBreakdown(id_l1, exp_l1, rot_l1, lm, total)


def grid_loss(pred_grid, gt: gc.GridGroundTruth, schedule, codec: gc.GridCodec) -> LossBreakdown:
    """Parameter and landmark terms summed over responsible slots.

    The landmark term takes one square root over the squared errors pooled
    across all responsible slots. Box terms follow the YOLO form: squared
    error of the sigmoid-space centre offsets and log-space sizes on
    responsible slots, and squared objectness error on every slot (target 1
    where responsible, 0 elsewhere).
    """
    raw = gc.check_grid(pred_grid)
    indicator = np.zeros(gc.GRID_SHAPE[:3], dtype=bool)
    id_sum = exp_sum = rot_sum = lm_sq = coord = 0.0
    for e in gt.entries:
        if not (0 <= e.cell < gc.GRID * gc.GRID and 0 <= e.anchor < gc.N_ANCHORS):
            raise InvalidInputError(f"ground truth references slot ({e.cell}, {e.anchor}) outside the grid")
        cx, cy = e.cell_xy
        indicator[cy, cx, e.anchor] = True
        slot = raw[cy, cx, e.anchor]
        p = codec.decode_slot(slot, (cx, cy), e.anchor)
        g = codec.decode_slot(e.target, (cx, cy), e.anchor)
        id_sum += np.sum(np.abs(p.params.w_id - g.params.w_id))
        exp_sum += np.sum(np.abs(p.params.w_free - g.params.w_free))
        rot_sum += np.sum(_rot_terms(p.params.quat, g.params.quat))
        lm_sq += np.sum((p.landmarks - g.landmarks) ** 2)
        coord += (expit(slot[gc.TX]) - expit(e.target[gc.TX])) ** 2
        coord += (expit(slot[gc.TY]) - expit(e.target[gc.TY])) ** 2
        coord += (slot[gc.TW] - e.target[gc.TW]) ** 2 + (slot[gc.TH] - e.target[gc.TH]) ** 2

    id_l1 = id_sum / mm.N_ID
    exp_l1 = exp_sum / mm.N_EXP_FREE
    rot_l1 = rot_sum / 4
    lm = float(np.sqrt(lm_sq / mm.N_LANDMARKS))
    obj = float(np.sum((expit(raw[..., gc.TO]) - indicator) ** 2))
    total = tau(schedule) * (id_l1 + exp_l1 + rot_l1) + lm
    return LossBreakdown(float(id_l1), float(exp_l1), float(rot_l1), lm, float(total), float(coord), obj)
