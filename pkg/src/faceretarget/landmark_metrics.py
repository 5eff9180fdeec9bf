"""Landmark error metrics: NME, CED area under curve, and the expression metric."""

from __future__ import annotations

import numpy as np

from . import morphable_model as mm
from .detection_eval import EvalBox
from .errors import InvalidInputError

CED_CUTOFF = 0.08


def _normalizer(bbox: EvalBox, kind: str) -> float:
    w, h = bbox.x1 - bbox.x0, bbox.y1 - bbox.y0
    if not (w > 0 and h > 0):
        raise InvalidInputError("bounding box is degenerate")
    if kind == "geometric":
        return float(np.sqrt(w * h))
    if kind == "diagonal":
        return float(np.hypot(w, h))
    raise InvalidInputError(f"unknown normalizer {kind!r}")


def nme(pred, gt, bbox: EvalBox, normalizer: str = "geometric") -> float:
    """Mean point-to-point distance over the 68 landmarks divided by the box size.

    ``normalizer="geometric"`` divides by ``sqrt(w*h)``; ``"diagonal"`` by the
    box diagonal, which is the CED convention.
    """
    pred = mm.check_landmarks(pred)
    gt = mm.check_landmarks(gt)
    dist = np.linalg.norm(pred - gt, axis=1)
    return float(dist.mean() / _normalizer(bbox, normalizer))


def ced_auc(errors, cutoff: float = CED_CUTOFF) -> float:
    """Area under the cumulative error distribution on [0, cutoff], scaled to [0, 1].

    The CED is a step function, so trapezoids over its breakpoints (each
    error listed twice, once on either side of the jump) integrate it exactly.
    """
    errors = np.sort(np.asarray(errors, dtype=np.float64).ravel())
    if errors.size == 0:
        raise InvalidInputError("cannot compute CED AUC of an empty error list")
    if not cutoff > 0:
        raise InvalidInputError("cutoff must be positive")
    n = errors.size
    inside = errors[errors < cutoff]
    xs = [0.0]
    ys = [np.count_nonzero(errors <= 0) / n]
    for e in inside:
        if e <= 0:
            continue
        xs += [e, e]
        ys += [ys[-1], np.count_nonzero(errors <= e) / n]
    xs.append(cutoff)
    ys.append(ys[-1])
    return float(np.trapezoid(ys, xs) / cutoff)


def expression_metric(w_free, active_indices) -> float:
    """Mean of ``|1 - w|`` over the active blendshapes (1-based, 1..46)."""
    w_free = np.asarray(w_free, dtype=np.float64)
    idx = np.asarray(list(active_indices), dtype=int)
    if idx.size == 0:
        raise InvalidInputError("at least one active blendshape index is required")
    if idx.min() < 1 or idx.max() > mm.N_EXP_FREE:
        raise InvalidInputError(f"blendshape indices must lie in 1..{mm.N_EXP_FREE}")
    return float(np.mean(np.abs(1.0 - w_free[idx - 1])))
