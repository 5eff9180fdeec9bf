"""Synthetic multi-face scenes and fitter-generated grid ground truth."""

from __future__ import annotations

import dataclasses

import numpy as np

from . import fitting
from . import grid_codec as gc
from . import morphable_model as mm
from .detection_eval import EvalBox
from .errors import InvalidInputError, PlacementError

MAX_FACES = 20
MIN_FACE_FRAC = 0.02
BOX_MARGIN = 0.1
MAX_ATTEMPTS = 10000
# fits above this RMSE (pixels) are retried from alternative head poses
REFIT_RMSE = 1e-6


@dataclasses.dataclass
class SceneFace:
    params: mm.FaceParams
    landmarks: np.ndarray
    box: EvalBox

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "landmarks": self.landmarks.tolist(), "box": self.box.to_dict()}


@dataclasses.dataclass
class Scene:
    faces: list
    ground_truth: gc.GridGroundTruth
    grid: np.ndarray
    image_size: float

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "faces": [f.to_dict() for f in self.faces],
            "ground_truth": self.ground_truth.to_dict(),
        }


@dataclasses.dataclass
class WeakGroundTruth:
    ground_truth: gc.GridGroundTruth
    grid: np.ndarray
    fits: list

    @property
    def rmse(self) -> list:
        return [r.final_rmse for r in self.fits]

    def to_dict(self) -> dict:
        return {
            "ground_truth": self.ground_truth.to_dict(),
            "fits": [r.to_dict() for r in self.fits],
        }


def face_box(landmarks, margin: float = BOX_MARGIN) -> EvalBox:
    """Square box centered on the landmark bounds, side ``max(w, h) * (1 + 2 margin)``."""
    pts = mm.check_landmarks(landmarks)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    c = (lo + hi) / 2
    half = np.max(hi - lo) * (1 + 2 * margin) / 2
    if not half > 0:
        raise InvalidInputError("landmarks are degenerate")
    return EvalBox(c[0] - half, c[1] - half, c[0] + half, c[1] + half)


def random_face(rng: np.random.Generator, max_angle_deg: float = 20.0) -> mm.FaceParams:
    """Plausible identity, a sparse expression and a moderate head pose at unit scale."""
    w_id = rng.normal(0.0, 0.3, mm.N_ID)
    w_id[0] = rng.uniform(0.9, 1.1)
    w_id = np.clip(w_id, -mm.W_ID_MAX, mm.W_ID_MAX)
    w_free = np.zeros(mm.N_EXP_FREE)
    active = rng.choice(mm.N_EXP_FREE, size=rng.integers(1, 6), replace=False)
    w_free[active] = rng.uniform(0.05, 0.15, active.size)
    yaw, pitch, roll = np.radians(rng.uniform(-max_angle_deg, max_angle_deg, 3))
    q = mm.quat_multiply(
        mm.quat_from_axis_angle((0, 1, 0), yaw),
        mm.quat_multiply(mm.quat_from_axis_angle((1, 0, 0), pitch), mm.quat_from_axis_angle((0, 0, 1), roll)),
    )
    return mm.FaceParams(w_id, w_free, mm.canonical_quat(q), (0.0, 0.0), 1.0)


def place_face(tensor: mm.FaceTensor, params: mm.FaceParams, center, side: float) -> mm.FaceParams:
    """Rescale and shift a face so its landmark box has the given center and side."""
    unit = params.copy()
    unit.f, unit.t = 1.0, np.zeros(3)
    box = face_box(mm.project_landmarks(tensor, unit))
    f = side / box.width
    mid = np.array([(box.x0 + box.x1) / 2, (box.y0 + box.y1) / 2])
    placed = unit.copy()
    placed.f = f
    placed.t = np.append(np.asarray(center) / f - mid, 0.0)
    return placed


def synth_scene(n_faces: int, seed: int, image_size: float = 288.0, tensor: mm.FaceTensor | None = None,
                codec: gc.GridCodec | None = None) -> Scene:
    """Lay out ``n_faces`` non-overlapping synthetic faces and render their grid targets.

    Face centers are drawn by rejection sampling: a candidate is rejected if
    its center is closer than ``(s_i + s_j) / sqrt(2)`` to another face (which
    rules out overlap of the square boxes), if it shares a grid cell with
    another face, or if its box leaves the image.
    """
    if not 1 <= n_faces <= MAX_FACES:
        raise InvalidInputError(f"scenes hold between 1 and {MAX_FACES} faces, got {n_faces}")
    if codec is None:
        codec = gc.GridCodec(tensor if tensor is not None else mm.generate_synthetic_tensor(42), image_size)
    tensor = codec.tensor
    size = codec.image_size
    rng = np.random.default_rng(seed)

    s_max = min(0.45 * size, 0.55 * size / np.sqrt(n_faces))
    s_min = max(0.6 * s_max, 2 * MIN_FACE_FRAC * size)
    placed = []  # (center, side, cell)
    attempts = 0
    while len(placed) < n_faces:
        attempts += 1
        if attempts > MAX_ATTEMPTS:
            raise PlacementError(f"could not place {n_faces} faces without overlap in {MAX_ATTEMPTS} attempts")
        side = rng.uniform(s_min, s_max)
        center = rng.uniform(side / 2, size - side / 2, 2)
        cell = tuple(np.minimum((center // codec.cell_px).astype(int), gc.GRID - 1))
        if any(c == cell or np.hypot(*(center - p)) < (side + s) / np.sqrt(2) for p, s, c in placed):
            continue
        placed.append((center, side, cell))

    faces = []
    for center, side, _ in placed:
        params = place_face(tensor, random_face(rng), center, side)
        landmarks = mm.project_landmarks(tensor, params)
        faces.append(SceneFace(params, landmarks, face_box(landmarks)))

    truth, grid = codec.encode_gt([codec.detection_from_face(f.params, f.box, f.landmarks) for f in faces])
    return Scene(faces, truth, grid, size)


def _fit_with_restarts(tensor, landmarks, cfg):
    best = fitting.fit_params(tensor, landmarks, cfg=cfg)
    if best.final_rmse <= REFIT_RMSE:
        return best
    base = fitting.default_init(tensor, landmarks)
    for yaw in (-30, 30):
        for pitch in (-20, 0, 20):
            init = base.copy()
            init.quat = mm.quat_multiply(mm.quat_from_axis_angle((0, 1, 0), np.radians(yaw)),
                                         mm.quat_from_axis_angle((1, 0, 0), np.radians(pitch)))
            result = fitting.fit_params(tensor, landmarks, init, cfg)
            if result.final_rmse < best.final_rmse:
                best = result
            if best.final_rmse <= REFIT_RMSE:
                return best
    return best


def weak_gt_generate(scene_landmarks, tensor: mm.FaceTensor | None = None, cfg: fitting.FitConfig | None = None,
                     codec: gc.GridCodec | None = None, image_size: float = 288.0) -> WeakGroundTruth:
    """Fit each face's landmarks independently and encode the fits as grid targets.

    A collision of two faces in one slot is raised, never dropped.
    """
    if codec is None:
        if tensor is None:
            raise InvalidInputError("either a tensor or a codec is required")
        codec = gc.GridCodec(tensor, image_size)
    cfg = cfg or fitting.FitConfig()
    fits, boxes = [], []
    for lm in scene_landmarks:
        lm = mm.check_landmarks(lm)
        result = _fit_with_restarts(codec.tensor, lm, cfg)
        fits.append(result)
        boxes.append(codec.detection_from_face(result.params, face_box(lm), lm))
    truth, grid = codec.encode_gt(boxes)
    return WeakGroundTruth(truth, grid, fits)
