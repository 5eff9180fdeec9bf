"""Reduced multilinear face model and weak-perspective landmark projection.

The face tensor has shape ``(204, 50, 47)``: 68 landmark vertices times 3
coordinates, 50 identity bases and 47 expression blendshapes, where
blendshape 0 is the neutral face. Expression weights are stored as the 46
free coefficients of blendshapes 1..46; the neutral weight is derived so that
the full 47-vector sums to one.
"""

from __future__ import annotations

import dataclasses
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

N_LANDMARKS = 68
N_ID = 50
N_EXP = 47
N_EXP_FREE = N_EXP - 1
TENSOR_SHAPE = (3 * N_LANDMARKS, N_ID, N_EXP)

W_ID_MAX = 3.0
QUAT_TOL = 1e-9

_TENSOR_MAGIC = b"FT3D"


@dataclasses.dataclass(frozen=True)
class FaceTensor:
    """Reduced face tensor indexed by (vertex-coordinate, identity, expression)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.shape != TENSOR_SHAPE:
            raise InvalidInputError(f"face tensor must have shape {TENSOR_SHAPE}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("face tensor contains non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def neutral_mean(self) -> np.ndarray:
        """Mean neutral face (identity basis 0, blendshape 0) as a 68x3 array."""
        return self.values[:, 0, 0].reshape(N_LANDMARKS, 3)

    @property
    def reference_width(self) -> float:
        """Horizontal extent of the mean neutral face in model units."""
        x = self.neutral_mean[:, 0]
        return float(x.max() - x.min())

    def save(self, path) -> None:
        header = _TENSOR_MAGIC + struct.pack("<3I", *TENSOR_SHAPE)
        Path(path).write_bytes(header + self.values.astype("<f8").tobytes(order="C"))

    @classmethod
    def load(cls, path) -> "FaceTensor":
        return cls.from_bytes(Path(path).read_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "FaceTensor":
        if blob[:4] != _TENSOR_MAGIC:
            raise InvalidInputError("not a face tensor blob (bad magic)")
        dims = struct.unpack("<3I", blob[4:16])
        if dims != TENSOR_SHAPE:
            raise InvalidInputError(f"face tensor blob has dims {dims}, expected {TENSOR_SHAPE}")
        count = int(np.prod(dims))
        payload = blob[16:]
        if len(payload) != 8 * count:
            raise InvalidInputError("face tensor blob is truncated or has trailing bytes")
        return cls(np.frombuffer(payload, dtype="<f8").reshape(dims))


@dataclasses.dataclass
class FaceParams:
    """Identity, expression and weak-perspective pose of one face.

    ``t[2]`` is always zero: depth translation has no effect on the
    projection and is therefore not estimated.
    """

    w_id: np.ndarray
    w_free: np.ndarray
    quat: np.ndarray
    t: np.ndarray
    f: float

    def __post_init__(self):
        self.w_id = np.asarray(self.w_id, dtype=np.float64).copy()
        self.w_free = np.asarray(self.w_free, dtype=np.float64).copy()
        self.quat = np.asarray(self.quat, dtype=np.float64).copy()
        self.t = np.asarray(self.t, dtype=np.float64).copy()
        if self.t.shape == (2,):
            self.t = np.append(self.t, 0.0)
        self.f = float(self.f)
        if self.w_id.shape != (N_ID,):
            raise InvalidInputError(f"w_id must have length {N_ID}, got {self.w_id.shape}")
        if self.w_free.shape != (N_EXP_FREE,):
            raise InvalidInputError(f"w_exp must have length {N_EXP_FREE}, got {self.w_free.shape}")
        if self.quat.shape != (4,):
            raise InvalidInputError("quat must have 4 components (w, x, y, z)")
        if self.t.shape != (3,):
            raise InvalidInputError("t must have 3 components")

    @classmethod
    def neutral(cls, f: float = 1.0, t=(0.0, 0.0)) -> "FaceParams":
        """Mean identity, neutral expression, no rotation."""
        w_id = np.zeros(N_ID)
        w_id[0] = 1.0
        return cls(w_id, np.zeros(N_EXP_FREE), np.array([1.0, 0.0, 0.0, 0.0]), np.asarray(t), f)

    @property
    def w_exp_full(self) -> np.ndarray:
        return expression_full(self.w_free)

    def copy(self) -> "FaceParams":
        return FaceParams(self.w_id, self.w_free, self.quat, self.t, self.f)

    def check(self, w_id_bound: float = W_ID_MAX) -> None:
        """Raise InvalidInputError unless every parameter invariant holds."""
        arrays = (self.w_id, self.w_free, self.quat, self.t)
        if not all(np.all(np.isfinite(a)) for a in arrays) or not np.isfinite(self.f):
            raise InvalidInputError("face parameters contain non-finite values")
        if np.any(np.abs(self.w_id) > w_id_bound + 1e-12):
            raise InvalidInputError(f"identity weights exceed bound {w_id_bound}")
        check_expression(self.w_free)
        if abs(np.linalg.norm(self.quat) - 1.0) > QUAT_TOL:
            raise InvalidInputError("quaternion is not unit norm")
        if self.f <= 0:
            raise InvalidInputError("focal must be positive")
        if self.t[2] != 0.0:
            raise InvalidInputError("t_z must be 0 under weak perspective")

    def to_dict(self) -> dict:
        return {
            "w_id": self.w_id.tolist(),
            "w_exp": self.w_free.tolist(),
            "quat": self.quat.tolist(),
            "t": self.t.tolist(),
            "f": self.f,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FaceParams":
        try:
            f = d["f"]
            if isinstance(f, (list, tuple)):
                (f,) = f
            return cls(d["w_id"], d["w_exp"], d["quat"], d["t"], f)
        except KeyError as exc:
            raise InvalidInputError(f"face params missing field {exc}") from None


def expression_full(w_free) -> np.ndarray:
    """Prepend the derived neutral weight so the 47 weights sum to one."""
    w_free = np.asarray(w_free, dtype=np.float64)
    return np.concatenate(([1.0 - w_free.sum()], w_free))


def check_expression(w_free, tol: float = 1e-12) -> None:
    w_free = np.asarray(w_free)
    if np.any(w_free < -tol) or np.any(w_free > 1 + tol):
        raise InvalidInputError("expression weights must lie in [0, 1]")
    if w_free.sum() > 1 + tol:
        raise InvalidInputError("expression weights must sum to at most 1")


def project_expression(w_free) -> np.ndarray:
    """Clamp to [0, 1] and rescale onto the simplex face if the sum exceeds one."""
    w = np.clip(np.asarray(w_free, dtype=np.float64), 0.0, 1.0)
    s = w.sum()
    if s > 1.0:
        w = w / s
    return w


def canonical_quat(q) -> np.ndarray:
    """Normalize and flip sign so that w >= 0."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0:
        raise InvalidInputError("quaternion has zero or non-finite norm")
    q = q / n
    if q[0] < 0:
        q = -q
    return q


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a*b for (w, x, y, z) quaternions."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate(([np.cos(angle / 2)], np.sin(angle / 2) * axis))


def quat_angle(a, b) -> float:
    """Rotation angle (radians) between two orientations."""
    d = abs(float(np.dot(canonical_quat(a), canonical_quat(b))))
    return 2.0 * np.arccos(min(1.0, d))


def _unit_quat_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a (w, x, y, z) quaternion; the input is normalized first."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0:
        raise InvalidInputError("cannot build a rotation from a zero-norm quaternion")
    return _unit_quat_matrix(q / n)


def quat_matrix_grad(q) -> np.ndarray:
    """Derivatives of ``quat_to_matrix(q)`` w.r.t. the ambient components of q.

    Returns an array of shape (4, 3, 3). Because the input is normalized, the
    radial direction has zero derivative.
    """
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    w, x, y, z = q / n
    d_unit = 2.0 * np.array([
        [[0, -z, y], [z, 0, -x], [-y, x, 0]],
        [[0, y, z], [y, -2 * x, -w], [z, w, -2 * x]],
        [[-2 * y, x, w], [x, 0, z], [-w, z, -2 * y]],
        [[-2 * z, -w, x], [w, -2 * z, y], [x, y, 0]],
    ])
    u = q / n
    proj = (np.eye(4) - np.outer(u, u)) / n
    return np.einsum("bij,ba->aij", d_unit, proj)


def synth_landmark_mesh(tensor: FaceTensor, w_id, w_exp_full) -> np.ndarray:
    """Contract the tensor with identity and full expression weights -> 68x3."""
    w_id = np.asarray(w_id, dtype=np.float64)
    w_exp_full = np.asarray(w_exp_full, dtype=np.float64)
    if w_id.shape != (N_ID,) or w_exp_full.shape != (N_EXP,):
        raise InvalidInputError("weight vectors do not match the tensor dimensions")
    return (tensor.values @ w_exp_full @ w_id).reshape(N_LANDMARKS, 3)


def mesh_for(tensor: FaceTensor, params: FaceParams) -> np.ndarray:
    return synth_landmark_mesh(tensor, params.w_id, params.w_exp_full)


def project_points(points, quat, t, f) -> np.ndarray:
    """Weak-perspective projection of an (n, 3) point set."""
    R = quat_to_matrix(quat)
    cam = np.asarray(points) @ R.T + np.asarray(t)
    return f * cam[:, :2]


def project_landmarks(tensor: FaceTensor, params: FaceParams) -> np.ndarray:
    """68x2 image-plane landmarks of a face."""
    return project_points(mesh_for(tensor, params), params.quat, params.t, params.f)


def check_landmarks(points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.shape != (N_LANDMARKS, 2):
        raise InvalidInputError(f"landmarks must be {N_LANDMARKS}x2, got {points.shape}")
    if not np.all(np.isfinite(points)):
        raise InvalidInputError("landmarks contain non-finite values")
    return points


# A schematic 68-point face in model units (x right, y down, z towards camera).
def _template_face() -> np.ndarray:
    pts = []
    # jaw line 0-16
    for a in np.linspace(np.pi * 0.05, np.pi * 0.95, 17):
        pts.append((-62 * np.cos(a), 10 + 62 * np.sin(a), -25 + 25 * np.sin(a)))
    # eyebrows 17-26
    for side in (-1, 1):
        xs = np.linspace(18, 52, 5)[::side]
        for x in xs:
            pts.append((side * x, -32 - 6 * np.sin((x - 18) / 34 * np.pi), 8))
    # nose bridge 27-30, nostrils 31-35
    for k in range(4):
        pts.append((0.0, -18 + 9 * k, 14 + 5 * k))
    for x in np.linspace(-12, 12, 5):
        pts.append((x, 22 - 2 * np.cos(x / 12 * np.pi / 2), 20 - abs(x) * 0.5))
    # eyes 36-47
    for side in (-1, 1):
        cx = side * 32
        for a in np.linspace(0, 2 * np.pi, 6, endpoint=False):
            pts.append((cx - side * 11 * np.cos(a), -15 - 5 * np.sin(a), 6))
    # outer lip 48-59, inner lip 60-67
    for a in np.linspace(0, 2 * np.pi, 12, endpoint=False):
        pts.append((-26 * np.cos(a), 45 + 11 * np.sin(a), 12 - 3 * abs(np.cos(a))))
    for a in np.linspace(0, 2 * np.pi, 8, endpoint=False):
        pts.append((-18 * np.cos(a), 45 + 4 * np.sin(a), 12))
    return np.array(pts, dtype=np.float64)


def generate_synthetic_tensor(seed: int) -> FaceTensor:
    """Deterministic stand-in for a real reduced face tensor.

    Identity basis 0 is a jittered, centered template face; basis ``i`` carries
    random deformations scaled by ``1 / (1 + i)``. Each blendshape ``j >= 1``
    adds a bounded offset (at most 25 model units per coordinate) that also
    shrinks with the identity index.
    """
    rng = np.random.default_rng(seed)
    mean = _template_face() + rng.uniform(-2.0, 2.0, size=(N_LANDMARKS, 3))
    mean -= mean.mean(axis=0)

    id_bases = np.empty((N_LANDMARKS, 3, N_ID))
    id_bases[..., 0] = mean
    id_bases[..., 1:] = rng.uniform(-20.0, 20.0, size=(N_LANDMARKS, 3, N_ID - 1))
    scale = 1.0 / (1.0 + np.arange(N_ID))
    id_bases[..., 1:] *= scale[1:]

    shared = rng.uniform(-20.0, 20.0, size=(N_LANDMARKS, 3, 1, N_EXP_FREE))
    specific = rng.uniform(-5.0, 5.0, size=(N_LANDMARKS, 3, N_ID, N_EXP_FREE))
    offsets = (shared + specific) * scale[None, None, :, None]

    values = np.empty((N_LANDMARKS, 3, N_ID, N_EXP))
    values[..., 0] = id_bases
    values[..., 1:] = id_bases[..., None] + offsets
    return FaceTensor(values.reshape(TENSOR_SHAPE))
