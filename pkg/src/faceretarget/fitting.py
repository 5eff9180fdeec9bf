"""Recover face parameters from 2D landmarks by constrained Levenberg-Marquardt.

Residuals are interleaved ``(x, y)`` differences ``projected - observed`` over
the 68 landmarks. The public :func:`jacobian` is taken w.r.t. the model-unit
parameterization (columns: 50 identity, 46 expression, 4 ambient quaternion,
``t_x``, ``t_y``, focal, and a zero ``t_z`` column).

Internally the solver works with a pixel offset ``p = f * t_xy`` instead of
``t_xy``. With that chart, shifting or scaling the observations maps the whole
iteration onto itself, so fits are exactly equivariant to 2D translation and
scale. Damping is diagonal per parameter except within the quaternion and
offset blocks, where it is isotropic so in-plane rotations are handled
equivariantly as well.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import morphable_model as mm
from .errors import InvalidInputError

N_RESIDUALS = 2 * mm.N_LANDMARKS
N_JAC_COLS = mm.N_ID + mm.N_EXP_FREE + 4 + 2 + 1 + 1

# column layout of the public jacobian
ID_COLS = slice(0, 50)
EXP_COLS = slice(50, 96)
QUAT_COLS = slice(96, 100)
T_COLS = slice(100, 102)
F_COL = 102
TZ_COL = 103

_N_INTERNAL = N_JAC_COLS - 1
_F_MIN = 1e-6
_LAMBDA_MIN = 1e-12
_LAMBDA_MAX = 1e16


@dataclasses.dataclass
class FitConfig:
    max_iters: int = 200
    damping_init: float = 1e-3
    tol_step: float = 1e-10
    tol_residual: float = 1e-12
    w_id_bound: float = mm.W_ID_MAX

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be at least 1")
        if min(self.damping_init, self.tol_step, self.tol_residual, self.w_id_bound) <= 0:
            raise InvalidInputError("damping, tolerances and bounds must be positive")


@dataclasses.dataclass
class FitResult:
    params: mm.FaceParams
    final_rmse: float
    iterations: int
    converged: bool
    cost_history: list = dataclasses.field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "final_rmse": self.final_rmse,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def residuals(tensor: mm.FaceTensor, params: mm.FaceParams, observed) -> np.ndarray:
    observed = np.asarray(observed, dtype=np.float64)
    return (mm.project_landmarks(tensor, params) - observed).ravel()


def landmark_rmse(res: np.ndarray) -> float:
    return float(np.sqrt(np.dot(res, res) / mm.N_LANDMARKS))


class _Partials:
    """Shared pieces of the residual derivatives at one parameter point."""

    def __init__(self, tensor, w_id, w_exp_full, quat):
        T = tensor.values.reshape(mm.N_LANDMARKS, 3, mm.N_ID, mm.N_EXP)
        per_id = T @ w_exp_full  # (68, 3, 50)
        per_exp = np.einsum("vcij,i->vcj", T, w_id)  # (68, 3, 47)
        self.mesh = per_id @ w_id
        self.R = mm.quat_to_matrix(quat)
        Rxy = self.R[:2]
        self.rot_xy = self.mesh @ Rxy.T  # (68, 2)
        self.d_id = np.einsum("rc,vci->vri", Rxy, per_id).reshape(N_RESIDUALS, mm.N_ID)
        d_mesh_exp = per_exp[..., 1:] - per_exp[..., :1]
        self.d_exp = np.einsum("rc,vcj->vrj", Rxy, d_mesh_exp).reshape(N_RESIDUALS, mm.N_EXP_FREE)
        dR = mm.quat_matrix_grad(quat)[:, :2, :]  # (4, 2, 3)
        self.d_quat = np.einsum("arc,vc->vra", dR, self.mesh).reshape(N_RESIDUALS, 4)


def jacobian(tensor: mm.FaceTensor, params: mm.FaceParams) -> np.ndarray:
    """136x104 derivative of :func:`residuals` w.r.t. the model parameters."""
    P = _Partials(tensor, params.w_id, params.w_exp_full, params.quat)
    f = params.f
    J = np.zeros((N_RESIDUALS, N_JAC_COLS))
    J[:, ID_COLS] = f * P.d_id
    J[:, EXP_COLS] = f * P.d_exp
    J[:, QUAT_COLS] = f * P.d_quat
    J[0::2, T_COLS.start] = f
    J[1::2, T_COLS.start + 1] = f
    # same arithmetic path as the projection, so the column is exact
    J[:, F_COL] = mm.project_points(mm.mesh_for(tensor, params), params.quat, params.t, 1.0).ravel()
    return J


def default_init(tensor: mm.FaceTensor, observed) -> mm.FaceParams:
    """Mean neutral face, no rotation, scale and offset from the landmark bounds."""
    observed = mm.check_landmarks(observed)
    width = float(np.ptp(observed[:, 0]))
    f = max(width / tensor.reference_width, _F_MIN)
    return mm.FaceParams.neutral(f=f, t=observed.mean(axis=0) / f)


# --- internal chart: theta = [w_id, w_free, quat, p_x, p_y, f] with p = f * t_xy


def _pack(params: mm.FaceParams) -> np.ndarray:
    return np.concatenate((params.w_id, params.w_free, params.quat, params.f * params.t[:2], [params.f]))


def _unpack(theta: np.ndarray) -> mm.FaceParams:
    f = theta[102]
    return mm.FaceParams(theta[:50], theta[50:96], theta[96:100], theta[100:102] / f, f)


def _project_feasible(theta: np.ndarray, w_id_bound: float) -> np.ndarray:
    theta = theta.copy()
    theta[:50] = np.clip(theta[:50], -w_id_bound, w_id_bound)
    theta[50:96] = mm.project_expression(theta[50:96])
    q = theta[96:100]
    n = np.linalg.norm(q)
    theta[96:100] = q / n if n > 0 and np.isfinite(n) else (1.0, 0.0, 0.0, 0.0)
    theta[102] = max(theta[102], _F_MIN)
    return theta


def _residual_internal(tensor, theta, observed):
    X = mm.synth_landmark_mesh(tensor, theta[:50], mm.expression_full(theta[50:96]))
    R = mm.quat_to_matrix(theta[96:100])
    return (theta[102] * (X @ R[:2].T) + theta[100:102] - observed).ravel()


def _jacobian_internal(tensor, theta):
    P = _Partials(tensor, theta[:50], mm.expression_full(theta[50:96]), theta[96:100])
    f = theta[102]
    J = np.empty((N_RESIDUALS, _N_INTERNAL))
    J[:, :50] = f * P.d_id
    J[:, 50:96] = f * P.d_exp
    J[:, 96:100] = f * P.d_quat
    J[:, 100:102] = np.tile(np.eye(2), (mm.N_LANDMARKS, 1))
    J[:, 102] = P.rot_xy.ravel()
    return J


def _damping(diag: np.ndarray) -> np.ndarray:
    D = diag.copy()
    D[96:100] = diag[96:100].mean()
    D[100:102] = diag[100:102].mean()
    return np.maximum(D, 1e-14 * D.max())


def _frozen(theta: np.ndarray, g: np.ndarray, w_id_bound: float) -> np.ndarray:
    """Variables sitting on a bound whose descent direction points outward."""
    frozen = np.zeros(_N_INTERNAL, dtype=bool)
    w_id = theta[:50]
    frozen[:50] = ((w_id >= w_id_bound) & (g[:50] < 0)) | ((w_id <= -w_id_bound) & (g[:50] > 0))
    w_free = theta[50:96]
    frozen[50:96] = (w_free <= 0.0) & (g[50:96] > 0)
    return frozen


def _slide_on_simplex(theta: np.ndarray, step: np.ndarray, free: np.ndarray) -> None:
    """Keep the expression step tangent to the sum face when that face is active."""
    if theta[50:96].sum() < 1.0 - 1e-12:
        return
    exp_free = free[50:96]
    moving = step[50:96][exp_free]
    if exp_free.any() and moving.sum() > 0:
        step[50:96][exp_free] = moving - moving.mean()


def fit_params(tensor: mm.FaceTensor, observed, init: mm.FaceParams | None = None,
               cfg: FitConfig | None = None) -> FitResult:
    """Fit identity, expression and pose to observed 68x2 landmarks.

    After every trial step the parameters are projected back onto the
    feasible set: expression weights onto the simplex, identity weights into
    the box bound, the quaternion onto the unit sphere and focal above 1e-6.
    Only steps that lower the residual are accepted.
    """
    cfg = cfg or FitConfig()
    observed = np.asarray(observed, dtype=np.float64)
    if observed.shape != (mm.N_LANDMARKS, 2):
        raise InvalidInputError(f"observed landmarks must be 68x2, got {observed.shape}")
    if init is None:
        init = default_init(tensor, observed)
    theta = _pack(init)
    if not np.all(np.isfinite(theta)):
        raise InvalidInputError("initial parameters are not finite")
    theta = _project_feasible(theta, cfg.w_id_bound)

    r = _residual_internal(tensor, theta, observed)
    if not np.all(np.isfinite(r)):
        raise InvalidInputError("residual at the initial parameters is not finite")
    cost = float(r @ r)
    history = [cost]
    lam = cfg.damping_init
    converged = False
    iterations = 0

    while iterations < cfg.max_iters and not converged:
        iterations += 1
        if cost == 0.0:
            converged = True
            break
        J = _jacobian_internal(tensor, theta)
        A = J.T @ J
        g = J.T @ r
        D = _damping(np.diag(A))
        free = ~_frozen(theta, g, cfg.w_id_bound)
        A_free = A[np.ix_(free, free)]
        accepted = False
        while lam <= _LAMBDA_MAX:
            step = np.zeros(_N_INTERNAL)
            M = A_free + lam * np.diag(D[free])
            try:
                step[free] = np.linalg.solve(M, -g[free])
            except np.linalg.LinAlgError:
                step[free] = np.linalg.lstsq(M, -g[free], rcond=None)[0]
            _slide_on_simplex(theta, step, free)
            candidate = _project_feasible(theta + step, cfg.w_id_bound)
            r_new = _residual_internal(tensor, candidate, observed)
            cost_new = float(r_new @ r_new)
            small_step = float(step @ step) < cfg.tol_step
            if np.isfinite(cost_new) and cost_new < cost:
                small_drop = cost - cost_new <= cfg.tol_residual * cost
                theta, r, cost = candidate, r_new, cost_new
                history.append(cost)
                lam = max(lam / 10.0, _LAMBDA_MIN)
                accepted = True
                converged = small_step or small_drop
                break
            if small_step:
                converged = True
                break
            lam *= 10.0
        if not accepted and not converged:
            # damping exhausted without progress
            break

    params = _unpack(theta)
    params.quat = mm.canonical_quat(params.quat)
    return FitResult(params, landmark_rmse(r), iterations, converged, history)
