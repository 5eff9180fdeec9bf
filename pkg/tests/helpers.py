"""Shared random generators for the test suite."""

import numpy as np

from faceretarget import morphable_model as mm


def random_params(rng, f_range=(0.8, 1.5), t_range=50.0):
    w_id = rng.uniform(-0.5, 0.5, mm.N_ID)
    w_id[0] = rng.uniform(0.9, 1.1)
    w_free = np.zeros(mm.N_EXP_FREE)
    idx = rng.choice(mm.N_EXP_FREE, 6, replace=False)
    w_free[idx] = rng.uniform(0.02, 0.12, 6)
    q = mm.canonical_quat(np.concatenate(([1.0], rng.uniform(-0.2, 0.2, 3))))
    t = np.append(rng.uniform(-t_range, t_range, 2), 0.0)
    return mm.FaceParams(w_id, w_free, q, t, rng.uniform(*f_range))


def perturb(params, rng, max_angle_deg=10.0, weight=0.1, focal=1.2):
    """Rotation by at most ``max_angle_deg``, weights by +-``weight``, focal scaled."""
    axis = rng.normal(size=3)
    dq = mm.quat_from_axis_angle(axis, np.radians(rng.uniform(0, max_angle_deg)))
    out = params.copy()
    out.quat = mm.canonical_quat(mm.quat_multiply(dq, params.quat))
    out.w_id = params.w_id + rng.uniform(-weight, weight, mm.N_ID)
    out.w_free = mm.project_expression(params.w_free + rng.uniform(-weight, weight, mm.N_EXP_FREE))
    out.f = params.f * focal
    return out


def random_quat(rng):
    return mm.canonical_quat(rng.normal(size=4))


def random_simplex(rng, n=mm.N_EXP_FREE):
    """Random point with entries in [0, 1] and sum <= 1."""
    w = rng.dirichlet(np.ones(n + 1))
    return w[:n]


def rmse(a, b):
    return float(np.sqrt(np.mean(np.sum((np.asarray(a) - np.asarray(b)) ** 2, axis=1))))
