import numpy as np
import pytest

from faceretarget import fitting as ft
from faceretarget import morphable_model as mm
from faceretarget.errors import InvalidInputError
from helpers import perturb, random_params, rmse


def _loop_residual_norm(tensor, params, observed):
    v = tensor.values
    w_exp = mm.expression_full(params.w_free)
    R = mm.quat_to_matrix(params.quat)
    total = 0.0
    for k in range(68):
        X = [0.0, 0.0, 0.0]
        for c in range(3):
            for i in range(50):
                for j in range(47):
                    X[c] += v[3 * k + c, i, j] * params.w_id[i] * w_exp[j]
        for r in range(2):
            cam = sum(R[r, c] * X[c] for c in range(3)) + params.t[r]
            d = params.f * cam - observed[k][r]
            total += d * d
    return np.sqrt(total)


def test_residual_is_zero_on_own_projection(tensor, rng):
    p = random_params(rng)
    assert np.abs(ft.residuals(tensor, p, mm.project_landmarks(tensor, p))).max() < 1e-12


def test_residual_of_shifted_observation(tensor, rng):
    p = random_params(rng)
    p.f = 1.0
    obs = mm.project_landmarks(tensor, p) + [1.0, 0.0]
    r = ft.residuals(tensor, p, obs)
    assert r.shape == (136,)
    np.testing.assert_allclose(r[0::2], -1.0, atol=1e-12)
    np.testing.assert_allclose(r[1::2], 0.0, atol=1e-12)


def test_residual_norm_matches_loop(tensor, rng):
    p = random_params(rng)
    obs = rng.uniform(-100, 100, (68, 2))
    expected = _loop_residual_norm(tensor, p, obs)
    assert np.linalg.norm(ft.residuals(tensor, p, obs)) == pytest.approx(expected, rel=1e-12)


def _fd_jacobian(tensor, params, obs):
    """Central differences over the same column layout as ``jacobian``."""

    def res(theta):
        q = mm.FaceParams(theta[0:50], theta[50:96], theta[96:100],
                          [theta[100], theta[101], theta[103]], theta[102])
        return ft.residuals(tensor, q, obs)

    theta = np.concatenate((params.w_id, params.w_free, params.quat, params.t[:2], [params.f], [params.t[2]]))
    cols = []
    for a in range(theta.size):
        h = 1e-6 * max(1.0, abs(theta[a]))
        up, down = theta.copy(), theta.copy()
        up[a] += h
        down[a] -= h
        cols.append((res(up) - res(down)) / (2 * h))
    return np.stack(cols, axis=1)


def _max_column_error(J, fd):
    scale = np.maximum(np.linalg.norm(fd, axis=0), 1e-12)
    err = np.linalg.norm(J - fd, axis=0) / scale
    err[ft.TZ_COL] = np.linalg.norm(J[:, ft.TZ_COL] - fd[:, ft.TZ_COL])
    return err.max()


def test_jacobian_matches_finite_differences(tensor, rng):
    for _ in range(5):
        p = random_params(rng)
        obs = rng.uniform(-100, 100, (68, 2))
        J = ft.jacobian(tensor, p)
        assert J.shape == (136, 104)
        assert _max_column_error(J, _fd_jacobian(tensor, p, obs)) < 1e-5


def test_focal_column_is_the_unscaled_projection(tensor, rng):
    p = random_params(rng)
    J = ft.jacobian(tensor, p)
    unit_focal = p.copy()
    unit_focal.f = 1.0
    np.testing.assert_array_equal(J[:, ft.F_COL], mm.project_landmarks(tensor, unit_focal).ravel())


def test_depth_column_is_zero(tensor, rng):
    J = ft.jacobian(tensor, random_params(rng))
    assert np.all(J[:, ft.TZ_COL] == 0.0)


def test_fit_from_truth_is_a_fixed_point(tensor, rng):
    p = random_params(rng)
    res = ft.fit_params(tensor, mm.project_landmarks(tensor, p), p)
    assert res.converged
    assert res.iterations <= 1
    assert res.final_rmse <= 1e-10


def test_fit_recovers_landmarks_from_perturbed_init(tensor, rng):
    for _ in range(10):
        p = random_params(rng)
        obs = mm.project_landmarks(tensor, p)
        res = ft.fit_params(tensor, obs, perturb(p, rng))
        assert res.final_rmse <= 1e-6
        assert rmse(mm.project_landmarks(tensor, res.params), obs) <= 1e-6


def test_fit_from_default_init(tensor, rng):
    p = random_params(rng)
    res = ft.fit_params(tensor, mm.project_landmarks(tensor, p))
    assert res.converged
    assert res.final_rmse <= 1e-6


def test_fit_on_degenerate_observations(tensor):
    zeros = np.zeros((68, 2))
    res = ft.fit_params(tensor, zeros, mm.FaceParams.neutral(), ft.FitConfig(max_iters=50))
    p = res.params
    assert np.isfinite(res.final_rmse)
    assert all(np.all(np.isfinite(a)) for a in (p.w_id, p.w_free, p.quat, p.t)) and np.isfinite(p.f)
    p.check()


def test_accepted_costs_never_increase(tensor, rng):
    p = random_params(rng)
    res = ft.fit_params(tensor, mm.project_landmarks(tensor, p) + rng.normal(0, 0.5, (68, 2)), perturb(p, rng))
    assert np.all(np.diff(res.cost_history) <= 0)
    assert res.iterations <= ft.FitConfig().max_iters


def test_returned_params_are_feasible(tensor, rng):
    cfg = ft.FitConfig(w_id_bound=0.6)
    for _ in range(5):
        p = random_params(rng)
        obs = mm.project_landmarks(tensor, p) + rng.normal(0, 2.0, (68, 2))
        init = perturb(p, rng, weight=0.5)
        init.w_id = np.clip(init.w_id, -0.6, 0.6)
        res = ft.fit_params(tensor, obs, init, cfg)
        res.params.check(w_id_bound=0.6)
        assert res.params.quat[0] >= 0


def test_non_finite_init_rejected(tensor, rng):
    p = random_params(rng)
    p.w_id[3] = np.nan
    with pytest.raises(InvalidInputError):
        ft.fit_params(tensor, np.zeros((68, 2)), p)


def test_bad_config_rejected():
    with pytest.raises(InvalidInputError):
        ft.FitConfig(max_iters=0)
    with pytest.raises(InvalidInputError):
        ft.FitConfig(tol_step=0.0)


def _fit(tensor, obs, init):
    return ft.fit_params(tensor, obs, init).params


def test_translation_equivariance(tensor, rng):
    for _ in range(5):
        p = random_params(rng)
        obs = mm.project_landmarks(tensor, p)
        init = perturb(p, rng)
        a = _fit(tensor, obs, init)
        d = rng.uniform(-80, 80, 2)
        shifted = init.copy()
        shifted.t = init.t + np.append(d / init.f, 0.0)
        b = _fit(tensor, obs + d, shifted)
        np.testing.assert_allclose(b.w_id, a.w_id, atol=1e-6)
        np.testing.assert_allclose(b.w_free, a.w_free, atol=1e-6)
        np.testing.assert_allclose(b.quat, a.quat, atol=1e-6)
        assert b.f == pytest.approx(a.f, rel=1e-9)
        np.testing.assert_allclose(b.t[:2] - a.t[:2], d / a.f, atol=1e-6)


def test_scale_equivariance(tensor, rng):
    for _ in range(5):
        p = random_params(rng)
        obs = mm.project_landmarks(tensor, p)
        init = perturb(p, rng)
        a = _fit(tensor, obs, init)
        s = rng.uniform(0.5, 2.0)
        scaled = init.copy()
        scaled.f = init.f * s
        b = _fit(tensor, obs * s, scaled)
        np.testing.assert_allclose(b.w_id, a.w_id, atol=1e-6)
        np.testing.assert_allclose(b.w_free, a.w_free, atol=1e-6)
        np.testing.assert_allclose(b.quat, a.quat, atol=1e-6)
        assert b.f == pytest.approx(s * a.f, rel=1e-8)


def test_in_plane_rotation_composes_roll(tensor, rng):
    for _ in range(5):
        p = random_params(rng)
        obs = mm.project_landmarks(tensor, p)
        init = perturb(p, rng)
        a = _fit(tensor, obs, init)
        phi = rng.uniform(-0.6, 0.6)
        c, s = np.cos(phi), np.sin(phi)
        rot = np.array([[c, -s], [s, c]])
        roll = mm.quat_from_axis_angle((0, 0, 1), phi)
        turned = init.copy()
        turned.quat = mm.quat_multiply(roll, init.quat)
        turned.t = np.append(rot @ init.t[:2], 0.0)
        b = _fit(tensor, obs @ rot.T, turned)
        np.testing.assert_allclose(b.w_id, a.w_id, atol=1e-4)
        np.testing.assert_allclose(b.w_free, a.w_free, atol=1e-4)
        np.testing.assert_allclose(b.quat, mm.canonical_quat(mm.quat_multiply(roll, a.quat)), atol=1e-4)
