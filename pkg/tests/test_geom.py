"""Quaternion algebra, exp/log maps, and tangent perturbations."""

import numpy as np
import pytest

from orio import geom


def random_unit_quat(rng):
    return geom.quat_normalize(rng.standard_normal(4))


def test_quat_mul_matches_rotation_composition():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = random_unit_quat(rng), random_unit_quat(rng)
        R_ab = geom.quat_to_rot(geom.quat_mul(a, b))
        assert np.allclose(R_ab, geom.quat_to_rot(a) @ geom.quat_to_rot(b), atol=1e-12)


def test_rotation_orthonormal():
    rng = np.random.default_rng(1)
    for _ in range(20):
        R = geom.quat_to_rot(random_unit_quat(rng))
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert abs(np.linalg.det(R) - 1.0) <= 1e-12


def test_exp_log_roundtrip():
    # exact inverse only below the pi wrap-around
    rng = np.random.default_rng(2)
    for _ in range(100):
        v = rng.standard_normal(3)
        v *= rng.uniform(0, 3.0) / np.linalg.norm(v)
        back = geom.rotvec_from_quat(geom.quat_from_axis_angle(v))
        assert np.allclose(back, v, atol=1e-10)


def test_exp_log_rotation_equivalence_large_angle():
    rng = np.random.default_rng(4)
    for _ in range(50):
        v = rng.standard_normal(3) * 4.0
        q = geom.quat_from_axis_angle(v)
        q_back = geom.quat_from_axis_angle(geom.rotvec_from_quat(q))
        assert np.allclose(geom.quat_to_rot(q), geom.quat_to_rot(q_back), atol=1e-10)


def test_exp_map_small_angle():
    v = np.array([1e-9, -2e-9, 3e-10])
    q = geom.quat_from_axis_angle(v)
    assert abs(np.linalg.norm(q) - 1.0) <= 1e-15
    assert np.allclose(q[1:], 0.5 * v, atol=1e-18)


def test_apply_tangent_roundtrip():
    rng = np.random.default_rng(3)
    for _ in range(50):
        state = np.concatenate([rng.standard_normal(3), random_unit_quat(rng),
                                rng.standard_normal(3)])
        delta = rng.standard_normal(9) * 0.3
        perturbed = geom.apply_tangent(state, delta)
        assert np.allclose(geo_t := geom.tangent_between(state, perturbed), delta, atol=1e-10), geo_t


def test_tilt_cosine_geometry():
    assert geom.tilt_cosine(np.array([1.0, 0.0, 0.0, 0.0])) == pytest.approx(1.0)
    quarter_x = geom.quat_from_axis_angle(np.array([np.pi / 2, 0.0, 0.0]))
    assert geom.tilt_cosine(quarter_x) == pytest.approx(0.0, abs=1e-12)
    flip = geom.quat_from_axis_angle(np.array([np.pi, 0.0, 0.0]))
    assert geom.tilt_cosine(flip) == pytest.approx(-1.0)


def test_quat_check_unit_rejects():
    with pytest.raises(ValueError):
        geom.quat_check_unit(np.array([1.0, 0.1, 0.0, 0.0]))
