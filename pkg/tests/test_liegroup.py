import math

import numpy as np
import pytest
from scipy.linalg import expm

from anchorloc.liegroup import (
    DegenerateRotationError,
    FrameMismatchError,
    Pose,
    Rotation3,
    Sim3Transform,
    Twist,
    geodesic_angle,
    pose_from_values,
    pose_to_values,
    rot6d_to_rotation,
    se3_exp,
    se3_log,
    se3_right_jacobian_inverse,
    sim3_apply,
    sim3_from_values,
    sim3_to_values,
    skew,
    so3_exp,
    so3_log,
)


def oracle_so3_exp(phi):
    """Independent rotation exponential via the dense matrix exponential."""
    return expm(skew(np.asarray(phi, dtype=float)))


class TestSo3:
    def test_zero_is_identity(self):
        assert np.allclose(so3_exp([0, 0, 0]).m, np.eye(3))

    def test_pi_about_x(self):
        r = so3_exp([math.pi, 0, 0])
        assert np.allclose(r.m, np.diag([1.0, -1.0, -1.0]), atol=1e-12)
        assert np.allclose(r.m, oracle_so3_exp([math.pi, 0, 0]), atol=1e-9)

    def test_quarter_turn_about_z_maps_x_to_y(self):
        r = so3_exp([0, 0, math.pi / 2])
        assert np.allclose(r.apply([1.0, 0, 0]), [0, 1.0, 0], atol=1e-12)
        assert np.allclose(r.m, oracle_so3_exp([0, 0, math.pi / 2]), atol=1e-9)

    def test_matches_matrix_exponential(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            phi = rng.normal(size=3)
            phi *= rng.uniform(0, math.pi - 0.01) / np.linalg.norm(phi)
            assert np.allclose(so3_exp(phi).m, oracle_so3_exp(phi), atol=1e-9)

    def test_log_identity(self):
        assert np.allclose(so3_log(Rotation3.identity()), 0.0)

    def test_log_near_pi_diagonal(self):
        w = so3_log(Rotation3(np.diag([1.0, -1.0, -1.0])))
        assert np.allclose(w, [math.pi, 0, 0], atol=1e-12)

    def test_roundtrip_random(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            w = rng.normal(size=3)
            w *= rng.uniform(1e-6, math.pi - 0.01) / np.linalg.norm(w)
            assert np.allclose(so3_log(so3_exp(w)), w, atol=1e-9)

    def test_roundtrip_near_pi(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            w = rng.normal(size=3)
            w *= (math.pi - 1e-3) / np.linalg.norm(w)
            assert np.allclose(so3_log(so3_exp(w)), w, atol=1e-9)

    def test_tiny_angle_taylor_branch(self):
        w = np.array([1e-10, -2e-10, 5e-11])
        assert np.allclose(so3_log(so3_exp(w)), w, atol=1e-15)


class TestSe3:
    def test_zero_twist_is_identity(self):
        t = se3_exp(np.zeros(6), "a", "b")
        assert np.allclose(t.matrix(), np.eye(4))

    def test_pure_translation(self):
        t = se3_exp([1.0, -2.0, 3.0, 0, 0, 0], "a", "b")
        assert np.allclose(t.rotation.m, np.eye(3))
        assert np.allclose(t.translation, [1.0, -2.0, 3.0])

    def test_roundtrip_seeded(self):
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(1000):
            xi = rng.normal(size=6)
            n = np.linalg.norm(xi[3:])
            if n > math.pi - 1e-6:
                xi[3:] *= (math.pi - 0.01) / n
            back = se3_log(se3_exp(xi)).v
            worst = max(worst, float(np.abs(back - xi).max()))
        assert worst < 1e-9

    def test_exp_matches_matrix_exponential(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            xi = rng.normal(size=6) * 0.7
            hat = np.zeros((4, 4))
            hat[:3, :3] = skew(xi[3:])
            hat[:3, 3] = xi[:3]
            assert np.allclose(se3_exp(xi).matrix(), expm(hat), atol=1e-9)

    def test_compose_checks_frames(self):
        t_ab = Pose.identity("a")
        t_cb = Pose(Rotation3.identity(), np.zeros(3), "c", "b")
        with pytest.raises(FrameMismatchError):
            t_ab.compose(t_cb)

    def test_compose_right_to_left(self):
        rng = np.random.default_rng(2)
        t_ab = se3_exp(rng.normal(size=6), "a", "b")
        t_ca = se3_exp(rng.normal(size=6), "c", "a")
        t_cb = t_ab @ t_ca
        assert t_cb.frame_from == "c" and t_cb.frame_to == "b"
        assert np.allclose(t_cb.matrix(), t_ab.matrix() @ t_ca.matrix())

    def test_inverse(self):
        t = se3_exp([1, 2, 3, 0.3, -0.2, 0.1], "a", "b")
        back = t.inverse() @ t
        assert np.allclose(back.matrix(), np.eye(4), atol=1e-12)
        assert back.frame_from == "a" and back.frame_to == "a"

    def test_right_jacobian_inverse_matches_numeric(self):
        rng = np.random.default_rng(9)
        eps = 1e-6
        for _ in range(20):
            xi = rng.normal(size=6) * 0.8
            t = se3_exp(xi, "a", "a")
            num = np.zeros((6, 6))
            for k in range(6):
                d = np.zeros(6)
                d[k] = eps
                lp = se3_log(t @ se3_exp(d, "a", "a")).v
                lm = se3_log(t @ se3_exp(-d, "a", "a")).v
                num[:, k] = (lp - lm) / (2 * eps)
            assert np.allclose(se3_right_jacobian_inverse(xi), num, atol=1e-7)


class TestSim3:
    def test_identity_leaves_pose_unchanged(self):
        t = se3_exp([1, 2, 3, 0.1, 0.2, 0.3], "cam5", "cam0")
        out = sim3_apply(Sim3Transform.identity(), t)
        assert np.allclose(out.matrix(), t.matrix())
        assert out.frame_to == "world"

    def test_scale_acts_on_translation_only(self):
        a = Sim3Transform(2.0, Rotation3.identity(), np.zeros(3))
        t = Pose(Rotation3.identity(), np.array([0.0, 0.0, 1.0]), "cam1", "cam0")
        out = sim3_apply(a, t)
        assert np.allclose(out.translation, [0, 0, 2.0])
        assert np.allclose(out.rotation.m, np.eye(3))

    def test_against_homogeneous_matrix_oracle(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            s = rng.uniform(0.5, 2.0)
            ra = so3_exp(rng.normal(size=3))
            ta = rng.normal(size=3)
            a = Sim3Transform(s, ra, ta)
            t = se3_exp(rng.normal(size=6), "cam3", "cam0")
            out = sim3_apply(a, t)
            # Oracle: 4x4 product with sR embedded, then strip the scale
            # back out of the rotation block.
            m_a = np.eye(4)
            m_a[:3, :3] = s * ra.m
            m_a[:3, 3] = ta
            m = m_a @ t.matrix()
            assert np.allclose(out.rotation.m, m[:3, :3] / s, atol=1e-12)
            assert np.allclose(out.translation, m[:3, 3], atol=1e-12)

    def test_frame_mismatch_rejected(self):
        a = Sim3Transform.identity("cam0", "world")
        t = Pose.identity("somewhere")
        with pytest.raises(FrameMismatchError):
            sim3_apply(a, t)

    def test_scale_must_be_positive(self):
        with pytest.raises(ValueError):
            Sim3Transform(0.0, Rotation3.identity(), np.zeros(3))

    def test_compose_and_inverse(self):
        rng = np.random.default_rng(21)
        a = Sim3Transform(1.7, so3_exp(rng.normal(size=3)), rng.normal(size=3), "x", "y")
        pts = rng.normal(size=(5, 3))
        assert np.allclose(a.inverse().apply(a.apply(pts)), pts, atol=1e-12)
        b = Sim3Transform(0.4, so3_exp(rng.normal(size=3)), rng.normal(size=3), "w", "x")
        ab = a.compose(b)
        assert np.allclose(ab.apply(pts), a.apply(b.apply(pts)), atol=1e-12)


class TestRot6d:
    def test_canonical_identity(self):
        r = rot6d_to_rotation([1, 0, 0, 0, 1, 0])
        assert np.allclose(r.m, np.eye(3))

    def test_scale_and_shear_removed(self):
        r = rot6d_to_rotation([2, 0, 0, 1, 1, 0])
        assert np.allclose(r.m, np.eye(3), atol=1e-12)

    def test_random_inputs_give_valid_rotations(self):
        rng = np.random.default_rng(6)
        for _ in range(500):
            r6 = rng.normal(size=6)
            m = rot6d_to_rotation(r6).m
            assert np.linalg.norm(m.T @ m - np.eye(3)) < 1e-9
            assert abs(np.linalg.det(m) - 1.0) < 1e-9

    def test_negation_guard_never_triggered_by_construction(self):
        # The third column must equal cross(col1, col2) exactly; the
        # det < 0 branch would flip its sign.
        rng = np.random.default_rng(8)
        for _ in range(500):
            m = rot6d_to_rotation(rng.normal(size=6)).m
            assert np.allclose(m[:, 2], np.cross(m[:, 0], m[:, 1]), atol=1e-12)

    def test_degenerate_inputs_rejected(self):
        with pytest.raises(DegenerateRotationError):
            rot6d_to_rotation(np.zeros(6))
        with pytest.raises(DegenerateRotationError):
            rot6d_to_rotation([1, 0, 0, 2, 0, 0])


class TestGeodesicAngle:
    def test_identical_rotations_hit_clamp_floor(self):
        r = so3_exp([0.3, -0.1, 0.8])
        assert geodesic_angle(r, r) == pytest.approx(math.acos(1 - 1e-7), abs=1e-12)
        # acos(1 - eps) ~ sqrt(2 eps)
        assert geodesic_angle(r, r) == pytest.approx(math.sqrt(2e-7), rel=1e-3)

    def test_opposite_rotation_hits_upper_clamp(self):
        a = Rotation3.identity()
        b = so3_exp([math.pi, 0, 0])
        assert geodesic_angle(a, b) == pytest.approx(math.acos(-1 + 1e-7), abs=1e-12)

    def test_quarter_turn(self):
        a = Rotation3.identity()
        b = so3_exp([0, 0, math.pi / 2])
        assert geodesic_angle(a, b) == pytest.approx(math.pi / 2, abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            a = so3_exp(rng.normal(size=3))
            b = so3_exp(rng.normal(size=3))
            assert geodesic_angle(a, b) == pytest.approx(geodesic_angle(b, a), abs=1e-14)


class TestSerialization:
    def test_pose_roundtrip_is_12_numbers(self):
        t = se3_exp([1, 2, 3, 0.1, 0.2, 0.3], "cam7", "world")
        vals = pose_to_values(t)
        assert len(vals) == 12
        back = pose_from_values(vals, "cam7", "world")
        assert np.allclose(back.matrix(), t.matrix())

    def test_sim3_roundtrip_adds_leading_scale(self):
        a = Sim3Transform(1.5, so3_exp([0.2, 0, -0.4]), np.array([4.0, 5.0, 6.0]))
        vals = sim3_to_values(a)
        assert len(vals) == 13
        assert vals[0] == 1.5
        back = sim3_from_values(vals)
        assert back.scale == a.scale
        assert np.allclose(back.rotation.m, a.rotation.m)
        assert np.allclose(back.translation, a.translation)


class TestTwist:
    def test_field_order_rho_then_phi(self):
        tw = Twist(np.arange(6.0))
        assert np.allclose(tw.rho, [0, 1, 2])
        assert np.allclose(tw.phi, [3, 4, 5])

    def test_rotation_invariants_enforced(self):
        with pytest.raises(ValueError):
            Rotation3(np.eye(3) * 1.01)
        with pytest.raises(ValueError):
            Rotation3(np.diag([1.0, 1.0, -1.0]))
