"""Rotations, rigid transforms and similarity transforms.

Conventions used throughout the package:

- A ``Pose`` labelled (frame_from=a, frame_to=b) maps coordinates of a
  point expressed in frame ``a`` into frame ``b``; composition is
  right-to-left, ``T_ab @ T_ca -> T_cb``, and the inner frame ids must
  match. Frame ids are checked at runtime because frame bugs are the
  dominant failure mode in pose pipelines.
- Twists are ordered (rho, phi): translational part first, rotational
  part (radians) second.
- A similarity transform acts on points as ``x -> s * R x + t``; its
  scale touches translations only, rotations stay orthonormal.

Small-angle branches switch to Taylor series below ANGLE_EPS, which sits
under the double-precision conditioning of the sin/cos ratios involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ANGLE_EPS",
    "GEODESIC_CLAMP_EPS",
    "DegenerateRotationError",
    "FrameMismatchError",
    "Pose",
    "Rotation3",
    "Sim3Transform",
    "Twist",
    "geodesic_angle",
    "pose_from_values",
    "pose_to_values",
    "rot6d_to_rotation",
    "se3_exp",
    "se3_log",
    "se3_right_jacobian_inverse",
    "sim3_apply",
    "sim3_from_values",
    "sim3_to_values",
    "skew",
    "so3_exp",
    "so3_left_jacobian",
    "so3_log",
    "unskew",
]

# Taylor-series cutoff for small rotation angles.
ANGLE_EPS = 1e-8

# Near-pi cutoff for the stable axis extraction in so3_log.
_PI_EPS = 1e-6

# Clamp margin for the arccos argument in geodesic_angle. Keeps the loss
# and its gradient finite at exact rotational agreement.
GEODESIC_CLAMP_EPS = 1e-7

# Orthonormality / determinant tolerance for Rotation3 validation.
_ROT_TOL = 1e-9


class FrameMismatchError(ValueError):
    """Composition attempted between poses whose inner frames differ."""


class DegenerateRotationError(ValueError):
    """6D rotation input with zero or parallel direction vectors."""


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric (hat) matrix of a 3-vector."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def unskew(s: np.ndarray) -> np.ndarray:
    """Inverse of :func:`skew` (vee)."""
    return np.array([s[2, 1], s[0, 2], s[1, 0]])


@dataclass(frozen=True)
class Rotation3:
    """Element of SO(3), validated on construction."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"rotation matrix must be 3x3, got {m.shape}")
        if np.linalg.norm(m.T @ m - np.eye(3)) > _ROT_TOL:
            raise ValueError("matrix is not orthonormal within 1e-9")
        if abs(np.linalg.det(m) - 1.0) > _ROT_TOL:
            raise ValueError("matrix determinant is not +1 within 1e-9")
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    @staticmethod
    def identity() -> "Rotation3":
        return Rotation3(np.eye(3))

    def compose(self, other: "Rotation3") -> "Rotation3":
        return Rotation3(self.m @ other.m)

    def inverse(self) -> "Rotation3":
        return Rotation3(self.m.T.copy())

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Rotate a 3-vector or an (N, 3) stack of vectors."""
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            return self.m @ v
        return v @ self.m.T


@dataclass(frozen=True)
class Pose:
    """Rigid transform on SE(3) with explicit frame labels."""

    rotation: Rotation3
    translation: np.ndarray
    frame_from: str
    frame_to: str

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3).copy()
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity(frame: str = "world") -> "Pose":
        return Pose(Rotation3.identity(), np.zeros(3), frame, frame)

    def compose(self, other: "Pose") -> "Pose":
        """Right-to-left composition: T_ab.compose(T_ca) -> T_cb."""
        if other.frame_to != self.frame_from:
            raise FrameMismatchError(
                f"cannot compose {self.frame_from}->{self.frame_to} with "
                f"{other.frame_from}->{other.frame_to}"
            )
        return Pose(
            self.rotation.compose(other.rotation),
            self.rotation.apply(other.translation) + self.translation,
            other.frame_from,
            self.frame_to,
        )

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        rt = self.rotation.inverse()
        return Pose(rt, -rt.apply(self.translation), self.frame_to, self.frame_from)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map point coordinates from frame_from into frame_to."""
        return self.rotation.apply(points) + self.translation

    def right_perturbed(self, xi: np.ndarray) -> "Pose":
        """T * exp(xi), the right-multiplicative perturbation of T."""
        return self.compose(se3_exp(Twist(xi), self.frame_from, self.frame_from))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.m
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class Sim3Transform:
    """Similarity transform: x -> scale * R x + t, scale > 0."""

    scale: float
    rotation: Rotation3
    translation: np.ndarray
    frame_from: str = "cam0"
    frame_to: str = "world"

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"similarity scale must be positive, got {self.scale}")
        t = np.asarray(self.translation, dtype=float).reshape(3).copy()
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity(frame_from: str = "cam0", frame_to: str = "world") -> "Sim3Transform":
        return Sim3Transform(1.0, Rotation3.identity(), np.zeros(3), frame_from, frame_to)

    def compose(self, other: "Sim3Transform") -> "Sim3Transform":
        if other.frame_to != self.frame_from:
            raise FrameMismatchError(
                f"cannot compose {self.frame_from}->{self.frame_to} with "
                f"{other.frame_from}->{other.frame_to}"
            )
        return Sim3Transform(
            self.scale * other.scale,
            self.rotation.compose(other.rotation),
            self.scale * self.rotation.apply(other.translation) + self.translation,
            other.frame_from,
            self.frame_to,
        )

    def inverse(self) -> "Sim3Transform":
        rt = self.rotation.inverse()
        return Sim3Transform(
            1.0 / self.scale,
            rt,
            -rt.apply(self.translation) / self.scale,
            self.frame_to,
            self.frame_from,
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * self.rotation.apply(points) + self.translation


@dataclass(frozen=True)
class Twist:
    """se(3) tangent vector: v = (rho, phi), rho translational, phi radians."""

    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float).reshape(6).copy()
        v.flags.writeable = False
        object.__setattr__(self, "v", v)

    @property
    def rho(self) -> np.ndarray:
        return self.v[:3]

    @property
    def phi(self) -> np.ndarray:
        return self.v[3:]


def so3_exp(phi: np.ndarray) -> Rotation3:
    """Rodrigues formula; second-order Taylor expansion near zero angle."""
    phi = np.asarray(phi, dtype=float).reshape(3)
    theta = np.linalg.norm(phi)
    k = skew(phi)
    if theta < ANGLE_EPS:
        # sin(t)/t ~ 1 - t^2/6, (1-cos(t))/t^2 ~ 1/2 - t^2/24
        a = 1.0 - theta * theta / 6.0
        b = 0.5 - theta * theta / 24.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / (theta * theta)
    return Rotation3(np.eye(3) + a * k + b * (k @ k))


def so3_log(r: Rotation3) -> np.ndarray:
    """Principal-branch logarithm, angle in [0, pi].

    Near pi the rotation axis comes from the dominant column of R + I,
    which stays well conditioned where the (R - R^T) extraction does not.
    """
    m = r.m
    c = np.clip((np.trace(m) - 1.0) / 2.0, -1.0, 1.0)
    theta = math.acos(c)
    if theta < ANGLE_EPS:
        return unskew((m - m.T) / 2.0)
    if math.pi - theta < _PI_EPS:
        b = m + np.eye(3)
        k = int(np.argmax(np.diag(b)))
        axis = b[:, k] / np.linalg.norm(b[:, k])
        # Resolve the sign with the antisymmetric part when it is nonzero.
        w = unskew(m - m.T)
        if w @ axis < 0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * math.sin(theta)) * unskew(m - m.T)


def _se3_v(phi: np.ndarray) -> np.ndarray:
    """The translation-coupling matrix V in the SE(3) exponential."""
    theta = np.linalg.norm(phi)
    k = skew(phi)
    if theta < ANGLE_EPS:
        return np.eye(3) + 0.5 * k + (k @ k) / 6.0
    a = (1.0 - math.cos(theta)) / (theta * theta)
    b = (theta - math.sin(theta)) / (theta * theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def _se3_v_inv(phi: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(phi)
    k = skew(phi)
    if theta < ANGLE_EPS:
        return np.eye(3) - 0.5 * k + (k @ k) / 12.0
    half = 0.5 * theta
    cot = math.cos(half) / math.sin(half)
    b = (1.0 - half * cot) / (theta * theta)
    return np.eye(3) - 0.5 * k + b * (k @ k)


def se3_exp(xi, frame_from: str = "se3", frame_to: str = "se3") -> Pose:
    """SE(3) exponential of a twist (rho, phi)."""
    v = xi.v if isinstance(xi, Twist) else np.asarray(xi, dtype=float).reshape(6)
    rho, phi = v[:3], v[3:]
    return Pose(so3_exp(phi), _se3_v(phi) @ rho, frame_from, frame_to)


def se3_log(t: Pose) -> Twist:
    """SE(3) logarithm, inverse of :func:`se3_exp` on the principal branch."""
    phi = so3_log(t.rotation)
    rho = _se3_v_inv(phi) @ t.translation
    return Twist(np.concatenate([rho, phi]))


def so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    """Left Jacobian of SO(3); equals the V matrix of the SE(3) exponential."""
    return _se3_v(np.asarray(phi, dtype=float).reshape(3))


def _so3_left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    return _se3_v_inv(np.asarray(phi, dtype=float).reshape(3))


def _se3_q_matrix(xi: np.ndarray) -> np.ndarray:
    """Translation block of the SE(3) left Jacobian (Barfoot's Q)."""
    rho, phi = xi[:3], xi[3:]
    rx = skew(rho)
    px = skew(phi)
    theta = np.linalg.norm(phi)
    if theta < ANGLE_EPS:
        c1 = 1.0 / 6.0
        c2 = 1.0 / 24.0
        c3 = 1.0 / 120.0
    else:
        t2 = theta * theta
        t3 = t2 * theta
        t4 = t3 * theta
        t5 = t4 * theta
        c1 = (theta - math.sin(theta)) / t3
        c2 = (1.0 - t2 / 2.0 - math.cos(theta)) / t4
        c3 = 0.5 * (c2 - 3.0 * (theta - math.sin(theta) - t3 / 6.0) / t5)
    q = 0.5 * rx
    q += c1 * (px @ rx + rx @ px + px @ rx @ px)
    q -= c2 * (px @ px @ rx + rx @ px @ px - 3.0 * px @ rx @ px)
    q -= c3 * (px @ rx @ px @ px + px @ px @ rx @ px)
    return q


def se3_right_jacobian_inverse(xi) -> np.ndarray:
    """Inverse right Jacobian of SE(3) at twist xi.

    Relates a right-multiplicative perturbation of the group element to
    the change of its logarithm: log(exp(xi) exp(d)) = xi + Jr^-1(xi) d.
    """
    v = xi.v if isinstance(xi, Twist) else np.asarray(xi, dtype=float).reshape(6)
    # Jr(xi) = Jl(-xi), so Jr^-1(xi) = Jl^-1(-xi).
    neg = -v
    jinv = _so3_left_jacobian_inv(neg[3:])
    q = _se3_q_matrix(neg)
    out = np.zeros((6, 6))
    out[:3, :3] = jinv
    out[3:, 3:] = jinv
    out[:3, 3:] = -jinv @ q @ jinv
    return out


def sim3_apply(a: Sim3Transform, t: Pose) -> Pose:
    """Map a pose through a similarity transform.

    The pose must target the transform's source frame; the result is
    relabelled to the transform's target frame. The scale is folded into
    the translation, keeping the rotation orthonormal.
    """
    if t.frame_to != a.frame_from:
        raise FrameMismatchError(
            f"pose targets frame {t.frame_to!r}, transform expects {a.frame_from!r}"
        )
    return Pose(
        a.rotation.compose(t.rotation),
        a.scale * a.rotation.apply(t.translation) + a.translation,
        t.frame_from,
        a.frame_to,
    )


def rot6d_to_rotation(r6: np.ndarray) -> Rotation3:
    """Orthonormalize a 6D rotation parameterization via Gram-Schmidt.

    The two 3-vector halves become the first two columns; the third is
    their cross product. If the determinant still came out negative the
    last column is negated (the cross-product construction makes this
    branch unreachable; it is kept as a guard).
    """
    r6 = np.asarray(r6, dtype=float).reshape(6)
    a1, a2 = r6[:3], r6[3:]
    n1 = np.linalg.norm(a1)
    if n1 < 1e-12:
        raise DegenerateRotationError("first direction vector is zero")
    b1 = a1 / n1
    u2 = a2 - (a2 @ b1) * b1
    n2 = np.linalg.norm(u2)
    if n2 < 1e-12:
        raise DegenerateRotationError("direction vectors are parallel")
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    m = np.column_stack([b1, b2, b3])
    if np.linalg.det(m) < 0:
        m = m.copy()
        m[:, 2] = -m[:, 2]
    return Rotation3(m)


def geodesic_angle(a: Rotation3, b: Rotation3) -> float:
    """Geodesic distance on SO(3) with a clamped arccos argument.

    The argument is clamped to [-1 + eps, 1 - eps] (eps = 1e-7), so the
    result lives strictly inside (0, pi) and identical rotations map to
    arccos(1 - eps) ~= 4.47e-4 rad rather than an unstable 0.
    """
    c = (np.trace(a.m @ b.m.T) - 1.0) / 2.0
    c = min(max(c, -1.0 + GEODESIC_CLAMP_EPS), 1.0 - GEODESIC_CLAMP_EPS)
    return math.acos(c)


def pose_to_values(t: Pose) -> list:
    """12 numbers: row-major rotation then translation."""
    return [float(x) for x in np.concatenate([t.rotation.m.reshape(9), t.translation])]


def pose_from_values(values, frame_from: str, frame_to: str) -> Pose:
    v = np.asarray(values, dtype=float).reshape(12)
    return Pose(Rotation3(v[:9].reshape(3, 3)), v[9:], frame_from, frame_to)


def sim3_to_values(a: Sim3Transform) -> list:
    """13 numbers: scale, then the 12 pose numbers."""
    return [float(a.scale)] + [
        float(x) for x in np.concatenate([a.rotation.m.reshape(9), a.translation])
    ]


def sim3_from_values(values, frame_from: str = "cam0", frame_to: str = "world") -> Sim3Transform:
    v = np.asarray(values, dtype=float).reshape(13)
    return Sim3Transform(float(v[0]), Rotation3(v[1:10].reshape(3, 3)), v[10:], frame_from, frame_to)
