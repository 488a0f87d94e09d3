"""Pose and quaternion math.

Quaternions are (w, x, y, z), kept unit-norm and sign-canonicalized so
w >= 0 (with w == 0 broken toward a nonnegative first nonzero component),
making the vector representation unique per rotation. All functions accept
arbitrary leading batch dimensions; the last axis is the quaternion.

The *_vjp helpers backpropagate through the corresponding forward ops;
they exist so reward terms can be differentiated through pose updates
without an autodiff framework.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])

UNIT_NORM_TOL = 1e-9


def quat_norm(q: np.ndarray) -> np.ndarray:
    return np.linalg.norm(q, axis=-1)


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = quat_norm(q)
    if np.any(n < 1e-12):
        raise ValueError("cannot normalize near-zero quaternion")
    return q / n[..., None]


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Flip sign so w >= 0; exact w == 0 ties flip toward positive (x, y, z)."""
    q = np.asarray(q, dtype=np.float64)
    w = q[..., 0]
    flip = w < 0.0
    tie = w == 0.0
    if np.any(tie):
        # first nonzero of (x, y, z) decides the sign for w == 0
        rest = q[..., 1:]
        nz = rest != 0.0
        first = np.argmax(nz, axis=-1)
        firstval = np.take_along_axis(rest, first[..., None], axis=-1)[..., 0]
        flip = np.where(tie, firstval < 0.0, flip)
    return np.where(flip[..., None], -q, q)


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return np.concatenate([q[..., :1], -q[..., 1:]], axis=-1)


def hamilton(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Quaternion product a * b (applies b's rotation first, then a's)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def hamilton_vjp(g: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Backprop through hamilton(a, b): returns (dL/da, dL/db) given dL/dout.

    Uses <g, a*b> = <g*conj(b), a> = <conj(a)*g, b>, valid because the
    product is bilinear and the Euclidean inner product matches Re(p*q).
    """
    return hamilton(g, quat_conjugate(b)), hamilton(quat_conjugate(a), g)


def normalize_vjp(g: np.ndarray, q_raw: np.ndarray) -> np.ndarray:
    """Backprop through quat_normalize at input q_raw."""
    q_raw = np.asarray(q_raw, dtype=np.float64)
    n = quat_norm(q_raw)[..., None]
    u = q_raw / n
    return (g - u * np.sum(u * g, axis=-1, keepdims=True)) / n


def axis_angle_quat(axis: np.ndarray, angle: float) -> np.ndarray:
    """Unit quaternion rotating by `angle` radians about `axis`."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        raise ValueError("rotation axis must be nonzero")
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / n])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate 3-vector v by unit quaternion q."""
    qv = np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)
    return hamilton(hamilton(q, qv), quat_conjugate(q))[..., 1:]


def quat_angle(q: np.ndarray) -> float:
    """Rotation angle in [0, pi] of a unit quaternion."""
    w = np.clip(np.abs(np.asarray(q, dtype=np.float64)[..., 0]), 0.0, 1.0)
    return 2.0 * np.arccos(w)


@dataclass
class Pose:
    """Position plus unit orientation quaternion."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.orientation = np.asarray(self.orientation, dtype=np.float64)
        if self.position.shape != (3,):
            raise ValueError(f"position must be a 3-vector, got shape {self.position.shape}")
        if self.orientation.shape != (4,):
            raise ValueError(f"orientation must be a 4-vector, got {self.orientation.shape}")
        if abs(quat_norm(self.orientation) - 1.0) > UNIT_NORM_TOL:
            raise ValueError("orientation quaternion must be unit norm")

    def copy(self) -> "Pose":
        return Pose(self.position.copy(), self.orientation.copy())

    @staticmethod
    def identity(position=None) -> "Pose":
        pos = np.zeros(3) if position is None else np.asarray(position, dtype=np.float64)
        return Pose(pos, IDENTITY_QUAT.copy())


@dataclass
class PoseDelta:
    """Additive position change and a rotation applied on the left."""

    dposition: np.ndarray
    drotation: np.ndarray

    def __post_init__(self):
        self.dposition = np.asarray(self.dposition, dtype=np.float64)
        self.drotation = np.asarray(self.drotation, dtype=np.float64)
        if self.dposition.shape != (3,):
            raise ValueError(f"dposition must be a 3-vector, got {self.dposition.shape}")
        if self.drotation.shape != (4,):
            raise ValueError(f"drotation must be a 4-vector, got {self.drotation.shape}")

    @staticmethod
    def identity() -> "PoseDelta":
        return PoseDelta(np.zeros(3), IDENTITY_QUAT.copy())


def apply_delta(pose: Pose, delta: PoseDelta) -> Pose:
    """New pose: position added, orientation = delta.drotation * pose.orientation,
    renormalized and sign-canonicalized."""
    q = quat_canonical(quat_normalize(hamilton(delta.drotation, pose.orientation)))
    return Pose(pose.position + delta.dposition, q)
