"""Rotation and projection algebra.

Conventions:
    * Rotations are stored either as 3x3 matrices (columns are basis vectors
      of the rotated frame) or in the continuous 6D parameterization: the
      first two columns of the rotation matrix, concatenated to a 6-vector.
    * All functions accept arbitrary leading batch dimensions.
    * Positions are meters, pixel coordinates follow the pinhole model.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

DEGENERACY_EPS = 1e-8
ROTATION_TOL = 1e-6


class DegenerateRotation(ValueError):
    """6D input cannot be orthonormalized (near-zero or near-parallel columns)."""


class InvalidRotation(ValueError):
    """Matrix violates orthogonality / determinant +1 beyond tolerance."""


class BehindCamera(ValueError):
    """Point has non-positive depth and cannot be projected."""


def try_rot6d_to_matrix(a):
    """Gram-Schmidt a 6D rotation, reporting degeneracy instead of raising.

    Args:
        a: array (..., 6), the first two (unnormalized) matrix columns.

    Returns:
        (m, ok): m is (..., 3, 3) with identity substituted on bad rows,
        ok is a boolean mask (...,) that is False where the input was
        degenerate (column norm or rejection norm below DEGENERACY_EPS).
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] != 6:
        raise ValueError(f"expected trailing dimension 6, got shape {a.shape}")
    a1 = a[..., :3]
    a2 = a[..., 3:]

    n1 = np.linalg.norm(a1, axis=-1)
    ok = n1 >= DEGENERACY_EPS
    c1 = a1 / np.where(ok, n1, 1.0)[..., None]

    proj = np.sum(c1 * a2, axis=-1, keepdims=True)
    rej = a2 - proj * c1
    n2 = np.linalg.norm(rej, axis=-1)
    ok = ok & (n2 >= DEGENERACY_EPS)
    c2 = rej / np.where(ok, n2, 1.0)[..., None]

    c3 = np.cross(c1, c2)
    m = np.stack([c1, c2, c3], axis=-1)
    eye = np.broadcast_to(np.eye(3), m.shape)
    m = np.where(ok[..., None, None], m, eye)
    return m, ok


def rot6d_to_matrix(a):
    """Convert 6D rotation(s) to orthonormal right-handed matrices.

    Raises DegenerateRotation if any input has a near-zero first column or a
    second column near-parallel to the first.
    """
    m, ok = try_rot6d_to_matrix(a)
    if not np.all(ok):
        raise DegenerateRotation(
            f"{int(np.sum(~ok))} of {ok.size} 6D rotations are degenerate"
        )
    return m


def matrix_to_rot6d(m):
    """Extract the 6D representation (first two columns) of rotation matrices."""
    m = np.asarray(m, dtype=np.float64)
    check_rotation_matrix(m)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def check_rotation_matrix(m, tol=ROTATION_TOL):
    """Raise InvalidRotation unless m^T m = I and det(m) = +1 within tol."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-2:] != (3, 3):
        raise ValueError(f"expected trailing shape (3, 3), got {m.shape}")
    gram = np.swapaxes(m, -1, -2) @ m
    ortho_err = np.max(np.abs(gram - np.eye(3)), axis=(-1, -2))
    det_err = np.abs(np.linalg.det(m) - 1.0)
    if np.any(ortho_err > tol) or np.any(det_err > tol):
        raise InvalidRotation(
            f"max orthogonality error {float(np.max(ortho_err)):.3e}, "
            f"max det error {float(np.max(det_err)):.3e} exceed {tol:.0e}"
        )
    return m


def geodesic_degrees(r1, r2):
    """Geodesic angle between rotation matrices, in degrees in [0, 180].

    The angle is arccos(clamp((trace(r1^T r2) - 1) / 2, -1, 1)); it is
    evaluated as atan2(|skew part|, trace term), which computes the same
    value but stays accurate where the cosine saturates (0 and 180 degrees).
    """
    r1 = np.asarray(r1, dtype=np.float64)
    r2 = np.asarray(r2, dtype=np.float64)
    rel = np.swapaxes(r1, -1, -2) @ r2
    tr = np.trace(rel, axis1=-2, axis2=-1)
    cos = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    skew = np.stack(
        [
            rel[..., 2, 1] - rel[..., 1, 2],
            rel[..., 0, 2] - rel[..., 2, 0],
            rel[..., 1, 0] - rel[..., 0, 1],
        ],
        axis=-1,
    )
    sin = np.linalg.norm(skew, axis=-1) / 2.0
    return np.degrees(np.arctan2(sin, cos))


def rotation_about_axis(axis, degrees):
    """Rotation matrix for a right-handed rotation about a (non-unit) axis."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < DEGENERACY_EPS:
        raise ValueError("rotation axis has near-zero norm")
    x, y, z = axis / n
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    theta = np.radians(degrees)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def log_rotation(m):
    """Axis-angle (rotation vector, radians) of rotation matrices.

    Handles the near-0 and near-pi angle cases; used by geodesic slerp.
    """
    m = np.asarray(m, dtype=np.float64)
    tr = np.trace(m, axis1=-2, axis2=-1)
    cos = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)

    skew = (m - np.swapaxes(m, -1, -2)) / 2.0
    vec = np.stack(
        [skew[..., 2, 1], skew[..., 0, 2], skew[..., 1, 0]], axis=-1
    )
    sin = np.sin(theta)
    small = theta < 1e-7
    near_pi = theta > np.pi - 1e-5

    # generic: axis * theta = vec * theta / sin(theta)
    scale = np.where(small | near_pi, 1.0, theta / np.where(sin == 0, 1.0, sin))
    out = vec * scale[..., None]

    if np.any(near_pi):
        # near pi the skew part vanishes; recover axis from the symmetric part
        mm = np.broadcast_to(m, out.shape[:-1] + (3, 3))
        diag = np.stack([mm[..., 0, 0], mm[..., 1, 1], mm[..., 2, 2]], axis=-1)
        axis_sq = np.clip((diag + 1.0) / 2.0, 0.0, None)
        axis = np.sqrt(axis_sq)
        # fix signs using off-diagonal terms, anchored on the largest component
        idx = np.argmax(axis_sq, axis=-1)
        for flat in np.argwhere(near_pi):
            flat = tuple(flat)
            i = idx[flat]
            ax = axis[flat].copy()
            mloc = mm[flat]
            j, l = (i + 1) % 3, (i + 2) % 3
            if ax[i] > 0:
                ax[j] = mloc[i, j] / (2.0 * ax[i]) + mloc[j, i] / (2.0 * ax[i])
                ax[j] /= 2.0
                ax[l] = (mloc[i, l] + mloc[l, i]) / (4.0 * ax[i])
            ax = ax / max(np.linalg.norm(ax), 1e-12)
            out[flat] = ax * theta[flat]
    return out


def exp_rotation(v):
    """Rotation matrix from a rotation vector (Rodrigues)."""
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v, axis=-1)
    small = theta < 1e-12
    axis = v / np.where(small, 1.0, theta)[..., None]
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros_like(x)
    k = np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=-2,
    )
    s = np.sin(theta)[..., None, None]
    c = (1.0 - np.cos(theta))[..., None, None]
    m = np.eye(3) + s * k + c * (k @ k)
    eye = np.broadcast_to(np.eye(3), m.shape)
    return np.where(small[..., None, None], eye, m)


def slerp_matrices(r0, r1, frac):
    """Geodesic interpolation between two rotation matrices.

    frac = 0 gives r0, frac = 1 gives r1; the path is the shortest geodesic
    on the rotation manifold.
    """
    r0 = np.asarray(r0, dtype=np.float64)
    rel = np.swapaxes(r0, -1, -2) @ np.asarray(r1, dtype=np.float64)
    return r0 @ exp_rotation(frac * log_rotation(rel))


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation; maps points from the source into the target frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "rotation", np.asarray(self.rotation, dtype=np.float64)
        )
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=np.float64)
        )
        check_rotation_matrix(self.rotation)
        if self.translation.shape != (3,):
            raise ValueError("translation must be a 3-vector")

    @staticmethod
    def identity():
        return RigidTransform(np.eye(3), np.zeros(3))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self ∘ other: apply `other` first, then `self`."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points):
        """Transform an (..., 3) array of points."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def apply_rotation(self, matrices):
        """Rotate (..., 3, 3) orientation matrices into the target frame."""
        return self.rotation @ np.asarray(matrices, dtype=np.float64)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; inputs are assumed rectified."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


def project(p, k: CameraIntrinsics):
    """Project camera-frame points (..., 3) to pixels (..., 2).

    Raises BehindCamera for any point with depth <= 1e-6. Projected pixels
    may land outside the image bounds; masking is the caller's concern.
    """
    p = np.asarray(p, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= 1e-6):
        raise BehindCamera("point(s) at or behind the camera plane")
    u = k.fx * p[..., 0] / z + k.cx
    v = k.fy * p[..., 1] / z + k.cy
    return np.stack([u, v], axis=-1)


def reanchor(states, anchor: RigidTransform):
    """Re-express a sequence of bi-hand states in the anchor camera frame.

    `anchor` maps world coordinates into the anchor frame. Positions map as
    p' = R p + t and orientations as R' = R R_state, so inter-hand distances
    and relative rotations are preserved.
    """
    out = []
    for s in states:
        new_hands = {}
        for side in ("left", "right"):
            pose = getattr(s, side)
            m = rot6d_to_matrix(pose.rotation)
            new_hands[side] = dataclasses.replace(
                pose,
                position=anchor.apply(pose.position),
                rotation=matrix_to_rot6d(anchor.apply_rotation(m)),
            )
        out.append(dataclasses.replace(s, left=new_hands["left"], right=new_hands["right"]))
    return out
