"""Differentiable training objectives.

Every loss returns a scalar autodiff Tensor, is >= 0, and vanishes at the
ground-truth configuration. Inputs may be plain arrays or Tensors; wrap
predictions in Tensors with requires_grad to obtain gradients.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .nn import tensor as T
from .nn.tensor import Tensor, as_tensor
from .trajectory import FPS, TrajectorySample, WaypointSet, states_to_arrays


@dataclass
class LossWeights:
    """Loss weights and shape constants; defaults follow the training recipe."""

    lambda_wp: float = 0.3
    lambda_act: float = 0.1
    lambda_time: float = 1.0
    lambda_3d: float = 2.0
    lambda_2d: float = 0.5
    lambda_rot6d: float = 0.5
    lambda_geo: float = 0.15
    beta_rot6d: float = 0.2
    beta_3d: float = 0.07
    beta_2d: float = 0.02
    beta_time: float = 1.0
    sigma_time: float = 3.0  # Gaussian window width, in frames
    kappa: int = 10
    rot_weight_fm: float = 0.5

    def __post_init__(self):
        values = [
            self.lambda_wp, self.lambda_act, self.lambda_time, self.lambda_3d,
            self.lambda_2d, self.lambda_rot6d, self.lambda_geo, self.sigma_time,
            self.rot_weight_fm,
        ]
        if any(v < 0 for v in values):
            raise ValueError("loss weights must be nonnegative")
        if self.kappa < 1:
            raise ValueError("kappa must be >= 1")


def huber(residual, beta):
    """Mean Huber penalty: 0.5 r^2 / beta inside |r| <= beta, |r| - beta/2 outside."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    r = as_tensor(residual)
    inside = np.abs(r.data) <= beta
    quad = (r * r) * (0.5 / beta)
    lin = T.abs_(r) - 0.5 * beta
    return T.mean(T.where(inside, quad, lin))


def fm_loss(v_hat, x0, x1, rot_weight=0.5, step_mask=None):
    """Flow-matching velocity regression loss.

    The target velocity is x1 - x0. The loss is the MSE over the 6 position
    components plus rot_weight times the MSE over the 12 rotation components
    (last-axis layout matches flatten_state). step_mask, when given, excludes
    padded future steps from both numerator and denominator; it broadcasts
    against the leading (batch, step) axes.
    """
    v = as_tensor(v_hat)
    target = np.asarray(x1, dtype=v.dtype) - np.asarray(x0, dtype=v.dtype)
    r = v - target
    pos = r[..., :6]
    rot = r[..., 6:]
    if step_mask is None:
        pos_loss = T.mean(pos * pos)
        rot_loss = T.mean(rot * rot)
    else:
        w = np.asarray(step_mask, dtype=v.dtype)[..., None]
        denom = float(w.sum())
        if denom == 0:
            raise ValueError("step_mask excludes every step")
        pos_loss = T.sum_(pos * pos * w) * (1.0 / (denom * 6))
        rot_loss = T.sum_(rot * rot * w) * (1.0 / (denom * 12))
    return pos_loss + rot_weight * rot_loss


def gram_schmidt(rot6d):
    """Differentiable 6D -> rotation-matrix orthonormalization, (..., 6) -> (..., 3, 3).

    A tiny bias toward the identity columns keeps training-time inputs away
    from the degenerate set without perturbing healthy rotations measurably.
    """
    a = as_tensor(rot6d)
    bias = np.zeros(6, dtype=a.dtype)
    bias[0] = 1e-8
    bias[4] = 1e-8
    a = a + bias
    a1 = a[..., :3]
    a2 = a[..., 3:]
    c1 = a1 / T.norm(a1, keepdims=True, eps=1e-24)
    proj = T.sum_(c1 * a2, axis=-1, keepdims=True)
    rej = a2 - proj * c1
    c2 = rej / T.norm(rej, keepdims=True, eps=1e-24)
    c3 = T.cross3(c1, c2)
    return T.stack([c1, c2, c3], axis=-1)


def geodesic_radians(m1, m2):
    """Differentiable geodesic angle (radians) between rotation matrices.

    Uses atan2 of the relative rotation's skew norm against its trace term,
    which is exact (and has bounded gradients) at zero relative rotation
    where the arccos form is numerically hostile.
    """
    rel = T.matmul(T.transpose(as_tensor(m1), _swap_last(m1)), as_tensor(m2))
    tr = rel[..., 0, 0] + rel[..., 1, 1] + rel[..., 2, 2]
    cos = (tr - 1.0) * 0.5
    v = T.stack(
        [
            rel[..., 2, 1] - rel[..., 1, 2],
            rel[..., 0, 2] - rel[..., 2, 0],
            rel[..., 1, 0] - rel[..., 0, 1],
        ],
        axis=-1,
    ) * 0.5
    sin = T.norm(v, eps=1e-24)
    return T.atan2(sin, cos)


def _swap_last(x):
    n = as_tensor(x).ndim
    axes = list(range(n))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


@dataclass
class WaypointPrediction:
    """Predicted waypoint parameters in tensor form, ordered START/CONTACT/END.

    timestamps: (3,) seconds; positions: (3, 2, 3) meters (hand axis is
    left, right); rot6d: (3, 2, 6).
    """

    timestamps: Tensor
    positions: Tensor
    rot6d: Tensor

    @staticmethod
    def from_waypoint_set(ws: WaypointSet, requires_grad=False):
        ts = np.array([w.timestamp for w in ws], dtype=np.float64)
        pos = np.stack([[w.left.position, w.right.position] for w in ws])
        rot = np.stack([[w.left.rotation, w.right.rotation] for w in ws])
        return WaypointPrediction(
            Tensor(ts, requires_grad=requires_grad),
            Tensor(pos, requires_grad=requires_grad),
            Tensor(rot, requires_grad=requires_grad),
        )


def smoothed_waypoint_targets(sample: TrajectorySample, sigma_frames):
    """Gaussian-window supervision targets for the three waypoints.

    Each waypoint's position/rotation target is the normalized Gaussian-
    weighted average of the trajectory states within +-3 sigma frames of the
    waypoint's timestamp, with weights exp(-d^2 / (2 sigma^2)) over integer
    frame offsets d. sigma_frames = 0 reduces to the exact-frame state.

    Returns (positions (3, 2, 3), rot6d (3, 2, 6)) float64 arrays.
    """
    states = list(sample.past) + list(sample.future)
    pos, rot, _ = states_to_arrays(states)
    frames = np.array([round(s.timestamp * FPS) for s in states], dtype=int)
    out_pos = np.zeros((3, 2, 3))
    out_rot = np.zeros((3, 2, 6))
    for i, wp in enumerate(sample.waypoints):
        center = round(wp.timestamp * FPS)
        if sigma_frames <= 0:
            sel = np.argmin(np.abs(frames - center))
            out_pos[i] = pos[sel]
            out_rot[i] = rot[sel]
            continue
        radius = int(np.ceil(3.0 * sigma_frames))
        offsets = frames - center
        keep = np.abs(offsets) <= radius
        if not np.any(keep):
            keep = np.abs(offsets) == np.min(np.abs(offsets))
        w = np.exp(-(offsets[keep].astype(np.float64) ** 2) / (2.0 * sigma_frames**2))
        w /= w.sum()
        out_pos[i] = np.tensordot(w, pos[keep], axes=1)
        out_rot[i] = np.tensordot(w, rot[keep], axes=1)
    return out_pos, out_rot


def waypoint_loss(pred: WaypointPrediction, sample: TrajectorySample, w: LossWeights):
    """Waypoint supervision: time + 3D + 2D + rot6D + geodesic terms.

    Position/rotation terms compare against Gaussian-smoothed trajectory
    targets (see smoothed_waypoint_targets) and are masked to hands visible
    in the ground-truth waypoints. The time term covers CONTACT and END only
    (START is pinned at t = 0). The 2D term projects through the sample's
    intrinsics and is skipped for points at or behind the camera plane; with
    no intrinsics at all it is dropped with a warning.

    Returns (total, breakdown) where breakdown maps term names to scalar
    Tensors before weighting.
    """
    gt = sample.waypoints
    t_target = np.array([wp.timestamp for wp in gt], dtype=np.float64)
    vis = np.array(
        [[wp.left_visible, wp.right_visible] for wp in gt], dtype=bool
    )  # (3, 2)
    pos_target, rot_target = smoothed_waypoint_targets(sample, w.sigma_time)

    zero = Tensor(np.zeros(()))

    # timestamps: CONTACT and END on the continuous seconds axis
    l_time = huber(pred.timestamps[1:] - t_target[1:], w.beta_time)

    vis_mask = vis[..., None].astype(np.float64)
    n_vis = float(vis.sum())

    def masked_huber(residual, beta):
        # per visible (waypoint, hand) entry: sum of elementwise Huber over its
        # components; entries are then averaged
        if n_vis == 0:
            return zero
        r = residual * vis_mask
        elem = T.where(
            np.abs(r.data) <= beta, (r * r) * (0.5 / beta), T.abs_(r) - 0.5 * beta
        )
        return T.sum_(elem * (vis_mask > 0)) * (1.0 / n_vis)

    l_3d = masked_huber(pred.positions - pos_target, w.beta_3d)
    l_rot6d = masked_huber(pred.rot6d - rot_target, w.beta_rot6d)

    # geodesic on orthonormalized rotations, visible waypoints only
    if n_vis > 0:
        pm = gram_schmidt(pred.rot6d)
        gm = gram_schmidt(Tensor(rot_target))
        ang = geodesic_radians(pm, gm)  # (3, 2) radians
        l_geo = T.sum_(ang * vis.astype(np.float64)) * (1.0 / n_vis)
    else:
        l_geo = zero

    # 2D reprojection term
    cam = sample.camera
    if cam is None:
        warnings.warn("sample has no camera intrinsics; dropping the 2D waypoint term")
        l_2d = zero
    else:
        z_pred = pred.positions.data[..., 2]
        z_tgt = pos_target[..., 2]
        front = vis & (z_pred > 1e-6) & (z_tgt > 1e-6)
        if np.any(front):
            z = pred.positions[..., 2]
            u = pred.positions[..., 0] / z * cam.fx + cam.cx
            v = pred.positions[..., 1] / z * cam.fy + cam.cy
            ut = pos_target[..., 0] / z_tgt * cam.fx + cam.cx
            vt = pos_target[..., 1] / z_tgt * cam.fy + cam.cy
            fmask = front.astype(np.float64)
            ru = (u - ut) * fmask
            rv = (v - vt) * fmask
            r2 = T.stack([ru, rv], axis=-1)
            elem = T.where(
                np.abs(r2.data) <= w.beta_2d,
                (r2 * r2) * (0.5 / w.beta_2d),
                T.abs_(r2) - 0.5 * w.beta_2d,
            )
            l_2d = T.sum_(elem * np.stack([front, front], axis=-1)) * (
                1.0 / float(front.sum())
            )
        else:
            l_2d = zero

    total = (
        w.lambda_time * l_time
        + w.lambda_3d * l_3d
        + w.lambda_2d * l_2d
        + w.lambda_rot6d * l_rot6d
        + w.lambda_geo * l_geo
    )
    breakdown = {
        "time": l_time,
        "pos3d": l_3d,
        "pos2d": l_2d,
        "rot6d": l_rot6d,
        "geo": l_geo,
    }
    return total, breakdown


@dataclass
class SemanticBatch:
    """Predicted vs ground-truth action embeddings plus the learnable temperature."""

    predicted: Tensor  # (K, D)
    targets: np.ndarray  # (K, D), unit rows
    temperature: Tensor = field(
        default_factory=lambda: Tensor(np.asarray(0.07), requires_grad=True)
    )


def action_semantic_loss(batch: SemanticBatch, kappa=10):
    """Adaptive embedding alignment loss.

    With fewer than kappa pairs the loss is 1 - mean cosine similarity (range
    [0, 2]); otherwise it is an InfoNCE over the K x K cosine-similarity
    matrix with matched-index labels and temperature clamped to [1e-3, 1].
    Predictions are L2-normalized internally, so the loss is invariant to
    positive rescaling of the predicted embeddings.
    """
    z = as_tensor(batch.predicted)
    targets = np.asarray(batch.targets, dtype=np.float64)
    k = z.shape[0]
    if k < 1 or targets.shape[0] != k:
        raise ValueError("predicted and target lists must have equal length K >= 1")
    zn = z / T.norm(z, keepdims=True, eps=1e-24)
    if k < kappa:
        cos = T.sum_(zn * targets, axis=-1)
        return 1.0 - T.mean(cos)
    tau = T.clip(as_tensor(batch.temperature), 1e-3, 1.0)
    logits = T.matmul(zn, targets.T) / tau
    matched = logits[np.arange(k), np.arange(k)]
    return T.mean(T.logsumexp(logits, axis=-1) - matched)


def total_finetune_loss(fm, wp, act, w: LossWeights):
    """Combined objective: fm + lambda_wp * wp + lambda_act * act."""
    return as_tensor(fm) + w.lambda_wp * as_tensor(wp) + w.lambda_act * as_tensor(act)
