"""Core data model: bi-hand 6-DoF states, waypoints, stages, samples.

Time conventions: everything is sampled at 10 FPS and anchored so that the
last observed (past) frame sits at t = 0; the first future frame is at 0.1 s.
Both hands are always stored -- a missing hand is carried with its validity
flag cleared so batch shapes stay fixed.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .geometry import CameraIntrinsics

FPS = 10
FRAME_DT = 1.0 / FPS
GRID_TOL = 1e-6
MAX_FUTURE_STEPS = 50


class TooShort(ValueError):
    """Input sequence spans less than 0.2 s and cannot be resampled."""


class WaypointKind(str, enum.Enum):
    START = "START"
    CONTACT = "CONTACT"
    END = "END"


@dataclass(frozen=True)
class Pose6DoF:
    """One wrist at one instant: position (meters) + 6D rotation."""

    position: np.ndarray
    rotation: np.ndarray  # 6D, first two rotation-matrix columns

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))

    def rotation_matrix(self):
        return geometry.rot6d_to_matrix(self.rotation)

    @staticmethod
    def identity(position=(0.0, 0.0, 0.0)):
        return Pose6DoF(np.asarray(position, dtype=np.float64), np.array([1.0, 0, 0, 0, 1.0, 0]))


@dataclass(frozen=True)
class BiHandState:
    timestamp: float
    left: Pose6DoF
    right: Pose6DoF
    left_valid: bool = True
    right_valid: bool = True


@dataclass(frozen=True)
class Waypoint:
    kind: WaypointKind
    timestamp: float
    left: Pose6DoF
    right: Pose6DoF
    left_visible: bool = True
    right_visible: bool = True


@dataclass(frozen=True)
class WaypointSet:
    start: Waypoint
    contact: Waypoint
    end: Waypoint

    def __iter__(self):
        return iter((self.start, self.contact, self.end))

    def get(self, kind: WaypointKind) -> Waypoint:
        return {
            WaypointKind.START: self.start,
            WaypointKind.CONTACT: self.contact,
            WaypointKind.END: self.end,
        }[WaypointKind(kind)]


@dataclass(frozen=True)
class StageLabels:
    """Interaction stage intervals [start, end] in seconds.

    `approach` is optional: it is dropped when the visibility/distance gate
    leaves no valid window. `manipulation` is always present.
    """

    manipulation: tuple
    approach: tuple | None = None


@dataclass(frozen=True)
class TrajectorySample:
    sample_id: str
    scene_id: str
    intent: str
    action_phrase: str
    context_features: np.ndarray  # (D_ctx,) visual-feature stand-in
    past: tuple  # H BiHandStates, last at t = 0
    future: tuple  # T BiHandStates, first at t = 0.1
    waypoints: WaypointSet
    stages: StageLabels
    camera: CameraIntrinsics

    def __post_init__(self):
        object.__setattr__(
            self, "context_features", np.asarray(self.context_features, dtype=np.float64)
        )
        object.__setattr__(self, "past", tuple(self.past))
        object.__setattr__(self, "future", tuple(self.future))


def flatten_state(s: BiHandState):
    """Flatten to (pos6, rot12): [left.xyz, right.xyz] and [left.6d, right.6d]."""
    pos6 = np.concatenate([s.left.position, s.right.position])
    rot12 = np.concatenate([s.left.rotation, s.right.rotation])
    return pos6, rot12


def unflatten_state(pos6, rot12, timestamp=0.0, left_valid=True, right_valid=True):
    """Exact inverse of flatten_state."""
    pos6 = np.asarray(pos6, dtype=np.float64)
    rot12 = np.asarray(rot12, dtype=np.float64)
    return BiHandState(
        timestamp=timestamp,
        left=Pose6DoF(pos6[:3], rot12[:6]),
        right=Pose6DoF(pos6[3:], rot12[6:]),
        left_valid=left_valid,
        right_valid=right_valid,
    )


def states_to_arrays(states):
    """Pack states into arrays: positions (T, 2, 3), rot6d (T, 2, 6), valid (T, 2)."""
    pos = np.stack([[s.left.position, s.right.position] for s in states])
    rot = np.stack([[s.left.rotation, s.right.rotation] for s in states])
    valid = np.array([[s.left_valid, s.right_valid] for s in states], dtype=bool)
    return pos, rot, valid


def _interp_pose(p0: Pose6DoF, p1: Pose6DoF, frac: float) -> Pose6DoF:
    pos = (1.0 - frac) * p0.position + frac * p1.position
    m = geometry.slerp_matrices(p0.rotation_matrix(), p1.rotation_matrix(), frac)
    return Pose6DoF(pos, geometry.matrix_to_rot6d(m))


def resample_10fps(states):
    """Resample a timestamped state sequence onto the exact 10 FPS grid.

    Positions interpolate linearly; rotations follow the shortest geodesic
    between the bracketing matrices. Grid-aligned input comes back unchanged
    (idempotence), and on-grid endpoints are preserved exactly.
    """
    states = list(states)
    times = np.array([s.timestamp for s in states], dtype=np.float64)
    if len(states) >= 2 and np.any(np.diff(times) <= 0):
        raise ValueError("input timestamps must be strictly increasing")
    if len(states) < 2 or times[-1] - times[0] < 0.2 - GRID_TOL:
        raise TooShort(f"span {0.0 if len(states) < 2 else times[-1] - times[0]:.3f} s < 0.2 s")

    k0 = math.ceil(round(times[0] * FPS, 6))
    k1 = math.floor(round(times[-1] * FPS, 6))
    out = []
    for k in range(k0, k1 + 1):
        t = k * FRAME_DT
        i = int(np.searchsorted(times, t + GRID_TOL)) - 1
        i = min(max(i, 0), len(states) - 2)
        if abs(times[i] - t) <= GRID_TOL:
            out.append(dataclasses.replace(states[i], timestamp=t))
            continue
        if abs(times[i + 1] - t) <= GRID_TOL:
            out.append(dataclasses.replace(states[i + 1], timestamp=t))
            continue
        a, b = states[i], states[i + 1]
        frac = (t - times[i]) / (times[i + 1] - times[i])
        out.append(
            BiHandState(
                timestamp=t,
                left=_interp_pose(a.left, b.left, frac),
                right=_interp_pose(a.right, b.right, frac),
                left_valid=a.left_valid and b.left_valid,
                right_valid=a.right_valid and b.right_valid,
            )
        )
    return out


def _check_grid(states, name, violations, expect_last_zero=False, expect_first=None):
    times = [s.timestamp for s in states]
    if not times:
        violations.append(f"{name}: must contain at least one state")
        return
    for a, b in zip(times, times[1:]):
        if abs((b - a) - FRAME_DT) > GRID_TOL:
            violations.append(
                f"{name}: timestamps must increase in exact 0.1 s steps (10 FPS), "
                f"found gap {b - a:.4f} s"
            )
            break
    if expect_last_zero and abs(times[-1]) > GRID_TOL:
        violations.append(f"{name}: last timestamp must be 0 (anchor convention)")
    if expect_first is not None and abs(times[0] - expect_first) > GRID_TOL:
        violations.append(f"{name}: first timestamp must be {expect_first}")


def _check_pose(pose: Pose6DoF, name, violations):
    if not (np.all(np.isfinite(pose.position)) and np.all(np.isfinite(pose.rotation))):
        violations.append(f"{name}: pose values must be finite")
        return
    _, ok = geometry.try_rot6d_to_matrix(pose.rotation)
    if not ok:
        violations.append(f"{name}: 6D rotation is degenerate")


def validate_sample(s: TrajectorySample):
    """Check every type invariant; returns a list of violations (empty = valid)."""
    v = []
    _check_grid(s.past, "past", v, expect_last_zero=True)
    _check_grid(s.future, "future", v, expect_first=FRAME_DT)
    if len(s.future) > MAX_FUTURE_STEPS:
        v.append(f"future: at most {MAX_FUTURE_STEPS} steps allowed, got {len(s.future)}")

    for states, name in ((s.past, "past"), (s.future, "future")):
        for i, st in enumerate(states):
            _check_pose(st.left, f"{name}[{i}].left", v)
            _check_pose(st.right, f"{name}[{i}].right", v)

    wp = s.waypoints
    if abs(wp.start.timestamp) > GRID_TOL:
        v.append("waypoints.start: START timestamp must be 0")
    if wp.contact.timestamp > wp.end.timestamp + GRID_TOL:
        v.append("waypoints: CONTACT timestamp must not exceed END timestamp")
    for w in wp:
        if w.timestamp < -GRID_TOL:
            v.append(f"waypoints.{w.kind.value.lower()}: timestamp must be >= 0")
        _check_pose(w.left, f"waypoints.{w.kind.value.lower()}.left", v)
        _check_pose(w.right, f"waypoints.{w.kind.value.lower()}.right", v)

    st = s.stages
    if st.manipulation[1] < st.manipulation[0]:
        v.append("stages.manipulation: interval must be non-empty")
    if st.approach is not None:
        if st.approach[1] < st.approach[0]:
            v.append("stages.approach: interval must be non-empty")
        if st.approach[1] > st.manipulation[0] + GRID_TOL:
            v.append("stages: approach must end no later than manipulation starts")

    if not np.all(np.isfinite(s.context_features)):
        v.append("context_features: values must be finite")
    return v
