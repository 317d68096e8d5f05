"""The trajectory-token interface.

A TrajectoryTokenBundle is what the (external) reasoning stage hands to the
motion model: one action-semantic embedding plus the START / CONTACT / END
waypoints. Providers produce bundles from ground truth (oracle), from ground
truth with controlled corruption (noisy), or from a prediction file written
by an external system (file). The module also hosts the rule-based stage
annotator that derives approach/manipulation intervals from object tracks.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from . import geometry
from .trajectory import (
    Pose6DoF,
    StageLabels,
    TrajectorySample,
    Waypoint,
    WaypointKind,
    WaypointSet,
)

ONSET_WINDOW = 0.2  # sliding displacement window for motion onset, seconds


class NoMotionOnset(ValueError):
    """Object track never moves beyond the motion threshold."""


class NoValidApproach(ValueError):
    """Visibility/distance gating leaves no approach window (informational)."""


@dataclass(frozen=True)
class TrajectoryTokenBundle:
    """<ACT> embedding + <START>/<CONTACT>/<END> waypoints."""

    act: np.ndarray | None  # unit action-semantic embedding, or None
    start: Waypoint
    contact: Waypoint
    end: Waypoint

    def waypoints(self) -> WaypointSet:
        return WaypointSet(self.start, self.contact, self.end)


def validate_bundle(b: TrajectoryTokenBundle):
    """Return invariant violations (empty list = valid bundle)."""
    v = []
    if abs(b.start.timestamp) > 1e-6:
        v.append("start: START timestamp must be 0")
    if b.contact.timestamp > b.end.timestamp + 1e-9:
        v.append("CONTACT timestamp must not exceed END timestamp")
    for wp in (b.start, b.contact, b.end):
        if wp.timestamp < -1e-9:
            v.append(f"{wp.kind.value}: timestamp must be >= 0")
    if b.act is not None:
        n = float(np.linalg.norm(b.act))
        if abs(n - 1.0) > 1e-6:
            v.append(f"act: embedding must be unit norm, got {n:.6f}")
    return v


@dataclass(frozen=True)
class ObjectTrack:
    """Object position track in the camera frame, with per-sample visibility."""

    timestamps: np.ndarray
    positions: np.ndarray  # (N, 3) meters
    visible: np.ndarray  # (N,) bool

    def __post_init__(self):
        object.__setattr__(self, "timestamps", np.asarray(self.timestamps, dtype=np.float64))
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=np.float64))
        object.__setattr__(self, "visible", np.asarray(self.visible, dtype=bool))
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("track timestamps must be strictly increasing")


def oracle_provider(sample: TrajectorySample, embed_fn=None) -> TrajectoryTokenBundle:
    """Ground-truth bundle: GT waypoints plus the embedded action phrase.

    embed_fn maps text to a unit embedding (defaults to dataio's deterministic
    intent embedding); pass None explicitly via embed_fn=lambda t: None to get
    a bundle without a semantic token.
    """
    if embed_fn is None:
        from .dataio import intent_embedding

        embed_fn = intent_embedding
    wp = sample.waypoints
    return TrajectoryTokenBundle(
        act=embed_fn(sample.action_phrase),
        start=wp.start,
        contact=wp.contact,
        end=wp.end,
    )


def _perturb_pose(pose: Pose6DoF, sigma_pos, sigma_rot_deg, rng) -> Pose6DoF:
    pos = pose.position + rng.normal(scale=sigma_pos, size=3) if sigma_pos > 0 else pose.position
    rot6d = pose.rotation
    if sigma_rot_deg > 0:
        axis = rng.normal(size=3)
        axis /= max(np.linalg.norm(axis), 1e-12)
        angle = rng.normal(scale=sigma_rot_deg)
        delta = geometry.rotation_about_axis(axis, angle)
        m = delta @ geometry.rot6d_to_matrix(rot6d)
        rot6d = geometry.matrix_to_rot6d(m)
    return Pose6DoF(pos, rot6d)


def noisy_provider(
    sample: TrajectorySample,
    sigma_pos=0.0,
    sigma_time=0.0,
    sigma_rot=0.0,
    seed=0,
    embed_fn=None,
) -> TrajectoryTokenBundle:
    """Oracle bundle with Gaussian corruption, modeling an imperfect upstream predictor.

    Positions get isotropic Gaussian noise (sigma_pos meters), timestamps get
    Gaussian noise (sigma_time seconds, START pinned at 0, results clamped to
    >= 0), and rotations are perturbed about a random axis by a Gaussian-
    magnitude angle (sigma_rot degrees). If the perturbed CONTACT timestamp
    exceeds END, the two timestamps are swapped (not clamped), preserving the
    noise distribution's symmetry.
    """
    if min(sigma_pos, sigma_time, sigma_rot) < 0:
        raise ValueError("noise scales must be >= 0")
    rng = np.random.default_rng(seed)
    base = oracle_provider(sample, embed_fn=embed_fn)

    def perturb(wp: Waypoint, perturb_time) -> Waypoint:
        t = wp.timestamp
        if perturb_time and sigma_time > 0:
            t = max(0.0, t + rng.normal(scale=sigma_time))
        return dataclasses.replace(
            wp,
            timestamp=t,
            left=_perturb_pose(wp.left, sigma_pos, sigma_rot, rng),
            right=_perturb_pose(wp.right, sigma_pos, sigma_rot, rng),
        )

    start = perturb(base.start, perturb_time=False)
    contact = perturb(base.contact, perturb_time=True)
    end = perturb(base.end, perturb_time=True)
    if contact.timestamp > end.timestamp:
        t_c, t_e = contact.timestamp, end.timestamp
        contact = dataclasses.replace(contact, timestamp=t_e)
        end = dataclasses.replace(end, timestamp=t_c)
    return TrajectoryTokenBundle(act=base.act, start=start, contact=contact, end=end)


# -- prediction file I/O -------------------------------------------------------

def _pose_to_record(pose: Pose6DoF):
    return {"pos": pose.position.tolist(), "rot6d": pose.rotation.tolist()}


def _pose_from_record(rec):
    return Pose6DoF(np.asarray(rec["pos"]), np.asarray(rec["rot6d"]))


def bundle_to_record(sample_id, bundle: TrajectoryTokenBundle):
    return {
        "sample_id": sample_id,
        "act": None if bundle.act is None else np.asarray(bundle.act).tolist(),
        "waypoints": [
            {
                "kind": wp.kind.value,
                "t": wp.timestamp,
                "left": _pose_to_record(wp.left),
                "right": _pose_to_record(wp.right),
                "left_visible": wp.left_visible,
                "right_visible": wp.right_visible,
            }
            for wp in (bundle.start, bundle.contact, bundle.end)
        ],
    }


def _bundle_from_record(rec):
    by_kind = {}
    for w in rec["waypoints"]:
        kind = WaypointKind(w["kind"])
        by_kind[kind] = Waypoint(
            kind=kind,
            timestamp=float(w["t"]),
            left=_pose_from_record(w["left"]),
            right=_pose_from_record(w["right"]),
            left_visible=bool(w.get("left_visible", True)),
            right_visible=bool(w.get("right_visible", True)),
        )
    missing = [k.value for k in WaypointKind if k not in by_kind]
    if missing:
        raise ValueError(f"missing waypoint kinds: {missing}")
    act = rec.get("act")
    return TrajectoryTokenBundle(
        act=None if act is None else np.asarray(act, dtype=np.float64),
        start=by_kind[WaypointKind.START],
        contact=by_kind[WaypointKind.CONTACT],
        end=by_kind[WaypointKind.END],
    )


def write_bundles(path, bundles):
    """Write {sample_id: bundle} as prediction JSONL."""
    with open(path, "w", encoding="utf-8") as fh:
        for sample_id in sorted(bundles):
            fh.write(json.dumps(bundle_to_record(sample_id, bundles[sample_id])) + "\n")


def file_provider(path, known_sample_ids=None):
    """Load externally produced bundles from prediction JSONL.

    Returns (bundles, violations): bundles maps sample_id to a validated
    TrajectoryTokenBundle; every malformed or invalid record is skipped and
    reported as a violation string carrying its 1-based line number. When
    known_sample_ids is given, records naming unknown samples are rejected.
    """
    bundles, violations = {}, []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                sample_id = rec["sample_id"]
                bundle = _bundle_from_record(rec)
            except (ValueError, KeyError, TypeError) as exc:
                violations.append(f"line {lineno}: parse error: {exc}")
                continue
            if known_sample_ids is not None and sample_id not in known_sample_ids:
                violations.append(f"line {lineno}: unknown sample_id {sample_id!r}")
                continue
            problems = validate_bundle(bundle)
            if problems:
                violations.append(f"line {lineno}: {'; '.join(problems)}")
                continue
            bundles[sample_id] = bundle
    return bundles, violations


# -- stage annotation -----------------------------------------------------------

def infer_stages(
    track: ObjectTrack,
    motion_eps=0.01,
    window=(0.5, 2.0),
    max_dist=1.0,
) -> StageLabels:
    """Rule-based stage annotation from an object track.

    Motion onset t* is the first timestamp where the object's displacement
    over the preceding 0.2 s exceeds motion_eps. The approach interval is
    [t* - window[1], t* - window[0]] intersected with the span where the
    object is visible and within max_dist of the camera; if that gate leaves
    nothing, the approach is omitted. Manipulation runs from t* to the end of
    the track.

    Raises NoMotionOnset when the object never moves. Multiple onsets resolve
    to the first one after track start.
    """
    t = track.timestamps
    if len(t) < 3:
        raise ValueError("track must contain at least 3 samples")
    onset = None
    for i in range(len(t)):
        # tiny slack keeps the window lookup stable under uniform time shifts
        j = int(np.searchsorted(t, t[i] - ONSET_WINDOW - 1e-9, side="left"))
        if j == i:
            continue
        if np.linalg.norm(track.positions[i] - track.positions[j]) > motion_eps:
            onset = t[i]
            break
    if onset is None:
        raise NoMotionOnset(f"no displacement above {motion_eps} m over {ONSET_WINDOW} s")

    manipulation = (float(onset), float(t[-1]))

    lo, hi = float(onset - window[1]), float(onset - window[0])
    dist = np.linalg.norm(track.positions, axis=1)
    # 1e-9 slack keeps grid samples on the window boundary included under
    # floating-point drift (e.g. after uniform time shifts)
    ok = track.visible & (dist <= max_dist) & (t >= lo - 1e-9) & (t <= hi + 1e-9)
    if not np.any(ok):
        return StageLabels(manipulation=manipulation, approach=None)
    approach = (float(t[ok][0]), float(t[ok][-1]))
    if approach[1] <= approach[0]:
        return StageLabels(manipulation=manipulation, approach=None)
    return StageLabels(manipulation=manipulation, approach=approach)
