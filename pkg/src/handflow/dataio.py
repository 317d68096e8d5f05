"""Dataset tooling: serialization, splits, statistics, synthetic data, QA.

The on-disk dataset format is line-delimited JSON with an explicit header
record carrying the schema version. Floats are serialized at 9 significant
digits, which keeps metric values stable to well below 1e-7 across a
write/read cycle while the files stay diffable and inspectable.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .geometry import CameraIntrinsics
from .trajectory import (
    FPS,
    BiHandState,
    Pose6DoF,
    StageLabels,
    TrajectorySample,
    Waypoint,
    WaypointKind,
    WaypointSet,
    states_to_arrays,
    validate_sample,
)

SCHEMA_NAME = "handflow/trajectory-dataset"
SCHEMA_VERSION = 1
DEFAULT_CTX_DIM = 256
DEFAULT_EMB_DIM = 512

DEFAULT_CAMERA = CameraIntrinsics(fx=300.0, fy=300.0, cx=320.0, cy=240.0, width=640, height=480)


# -- float-stable JSON helpers ----------------------------------------------------

def _round_sig(x, digits=9):
    return float(f"{float(x):.{digits}g}")


def _round_list(values):
    return [_round_sig(v) for v in np.asarray(values, dtype=np.float64).reshape(-1)]


# -- record conversion -------------------------------------------------------------

def _pose_rec(p: Pose6DoF):
    return {"pos": _round_list(p.position), "rot6d": _round_list(p.rotation)}


def _pose_from(rec):
    return Pose6DoF(np.asarray(rec["pos"]), np.asarray(rec["rot6d"]))


def _state_rec(s: BiHandState):
    return {
        "t": _round_sig(s.timestamp),
        "left": _pose_rec(s.left),
        "right": _pose_rec(s.right),
        "left_valid": s.left_valid,
        "right_valid": s.right_valid,
    }


def _state_from(rec):
    return BiHandState(
        timestamp=float(rec["t"]),
        left=_pose_from(rec["left"]),
        right=_pose_from(rec["right"]),
        left_valid=bool(rec["left_valid"]),
        right_valid=bool(rec["right_valid"]),
    )


def _waypoint_rec(w: Waypoint):
    return {
        "kind": w.kind.value,
        "t": _round_sig(w.timestamp),
        "left": _pose_rec(w.left),
        "right": _pose_rec(w.right),
        "left_visible": w.left_visible,
        "right_visible": w.right_visible,
    }


def _waypoint_from(rec):
    return Waypoint(
        kind=WaypointKind(rec["kind"]),
        timestamp=float(rec["t"]),
        left=_pose_from(rec["left"]),
        right=_pose_from(rec["right"]),
        left_visible=bool(rec["left_visible"]),
        right_visible=bool(rec["right_visible"]),
    )


def sample_to_record(s: TrajectorySample) -> dict:
    return {
        "record": "sample",
        "sample_id": s.sample_id,
        "scene_id": s.scene_id,
        "intent": s.intent,
        "action_phrase": s.action_phrase,
        "context_features": _round_list(s.context_features),
        "camera": {
            "fx": s.camera.fx,
            "fy": s.camera.fy,
            "cx": s.camera.cx,
            "cy": s.camera.cy,
            "width": s.camera.width,
            "height": s.camera.height,
        },
        "past": [_state_rec(st) for st in s.past],
        "future": [_state_rec(st) for st in s.future],
        "waypoints": [_waypoint_rec(w) for w in s.waypoints],
        "stages": {
            "approach": None if s.stages.approach is None else [_round_sig(v) for v in s.stages.approach],
            "manipulation": [_round_sig(v) for v in s.stages.manipulation],
        },
    }


def sample_from_record(rec: dict) -> TrajectorySample:
    wps = {WaypointKind(w["kind"]): _waypoint_from(w) for w in rec["waypoints"]}
    cam = rec["camera"]
    stages = rec["stages"]
    return TrajectorySample(
        sample_id=rec["sample_id"],
        scene_id=rec["scene_id"],
        intent=rec["intent"],
        action_phrase=rec["action_phrase"],
        context_features=np.asarray(rec["context_features"], dtype=np.float64),
        past=[_state_from(st) for st in rec["past"]],
        future=[_state_from(st) for st in rec["future"]],
        waypoints=WaypointSet(
            start=wps[WaypointKind.START],
            contact=wps[WaypointKind.CONTACT],
            end=wps[WaypointKind.END],
        ),
        stages=StageLabels(
            manipulation=tuple(stages["manipulation"]),
            approach=None if stages["approach"] is None else tuple(stages["approach"]),
        ),
        camera=CameraIntrinsics(
            fx=cam["fx"], fy=cam["fy"], cx=cam["cx"], cy=cam["cy"],
            width=cam["width"], height=cam["height"],
        ),
    )


def write_samples(samples, path):
    """Write samples as JSONL with a schema-version header record."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"record": "header", "schema": SCHEMA_NAME, "version": SCHEMA_VERSION}) + "\n")
        for s in samples:
            fh.write(json.dumps(sample_to_record(s)) + "\n")


def read_samples(path):
    """Read a dataset file; returns (samples, violations).

    Malformed lines and records that fail validate_sample are reported in
    violations (with line number and byte offset) and excluded; valid records
    are kept. Raises ValueError for a missing or unsupported schema header.
    """
    samples, violations = [], []
    offset = 0
    with open(path, "rb") as fh:
        raw_lines = fh.readlines()
    header = None
    for lineno, raw in enumerate(raw_lines, start=1):
        line_offset = offset
        offset += len(raw)
        text = raw.decode("utf-8", errors="replace").strip()
        if not text:
            continue
        try:
            rec = json.loads(text)
        except json.JSONDecodeError as exc:
            violations.append(
                f"line {lineno} (byte offset {line_offset + exc.pos}): malformed JSON: {exc.msg}"
            )
            continue
        if header is None:
            if not (isinstance(rec, dict) and rec.get("record") == "header"):
                raise ValueError(f"{path}: missing schema header record")
            if rec.get("schema") != SCHEMA_NAME or rec.get("version") != SCHEMA_VERSION:
                raise ValueError(
                    f"{path}: unsupported schema {rec.get('schema')!r} v{rec.get('version')!r}"
                )
            header = rec
            continue
        try:
            sample = sample_from_record(rec)
        except (KeyError, TypeError, ValueError) as exc:
            violations.append(f"line {lineno} (byte offset {line_offset}): bad record: {exc}")
            continue
        problems = validate_sample(sample)
        if problems:
            violations.append(
                f"line {lineno} (sample {sample.sample_id}): " + "; ".join(problems)
            )
            continue
        samples.append(sample)
    if header is None:
        raise ValueError(f"{path}: empty file, no schema header")
    return samples, violations


# -- manifest -----------------------------------------------------------------------

@dataclass
class DatasetManifest:
    """Normalization constants and bookkeeping for one dataset."""

    name: str
    n_samples: int
    scene_ids: list
    pos_mean: np.ndarray  # (3,)
    pos_std: np.ndarray  # (3,)
    fps: int = FPS
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.pos_mean = np.asarray(self.pos_mean, dtype=np.float64)
        self.pos_std = np.asarray(self.pos_std, dtype=np.float64)
        if np.any(self.pos_std <= 0):
            raise ValueError("pos_std components must be positive")
        if self.fps != FPS:
            raise ValueError(f"fps must be {FPS}")

    @staticmethod
    def identity(name="identity"):
        return DatasetManifest(name, 0, [], np.zeros(3), np.ones(3))

    def to_json(self):
        return json.dumps(
            {
                "name": self.name,
                "n_samples": self.n_samples,
                "scene_ids": sorted(self.scene_ids),
                "pos_mean": _round_list(self.pos_mean),
                "pos_std": _round_list(self.pos_std),
                "fps": self.fps,
                "schema_version": self.schema_version,
            },
            indent=2,
            sort_keys=True,
        )

    @staticmethod
    def from_json(text):
        d = json.loads(text)
        return DatasetManifest(
            name=d["name"],
            n_samples=d["n_samples"],
            scene_ids=d["scene_ids"],
            pos_mean=d["pos_mean"],
            pos_std=d["pos_std"],
            fps=d["fps"],
            schema_version=d["schema_version"],
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")

    @staticmethod
    def load(path):
        with open(path, "r", encoding="utf-8") as fh:
            return DatasetManifest.from_json(fh.read())


def compute_manifest(samples, name) -> DatasetManifest:
    """Per-axis position mean/std over every valid hand state in `samples`.

    Pass the finetune (training) split only: normalization constants are
    frozen into the manifest so evaluation data never leaks into them.
    """
    samples = list(samples)
    chunks = []
    for s in samples:
        for states in (s.past, s.future):
            pos, _, valid = states_to_arrays(states)
            chunks.append(pos[valid])
    allpos = np.concatenate(chunks, axis=0)
    std = np.maximum(allpos.std(axis=0), 1e-6)
    return DatasetManifest(
        name=name,
        n_samples=len(samples),
        scene_ids=sorted({s.scene_id for s in samples}),
        pos_mean=allpos.mean(axis=0),
        pos_std=std,
    )


def manifest_hash(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


# -- scene splits ----------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """Scene-level split fractions; scenes, not samples, are partitioned."""

    pretrain: float = 0.64
    finetune: float = 0.31
    test: float = 0.05

    def __post_init__(self):
        total = self.pretrain + self.finetune + self.test
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {total}")
        if min(self.pretrain, self.finetune, self.test) < 0:
            raise ValueError("fractions must be nonnegative")


def make_splits(scene_ids, spec: SplitSpec, seed):
    """Partition scene ids into pretrain/finetune/test with largest-remainder sizing.

    Deterministic given seed; every scene lands in exactly one split and
    realized sizes match the fractions within one scene.
    """
    scene_ids = sorted(set(scene_ids))
    n = len(scene_ids)
    if n < 3:
        raise ValueError("need at least 3 scenes to split")
    fractions = [spec.pretrain, spec.finetune, spec.test]
    raw = [f * n for f in fractions]
    sizes = [math.floor(r) for r in raw]
    remainders = [r - s for r, s in zip(raw, sizes)]
    for _ in range(n - sum(sizes)):
        i = int(np.argmax(remainders))
        sizes[i] += 1
        remainders[i] = -1.0
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [scene_ids[i] for i in order]
    out, cursor = {}, 0
    for name, size in zip(("pretrain", "finetune", "test"), sizes):
        out[name] = sorted(shuffled[cursor : cursor + size])
        cursor += size
    return out


# -- dataset statistics --------------------------------------------------------------------

def dataset_stats(samples, duration_threshold=2.0, disp_threshold=0.2, rot_threshold=60.0):
    """Duration / displacement / rotation summary over a dataset.

    Per sample: future duration (seconds); mean over valid hands of the
    start-to-end displacement of the future trajectory; mean over valid hands
    of accumulated frame-to-frame geodesic rotation (degrees). Returns the
    fraction of samples exceeding each threshold plus serializable histograms.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("dataset_stats requires at least one sample")
    durations, disps, rots = [], [], []
    for s in samples:
        pos, rot6, valid = states_to_arrays(s.future)
        durations.append(s.future[-1].timestamp)
        hands_disp, hands_rot = [], []
        for h in range(2):
            if not np.all(valid[:, h]):
                continue
            hands_disp.append(float(np.linalg.norm(pos[-1, h] - pos[0, h])))
            mats = geometry.rot6d_to_matrix(rot6[:, h])
            steps = geometry.geodesic_degrees(mats[:-1], mats[1:])
            hands_rot.append(float(np.sum(steps)))
        disps.append(float(np.mean(hands_disp)) if hands_disp else 0.0)
        rots.append(float(np.mean(hands_rot)) if hands_rot else 0.0)

    def hist(values, edges):
        counts, _ = np.histogram(values, bins=edges)
        return {"bin_edges": list(map(float, edges)), "counts": counts.tolist()}

    durations, disps, rots = map(np.asarray, (durations, disps, rots))
    return {
        "n_samples": len(samples),
        "frac_duration_gt": float(np.mean(durations > duration_threshold)),
        "frac_displacement_gt": float(np.mean(disps > disp_threshold)),
        "frac_rotation_gt": float(np.mean(rots > rot_threshold)),
        "thresholds": {
            "duration_s": duration_threshold,
            "displacement_m": disp_threshold,
            "rotation_deg": rot_threshold,
        },
        "histograms": {
            "duration_s": hist(durations, np.linspace(0.0, 5.0, 26)),
            "displacement_m": hist(disps, np.linspace(0.0, 1.0, 26)),
            "rotation_deg": hist(rots, np.linspace(0.0, 360.0, 25)),
        },
    }


# -- deterministic intent embedding -----------------------------------------------------------

def intent_embedding(text, dim=DEFAULT_EMB_DIM):
    """Deterministic hashed bag-of-tokens embedding, L2-normalized.

    Each lowercase whitespace token hashes (SHA-1, salt-free) to one index
    and a sign; token vectors accumulate and the result is normalized, so
    shared tokens push texts toward higher cosine similarity.
    """
    if not text or not text.strip():
        raise ValueError("intent text must be non-empty")
    vec = np.zeros(dim, dtype=np.float64)
    for token in text.lower().split():
        digest = hashlib.sha1(token.encode("utf-8")).digest()
        idx = int.from_bytes(digest[:4], "big") % dim
        sign = 1.0 if digest[4] % 2 == 0 else -1.0
        vec[idx] += sign
    n = np.linalg.norm(vec)
    if n == 0.0:
        # pathological cancellation; pin a stable nonzero direction
        vec[0] = 1.0
        n = 1.0
    return vec / n


# -- synthetic data -------------------------------------------------------------------------

_VERBS = [("grab", "grabs"), ("lift", "lifts"), ("move", "moves"), ("push", "pushes"), ("open", "opens")]
_COLORS = ["red", "blue", "green", "yellow", "white", "black"]
_NOUNS = ["cup", "bowl", "box", "bottle", "plate", "jar"]

_IDENT6 = np.array([1.0, 0, 0, 0, 1.0, 0])


def _grid_time(k):
    return round(k / FPS, 6)


def _smoothstep(s):
    return 3.0 * s**2 - 2.0 * s**3


def _bezier(p0, p1, p2, p3, s):
    u = 1.0 - s
    return (u**3) * p0 + 3 * (u**2) * s * p1 + 3 * u * (s**2) * p2 + (s**3) * p3


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for the parametric reach-then-manipulate generator."""

    n_scenes: int
    goals_per_scene: int = 1
    noise_pos: float = 0.0
    past_len: int = 5
    max_future_steps: int = 20
    ctx_dim: int = DEFAULT_CTX_DIM
    min_goal_separation: float = 0.3
    min_reach: float = 0.25

    def __post_init__(self):
        if self.goals_per_scene not in (1, 2):
            raise ValueError("goals_per_scene must be 1 or 2")
        if self.max_future_steps < 7:
            raise ValueError("need at least 7 future steps for approach + manipulation")


def _scene_goals(rng, start, spec):
    """Draw contact positions at least min_reach from start, pairwise separated."""
    goals = []
    while len(goals) < spec.goals_per_scene:
        g = np.array(
            [rng.uniform(-0.35, 0.35), rng.uniform(-0.2, 0.3), rng.uniform(0.35, 0.85)]
        )
        if np.linalg.norm(g - start) < spec.min_reach:
            continue
        if any(np.linalg.norm(g - g0) < spec.min_goal_separation for g0 in goals):
            continue
        goals.append(g)
    return goals


def _random_rotation6d(rng):
    a = rng.normal(size=3)
    a /= np.linalg.norm(a)
    angle = rng.uniform(0.0, 180.0)
    return geometry.matrix_to_rot6d(geometry.rotation_about_axis(a, angle))


def generate_synthetic(spec: SyntheticSpec, seed=0):
    """Parametric reach-then-manipulate dataset.

    Per scene: a manipulating hand follows a cubic arc from its rest pose to
    a contact pose (approach), then oscillates or twists at the goal
    (manipulation); the idle hand sways gently in place. Waypoints sit at the
    exact stage-boundary frames. Two-goal scenes emit two samples sharing
    identical past motion and context features but different intent text and
    goal, at least min_goal_separation apart.
    """
    rng = np.random.default_rng(seed)
    samples = []
    for scene_idx in range(spec.n_scenes):
        scene_id = f"scene{scene_idx:04d}"
        ctx = rng.normal(size=spec.ctx_dim)
        manip_side = "left" if rng.uniform() < 0.5 else "right"
        sign = -1.0 if manip_side == "left" else 1.0
        start_manip = np.array(
            [sign * 0.15 + rng.normal(scale=0.03), 0.05 + rng.normal(scale=0.03), 0.45 + rng.normal(scale=0.05)]
        )
        start_idle = np.array([-sign * 0.15, 0.05, 0.45]) + rng.normal(scale=0.02, size=3)
        rot_start_manip = _random_rotation6d(rng)
        rot_idle = _random_rotation6d(rng)
        goals = _scene_goals(rng, start_manip, spec)

        # timing: approach + manipulation fit inside the future horizon
        max_total = spec.max_future_steps
        ta_steps = int(rng.integers(4, min(12, max_total - 3) + 1))
        tm_steps = int(rng.integers(3, min(8, max_total - ta_steps) + 1))
        verb, verb3 = _VERBS[int(rng.integers(len(_VERBS)))]
        noun = _NOUNS[int(rng.integers(len(_NOUNS)))]
        colors = rng.choice(len(_COLORS), size=spec.goals_per_scene, replace=False)

        # mode + rotation plan are shared across the scene's goals
        mode = "oscillate" if rng.uniform() < 0.5 else "rotate"
        twist_axis = rng.normal(size=3)
        twist_axis /= np.linalg.norm(twist_axis)
        approach_twist = rng.uniform(15.0, 60.0)
        manip_twist = rng.uniform(30.0, 80.0)
        osc_dir = rng.normal(size=3)
        osc_dir /= np.linalg.norm(osc_dir)
        osc_amp = rng.uniform(0.015, 0.04)
        arc_dir = rng.normal(size=3)
        arc_dir /= np.linalg.norm(arc_dir)
        arc_amp = rng.uniform(0.03, 0.1)

        # shared past: gentle drift ending exactly at the rest pose
        past = []
        for i in range(spec.past_len):
            t = _grid_time(-(spec.past_len - 1 - i))
            drift = 0.01 * (spec.past_len - 1 - i)
            p_manip = start_manip - drift * np.array([0.2, 0.1, 0.3])
            p_idle = start_idle + 0.002 * np.sin(2.1 * t) * np.ones(3)
            pose_m = Pose6DoF(p_manip, rot_start_manip)
            pose_i = Pose6DoF(p_idle, rot_idle)
            left, right = (pose_m, pose_i) if manip_side == "left" else (pose_i, pose_m)
            past.append(BiHandState(timestamp=t, left=left, right=right))

        for goal_idx, goal in enumerate(goals):
            color = _COLORS[int(colors[goal_idx])]
            obj = f"{color} {noun}"
            intent = f"{verb} the {obj}"
            action_phrase = f"{manip_side} hand {verb3} the {obj}"

            rot0 = geometry.rot6d_to_matrix(rot_start_manip)
            rot_contact = geometry.rotation_about_axis(twist_axis, approach_twist) @ rot0
            goal_rng = np.random.default_rng(rng.integers(2**63) + goal_idx)

            future = []
            for k in range(1, ta_steps + tm_steps + 1):
                t = _grid_time(k)
                if k <= ta_steps:
                    s = k / ta_steps
                    ctrl = 0.25 * (goal - start_manip)
                    p1 = start_manip + ctrl + arc_amp * arc_dir
                    p2 = goal - ctrl + arc_amp * arc_dir
                    p_manip = _bezier(start_manip, p1, p2, goal, _smoothstep(s))
                    m = geometry.slerp_matrices(rot0, rot_contact, _smoothstep(s))
                else:
                    s = (k - ta_steps) / tm_steps
                    if mode == "oscillate":
                        p_manip = goal + osc_amp * np.sin(2.0 * np.pi * s) * osc_dir
                        m = rot_contact
                    else:
                        p_manip = goal
                        m = geometry.rotation_about_axis(twist_axis, manip_twist * s) @ rot_contact
                if spec.noise_pos > 0:
                    p_manip = p_manip + goal_rng.normal(scale=spec.noise_pos, size=3)
                p_idle = start_idle + 0.002 * np.sin(2.1 * t) * np.ones(3)
                pose_m = Pose6DoF(p_manip, geometry.matrix_to_rot6d(m))
                pose_i = Pose6DoF(p_idle, rot_idle)
                left, right = (pose_m, pose_i) if manip_side == "left" else (pose_i, pose_m)
                future.append(BiHandState(timestamp=t, left=left, right=right))

            t_contact = _grid_time(ta_steps)
            t_end = _grid_time(ta_steps + tm_steps)
            idle_visible = goal_rng.uniform() > 0.15

            def wp(kind, t, state):
                lv, rv = True, True
                if not idle_visible:
                    lv = manip_side == "left"
                    rv = manip_side == "right"
                return Waypoint(kind, t, state.left, state.right, left_visible=lv, right_visible=rv)

            samples.append(
                TrajectorySample(
                    sample_id=f"{scene_id}_g{goal_idx}",
                    scene_id=scene_id,
                    intent=intent,
                    action_phrase=action_phrase,
                    context_features=ctx,
                    past=past,
                    future=future,
                    waypoints=WaypointSet(
                        start=wp(WaypointKind.START, 0.0, past[-1]),
                        contact=wp(WaypointKind.CONTACT, t_contact, future[ta_steps - 1]),
                        end=wp(WaypointKind.END, t_end, future[-1]),
                    ),
                    stages=StageLabels(
                        approach=(0.0, t_contact), manipulation=(t_contact, t_end)
                    ),
                    camera=DEFAULT_CAMERA,
                )
            )
    return samples


# -- QA templates ------------------------------------------------------------------------------

def _fmt_pos(p):
    return f"({p[0]:.2f}, {p[1]:.2f}, {p[2]:.2f}) meters"


def _manipulating_hand(sample):
    pos, _, _ = states_to_arrays(sample.future)
    start, _, _ = states_to_arrays([sample.past[-1]])
    disp = np.linalg.norm(pos[-1] - start[0], axis=-1)  # (2,)
    if min(disp) > 0.05 and max(disp) / max(min(disp), 1e-9) < 2.0:
        return "both"
    return "left" if disp[0] >= disp[1] else "right"


def _object_phrase(action_phrase):
    if " the " in action_phrase:
        return "the " + action_phrase.split(" the ", 1)[1]
    return action_phrase


def serialize_past_motion(sample, digits=2):
    parts = []
    for st in sample.past:
        l, r = st.left.position, st.right.position
        parts.append(
            f"t={st.timestamp:.1f}s L({l[0]:.{digits}f}, {l[1]:.{digits}f}, {l[2]:.{digits}f}) "
            f"R({r[0]:.{digits}f}, {r[1]:.{digits}f}, {r[2]:.{digits}f})"
        )
    return "; ".join(parts)


@dataclass(frozen=True)
class QARecord:
    question: str
    answer: str
    category: str  # semantic | spatial | motion
    sample_id: str


def generate_qa(sample: TrajectorySample, motion_fraction=0.35):
    """Deterministic instantiation of the structured QA template families.

    Semantic questions cover intent, action, object, hand and causal
    phrasing; spatial questions query stage timing and wrist locations
    (approach variants appear only when the stage exists). A stable hashed
    subset of questions is duplicated with the serialized past motion
    prepended, forming the motion category; motion_fraction sets the target
    share of that augmentation. Answers are filled verbatim from sample
    fields; nothing is generated freely.
    """
    hand = _manipulating_hand(sample)
    side = hand if hand != "both" else "right"
    obj = _object_phrase(sample.action_phrase)
    intent = sample.intent
    wp = sample.waypoints
    records = []

    def add(question, answer, category):
        records.append(QARecord(question, answer, category, sample.sample_id))

    add("What is the intention goal of the next interaction?", intent, "semantic")
    add("What will be the next atomic action?", sample.action_phrase, "semantic")
    add(f"While pursuing '{intent}', which hand will be used next?", hand, "semantic")
    add(
        f"Given the intention to {intent}, what object will the hand interact with next?",
        obj,
        "semantic",
    )
    add("Why does the next action happen?", f"to {intent}", "semantic")

    m0, m1 = sample.stages.manipulation
    add(
        f"To achieve '{intent}', when will the manipulation start?",
        f"{m0:.1f} seconds",
        "spatial",
    )
    add(
        f"In order to {intent}, when will the manipulation end?",
        f"{m1:.1f} seconds",
        "spatial",
    )
    add(
        f"When attempting to {intent}, where will the {side} hand be at manipulation onset?",
        _fmt_pos(getattr(wp.contact, side).position),
        "spatial",
    )
    add(
        f"Where will the {side} hand complete the manipulation to accomplish '{intent}'?",
        _fmt_pos(getattr(wp.end, side).position),
        "spatial",
    )
    add(
        f"As part of '{intent}', what trajectory will the {side} hand follow during manipulation?",
        f"from {_fmt_pos(getattr(wp.contact, side).position)} to {_fmt_pos(getattr(wp.end, side).position)}",
        "spatial",
    )
    if sample.stages.approach is not None:
        a0, a1 = sample.stages.approach
        add(
            f"For the purpose of '{intent}', when does the approach end?",
            f"{a1:.1f} seconds",
            "spatial",
        )
        add(
            f"While pursuing '{intent}', where does the approach start?",
            _fmt_pos(getattr(wp.start, side).position),
            "spatial",
        )

    # motion category: stable hashed subset, past motion prepended
    past_text = serialize_past_motion(sample)
    out = list(records)
    for i, rec in enumerate(records):
        digest = hashlib.sha1(f"{sample.sample_id}|{i}".encode("utf-8")).digest()
        if digest[0] / 255.0 < motion_fraction:
            out.append(
                QARecord(
                    f"Given the past motion [{past_text}], {rec.question[0].lower()}{rec.question[1:]}",
                    rec.answer,
                    "motion",
                    sample.sample_id,
                )
            )
    return out


def qa_category_proportions(records):
    counts = {"semantic": 0, "spatial": 0, "motion": 0}
    for r in records:
        counts[r.category] += 1
    total = sum(counts.values())
    return {k: (v / total if total else 0.0) for k, v in counts.items()}


def write_qa(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "question": r.question,
                        "answer": r.answer,
                        "category": r.category,
                        "sample_id": r.sample_id,
                    }
                )
                + "\n"
            )


# -- external dataset adapter (skeleton) --------------------------------------------------------

EXTERNAL_FIELD_MAP = {
    # expected mapping from an external per-clip record to our sample fields;
    # positions are meters in the camera frame of the final pre-interaction
    # frame, rotations are row-major 3x3 or 6D, times are seconds at 10 FPS
    "sample_id": "clip identifier (string)",
    "scene_id": "scene / take identifier (string)",
    "intent": "high-level goal phrase",
    "action_phrase": "atomic interaction phrase",
    "wrist_pos": "(T, 6) [left xyz, right xyz]",
    "wrist_rot6d": "(T, 12) [left 6d, right 6d]",
    "timestamps": "(T,) seconds, final past frame at 0",
    "valid": "(T, 2) bool per-hand tracking validity",
    "split_index": "index of the first future frame",
    "camera": "dict fx fy cx cy width height (rectified pinhole)",
}


def adapt_external_record(rec, ctx_dim=DEFAULT_CTX_DIM):
    """Map an external record (see EXTERNAL_FIELD_MAP) onto a TrajectorySample.

    Untested against real capture data; waypoints are placed at the first
    future frame (START), the midpoint (CONTACT approximation) and the last
    frame (END) unless explicit stage annotations are provided under
    rec['stages'].
    """
    ts = np.asarray(rec["timestamps"], dtype=np.float64)
    pos = np.asarray(rec["wrist_pos"], dtype=np.float64)
    rot = np.asarray(rec["wrist_rot6d"], dtype=np.float64)
    valid = np.asarray(rec["valid"], dtype=bool)
    k = int(rec["split_index"])
    cam = rec["camera"]

    def mk_state(i):
        return BiHandState(
            timestamp=float(ts[i]),
            left=Pose6DoF(pos[i, :3], rot[i, :6]),
            right=Pose6DoF(pos[i, 3:], rot[i, 6:]),
            left_valid=bool(valid[i, 0]),
            right_valid=bool(valid[i, 1]),
        )

    states = [mk_state(i) for i in range(len(ts))]
    past, future = states[:k], states[k:]
    stages = rec.get("stages")
    if stages is not None:
        contact_t, end_t = stages["manipulation"]
        idx_c = int(np.argmin(np.abs(ts[k:] - contact_t)))
    else:
        idx_c = max(0, len(future) // 2 - 1)
        contact_t = future[idx_c].timestamp
        end_t = future[-1].timestamp

    def wp(kind, t, st):
        return Waypoint(kind, t, st.left, st.right, st.left_valid, st.right_valid)

    return TrajectorySample(
        sample_id=rec["sample_id"],
        scene_id=rec["scene_id"],
        intent=rec["intent"],
        action_phrase=rec["action_phrase"],
        context_features=np.zeros(ctx_dim),
        past=past,
        future=future,
        waypoints=WaypointSet(
            start=wp(WaypointKind.START, 0.0, past[-1]),
            contact=wp(WaypointKind.CONTACT, contact_t, future[idx_c]),
            end=wp(WaypointKind.END, end_t, future[-1]),
        ),
        stages=StageLabels(
            approach=(0.0, contact_t), manipulation=(float(contact_t), float(end_t))
        ),
        camera=CameraIntrinsics(**cam),
    )
