"""Evaluation metrics: ADE / FDE / DTW / rotation error, best-of-K, waypoint errors.

All metrics run in double precision on plain states regardless of the model's
training precision. Hand validity is respected everywhere: a hand counts at a
timestep only if it is valid in both the prediction and the ground truth at
that step, and per-step errors average over the counted hands.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .trajectory import TrajectorySample, Waypoint, states_to_arrays

DTW_METADATA = {
    "dtw_steps": "match/insert/delete, equal weight",
    "dtw_normalization": "optimal path cost divided by path length",
}


class EmptyTrajectory(ValueError):
    """Metric called on a zero-length trajectory."""


class NotEnoughSamples(ValueError):
    """best_of_k asked for more predictions than were provided."""


def _paired_arrays(pred, gt):
    """Truncate pred to the GT horizon and pack both into arrays."""
    gt = list(gt)
    pred = list(pred)[: len(gt)]
    if len(pred) == 0 or len(gt) == 0:
        raise EmptyTrajectory("prediction and ground truth must be non-empty")
    if len(pred) < len(gt):
        raise ValueError(
            f"prediction ({len(pred)} steps) shorter than ground truth ({len(gt)})"
        )
    ppos, prot, pval = states_to_arrays(pred)
    gpos, grot, gval = states_to_arrays(gt)
    return ppos, prot, gpos, grot, pval & gval


def _masked_step_mean(dist, valid):
    """Average (T, 2) per-hand values over valid hands per step, then over steps."""
    counts = valid.sum(axis=1)
    keep = counts > 0
    if not np.any(keep):
        raise EmptyTrajectory("no step has a valid hand in both trajectories")
    per_step = np.where(valid, dist, 0.0).sum(axis=1)[keep] / counts[keep]
    return float(per_step.mean())


def ade(pred, gt):
    """Mean 3D wrist distance over all future timesteps and valid hands (meters)."""
    ppos, _, gpos, _, valid = _paired_arrays(pred, gt)
    dist = np.linalg.norm(ppos - gpos, axis=-1)
    return _masked_step_mean(dist, valid)


def fde(pred, gt):
    """ADE restricted to the final ground-truth timestep (meters)."""
    ppos, _, gpos, _, valid = _paired_arrays(pred, gt)
    dist = np.linalg.norm(ppos[-1:] - gpos[-1:], axis=-1)
    return _masked_step_mean(dist, valid[-1:])


def rot_error(pred, gt):
    """Mean geodesic rotation error over timesteps and valid hands (degrees)."""
    _, prot, _, grot, valid = _paired_arrays(pred, gt)
    pm = geometry.rot6d_to_matrix(prot)
    gm = geometry.rot6d_to_matrix(grot)
    ang = geometry.geodesic_degrees(pm, gm)
    return _masked_step_mean(ang, valid)


def _pairwise_cell_cost(ppos, pval, gpos, gval):
    """(n, m) cost matrix: hand-averaged distance, hands invalid on either side excluded."""
    dist = np.linalg.norm(ppos[:, None, :, :] - gpos[None, :, :, :], axis=-1)
    valid = pval[:, None, :] & gval[None, :, :]
    counts = valid.sum(axis=-1)
    cost = np.where(valid, dist, 0.0).sum(axis=-1)
    # a cell with no valid hand contributes zero cost (still consumes path length)
    return np.where(counts > 0, cost / np.maximum(counts, 1), 0.0)


def dtw_from_cost(cost):
    """Normalized DTW value of a precomputed cell-cost matrix.

    Dynamic program over (i, j, path length); the returned value is the
    minimum over all monotone warping paths of (path cost / path length),
    which makes values comparable across trajectory lengths.
    """
    n, m = cost.shape
    lmax = n + m - 1
    big = np.inf
    # acc[j, l]: min cost of a path ending at (i, j) with length l + 1
    prev = np.full((m, lmax), big)
    for i in range(n):
        cur = np.full((m, lmax), big)
        for j in range(m):
            if i == 0 and j == 0:
                cur[0, 0] = cost[0, 0]
                continue
            best = np.full(lmax - 1, big)
            if i > 0:
                best = np.minimum(best, prev[j, : lmax - 1])
                if j > 0:
                    best = np.minimum(best, prev[j - 1, : lmax - 1])
            if j > 0:
                best = np.minimum(best, cur[j - 1, : lmax - 1])
            cur[j, 1:] = best + cost[i, j]
        prev = cur
    lengths = np.arange(1, lmax + 1, dtype=np.float64)
    finite = np.isfinite(prev[m - 1])
    return float(np.min(prev[m - 1][finite] / lengths[finite]))


def dtw(pred, gt):
    """Dynamic-time-warping distance between trajectories (meters).

    Per-cell cost is the hand-averaged 3D distance; allowed moves are match,
    insert and delete with equal weight. See DTW_METADATA for the conventions
    recorded in serialized reports.
    """
    pred, gt = list(pred), list(gt)
    if len(pred) == 0 or len(gt) == 0:
        raise EmptyTrajectory("dtw requires non-empty trajectories")
    ppos, _, pval = states_to_arrays(pred)
    gpos, _, gval = states_to_arrays(gt)
    return dtw_from_cost(_pairwise_cell_cost(ppos, pval, gpos, gval))


TRAJECTORY_METRICS = {"ade": ade, "fde": fde, "dtw": dtw, "rot": rot_error}


def trajectory_errors(pred, gt):
    """All four trajectory metrics for one prediction, as a dict."""
    return {name: fn(pred, gt) for name, fn in TRAJECTORY_METRICS.items()}


def best_of_k(predictions, gt, k, joint_selection=False):
    """Best-of-k metric row over the first k predicted trajectories.

    By default each metric is minimized independently across the k samples.
    With joint_selection=True the trajectory with minimum ADE is selected and
    all four of its metrics are reported (the stricter alternative reading).
    """
    predictions = list(predictions)
    if k < 1 or len(predictions) < k:
        raise NotEnoughSamples(f"need at least k={k} predictions, got {len(predictions)}")
    rows = [trajectory_errors(p, gt) for p in predictions[:k]]
    if joint_selection:
        return rows[int(np.argmin([r["ade"] for r in rows]))]
    return {name: min(r[name] for r in rows) for name in TRAJECTORY_METRICS}


def contact_distance(pred_wp: Waypoint, gt: TrajectorySample):
    """Wrist-position error at the GT approach-completion instant (meters).

    Averaged over the hands visible in the GT CONTACT waypoint.
    """
    gt_wp = gt.waypoints.contact
    dists, count = 0.0, 0
    for side, visible in (("left", gt_wp.left_visible), ("right", gt_wp.right_visible)):
        if not visible:
            continue
        d = np.linalg.norm(getattr(pred_wp, side).position - getattr(gt_wp, side).position)
        dists += float(d)
        count += 1
    if count == 0:
        raise ValueError("GT CONTACT waypoint has no visible hand")
    return dists / count


def traj_warp_distance(pred_wps, gt_traj):
    """Mean distance from predicted waypoints to their nearest GT trajectory point.

    Per waypoint, each visible hand contributes its min distance over the GT
    steps where that hand is valid; hands are averaged, then waypoints.
    """
    pred_wps = list(pred_wps)
    gt_traj = list(gt_traj)
    if not pred_wps or not gt_traj:
        raise EmptyTrajectory("need at least one waypoint and a non-empty GT trajectory")
    gpos, _, gval = states_to_arrays(gt_traj)
    per_wp = []
    for wp in pred_wps:
        hand_dists = []
        for h, (side, visible) in enumerate(
            (("left", wp.left_visible), ("right", wp.right_visible))
        ):
            if not visible or not np.any(gval[:, h]):
                continue
            d = np.linalg.norm(gpos[gval[:, h], h] - getattr(wp, side).position, axis=-1)
            hand_dists.append(float(d.min()))
        if hand_dists:
            per_wp.append(float(np.mean(hand_dists)))
    if not per_wp:
        raise ValueError("no visible waypoint hand to evaluate")
    return float(np.mean(per_wp))


def waypoint_loc_time_rot(pred_wps, gt_wps):
    """(Loc meters, Time seconds, Rot degrees) over the CONTACT and END waypoints.

    Time is the mean absolute timestamp difference for CONTACT and END only;
    START is excluded because it is fixed at t = 0. Loc and Rot average over
    the hands visible in the ground-truth waypoint.
    """
    locs, times, rots = [], [], []
    for kind in ("contact", "end"):
        pw = getattr(pred_wps, kind)
        gw = getattr(gt_wps, kind)
        times.append(abs(pw.timestamp - gw.timestamp))
        for side, visible in (("left", gw.left_visible), ("right", gw.right_visible)):
            if not visible:
                continue
            pp, gp = getattr(pw, side), getattr(gw, side)
            locs.append(float(np.linalg.norm(pp.position - gp.position)))
            rots.append(
                float(
                    geometry.geodesic_degrees(
                        geometry.rot6d_to_matrix(pp.rotation),
                        geometry.rot6d_to_matrix(gp.rotation),
                    )
                )
            )
    loc = float(np.mean(locs)) if locs else 0.0
    rot = float(np.mean(rots)) if rots else 0.0
    return loc, float(np.mean(times)), rot


@dataclass
class MetricReport:
    """Aggregated trajectory metrics at each K, plus sample count."""

    values: dict  # {metric: {k: value}}
    n_samples: int
    metadata: dict = field(default_factory=lambda: dict(DTW_METADATA))

    def rows(self):
        """Stable (metric, K, value, n_samples) row order for serialization."""
        out = []
        for metric in ("ade", "fde", "dtw", "rot"):
            for k in sorted(self.values.get(metric, {})):
                out.append((metric, k, self.values[metric][k], self.n_samples))
        return out

    def to_json(self) -> str:
        payload = {
            "n_samples": self.n_samples,
            "metrics": {
                m: {str(k): v for k, v in sorted(ks.items())}
                for m, ks in self.values.items()
            },
            "metadata": self.metadata,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["metric", "K", "value", "n_samples"])
        for metric, k, value, n in self.rows():
            w.writerow([metric, k, f"{value:.9g}", n])
        return buf.getvalue()


@dataclass
class WaypointReport:
    contact: float
    traj: float
    loc: float
    time: float
    rot: float
    n_samples: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "contact": self.contact,
                "traj": self.traj,
                "loc": self.loc,
                "time": self.time,
                "rot": self.rot,
                "n_samples": self.n_samples,
            },
            indent=2,
            sort_keys=True,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["metric", "K", "value", "n_samples"])
        for name in ("contact", "traj", "loc", "time", "rot"):
            w.writerow([name, "", f"{getattr(self, name):.9g}", self.n_samples])
        return buf.getvalue()
