"""From raw lanes to labeled alarms: confidence maps, clustering, gathering.

The prescreener slides a two-point joint pursuit along each lane and turns
inverse residuals into a confidence map.  Thresholding plus 1-D mean shift
produce alarm centroids; the surrounding samples (after lane-mean removal)
become the alarm data that downstream training and classification consume.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .dsrf import GroundTruthObject, Lane
from .solvers import Dictionary, SolverConfig, jomp
from .training import Bag

__all__ = [
    "ConfidenceMap",
    "Alarm",
    "prescreen",
    "percentile_tau",
    "threshold_confidences",
    "mean_shift",
    "lane_mean_subtract",
    "extract_alarms",
    "label_alarms",
    "alarms_to_bags",
]

DEFAULT_OFFSET_SAMPLES = 5
DEFAULT_RADIUS_M = 0.25
DEFAULT_HALO_M = 0.25
DEFAULT_BANDWIDTH_M = 0.25
DEFAULT_KEEP_FRACTION = 0.05


@dataclass
class ConfidenceMap:
    """Per-sample prescreener confidence along one lane."""

    lane_id: str
    positions_m: np.ndarray
    confidences: np.ndarray

    def __post_init__(self):
        self.positions_m = np.asarray(self.positions_m, dtype=float).reshape(-1)
        self.confidences = np.asarray(self.confidences, dtype=float).reshape(-1)
        if self.positions_m.size != self.confidences.size:
            raise ValueError("positions and confidences must align")
        if np.any(np.diff(self.positions_m) <= 0):
            raise ValueError("positions must be strictly increasing")
        if np.any(~np.isfinite(self.confidences)) or np.any(self.confidences < 0):
            raise ValueError("confidences must be finite and nonnegative")


@dataclass
class Alarm:
    """A candidate detection: centroid, gathered points, and label."""

    lane_id: str
    position_m: float
    points: np.ndarray
    point_rows: np.ndarray
    prescreener_conf: float
    label: str = "unlabeled"
    matched_type: str | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.point_rows = np.asarray(self.point_rows, dtype=int).reshape(-1)
        if self.points.shape[0] == 0:
            raise ValueError("alarms must contain at least one point")
        if self.points.shape[0] != self.point_rows.size:
            raise ValueError("point_rows must align with points")
        if self.label not in ("target", "false_alarm", "unlabeled"):
            raise ValueError(f"unknown alarm label {self.label!r}")


def prescreen(lane: Lane, dictionary: Dictionary, offset_samples: int = DEFAULT_OFFSET_SAMPLES,
              cfg: SolverConfig | None = None) -> ConfidenceMap:
    """Joint-pursuit confidence at every interior sample of a lane.

    For sample i the pair (i - offset, i + offset) is coded with one shared
    atom; the confidence is the mean of the capped inverse residuals.
    Samples too close to either lane end get confidence zero.
    """
    if offset_samples < 1:
        raise ValueError("offset_samples must be at least 1")
    if lane.n_samples <= 2 * offset_samples:
        raise ValueError("lane is too short for the requested probe offset")
    cfg = cfg or SolverConfig(k_max=1)
    feats = lane.feature_matrix()
    confidences = np.zeros(lane.n_samples)
    for i in range(offset_samples, lane.n_samples - offset_samples):
        _, _, conf = jomp(feats[i - offset_samples], feats[i + offset_samples], dictionary, cfg)
        confidences[i] = conf
    return ConfidenceMap(lane.lane_id, lane.positions_m.copy(), confidences)


def percentile_tau(cmap: ConfidenceMap, keep_fraction: float = DEFAULT_KEEP_FRACTION) -> float:
    """Threshold retaining roughly the top ``keep_fraction`` of confidences."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must lie in (0, 1]")
    return float(np.quantile(cmap.confidences, 1.0 - keep_fraction))


def threshold_confidences(cmap: ConfidenceMap, tau: float) -> np.ndarray:
    """Positions whose confidence meets the threshold, in lane order."""
    if not np.isfinite(tau):
        raise ValueError("tau must be finite")
    return cmap.positions_m[cmap.confidences >= tau]


def mean_shift(positions, bandwidth_m: float, tol: float = 1e-6, max_iter: int = 500) -> np.ndarray:
    """Flat-kernel 1-D mean shift; returns sorted unique cluster centroids.

    Every input position iterates toward the mean of its neighbors within
    the bandwidth until it moves less than ``tol``.  Converged modes closer
    than half a bandwidth are merged, keeping the lowest position.
    """
    pts = np.asarray(positions, dtype=float).reshape(-1)
    if pts.size == 0:
        raise ValueError("mean shift needs at least one position")
    if bandwidth_m <= 0:
        raise ValueError("bandwidth must be positive")
    modes = pts.copy()
    for _ in range(max_iter):
        within = np.abs(modes[:, None] - pts[None, :]) <= bandwidth_m
        counts = within.sum(axis=1)
        updated = (within @ pts) / counts
        shift = np.max(np.abs(updated - modes))
        modes = updated
        if shift < tol:
            break
    modes = np.sort(modes)
    centroids = []
    group_start = modes[0]
    last = modes[0]
    for m in modes[1:]:
        if m - last <= bandwidth_m / 2.0:
            last = m
            continue
        centroids.append(group_start)
        group_start = m
        last = m
    centroids.append(group_start)
    return np.asarray(centroids)


def lane_mean_subtract(lane: Lane) -> Lane:
    """Remove the per-frequency complex mean of the lane from every sample."""
    if lane.n_samples == 0:
        raise ValueError("lane has no samples")
    mean = lane.spectra.mean(axis=0)
    return Lane(lane.lane_id, lane.grid, lane.positions_m.copy(), lane.spectra - mean)


def extract_alarms(lane: Lane, centroids, radius_m: float = DEFAULT_RADIUS_M,
                   cmap: ConfidenceMap | None = None) -> list:
    """Gather the samples within ``radius_m`` of each centroid into alarms.

    The lane should already be mean-subtracted.  Each alarm's prescreener
    confidence is the maximum map confidence within the radius.  Centroids
    with no samples in range are skipped with a warning.
    """
    if radius_m <= 0:
        raise ValueError("radius must be positive")
    feats = lane.feature_matrix()
    alarms = []
    for c in np.asarray(centroids, dtype=float).reshape(-1):
        rows = np.flatnonzero(np.abs(lane.positions_m - c) <= radius_m)
        if rows.size == 0:
            warnings.warn(f"centroid {c:.3f} m on {lane.lane_id} has no samples in radius; skipped")
            continue
        conf = 0.0
        if cmap is not None:
            sel = np.abs(cmap.positions_m - c) <= radius_m
            if sel.any():
                conf = float(np.max(cmap.confidences[sel]))
        alarms.append(
            Alarm(
                lane_id=lane.lane_id,
                position_m=float(c),
                points=feats[rows],
                point_rows=rows,
                prescreener_conf=conf,
            )
        )
    return alarms


def label_alarms(alarms, ground_truth, halo_m: float = DEFAULT_HALO_M) -> list:
    """Label each alarm target or false alarm against the ground truth.

    An alarm is a target when it lies within the halo of any non-clutter
    object on its lane; the nearest such object supplies ``matched_type``.
    Clutter never confers a target label.
    """
    if halo_m <= 0:
        raise ValueError("halo must be positive")
    by_lane: dict[str, list[GroundTruthObject]] = {}
    for obj in ground_truth:
        by_lane.setdefault(obj.lane_id, []).append(obj)
    labeled = []
    for alarm in alarms:
        best = None
        for obj in by_lane.get(alarm.lane_id, ()):
            if obj.object_type == "CL":
                continue
            dist = abs(obj.position_m - alarm.position_m)
            if dist <= halo_m and (best is None or dist < best[0]):
                best = (dist, obj.object_type)
        labeled.append(
            replace(
                alarm,
                points=alarm.points.copy(),
                point_rows=alarm.point_rows.copy(),
                label="target" if best else "false_alarm",
                matched_type=best[1] if best else None,
            )
        )
    return labeled


def alarms_to_bags(alarms) -> list:
    """Turn labeled alarms into training bags; unlabeled alarms are rejected."""
    bags = []
    for i, alarm in enumerate(alarms):
        if alarm.label == "unlabeled":
            raise ValueError("alarms must be labeled before they become bags")
        bags.append(
            Bag(
                bag_id=f"{alarm.lane_id}:{i}",
                label="positive" if alarm.label == "target" else "negative",
                points=alarm.points,
                lane_id=alarm.lane_id,
                position_m=alarm.position_m,
            )
        )
    return bags
