"""Lane-held-out cross-validation and clutter-aware ROC scoring."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Fold",
    "RocCurve",
    "ComparisonReport",
    "make_folds",
    "ignore_clutter",
    "roc",
    "pd_at_far",
    "subset_mask",
    "compare_report",
]

DEFAULT_FAR_GRID = (0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class Fold:
    test_lane_id: str
    train_lane_ids: tuple

    def __post_init__(self):
        if self.test_lane_id in self.train_lane_ids:
            raise ValueError("test lane must not appear in the training lanes")


def make_folds(lane_ids) -> list:
    """One fold per lane, training on all the others."""
    lane_ids = list(lane_ids)
    if len(lane_ids) < 2:
        raise ValueError("cross validation needs at least two lanes")
    if len(set(lane_ids)) != len(lane_ids):
        raise ValueError("lane ids must be unique")
    return [
        Fold(test_lane_id=lid, train_lane_ids=tuple(o for o in lane_ids if o != lid))
        for lid in lane_ids
    ]


def ignore_clutter(alarms, ground_truth, halo_m: float = 0.25) -> list:
    """Drop non-target alarms that sit within the halo of a clutter object."""
    if halo_m <= 0:
        raise ValueError("halo must be positive")
    clutter = {}
    for obj in ground_truth:
        if obj.object_type == "CL":
            clutter.setdefault(obj.lane_id, []).append(obj.position_m)
    kept = []
    for alarm in alarms:
        if alarm.label != "target" and any(
            abs(p - alarm.position_m) <= halo_m for p in clutter.get(alarm.lane_id, ())
        ):
            continue
        kept.append(alarm)
    return kept


@dataclass
class RocCurve:
    """Detection/false-alarm tradeoff over a descending threshold sweep."""

    thresholds: np.ndarray
    pd: np.ndarray
    far: np.ndarray
    auc: float

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=float)
        self.pd = np.asarray(self.pd, dtype=float)
        self.far = np.asarray(self.far, dtype=float)
        if not (self.thresholds.size == self.pd.size == self.far.size):
            raise ValueError("curve columns must align")


def _as_target_flags(labels) -> np.ndarray:
    flags = []
    for lab in labels:
        if isinstance(lab, str):
            if lab not in ("target", "false_alarm"):
                raise ValueError(f"unknown label {lab!r}")
            flags.append(lab == "target")
        else:
            flags.append(bool(lab))
    return np.asarray(flags, dtype=bool)


def roc(scores, labels) -> RocCurve:
    """Alarm-level ROC with tied scores crossing each threshold together.

    pd is the fraction of target alarms retained and far the fraction of
    false alarms retained; the sweep is padded with +/- infinity so curves
    span (0, 0) to (1, 1).  The area uses the trapezoid rule.
    """
    scores = np.asarray(scores, dtype=float).reshape(-1)
    flags = _as_target_flags(labels)
    if scores.size != flags.size:
        raise ValueError("scores and labels must align")
    n_target = int(np.count_nonzero(flags))
    n_false = int(np.count_nonzero(~flags))
    if n_target == 0 or n_false == 0:
        raise ValueError("ROC needs at least one target and one false alarm")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_flags = flags[order]
    uniq, first_idx = np.unique(-sorted_scores, return_index=True)
    thresholds = [np.inf]
    pd = [0.0]
    far = [0.0]
    cum_t = np.cumsum(sorted_flags)
    cum_f = np.cumsum(~sorted_flags)
    boundaries = np.append(first_idx[1:], sorted_scores.size)
    for thr, last in zip(-uniq, boundaries):
        thresholds.append(float(thr))
        pd.append(cum_t[last - 1] / n_target)
        far.append(cum_f[last - 1] / n_false)
    thresholds.append(-np.inf)
    pd.append(1.0)
    far.append(1.0)
    far_arr = np.asarray(far)
    pd_arr = np.asarray(pd)
    auc = float(np.trapz(pd_arr, far_arr))
    return RocCurve(np.asarray(thresholds), pd_arr, far_arr, auc)


def pd_at_far(curve: RocCurve, far_value: float) -> float:
    """Largest pd achieved without exceeding the given false-alarm fraction."""
    ok = curve.far <= far_value + 1e-12
    return float(np.max(curve.pd[ok])) if ok.any() else 0.0


def subset_mask(labels, matched_types, object_type: str) -> np.ndarray:
    """Keep all false alarms plus the target alarms matched to one type."""
    flags = _as_target_flags(labels)
    types = np.asarray(matched_types, dtype=object)
    return ~flags | (types == object_type)


@dataclass
class ComparisonReport:
    """Prescreener-versus-classifier summary on one alarm population."""

    prescreener: RocCurve
    classifier: RocCurve
    pd_rows: list = field(default_factory=list)  # (far, pd_prescreener, pd_classifier)
    subsets: dict = field(default_factory=dict)  # type -> (RocCurve, RocCurve) | str notice
    n_targets: int = 0
    n_false: int = 0
    undetectable: list = field(default_factory=list)

    def to_text(self) -> str:
        lines = []
        lines.append(
            f"alarms scored: {self.n_targets} target / {self.n_false} false"
        )
        lines.append(
            f"AUC  prescreener={self.prescreener.auc:.6f}  classifier={self.classifier.auc:.6f}"
        )
        lines.append("PD at matched FAR:")
        lines.append("  FAR     prescreener  classifier")
        for far_v, pd_pre, pd_clf in self.pd_rows:
            lines.append(f"  {far_v:<7.3f} {pd_pre:<12.4f} {pd_clf:.4f}")
        for otype, entry in self.subsets.items():
            if isinstance(entry, str):
                lines.append(f"{otype}-only: {entry}")
            else:
                pre, clf = entry
                lines.append(
                    f"{otype}-only AUC  prescreener={pre.auc:.6f}  classifier={clf.auc:.6f}"
                )
        if self.undetectable:
            lines.append(
                f"ground-truth targets with no alarm (detection ceiling): {len(self.undetectable)}"
            )
            for lane_id, pos, otype in self.undetectable:
                lines.append(f"  {lane_id} {pos:.3f} m {otype}")
        return "\n".join(lines) + "\n"

    def to_csv_rows(self) -> list:
        rows = [("metric", "subset", "far", "prescreener", "classifier")]
        rows.append(("auc", "all", "", repr(self.prescreener.auc), repr(self.classifier.auc)))
        for far_v, pd_pre, pd_clf in self.pd_rows:
            rows.append(("pd", "all", repr(far_v), repr(pd_pre), repr(pd_clf)))
        for otype, entry in self.subsets.items():
            if isinstance(entry, str):
                rows.append(("auc", otype, "", "", ""))
            else:
                pre, clf = entry
                rows.append(("auc", otype, "", repr(pre.auc), repr(clf.auc)))
        rows.append(("undetectable_targets", "all", "", str(len(self.undetectable)), ""))
        return rows


def compare_report(labels, matched_types, prescreener_scores, classifier_scores,
                   far_grid=DEFAULT_FAR_GRID, ground_truth=None, alarms=None,
                   subset_types=("HMT", "LMT"), halo_m: float = 0.25) -> ComparisonReport:
    """Build the side-by-side report both detectors are judged on.

    Both score lists must describe the same alarms.  Subset curves keep the
    full false-alarm population but only the target alarms matched to one
    object type; a subset with no targets is reported as omitted.  When the
    ground truth and alarms are supplied, targets that no alarm ever hit
    are listed to document the detection ceiling.
    """
    flags = _as_target_flags(labels)
    pre_curve = roc(prescreener_scores, flags)
    clf_curve = roc(classifier_scores, flags)
    report = ComparisonReport(
        prescreener=pre_curve,
        classifier=clf_curve,
        n_targets=int(np.count_nonzero(flags)),
        n_false=int(np.count_nonzero(~flags)),
    )
    for far_v in far_grid:
        report.pd_rows.append((far_v, pd_at_far(pre_curve, far_v), pd_at_far(clf_curve, far_v)))
    pre_scores = np.asarray(prescreener_scores, dtype=float)
    clf_scores = np.asarray(classifier_scores, dtype=float)
    for otype in subset_types:
        mask = subset_mask(flags, matched_types, otype)
        if not np.any(flags[mask]):
            report.subsets[otype] = "no targets of this type; subset curve omitted"
            continue
        report.subsets[otype] = (
            roc(pre_scores[mask], flags[mask]),
            roc(clf_scores[mask], flags[mask]),
        )
    if ground_truth is not None and alarms is not None:
        target_positions = [
            (a.lane_id, a.position_m) for a in alarms if a.label == "target"
        ]
        for obj in ground_truth:
            if obj.object_type == "CL":
                continue
            hit = any(
                lane == obj.lane_id and abs(pos - obj.position_m) <= halo_m
                for lane, pos in target_positions
            )
            if not hit:
                report.undetectable.append((obj.lane_id, obj.position_m, obj.object_type))
    return report
