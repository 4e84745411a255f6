"""Readers and writers for every on-disk format the pipeline exchanges.

All floats are serialized with ``repr`` (17 significant digits), so files
round-trip bit-exactly and repeated runs with one seed are byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .alarms import Alarm, ConfidenceMap
from .dsrf import (
    DsrfParams,
    FrequencyGrid,
    GroundTruthObject,
    Lane,
    LaneSpec,
    ObjectSpec,
    SceneConfig,
)
from .evaluation import RocCurve
from .solvers import Dictionary
from .training import Classifier, DataStats, Model, TrainConfig

__all__ = [
    "FileFormatError",
    "write_lane",
    "read_lane",
    "write_ground_truth",
    "read_ground_truth",
    "write_scene",
    "read_scene",
    "write_confidence_map",
    "read_confidence_map",
    "write_alarms",
    "read_alarms",
    "write_scores",
    "read_scores",
    "write_roc",
    "read_roc",
    "write_model",
    "read_model",
    "write_config_echo",
]


class FileFormatError(ValueError):
    """A file failed schema validation; the message carries the row number."""


def _fmt(x) -> str:
    return repr(float(x))


def _parse_floats(text, path, row):
    try:
        return [float(v) for v in text]
    except ValueError as exc:
        raise FileFormatError(f"{path}: row {row}: {exc}") from exc


# ---------------------------------------------------------------------------
# Lane files


def write_lane(path, lane: Lane) -> None:
    lines = ["# freqs_rad_s: " + ",".join(_fmt(w) for w in lane.grid.omegas)]
    feats = lane.feature_matrix()
    for pos, row in zip(lane.positions_m, feats):
        lines.append(",".join([_fmt(pos)] + [_fmt(v) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_lane(path, lane_id: str | None = None) -> Lane:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("# freqs_rad_s: "):
        raise FileFormatError(f"{path}: row 1: expected '# freqs_rad_s: ...' header")
    omegas = _parse_floats(lines[0][len("# freqs_rad_s: ") :].split(","), path, 1)
    grid = FrequencyGrid(np.asarray(omegas))
    n = grid.n
    positions = []
    spectra = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 1 + 2 * n:
            raise FileFormatError(
                f"{path}: row {i}: expected {1 + 2 * n} fields, found {len(fields)}"
            )
        values = _parse_floats(fields, path, i)
        positions.append(values[0])
        spectra.append(np.asarray(values[1 : 1 + n]) + 1j * np.asarray(values[1 + n :]))
    if not positions:
        raise FileFormatError(f"{path}: no data rows")
    return Lane(lane_id or path.stem, grid, np.asarray(positions), np.asarray(spectra))


# ---------------------------------------------------------------------------
# Ground truth


def write_ground_truth(path, objects) -> None:
    lines = ["lane_id,position_m,object_type"]
    for obj in objects:
        lines.append(f"{obj.lane_id},{_fmt(obj.position_m)},{obj.object_type}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_ground_truth(path) -> list:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != "lane_id,position_m,object_type":
        raise FileFormatError(f"{path}: row 1: expected header 'lane_id,position_m,object_type'")
    objects = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 3:
            raise FileFormatError(f"{path}: row {i}: expected 3 fields, found {len(fields)}")
        pos = _parse_floats(fields[1:2], path, i)[0]
        try:
            objects.append(GroundTruthObject(fields[0], pos, fields[2]))
        except ValueError as exc:
            raise FileFormatError(f"{path}: row {i}: {exc}") from exc
    return objects


# ---------------------------------------------------------------------------
# Scene configs


def write_scene(path, scene: SceneConfig) -> None:
    doc = {
        "seed": scene.seed,
        "spacing_m": float(scene.spacing_m),
        "lane_length_m": float(scene.lane_length_m),
        "noise_std": float(scene.noise_std),
        "drift_amplitude": float(scene.drift_amplitude),
        "dip_width_ratio": float(scene.dip_width_ratio),
        "freqs_rad_s": [float(w) for w in scene.grid.omegas],
        "lanes": [
            {
                "lane_id": spec.lane_id,
                "drift_corr_m": float(spec.drift_corr_m),
                "objects": [
                    {
                        "object_type": obj.object_type,
                        "position_m": float(obj.position_m),
                        "sigma_m": float(obj.sigma_m),
                        "c0": float(obj.params.c0),
                        "amplitudes": [float(c) for c in obj.params.cks],
                        "zetas": [float(z) for z in obj.params.zetas],
                    }
                    for obj in spec.objects
                ],
            }
            for spec in scene.lanes
        ],
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def read_scene(path) -> SceneConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise FileFormatError(f"{path}: scene config must be a mapping")
    try:
        grid = FrequencyGrid(np.asarray(doc["freqs_rad_s"], dtype=float))
        lanes = []
        for spec in doc["lanes"]:
            objects = [
                ObjectSpec(
                    object_type=o["object_type"],
                    position_m=float(o["position_m"]),
                    params=DsrfParams(
                        c0=float(o.get("c0", 0.0)),
                        cks=o.get("amplitudes", []),
                        zetas=o.get("zetas", []),
                    ),
                    sigma_m=float(o.get("sigma_m", 0.15)),
                )
                for o in spec.get("objects", [])
            ]
            lanes.append(
                LaneSpec(spec["lane_id"], objects, drift_corr_m=float(spec.get("drift_corr_m", 1.0)))
            )
        return SceneConfig(
            grid=grid,
            lanes=lanes,
            noise_std=float(doc.get("noise_std", 0.01)),
            drift_amplitude=float(doc.get("drift_amplitude", 0.35)),
            spacing_m=float(doc.get("spacing_m", 0.04)),
            lane_length_m=float(doc.get("lane_length_m", 100.0)),
            dip_width_ratio=float(doc.get("dip_width_ratio", 2.0)),
            seed=int(doc.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Confidence maps


def write_confidence_map(path, cmap: ConfidenceMap) -> None:
    lines = ["position_m,confidence"]
    for pos, conf in zip(cmap.positions_m, cmap.confidences):
        lines.append(f"{_fmt(pos)},{_fmt(conf)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_confidence_map(path, lane_id: str) -> ConfidenceMap:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != "position_m,confidence":
        raise FileFormatError(f"{path}: row 1: expected header 'position_m,confidence'")
    positions = []
    confidences = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 2:
            raise FileFormatError(f"{path}: row {i}: expected 2 fields, found {len(fields)}")
        pos, conf = _parse_floats(fields, path, i)
        positions.append(pos)
        confidences.append(conf)
    return ConfidenceMap(lane_id, np.asarray(positions), np.asarray(confidences))


# ---------------------------------------------------------------------------
# Alarms (summary CSV plus a sidecar with lane row indices per alarm)


def write_alarms(path, sidecar_path, alarms) -> None:
    lines = ["lane_id,position_m,prescreener_conf,label"]
    side = ["alarm_index,lane_id,row_indices"]
    for i, alarm in enumerate(alarms):
        lines.append(
            f"{alarm.lane_id},{_fmt(alarm.position_m)},{_fmt(alarm.prescreener_conf)},{alarm.label}"
        )
        side.append(f"{i},{alarm.lane_id}," + " ".join(str(r) for r in alarm.point_rows))
    Path(path).write_text("\n".join(lines) + "\n")
    Path(sidecar_path).write_text("\n".join(side) + "\n")


def read_alarms(path, sidecar_path, lanes_by_id) -> list:
    """Rebuild alarms from the summary and sidecar files.

    ``lanes_by_id`` must hold the mean-subtracted lanes the alarm points
    were originally gathered from.
    """
    path = Path(path)
    sidecar_path = Path(sidecar_path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != "lane_id,position_m,prescreener_conf,label":
        raise FileFormatError(
            f"{path}: row 1: expected header 'lane_id,position_m,prescreener_conf,label'"
        )
    side_lines = sidecar_path.read_text().splitlines()
    if not side_lines or side_lines[0] != "alarm_index,lane_id,row_indices":
        raise FileFormatError(
            f"{sidecar_path}: row 1: expected header 'alarm_index,lane_id,row_indices'"
        )
    rows_by_index = {}
    for i, line in enumerate(side_lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 3:
            raise FileFormatError(f"{sidecar_path}: row {i}: expected 3 fields")
        try:
            rows_by_index[int(fields[0])] = np.asarray(
                [int(v) for v in fields[2].split()], dtype=int
            )
        except ValueError as exc:
            raise FileFormatError(f"{sidecar_path}: row {i}: {exc}") from exc
    alarms = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 4:
            raise FileFormatError(f"{path}: row {i}: expected 4 fields, found {len(fields)}")
        lane_id, pos_s, conf_s, label = fields
        pos, conf = _parse_floats([pos_s, conf_s], path, i)
        alarm_index = i - 2
        if alarm_index not in rows_by_index:
            raise FileFormatError(f"{sidecar_path}: missing row indices for alarm {alarm_index}")
        if lane_id not in lanes_by_id:
            raise FileFormatError(f"{path}: row {i}: unknown lane {lane_id!r}")
        lane = lanes_by_id[lane_id]
        rows = rows_by_index[alarm_index]
        if rows.size and (rows.min() < 0 or rows.max() >= lane.n_samples):
            raise FileFormatError(f"{sidecar_path}: alarm {alarm_index}: row index out of range")
        try:
            alarms.append(
                Alarm(
                    lane_id=lane_id,
                    position_m=pos,
                    points=lane.feature_matrix()[rows],
                    point_rows=rows,
                    prescreener_conf=conf,
                    label=label,
                )
            )
        except ValueError as exc:
            raise FileFormatError(f"{path}: row {i}: {exc}") from exc
    return alarms


# ---------------------------------------------------------------------------
# Scores


def write_scores(path, alarms, scores) -> None:
    lines = ["lane_id,position_m,label,prescreener_conf,score"]
    for alarm, score in zip(alarms, scores):
        lines.append(
            f"{alarm.lane_id},{_fmt(alarm.position_m)},{alarm.label},"
            f"{_fmt(alarm.prescreener_conf)},{_fmt(score)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_scores(path) -> list:
    """Rows of (lane_id, position_m, label, prescreener_conf, score)."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != "lane_id,position_m,label,prescreener_conf,score":
        raise FileFormatError(f"{path}: row 1: unexpected scores header")
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 5:
            raise FileFormatError(f"{path}: row {i}: expected 5 fields, found {len(fields)}")
        pos, conf, score = _parse_floats([fields[1], fields[3], fields[4]], path, i)
        rows.append((fields[0], pos, fields[2], conf, score))
    return rows


# ---------------------------------------------------------------------------
# ROC curves


def write_roc(path, curve: RocCurve) -> None:
    lines = ["threshold,pd,far"]
    for thr, pd, far in zip(curve.thresholds, curve.pd, curve.far):
        lines.append(f"{_fmt(thr)},{_fmt(pd)},{_fmt(far)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_roc(path) -> RocCurve:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != "threshold,pd,far":
        raise FileFormatError(f"{path}: row 1: expected header 'threshold,pd,far'")
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 3:
            raise FileFormatError(f"{path}: row {i}: expected 3 fields, found {len(fields)}")
        rows.append(_parse_floats(fields, path, i))
    arr = np.asarray(rows)
    if arr.size == 0:
        raise FileFormatError(f"{path}: no data rows")
    auc = float(np.trapz(arr[:, 1], arr[:, 2]))
    return RocCurve(arr[:, 0], arr[:, 1], arr[:, 2], auc)


# ---------------------------------------------------------------------------
# Models


def write_model(path, model: Model) -> None:
    d = model.dictionary
    lines = ["tdefumi-model v1"]
    lines.append("freqs_rad_s: " + ",".join(_fmt(w) for w in model.grid.omegas))
    lines.append(f"L: {d.dim}")
    lines.append(f"T: {d.n_target}")
    lines.append(f"M: {d.n_background}")
    lines.append("dictionary:")
    for row in d.atoms:
        lines.append(",".join(_fmt(v) for v in row))
    lines.append("w: " + ",".join(_fmt(v) for v in model.classifier.weights))
    lines.append(f"psi: {_fmt(model.classifier.bias)}")
    lines.append("mu0: " + ",".join(_fmt(v) for v in model.stats.mu0))
    lines.append(f"n_target_points: {model.stats.n_target_points}")
    lines.append(f"n_background_points: {model.stats.n_background_points}")
    lines.append("objective_log: " + ",".join(_fmt(v) for v in model.objective_log))
    lines.append("config:")
    cfg = model.config
    lines.append(f"  n_target_atoms: {cfg.n_target_atoms}")
    lines.append(f"  n_background_atoms: {cfg.n_background_atoms}")
    lines.append(f"  mean_reg: {_fmt(cfg.mean_reg)}")
    lines.append(f"  classifier_ridge: {_fmt(cfg.classifier_ridge)}")
    lines.append(f"  smooth_reg: {_fmt(cfg.smooth_reg)}")
    lines.append(f"  sparse_penalty: {_fmt(cfg.sparse_penalty)}")
    lines.append(f"  posterior_scale: {_fmt(cfg.posterior_scale)}")
    lines.append(f"  balance_scale: {_fmt(cfg.balance_scale)}")
    lines.append(f"  batch_size: {cfg.batch_size}")
    lines.append(f"  n_epochs: {cfg.n_epochs}")
    lines.append(f"  learning_rate: {_fmt(cfg.learning_rate)}")
    lines.append(
        "  lr_decay_steps: " + ("none" if cfg.lr_decay_steps is None else str(cfg.lr_decay_steps))
    )
    lines.append(f"  grad_ridge: {_fmt(cfg.grad_ridge)}")
    lines.append(f"  tol: {_fmt(cfg.tol)}")
    lines.append(f"  seed: {cfg.seed}")
    Path(path).write_text("\n".join(lines) + "\n")


def _expect(lines, i, prefix, path):
    if i >= len(lines) or not lines[i].startswith(prefix):
        raise FileFormatError(f"{path}: row {i + 1}: expected '{prefix}...'")
    return lines[i][len(prefix) :]


def read_model(path) -> Model:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != "tdefumi-model v1":
        raise FileFormatError(f"{path}: row 1: expected 'tdefumi-model v1'")
    omegas = _parse_floats(_expect(lines, 1, "freqs_rad_s: ", path).split(","), path, 2)
    dim = int(_expect(lines, 2, "L: ", path))
    n_target = int(_expect(lines, 3, "T: ", path))
    n_background = int(_expect(lines, 4, "M: ", path))
    _expect(lines, 5, "dictionary:", path)
    atom_rows = []
    row_start = 6
    for r in range(dim):
        atom_rows.append(_parse_floats(lines[row_start + r].split(","), path, row_start + r + 1))
    i = row_start + dim
    weights = _parse_floats(_expect(lines, i, "w: ", path).split(","), path, i + 1)
    bias = float(_expect(lines, i + 1, "psi: ", path))
    mu0 = _parse_floats(_expect(lines, i + 2, "mu0: ", path).split(","), path, i + 3)
    n_target_points = int(_expect(lines, i + 3, "n_target_points: ", path))
    n_background_points = int(_expect(lines, i + 4, "n_background_points: ", path))
    log_text = _expect(lines, i + 5, "objective_log: ", path)
    objective_log = _parse_floats(log_text.split(","), path, i + 6) if log_text else []
    _expect(lines, i + 6, "config:", path)
    cfg_fields = {}
    for line in lines[i + 7 :]:
        if not line.strip():
            continue
        key, _, value = line.strip().partition(": ")
        cfg_fields[key] = value
    try:
        cfg = TrainConfig(
            n_target_atoms=int(cfg_fields["n_target_atoms"]),
            n_background_atoms=int(cfg_fields["n_background_atoms"]),
            mean_reg=float(cfg_fields["mean_reg"]),
            classifier_ridge=float(cfg_fields["classifier_ridge"]),
            smooth_reg=float(cfg_fields["smooth_reg"]),
            sparse_penalty=float(cfg_fields["sparse_penalty"]),
            posterior_scale=float(cfg_fields["posterior_scale"]),
            balance_scale=float(cfg_fields["balance_scale"]),
            batch_size=int(cfg_fields["batch_size"]),
            n_epochs=int(cfg_fields["n_epochs"]),
            learning_rate=float(cfg_fields["learning_rate"]),
            lr_decay_steps=None
            if cfg_fields["lr_decay_steps"] == "none"
            else int(cfg_fields["lr_decay_steps"]),
            grad_ridge=float(cfg_fields["grad_ridge"]),
            tol=float(cfg_fields["tol"]),
            seed=int(cfg_fields["seed"]),
        )
    except (KeyError, ValueError) as exc:
        raise FileFormatError(f"{path}: config block: {exc}") from exc
    atoms = np.asarray(atom_rows)
    if atoms.shape != (dim, n_target + n_background):
        raise FileFormatError(f"{path}: dictionary block has the wrong shape")
    return Model(
        dictionary=Dictionary(atoms=atoms, n_target=n_target, n_background=n_background),
        classifier=Classifier(weights=np.asarray(weights), bias=bias),
        config=cfg,
        stats=DataStats(np.asarray(mu0), n_target_points, n_background_points),
        grid=FrequencyGrid(np.asarray(omegas)),
        objective_log=objective_log,
    )


# ---------------------------------------------------------------------------
# Run config echoes


def write_config_echo(path, config: dict) -> None:
    """Record the fully resolved parameters of a CLI stage next to its outputs."""
    Path(path).write_text(yaml.safe_dump(config, sort_keys=True))
