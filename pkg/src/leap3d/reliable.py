"""Reliable pseudo-ground-truth selection and external-prediction fusion.

Voxels with higher max probability tend to be more accurate, so a fixed
percentage of the most confident points per class is exported to train an
external 3D model. Its predictions come back as painted clouds and are
fused into the grid with their own temperature.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from ._fileutil import atomic_write_text
from .errors import ParameterError
from .io_formats import write_confidences, write_labels
from .painting import PaintedCloud
from .voxelgrid import DEFAULT_EPS, SparseVoxelGrid


@dataclass
class ReliableSelection:
    """Per-scan arrays of selected (point index, class, confidence)."""

    percent: float
    point_index: list[np.ndarray]  # one int64 array per scan
    classes: list[np.ndarray]  # one int32 array per scan
    confidence: list[np.ndarray]  # one float64 array per scan

    def total(self) -> int:
        return int(sum(a.shape[0] for a in self.point_index))

    def per_class_counts(self, num_classes: int) -> np.ndarray:
        out = np.zeros(num_classes, dtype=np.int64)
        for cls in self.classes:
            out += np.bincount(cls, minlength=num_classes)
        return out


def select_reliable(grid: SparseVoxelGrid, scans, percent: float,
                    ignore_label: int | None = None) -> ReliableSelection:
    """Top percent most confident labeled points per class, pooled globally.

    Pooling across the whole scan set (not per scan) keeps rare classes
    that only a few frames see. Per class, exactly ceil(percent% * count)
    points survive; confidence ties break by (scan index, point index).
    """
    if not (0.0 < percent <= 100.0):
        raise ParameterError(f"percent must be in (0, 100], got {percent}")
    scans = list(scans)
    if ignore_label is None:
        from .taxonomy import IGNORE_LABEL
        ignore_label = IGNORE_LABEL

    scan_ids, point_ids, classes, confs = [], [], [], []
    for si, (cloud, pose) in enumerate(scans):
        labels, conf = grid.query_labels(cloud, pose, ignore_label)
        valid = labels != ignore_label
        idx = np.flatnonzero(valid)
        scan_ids.append(np.full(idx.shape[0], si, dtype=np.int64))
        point_ids.append(idx.astype(np.int64))
        classes.append(labels[valid])
        confs.append(conf[valid])

    scan_ids = np.concatenate(scan_ids) if scan_ids else np.zeros(0, dtype=np.int64)
    point_ids = np.concatenate(point_ids) if point_ids else np.zeros(0, dtype=np.int64)
    classes = np.concatenate(classes) if classes else np.zeros(0, dtype=np.int32)
    confs = np.concatenate(confs) if confs else np.zeros(0, dtype=np.float64)

    chosen = np.zeros(classes.shape[0], dtype=bool)
    for cls in np.unique(classes):
        members = np.flatnonzero(classes == cls)
        n_keep = math.ceil(percent * members.shape[0] / 100.0)
        order = np.lexsort((point_ids[members], scan_ids[members], -confs[members]))
        chosen[members[order[:n_keep]]] = True

    sel_per_scan_idx = [np.zeros(0, dtype=np.int64) for _ in scans]
    sel_per_scan_cls = [np.zeros(0, dtype=np.int32) for _ in scans]
    sel_per_scan_conf = [np.zeros(0, dtype=np.float64) for _ in scans]
    for si in range(len(scans)):
        m = chosen & (scan_ids == si)
        order = np.argsort(point_ids[m], kind="stable")
        sel_per_scan_idx[si] = point_ids[m][order]
        sel_per_scan_cls[si] = classes[m][order].astype(np.int32)
        sel_per_scan_conf[si] = confs[m][order]
    return ReliableSelection(percent=percent, point_index=sel_per_scan_idx,
                             classes=sel_per_scan_cls, confidence=sel_per_scan_conf)


def export_reliable(selection: ReliableSelection, scans, out_dir, ignore_label: int) -> None:
    """Per scan: a label file with unselected points set to ignore, a f32
    confidence companion, and a JSON sidecar with the selected indices."""
    out_dir.mkdir(parents=True, exist_ok=True)
    for si, (cloud, _pose) in enumerate(scans):
        n = len(cloud)
        labels = np.full(n, ignore_label, dtype=np.int32)
        conf = np.zeros(n, dtype=np.float64)
        labels[selection.point_index[si]] = selection.classes[si]
        conf[selection.point_index[si]] = selection.confidence[si]
        stem = f"{si:06d}"
        write_labels(out_dir / f"{stem}.label", labels)
        write_confidences(out_dir / f"{stem}.conf", conf)
        sidecar = {
            "percent": selection.percent,
            "indices": selection.point_index[si].tolist(),
            "classes": selection.classes[si].tolist(),
            "confidences": [round(float(x), 9) for x in selection.confidence[si]],
        }
        atomic_write_text(out_dir / f"{stem}.json", json.dumps(sidecar))


def fuse_predictions(grid: SparseVoxelGrid, preds, tau: float,
                     eps: float = DEFAULT_EPS, jobs: int = 1) -> int:
    """Fuse external (PaintedCloud, world_from_sensor) predictions into the
    grid; same mechanics as camera fusion, with the source's temperature.
    One-hot predictions are fine: the clamp floors them internally."""
    return grid.fuse_scans(list(preds), tau=tau, eps=eps, jobs=jobs)


def one_hot_painted(points: np.ndarray, labels: np.ndarray, num_classes: int,
                    ignore_label: int) -> PaintedCloud:
    """Turn hard per-point labels into a painted cloud (ignores unlabeled)."""
    labels = np.asarray(labels).reshape(-1)
    labeled = labels != ignore_label
    probs = np.zeros((labels.shape[0], num_classes), dtype=np.float32)
    probs[np.flatnonzero(labeled), labels[labeled].astype(np.int64)] = 1.0
    return PaintedCloud(points=points, probs=probs, labeled=labeled)
