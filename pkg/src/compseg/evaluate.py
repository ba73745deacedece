"""meanIoU bucketed by occlusion level, mirroring the table layout
FG level columns (with BG sub-columns) plus a grand mean.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


def iou(a, b) -> float:
    """|a & b| / |a | b| over cell/pixel sets; two empty sets give 1.0."""
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    union = len(a | b)
    return len(a & b) / union


@dataclass
class LevelStats:
    amodal: list = field(default_factory=list)
    modal: list = field(default_factory=list)
    occluded: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.amodal)


@dataclass
class EvalReport:
    levels: dict  # (fg, bg) -> LevelStats
    missing: list

    def level_mean(self, key, kind: str = "amodal") -> float:
        return float(np.mean(getattr(self.levels[key], kind)))

    def grand_mean(self, kind: str = "amodal") -> float:
        vals = [v for st in self.levels.values() for v in getattr(st, kind)]
        return float(np.mean(vals)) if vals else float("nan")

    def fg_mean(self, fg: int, kind: str = "amodal") -> float:
        vals = [
            v
            for (f, _), st in self.levels.items()
            if f == fg
            for v in getattr(st, kind)
        ]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def total(self) -> int:
        return sum(st.count for st in self.levels.values())


def evaluate(predictions: dict, records: list) -> EvalReport:
    """Score predictions against ground truth, bucketed by (FG, BG) level.

    ``records`` carry GT LabelGrids and level tags (SceneRecord-compatible);
    ``predictions`` maps record index -> predicted LabelGrid on the same
    lattice. Records without a prediction are listed as missing and excluded.
    """
    levels: dict = {}
    missing = []
    for idx, rec in enumerate(records):
        if idx not in predictions:
            missing.append(idx)
            continue
        pred = predictions[idx].labels
        gt = rec.labels.labels
        if pred.shape != gt.shape:
            raise ValueError(f"record {idx}: prediction lattice mismatch")
        stats = levels.setdefault((rec.fg_level, rec.bg_level), LevelStats())
        stats.modal.append(_grid_iou(pred == 1, gt == 1))
        stats.occluded.append(_grid_iou(pred == -1, gt == -1))
        stats.amodal.append(_grid_iou((pred == 1) | (pred == -1), (gt == 1) | (gt == -1)))
    return EvalReport(levels=levels, missing=missing)


def _grid_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def render_table(report: EvalReport, title: str = "Amodal segmentation (meanIoU)") -> str:
    keys = sorted(report.levels.keys())
    header = ["FG/BG"] + [f"{f}/{b}" for f, b in keys] + ["Mean"]
    rows = []
    for kind in ("amodal", "modal", "occluded"):
        row = [kind] + [
            f"{report.level_mean(k, kind) * 100:.1f}" for k in keys
        ] + [f"{report.grand_mean(kind) * 100:.1f}"]
        rows.append(row)
    counts = ["count"] + [str(report.levels[k].count) for k in keys] + [str(report.total)]
    rows.append(counts)
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = [title]
    lines.append("  ".join(h.rjust(w) for h, w in zip(header, widths)))
    for row in rows:
        lines.append("  ".join(v.rjust(w) for v, w in zip(row, widths)))
    if report.missing:
        lines.append(f"missing predictions: {report.missing}")
    return "\n".join(lines)


def write_report_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fg_level", "bg_level", "count", "amodal", "modal", "occluded"])
        for (f, b), st in sorted(report.levels.items()):
            writer.writerow(
                [
                    f,
                    b,
                    st.count,
                    repr(float(np.mean(st.amodal))),
                    repr(float(np.mean(st.modal))),
                    repr(float(np.mean(st.occluded))),
                ]
            )
        writer.writerow(
            [
                "all",
                "all",
                report.total,
                repr(report.grand_mean("amodal")),
                repr(report.grand_mean("modal")),
                repr(report.grand_mean("occluded")),
            ]
        )
