"""Evaluation containers and renderers: confusion matrices, accuracy
tables, and side-by-side comparison against published baselines."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import BadLabel, EmptyMatrix
from .eyepipe import write_pgm

__all__ = ["ConfusionMatrix", "AccuracyTable", "compare_to_literature",
           "LITERATURE_BASELINES", "REFERENCE_EYE_RESNET50_ACC"]

# Published low-SNR accuracies cited for comparison; these are reported
# numbers from the literature, never measured by this toolkit.
LITERATURE_BASELINES = {
    "DBN (Li et al., 2019)": 0.10,
    "RNN (Hu et al., 2018)": 0.48,
    "LSTM (Zhang et al., 2018)": 0.12,
    "CLDNN (West & O'Shea, 2017)": 0.12,
}

# Published eye-diagram ResNet-50 accuracy at -20 dB over 14 classes.
REFERENCE_EYE_RESNET50_ACC = 0.936


class ConfusionMatrix:
    """M x M true-vs-predicted counts, tagged with an SNR or 'pooled'."""

    def __init__(self, class_names, tag="pooled", counts=None):
        self.class_names = list(class_names)
        self.tag = tag
        m = len(self.class_names)
        if counts is None:
            self.counts = np.zeros((m, m), dtype=np.int64)
        else:
            self.counts = np.asarray(counts, dtype=np.int64)
            if self.counts.shape != (m, m):
                raise ValueError("counts shape does not match class names")
            if np.any(self.counts < 0):
                raise ValueError("counts must be non-negative")

    @property
    def m(self) -> int:
        return len(self.class_names)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accumulate(self, true_label: int, predicted_label: int) -> "ConfusionMatrix":
        if not (0 <= true_label < self.m and 0 <= predicted_label < self.m):
            raise BadLabel(
                f"labels ({true_label}, {predicted_label}) outside [0, {self.m})")
        self.counts[true_label, predicted_label] += 1
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.class_names != self.class_names:
            raise ValueError("cannot merge matrices over different classes")
        self.counts += other.counts
        return self

    def accuracy(self) -> float:
        total = self.total
        if total == 0:
            raise EmptyMatrix("matrix has no counts")
        return float(np.trace(self.counts)) / total

    # --- CSV round-trip ---

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow([""] + self.class_names)
            for name, row in zip(self.class_names, self.counts):
                writer.writerow([name] + [int(v) for v in row])

    @classmethod
    def from_csv(cls, path, tag="pooled") -> "ConfusionMatrix":
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        names = rows[0][1:]
        counts = np.array([[int(v) for v in row[1:]] for row in rows[1:]],
                          dtype=np.int64)
        return cls(names, tag=tag, counts=counts)

    def render_heatmap(self, path, cell_px: int = 16) -> None:
        """Row-normalized rates as a P5 graymap, cell_px pixels per cell."""
        if self.total == 0:
            raise EmptyMatrix("cannot render an empty matrix")
        rates = self.counts.astype(np.float64)
        row_sums = rates.sum(axis=1, keepdims=True)
        row_sums[row_sums == 0] = 1.0
        rates /= row_sums
        img = np.rint(rates * 255).astype(np.uint8)
        img = np.repeat(np.repeat(img, cell_px, axis=0), cell_px, axis=1)
        write_pgm(path, img)


@dataclass
class AccuracyTable:
    """Per-SNR accuracy rows plus optional literature reference columns."""

    rows: list = field(default_factory=list)  # (snr_db, accuracy, count)
    literature: dict = field(default_factory=dict)

    def add(self, snr_db: float, accuracy: float, count: int) -> None:
        if not 0.0 <= accuracy <= 1.0:
            raise ValueError("accuracy must be in [0, 1]")
        if count <= 0:
            raise ValueError("count must be positive")
        self.rows.append((float(snr_db), float(accuracy), int(count)))

    @classmethod
    def from_matrices(cls, per_snr: dict,
                      literature: dict | None = None) -> "AccuracyTable":
        table = cls(literature=dict(literature or {}))
        for snr in sorted(per_snr):
            matrix = per_snr[snr]
            if matrix.total:
                table.add(snr, matrix.accuracy(), matrix.total)
        return table

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["snr_db", "accuracy", "count"])
            for snr, acc, count in self.rows:
                writer.writerow([snr, f"{acc:.6f}", count])


def compare_to_literature(table: AccuracyTable) -> str:
    """Side-by-side text: this run's per-SNR accuracy vs published numbers.

    Literature values are always labeled as reported, never as measured.
    """
    if not table.rows:
        raise ValueError("accuracy table is empty")
    lines = ["Per-SNR accuracy (this run):"]
    for snr, acc, count in table.rows:
        line = f"  {snr:+7.1f} dB  {100 * acc:5.1f}%  ({count} samples)"
        if snr == -20.0:
            line += (f"   [reference eye-diagram ResNet-50: "
                     f"{100 * REFERENCE_EYE_RESNET50_ACC:.1f}% "
                     f"(literature-reported, not reproduced)]")
        lines.append(line)
    if table.literature:
        lines.append("")
        lines.append("Published low-SNR baselines (reported, not measured here):")
        for name, acc in table.literature.items():
            lines.append(f"  {name}: {100 * acc:.1f}%")
    return "\n".join(lines)
