from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = ground truth and columns = prediction."""

    counts: np.ndarray

    @classmethod
    def from_predictions(cls, truth, pred, num_classes: int) -> "ConfusionMatrix":
        m = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(m, (np.asarray(truth), np.asarray(pred)), 1)
        return cls(m)

    @property
    def accuracy(self) -> float:
        total = self.counts.sum()
        return float(np.trace(self.counts) / total) if total else 0.0

    def recall(self) -> np.ndarray:
        rows = self.counts.sum(axis=1)
        return np.divide(np.diag(self.counts), rows, out=np.zeros(len(rows)), where=rows > 0)

    def to_csv(self, path) -> None:
        k = self.counts.shape[0]
        lines = ["truth," + ",".join(f"pred_{j}" for j in range(k))]
        for i in range(k):
            lines.append(f"{i}," + ",".join(str(int(v)) for v in self.counts[i]))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "ConfusionMatrix":
        rows = Path(path).read_text().strip().splitlines()[1:]
        return cls(np.array([[int(v) for v in r.split(",")[1:]] for r in rows], dtype=np.int64))
