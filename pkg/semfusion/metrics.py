"""Voxel classification metrics and the Report record."""

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np
import orjson

from semfusion.errors import DimensionError
from semfusion.semantics import BACKGROUND


@dataclass
class Report:
    strategy: str
    representation: str
    num_classes: int
    seeds: List[int]
    per_class_accuracy: List[Optional[float]]   # None for classes absent from the labels
    accuracy: float
    fg_accuracy: float
    fp_rate: float
    confusion: List[List[int]]                  # confusion[true][predicted]
    num_voxels: int
    attention: str = ""                         # DFF attention mode, empty without DFF
    steps: int = 0
    final_loss: Optional[float] = None
    wall_ms: float = 0.0
    deltas: Dict[str, float] = field(default_factory=dict)

    @property
    def variant(self) -> str:
        return f"{self.strategy}:{self.attention}" if self.attention else self.strategy

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> bytes:
        return orjson.dumps(self.to_dict(), option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2)

    def fingerprint(self) -> bytes:
        """Serialized report without wall-clock time; equal for identical runs."""
        data = self.to_dict()
        data.pop("wall_ms")
        return orjson.dumps(data, option=orjson.OPT_SORT_KEYS)

    def pair_confusion(self, a: int, b: int) -> float:
        """Fraction of voxels of class a or b predicted as the other one."""
        matrix = np.asarray(self.confusion)
        total = matrix[a].sum() + matrix[b].sum()
        return float(matrix[a, b] + matrix[b, a]) / float(total) if total else 0.0


def confusion_matrix(labels: np.ndarray, predictions: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape or labels.ndim != 1:
        raise DimensionError(f"labels {labels.shape} and predictions {predictions.shape} differ")
    for name, ids in (("label", labels), ("prediction", predictions)):
        if len(ids) and (ids.min() < 0 or ids.max() >= num_classes):
            raise DimensionError(f"{name} ids must lie in [0, {num_classes})")
    counts = np.bincount(labels * num_classes + predictions, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def _ratio(numerator, denominator) -> float:
    return float(numerator) / float(denominator) if denominator else 0.0


def compute_report(labels: np.ndarray, predictions: np.ndarray, num_classes: int,
                   strategy: str, representation: str, seeds: List[int]) -> Report:
    matrix = confusion_matrix(labels, predictions, num_classes)
    totals = matrix.sum(axis=1)
    per_class = [_ratio(matrix[c, c], totals[c]) if totals[c] else None for c in range(num_classes)]
    foreground = slice(BACKGROUND + 1, None)
    fg_correct = np.trace(matrix[foreground, foreground])
    background_to_fg = matrix[BACKGROUND, foreground].sum()
    return Report(
        strategy=str(strategy),
        representation=str(representation),
        num_classes=num_classes,
        seeds=[int(s) for s in seeds],
        per_class_accuracy=per_class,
        accuracy=_ratio(np.trace(matrix), matrix.sum()),
        fg_accuracy=_ratio(fg_correct, totals[foreground].sum()),
        fp_rate=_ratio(background_to_fg, totals[BACKGROUND]),
        confusion=matrix.tolist(),
        num_voxels=int(matrix.sum()),
    )
