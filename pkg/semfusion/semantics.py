"""
Semantic representations and box-derived ground truth.

Class 0 is background. Boxes carry a class id in [1, m-1]; a point takes the
class of the smallest-volume box containing it.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from semfusion.errors import DimensionError, FormatError, SemanticsError
from semfusion.geometry import PROBABILITY_TOL, PointCloud

BACKGROUND = 0
BOX_EPS = 1e-9


@dataclass(frozen=True)
class Box3D:
    """Oriented box: center and size in meters, yaw in radians about +z."""

    center: Tuple[float, float, float]
    size: Tuple[float, float, float]
    yaw: float
    class_id: int

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        object.__setattr__(self, "yaw", float(self.yaw))
        object.__setattr__(self, "class_id", int(self.class_id))
        if len(self.center) != 3 or len(self.size) != 3:
            raise SemanticsError("box center and size need three components")
        if min(self.size) <= 0:
            raise SemanticsError(f"box size must be strictly positive, got {self.size}")
        if self.class_id == BACKGROUND or self.class_id < 0:
            raise SemanticsError(f"box class id must be >= 1, got {self.class_id}")

    @property
    def volume(self) -> float:
        return self.size[0] * self.size[1] * self.size[2]

    @property
    def footprint_radius(self) -> float:
        return 0.5 * float(np.hypot(self.size[0], self.size[1]))

    def rotation(self) -> Rotation:
        return Rotation.from_euler("z", self.yaw)

    def to_local(self, points: np.ndarray) -> np.ndarray:
        """Coordinates in the box frame (rotated by -yaw about the center)."""
        return self.rotation().inv().apply(np.asarray(points, dtype=np.float64) - np.array(self.center))

    def corners(self) -> np.ndarray:
        half = np.array(self.size) / 2.0
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
        return self.rotation().apply(signs * half) + np.array(self.center)

    def shrunk(self, factor: float) -> "Box3D":
        return Box3D(self.center, tuple(s * factor for s in self.size), self.yaw, self.class_id)


def points_in_box(points: np.ndarray, box: Box3D) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        return np.zeros(0, dtype=bool)
    local = box.to_local(points)
    half = np.array(box.size) / 2.0 + BOX_EPS
    return np.all(np.abs(local) <= half, axis=1)


def point_in_box(point, box: Box3D) -> bool:
    """Boundary-inclusive containment test."""
    return bool(points_in_box(np.asarray(point)[None, :], box)[0])


def assign_boxes(points: np.ndarray, boxes: Sequence[Box3D]) -> np.ndarray:
    """Index of the smallest containing box per point, -1 when none contains it."""
    owner = np.full(len(points), -1, dtype=np.int64)
    by_volume = sorted(range(len(boxes)), key=lambda i: boxes[i].volume)
    for i in by_volume:
        inside = (owner < 0) & points_in_box(points, boxes[i])
        owner[inside] = i
    return owner


def one_hot(ids: np.ndarray, num_classes: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= num_classes):
        raise SemanticsError(f"class ids must lie in [0, {num_classes - 1}]")
    return np.eye(num_classes)[ids]


def label_ids_from_boxes(cloud: PointCloud, boxes: Sequence[Box3D], num_classes: int) -> np.ndarray:
    for box in boxes:
        if box.class_id >= num_classes:
            raise SemanticsError(f"box class {box.class_id} does not fit {num_classes} classes")
    owner = assign_boxes(cloud.points, boxes)
    classes = np.array([BACKGROUND] + [b.class_id for b in boxes], dtype=np.int64)
    return classes[owner + 1]


def labels_from_boxes(cloud: PointCloud, boxes: Sequence[Box3D], num_classes: int) -> np.ndarray:
    """N x m one-hot labels; points outside every box are background."""
    return one_hot(label_ids_from_boxes(cloud, boxes, num_classes), num_classes)


# --- Representations ---

class Representation(str, Enum):
    ID = "id"
    ONEHOT = "onehot"
    SCORE = "score"


def validate_scores(scores: np.ndarray, allow_zero_rows: bool = False) -> np.ndarray:
    """Check N x m rows are probability vectors (or all-zero, when allowed)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise DimensionError(f"scores must be N x m, got {scores.shape}")
    if np.any(scores < 0) or not np.all(np.isfinite(scores)):
        raise SemanticsError("scores must be finite and nonnegative")
    sums = scores.sum(axis=1)
    ok = np.abs(sums - 1.0) <= PROBABILITY_TOL
    if allow_zero_rows:
        ok |= sums == 0.0
    if not np.all(ok):
        raise SemanticsError(f"{int((~ok).sum())} score rows do not sum to 1")
    return scores


@dataclass
class EncodedSemantics:
    """Per-point semantics in one representation: N ints (ID) or N x m floats."""

    representation: Representation
    payload: np.ndarray

    def as_vectors(self, num_classes: int) -> np.ndarray:
        """N x m vectors; ID expands to one-hot."""
        if self.representation is Representation.ID:
            return one_hot(self.payload, num_classes)
        return self.payload


def encode(scores: np.ndarray, representation: Representation) -> EncodedSemantics:
    """SCORE keeps the rows, ONEHOT/ID take the argmax (ties to the lowest class)."""
    scores = np.asarray(scores, dtype=np.float64)
    representation = Representation(representation)
    if representation is Representation.SCORE:
        return EncodedSemantics(representation, scores.copy())
    ids = np.argmax(scores, axis=1)
    # all-zero rows (unpainted points) stay all-zero under ONEHOT
    empty = scores.sum(axis=1) == 0.0
    if representation is Representation.ID:
        return EncodedSemantics(representation, ids)
    vectors = np.eye(scores.shape[1])[ids]
    vectors[empty] = 0.0
    return EncodedSemantics(representation, vectors)


@dataclass
class PaintedPointCloud:
    """A cloud with 2D-painted and 3D semantic rows (N x m each)."""

    cloud: PointCloud
    sem2d: np.ndarray
    sem3d: np.ndarray

    def __post_init__(self):
        self.sem2d = validate_scores(self.sem2d, allow_zero_rows=True)
        self.sem3d = validate_scores(self.sem3d, allow_zero_rows=True)
        n = len(self.cloud)
        if self.sem2d.shape[0] != n or self.sem3d.shape[0] != n or self.sem2d.shape != self.sem3d.shape:
            raise DimensionError(
                f"semantic rows {self.sem2d.shape}/{self.sem3d.shape} do not match {n} points"
            )

    def __len__(self) -> int:
        return len(self.cloud)

    @property
    def num_classes(self) -> int:
        return self.sem2d.shape[1]

    def encoded(self, representation: Representation) -> "PaintedPointCloud":
        """Same cloud with both semantic sources re-encoded and expanded to vectors."""
        m = self.num_classes
        return PaintedPointCloud(
            cloud=self.cloud,
            sem2d=encode(self.sem2d, representation).as_vectors(m),
            sem3d=encode(self.sem3d, representation).as_vectors(m),
        )


# --- Box text format ---

def load_boxes(text: str) -> List[Box3D]:
    """One box per line: ``cx cy cz l w h yaw class_id``."""
    boxes = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if len(tokens) != 8:
            raise FormatError(f"line {number}: expected 8 fields, got {len(tokens)}")
        try:
            values = [float(t) for t in tokens[:7]]
            class_id = int(tokens[7])
            boxes.append(Box3D(tuple(values[0:3]), tuple(values[3:6]), values[6], class_id))
        except (ValueError, SemanticsError) as exc:
            raise FormatError(f"line {number}: {exc}") from exc
    return boxes


def format_boxes(boxes: Sequence[Box3D]) -> str:
    lines = []
    for box in boxes:
        numbers = [*box.center, *box.size, box.yaw]
        lines.append(" ".join(repr(float(v)) for v in numbers) + f" {box.class_id}")
    return "".join(line + "\n" for line in lines)
