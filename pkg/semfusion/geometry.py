"""
Camera calibration and LiDAR-to-image projection.

Projection: homogeneous point p = [x y z 1], camera point P' = M p, pixel =
perspective divide of K P'. Pixel i's centre sits at coordinate i, so the
nearest pixel of a projected point is floor(u + 0.5).
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from semfusion.errors import CalibrationError, DimensionError, SemanticsError

logger = logging.getLogger(__name__)

ORTHONORMAL_TOL = 1e-6
PROBABILITY_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Calibration:
    """Intrinsic K (3x3, pixels) and LiDAR-to-camera extrinsic M (3x4)."""

    K: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        K = np.array(self.K, dtype=np.float64)
        M = np.array(self.M, dtype=np.float64)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "M", M)
        problems = list(_calibration_problems(K, M))
        if problems:
            raise CalibrationError(problems[0])

    @property
    def rotation(self) -> np.ndarray:
        return self.M[:, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.M[:, 3]

    @classmethod
    def pinhole(cls, focal: float, cx: float, cy: float,
                rotation: Optional[np.ndarray] = None,
                translation: Optional[np.ndarray] = None) -> "Calibration":
        K = np.array([[focal, 0.0, cx], [0.0, focal, cy], [0.0, 0.0, 1.0]])
        R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
        t = np.zeros(3) if translation is None else np.asarray(translation, dtype=np.float64)
        return cls(K, np.hstack([R, t[:, None]]))


def _calibration_problems(K: np.ndarray, M: np.ndarray):
    if K.shape != (3, 3):
        yield f"K must be 3x3, got {K.shape}"
        return
    if M.shape != (3, 4):
        yield f"M must be 3x4, got {M.shape}"
        return
    if not (np.all(np.isfinite(K)) and np.all(np.isfinite(M))):
        yield "calibration contains non-finite values"
    if K[2, 2] != 1.0:
        yield f"K[2][2] must be 1, got {K[2, 2]!r}"
    if K[1, 0] != 0.0 or K[2, 0] != 0.0 or K[2, 1] != 0.0:
        yield "K must be upper-triangular"
    if K[0, 0] <= 0.0 or K[1, 1] <= 0.0:
        yield f"K focal entries must be positive, got {K[0, 0]!r}, {K[1, 1]!r}"
    R = M[:, :3]
    deviation = np.max(np.abs(R.T @ R - np.eye(3)))
    if deviation > ORTHONORMAL_TOL:
        yield f"rotation part of M is not orthonormal (max deviation {deviation:.3g})"


# --- Calibration text format ---

_CALIB_FIELDS = {"K": 9, "M": 12}


def load_calibration(text: str) -> Calibration:
    """Parse ``K: 9 floats`` and ``M: 12 floats`` records. Other keys are ignored."""
    found = {}
    lines = text.splitlines()
    for number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise CalibrationError(f"expected 'KEY: values', got {line!r}", line=number)
        key, _, rest = line.partition(":")
        key = key.strip()
        if key not in _CALIB_FIELDS:
            logger.debug("ignoring calibration key %r on line %d", key, number)
            continue
        if key in found:
            raise CalibrationError(f"duplicate {key!r} record", line=number)
        try:
            values = [float(token) for token in rest.split()]
        except ValueError as exc:
            raise CalibrationError(f"{key!r} has a non-numeric value: {exc}", line=number) from exc
        expected = _CALIB_FIELDS[key]
        if len(values) != expected:
            raise CalibrationError(f"{key!r} expects {expected} floats, got {len(values)}", line=number)
        found[key] = (number, np.array(values))

    for key in _CALIB_FIELDS:
        if key not in found:
            raise CalibrationError(f"missing {key!r} record", line=len(lines) + 1)

    k_line, k_values = found["K"]
    m_line, m_values = found["M"]
    K = k_values.reshape(3, 3)
    M = m_values.reshape(3, 4)
    problems = list(_calibration_problems(K, M))
    if problems:
        line = m_line if "rotation" in problems[0] else k_line
        raise CalibrationError(problems[0], line=line)
    return Calibration(K, M)


def format_calibration(calib: Calibration) -> str:
    k = " ".join(repr(float(v)) for v in calib.K.reshape(-1))
    m = " ".join(repr(float(v)) for v in calib.M.reshape(-1))
    return f"K: {k}\nM: {m}\n"


# --- Clouds and maps ---

@dataclass
class PointCloud:
    """N x 3 LiDAR-frame coordinates in meters, optional per-point intensity."""

    points: np.ndarray
    intensity: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise DimensionError("point coordinates must be finite")
        if self.intensity is None:
            self.intensity = np.zeros(len(self.points))
        self.intensity = np.asarray(self.intensity, dtype=np.float64)
        if self.intensity.shape != (len(self.points),):
            raise DimensionError(
                f"intensity {self.intensity.shape} does not match {len(self.points)} points"
            )

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class SemanticMap2D:
    """Per-pixel class probabilities, h x w x m."""

    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 3:
            raise DimensionError(f"semantic map must be h x w x m, got {self.scores.shape}")
        if np.any(self.scores < 0) or not np.allclose(self.scores.sum(axis=2), 1.0, rtol=0, atol=PROBABILITY_TOL):
            raise SemanticsError("semantic map pixels must be probability vectors")

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def width(self) -> int:
        return self.scores.shape[1]

    @property
    def num_classes(self) -> int:
        return self.scores.shape[2]

    @classmethod
    def from_labels(cls, labels: np.ndarray, num_classes: int) -> "SemanticMap2D":
        labels = np.asarray(labels, dtype=np.int64)
        return cls(np.eye(num_classes)[labels])

    def labels(self) -> np.ndarray:
        return np.argmax(self.scores, axis=2)


@dataclass
class ProjectionResult:
    pixel: np.ndarray     # N x 2 (u, v); NaN behind the camera
    depth: np.ndarray     # N camera-frame z
    in_view: np.ndarray   # N bool


def project_points(cloud: PointCloud, calib: Calibration,
                   image_size: Optional[Tuple[int, int]] = None) -> ProjectionResult:
    """
    Project LiDAR points into the image. ``image_size`` is (w, h); without it
    only the depth test decides ``in_view``.
    """
    points = cloud.points
    homogeneous = np.hstack([points, np.ones((len(points), 1))])
    camera = homogeneous @ calib.M.T
    depth = camera[:, 2]
    front = depth > 0
    pixel = np.full((len(points), 2), np.nan)
    normalized = camera[front] / depth[front, None]
    pixel[front] = (normalized @ calib.K.T)[:, :2]
    in_view = front & np.all(np.isfinite(pixel), axis=1)
    if image_size is not None:
        width, height = image_size
        u, v = pixel[:, 0], pixel[:, 1]
        with np.errstate(invalid="ignore"):
            in_view &= (u >= 0) & (u < width) & (v >= 0) & (v < height)
    return ProjectionResult(pixel=pixel, depth=depth, in_view=in_view)


def nearest_pixel(pixel: np.ndarray, width: int, height: int) -> Tuple[np.ndarray, np.ndarray]:
    """(rows, cols) of the nearest pixel centre, rounded half-up and clamped."""
    cols = np.clip(np.floor(pixel[:, 0] + 0.5), 0, width - 1).astype(np.int64)
    rows = np.clip(np.floor(pixel[:, 1] + 0.5), 0, height - 1).astype(np.int64)
    return rows, cols


class OutOfViewPolicy(str, Enum):
    BACKGROUND = "background"
    ZERO = "zero"


def paint_points_2d(cloud: PointCloud, calib: Calibration, sem_map: SemanticMap2D,
                    policy: OutOfViewPolicy = OutOfViewPolicy.BACKGROUND) -> np.ndarray:
    """N x m scores: in-view points copy their nearest pixel, the rest get the policy vector."""
    classes = sem_map.num_classes
    if classes < 2:
        raise SemanticsError(f"painting needs at least 2 classes, got {classes}")
    painted = np.zeros((len(cloud), classes))
    if OutOfViewPolicy(policy) is OutOfViewPolicy.BACKGROUND:
        painted[:, 0] = 1.0

    projection = project_points(cloud, calib, (sem_map.width, sem_map.height))
    visible = projection.in_view
    rows, cols = nearest_pixel(projection.pixel[visible], sem_map.width, sem_map.height)
    painted[visible] = sem_map.scores[rows, cols]
    logger.debug("painted %d of %d points from the image", int(visible.sum()), len(cloud))
    return painted
