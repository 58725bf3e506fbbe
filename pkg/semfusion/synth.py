"""
Synthetic driving scenes and the two sensor failure models.

A scene is a ground plane plus oriented boxes in front of a forward-looking
camera that shares the LiDAR origin. LiDAR points are sampled on the ground
and on box surfaces, then culled when the segment from the sensor passes
through a box. The true image map is rendered by casting one ray per pixel.

Failure models:
  corrupt_2d  grows every foreground mask into the background by ``dilate_px``
              pixels, so background points behind an object get its label.
  corrupt_3d  resamples each point's class from a confusion matrix row, which
              swaps shape-similar classes uniformly inside objects. With
              ConfusionScope.OBJECT the points of one box share their draw, so
              a swapped object stays swapped after voxel averaging.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from multiprocess import Pool
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import ndimage
from tenacity import RetryError, Retrying, retry_if_exception_type, stop_after_attempt

from semfusion import formats
from semfusion.config import DEFAULT_NUM_CLASSES
from semfusion.errors import DimensionError, FormatError, SceneGenerationError, SemanticsError
from semfusion.geometry import (
    Calibration,
    OutOfViewPolicy,
    PointCloud,
    SemanticMap2D,
    format_calibration,
    load_calibration,
    paint_points_2d,
    project_points,
)
from semfusion.semantics import (
    BACKGROUND,
    Box3D,
    PaintedPointCloud,
    assign_boxes,
    format_boxes,
    label_ids_from_boxes,
    load_boxes,
    one_hot,
)
from semfusion.voxelizer import VoxelConfig

logger = logging.getLogger(__name__)

CLASS_NAMES = (
    "background", "car", "truck", "pedestrian", "cyclist", "barrier", "traffic_cone",
    "bus", "trailer", "motorcycle", "bicycle", "construction_vehicle",
)
CAR = 1
TRUCK = 2

# mean (length, width, height) in meters; car and truck are deliberately close
CLASS_SIZES = {
    1: (4.2, 1.8, 1.6),
    2: (4.6, 2.0, 1.8),
    3: (0.8, 0.8, 1.8),
    4: (1.8, 0.7, 1.7),
    5: (2.0, 0.5, 1.0),
    6: (0.4, 0.4, 0.8),
    7: (9.0, 2.8, 3.0),
    8: (7.0, 2.5, 3.0),
    9: (2.1, 0.8, 1.5),
    10: (1.7, 0.6, 1.3),
    11: (6.0, 2.7, 3.0),
}

# LiDAR (x fwd, y left, z up) -> camera (x right, y down, z fwd)
CAMERA_ROTATION = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])

SURFACE_INSET = 0.98
OCCLUDER_SHRINK = 0.97
GROUND_NOISE = 0.02

BUNDLE_FILES = ("cloud.bin", "calib.txt", "boxes.txt", "sem2d.sem", "sem3d.sem")

Triple = Tuple[float, float, float]


class SceneParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    num_classes: int = Field(default=DEFAULT_NUM_CLASSES, ge=2, le=len(CLASS_NAMES))
    min_boxes: int = Field(default=2, ge=0)
    max_boxes: int = Field(default=5, ge=0)
    range_min: Triple = (0.0, -16.0, -2.0)
    range_max: Triple = (32.0, 16.0, 2.0)
    voxel_size: Triple = (1.0, 1.0, 4.0)
    ground_z: float = -1.5
    ground_density: float = Field(default=2.0, gt=0)
    surface_density: float = Field(default=24.0, gt=0)
    size_jitter: float = Field(default=0.1, ge=0, lt=0.5)
    min_distance: float = Field(default=6.0, gt=0)
    box_gap: float = Field(default=0.5, ge=0)
    image_width: int = Field(default=128, gt=0)
    image_height: int = Field(default=48, gt=0)
    focal: float = Field(default=64.0, gt=0)
    max_attempts: int = Field(default=200, gt=0)

    @model_validator(mode="after")
    def _check_box_range(self) -> "SceneParams":
        if self.min_boxes > self.max_boxes:
            raise ValueError(f"min_boxes {self.min_boxes} exceeds max_boxes {self.max_boxes}")
        return self

    @property
    def image_size(self) -> Tuple[int, int]:
        return self.image_width, self.image_height

    def calibration(self) -> Calibration:
        return Calibration.pinhole(self.focal, self.image_width / 2.0, self.image_height / 2.0,
                                   rotation=CAMERA_ROTATION)

    def voxel_config(self, points_per_voxel: int, seed: int = 0) -> VoxelConfig:
        return VoxelConfig(range_min=self.range_min, range_max=self.range_max,
                           voxel_size=self.voxel_size, points_per_voxel=points_per_voxel, seed=seed)


@dataclass
class Scene:
    cloud: PointCloud
    boxes: List[Box3D]
    calib: Calibration
    true_map: SemanticMap2D
    seed: int
    num_classes: int


# --- Ray/box geometry ---

def _slab_interval(origin: np.ndarray, directions: np.ndarray, half: np.ndarray):
    """Parameter interval [t_min, t_max] where origin + t*d lies in the box |x| <= half."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - origin) / directions
        t2 = (half - origin) / directions
    t_low = np.minimum(t1, t2)
    t_high = np.maximum(t1, t2)
    parallel = directions == 0
    inside = np.abs(origin) <= half
    t_low = np.where(parallel, np.where(inside, -np.inf, np.inf), t_low)
    t_high = np.where(parallel, np.where(inside, np.inf, -np.inf), t_high)
    return t_low.max(axis=1), t_high.min(axis=1)


def segment_hits_box(origin: np.ndarray, points: np.ndarray, box: Box3D) -> np.ndarray:
    """True where the segment origin -> point passes through ``box``."""
    if len(points) == 0:
        return np.zeros(0, dtype=bool)
    local_origin = box.to_local(np.asarray(origin)[None, :])[0]
    directions = box.to_local(points) - local_origin
    t_min, t_max = _slab_interval(local_origin[None, :], directions, np.array(box.size) / 2.0)
    return (t_min <= t_max) & (t_max >= 0.0) & (t_min <= 1.0)


def ray_box_entry(origin: np.ndarray, directions: np.ndarray, box: Box3D) -> np.ndarray:
    """Ray parameter where each ray first meets ``box``, +inf on a miss."""
    local_origin = box.to_local(np.asarray(origin)[None, :])[0]
    local_dirs = box.rotation().inv().apply(directions)
    t_min, t_max = _slab_interval(local_origin[None, :], local_dirs, np.array(box.size) / 2.0)
    hit = (t_min <= t_max) & (t_max >= 0.0)
    return np.where(hit, np.maximum(t_min, 0.0), np.inf)


# --- Scene generation ---

class _Rejected(Exception):
    pass


def _propose_box(rng: np.random.Generator, class_id: int, placed: Sequence[Box3D],
                 params: SceneParams, calib: Calibration) -> Box3D:
    size = np.array(CLASS_SIZES[class_id]) * rng.uniform(1 - params.size_jitter, 1 + params.size_jitter, 3)
    reach = 0.5 * float(np.hypot(size[0], size[1]))
    x = rng.uniform(params.min_distance, params.range_max[0] - reach)
    y = rng.uniform(params.range_min[1] + reach, params.range_max[1] - reach)
    yaw = rng.uniform(-np.pi, np.pi)
    box = Box3D((x, y, params.ground_z + size[2] / 2.0), tuple(size), yaw, class_id)

    corners = box.corners()
    lo, hi = np.array(params.range_min), np.array(params.range_max)
    if np.any(corners < lo) or np.any(corners >= hi):
        raise _Rejected("outside range")
    if not project_points(PointCloud(corners), calib, params.image_size).in_view.all():
        raise _Rejected("not fully in view")
    for other in placed:
        gap = np.hypot(box.center[0] - other.center[0], box.center[1] - other.center[1])
        if gap < box.footprint_radius + other.footprint_radius + params.box_gap:
            raise _Rejected("overlaps a placed box")
    return box


def _place_box(rng: np.random.Generator, class_id: int, placed: Sequence[Box3D],
               params: SceneParams, calib: Calibration) -> Box3D:
    try:
        for attempt in Retrying(stop=stop_after_attempt(params.max_attempts),
                                retry=retry_if_exception_type(_Rejected)):
            with attempt:
                return _propose_box(rng, class_id, placed, params, calib)
    except RetryError as exc:
        raise SceneGenerationError(
            f"could not place a {CLASS_NAMES[class_id]} box after {params.max_attempts} attempts "
            f"({len(placed)} already placed)"
        ) from exc


def _surface_points(rng: np.random.Generator, box: Box3D, density: float) -> np.ndarray:
    """Points on the four sides and the top, inset slightly into the box."""
    l, w, h = box.size
    areas = np.array([w * h, w * h, l * h, l * h, l * w])
    count = rng.poisson(density * areas.sum())
    face = rng.choice(5, size=count, p=areas / areas.sum())
    local = rng.uniform(-0.5, 0.5, size=(count, 3)) * np.array(box.size)
    local[face == 0, 0] = l / 2.0
    local[face == 1, 0] = -l / 2.0
    local[face == 2, 1] = w / 2.0
    local[face == 3, 1] = -w / 2.0
    local[face == 4, 2] = h / 2.0
    return box.rotation().apply(local * SURFACE_INSET) + np.array(box.center)


def _ground_points(rng: np.random.Generator, boxes: Sequence[Box3D], params: SceneParams) -> np.ndarray:
    (x0, y0, _), (x1, y1, _) = params.range_min, params.range_max
    count = rng.poisson(params.ground_density * (x1 - x0) * (y1 - y0))
    ground = np.column_stack([
        rng.uniform(x0, x1, count),
        rng.uniform(y0, y1, count),
        params.ground_z + rng.uniform(-GROUND_NOISE, GROUND_NOISE, count),
    ])
    keep = np.ones(count, dtype=bool)
    for box in boxes:
        local = box.to_local(ground)
        keep &= ~((np.abs(local[:, 0]) <= box.size[0] / 2.0) & (np.abs(local[:, 1]) <= box.size[1] / 2.0))
    return ground[keep]


def visible_points(points: np.ndarray, boxes: Sequence[Box3D], sensor: np.ndarray) -> np.ndarray:
    """Mask of points whose line of sight misses every (slightly shrunk) box."""
    visible = np.ones(len(points), dtype=bool)
    for box in boxes:
        visible &= ~segment_hits_box(sensor, points, box.shrunk(OCCLUDER_SHRINK))
    return visible


def render_true_map(boxes: Sequence[Box3D], calib: Calibration, image_size: Tuple[int, int],
                    num_classes: int) -> SemanticMap2D:
    """Z-buffered label image: one ray through every pixel centre."""
    width, height = image_size
    us, vs = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    pixels = np.column_stack([us.reshape(-1), vs.reshape(-1), np.ones(width * height)])
    directions = (pixels @ np.linalg.inv(calib.K).T) @ calib.rotation
    origin = -calib.rotation.T @ calib.translation

    labels = np.full(width * height, BACKGROUND, dtype=np.int64)
    depth = np.full(width * height, np.inf)
    for box in boxes:
        entry = ray_box_entry(origin, directions, box)
        closer = entry < depth
        labels[closer] = box.class_id
        depth[closer] = entry[closer]
    return SemanticMap2D.from_labels(labels.reshape(height, width), num_classes)


def generate_scene(params: SceneParams, seed: int) -> Scene:
    rng = np.random.default_rng(seed)
    calib = params.calibration()
    count = int(rng.integers(params.min_boxes, params.max_boxes + 1))
    boxes: List[Box3D] = []
    for _ in range(count):
        class_id = int(rng.integers(1, params.num_classes))
        boxes.append(_place_box(rng, class_id, boxes, params, calib))

    surfaces = [_surface_points(rng, box, params.surface_density) for box in boxes]
    points = np.vstack([_ground_points(rng, boxes, params), *surfaces])
    sensor = -calib.rotation.T @ calib.translation
    points = points[visible_points(points, boxes, sensor)]

    true_map = render_true_map(boxes, calib, params.image_size, params.num_classes)
    logger.debug("scene %d: %d boxes, %d points", seed, len(boxes), len(points))
    return Scene(PointCloud(points), boxes, calib, true_map, seed, params.num_classes)


# --- Corruption models ---

class ConfusionScope(str, Enum):
    POINT = "point"     # every point draws on its own
    OBJECT = "object"   # points of one box share a draw


class CorruptionConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    dilate_px: int = Field(default=0, ge=0)
    confusion: Optional[Tuple[Tuple[float, ...], ...]] = None
    confusion_scope: ConfusionScope = ConfusionScope.OBJECT
    soft_boundary: bool = False
    confidence_correct: Tuple[float, float] = (0.6, 1.0)
    # matches confidence_correct: swapped and kept rows share one distribution
    confidence_confused: Tuple[float, float] = (0.6, 1.0)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "CorruptionConfig":
        if self.confusion is not None:
            matrix = np.array(self.confusion, dtype=np.float64)
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                raise ValueError(f"confusion must be a square matrix, got shape {matrix.shape}")
            if np.any(matrix < 0):
                raise ValueError("confusion entries must be nonnegative")
            bad = np.flatnonzero(np.abs(matrix.sum(axis=1) - 1.0) > 1e-9)
            if len(bad):
                raise ValueError(f"confusion rows {bad.tolist()} do not sum to 1")
        for name in ("confidence_correct", "confidence_confused"):
            low, high = getattr(self, name)
            if not 0.5 <= low <= high <= 1.0:
                raise ValueError(f"{name} must satisfy 0.5 <= low <= high <= 1, got {(low, high)}")
        return self

    def confusion_matrix(self, num_classes: int) -> np.ndarray:
        if self.confusion is None:
            return np.eye(num_classes)
        matrix = np.array(self.confusion, dtype=np.float64)
        if matrix.shape != (num_classes, num_classes):
            raise DimensionError(f"confusion is {matrix.shape}, expected {num_classes} x {num_classes}")
        return matrix


def confusion_pair(num_classes: int, a: int, b: int, p: float) -> Tuple[Tuple[float, ...], ...]:
    """Identity except that a and b swap with probability p."""
    matrix = np.eye(num_classes)
    for src, dst in ((a, b), (b, a)):
        matrix[src, src] = 1.0 - p
        matrix[src, dst] = p
    return tuple(tuple(float(v) for v in row) for row in matrix)


def standard_corruption(num_classes: int = DEFAULT_NUM_CLASSES, seed: int = 0) -> CorruptionConfig:
    """Dilate 3, car <-> truck confusion 0.3, soft boundary confidences."""
    return CorruptionConfig(dilate_px=3, confusion=confusion_pair(num_classes, CAR, TRUCK, 0.3),
                            soft_boundary=True, seed=seed)


def _soften_edges(labels: np.ndarray, scores: np.ndarray, reach: int) -> np.ndarray:
    """Pixels within ``reach`` of another label lose confidence to that label."""
    soft = scores.copy()
    for cls in np.unique(labels):
        region = labels == cls
        if region.all():
            continue
        distance, (rows, cols) = ndimage.distance_transform_cdt(
            region, metric="chessboard", return_indices=True)
        rr, cc = np.nonzero(region & (distance <= reach))
        confidence = 0.5 + 0.5 * distance[rr, cc] / (reach + 1.0)
        other = labels[rows[rr, cc], cols[rr, cc]]
        soft[rr, cc, :] = 0.0
        soft[rr, cc, cls] = confidence
        soft[rr, cc, other] = 1.0 - confidence
    return soft


def corrupt_2d(sem_map: SemanticMap2D, cfg: CorruptionConfig) -> SemanticMap2D:
    reach = cfg.dilate_px
    labels = sem_map.labels()
    foreground = labels != BACKGROUND
    if reach == 0 or not foreground.any():
        return SemanticMap2D(sem_map.scores.copy())

    structure = np.ones((2 * reach + 1, 2 * reach + 1), dtype=bool)
    grown_mask = ndimage.binary_dilation(foreground, structure=structure)
    _, (rows, cols) = ndimage.distance_transform_cdt(
        ~foreground, metric="chessboard", return_indices=True)
    spread = grown_mask & ~foreground
    grown = labels.copy()
    grown[spread] = labels[rows[spread], cols[spread]]

    scores = np.eye(sem_map.num_classes)[grown]
    if cfg.soft_boundary:
        scores = _soften_edges(grown, scores, reach)
    return SemanticMap2D(scores)


def _check_one_hot(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 2:
        raise DimensionError(f"labels must be N x m, got {labels.shape}")
    if not (np.all((labels == 0) | (labels == 1)) and np.all(labels.sum(axis=1) == 1)):
        raise SemanticsError("labels must be one-hot rows")
    return np.argmax(labels, axis=1)


def corrupt_3d(labels: np.ndarray, cfg: CorruptionConfig,
               groups: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Resample each row's class from its confusion-matrix row.

    ``groups`` gives each row an object id (-1 for none). Rows with the same
    id reuse one uniform draw, so every point of an object lands on the same
    class; rows without an id draw independently.
    """
    ids = _check_one_hot(labels)
    num_classes = labels.shape[1]
    cumulative = np.cumsum(cfg.confusion_matrix(num_classes), axis=1)
    draws = np.random.default_rng(cfg.seed).random(len(ids))
    if groups is not None:
        groups = np.asarray(groups, dtype=np.int64)
        if groups.shape != ids.shape:
            raise DimensionError(f"groups {groups.shape} do not match {len(ids)} label rows")
        grouped = groups >= 0
        if grouped.any():
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
            shared = rng.random(int(groups.max()) + 1)
            draws[grouped] = shared[groups[grouped]]
    new_ids = np.minimum((draws[:, None] >= cumulative[ids]).sum(axis=1), num_classes - 1)
    return one_hot(new_ids, num_classes)


def simulate_scores_3d(clean_ids: np.ndarray, noisy_ids: np.ndarray, cfg: CorruptionConfig,
                       num_classes: int) -> np.ndarray:
    """
    Score rows for corrupt_3d output. Kept labels draw their confidence from
    ``confidence_correct`` with the rest on the row's likeliest confusion;
    swapped labels draw from ``confidence_confused`` with the rest on the
    true class. Labels whose confusion row is the identity stay one-hot.
    """
    clean_ids = np.asarray(clean_ids, dtype=np.int64)
    noisy_ids = np.asarray(noisy_ids, dtype=np.int64)
    off_diagonal = cfg.confusion_matrix(num_classes).copy()
    np.fill_diagonal(off_diagonal, 0.0)
    partner = np.where(off_diagonal.sum(axis=1) > 0, off_diagonal.argmax(axis=1), -1)

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    scores = one_hot(noisy_ids, num_classes)

    kept = np.flatnonzero((clean_ids == noisy_ids) & (partner[noisy_ids] >= 0))
    confidence = rng.uniform(*cfg.confidence_correct, size=len(kept))
    scores[kept, noisy_ids[kept]] = confidence
    scores[kept, partner[noisy_ids[kept]]] = 1.0 - confidence

    swapped = np.flatnonzero(clean_ids != noisy_ids)
    confidence = rng.uniform(*cfg.confidence_confused, size=len(swapped))
    scores[swapped, noisy_ids[swapped]] = confidence
    scores[swapped, clean_ids[swapped]] = 1.0 - confidence
    return scores


# --- Samples: a scene seen through both corrupted modalities ---

@dataclass
class SceneSample:
    cloud: PointCloud
    calib: Calibration
    boxes: List[Box3D]
    sem2d_map: SemanticMap2D     # corrupted image segmentation
    painted: PaintedPointCloud   # per-point 2D paint and 3D scores
    clean_ids: np.ndarray        # N true classes from the boxes
    seed: Optional[int] = None

    @property
    def num_classes(self) -> int:
        return self.sem2d_map.num_classes


def scene_corruption_seed(cfg: CorruptionConfig, scene_seed: int) -> int:
    return int(np.random.SeedSequence([cfg.seed, scene_seed]).generate_state(1, dtype=np.uint64)[0])


def paint_scene(scene: Scene, cfg: CorruptionConfig,
                policy: OutOfViewPolicy = OutOfViewPolicy.BACKGROUND) -> SceneSample:
    m = scene.num_classes
    local_cfg = cfg.model_copy(update={"seed": scene_corruption_seed(cfg, scene.seed)})
    sem2d_map = corrupt_2d(scene.true_map, local_cfg)
    clean_ids = label_ids_from_boxes(scene.cloud, scene.boxes, m)
    groups = None
    if cfg.confusion_scope is ConfusionScope.OBJECT:
        groups = assign_boxes(scene.cloud.points, scene.boxes)
    noisy = corrupt_3d(one_hot(clean_ids, m), local_cfg, groups)
    sem3d = simulate_scores_3d(clean_ids, np.argmax(noisy, axis=1), local_cfg, m)
    sem2d = paint_points_2d(scene.cloud, scene.calib, sem2d_map, policy)
    painted = PaintedPointCloud(scene.cloud, sem2d, sem3d)
    return SceneSample(scene.cloud, scene.calib, list(scene.boxes), sem2d_map, painted, clean_ids, scene.seed)


def _build_sample(job) -> SceneSample:
    params, cfg, seed, policy = job
    return paint_scene(generate_scene(params, seed), cfg, policy)


def generate_samples(params: SceneParams, cfg: CorruptionConfig, seeds: Sequence[int],
                     workers: int = 1,
                     policy: OutOfViewPolicy = OutOfViewPolicy.BACKGROUND) -> List[SceneSample]:
    """Scenes for ``seeds`` in order; parallel across processes when workers > 1."""
    jobs = [(params, cfg, int(seed), policy) for seed in seeds]
    if workers > 1 and len(jobs) > 1:
        with Pool(min(workers, len(jobs))) as pool:
            return pool.map(_build_sample, jobs)
    return [_build_sample(job) for job in jobs]


# --- Scene bundles ---

def write_scene_bundle(directory, sample: SceneSample) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    formats.write_cloud(directory / "cloud.bin", sample.cloud)
    (directory / "calib.txt").write_text(format_calibration(sample.calib), encoding="utf-8")
    (directory / "boxes.txt").write_text(format_boxes(sample.boxes), encoding="utf-8")
    formats.write_sem(directory / "sem2d.sem", sample.sem2d_map.scores)
    formats.write_sem(directory / "sem3d.sem", sample.painted.sem3d[:, None, :])
    return directory


def load_scene_bundle(directory, policy: OutOfViewPolicy = OutOfViewPolicy.BACKGROUND) -> SceneSample:
    directory = Path(directory)
    missing = [name for name in BUNDLE_FILES if not (directory / name).exists()]
    if missing:
        raise FormatError(f"{directory} is missing {', '.join(missing)}")
    cloud = formats.read_cloud(directory / "cloud.bin")
    calib = load_calibration((directory / "calib.txt").read_text(encoding="utf-8"))
    boxes = load_boxes((directory / "boxes.txt").read_text(encoding="utf-8"))
    sem2d_map = SemanticMap2D(formats.read_sem(directory / "sem2d.sem"))
    sem3d = formats.read_sem(directory / "sem3d.sem")
    if sem3d.shape[:2] != (len(cloud), 1):
        raise FormatError(f"sem3d.sem is {sem3d.shape}, expected {len(cloud)} x 1 x m")
    m = sem2d_map.num_classes
    sem2d = paint_points_2d(cloud, calib, sem2d_map, policy)
    painted = PaintedPointCloud(cloud, sem2d, sem3d[:, 0, :])
    clean_ids = label_ids_from_boxes(cloud, boxes, m)
    return SceneSample(cloud, calib, boxes, sem2d_map, painted, clean_ids)


def list_bundles(root) -> List[Path]:
    """Bundle directories under ``root`` (or ``root`` itself), sorted by name."""
    root = Path(root)
    if (root / "cloud.bin").exists():
        return [root]
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / "cloud.bin").exists())
