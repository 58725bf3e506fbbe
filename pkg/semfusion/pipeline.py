"""
Training, evaluation and checkpoints for the voxel classification task.

Each voxel is labelled with the dominant true class of its points. A run is
fully determined by its ExperimentConfig: ``data_seed`` picks the scenes and
``training.seed`` the initialization and batch order.

Checkpoint directory layout:
    config.json   ExperimentConfig + grid shape (orjson, sorted keys)
    aaf.bin       "AAF1" container (aaf, aaf-dff)
    dff.bin       "DFF1" container (aaf-dff)
    head.bin      "HED1" container: [BEV projection] + head MLP
"""

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import orjson
from multiprocess import Pool
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from semfusion import formats
from semfusion.aaf import AafConfig, CombineMode
from semfusion.config import (
    AAF_ATTENTION_HIDDEN,
    AAF_GLOBAL_CHANNELS,
    AAF_LOCAL_CHANNELS,
    DEFAULT_POINTS_PER_VOXEL,
)
from semfusion.dff import DffConfig
from semfusion.errors import DimensionError, DivergenceError, FormatError
from semfusion.functional import cross_entropy
from semfusion.geometry import OutOfViewPolicy
from semfusion.metrics import Report, compute_report
from semfusion.model import FusionModel, Strategy, load_all
from semfusion.optim import AdamW, OneCycleSchedule, one_cycle_lr
from semfusion.semantics import Representation
from semfusion.synth import CorruptionConfig, SceneParams, SceneSample, generate_samples
from semfusion.tensor import backward
from semfusion.voxelizer import VoxelConfig, VoxelGrid, voxelize

logger = logging.getLogger(__name__)

# Configuration
PIPELINE_DFF = DffConfig(block_channels=32)
HEAD_HIDDEN = 32
EVAL_SEED_OFFSET = 5000
SEEDS_PER_DATA_SEED = 10000
FINAL_LOSS_FRACTION = 0.1


class TrainingConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    steps: int = Field(default=600, gt=0)
    batch_scenes: int = Field(default=2, gt=0)
    max_lr: float = Field(default=3e-3, gt=0)
    warmup_fraction: float = Field(default=0.3, gt=0, lt=1)
    weight_decay: float = Field(default=0.01, ge=0)
    head_hidden: int = Field(default=HEAD_HIDDEN, gt=0)
    seed: int = Field(default=0, ge=0)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    representation: Representation = Representation.SCORE
    strategy: Strategy = Strategy.AAF
    scene: SceneParams = Field(default_factory=SceneParams)
    corruption: CorruptionConfig = Field(default_factory=CorruptionConfig)
    policy: OutOfViewPolicy = OutOfViewPolicy.BACKGROUND
    points_per_voxel: int = Field(default=DEFAULT_POINTS_PER_VOXEL // 2, gt=0)
    local_channels: int = Field(default=AAF_LOCAL_CHANNELS, gt=0)
    global_channels: int = Field(default=AAF_GLOBAL_CHANNELS, gt=0)
    attention_hidden: int = Field(default=AAF_ATTENTION_HIDDEN, gt=0)
    combine: CombineMode = CombineMode.ADD
    dff: DffConfig = PIPELINE_DFF
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    data_seed: int = Field(default=0, ge=0)
    train_scenes: int = Field(default=16, gt=0)
    eval_scenes: int = Field(default=20, gt=0)

    @property
    def num_classes(self) -> int:
        return self.scene.num_classes

    def aaf_config(self) -> AafConfig:
        return AafConfig(num_classes=self.num_classes, local_channels=self.local_channels,
                         global_channels=self.global_channels,
                         attention_hidden=self.attention_hidden, combine=self.combine)

    def voxel_config(self) -> VoxelConfig:
        return self.scene.voxel_config(self.points_per_voxel, seed=self.data_seed)

    @property
    def train_seeds(self) -> List[int]:
        base = self.data_seed * SEEDS_PER_DATA_SEED
        return [base + i for i in range(self.train_scenes)]

    @property
    def eval_seeds(self) -> List[int]:
        base = self.data_seed * SEEDS_PER_DATA_SEED + EVAL_SEED_OFFSET
        return [base + i for i in range(self.eval_scenes)]

    def data_key(self) -> bytes:
        """Everything that decides the generated scenes."""
        fields = {"scene", "corruption", "policy", "data_seed", "train_scenes", "eval_scenes"}
        return orjson.dumps(self.model_dump(mode="json", include=fields), option=orjson.OPT_SORT_KEYS)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Same experiment on data seed and training seed ``seed``."""
        training = self.training.model_copy(update={"seed": seed})
        return self.model_copy(update={"data_seed": seed, "training": training})


# --- Data ---

@dataclass
class PreparedScene:
    grid: VoxelGrid
    labels: np.ndarray   # E dominant true classes
    seed: Optional[int]


def voxel_labels(grid: VoxelGrid, clean_ids: np.ndarray) -> np.ndarray:
    """Dominant true class of each voxel's points; ties go to the lower class id."""
    m = grid.num_classes
    inside = grid.point_to_voxel >= 0
    keys = grid.point_to_voxel[inside] * m + np.asarray(clean_ids)[inside]
    counts = np.bincount(keys, minlength=grid.num_voxels * m).reshape(grid.num_voxels, m)
    return np.argmax(counts, axis=1)


def prepare_scene(sample: SceneSample, cfg: ExperimentConfig) -> PreparedScene:
    if sample.num_classes != cfg.num_classes:
        raise DimensionError(
            f"scene carries {sample.num_classes} classes, experiment expects {cfg.num_classes}"
        )
    painted = sample.painted.encoded(cfg.representation)
    grid = voxelize(painted, cfg.voxel_config())
    return PreparedScene(grid, voxel_labels(grid, sample.clean_ids), sample.seed)


def _prepare_job(job) -> PreparedScene:
    sample, cfg = job
    return prepare_scene(sample, cfg)


def prepare_scenes(samples: Sequence[SceneSample], cfg: ExperimentConfig,
                   workers: int = 1) -> List[PreparedScene]:
    jobs = [(sample, cfg) for sample in samples]
    if workers > 1 and len(jobs) > 1:
        with Pool(min(workers, len(jobs))) as pool:
            prepared = pool.map(_prepare_job, jobs)
    else:
        prepared = [_prepare_job(job) for job in jobs]
    kept = [scene for scene in prepared if scene.grid.num_voxels > 0]
    if len(kept) < len(prepared):
        logger.warning("dropped %d scenes with no points in range", len(prepared) - len(kept))
    return kept


def class_weights(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Inverse class frequency, normalized so a balanced set gets weight 1."""
    counts = np.bincount(labels, minlength=num_classes).astype(np.float64)
    present = counts > 0
    weights = np.zeros(num_classes)
    weights[present] = counts.sum() / (present.sum() * counts[present])
    return weights


def experiment_samples(cfg: ExperimentConfig, workers: int = 1) -> Tuple[List[SceneSample], List[SceneSample]]:
    """Generated (train, eval) scenes of the config's data seed."""
    both = generate_samples(cfg.scene, cfg.corruption, cfg.train_seeds + cfg.eval_seeds,
                            workers=workers, policy=cfg.policy)
    return both[:cfg.train_scenes], both[cfg.train_scenes:]


# --- Checkpoints ---

@dataclass
class Checkpoint:
    config: ExperimentConfig
    model: FusionModel


def build_model(cfg: ExperimentConfig) -> FusionModel:
    rng = np.random.default_rng(cfg.training.seed)
    return FusionModel(cfg.strategy, cfg.num_classes, cfg.voxel_config().grid_shape,
                       cfg.aaf_config(), cfg.dff, cfg.training.head_hidden, rng)


def save_checkpoint(checkpoint: Checkpoint, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    model = checkpoint.model
    payload = {"config": checkpoint.config.model_dump(mode="json"),
               "grid_shape": list(model.grid_shape)}
    (directory / "config.json").write_bytes(
        orjson.dumps(payload, option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2))
    if model.aaf is not None:
        formats.write_tensors(directory / "aaf.bin", formats.AAF_MAGIC, model.aaf.state_arrays())
    if model.dff is not None:
        formats.write_tensors(directory / "dff.bin", formats.DFF_MAGIC, model.dff.state_arrays())
    formats.write_tensors(directory / "head.bin", formats.HEAD_MAGIC, model.head_state_arrays())
    logger.info("saved %s checkpoint to %s", checkpoint.config.strategy.value, directory)
    return directory


def load_checkpoint(directory) -> Checkpoint:
    directory = Path(directory)
    config_path = directory / "config.json"
    if not config_path.exists():
        raise FormatError(f"{directory} has no config.json")
    payload = orjson.loads(config_path.read_bytes())
    cfg = ExperimentConfig.model_validate(payload["config"])
    model = build_model(cfg)
    if list(model.grid_shape) != list(payload.get("grid_shape", model.grid_shape)):
        raise DimensionError(f"stored grid shape {payload['grid_shape']} != {list(model.grid_shape)}")

    if model.aaf is not None:
        arrays = formats.read_tensors(directory / "aaf.bin", formats.AAF_MAGIC)
        load_all(arrays, model.aaf.load_state_arrays, "aaf.bin")
    if model.dff is not None:
        arrays = formats.read_tensors(directory / "dff.bin", formats.DFF_MAGIC)
        load_all(arrays, model.dff.load_state_arrays, "dff.bin")
    arrays = formats.read_tensors(directory / "head.bin", formats.HEAD_MAGIC)
    load_all(arrays, model.load_head_state_arrays, "head.bin")
    return Checkpoint(cfg, model)


# --- Train / evaluate ---

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    report: Report
    losses: List[float]


def _check_finite(model: FusionModel, loss: float, step: int) -> None:
    if not np.isfinite(loss):
        raise DivergenceError(f"step {step}: training loss is {loss}")
    for param in model.parameters():
        if param.grad is not None and not np.all(np.isfinite(param.grad)):
            raise DivergenceError(f"step {step}: non-finite gradient for a {param.shape} parameter")


def fit(model: FusionModel, scenes: Sequence[PreparedScene], training: TrainingConfig,
        progress: bool = False) -> List[float]:
    """AdamW + one-cycle on weighted cross-entropy; returns the per-step losses."""
    if not scenes:
        raise DimensionError("no training scenes with voxels")
    weights = class_weights(np.concatenate([s.labels for s in scenes]), model.num_classes)
    schedule = OneCycleSchedule(max_lr=training.max_lr, total_steps=training.steps,
                                warmup_fraction=training.warmup_fraction)
    optimizer = AdamW(model.parameters(), weight_decay=training.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([training.seed, 1]))
    batch = min(training.batch_scenes, len(scenes))

    losses = []
    steps = tqdm(range(training.steps), desc=f"train {model.strategy.value}",
                 disable=not progress, leave=False)
    for step in steps:
        chosen = rng.choice(len(scenes), size=batch, replace=False)
        logits = model.forward([scenes[i].grid for i in chosen], training=True)
        labels = np.concatenate([scenes[i].labels for i in chosen])
        loss = cross_entropy(logits, labels, weights)
        value = loss.item()
        optimizer.zero_grad()
        backward(loss)
        _check_finite(model, value, step)
        optimizer.step(one_cycle_lr(schedule, step + 1))
        losses.append(value)
        if step % 50 == 0:
            logger.debug("step %d loss %.5f", step, value)
    return losses


def final_loss(losses: Sequence[float]) -> Optional[float]:
    if not losses:
        return None
    tail = max(1, int(len(losses) * FINAL_LOSS_FRACTION))
    return float(np.mean(losses[-tail:]))


def evaluate(checkpoint: Checkpoint, samples: Sequence[SceneSample], workers: int = 1) -> Report:
    """Voxel metrics of ``checkpoint`` on ``samples`` (eval-mode batch norm)."""
    start = time.perf_counter()
    cfg = checkpoint.config
    scenes = prepare_scenes(samples, cfg, workers)
    return _evaluate_prepared(checkpoint, scenes, start)


def _evaluate_prepared(checkpoint: Checkpoint, scenes: Sequence[PreparedScene], start: float) -> Report:
    cfg = checkpoint.config
    predictions = [checkpoint.model.predict(scene.grid) for scene in scenes]
    labels = np.concatenate([s.labels for s in scenes]) if scenes else np.zeros(0, dtype=np.int64)
    predicted = np.concatenate(predictions) if predictions else np.zeros(0, dtype=np.int64)
    seeds = [s.seed if s.seed is not None else i for i, s in enumerate(scenes)]
    report = compute_report(labels, predicted, cfg.num_classes, cfg.strategy.value,
                            cfg.representation.value, seeds)
    if cfg.strategy is Strategy.AAF_DFF:
        report.attention = cfg.dff.attention.value
    report.wall_ms = (time.perf_counter() - start) * 1000.0
    return report


def train(cfg: ExperimentConfig, train_samples: Optional[Sequence[SceneSample]] = None,
          eval_samples: Optional[Sequence[SceneSample]] = None, workers: int = 1,
          progress: bool = False) -> TrainResult:
    """
    Train ``cfg`` and report on held-out scenes.

    With no samples given, the config's data seed generates both splits.
    With training samples but no eval samples, the report covers the
    training scenes.
    """
    start = time.perf_counter()
    if train_samples is None:
        train_samples, generated_eval = experiment_samples(cfg, workers)
        if eval_samples is None:
            eval_samples = generated_eval
    train_scenes = prepare_scenes(train_samples, cfg, workers)
    eval_scenes = prepare_scenes(eval_samples, cfg, workers) if eval_samples is not None else train_scenes

    model = build_model(cfg)
    logger.info("training %s/%s on %d scenes for %d steps", cfg.strategy.value,
                cfg.representation.value, len(train_scenes), cfg.training.steps)
    losses = fit(model, train_scenes, cfg.training, progress)
    checkpoint = Checkpoint(cfg, model)

    report = _evaluate_prepared(checkpoint, eval_scenes, start)
    report.steps = cfg.training.steps
    report.final_loss = final_loss(losses)
    report.wall_ms = (time.perf_counter() - start) * 1000.0
    logger.info("%s/%s: acc %.4f fg %.4f fp %.4f", cfg.strategy.value, cfg.representation.value,
                report.accuracy, report.fg_accuracy, report.fp_rate)
    return TrainResult(checkpoint, report, losses)
