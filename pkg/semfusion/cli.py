"""
Command-line entry point: ``python -m semfusion <command>``.

    gen        generate corrupted scene bundles
    paint      paint a bundle's points from its 2D map
    train      train a strategy on bundles and save a checkpoint
    eval       evaluate a checkpoint on bundles
    ablate     run an ablation grid from a TOML config
    gradcheck  finite-difference gradient suites
"""

import logging
import re
import time
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Tuple

import orjson
import pandas as pd
import typer
from rich.table import Table

from semfusion import formats
from semfusion.ablation import CSV_COLUMNS, load_ablation_config, report_row, run_ablation
from semfusion.config import DEFAULT_NUM_CLASSES, get_settings
from semfusion.errors import FusionError
from semfusion.geometry import OutOfViewPolicy, paint_points_2d
from semfusion.gradcheck import run_suite
from semfusion.logs import banner, console, setup_logging
from semfusion.metrics import Report
from semfusion.model import Strategy
from semfusion.pipeline import (
    ExperimentConfig,
    TrainingConfig,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)
from semfusion.semantics import Representation
from semfusion.synth import (
    CLASS_NAMES,
    ConfusionScope,
    CorruptionConfig,
    SceneParams,
    generate_samples,
    list_bundles,
    load_scene_bundle,
    write_scene_bundle,
)

logger = logging.getLogger(__name__)

app = typer.Typer(add_completion=False, no_args_is_help=True,
                  help="Multimodal semantic fusion for LiDAR voxels.")

_RANGE = re.compile(r"^\s*(\d+)\s*\.\.\s*(\d+)\s*$")


@app.callback()
def _configure() -> None:
    setup_logging(get_settings().log_level)


@contextmanager
def _reporting_errors():
    """Library errors become a red message and exit code 1."""
    try:
        yield
    except FusionError as exc:
        console.print(f"[red]error:[/red] {exc}")
        raise typer.Exit(code=1)
    except ValueError as exc:
        # pydantic validation of experiment settings
        console.print(f"[red]invalid configuration:[/red] {exc}")
        raise typer.Exit(code=1)


def parse_box_range(text: str) -> Tuple[int, int]:
    match = _RANGE.match(text)
    if not match:
        raise typer.BadParameter(f"expected A..B, got {text!r}")
    low, high = int(match.group(1)), int(match.group(2))
    if low > high:
        raise typer.BadParameter(f"empty range {text!r}")
    return low, high


def _load_bundles(data: Path, policy: OutOfViewPolicy = OutOfViewPolicy.BACKGROUND):
    bundles = list_bundles(data)
    if not bundles:
        raise typer.BadParameter(f"no scene bundles under {data}")
    return [load_scene_bundle(path, policy) for path in bundles]


def _report_table(report: Report) -> Table:
    table = Table(title=f"{report.strategy} / {report.representation}")
    table.add_column("metric")
    table.add_column("value", justify="right")
    table.add_row("voxels", str(report.num_voxels))
    table.add_row("accuracy", f"{report.accuracy:.4f}")
    table.add_row("foreground accuracy", f"{report.fg_accuracy:.4f}")
    table.add_row("background FP rate", f"{report.fp_rate:.4f}")
    for class_id, acc in enumerate(report.per_class_accuracy):
        name = CLASS_NAMES[class_id] if class_id < len(CLASS_NAMES) else str(class_id)
        table.add_row(f"  {name}", "-" if acc is None else f"{acc:.4f}")
    if report.final_loss is not None:
        table.add_row("final loss", f"{report.final_loss:.5f}")
    table.add_row("wall ms", f"{report.wall_ms:.0f}")
    return table


# --- Commands ---

@app.command()
def gen(
    out: Path = typer.Option(..., help="Output directory for scene bundles."),
    scenes: int = typer.Option(10, min=1, help="Number of scenes."),
    seed: int = typer.Option(0, min=0, help="First scene seed."),
    boxes: str = typer.Option("2..5", help="Boxes per scene as A..B."),
    classes: int = typer.Option(DEFAULT_NUM_CLASSES, min=2, help="Number of classes m."),
    dilate: int = typer.Option(0, min=0, help="2D mask dilation in pixels."),
    confusion: Optional[Path] = typer.Option(None, exists=True, help="m x m 3D confusion matrix."),
    soft: bool = typer.Option(False, help="Soften 2D scores near class edges."),
    scope: ConfusionScope = typer.Option(ConfusionScope.OBJECT, "--confusion-scope",
                                         help="Draw 3D swaps per object or per point."),
):
    """Generate scene bundles with corrupted 2D and 3D semantics."""
    low, high = parse_box_range(boxes)
    settings = get_settings()
    with _reporting_errors():
        params = SceneParams(num_classes=classes, min_boxes=low, max_boxes=high)
        matrix = formats.read_confusion(confusion) if confusion else None
        corruption = CorruptionConfig(dilate_px=dilate, confusion=matrix, confusion_scope=scope,
                                      soft_boundary=soft, seed=seed)
        samples = generate_samples(params, corruption, range(seed, seed + scenes), workers=settings.workers)
        for sample in samples:
            write_scene_bundle(out / f"scene_{sample.seed:06d}", sample)
    console.print(f"wrote {scenes} scenes to {out}")


@app.command()
def paint(
    scene: Path = typer.Option(..., exists=True, file_okay=False, help="Scene bundle directory."),
    policy: OutOfViewPolicy = typer.Option(OutOfViewPolicy.BACKGROUND, help="Out-of-view points."),
):
    """Paint every point with its pixel's 2D vector (writes sem2d_points.sem)."""
    with _reporting_errors():
        sample = load_scene_bundle(scene, policy)
        painted = paint_points_2d(sample.cloud, sample.calib, sample.sem2d_map, policy)
        formats.write_sem(scene / "sem2d_points.sem", painted[:, None, :])
    console.print(f"painted {len(painted)} points in {scene}")


@app.command("train")
def train_command(
    data: Path = typer.Option(..., exists=True, file_okay=False, help="Bundle directory."),
    strategy: Strategy = typer.Option(Strategy.AAF, help="Fusion strategy."),
    repr_: Representation = typer.Option(Representation.SCORE, "--repr", help="Semantic representation."),
    steps: int = typer.Option(600, min=1, help="Optimizer steps."),
    max_lr: float = typer.Option(3e-3, help="Peak one-cycle learning rate."),
    seed: int = typer.Option(0, min=0, help="Training seed."),
    out: Path = typer.Option(..., help="Checkpoint directory."),
    batch_scenes: int = typer.Option(2, min=1, help="Scenes per step."),
):
    """Train on every bundle under DATA and save a checkpoint."""
    settings = get_settings()
    banner(f"TRAIN {strategy.value} / {repr_.value}")
    with _reporting_errors():
        samples = _load_bundles(data)
        cfg = ExperimentConfig(
            strategy=strategy,
            representation=repr_,
            scene=SceneParams(num_classes=samples[0].num_classes),
            training=TrainingConfig(steps=steps, max_lr=max_lr, seed=seed, batch_scenes=batch_scenes),
        )
        result = train(cfg, samples, workers=settings.workers, progress=settings.progress)
        save_checkpoint(result.checkpoint, out)
        (out / "report.json").write_bytes(result.report.to_json())
    console.print(_report_table(result.report))
    console.print(f"checkpoint saved to {out}")


@app.command("eval")
def eval_command(
    ckpt: Path = typer.Option(..., exists=True, file_okay=False, help="Checkpoint directory."),
    data: Path = typer.Option(..., exists=True, file_okay=False, help="Bundle directory."),
    report: Optional[Path] = typer.Option(None, help="CSV report path."),
):
    """Evaluate a checkpoint; writes a CSV row and a JSON dump."""
    settings = get_settings()
    banner(f"EVALUATE {ckpt}")
    with _reporting_errors():
        checkpoint = load_checkpoint(ckpt)
        samples = _load_bundles(data, checkpoint.config.policy)
        result = evaluate(checkpoint, samples, workers=settings.workers)
    result.steps = checkpoint.config.training.steps
    console.print(_report_table(result))

    if report is not None:
        row = report_row(result, checkpoint.config.training.seed)
        report.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame([row], columns=CSV_COLUMNS).to_csv(report, index=False, encoding="utf-8")
        console.print(f"report written to {report}")

    settings.dump_dir.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now().strftime("%Y-%m-%d_%H-%M")
    dump = settings.dump_dir / f"eval_{result.strategy}_{result.representation}_{stamp}.json"
    dump.write_bytes(result.to_json())
    console.print(f"dump saved to {dump}")


@app.command()
def ablate(
    config: Path = typer.Option(..., exists=True, dir_okay=False, help="TOML ablation config."),
    out: Path = typer.Option(..., help="Output directory."),
):
    """Run every strategy/representation config on every seed."""
    settings = get_settings()
    with _reporting_errors():
        plan = load_ablation_config(config)
        banner(f"ABLATION: {len(plan.configs)} configs x {len(plan.seeds)} seeds")
        start = time.perf_counter()
        result = run_ablation(plan.configs, plan.seeds, out, workers=settings.workers,
                              progress=settings.progress)

    table = Table(title="ablation")
    for column in CSV_COLUMNS[:6] + ["attention"]:
        table.add_column(column)
    for row in result.table.itertuples(index=False):
        table.add_row(row.strategy, row.repr, str(row.seed), f"{row.acc:.4f}",
                      f"{row.fg_acc:.4f}", f"{row.fp_rate:.4f}", row.attention or "-")
    console.print(table)
    flags = result.flags
    console.print(f"representation trend holds on "
                  f"{flags['representation_holding']}/{len(flags['representation_trend'])}")
    console.print(f"strategy trend holds on {flags['strategy_holding']}/{len(flags['strategy_trend'])}")
    if flags["attention_trend"]:
        console.print(f"attention trend holds on "
                      f"{flags['attention_holding']}/{len(flags['attention_trend'])}")
    console.print(f"finished in {time.perf_counter() - start:.1f}s, outputs in {out}")


@app.command()
def gradcheck(
    module: str = typer.Option("all", help="Suite: mlp, conv, aaf, dff or all."),
    seed: int = typer.Option(0, min=0, help="Input seed."),
):
    """Finite-difference gradient checks; exits 1 when any suite fails."""
    banner(f"GRADCHECK {module}")
    try:
        results = run_suite(module, seed=seed)
    except ValueError as exc:
        raise typer.BadParameter(str(exc)) from exc

    table = Table()
    for column in ("suite", "max rel error", "checked", "kinks", "status"):
        table.add_column(column)
    for result in results:
        status = "[green]PASS[/green]" if result.passed else "[red]FAIL[/red]"
        table.add_row(result.name, f"{result.max_rel_error:.2e}", str(result.checked),
                      str(result.skipped), status)
    console.print(table)
    dump = orjson.dumps([r.to_dict() for r in results], option=orjson.OPT_SORT_KEYS)
    logger.debug("gradcheck results: %s", dump.decode())
    if not all(r.passed for r in results):
        raise typer.Exit(code=1)


def main(argv: Optional[List[str]] = None) -> None:
    app(args=argv)
