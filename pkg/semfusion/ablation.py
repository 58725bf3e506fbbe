"""
Ablation harness: every (strategy, representation) config on every seed,
aaf-dff also crossed with its DFF attention modes, one CSV row each, plus
trend flags and a bar chart of accuracy deltas.

Config file (TOML):

    [ablation]
    seeds = [0, 1, 2, 3, 4]
    strategies = ["sem2d", "sem3d", "aaf", "aaf-dff"]
    representations = ["score"]
    attention_modes = ["none", "one_scale", "multi_scale"]   # aaf-dff only

    [experiment]      ExperimentConfig scalars (points_per_voxel, train_scenes, ...)
    [scene]           SceneParams fields
    [corruption]      CorruptionConfig fields, plus ``confusion_pair = [a, b, p]``
                      or ``confusion_file = "path"`` (relative to the config)
    [training]        TrainingConfig fields
    [dff]             DffConfig fields
"""

import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import orjson  # noqa: E402
import pandas as pd  # noqa: E402
import toml  # noqa: E402

from semfusion import formats  # noqa: E402
from semfusion.dff import AttentionMode  # noqa: E402
from semfusion.errors import FormatError  # noqa: E402
from semfusion.metrics import Report  # noqa: E402
from semfusion.model import Strategy  # noqa: E402
from semfusion.pipeline import PIPELINE_DFF, ExperimentConfig, experiment_samples, train  # noqa: E402
from semfusion.semantics import Representation  # noqa: E402
from semfusion.synth import confusion_pair  # noqa: E402

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["strategy", "repr", "seed", "acc", "fg_acc", "fp_rate", "steps", "wall_ms"]
ABLATION_COLUMNS = CSV_COLUMNS + ["attention"]
REPRESENTATION_GAP = 0.005   # SCORE must beat ID by half a point
FUSION_MARGIN = 0.02         # AAF over the best single modality


@dataclass
class AblationPlan:
    configs: List[ExperimentConfig]
    seeds: List[int]


@dataclass
class AblationResult:
    table: pd.DataFrame
    flags: dict
    reports: List[Report]


# --- Config files ---

def _corruption_section(section: dict, num_classes: int, base_dir: Path) -> dict:
    section = dict(section)
    pair = section.pop("confusion_pair", None)
    path = section.pop("confusion_file", None)
    if pair is not None and path is not None:
        raise FormatError("[corruption] takes confusion_pair or confusion_file, not both")
    if pair is not None:
        if len(pair) != 3:
            raise FormatError(f"confusion_pair must be [a, b, p], got {pair}")
        section["confusion"] = confusion_pair(num_classes, int(pair[0]), int(pair[1]), float(pair[2]))
    if path is not None:
        section["confusion"] = formats.read_confusion(base_dir / path)
    return section


def parse_ablation_config(text: str, base_dir: Path = Path(".")) -> AblationPlan:
    try:
        raw = toml.loads(text)
    except toml.TomlDecodeError as exc:
        raise FormatError(f"ablation config: {exc}") from exc
    unknown = set(raw) - {"ablation", "experiment", "scene", "corruption", "training", "dff"}
    if unknown:
        raise FormatError(f"ablation config: unknown sections {sorted(unknown)}")

    plan = raw.get("ablation", {})
    scene = raw.get("scene", {})
    num_classes = scene.get("num_classes", ExperimentConfig().num_classes)
    base = dict(raw.get("experiment", {}))
    base["scene"] = scene
    base["corruption"] = _corruption_section(raw.get("corruption", {}), num_classes, base_dir)
    base["training"] = raw.get("training", {})
    dff = {**PIPELINE_DFF.model_dump(mode="json"), **raw.get("dff", {})}
    base["dff"] = dff

    strategies = [Strategy(s) for s in plan.get("strategies", [s.value for s in Strategy])]
    representations = [Representation(r) for r in plan.get("representations", ["score"])]
    modes = [AttentionMode(a) for a in plan.get("attention_modes", [dff["attention"]])]
    if not modes:
        raise FormatError("ablation config: attention_modes is empty")
    configs = []
    for strategy, representation in itertools.product(strategies, representations):
        # attention only matters where DFF runs
        for mode in (modes if strategy is Strategy.AAF_DFF else modes[:1]):
            configs.append(ExperimentConfig.model_validate({
                **base, "dff": {**dff, "attention": mode.value},
                "strategy": strategy, "representation": representation,
            }))
    return AblationPlan(configs=configs, seeds=[int(s) for s in plan.get("seeds", [0])])


def load_ablation_config(path) -> AblationPlan:
    path = Path(path)
    return parse_ablation_config(path.read_text(encoding="utf-8"), path.parent)


# --- Trend flags ---

def _full_module(table: pd.DataFrame) -> pd.DataFrame:
    """One aaf-dff row per (repr, seed): multi-scale attention when it was run."""
    if "attention" not in table.columns:
        return table
    dff = table["strategy"] == Strategy.AAF_DFF.value
    multi = table["attention"] == AttentionMode.MULTI_SCALE.value
    if (dff & multi).any():
        return table[~dff | multi]
    return table


def representation_flags(table: pd.DataFrame) -> List[dict]:
    """Per (strategy, seed): SCORE >= ONEHOT >= ID and SCORE > ID + gap."""
    flags = []
    for (strategy, seed), group in _full_module(table).groupby(["strategy", "seed"], sort=True):
        acc = {r: float(a) for r, a in zip(group["repr"], group["acc"])}
        if not {"id", "onehot", "score"} <= set(acc):
            continue
        holds = (acc["score"] >= acc["onehot"] >= acc["id"]
                 and acc["score"] > acc["id"] + REPRESENTATION_GAP)
        flags.append({"strategy": strategy, "seed": int(seed), "holds": bool(holds),
                      "score": acc["score"], "onehot": acc["onehot"], "id": acc["id"]})
    return flags


def strategy_flags(table: pd.DataFrame) -> List[dict]:
    """Per (repr, seed): AAF_DFF >= AAF >= max(2D, 3D), plus the AAF margin."""
    flags = []
    for (representation, seed), group in _full_module(table).groupby(["repr", "seed"], sort=True):
        acc = {s: float(a) for s, a in zip(group["strategy"], group["acc"])}
        if not {s.value for s in Strategy} <= set(acc):
            continue
        best_single = max(acc["sem2d"], acc["sem3d"])
        margin = acc["aaf"] - best_single
        flags.append({
            "repr": representation, "seed": int(seed),
            "holds": bool(acc["aaf-dff"] >= acc["aaf"] >= best_single),
            "margin_holds": bool(margin >= FUSION_MARGIN and acc["aaf-dff"] >= acc["aaf"]),
            "aaf_margin": margin,
            **{name: acc[name] for name in ("sem2d", "sem3d", "aaf", "aaf-dff")},
        })
    return flags


def attention_flags(table: pd.DataFrame) -> List[dict]:
    """Per (repr, seed) of aaf-dff: MULTI_SCALE >= ONE_SCALE >= NONE."""
    if "attention" not in table.columns:
        return []
    flags = []
    dff = table[table["strategy"] == Strategy.AAF_DFF.value]
    for (representation, seed), group in dff.groupby(["repr", "seed"], sort=True):
        acc = {m: float(a) for m, a in zip(group["attention"], group["acc"])}
        if not {m.value for m in AttentionMode} <= set(acc):
            continue
        flags.append({
            "repr": representation, "seed": int(seed),
            "holds": bool(acc["multi_scale"] >= acc["one_scale"] >= acc["none"]),
            **{m.value: acc[m.value] for m in AttentionMode},
        })
    return flags


def trend_flags(table: pd.DataFrame) -> dict:
    representation_trend = representation_flags(table)
    strategy_trend = strategy_flags(table)
    attention_trend = attention_flags(table)
    return {
        "representation_trend": representation_trend,
        "strategy_trend": strategy_trend,
        "attention_trend": attention_trend,
        "representation_holding": sum(f["holds"] for f in representation_trend),
        "strategy_holding": sum(f["holds"] for f in strategy_trend),
        "strategy_margin_holding": sum(f["margin_holds"] for f in strategy_trend),
        "attention_holding": sum(f["holds"] for f in attention_trend),
    }


# --- Deltas and chart ---

def fill_deltas(reports: Sequence[Report]) -> None:
    """Each report gets its accuracy minus every other variant's on the same seed and repr."""
    groups: Dict[tuple, List[Report]] = {}
    for report in reports:
        groups.setdefault((report.representation, tuple(report.seeds)), []).append(report)
    for group in groups.values():
        for report in group:
            report.deltas = {other.variant: report.accuracy - other.accuracy
                             for other in group if other is not report}


def mean_deltas(table: pd.DataFrame) -> pd.Series:
    """Mean accuracy per (strategy, attention, repr) minus the weakest such mean."""
    if "attention" not in table.columns:
        table = table.assign(attention="")
    means = table.groupby(["strategy", "attention", "repr"], sort=True)["acc"].mean()
    return means - means.min()


def plot_deltas(table: pd.DataFrame, path: Path) -> None:
    deltas = mean_deltas(table)
    labels = [f"{strategy}{'/' + attention if attention else ''}/{representation}"
              for strategy, attention, representation in deltas.index]
    plt.rcParams["svg.hashsalt"] = "semfusion"
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(labels)), 3.5))
    ax.bar(labels, deltas.values * 100.0, color="#4c72b0")
    ax.set_ylabel("accuracy delta vs weakest (pt)")
    ax.set_title("Ablation")
    ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# --- Harness ---

def report_row(report: Report, seed: int) -> dict:
    """One CSV row; ``attention`` is empty for strategies without DFF."""
    return {"strategy": report.strategy, "repr": report.representation, "seed": seed,
            "acc": report.accuracy, "fg_acc": report.fg_accuracy, "fp_rate": report.fp_rate,
            "steps": report.steps, "wall_ms": report.wall_ms, "attention": report.attention}


def run_ablation(configs: Sequence[ExperimentConfig], seeds: Sequence[int],
                 out_dir: Optional[Path] = None, workers: int = 1,
                 progress: bool = False) -> AblationResult:
    """
    Train every config on every seed. Scenes are generated once per seed and
    shared by every config with the same data settings.
    """
    keys = {cfg.with_seed(0).data_key() for cfg in configs}
    if len(keys) > 1:
        logger.warning("ablation configs generate different scenes; deltas mix data sets")

    rows, reports = [], []
    cache: Dict[bytes, tuple] = {}
    for seed in seeds:
        for cfg in configs:
            run_cfg = cfg.with_seed(int(seed))
            key = run_cfg.data_key()
            if key not in cache:
                cache[key] = experiment_samples(run_cfg, workers)
            train_samples, eval_samples = cache[key]
            result = train(run_cfg, train_samples, eval_samples, workers=workers, progress=progress)
            reports.append(result.report)
            rows.append(report_row(result.report, int(seed)))
        cache.clear()

    fill_deltas(reports)
    table = pd.DataFrame(rows, columns=ABLATION_COLUMNS)
    flags = trend_flags(table)
    if out_dir is not None:
        write_outputs(AblationResult(table, flags, reports), Path(out_dir))
    return AblationResult(table, flags, reports)


def write_outputs(result: AblationResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    result.table.to_csv(out_dir / "ablation.csv", index=False, encoding="utf-8")
    plot_deltas(result.table, out_dir / "ablation.svg")
    option = orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2
    (out_dir / "flags.json").write_bytes(orjson.dumps(result.flags, option=option))
    (out_dir / "reports.json").write_bytes(
        orjson.dumps([r.to_dict() for r in result.reports], option=option))
    logger.info("wrote ablation outputs to %s", out_dir)
