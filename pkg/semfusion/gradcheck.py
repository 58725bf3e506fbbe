"""
Finite-difference gradient verification.

``check_gradients`` compares tape gradients with central differences.
``run_suite`` runs the named checks used by ``python -m semfusion gradcheck``.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from semfusion.errors import DimensionError
from semfusion.tensor import Tensor, backward

logger = logging.getLogger(__name__)

# Configuration
GRADCHECK_STEP = 1e-5
GRADCHECK_TOLERANCE = 1e-4
KINK_TOLERANCE = 1e-4
SUITE_COORDS_PER_TENSOR = 8


@dataclass
class GradcheckResult:
    """Outcome of one named gradient check."""

    name: str
    max_rel_error: float
    checked: int
    skipped: int
    tolerance: float = GRADCHECK_TOLERANCE

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_rel_error <= self.tolerance

    def to_dict(self) -> dict:
        return {**asdict(self), "passed": self.passed}


def _scalar(loss: Tensor) -> float:
    if loss.size != 1:
        raise DimensionError(f"gradient check needs a scalar loss, got shape {loss.shape}")
    return float(loss.data.reshape(-1)[0])


def compare_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = GRADCHECK_STEP,
    max_coords: Optional[int] = None,
    seed: int = 0,
    kink_tol: Optional[float] = KINK_TOLERANCE,
) -> Tuple[float, int, int]:
    """
    Returns (max relative error, coordinates checked, coordinates skipped).

    A coordinate is skipped when its forward and backward one-sided
    differences disagree by more than ``kink_tol`` (relative), which happens
    only when a ReLU or max-pool switch lies within ``h`` of the point.
    Pass ``kink_tol=None`` to check every coordinate.
    """
    for param in params:
        param.grad = None
    base_loss = loss_fn()
    base = _scalar(base_loss)
    backward(base_loss)

    rng = np.random.default_rng(seed)
    worst = 0.0
    checked = skipped = 0
    for param in params:
        analytic = param.grad if param.grad is not None else np.zeros(param.shape)
        flat = param.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for idx in coords:
            original = flat[idx]
            flat[idx] = original + h
            plus = _scalar(loss_fn())
            flat[idx] = original - h
            minus = _scalar(loss_fn())
            flat[idx] = original

            a = float(analytic.reshape(-1)[idx])
            scale = max(1.0, abs(a))
            if kink_tol is not None:
                forward_slope = (plus - base) / h
                backward_slope = (base - minus) / h
                if abs(forward_slope - backward_slope) > kink_tol * scale:
                    skipped += 1
                    continue
            numeric = (plus - minus) / (2.0 * h)
            worst = max(worst, abs(a - numeric) / scale)
            checked += 1
    return worst, checked, skipped


def check_gradients(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = GRADCHECK_STEP,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|)."""
    x.requires_grad = True
    worst, _, _ = compare_gradients(lambda: f(x), [x], h, max_coords, seed, kink_tol=None)
    return worst


# --- Named suites ---

def _mlp_case(rng: np.random.Generator):
    from semfusion.functional import mse
    from semfusion.layers import Mlp

    mlp = Mlp.build([5, 8, 3], rng)
    x = Tensor(rng.normal(size=(6, 5)), requires_grad=True)
    target = rng.normal(size=(6, 3))
    return (lambda: mse(mlp(x), target)), [x] + mlp.parameters()


def _conv_case(rng: np.random.Generator):
    from semfusion.layers import ConvUnit, Deconv

    first = ConvUnit.init(3, 4, 3, rng)
    down = ConvUnit.init(4, 4, 3, rng, stride=2, padding=1)
    up = Deconv.init(4, 2, 2, rng, stride=2)
    x = Tensor(rng.normal(size=(2, 3, 8, 8)), requires_grad=True)
    direction = rng.normal(size=(2, 2, 8, 8))

    def loss():
        return (up(down(first(x))) * direction).sum()

    params = [x] + first.parameters() + down.parameters() + up.parameters()
    return loss, params


def _aaf_case(rng: np.random.Generator):
    from semfusion.aaf import AafConfig, AafParams, aaf_forward
    from semfusion.geometry import PointCloud
    from semfusion.semantics import PaintedPointCloud
    from semfusion.voxelizer import VoxelConfig, voxelize

    classes = 3
    points = rng.uniform(0.0, 4.0, size=(60, 3))
    painted = PaintedPointCloud(
        cloud=PointCloud(points),
        sem2d=rng.dirichlet(np.ones(classes), size=60),
        sem3d=rng.dirichlet(np.ones(classes), size=60),
    )
    grid = voxelize(painted, VoxelConfig(
        range_min=(0.0, 0.0, 0.0), range_max=(4.0, 4.0, 4.0),
        voxel_size=(2.0, 2.0, 2.0), points_per_voxel=4, seed=int(rng.integers(1 << 31)),
    ))
    params = AafParams.init(
        AafConfig(num_classes=classes, local_channels=6, global_channels=8,
                  attention_hidden=5, zero_attention=False),
        rng,
    )
    direction_fused = rng.normal(size=(grid.num_voxels, classes))
    direction_att = rng.normal(size=grid.num_voxels)

    def loss():
        out = aaf_forward(grid, params, training=True)
        return (out.fused * direction_fused).sum() + (out.attention * direction_att).sum()

    return loss, params.parameters()


def _dff_case(rng: np.random.Generator):
    from semfusion.dff import DffConfig, DffParams, dff_forward

    params = DffParams.init(DffConfig(in_channels=4, out_channels=6, block_channels=5), rng)
    params.beta.data = np.array(0.3)
    x = Tensor(0.5 * rng.normal(size=(1, 4, 8, 8)), requires_grad=True)
    direction = rng.normal(size=(1, 6, 8, 8))

    def loss():
        return (dff_forward(x, params, training=True) * direction).sum()

    return loss, [x] + params.parameters()


SUITES: Dict[str, Callable] = {
    "mlp": _mlp_case,
    "conv": _conv_case,
    "aaf": _aaf_case,
    "dff": _dff_case,
}


def run_suite(name: str = "all", seed: int = 0,
              max_coords: int = SUITE_COORDS_PER_TENSOR) -> List[GradcheckResult]:
    """Run one named suite, or every suite for ``"all"``."""
    if name != "all" and name not in SUITES:
        raise ValueError(f"unknown gradcheck suite {name!r}; choose from {sorted(SUITES)} or 'all'")
    names = list(SUITES) if name == "all" else [name]
    results = []
    for suite in names:
        loss_fn, params = SUITES[suite](np.random.default_rng(seed))
        worst, checked, skipped = compare_gradients(loss_fn, params, max_coords=max_coords, seed=seed)
        result = GradcheckResult(suite, worst, checked, skipped)
        logger.info("gradcheck %s: max rel err %.2e over %d coords (%d at kinks)",
                    suite, worst, checked, skipped)
        results.append(result)
    return results
