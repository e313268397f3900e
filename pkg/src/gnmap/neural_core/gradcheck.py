"""Central finite-difference verification of analytic gradients.

Used both by the test suite and by the `grad-check` CLI subcommand.  The
forward callable must rebuild its graph from the live parameter arrays on
every call so that in-place parameter probes take effect.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..rng import Rng
from .ops import AttentionConfig, init_ln, init_mlp, init_msa, linear, mlp, msa
from .tensor import Param, Tensor, ce_loss, conv2d, layer_norm, mse_loss, softmax

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
# relative-error floor: gradients smaller than this are compared absolutely
_REL_FLOOR = 1e-4


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    max_abs_error: float
    num_elements: int


@dataclass
class GradCheckReport:
    checks: list[ParamCheck] = field(default_factory=list)
    step: float = DEFAULT_STEP
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def max_rel_error(self) -> float:
        return max((c.max_rel_error for c in self.checks), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "tolerance": self.tolerance,
            "step": self.step,
            "params": [
                {
                    "name": c.name,
                    "max_rel_error": c.max_rel_error,
                    "max_abs_error": c.max_abs_error,
                    "num_elements": c.num_elements,
                }
                for c in self.checks
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def grad_check(
    forward: Callable[[], Tensor],
    params: Sequence[Param],
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
) -> GradCheckReport:
    """Compare analytic gradients of a scalar forward pass to central differences."""
    for p in params:
        p.zero_grad()
    loss = forward()
    loss.backward()
    analytic = {p.name: np.array(p.grad, copy=True) for p in params}

    report = GradCheckReport(step=step, tolerance=tolerance)
    for p in params:
        flat = p.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = forward().item()
            flat[i] = orig - step
            f_minus = forward().item()
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2.0 * step)
        a = analytic[p.name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), _REL_FLOOR)
        rel = np.abs(a - numeric) / denom
        report.checks.append(
            ParamCheck(
                name=p.name,
                max_rel_error=float(rel.max()) if rel.size else 0.0,
                max_abs_error=float(np.abs(a - numeric).max()) if rel.size else 0.0,
                num_elements=int(flat.size),
            )
        )
    return report


# ---------------------------------------------------------------------------
# named standard checks (CLI `grad-check --module ...`)


def _rand(rng: Rng, shape) -> np.ndarray:
    return np.array(rng.normals(int(np.prod(shape))), dtype=np.float64).reshape(shape)


def _check_linear(seed: int) -> tuple[Callable[[], Tensor], list[Param]]:
    rng = Rng(seed)
    x = _rand(rng, (3, 4))
    w = Param(_rand(rng, (4, 2)), "w")
    b = Param(_rand(rng, (2,)), "b")
    target = _rand(rng, (3, 2))
    return lambda: mse_loss(linear(Tensor(x), w, b), target), [w, b]


def _check_softmax(seed: int) -> tuple[Callable[[], Tensor], list[Param]]:
    rng = Rng(seed)
    x = Param(_rand(rng, (3, 5)), "x")
    weights = _rand(rng, (3, 5))
    return lambda: mse_loss(softmax(x), weights), [x]


def _check_layer_norm(seed: int) -> tuple[Callable[[], Tensor], list[Param]]:
    rng = Rng(seed)
    x = Param(_rand(rng, (4, 6)), "x")
    gamma = Param(1.0 + 0.1 * _rand(rng, (6,)), "gamma")
    beta = Param(0.1 * _rand(rng, (6,)), "beta")
    target = _rand(rng, (4, 6))
    return lambda: mse_loss(layer_norm(x, gamma, beta), target), [x, gamma, beta]


def _check_msa(seed: int) -> tuple[Callable[[], Tensor], list[Param]]:
    rng = Rng(seed)
    cfg = AttentionConfig(model_dim=4, num_heads=2)
    p = init_msa("attn", cfg, rng)
    x = Param(_rand(rng, (3, 4)), "x")
    target = _rand(rng, (3, 4))
    return lambda: mse_loss(msa(x, p, cfg), target), [x] + p.all()


def _check_mlp(seed: int) -> tuple[Callable[[], Tensor], list[Param]]:
    rng = Rng(seed)
    p = init_mlp("mlp", 3, rng)
    x = Param(_rand(rng, (4, 3)), "x")
    target = _rand(rng, (4, 3))
    return lambda: mse_loss(mlp(x, p), target), [x] + p.all()


def _check_conv2d(seed: int) -> tuple[Callable[[], Tensor], list[Param]]:
    rng = Rng(seed)
    x = Param(_rand(rng, (2, 5, 5)), "x")
    k = Param(0.3 * _rand(rng, (3, 2, 3, 3)), "k")
    b = Param(0.1 * _rand(rng, (3,)), "b")
    target = _rand(rng, (3, 5, 5))
    return lambda: mse_loss(conv2d(x, k, b), target), [x, k, b]


def _check_mse(seed: int) -> tuple[Callable[[], Tensor], list[Param]]:
    rng = Rng(seed)
    x = Param(_rand(rng, (4, 4)), "x")
    target = _rand(rng, (4, 4))
    return lambda: mse_loss(x, target), [x]


def _check_ce(seed: int) -> tuple[Callable[[], Tensor], list[Param]]:
    rng = Rng(seed)
    logits = Param(_rand(rng, (6, 4)), "logits")
    onehot = np.zeros((6, 4))
    for i in range(6):
        onehot[i, rng.randint(4)] = 1.0
    return lambda: ce_loss(softmax(logits), onehot), [logits]


def _check_encoder_block(seed: int) -> tuple[Callable[[], Tensor], list[Param]]:
    rng = Rng(seed)
    cfg = AttentionConfig(model_dim=4, num_heads=2)
    attn = init_msa("attn", cfg, rng)
    ff = init_mlp("mlp", 4, rng)
    ln = init_ln("ln", 4)
    x = Param(_rand(rng, (3, 4)), "x")
    target = _rand(rng, (3, 4))

    def forward() -> Tensor:
        from .tensor import add

        xt: Tensor = x
        u = add(msa(xt, attn, cfg), xt)
        out = layer_norm(add(mlp(u, ff), u), ln.gamma, ln.beta)
        return mse_loss(out, target)

    return forward, [x] + attn.all() + ff.all() + ln.all()


STANDARD_CHECKS: dict[str, Callable[[int], tuple[Callable[[], Tensor], list[Param]]]] = {
    "linear": _check_linear,
    "softmax": _check_softmax,
    "layer_norm": _check_layer_norm,
    "msa": _check_msa,
    "mlp": _check_mlp,
    "conv2d": _check_conv2d,
    "mse": _check_mse,
    "ce": _check_ce,
    "encoder_block": _check_encoder_block,
}


def run_named_check(name: str, seed: int) -> GradCheckReport:
    if name not in STANDARD_CHECKS:
        raise KeyError(f"unknown grad-check module {name!r}; choices: {sorted(STANDARD_CHECKS)}")
    forward, params = STANDARD_CHECKS[name](seed)
    return grad_check(forward, params)
