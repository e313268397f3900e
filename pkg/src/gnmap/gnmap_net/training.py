"""Training loops for the two phases.

Both loops walk the train split in seeded shuffled epochs, draw a fresh
mask plan per tile per epoch (pretraining only), and record the full loss
curve.  Everything is a pure function of (data, configs, seed): repeated
runs produce bit-identical parameters.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import TrainingDiverged
from ..map_model import sample_mask
from ..neural_core import Adam, ce_loss, mse_loss
from ..rng import Rng, derive_seed
from ..synth import TileSample
from .model import ModelParams, NetConfig, fuse_graph, pretrain_graph

log = logging.getLogger("gnmap.training")

#: package-wide training defaults; the CLI and the benchmark scripts use these
DEFAULT_PRETRAIN_STEPS = 1500
DEFAULT_FINETUNE_STEPS = 700
DEFAULT_LR = 1e-3


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 600
    lr: float = 1e-3
    #: when set, the learning rate follows a half-cosine from lr to lr_final
    lr_final: float | None = None
    #: global gradient-norm ceiling; cross-entropy spikes through the
    #: unnormalized attention residual destabilize training without it
    clip_norm: float | None = 1.0
    batch_size: int = 4
    seed: int = 0
    mask_ratio: float = 0.75
    log_every: int = 100

    def lr_at(self, step: int) -> float:
        if self.lr_final is None:
            return self.lr
        frac = step / max(self.steps - 1, 1)
        return self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + math.cos(math.pi * frac))


@dataclass
class TrainResult:
    params: ModelParams
    phase: str
    loss_curve: list[tuple[int, float]] = field(default_factory=list)
    carried: list[str] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.loss_curve[-1][1] if self.loss_curve else math.nan


def _clip_gradients(params, limit: float | None) -> None:
    if limit is None:
        return
    total = 0.0
    for p in params:
        total += float((p.grad ** 2).sum())
    norm = math.sqrt(total)
    if norm > limit:
        scale = limit / norm
        for p in params:
            p.grad *= scale


def _batches(n: int, batch_size: int, epoch_rng: Rng):
    order = list(range(n))
    epoch_rng.shuffle(order)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def pretrain_run(
    samples: Sequence[TileSample], net: NetConfig, cfg: TrainConfig
) -> TrainResult:
    """Minimize completion MSE against the full (unmasked) gray rasters."""
    if not samples:
        raise ValueError("pretraining needs a nonempty train split")
    mp = ModelParams(net, seed=derive_seed(cfg.seed, "init"))
    opt = Adam(mp.trainable("pretrain"), lr=cfg.lr)
    gray = np.stack([s.gt_gray.values for s in samples])
    n_patches = net.geometry.num_patches
    order_rng = Rng(derive_seed(cfg.seed, "order"))
    result = TrainResult(params=mp, phase="pretrain")

    step = 0
    epoch = 0
    while step < cfg.steps:
        for batch in _batches(len(samples), cfg.batch_size, order_rng):
            if step >= cfg.steps:
                break
            plans = [
                sample_mask(
                    n_patches, cfg.mask_ratio, derive_seed(cfg.seed, f"mask.e{epoch}.t{i}")
                )
                for i in batch
            ]
            pred = pretrain_graph(gray[batch], plans, mp)
            loss = mse_loss(pred, gray[batch])
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(step, value)
            opt.lr = cfg.lr_at(step)
            opt.zero_grad()
            loss.backward()
            _clip_gradients(opt.params, cfg.clip_norm)
            opt.step()
            result.loss_curve.append((step, value))
            if cfg.log_every and step % cfg.log_every == 0:
                log.info("pretrain step %d loss %.6f", step, value)
            step += 1
        epoch += 1
    return result


def _tours_chw(sample: TileSample, max_tours: int) -> list[np.ndarray]:
    # fusion takes at most max_tours inputs; extra tours are left unused
    return [
        np.ascontiguousarray(t.observed.values.transpose(2, 0, 1))
        for t in sample.tours[:max_tours]
    ]


def finetune_run(
    samples: Sequence[TileSample],
    net: NetConfig,
    cfg: TrainConfig,
    init: ModelParams | None = None,
) -> TrainResult:
    """Minimize fusion cross entropy; optionally start from pretrained blocks."""
    if not samples:
        raise ValueError("finetuning needs a nonempty train split")
    if any(len(s.tours) < 1 for s in samples):
        raise ValueError("every tile needs at least one tour")
    mp = ModelParams(net, seed=derive_seed(cfg.seed, "init"))
    carried: list[str] = []
    if init is not None:
        carried = mp.copy_carried_from(init)
        log.info("carried %d shared tensors from checkpoint", len(carried))
    opt = Adam(mp.trainable("finetune"), lr=cfg.lr)
    tours = [_tours_chw(s, net.fusion.max_tours) for s in samples]
    onehot = np.stack([s.gt_class.values for s in samples])
    order_rng = Rng(derive_seed(cfg.seed, "order"))
    result = TrainResult(params=mp, phase="finetune", carried=carried)

    step = 0
    while step < cfg.steps:
        for batch in _batches(len(samples), cfg.batch_size, order_rng):
            if step >= cfg.steps:
                break
            pred = fuse_graph([tours[i] for i in batch], mp)
            loss = ce_loss(pred, onehot[batch])
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(step, value)
            opt.lr = cfg.lr_at(step)
            opt.zero_grad()
            loss.backward()
            _clip_gradients(opt.params, cfg.clip_norm)
            opt.step()
            result.loss_curve.append((step, value))
            if cfg.log_every and step % cfg.log_every == 0:
                log.info("finetune step %d loss %.6f", step, value)
            step += 1
    return result


def masked_completion_mse(
    samples: Sequence[TileSample], mp: ModelParams, mask_ratio: float, eval_seed: int
) -> float:
    """Mean completion MSE over tiles with fixed per-tile eval masks."""
    n_patches = mp.net.geometry.num_patches
    total = 0.0
    for i, s in enumerate(samples):
        plan = sample_mask(n_patches, mask_ratio, derive_seed(eval_seed, f"eval.t{i}"))
        pred = pretrain_graph(s.gt_gray.values[None], [plan], mp)
        total += float(((pred.data[0] - s.gt_gray.values) ** 2).mean())
    return total / len(samples)


def fusion_ce(samples: Sequence[TileSample], mp: ModelParams) -> float:
    """Mean fusion cross entropy over tiles."""
    total = 0.0
    for s in samples:
        pred = fuse_graph([_tours_chw(s, mp.net.fusion.max_tours)], mp)
        loss = ce_loss(pred, s.gt_class.values[None])
        total += loss.item()
    return total / len(samples)


def write_loss_curve(curve: list[tuple[int, float]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("step,loss\n")
        for step, value in curve:
            f.write(f"{step},{value!r}\n")
