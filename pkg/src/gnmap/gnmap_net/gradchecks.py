"""End-to-end gradient checks of the two training objectives.

Runs the full pretrain forward + MSE and fusion forward + CE on a tiny
configuration (16x16 rasters, 8x8 patches, model dim 8, one block per
stack) and compares every parameter gradient against central finite
differences.
"""

from __future__ import annotations

import numpy as np

from ..map_model import sample_mask
from ..neural_core import GradCheckReport, ce_loss, grad_check, mse_loss
from ..rng import Rng
from .model import (
    DecoderConfig,
    EncoderConfig,
    FusionConfig,
    GeometryConfig,
    ModelParams,
    NetConfig,
    fuse_graph,
    pretrain_graph,
)


def tiny_net_config(channels: int = 3) -> NetConfig:
    return NetConfig(
        geometry=GeometryConfig(h=16, w=16, resolution=0.25, patch_h=8, patch_w=8,
                                channels=channels),
        encoder=EncoderConfig(layers=1, model_dim=8, num_heads=2),
        decoder=DecoderConfig(layers=1, model_dim=8, num_heads=2),
        fusion=FusionConfig(tour_features=2, max_tours=2),
    )


def pretrain_check(seed: int) -> tuple:
    net = tiny_net_config()
    mp = ModelParams(net, seed=seed)
    g = net.geometry
    rng = Rng(seed + 1)
    rasters = (np.array(rng.normals(2 * g.h * g.w)).reshape(2, g.h, g.w) > 0.5).astype(float)
    plans = [
        sample_mask(g.num_patches, 0.5, seed + 2),
        sample_mask(g.num_patches, 0.5, seed + 3),
    ]

    def forward():
        return mse_loss(pretrain_graph(rasters, plans, mp), rasters)

    return forward, mp.trainable("pretrain")


def fuse_check(seed: int) -> tuple:
    net = tiny_net_config()
    mp = ModelParams(net, seed=seed)
    g = net.geometry
    rng = Rng(seed + 1)
    # one tile with a single tour exercises the zero-pad path
    tour = np.array(rng.normals(g.channels * g.h * g.w)).reshape(g.channels, g.h, g.w)
    labels = np.array([rng.randint(g.channels) for _ in range(g.h * g.w)])
    onehot = np.zeros((1, g.h, g.w, g.channels))
    onehot.reshape(-1, g.channels)[np.arange(g.h * g.w), labels] = 1.0

    def forward():
        return ce_loss(fuse_graph([[tour]], mp), onehot)

    return forward, mp.trainable("finetune")


END_TO_END_CHECKS = {"pretrain": pretrain_check, "fuse": fuse_check}


def run_end_to_end_check(which: str, seed: int) -> GradCheckReport:
    forward, params = END_TO_END_CHECKS[which](seed)
    return grad_check(forward, params)
