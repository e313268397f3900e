"""The shared autoencoder and its two task heads.

One parameter container holds everything both phases need.  The encoder
and decoder block weights are the shared network reused across phases;
patch embeddings, positional embeddings, the mask token, the two heads
and the tour-feature extractor are phase-specific and reinitialized when
a pretrained checkpoint seeds a finetune run.

Residual wiring per block, applied in both the encoder and decoder:

    u' = MSA(u) + u
    u  = LN(MLP(u') + u')

The first residual is deliberately not normalized; only the MLP residual
passes through LN.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import GeometryError, ShapeError
from ..map_model import ClassRaster, GrayRaster, MaskPlan, patchify
from ..rng import Rng, derive_seed
from ..neural_core import (
    AttentionConfig,
    LnParams,
    MlpParams,
    MsaParams,
    Param,
    Tensor,
    add,
    concat,
    conv2d,
    expand,
    gather_rows,
    gelu,
    init_ln,
    init_mlp,
    init_msa,
    linear,
    layer_norm,
    mlp,
    msa,
    reshape,
    scatter_rows,
    sigmoid,
    softmax,
    transpose,
)
from ..neural_core.tensor import slice_axis0
from ..neural_core.ops import INIT_SIGMA, _normal, _zeros
from ..synth import TourObservation


@dataclass(frozen=True)
class GeometryConfig:
    h: int = 64
    w: int = 64
    resolution: float = 0.25
    patch_h: int = 8
    patch_w: int = 8
    channels: int = 4  # categories incl. background

    def __post_init__(self):
        if self.h % self.patch_h or self.w % self.patch_w:
            raise GeometryError(
                f"patch {self.patch_h}x{self.patch_w} must divide raster {self.h}x{self.w}"
            )
        if self.channels < 2:
            raise GeometryError("need at least background + one category channel")

    @property
    def num_patches(self) -> int:
        return (self.h // self.patch_h) * (self.w // self.patch_w)

    @property
    def patch_pixels(self) -> int:
        return self.patch_h * self.patch_w


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 4
    model_dim: int = 64
    num_heads: int = 4

    def __post_init__(self):
        if self.layers < 1:
            raise ShapeError("encoder needs >= 1 blocks")


@dataclass(frozen=True)
class DecoderConfig:
    layers: int = 2
    model_dim: int = 64
    num_heads: int = 4

    def __post_init__(self):
        if self.layers < 1:
            raise ShapeError("decoder needs >= 1 blocks")


@dataclass(frozen=True)
class FusionConfig:
    tour_features: int = 8  # feature channels per tour from the extractor
    max_tours: int = 5      # tours are zero-padded up to this count


@dataclass(frozen=True)
class NetConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def __post_init__(self):
        if self.encoder.model_dim != self.decoder.model_dim:
            raise ShapeError("encoder and decoder must share model_dim")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(doc: dict) -> "NetConfig":
        return NetConfig(
            geometry=GeometryConfig(**doc["geometry"]),
            encoder=EncoderConfig(**doc["encoder"]),
            decoder=DecoderConfig(**doc["decoder"]),
            fusion=FusionConfig(**doc["fusion"]),
        )


@dataclass
class Block:
    attn: MsaParams
    mlp: MlpParams
    ln: LnParams

    def all(self) -> list[Param]:
        return self.attn.all() + self.mlp.all() + self.ln.all()


CARRIED_PREFIXES = ("encoder.", "decoder.")


class ModelParams:
    """Every parameter of both phases, keyed by a stable dotted name."""

    def __init__(self, net: NetConfig, seed: int, arrays: dict[str, np.ndarray] | None = None):
        self.net = net
        self.seed = seed
        self.params: dict[str, Param] = {}
        rng = Rng(derive_seed(seed, "params"))
        self._arrays = arrays

        def make(name: str, shape: tuple[int, ...], kind: str) -> Param:
            if self._arrays is not None:
                data = self._arrays[name]
                if tuple(data.shape) != shape:
                    raise ShapeError(f"stored {name} has shape {data.shape}, expected {shape}")
            elif kind == "normal":
                data = _normal(rng, shape, INIT_SIGMA)
            elif kind == "zeros":
                data = _zeros(shape)
            else:
                data = np.ones(shape, dtype=np.float64)
            p = Param(data, name)
            if name in self.params:
                raise ValueError(f"duplicate parameter name {name}")
            self.params[name] = p
            return p

        g = net.geometry
        d = net.encoder.model_dim
        pp = g.patch_pixels
        fuse_in = pp * net.fusion.tour_features * net.fusion.max_tours

        def make_block(prefix: str, cfg: AttentionConfig) -> Block:
            attn = MsaParams(
                w_q=make(f"{prefix}.attn.w_q", (d, d), "normal"),
                b_q=make(f"{prefix}.attn.b_q", (d,), "zeros"),
                w_k=make(f"{prefix}.attn.w_k", (d, d), "normal"),
                b_k=make(f"{prefix}.attn.b_k", (d,), "zeros"),
                w_v=make(f"{prefix}.attn.w_v", (d, d), "normal"),
                b_v=make(f"{prefix}.attn.b_v", (d,), "zeros"),
                w_o=make(f"{prefix}.attn.w_o", (d, d), "normal"),
                b_o=make(f"{prefix}.attn.b_o", (d,), "zeros"),
            )
            ff = MlpParams(
                w1=make(f"{prefix}.mlp.w1", (d, 4 * d), "normal"),
                b1=make(f"{prefix}.mlp.b1", (4 * d,), "zeros"),
                w2=make(f"{prefix}.mlp.w2", (4 * d, d), "normal"),
                b2=make(f"{prefix}.mlp.b2", (d,), "zeros"),
            )
            ln = LnParams(
                gamma=make(f"{prefix}.ln.gamma", (d,), "ones"),
                beta=make(f"{prefix}.ln.beta", (d,), "zeros"),
            )
            return Block(attn=attn, mlp=ff, ln=ln)

        self.encoder_cfg = AttentionConfig(d, net.encoder.num_heads)
        self.decoder_cfg = AttentionConfig(d, net.decoder.num_heads)
        self.encoder_blocks = [
            make_block(f"encoder.block{i}", self.encoder_cfg) for i in range(net.encoder.layers)
        ]
        self.decoder_blocks = [
            make_block(f"decoder.block{j}", self.decoder_cfg) for j in range(net.decoder.layers)
        ]

        self.pos_embed = make("embed.pos", (g.num_patches, d), "normal")
        self.mask_token = make("embed.mask_token", (d,), "normal")
        self.pre_embed_w = make("pretrain.patch_embed.w", (pp, d), "normal")
        self.pre_embed_b = make("pretrain.patch_embed.b", (d,), "zeros")
        self.pre_head_w = make("pretrain.head.w", (d, pp), "normal")
        self.pre_head_b = make("pretrain.head.b", (pp,), "zeros")
        self.fuse_embed_w = make("finetune.patch_embed.w", (fuse_in, d), "normal")
        self.fuse_embed_b = make("finetune.patch_embed.b", (d,), "zeros")
        self.fuse_head_w = make("finetune.head.w", (d, pp * g.channels), "normal")
        self.fuse_head_b = make("finetune.head.b", (pp * g.channels,), "zeros")
        f = net.fusion.tour_features
        self.ext_k1 = make("finetune.extractor.conv1.k", (f, g.channels, 3, 3), "normal")
        self.ext_b1 = make("finetune.extractor.conv1.b", (f,), "zeros")
        self.ext_k2 = make("finetune.extractor.conv2.k", (f, f, 3, 3), "normal")
        self.ext_b2 = make("finetune.extractor.conv2.b", (f,), "zeros")
        self._arrays = None

    def carried_names(self) -> list[str]:
        """Parameters shared verbatim between phases: the block weights."""
        return sorted(n for n in self.params if n.startswith(CARRIED_PREFIXES))

    def trainable(self, phase: str) -> list[Param]:
        shared = [p for n, p in self.params.items() if n.startswith(CARRIED_PREFIXES)]
        if phase == "pretrain":
            extra_prefixes = ("pretrain.", "embed.")
        elif phase == "finetune":
            extra_prefixes = ("finetune.", "embed.pos")
        else:
            raise ValueError(f"unknown phase {phase!r}")
        extra = [p for n, p in self.params.items() if n.startswith(extra_prefixes)]
        return shared + extra

    def copy_carried_from(self, other: "ModelParams") -> list[str]:
        """Load the shared block weights from another model; returns their names."""
        if other.net.encoder != self.net.encoder or other.net.decoder != self.net.decoder:
            raise ShapeError("encoder/decoder configs differ; cannot carry weights over")
        names = self.carried_names()
        for name in names:
            self.params[name].data[...] = other.params[name].data
        return names


# ---------------------------------------------------------------------------
# forward graphs (batched; public single-tile wrappers below)


def apply_blocks(x: Tensor, blocks: list[Block], cfg: AttentionConfig) -> Tensor:
    for blk in blocks:
        u = add(msa(x, blk.attn, cfg), x)
        x = layer_norm(add(mlp(u, blk.mlp), u), blk.ln.gamma, blk.ln.beta)
    return x


def encode(tokens: Tensor, mp: ModelParams) -> Tensor:
    return apply_blocks(tokens, mp.encoder_blocks, mp.encoder_cfg)


def decode(latent_full: Tensor, mp: ModelParams) -> Tensor:
    n = latent_full.shape[-2]
    if n != mp.net.geometry.num_patches:
        raise ShapeError(
            f"decoder input must cover all {mp.net.geometry.num_patches} patch positions, got {n}"
        )
    return apply_blocks(latent_full, mp.decoder_blocks, mp.decoder_cfg)


def embed_tokens(patches: Tensor, indices: np.ndarray, w: Param, b: Param, mp: ModelParams) -> Tensor:
    """linear(patch) + positional embedding for the given patch indices."""
    return add(linear(patches, w, b), gather_rows(mp.pos_embed, indices))


def embed_patches(visible_patches: np.ndarray, plan: MaskPlan, mp: ModelParams) -> Tensor:
    """Pretrain tokenizer: visible patches only, (n_visible, d)."""
    if visible_patches.shape != (len(plan.kept_indices), mp.net.geometry.patch_pixels):
        raise ShapeError(
            f"expected {(len(plan.kept_indices), mp.net.geometry.patch_pixels)} visible patches,"
            f" got {visible_patches.shape}"
        )
    idx = np.asarray(plan.kept_indices, dtype=np.int64)[None, :]
    tokens = embed_tokens(
        Tensor(visible_patches[None]), idx, mp.pre_embed_w, mp.pre_embed_b, mp
    )
    return reshape(tokens, tokens.shape[1:])


def _insert_mask_tokens(latent: Tensor, kept: np.ndarray, mp: ModelParams) -> Tensor:
    """Full-length decoder input: latent at kept slots, mask token + pos elsewhere."""
    b, _, d = latent.shape
    n = mp.net.geometry.num_patches
    base = add(reshape(mp.mask_token, (1, 1, d)), reshape(mp.pos_embed, (1, n, d)))
    return scatter_rows(expand(base, (b, n, d)), kept, latent)


def _unpatchify_graph(tokens: Tensor, g: GeometryConfig, channels: int) -> Tensor:
    b = tokens.shape[0]
    hp, wp = g.h // g.patch_h, g.w // g.patch_w
    t = reshape(tokens, (b, hp, wp, g.patch_h, g.patch_w, channels))
    t = transpose(t, (0, 1, 3, 2, 4, 5))
    return reshape(t, (b, g.h, g.w, channels))


def _patchify_graph(x: Tensor, g: GeometryConfig) -> Tensor:
    """(B, C, h, w) -> (B, num_patches, patch_pixels * C), channels innermost."""
    b, c = x.shape[0], x.shape[1]
    hp, wp = g.h // g.patch_h, g.w // g.patch_w
    t = transpose(x, (0, 2, 3, 1))  # (B, h, w, C)
    t = reshape(t, (b, hp, g.patch_h, wp, g.patch_w, c))
    t = transpose(t, (0, 1, 3, 2, 4, 5))
    return reshape(t, (b, g.num_patches, g.patch_pixels * c))


def pretrain_graph(rasters: np.ndarray, plans: list[MaskPlan], mp: ModelParams) -> Tensor:
    """Masked completion for a batch of gray rasters -> (B, h, w) in [0, 1]."""
    g = mp.net.geometry
    if rasters.ndim != 3 or rasters.shape[1:] != (g.h, g.w):
        raise ShapeError(f"expected (B, {g.h}, {g.w}) rasters, got {rasters.shape}")
    if len(plans) != rasters.shape[0]:
        raise ShapeError("one mask plan per raster required")
    visible_counts = {len(p.kept_indices) for p in plans}
    if len(visible_counts) != 1:
        raise ShapeError("all mask plans in a batch must keep the same patch count")
    if next(iter(visible_counts)) == 0:
        raise ShapeError("mask plans keep zero patches; the encoder needs >= 1 token")
    for plan in plans:
        if plan.num_patches != g.num_patches:
            raise ShapeError(
                f"mask plan covers {plan.num_patches} patches, geometry has {g.num_patches}"
            )
    patches = np.stack([patchify(r, g.patch_h, g.patch_w) for r in rasters])
    kept = np.array([p.kept_indices for p in plans], dtype=np.int64)
    visible = np.take_along_axis(patches, kept[:, :, None], axis=1)
    tokens = embed_tokens(Tensor(visible), kept, mp.pre_embed_w, mp.pre_embed_b, mp)
    latent = encode(tokens, mp)
    full = _insert_mask_tokens(latent, kept, mp)
    decoded = decode(full, mp)
    probs = sigmoid(linear(decoded, mp.pre_head_w, mp.pre_head_b))
    raster = _unpatchify_graph(probs, g, 1)
    return reshape(raster, (rasters.shape[0], g.h, g.w))


def extractor_graph(tours_chw: np.ndarray, mp: ModelParams) -> Tensor:
    """Shared CNN over stacked tour rasters (T, c, h, w) -> (T, f, h, w)."""
    x = Tensor(tours_chw)
    hidden = gelu(conv2d(x, mp.ext_k1, mp.ext_b1))
    return conv2d(hidden, mp.ext_k2, mp.ext_b2)


def fuse_graph(tours_batch: list[list[np.ndarray]], mp: ModelParams) -> Tensor:
    """Fusion forward for per-tile tour stacks -> (B, h, w, c) class probabilities."""
    g = mp.net.geometry
    t_max = mp.net.fusion.max_tours
    f = mp.net.fusion.tour_features
    counts = [len(tours) for tours in tours_batch]
    for tours, count in zip(tours_batch, counts):
        if not 1 <= count <= t_max:
            raise ShapeError(f"need 1..{t_max} tours per tile, got {count}")
        for tour in tours:
            if tour.shape != (g.channels, g.h, g.w):
                raise ShapeError(
                    f"tour rasters must be ({g.channels}, {g.h}, {g.w}), got {tour.shape}"
                )
    # one extractor pass over every tour in the batch, then split per tile
    stacked = np.concatenate([np.stack(tours) for tours in tours_batch])
    feats = extractor_graph(stacked, mp)  # (total_tours, f, h, w)
    tiles = []
    offset = 0
    for count in counts:
        feat = reshape(slice_axis0(feats, offset, offset + count), (count * f, g.h, g.w))
        offset += count
        missing = t_max - count
        if missing:
            feat = concat([feat, Tensor(np.zeros((missing * f, g.h, g.w)))], axis=0)
        tiles.append(reshape(feat, (1, t_max * f, g.h, g.w)))
    x = concat(tiles, axis=0) if len(tiles) > 1 else tiles[0]
    tokens_in = _patchify_graph(x, g)
    all_idx = np.broadcast_to(
        np.arange(g.num_patches, dtype=np.int64), (len(tiles), g.num_patches)
    )
    tokens = embed_tokens(tokens_in, all_idx, mp.fuse_embed_w, mp.fuse_embed_b, mp)
    latent = encode(tokens, mp)
    decoded = decode(latent, mp)
    logits = linear(decoded, mp.fuse_head_w, mp.fuse_head_b)
    return softmax(_unpatchify_graph(logits, g, g.channels))


# ---------------------------------------------------------------------------
# public single-tile operations


def pretrain_forward(gt_gray: GrayRaster, plan: MaskPlan, mp: ModelParams) -> GrayRaster:
    """Complete one masked gray tile; output values lie in [0, 1]."""
    out = pretrain_graph(gt_gray.values[None], [plan], mp)
    return GrayRaster(values=out.data[0], resolution=gt_gray.resolution)


def extract_tour_features(obs: TourObservation, mp: ModelParams) -> Tensor:
    """Per-tour feature stack (f, h, w) from the shared extractor."""
    chw = np.ascontiguousarray(obs.observed.values.transpose(2, 0, 1))
    out = extractor_graph(chw[None], mp)
    return reshape(out, out.shape[1:])


def fuse_forward(tours: list[TourObservation], mp: ModelParams) -> ClassRaster:
    """Fuse up to max_tours observations into one class raster."""
    if not tours:
        raise ShapeError("fusion requires at least one tour")
    resolution = tours[0].observed.resolution
    chw = [np.ascontiguousarray(t.observed.values.transpose(2, 0, 1)) for t in tours]
    out = fuse_graph([chw], mp)
    return ClassRaster(values=out.data[0], resolution=resolution)
