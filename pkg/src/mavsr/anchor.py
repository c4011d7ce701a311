"""Anchor-frame guidance: feature refinement, guided attention and modulation.

Anchor latents are the first temporal slice of each clip latent. They are
refined by a two-branch conv module at half spatial resolution, tokenized on
the same grid as the video tokens, and interact with the video stream through
self-attention (with anchor token positions shifted past the video's temporal
range so rotary embeddings keep the two populations disjoint) and through a
gated local modulation of the clip-start video frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import (
    EmptyClipList,
    IndexOutOfRange,
    IndexOverlap,
    ShapeMismatch,
)
from .tensor import Tensor


@dataclass
class AnchorSet:
    """Per-clip first-frame latents and (optionally) their refined features."""

    latents: list[np.ndarray]  # each [C, 1, H, W]
    clip_start_latent_index: list[int]
    features: list[Tensor] | None = None


@dataclass(frozen=True)
class ModelConfig:
    blocks: int = 2
    heads: int = 4
    gap: int = 4  # temporal gap between video range and the first anchor index
    ffn_mult: int = 4
    spatial_patch: int = 2
    init_scale: float = 0.02


@dataclass
class AFRWeights:
    pconv1_w: Tensor
    pconv1_b: Tensor
    dconv1_w: Tensor
    dconv1_b: Tensor
    tconv_w: Tensor
    tconv_b: Tensor
    pconv2_w: Tensor
    pconv2_b: Tensor
    dconv2_w: Tensor
    dconv2_b: Tensor


@dataclass
class DiTBlockWeights:
    ln1_g: Tensor
    ln1_b: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    cq: Tensor
    cbq: Tensor
    ck: Tensor
    cbk: Tensor
    cv: Tensor
    cbv: Tensor
    co: Tensor
    cbo: Tensor
    ln3_g: Tensor
    ln3_b: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    acfm_local_w: Tensor
    acfm_local_b: Tensor
    acfm_gate_w: Tensor
    acfm_gate_b: Tensor
    acfm_out_w: Tensor
    acfm_out_b: Tensor


@dataclass
class ModelWeights:
    afr: AFRWeights
    anchor_proj_w: Tensor
    anchor_proj_b: Tensor
    blocks: list[DiTBlockWeights]
    out_w: Tensor
    out_b: Tensor
    config: ModelConfig = field(default_factory=ModelConfig)


# ---------------------------------------------------------------------------
# Initialization


def _uniform(rng, shape, scale, dtype):
    return Tensor(rng.uniform(-scale, scale, size=shape).astype(dtype))


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype))


def _ones(shape, dtype):
    return Tensor(np.ones(shape, dtype=dtype))


def init_afr_weights(channels: int, rng, scale: float = 0.02, dtype=np.float32) -> AFRWeights:
    c = channels
    return AFRWeights(
        pconv1_w=_uniform(rng, (c, c), scale, dtype),
        pconv1_b=_zeros((c,), dtype),
        dconv1_w=_uniform(rng, (c, 3, 3), scale, dtype),
        dconv1_b=_zeros((c,), dtype),
        tconv_w=_uniform(rng, (c, c, 2, 2), scale, dtype),
        tconv_b=_zeros((c,), dtype),
        pconv2_w=_uniform(rng, (c, c), scale, dtype),
        pconv2_b=_zeros((c,), dtype),
        dconv2_w=_uniform(rng, (c, 3, 3), scale, dtype),
        dconv2_b=_zeros((c,), dtype),
    )


def init_block_weights(d: int, ffn_mult: int, rng, scale: float = 0.02, dtype=np.float32) -> DiTBlockWeights:
    """One block; the ACFM gating and output convs start at zero so the
    modulation path is the identity until trained."""
    hid = ffn_mult * d
    return DiTBlockWeights(
        ln1_g=_ones((d,), dtype),
        ln1_b=_zeros((d,), dtype),
        wq=_uniform(rng, (d, d), scale, dtype),
        bq=_zeros((d,), dtype),
        wk=_uniform(rng, (d, d), scale, dtype),
        bk=_zeros((d,), dtype),
        wv=_uniform(rng, (d, d), scale, dtype),
        bv=_zeros((d,), dtype),
        wo=_uniform(rng, (d, d), scale, dtype),
        bo=_zeros((d,), dtype),
        ln2_g=_ones((d,), dtype),
        ln2_b=_zeros((d,), dtype),
        cq=_uniform(rng, (d, d), scale, dtype),
        cbq=_zeros((d,), dtype),
        ck=_uniform(rng, (d, d), scale, dtype),
        cbk=_zeros((d,), dtype),
        cv=_uniform(rng, (d, d), scale, dtype),
        cbv=_zeros((d,), dtype),
        co=_uniform(rng, (d, d), scale, dtype),
        cbo=_zeros((d,), dtype),
        ln3_g=_ones((d,), dtype),
        ln3_b=_zeros((d,), dtype),
        ffn_w1=_uniform(rng, (d, hid), scale, dtype),
        ffn_b1=_zeros((hid,), dtype),
        ffn_w2=_uniform(rng, (hid, d), scale, dtype),
        ffn_b2=_zeros((d,), dtype),
        acfm_local_w=_uniform(rng, (d, 3, 3), scale, dtype),
        acfm_local_b=_zeros((d,), dtype),
        acfm_gate_w=_zeros((d, 3, 3), dtype),
        acfm_gate_b=_zeros((d,), dtype),
        acfm_out_w=_zeros((d, 3, 3), dtype),
        acfm_out_b=_zeros((d,), dtype),
    )


def init_model_weights(
    latent_channels: int,
    cfg: ModelConfig = ModelConfig(),
    seed: int = 42,
    dtype=np.float32,
) -> ModelWeights:
    rng = np.random.default_rng(seed)
    p = cfg.spatial_patch
    d = 3 * latent_channels * p * p
    if d % cfg.heads:
        raise ShapeMismatch(f"token dim {d} not divisible by {cfg.heads} heads")
    return ModelWeights(
        afr=init_afr_weights(latent_channels, rng, cfg.init_scale, dtype),
        anchor_proj_w=_uniform(rng, (latent_channels, d), cfg.init_scale, dtype),
        anchor_proj_b=_zeros((d,), dtype),
        blocks=[
            init_block_weights(d, cfg.ffn_mult, rng, cfg.init_scale, dtype)
            for _ in range(cfg.blocks)
        ],
        out_w=_uniform(rng, (d, latent_channels * p * p), cfg.init_scale, dtype),
        out_b=_zeros((latent_channels * p * p,), dtype),
        config=cfg,
    )


# ---------------------------------------------------------------------------
# Anchor selection and refinement


def select_anchor_latents(clip_latents: list[np.ndarray]) -> AnchorSet:
    """Temporal slice 0 of each clip latent, plus each clip's offset in the
    temporally concatenated latent."""
    if not clip_latents:
        raise EmptyClipList("no clip latents to select anchors from")
    starts = []
    total = 0
    anchors = []
    for lat in clip_latents:
        if lat.ndim != 4 or lat.shape[1] < 1:
            raise ShapeMismatch(f"clip latent must be [C,f,H,W] with f >= 1, got {lat.shape}")
        starts.append(total)
        anchors.append(np.ascontiguousarray(lat[:, 0:1]))
        total += lat.shape[1]
    return AnchorSet(latents=anchors, clip_start_latent_index=starts)


def afr_forward(anchor: Tensor | np.ndarray, w: AFRWeights) -> Tensor:
    """Two-branch refinement at half resolution.

    branch1 = maxpool2(dconv3x3(pconv1x1(x))), branch2 = strided 2x2 conv of
    x; the output is dconv3x3(pconv1x1(silu(branch1 + branch2))).
    """
    x = anchor if isinstance(anchor, Tensor) else Tensor(anchor)
    if x.data.ndim != 4:
        raise ShapeMismatch(f"anchor latent must be [C,1,H,W], got {x.shape}")
    branch1 = T.maxpool2(T.dconv3x3(T.pconv1x1(x, w.pconv1_w, w.pconv1_b), w.dconv1_w, w.dconv1_b))
    branch2 = T.tconv2x2s2(x, w.tconv_w, w.tconv_b)
    mixed = T.silu(T.add(branch1, branch2))
    return T.dconv3x3(T.pconv1x1(mixed, w.pconv2_w, w.pconv2_b), w.dconv2_w, w.dconv2_b)


def refine_anchors(aset: AnchorSet, w: AFRWeights) -> AnchorSet:
    features = [afr_forward(lat, w) for lat in aset.latents]
    return AnchorSet(
        latents=aset.latents,
        clip_start_latent_index=list(aset.clip_start_latent_index),
        features=features,
    )


def tokenize_anchors(
    aset: AnchorSet, proj_w: Tensor, proj_b: Tensor
) -> tuple[Tensor, np.ndarray]:
    """Flatten refined anchor features to tokens on their spatial grid.

    Returns (tokens [Na, D], positions [Na, 3]) where positions hold
    (clip_index, h, w); the temporal shift past the video range happens inside
    the attention op.
    """
    if aset.features is None:
        raise EmptyClipList("anchors must be refined before tokenization")
    token_parts = []
    positions = []
    for clip_i, feat in enumerate(aset.features):
        c, f, h, w = feat.shape
        # [C,1,H,W] -> [H*W, C]
        flat = T.reshape(T.transpose(feat, (1, 2, 3, 0)), (h * w, c))
        token_parts.append(T.add_bias(T.matmul(flat, proj_w), proj_b))
        for hh in range(h):
            for ww in range(w):
                positions.append((clip_i, hh, ww))
    return T.concat(token_parts, axis=0), np.array(positions, dtype=np.int64)


# ---------------------------------------------------------------------------
# Video latent assembly and patchify


@dataclass
class VideoLatent:
    y: Tensor
    noise: Tensor
    mask: Tensor
    assembled: Tensor  # [3C, F', H, W]


def assemble_video_latent(y: Tensor | np.ndarray, noise_seed: int) -> VideoLatent:
    """Channel-concatenate the latent with seeded noise and an all-one mask."""
    yt = y if isinstance(y, Tensor) else Tensor(y)
    if yt.data.ndim != 4:
        raise ShapeMismatch(f"video latent must be [C,F,H,W], got {yt.shape}")
    rng = np.random.default_rng(noise_seed)
    noise = Tensor(rng.standard_normal(yt.shape).astype(yt.data.dtype))
    mask = Tensor(np.ones(yt.shape, dtype=yt.data.dtype))
    assembled = T.concat([yt, noise, mask], axis=0)
    return VideoLatent(y=yt, noise=noise, mask=mask, assembled=assembled)


def patchify(v: Tensor, spatial_patch: int = 2) -> tuple[Tensor, np.ndarray]:
    """Non-overlapping spatial patches to tokens, t-major then h then w.

    v[Ct, F, H, W] -> tokens [F*(H/p)*(W/p), Ct*p*p] with recorded (t, h, w)
    integer positions per token.
    """
    ct, f, h, w = v.shape
    p = spatial_patch
    if h % p or w % p:
        raise ShapeMismatch(f"patchify: spatial extents {h}x{w} not divisible by {p}")
    gh, gw = h // p, w // p
    x = T.reshape(v, (ct, f, gh, p, gw, p))
    x = T.transpose(x, (1, 2, 4, 0, 3, 5))  # [F, gh, gw, Ct, p, p]
    tokens = T.reshape(x, (f * gh * gw, ct * p * p))
    tt, hh, ww = np.meshgrid(np.arange(f), np.arange(gh), np.arange(gw), indexing="ij")
    positions = np.stack([tt.ravel(), hh.ravel(), ww.ravel()], axis=1).astype(np.int64)
    return tokens, positions


def unpatchify(tokens: Tensor, ct: int, f: int, h: int, w: int, spatial_patch: int = 2) -> Tensor:
    p = spatial_patch
    gh, gw = h // p, w // p
    if tokens.shape != (f * gh * gw, ct * p * p):
        raise ShapeMismatch(
            f"unpatchify: tokens {tokens.shape} do not match [{ct},{f},{h},{w}] at patch {p}"
        )
    x = T.reshape(tokens, (f, gh, gw, ct, p, p))
    x = T.transpose(x, (3, 0, 1, 4, 2, 5))  # [Ct, F, gh, p, gw, p]
    return T.reshape(x, (ct, f, h, w))


def tokens_to_feats(tokens: Tensor, f: int, gh: int, gw: int) -> Tensor:
    """[F*gh*gw, D] tokens (t-major) to a [D, F, gh, gw] feature map."""
    d = tokens.shape[1]
    return T.transpose(T.reshape(tokens, (f, gh, gw, d)), (3, 0, 1, 2))


def feats_to_tokens(feats: Tensor) -> Tensor:
    d, f, gh, gw = feats.shape
    return T.reshape(T.transpose(feats, (1, 2, 3, 0)), (f * gh * gw, d))


# ---------------------------------------------------------------------------
# Attention


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.add_bias(T.matmul(x, w), b)


def _multihead(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    n, d = q.shape
    m = k.shape[0]
    if d % heads:
        raise ShapeMismatch(f"token dim {d} not divisible by {heads} heads")
    hd = d // heads
    qh = T.transpose(T.reshape(q, (n, heads, hd)), (1, 0, 2))
    kh = T.transpose(T.reshape(k, (m, heads, hd)), (1, 0, 2))
    vh = T.transpose(T.reshape(v, (m, heads, hd)), (1, 0, 2))
    scores = T.scale(T.matmul(qh, T.transpose(kh, (0, 2, 1))), 1.0 / np.sqrt(hd))
    ctx = T.matmul(T.softmax_lastdim(scores), vh)
    return T.reshape(T.transpose(ctx, (1, 0, 2)), (n, d))


def shifted_anchor_positions(
    positions_a: np.ndarray, temporal_extent: int, gap: int
) -> np.ndarray:
    out = positions_a.copy()
    out[:, 0] = temporal_extent + gap + positions_a[:, 0]
    return out


def anchor_attention(
    video_tokens: Tensor,
    anchor_tokens: Tensor | None,
    positions_v: np.ndarray,
    positions_a: np.ndarray | None,
    w: DiTBlockWeights,
    heads: int,
    temporal_extent: int | None = None,
    gap: int = 4,
) -> tuple[Tensor, Tensor | None]:
    """Joint self-attention over video and anchor tokens.

    Rotary embeddings are applied to Q and K using the video token positions
    unchanged and the anchor positions shifted along the temporal axis past
    the video range, so the two index sets never overlap.
    """
    nv = video_tokens.shape[0]
    if temporal_extent is None:
        temporal_extent = int(positions_v[:, 0].max()) + 1 if nv else 0
    have_anchor = anchor_tokens is not None and anchor_tokens.shape[0] > 0
    if have_anchor:
        if video_tokens.shape[1] != anchor_tokens.shape[1]:
            raise ShapeMismatch("video and anchor token dims differ")
        pa = shifted_anchor_positions(positions_a, temporal_extent, gap)
        if nv and pa[:, 0].min() <= positions_v[:, 0].max():
            raise IndexOverlap("anchor temporal indices collide with video indices")
        x = T.concat([video_tokens, anchor_tokens], axis=0)
        pos = np.concatenate([positions_v, pa], axis=0)
    else:
        x = video_tokens
        pos = positions_v

    q = T.rope_apply(_linear(x, w.wq, w.bq), pos)
    k = T.rope_apply(_linear(x, w.wk, w.bk), pos)
    v = _linear(x, w.wv, w.bv)
    out = _linear(_multihead(q, k, v, heads), w.wo, w.bo)
    if have_anchor:
        video_out, anchor_out = T.split(out, 0, [nv, anchor_tokens.shape[0]])
        return video_out, anchor_out
    return out, None


def cross_attention(
    video_tokens: Tensor, text_tokens: Tensor | None, w: DiTBlockWeights, heads: int
) -> Tensor | None:
    """Video tokens attending to text tokens; None (skip) when there is no text."""
    if text_tokens is None or text_tokens.shape[0] == 0:
        return None
    if text_tokens.shape[1] != video_tokens.shape[1]:
        raise ShapeMismatch("text token dim differs from video token dim")
    q = _linear(video_tokens, w.cq, w.cbq)
    k = _linear(text_tokens, w.ck, w.cbk)
    v = _linear(text_tokens, w.cv, w.cbv)
    return _linear(_multihead(q, k, v, heads), w.co, w.cbo)


# ---------------------------------------------------------------------------
# Anchor-corresponding feature modulation


def acfm_forward(
    video_feats: Tensor,
    anchor_feats: Tensor,
    anchor_indices: list[int],
    w: DiTBlockWeights,
) -> Tensor:
    """Gated local fusion of anchor features into the clip-start video frames.

    The anchor stream is depth-convolved with a residual, gated by the GELU of
    a second depthwise conv, added to the video frames at ``anchor_indices``,
    and the reassembled stack passes through a final residual depthwise conv.
    """
    d, f, gh, gw = video_feats.shape
    if anchor_feats.shape[0] != d or anchor_feats.shape[2:] != (gh, gw):
        raise ShapeMismatch(
            f"anchor features {anchor_feats.shape} do not match video grid {video_feats.shape}"
        )
    L = anchor_feats.shape[1]
    if len(anchor_indices) != L:
        raise ShapeMismatch(f"{L} anchor maps but {len(anchor_indices)} indices")
    for idx in anchor_indices:
        if not 0 <= idx < f:
            raise IndexOutOfRange(f"anchor index {idx} outside latent range [0, {f})")

    local = T.add(T.dconv3x3(anchor_feats, w.acfm_local_w, w.acfm_local_b), anchor_feats)
    gated = T.mul(local, T.gelu(T.dconv3x3(local, w.acfm_gate_w, w.acfm_gate_b)))

    frames = T.split(video_feats, 1, [1] * f)
    anchor_slices = T.split(gated, 1, [1] * L)
    for clip_i, frame_j in enumerate(anchor_indices):
        frames[frame_j] = T.add(frames[frame_j], anchor_slices[clip_i])
    stacked = T.concat(frames, axis=1)
    return T.add(T.dconv3x3(stacked, w.acfm_out_w, w.acfm_out_b), stacked)


# ---------------------------------------------------------------------------
# Full block


def _ffn(x: Tensor, w: DiTBlockWeights) -> Tensor:
    return _linear(T.gelu(_linear(x, w.ffn_w1, w.ffn_b1)), w.ffn_w2, w.ffn_b2)


def dit_block_forward(
    video_tokens: Tensor,
    anchor_tokens: Tensor | None,
    text_tokens: Tensor | None,
    positions_v: np.ndarray,
    positions_a: np.ndarray | None,
    anchor_indices: list[int],
    w: DiTBlockWeights,
    heads: int,
    grid: tuple[int, int, int],
    gap: int = 4,
) -> tuple[Tensor, Tensor | None]:
    """One transformer block; grid is (F', grid_h, grid_w) of the video tokens.

    Anchor tokens take part in self-attention and feed the modulation path but
    bypass the cross-attention sublayer untouched.
    """
    f, gh, gw = grid
    have_anchor = anchor_tokens is not None and anchor_tokens.shape[0] > 0

    hv = T.layernorm(video_tokens, w.ln1_g, w.ln1_b)
    ha = T.layernorm(anchor_tokens, w.ln1_g, w.ln1_b) if have_anchor else None
    av, aa = anchor_attention(hv, ha, positions_v, positions_a, w, heads, f, gap)
    video_tokens = T.add(video_tokens, av)
    if have_anchor:
        anchor_tokens = T.add(anchor_tokens, aa)
        L = len(anchor_indices)
        vf = tokens_to_feats(video_tokens, f, gh, gw)
        af = tokens_to_feats(anchor_tokens, L, gh, gw)
        vf = acfm_forward(vf, af, anchor_indices, w)
        video_tokens = feats_to_tokens(vf)

    delta = cross_attention(T.layernorm(video_tokens, w.ln2_g, w.ln2_b), text_tokens, w, heads)
    if delta is not None:
        video_tokens = T.add(video_tokens, delta)

    video_tokens = T.add(video_tokens, _ffn(T.layernorm(video_tokens, w.ln3_g, w.ln3_b), w))
    if have_anchor:
        anchor_tokens = T.add(anchor_tokens, _ffn(T.layernorm(anchor_tokens, w.ln3_g, w.ln3_b), w))
    return video_tokens, anchor_tokens


# ---------------------------------------------------------------------------
# Checkpoint format: manifest `name shape file` plus one dump file per tensor


def named_tensors(model: ModelWeights) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for name in vars(model.afr):
        out[f"afr.{name}"] = getattr(model.afr, name)
    out["anchor_proj_w"] = model.anchor_proj_w
    out["anchor_proj_b"] = model.anchor_proj_b
    for i, blk in enumerate(model.blocks):
        for name in vars(blk):
            out[f"block{i}.{name}"] = getattr(blk, name)
    out["out_w"] = model.out_w
    out["out_b"] = model.out_b
    return out


def save_weights(model: ModelWeights, directory) -> None:
    from .tensor import dump_tensor

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, t in named_tensors(model).items():
        fname = name.replace(".", "_") + ".txt"
        dump_tensor(t, d / fname)
        shape = "x".join(str(s) for s in t.shape)
        lines.append(f"{name} {shape} {fname}")
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_weights(model: ModelWeights, directory) -> ModelWeights:
    """Fill an initialized model's tensors from a checkpoint directory."""
    from .tensor import load_tensor

    d = Path(directory)
    table = named_tensors(model)
    for line in (d / "manifest.txt").read_text().splitlines():
        name, shape_s, fname = line.split()
        t = load_tensor(d / fname, dtype=table[name].data.dtype)
        if t.shape != table[name].shape:
            raise ShapeMismatch(f"checkpoint tensor {name} has shape {t.shape}, expected {table[name].shape}")
        table[name].data = t.data
    return model
