"""Flat ``key = value`` configuration with documented defaults.

Lines are ``key = value``; ``#`` starts a comment; blank lines are ignored.
Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .anchor import ModelConfig
from .errors import ConfigError
from .motion import (
    CornerParams,
    LKParams,
    MotionConfig,
    RansacParams,
    SegmentConstraints,
    Thresholds,
)
from .pipeline import ToyVaeConfig


@dataclass
class Config:
    # motion break thresholds
    tau_t: float = 0.02
    tau_theta: float = 0.025
    tau_s: float = 0.04
    min_track_count: int = 8
    # corner detection
    max_corners: int = 200
    quality_level: float = 0.01
    min_distance: float = 7.0
    block_size: int = 5
    # sparse flow
    lk_window: int = 15
    pyramid_levels: int = 3
    lk_max_iters: int = 20
    lk_eps: float = 1e-3
    # robust fit
    ransac_iters: int = 100
    inlier_px: float = 1.5
    ransac_seed: int = 42
    # segmentation
    temporal_stride: int = 4
    min_clip_len: int = 5
    # toy VAE
    latent_channels: int = 12
    spatial_stride: int = 2
    mix_seed: int = 7
    # model
    blocks: int = 2
    heads: int = 4
    gap: int = 4
    ffn_mult: int = 4
    spatial_patch: int = 2
    init_scale: float = 0.02
    # seeds
    model_seed: int = 42
    noise_seed: int = 0
    residual_scale: float = 0.1

    def motion_config(self) -> MotionConfig:
        return MotionConfig(
            corners=CornerParams(
                max_corners=self.max_corners,
                quality_level=self.quality_level,
                min_distance=self.min_distance,
                block_size=self.block_size,
            ),
            lk=LKParams(
                window=self.lk_window,
                pyramid_levels=self.pyramid_levels,
                max_iters=self.lk_max_iters,
                eps=self.lk_eps,
            ),
            ransac=RansacParams(
                iters=self.ransac_iters,
                inlier_px=self.inlier_px,
                seed=self.ransac_seed,
            ),
            thresholds=Thresholds(
                tau_t=self.tau_t,
                tau_theta=self.tau_theta,
                tau_s=self.tau_s,
                min_track_count=self.min_track_count,
            ),
        )

    def constraints(self) -> SegmentConstraints:
        return SegmentConstraints(
            temporal_stride=self.temporal_stride, min_clip_len=self.min_clip_len
        )

    def vae_config(self) -> ToyVaeConfig:
        return ToyVaeConfig(
            latent_channels=self.latent_channels,
            spatial_stride=self.spatial_stride,
            temporal_group=self.temporal_stride,
            mix_seed=self.mix_seed,
        )

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            blocks=self.blocks,
            heads=self.heads,
            gap=self.gap,
            ffn_mult=self.ffn_mult,
            spatial_patch=self.spatial_patch,
            init_scale=self.init_scale,
        )


def parse_config_text(text: str, base: Config | None = None) -> Config:
    cfg = base or Config()
    valid = {f.name: f.type for f in fields(Config)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in valid:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        current = getattr(cfg, key)
        try:
            parsed = type(current)(value) if not isinstance(current, int) else int(value, 0)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from exc
        setattr(cfg, key, parsed)
    return cfg


def load_config(path) -> Config:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text())
