"""Frame containers, loading/saving, grayscale conversion and synthetic videos.

Two on-disk layouts are supported: a directory of numbered images (frame order
is the lexicographic file order) and a raw planar Gray8 stream whose first line
is the ASCII header ``W H N\\n`` followed by N*W*H bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateMotion, DimensionMismatch, MissingInput, UnsupportedFormat
from .similarity import MotionParams

GRAY8 = "gray8"
RGB8 = "rgb8"

_CHANNELS = {GRAY8: 1, RGB8: 3}

_IMAGE_SUFFIXES = {".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff"}


@dataclass(frozen=True)
class Frame:
    """A single raster frame with a row-major byte buffer."""

    width: int
    height: int
    format: str
    data: bytes

    def __post_init__(self):
        if self.format not in _CHANNELS:
            raise UnsupportedFormat(f"unknown pixel format {self.format!r}")
        if self.width < 8 or self.height < 8:
            raise DimensionMismatch(
                f"frames must be at least 8x8, got {self.width}x{self.height}"
            )
        expected = self.width * self.height * _CHANNELS[self.format]
        if len(self.data) != expected:
            raise DimensionMismatch(
                f"buffer holds {len(self.data)} bytes, expected {expected}"
            )

    @property
    def channels(self) -> int:
        return _CHANNELS[self.format]

    def pixels(self) -> np.ndarray:
        """View the buffer as (H, W) for Gray8 or (H, W, 3) for Rgb8."""
        arr = np.frombuffer(self.data, dtype=np.uint8)
        if self.format == GRAY8:
            return arr.reshape(self.height, self.width)
        return arr.reshape(self.height, self.width, 3)

    @classmethod
    def from_array(cls, arr: np.ndarray, format: str | None = None) -> "Frame":
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        if arr.ndim == 2:
            fmt = GRAY8
        elif arr.ndim == 3 and arr.shape[2] == 3:
            fmt = RGB8
        else:
            raise UnsupportedFormat(f"cannot infer pixel format from shape {arr.shape}")
        if format is not None and format != fmt:
            raise UnsupportedFormat(f"array shape {arr.shape} is not {format}")
        return cls(width=arr.shape[1], height=arr.shape[0], format=fmt, data=arr.tobytes())


@dataclass(frozen=True)
class FrameSequence:
    """An ordered list of equally-sized frames; fps is metadata only."""

    frames: list[Frame]
    fps: float = 0.0

    def __post_init__(self):
        if not self.frames:
            raise DimensionMismatch("a frame sequence needs at least one frame")
        first = self.frames[0]
        for f in self.frames[1:]:
            if (f.width, f.height, f.format) != (first.width, first.height, first.format):
                raise DimensionMismatch("all frames must share dimensions and format")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def format(self) -> str:
        return self.frames[0].format


def to_grayscale(f: Frame) -> Frame:
    """Convert to Gray8 using BT.601 luma, rounding half up; Gray8 passes through."""
    if f.format == GRAY8:
        return f
    rgb = f.pixels().astype(np.float64)
    luma = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    gray = np.floor(luma + 0.5).astype(np.uint8)
    return Frame.from_array(gray)


def load_frame_sequence(path: str | Path, format_hint: str | None = None) -> FrameSequence:
    """Load a numbered image directory or a raw Gray8 stream file."""
    p = Path(path)
    if not p.exists():
        raise MissingInput(f"no such input: {p}")
    if p.is_dir():
        return _load_image_dir(p, format_hint)
    return _load_raw_stream(p)


def _load_image_dir(p: Path, format_hint: str | None) -> FrameSequence:
    from PIL import Image

    files = sorted(f for f in p.iterdir() if f.suffix.lower() in _IMAGE_SUFFIXES)
    if not files:
        raise MissingInput(f"directory {p} contains no image files")
    frames = []
    for f in files:
        with Image.open(f) as img:
            if format_hint == GRAY8 or (format_hint is None and img.mode in ("L", "1", "I")):
                frames.append(Frame.from_array(np.asarray(img.convert("L"))))
            else:
                frames.append(Frame.from_array(np.asarray(img.convert("RGB"))))
    first = frames[0]
    for f in frames[1:]:
        if (f.width, f.height) != (first.width, first.height):
            raise DimensionMismatch("image files in directory have mixed dimensions")
    return FrameSequence(frames=frames)


def _load_raw_stream(p: Path) -> FrameSequence:
    blob = p.read_bytes()
    newline = blob.find(b"\n")
    if newline < 0:
        raise UnsupportedFormat(f"{p} has no header line")
    try:
        w, h, n = (int(tok) for tok in blob[:newline].split())
    except ValueError as exc:
        raise UnsupportedFormat(f"{p} header is not 'W H N'") from exc
    payload = blob[newline + 1 :]
    if len(payload) != w * h * n:
        raise DimensionMismatch(
            f"{p}: header promises {n} frames of {w}x{h}, payload holds {len(payload)} bytes"
        )
    frames = [
        Frame(width=w, height=h, format=GRAY8, data=payload[i * w * h : (i + 1) * w * h])
        for i in range(n)
    ]
    return FrameSequence(frames=frames)


def save_raw_stream(seq: FrameSequence, path: str | Path) -> None:
    """Write a Gray8 sequence in the raw header+payload layout."""
    if seq.format != GRAY8:
        raise UnsupportedFormat("raw streams hold Gray8 frames only")
    p = Path(path)
    with open(p, "wb") as fh:
        fh.write(f"{seq.width} {seq.height} {len(seq)}\n".encode("ascii"))
        for f in seq.frames:
            fh.write(f.data)


def save_image_dir(seq: FrameSequence, path: str | Path) -> None:
    from PIL import Image

    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    digits = max(5, len(str(len(seq))))
    for i, f in enumerate(seq.frames):
        Image.fromarray(f.pixels()).save(p / f"{i:0{digits}d}.png")


# ---------------------------------------------------------------------------
# Synthetic videos with known per-frame motion


@dataclass(frozen=True)
class SynthSpec:
    """Piecewise-constant camera motion over a procedural texture.

    Each regime contributes ``length`` frames; the per-frame motion of a
    regime is applied on every transition into one of its frames. Rotation
    and scale act about the frame center, translation in pixels.
    """

    width: int
    height: int
    regimes: list[tuple[int, MotionParams]]
    texture_seed: int = 0
    base: str = "noise"

    def __post_init__(self):
        if not self.regimes:
            raise DegenerateMotion("a synth spec needs at least one regime")
        for length, motion in self.regimes:
            if length < 1:
                raise DegenerateMotion(f"regime length must be >= 1, got {length}")
            if not motion.scale > 0.0:
                raise DegenerateMotion("per-frame scale must be positive")

    @property
    def n_frames(self) -> int:
        return sum(length for length, _ in self.regimes)


@dataclass(frozen=True)
class SynthResult:
    sequence: FrameSequence
    params: list[MotionParams] = field(repr=False)
    breaks: list[int]


def make_texture(base: str, width: int, height: int, seed: int) -> np.ndarray:
    """Deterministic Gray8 texture as a float array in [0, 255]."""
    rng = np.random.default_rng(seed)
    if base == "checker":
        yy, xx = np.mgrid[0:height, 0:width]
        tex = np.where(((yy // 8) + (xx // 8)) % 2 == 0, 48.0, 208.0)
        # break the grid's symmetry so corners are unambiguous
        tex += rng.uniform(-8.0, 8.0, size=tex.shape)
    elif base == "noise":
        tex = rng.uniform(0.0, 255.0, size=(height, width))
        for _ in range(2):
            tex = _box3(tex)
        tex = (tex - tex.min()) / max(float(np.ptp(tex)), 1e-12) * 255.0
    elif base == "blobs":
        yy, xx = np.mgrid[0:height, 0:width]
        tex = np.zeros((height, width))
        for _ in range(max(8, width * height // 512)):
            cy, cx = rng.uniform(0, height), rng.uniform(0, width)
            sigma = rng.uniform(2.0, 6.0)
            amp = rng.uniform(60.0, 255.0)
            tex += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        tex = np.clip(tex, 0.0, 255.0)
    else:
        raise UnsupportedFormat(f"unknown texture id {base!r}")
    return np.clip(tex, 0.0, 255.0)


def _box3(img: np.ndarray) -> np.ndarray:
    padded = np.pad(img, 1, mode="edge")
    out = np.zeros_like(img)
    for dy in range(3):
        for dx in range(3):
            out += padded[dy : dy + img.shape[0], dx : dx + img.shape[1]]
    return out / 9.0


def warp_image(img: np.ndarray, p: MotionParams) -> np.ndarray:
    """Apply a similarity about the image center with bilinear sampling.

    Output pixel x takes the value of the input at T^-1(x), where
    T(x) = s R (x - c) + c + t; out-of-range samples replicate the border.
    """
    h, w = img.shape[:2]
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = xx - cx - p.tx
    dy = yy - cy - p.ty
    ct, st = math.cos(p.theta), math.sin(p.theta)
    sx = (ct * dx + st * dy) / p.scale + cx
    sy = (-st * dx + ct * dy) / p.scale + cy
    return sample_bilinear(img.astype(np.float64), sx, sy)


def sample_bilinear(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Bilinear lookup with replicate border; img is (H, W) float."""
    h, w = img.shape
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0i = np.clip(x0, 0, w - 1).astype(np.intp)
    x1i = np.clip(x0 + 1, 0, w - 1).astype(np.intp)
    y0i = np.clip(y0, 0, h - 1).astype(np.intp)
    y1i = np.clip(y0 + 1, 0, h - 1).astype(np.intp)
    top = img[y0i, x0i] * (1 - fx) + img[y0i, x1i] * fx
    bot = img[y1i, x0i] * (1 - fx) + img[y1i, x1i] * fx
    return top * (1 - fy) + bot * fy


def synth_video(spec: SynthSpec) -> SynthResult:
    """Render a synthetic Gray8 sequence plus its ground-truth motion.

    Frame 0 is the procedural texture; frame i+1 = warp(frame i, motion of the
    regime that owns frame i+1). Ground-truth break indices are the regime
    starts whose motion differs from the previous regime; runs of adjacent
    boundary indices collapse to the first (a one-frame kick yields one break).
    """
    tex = make_texture(spec.base, spec.width, spec.height, spec.texture_seed)
    motions: list[MotionParams] = []
    raw_breaks: list[int] = []
    start = 0
    prev_motion = None
    for length, motion in spec.regimes:
        if prev_motion is not None and motion != prev_motion:
            raw_breaks.append(start)
        motions.extend([motion] * length)
        prev_motion = motion
        start += length

    breaks: list[int] = []
    for b in raw_breaks:
        if breaks and b == breaks[-1] + 1:
            continue
        breaks.append(b)

    frames = [Frame.from_array(np.floor(tex + 0.5))]
    current = np.floor(tex + 0.5)
    params: list[MotionParams] = []
    for i in range(1, spec.n_frames):
        p = motions[i]
        current = warp_image(current, p)
        current = np.floor(current + 0.5)
        frames.append(Frame.from_array(current))
        params.append(p)
    return SynthResult(sequence=FrameSequence(frames=frames), params=params, breaks=breaks)
