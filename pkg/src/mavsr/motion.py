"""Inter-frame motion characterization and segment-boundary extraction.

The chain is: corner detection (min-eigenvalue response) -> pyramidal LK
sparse flow -> RANSAC similarity fit -> parameter decomposition -> abrupt
change detection against per-segment running medians -> clip boundaries
snapped to the VAE temporal stride.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (
    DegenerateConfiguration,
    DegenerateMotion,
    InsufficientMatches,
    InvalidBreaks,
    TooFewCorners,
)
from .similarity import (
    AffineMatrix,
    MotionParams,
    compose_similarity,
    decompose_affine,
    wrap_angle,
)
from .video_io import Frame, FrameSequence, to_grayscale


@dataclass(frozen=True)
class Corner:
    x: float
    y: float
    score: float


@dataclass(frozen=True)
class TrackedPair:
    src: Corner
    dst: tuple[float, float]
    status: str  # "ok" | "lost"
    residual: float


@dataclass(frozen=True)
class CornerParams:
    max_corners: int = 200
    quality_level: float = 0.01
    min_distance: float = 7.0
    block_size: int = 5
    min_count: int = 8


@dataclass(frozen=True)
class LKParams:
    window: int = 15
    pyramid_levels: int = 3
    max_iters: int = 20
    eps: float = 1e-3
    max_residual: float = 10.0  # mean abs intensity residual to keep a track


@dataclass(frozen=True)
class RansacParams:
    iters: int = 100
    inlier_px: float = 1.5
    seed: int = 42


@dataclass(frozen=True)
class Thresholds:
    """Abrupt-change thresholds; tau_t is a fraction of the frame diagonal."""

    tau_t: float = 0.02
    tau_theta: float = 0.025
    tau_s: float = 0.04
    min_track_count: int = 8

    def __post_init__(self):
        if self.tau_t <= 0 or self.tau_theta <= 0 or self.tau_s <= 0 or self.min_track_count <= 0:
            raise InvalidBreaks("all thresholds must be strictly positive")


@dataclass(frozen=True)
class SegmentConstraints:
    temporal_stride: int = 4
    min_clip_len: int = 5


@dataclass(frozen=True)
class ClipSpec:
    start: int
    length: int

    @property
    def stop(self) -> int:
        return self.start + self.length


@dataclass(frozen=True)
class MotionConfig:
    corners: CornerParams = field(default_factory=CornerParams)
    lk: LKParams = field(default_factory=LKParams)
    ransac: RansacParams = field(default_factory=RansacParams)
    thresholds: Thresholds = field(default_factory=Thresholds)


@dataclass(frozen=True)
class MotionSeries:
    """Per-pair motion estimates; ``failed[i]`` marks carried-forward entries."""

    params: list[MotionParams]
    failed: list[bool]


# ---------------------------------------------------------------------------
# Corner detection


def _sobel(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.pad(img, 1, mode="edge")
    h, w = img.shape
    gx = (
        (p[0:h, 2:] - p[0:h, 0:w])
        + 2.0 * (p[1 : h + 1, 2:] - p[1 : h + 1, 0:w])
        + (p[2:, 2:] - p[2:, 0:w])
    )
    gy = (
        (p[2:, 0:w] - p[0:h, 0:w])
        + 2.0 * (p[2:, 1 : w + 1] - p[0:h, 1 : w + 1])
        + (p[2:, 2:] - p[0:h, 2:])
    )
    return gx, gy


def _box_sum(img: np.ndarray, size: int) -> np.ndarray:
    """Sum over a centered size x size window (zero outside)."""
    half = size // 2
    padded = np.pad(img, half + 1, mode="constant")
    ii = padded.cumsum(axis=0).cumsum(axis=1)
    h, w = img.shape
    lo = 0
    hi = size
    return (
        ii[hi : hi + h, hi : hi + w]
        - ii[lo : lo + h, hi : hi + w]
        - ii[hi : hi + h, lo : lo + w]
        + ii[lo : lo + h, lo : lo + w]
    )


def corner_response(gray: np.ndarray, block_size: int) -> np.ndarray:
    """Min-eigenvalue response of the structure tensor of Sobel gradients."""
    gx, gy = _sobel(gray.astype(np.float64))
    sxx = _box_sum(gx * gx, block_size)
    sxy = _box_sum(gx * gy, block_size)
    syy = _box_sum(gy * gy, block_size)
    trace = sxx + syy
    delta = np.sqrt((sxx - syy) ** 2 + 4.0 * sxy * sxy)
    resp = 0.5 * (trace - delta)
    margin = block_size // 2 + 1
    out = np.zeros_like(resp)
    out[margin:-margin, margin:-margin] = resp[margin:-margin, margin:-margin]
    return out


def detect_corners(frame: Frame, params: CornerParams = CornerParams()) -> list[Corner]:
    """Strongest corners, sorted by descending score, min_distance apart."""
    gray = to_grayscale(frame).pixels().astype(np.float64)
    if gray.shape[0] < params.block_size or gray.shape[1] < params.block_size:
        raise TooFewCorners("frame smaller than the detection block")
    resp = corner_response(gray, params.block_size)
    max_resp = float(resp.max())
    if max_resp <= 0.0:
        raise TooFewCorners("no positive corner responses (flat frame?)")
    thresh = params.quality_level * max_resp

    # 3x3 non-max suppression, then greedy min-distance pruning
    p = np.pad(resp, 1, mode="constant", constant_values=-np.inf)
    neigh = np.stack(
        [
            p[dy : dy + resp.shape[0], dx : dx + resp.shape[1]]
            for dy in range(3)
            for dx in range(3)
            if not (dy == 1 and dx == 1)
        ]
    ).max(axis=0)
    mask = (resp >= thresh) & (resp >= neigh) & (resp > 0)
    ys, xs = np.nonzero(mask)
    scores = resp[ys, xs]
    order = np.lexsort((xs, ys, -scores))

    chosen: list[Corner] = []
    cx = np.empty(0)
    cy = np.empty(0)
    min_d2 = params.min_distance * params.min_distance
    for idx in order:
        x, y = float(xs[idx]), float(ys[idx])
        if chosen:
            d2 = (cx - x) ** 2 + (cy - y) ** 2
            if float(d2.min()) < min_d2:
                continue
        chosen.append(Corner(x=x, y=y, score=float(scores[idx])))
        cx = np.append(cx, x)
        cy = np.append(cy, y)
        if len(chosen) >= params.max_corners:
            break
    if len(chosen) < params.min_count:
        raise TooFewCorners(f"only {len(chosen)} corners survive pruning")
    return chosen


# ---------------------------------------------------------------------------
# Pyramidal Lucas-Kanade


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    h2, w2 = h // 2, w // 2
    v = img[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2)
    return v.mean(axis=(1, 3))


def build_pyramid(gray: np.ndarray, levels: int, min_size: int = 16) -> list[np.ndarray]:
    pyr = [np.ascontiguousarray(gray, dtype=np.float64)]
    while len(pyr) < levels and min(pyr[-1].shape) // 2 >= min_size:
        pyr.append(np.ascontiguousarray(_downsample2(pyr[-1])))
    return pyr


def track_corners(
    prev: Frame,
    next: Frame,
    corners: list[Corner],
    params: LKParams = LKParams(),
) -> list[TrackedPair]:
    """Pyramidal LK flow from prev to next for the given corner positions."""
    if (prev.width, prev.height) != (next.width, next.height):
        raise InvalidBreaks("frames must share dimensions")
    if not corners:
        return []
    g0 = to_grayscale(prev).pixels().astype(np.float64)
    g1 = to_grayscale(next).pixels().astype(np.float64)
    pyr0 = build_pyramid(g0, params.pyramid_levels)
    pyr1 = build_pyramid(g1, params.pyramid_levels)

    px = np.array([c.x for c in corners], dtype=np.float64)
    py = np.array([c.y for c in corners], dtype=np.float64)
    half = params.window // 2

    n = len(corners)
    u = np.zeros(n)
    v = np.zeros(n)
    ok_all = np.ones(n, dtype=bool)
    resid = np.full(n, np.inf)
    for level in range(len(pyr0) - 1, -1, -1):
        scale = 2.0**level
        gy, gx = np.gradient(pyr0[level])
        u, v, ok, resid = _kernels.lk_refine(
            pyr0[level],
            np.ascontiguousarray(pyr1[level]),
            np.ascontiguousarray(gx),
            np.ascontiguousarray(gy),
            np.ascontiguousarray(px / scale),
            np.ascontiguousarray(py / scale),
            u,
            v,
            half,
            params.max_iters,
            params.eps,
            params.eps,
        )
        ok_all &= ok.astype(bool)
        if level > 0:
            u = 2.0 * u
            v = 2.0 * v

    ok_all &= resid <= params.max_residual
    pairs = []
    for i, c in enumerate(corners):
        if ok_all[i]:
            pairs.append(
                TrackedPair(
                    src=c,
                    dst=(float(px[i] + u[i]), float(py[i] + v[i])),
                    status="ok",
                    residual=float(resid[i]),
                )
            )
        else:
            pairs.append(TrackedPair(src=c, dst=(float("nan"), float("nan")), status="lost", residual=float("inf")))
    return pairs


# ---------------------------------------------------------------------------
# Similarity estimation


def _solve_two_point(p1, q1, p2, q2):
    """Exact similarity through two correspondences, complex formulation."""
    zp = complex(p2[0] - p1[0], p2[1] - p1[1])
    if abs(zp) < 1e-12:
        return None
    zq = complex(q2[0] - q1[0], q2[1] - q1[1])
    z = zq / zp
    t = complex(q1[0], q1[1]) - z * complex(p1[0], p1[1])
    return z.real, z.imag, t.real, t.imag  # a, c, tx, ty with b=-c, d=a


def _lsq_similarity(src: np.ndarray, dst: np.ndarray):
    """Least-squares 4-DOF similarity fit of dst ~ s R src + t."""
    n = src.shape[0]
    m = np.zeros((2 * n, 4))
    m[0::2, 0] = src[:, 0]
    m[0::2, 1] = -src[:, 1]
    m[0::2, 2] = 1.0
    m[1::2, 0] = src[:, 1]
    m[1::2, 1] = src[:, 0]
    m[1::2, 3] = 1.0
    rhs = dst.reshape(-1)
    sol, *_ = np.linalg.lstsq(m, rhs, rcond=None)
    a, c, tx, ty = sol
    return a, c, tx, ty


def _pairs_seed(src: np.ndarray, dst: np.ndarray, base_seed: int) -> int:
    digest = zlib.crc32(np.round(np.hstack([src, dst]), 6).tobytes())
    return (base_seed * 0x9E3779B1 + digest) & 0xFFFFFFFF


def estimate_similarity(
    pairs: list[TrackedPair],
    ransac: RansacParams = RansacParams(),
) -> AffineMatrix:
    """RANSAC on 2-point minimal samples, then a least-squares inlier refit.

    Input order does not matter: pairs are canonically sorted and the RNG seed
    is derived from the sorted coordinates.
    """
    ok = [p for p in pairs if p.status == "ok"]
    if len(ok) < 2:
        raise InsufficientMatches(f"need >= 2 tracked pairs, got {len(ok)}")
    ok.sort(key=lambda p: (p.src.x, p.src.y, p.dst[0], p.dst[1]))
    src = np.array([(p.src.x, p.src.y) for p in ok], dtype=np.float64)
    dst = np.array([p.dst for p in ok], dtype=np.float64)

    rng = np.random.default_rng(_pairs_seed(src, dst, ransac.seed))
    n = len(ok)
    # all minimal samples at once: i uniform, j offset by 1..n-1 so i != j
    ii = rng.integers(0, n, size=ransac.iters)
    jj = (ii + 1 + rng.integers(0, n - 1, size=ransac.iters)) % n
    src_c = src[:, 0] + 1j * src[:, 1]
    dst_c = dst[:, 0] + 1j * dst[:, 1]
    zp = src_c[jj] - src_c[ii]
    valid = np.abs(zp) >= 1e-12
    if not valid.any():
        raise DegenerateConfiguration("all RANSAC samples were coincident points")
    z = np.where(valid, (dst_c[jj] - dst_c[ii]) / np.where(valid, zp, 1.0), 0.0)
    t = dst_c[ii] - z * src_c[ii]
    err = np.abs(z[:, None] * src_c[None, :] + t[:, None] - dst_c[None, :])
    inliers = err <= ransac.inlier_px
    counts = np.where(valid, inliers.sum(axis=1), -1)
    best = int(np.argmax(counts))
    best_count = int(counts[best])
    if best_count < 2:
        raise InsufficientMatches("no model with at least 2 inliers")
    best_inliers = inliers[best]
    a, c, tx, ty = _lsq_similarity(src[best_inliers], dst[best_inliers])
    if math.hypot(a, c) < 1e-9:
        raise DegenerateMotion("fitted similarity collapses to zero scale")
    return AffineMatrix(a=a, b=-c, c=c, d=a, tx=tx, ty=ty)


# ---------------------------------------------------------------------------
# Motion time series and break detection


def motion_timeseries(seq: FrameSequence, cfg: MotionConfig = MotionConfig()) -> MotionSeries:
    """Per-pair similarity parameters over a sequence (element i: frame i -> i+1).

    A pair whose estimation fails carries the previous element forward (the
    identity for a leading failure) and is flagged; only a fully failed
    sequence raises.
    """
    if len(seq) < 2:
        raise InvalidBreaks("need at least two frames")
    params: list[MotionParams] = []
    failed: list[bool] = []
    prev_params = MotionParams()
    n_failed = 0
    for i in range(len(seq) - 1):
        try:
            corners = detect_corners(seq.frames[i], cfg.corners)
            pairs = track_corners(seq.frames[i], seq.frames[i + 1], corners, cfg.lk)
            matrix = estimate_similarity(pairs, cfg.ransac)
            p = decompose_affine(matrix)
            failed.append(False)
        except (TooFewCorners, InsufficientMatches, DegenerateConfiguration, DegenerateMotion):
            p = prev_params
            failed.append(True)
            n_failed += 1
        params.append(p)
        prev_params = p
    if n_failed == len(params):
        raise TooFewCorners("motion estimation failed for every frame pair")
    return MotionSeries(params=params, failed=failed)


def detect_motion_breaks(
    series: list[MotionParams],
    th: Thresholds = Thresholds(),
    frame_diag: float = 1.0,
    failed: list[bool] | None = None,
) -> list[int]:
    """Break indices where an element deviates from its segment's running medians.

    Element i is compared against the medians of (tx, ty, theta, log s) over
    the current segment's earlier elements; on a hit the break is emitted at
    i + 1 and the medians restart from element i + 1. An element flagged in
    ``failed`` (estimation did not converge, e.g. every track was rejected)
    is treated as a break in its own right: an untrackable transition is the
    strongest discontinuity signal available.
    """
    if not series:
        raise InvalidBreaks("empty series")
    breaks: list[int] = []
    seg_start = 0
    txs = np.array([p.tx for p in series])
    tys = np.array([p.ty for p in series])
    thetas = np.array([p.theta for p in series])
    logs = np.array([math.log(p.scale) for p in series])
    for i in range(len(series)):
        if failed is not None and failed[i]:
            if i > 0:
                breaks.append(i + 1)
            seg_start = i + 1
            continue
        if i == seg_start:
            continue
        med_tx = float(np.median(txs[seg_start:i]))
        med_ty = float(np.median(tys[seg_start:i]))
        med_th = float(np.median(thetas[seg_start:i]))
        med_ls = float(np.median(logs[seg_start:i]))
        dev_t = math.hypot(txs[i] - med_tx, tys[i] - med_ty)
        dev_th = abs(wrap_angle(thetas[i] - med_th))
        dev_s = abs(logs[i] - med_ls)
        if dev_t > th.tau_t * frame_diag or dev_th > th.tau_theta or dev_s > th.tau_s:
            breaks.append(i + 1)
            seg_start = i + 1
    return breaks


# ---------------------------------------------------------------------------
# Segmentation


def pad_length(n: int, stride: int) -> int:
    """Smallest n' >= n with n' = 1 (mod stride)."""
    rem = (n - 1) % stride
    return n if rem == 0 else n + stride - rem


def segment_video(
    n_frames: int,
    breaks: list[int],
    constraints: SegmentConstraints = SegmentConstraints(),
) -> list[ClipSpec]:
    """Snap break indices to stride-compatible clip boundaries.

    Every boundary is moved to the nearest index making the preceding clip
    length = 1 (mod temporal_stride); a boundary whose clip would fall below
    min_clip_len is dropped (the short clip merges with its neighbor). The
    final clip keeps the remainder and is padded downstream at encode time.
    """
    if n_frames < 1:
        raise InvalidBreaks("n_frames must be positive")
    if list(breaks) != sorted(set(breaks)):
        raise InvalidBreaks("breaks must be strictly increasing")
    if breaks and (breaks[0] <= 0 or breaks[-1] >= n_frames):
        raise InvalidBreaks("breaks must lie strictly inside (0, n_frames)")
    stride = constraints.temporal_stride
    bounds = [0]
    for b in breaks:
        prev = bounds[-1]
        # candidates with (cand - prev) = 1 (mod stride) bracketing b
        hi = b + (prev + 1 - b) % stride
        lo = hi - stride
        cand = lo if (b - lo) <= (hi - b) else hi
        if cand - prev < constraints.min_clip_len:
            cand = hi if hi - prev >= constraints.min_clip_len else None
        if cand is None or cand <= prev or cand >= n_frames:
            continue
        if n_frames - cand < 1:
            continue
        bounds.append(cand)
    if len(bounds) > 1 and n_frames - bounds[-1] < constraints.min_clip_len:
        bounds.pop()
    bounds.append(n_frames)
    return [ClipSpec(start=s, length=e - s) for s, e in zip(bounds[:-1], bounds[1:])]


# ---------------------------------------------------------------------------
# Report serialization


def segmentation_report(
    n_frames: int,
    breaks: list[int],
    clips: list[ClipSpec],
    params: list[MotionParams],
) -> str:
    """Fixed-key-order JSON with floats printed to 6 decimal places."""
    breaks_s = ", ".join(str(b) for b in breaks)
    clips_s = ", ".join(
        '{"start": %d, "length": %d}' % (c.start, c.length) for c in clips
    )
    params_s = ", ".join(
        '{"tx": %.6f, "ty": %.6f, "theta": %.6f, "scale": %.6f}'
        % (p.tx, p.ty, p.theta, p.scale)
        for p in params
    )
    return (
        '{"n_frames": %d, "breaks": [%s], "clips": [%s], "params": [%s]}'
        % (n_frames, breaks_s, clips_s, params_s)
    )
