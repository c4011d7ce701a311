"""Self-check suites: finite-difference gradients and independent oracles.

Every check recomputes its expected value from first principles (loops,
closed forms, brute force) rather than reusing the library code under test.
The CLI ``verify`` command and the acceptance tests both run these.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import anchor as A
from . import tensor as T
from .motion import (
    Corner,
    CornerParams,
    LKParams,
    RansacParams,
    TrackedPair,
    detect_corners,
    estimate_similarity,
    track_corners,
)
from .similarity import MotionParams, compose_similarity, decompose_affine
from .tensor import ROPE_BASE, Tensor
from .video_io import Frame, make_texture, warp_image


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.value < self.threshold

    def line(self) -> str:
        tag = "pass" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: max_err={self.value:.3e} (< {self.threshold:.1e})"


def _scalar(t: Tensor) -> Tensor:
    return T.sum_all(t)


# ---------------------------------------------------------------------------
# Gradient suite


def _gradcheck_cases():
    rng = np.random.default_rng(1234)

    def r(*shape):
        return rng.standard_normal(shape)

    c34 = Tensor(r(3, 4))
    bias = Tensor(r(4))
    m43 = Tensor(r(4, 3))
    w_d = Tensor(r(2, 3, 3))
    b_d = Tensor(r(2))
    w_p = Tensor(r(5, 2))
    b_p = Tensor(r(5))
    w_t = Tensor(r(2, 2, 2, 2))
    b_t = Tensor(r(2))
    gain = Tensor(r(4))
    pos = rng.integers(0, 16, size=(5, 3))
    x2 = Tensor(r(2, 2, 6, 6))

    yield "add", Tensor(r(3, 4)), lambda x: _scalar(T.add(x, c34))
    yield "add_bias_x", Tensor(r(3, 4)), lambda x: _scalar(T.add_bias(x, bias))
    yield "add_bias_b", Tensor(r(4)), lambda b: _scalar(T.add_bias(c34, b))
    yield "mul", Tensor(r(3, 4)), lambda x: _scalar(T.mul(x, c34))
    yield "scale", Tensor(r(3, 4)), lambda x: _scalar(T.scale(x, -1.7))
    yield "matmul_a", Tensor(r(3, 4)), lambda x: _scalar(T.matmul(x, m43))
    yield "matmul_b", Tensor(r(4, 3)), lambda x: _scalar(T.matmul(c34, x))
    yield "matmul_batched", Tensor(r(2, 3, 4)), lambda x: _scalar(
        T.matmul(x, Tensor(np.stack([m43.data, m43.data * 0.5])))
    )
    yield "reshape_transpose", Tensor(r(2, 3, 4)), lambda x: _scalar(
        T.reshape(T.transpose(x, (2, 0, 1)), (4, 6))
    )
    yield "concat_split", Tensor(r(3, 4)), lambda x: _scalar(
        T.mul(*(lambda parts: (T.concat(parts, 0), T.concat(parts[::-1], 0)))(T.split(x, 0, [1, 2])))
    )
    yield "silu", Tensor(r(3, 4)), lambda x: _scalar(T.silu(x))
    yield "gelu", Tensor(r(3, 4)), lambda x: _scalar(T.gelu(x))
    yield "softmax", Tensor(r(3, 5)), lambda x: _scalar(T.mul(T.softmax_lastdim(x), c35))
    yield "layernorm_x", Tensor(r(3, 4)), lambda x: _scalar(
        T.mul(T.layernorm(x, gain, bias), c34)
    )
    yield "layernorm_gain", Tensor(r(4)), lambda g: _scalar(
        T.mul(T.layernorm(c34, g, bias), c34)
    )
    yield "dconv3x3_x", Tensor(r(2, 2, 5, 5)), lambda x: _scalar(T.dconv3x3(x, w_d, b_d))
    yield "dconv3x3_w", Tensor(r(2, 3, 3)), lambda w: _scalar(T.dconv3x3(x2, w, b_d))
    yield "dconv3x3_b", Tensor(r(2)), lambda b: _scalar(T.dconv3x3(x2, w_d, b))
    yield "pconv1x1_x", Tensor(r(2, 2, 4, 4)), lambda x: _scalar(T.pconv1x1(x, w_p, b_p))
    yield "pconv1x1_w", Tensor(r(5, 2)), lambda w: _scalar(T.pconv1x1(x2, w, b_p))
    yield "tconv2x2s2_x", Tensor(r(2, 2, 6, 6)), lambda x: _scalar(T.tconv2x2s2(x, w_t, b_t))
    yield "tconv2x2s2_w", Tensor(r(2, 2, 2, 2)), lambda w: _scalar(T.tconv2x2s2(x2, w, b_t))
    yield "maxpool2", Tensor(r(2, 2, 6, 6)), lambda x: _scalar(T.maxpool2(x))
    yield "rope", Tensor(r(5, 16)), lambda x: _scalar(T.mul(T.rope_apply(x, pos), c516))
    yield "sum_all", Tensor(r(3, 4)), lambda x: T.sum_all(T.mul(x, x))


# fixed cofactors for the closures above (float64, fixed once)
_rng0 = np.random.default_rng(99)
c35 = Tensor(_rng0.standard_normal((3, 5)))
c516 = Tensor(_rng0.standard_normal((5, 16)))


def run_gradcheck_ops(tol: float = 1e-5) -> list[CheckResult]:
    return [
        CheckResult(f"grad/{name}", T.grad_check(fn, x), tol)
        for name, x, fn in _gradcheck_cases()
    ]


def run_gradcheck_composed(tol: float = 1e-4) -> list[CheckResult]:
    rng = np.random.default_rng(7)
    out = []

    afr_w = A.init_afr_weights(2, rng, dtype=np.float64)
    for t in (afr_w.pconv1_b, afr_w.dconv1_b, afr_w.tconv_b, afr_w.pconv2_b, afr_w.dconv2_b):
        t.data = rng.uniform(-0.1, 0.1, size=t.shape)
    x_afr = Tensor(rng.standard_normal((2, 1, 6, 6)))
    out.append(
        CheckResult(
            "grad/afr_composed",
            T.grad_check(lambda x: _scalar(A.afr_forward(x, afr_w)), x_afr),
            tol,
        )
    )

    d = 8
    blk = A.init_block_weights(d, 2, rng, dtype=np.float64)
    for name in ("acfm_gate_w", "acfm_gate_b", "acfm_out_w", "acfm_out_b"):
        t = getattr(blk, name)
        t.data = rng.uniform(-0.1, 0.1, size=t.shape)
    af = Tensor(rng.standard_normal((d, 2, 3, 3)))
    x_v = Tensor(rng.standard_normal((d, 4, 3, 3)))
    out.append(
        CheckResult(
            "grad/acfm_composed",
            T.grad_check(lambda x: _scalar(A.acfm_forward(x, af, [0, 2], blk)), x_v),
            tol,
        )
    )

    f, gh, gw = 2, 2, 2
    pos_v = np.stack(
        np.meshgrid(np.arange(f), np.arange(gh), np.arange(gw), indexing="ij"), axis=-1
    ).reshape(-1, 3)
    pos_a = np.array([(0, hh, ww) for hh in range(gh) for ww in range(gw)], dtype=np.int64)
    anchor_tok = Tensor(rng.standard_normal((gh * gw, d)))
    text_tok = Tensor(rng.standard_normal((3, d)))

    def block_fn(x):
        vo, ao = A.dit_block_forward(
            x, anchor_tok, text_tok, pos_v, pos_a, [0], blk, 2, (f, gh, gw)
        )
        return T.add(T.sum_all(vo), T.sum_all(ao))

    x_tok = Tensor(rng.standard_normal((f * gh * gw, d)))
    out.append(CheckResult("grad/block_composed", T.grad_check(block_fn, x_tok), tol))
    return out


# ---------------------------------------------------------------------------
# Oracles


def check_affine_roundtrip(trials: int = 10_000, seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        p = MotionParams(
            tx=rng.uniform(-100, 100),
            ty=rng.uniform(-100, 100),
            theta=rng.uniform(-math.pi, math.pi),
            scale=math.exp(rng.uniform(math.log(0.1), math.log(10.0))),
        )
        q = decompose_affine(compose_similarity(p))
        worst = max(
            worst,
            abs(q.tx - p.tx),
            abs(q.ty - p.ty),
            abs(q.theta - p.theta),
            abs(q.scale - p.scale),
        )
    return CheckResult("oracle/affine_roundtrip", worst, 1e-12)


def check_lk_shifts(seed: int = 11) -> CheckResult:
    """Recover pure global shifts tracked corner-by-corner; mean-error oracle."""
    tex = make_texture("noise", 128, 128, seed)
    prev = Frame.from_array(np.floor(tex + 0.5))
    worst = 0.0
    for shift in [(1.0, 0.0), (-3.0, 2.0), (4.0, -4.0), (0.5, 0.0), (-2.5, 1.5), (3.5, -0.5)]:
        moved = warp_image(np.floor(tex + 0.5), MotionParams(tx=shift[0], ty=shift[1]))
        nxt = Frame.from_array(np.floor(moved + 0.5))
        corners = detect_corners(prev, CornerParams(max_corners=80, min_distance=9.0))
        pairs = track_corners(prev, nxt, corners, LKParams())
        errs = [
            math.hypot(p.dst[0] - p.src.x - shift[0], p.dst[1] - p.src.y - shift[1])
            for p in pairs
            if p.status == "ok"
        ]
        if not errs:
            return CheckResult("oracle/lk_shifts", float("inf"), 0.2)
        worst = max(worst, float(np.mean(errs)))
    return CheckResult("oracle/lk_shifts", worst, 0.2)


def check_ransac(trials: int = 100, seed: int = 21) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(trials):
        truth = MotionParams(
            tx=rng.uniform(-20, 20),
            ty=rng.uniform(-20, 20),
            theta=rng.uniform(-0.5, 0.5),
            scale=rng.uniform(0.7, 1.4),
        )
        m = compose_similarity(truth)
        n = 40
        src = rng.uniform(0, 200, size=(n, 2))
        dst = np.array([m.apply(x, y) for x, y in src])
        n_out = n // 5  # 20% gross outliers
        dst[:n_out] += rng.uniform(20, 80, size=(n_out, 2)) * rng.choice([-1, 1], size=(n_out, 2))
        pairs = [
            TrackedPair(
                src=Corner(x=float(s[0]), y=float(s[1]), score=1.0),
                dst=(float(d[0]), float(d[1])),
                status="ok",
                residual=0.0,
            )
            for s, d in zip(src, dst)
        ]
        est = decompose_affine(estimate_similarity(pairs, RansacParams(seed=trial)))
        worst = max(
            worst,
            abs(est.tx - truth.tx),
            abs(est.ty - truth.ty),
            abs(est.theta - truth.theta),
            abs(est.scale - truth.scale),
        )
    return CheckResult("oracle/ransac", worst, 1e-6)


def _rope_reference(x: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Independent per-token loop: explicit 2x2 rotations per frequency pair."""
    n, d = x.shape
    bands = T.rope_bands(d)
    out = x.copy()
    for tok in range(n):
        col = 0
        for axis, band in enumerate(bands):
            for k in range(band // 2):
                ang = pos[tok, axis] * ROPE_BASE ** (-2.0 * k / band)
                ca, sa = math.cos(ang), math.sin(ang)
                e, o = x[tok, col], x[tok, col + 1]
                out[tok, col] = e * ca - o * sa
                out[tok, col + 1] = e * sa + o * ca
                col += 2
    return out


def reference_attention(
    x: np.ndarray, pos: np.ndarray, w: A.DiTBlockWeights, heads: int
) -> np.ndarray:
    """Brute-force O(n^2) joint attention with explicit loops."""

    def lin(z, wt, bt):
        return z @ wt.data + bt.data

    q = _rope_reference(lin(x, w.wq, w.bq), pos)
    k = _rope_reference(lin(x, w.wk, w.bk), pos)
    v = lin(x, w.wv, w.bv)
    n, d = q.shape
    hd = d // heads
    ctx = np.zeros_like(q)
    for h in range(heads):
        sl = slice(h * hd, (h + 1) * hd)
        for i in range(n):
            scores = np.array([float(q[i, sl] @ k[j, sl]) for j in range(n)]) / math.sqrt(hd)
            e = np.exp(scores - scores.max())
            att = e / e.sum()
            ctx[i, sl] = sum(att[j] * v[j, sl] for j in range(n))
    return lin(ctx, w.wo, w.bo)


def check_attention_equivalence(configs: int = 50, seed: int = 31) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(configs):
        heads = 4
        d = int(rng.choice([16, 24, 32]))
        nv = int(rng.integers(4, 65))
        na = int(rng.integers(0, 5))
        blk = A.init_block_weights(d, 2, rng, scale=0.2, dtype=np.float64)
        f = int(rng.integers(1, 5))
        pos_v = np.stack(
            [rng.integers(0, f, nv), rng.integers(0, 8, nv), rng.integers(0, 8, nv)], axis=1
        )
        pos_a = np.stack(
            [rng.integers(0, 3, na), rng.integers(0, 8, na), rng.integers(0, 8, na)], axis=1
        )
        xv = rng.standard_normal((nv, d))
        xa = rng.standard_normal((na, d))
        vo, ao = A.anchor_attention(
            Tensor(xv), Tensor(xa) if na else None, pos_v, pos_a if na else None,
            blk, heads, temporal_extent=f, gap=4,
        )
        pos_all = np.concatenate([pos_v, A.shifted_anchor_positions(pos_a, f, 4)]) if na else pos_v
        ref = reference_attention(np.concatenate([xv, xa]) if na else xv, pos_all, blk, heads)
        got = np.concatenate([vo.numpy(), ao.numpy()]) if na else vo.numpy()
        worst = max(worst, float(np.max(np.abs(got - ref))))
    return CheckResult("oracle/attention_equivalence", worst, 1e-5)


def check_rope_shift_invariance(trials: int = 1000, seed: int = 41) -> CheckResult:
    """Inner products of rotated tokens depend only on relative positions."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        d = int(rng.choice([8, 16, 24]))
        pa = rng.integers(0, 32, size=(1, 3))
        pb = rng.integers(0, 32, size=(1, 3))
        shift = int(rng.integers(1, 100))
        a = rng.standard_normal((1, d))
        b = rng.standard_normal((1, d))

        def dot(p1, p2):
            ra = T.rope_apply(Tensor(a), p1).numpy()
            rb = T.rope_apply(Tensor(b), p2).numpy()
            return float((ra @ rb.T)[0, 0])

        d0 = dot(pa, pb)
        ps = np.array([[shift, 0, 0]])
        d1 = dot(pa + ps, pb + ps)
        worst = max(worst, abs(d0 - d1) / max(abs(d0), 1.0))
    return CheckResult("oracle/rope_shift_invariance", worst, 1e-5)


def check_acfm_identity(seed: int = 51) -> CheckResult:
    """Zero-initialized gate and output convs: ACFM must return input bit-equal."""
    rng = np.random.default_rng(seed)
    d = 12
    blk = A.init_block_weights(d, 2, rng, dtype=np.float32)
    x = Tensor(rng.standard_normal((d, 5, 4, 4)).astype(np.float32))
    af = Tensor(rng.standard_normal((d, 2, 4, 4)).astype(np.float32))
    out = A.acfm_forward(x, af, [0, 3], blk)
    exact = 0.0 if np.array_equal(out.numpy(), x.numpy()) else float("inf")

    # anchor tokens must bypass cross-attention untouched
    text = Tensor(rng.standard_normal((3, d)).astype(np.float32))
    delta = A.cross_attention(Tensor(rng.standard_normal((6, d)).astype(np.float32)), text, blk, 2)
    if delta is None:
        exact = float("inf")
    none_delta = A.cross_attention(Tensor(rng.standard_normal((6, d)).astype(np.float32)), None, blk, 2)
    if none_delta is not None:
        exact = float("inf")
    return CheckResult("oracle/acfm_identity", exact, 0.5)


def run_oracle_suite() -> list[CheckResult]:
    return [
        check_affine_roundtrip(),
        check_lk_shifts(),
        check_ransac(),
        check_attention_equivalence(),
        check_rope_shift_invariance(),
        check_acfm_identity(),
    ]


def run_gradcheck_suite() -> list[CheckResult]:
    return run_gradcheck_ops() + run_gradcheck_composed()


def run_suite(name: str) -> list[CheckResult]:
    if name == "gradcheck":
        return run_gradcheck_suite()
    if name == "oracle":
        return run_oracle_suite()
    if name == "all":
        return run_gradcheck_suite() + run_oracle_suite()
    raise ValueError(f"unknown suite {name!r}")
