"""Kernel-level tests: the numpy fallback against brute force, and the
compiled extension against the fallback."""

import numpy as np
import pytest

from mavsr import _kernels
from mavsr._kernels import _fallback


def test_backend_reports_state():
    assert _kernels.BACKEND in ("ext", "fallback")
    if _kernels.BACKEND == "ext":
        assert _kernels.HAVE_EXT


def _conv_args(seed=0, dtype=np.float64):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 2, 6, 7)).astype(dtype)
    w = rng.standard_normal((3, 3, 3)).astype(dtype)
    b = rng.standard_normal(3).astype(dtype)
    return x, w, b


def test_fallback_dconv_matches_brute_force():
    x, w, b = _conv_args()
    got = _fallback.dconv3x3_forward(x, w, b)
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    for c in range(3):
        for n in range(2):
            for y in range(6):
                for xx in range(7):
                    acc = b[c]
                    for ky in range(3):
                        for kx in range(3):
                            acc += w[c, ky, kx] * padded[c, n, y + ky, xx + kx]
                    assert got[c, n, y, xx] == pytest.approx(acc)


@pytest.mark.skipif(not _kernels.HAVE_EXT, reason="extension not built")
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_ext_dconv_matches_fallback(dtype):
    from mavsr._kernels import _core

    x, w, b = _conv_args(seed=1, dtype=dtype)
    a = _fallback.dconv3x3_forward(x, w, b)
    c = _core.dconv3x3_forward(x, w, b)
    tol = 1e-6 if dtype == np.float32 else 1e-12
    assert np.allclose(a, c, atol=tol, rtol=tol)


def _lk_inputs(shift, seed=2):
    from mavsr.similarity import MotionParams
    from mavsr.video_io import make_texture, warp_image

    prev = np.floor(make_texture("noise", 64, 64, seed) + 0.5)
    nxt = np.floor(warp_image(prev, MotionParams(tx=shift[0], ty=shift[1])) + 0.5)
    gy, gx = np.gradient(prev)
    px = np.array([20.0, 32.0, 40.0, 25.0])
    py = np.array([20.0, 30.0, 44.0, 40.0])
    z = np.zeros_like(px)
    return (
        prev,
        np.ascontiguousarray(nxt),
        np.ascontiguousarray(gx),
        np.ascontiguousarray(gy),
        px,
        py,
        z.copy(),
        z.copy(),
        7,
        30,
        1e-4,
        1e-4,
    )


def test_fallback_lk_recovers_small_shift():
    args = _lk_inputs((1.5, -0.5))
    u, v, ok, resid = _fallback.lk_refine(*args)
    assert ok.astype(bool).all()
    assert np.allclose(u, 1.5, atol=0.1)
    assert np.allclose(v, -0.5, atol=0.1)
    assert (resid < 20.0).all()  # quantization + bilinear leave a small residual


@pytest.mark.skipif(not _kernels.HAVE_EXT, reason="extension not built")
def test_ext_lk_matches_fallback():
    from mavsr._kernels import _core

    args_a = _lk_inputs((2.0, 1.0))
    args_b = _lk_inputs((2.0, 1.0))
    ua, va, oka, ra = _fallback.lk_refine(*args_a)
    ub, vb, okb, rb = _core.lk_refine(*args_b)
    assert np.array_equal(oka, okb)
    assert np.allclose(ua, ub, atol=1e-9)
    assert np.allclose(va, vb, atol=1e-9)
    assert np.allclose(ra, rb, atol=1e-9)


def test_lk_flat_region_rejected():
    """A textureless window has a singular structure tensor: not trackable."""
    flat = np.full((64, 64), 100.0)
    gy, gx = np.gradient(flat)
    u, v, ok, resid = _fallback.lk_refine(
        flat, flat.copy(), np.ascontiguousarray(gx), np.ascontiguousarray(gy),
        np.array([32.0]), np.array([32.0]), np.zeros(1), np.zeros(1),
        7, 10, 1e-4, 1e-4,
    )
    assert not ok.astype(bool).any()
    assert np.isinf(resid).all()


def test_force_fallback_env(tmp_path):
    """MAVSR_FORCE_FALLBACK selects the numpy backend at import time."""
    import subprocess
    import sys

    code = "from mavsr import _kernels; print(_kernels.BACKEND)"
    env_out = subprocess.run(
        [sys.executable, "-c", code],
        capture_output=True, text=True,
        env={"PATH": "/usr/bin:/bin", "MAVSR_FORCE_FALLBACK": "1"},
    )
    assert env_out.stdout.strip() == "fallback"
