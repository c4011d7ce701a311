"""Command-line surface: analyze, reconstruct, forward, verify, synth.

Exit codes: 0 success, 1 verification failure, 2 usage or input error.
``STCDIT_THREADS`` caps the thread pools of the numeric backends; it must be
applied before heavy work starts, so ``main`` handles it first.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import Config, load_config
from .errors import ConfigError, MavsrError
from .motion import motion_timeseries, segment_video, segmentation_report
from .pipeline import (
    MODE_MOTION_AWARE,
    MODE_STANDARD,
    detect_breaks_for_sequence,
    reconstruct,
    run_restoration_forward,
)
from .similarity import MotionParams
from .video_io import (
    SynthSpec,
    load_frame_sequence,
    save_raw_stream,
    synth_video,
)

_MODES = {"standard": MODE_STANDARD, "motion-aware": MODE_MOTION_AWARE}


def _apply_thread_cap() -> None:
    cap = os.environ.get("STCDIT_THREADS")
    if not cap:
        return
    try:
        n = max(1, int(cap))
    except ValueError:
        raise ConfigError(f"STCDIT_THREADS must be an integer, got {cap!r}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _load_cfg(path: str | None) -> Config:
    return load_config(path) if path else Config()


def cmd_analyze(args) -> int:
    cfg = _load_cfg(args.config)
    seq = load_frame_sequence(args.input)
    mcfg = cfg.motion_config()
    series = motion_timeseries(seq, mcfg)
    breaks = detect_breaks_for_sequence(seq, mcfg)
    clips = segment_video(len(seq), breaks, cfg.constraints())
    report = segmentation_report(len(seq), breaks, clips, series.params)
    _write_or_print(report, args.output)
    return 0


def cmd_reconstruct(args) -> int:
    cfg = _load_cfg(args.config)
    seq = load_frame_sequence(args.input)
    result = reconstruct(
        seq,
        mode=_MODES[args.mode],
        motion_cfg=cfg.motion_config(),
        vae_cfg=cfg.vae_config(),
        constraints=cfg.constraints(),
    )
    seg_map = ", ".join(str(c.length) for c in result.clips)
    report = '{"mode": "%s", "clips": %d, "psnr_db": %.6f, "seg_map": [%s]}' % (
        args.mode,
        len(result.clips),
        result.psnr,
        seg_map,
    )
    _write_or_print(report, args.output)
    return 0


def cmd_forward(args) -> int:
    cfg = _load_cfg(args.config)
    if args.seed is not None:
        cfg.model_seed = args.seed
    seq = load_frame_sequence(args.input)
    from .anchor import init_model_weights

    model = init_model_weights(cfg.latent_channels, cfg.model_config(), seed=cfg.model_seed)
    out_seq, result = run_restoration_forward(
        seq,
        mode=_MODES[args.mode],
        motion_cfg=cfg.motion_config(),
        vae_cfg=cfg.vae_config(),
        constraints=cfg.constraints(),
        model=model,
        noise_seed=cfg.noise_seed,
        residual_scale=cfg.residual_scale,
    )
    if args.output:
        save_raw_stream(out_seq, args.output)
    report = '{"mode": "%s", "frames": %d, "clips": %d, "psnr_db": %.6f}' % (
        args.mode,
        len(out_seq),
        len(result.clips),
        result.psnr,
    )
    print(report)
    return 0


def cmd_verify(args) -> int:
    from .verify import run_suite

    try:
        results = run_suite(args.suite)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def _parse_synth_spec(path: str) -> SynthSpec:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"synth spec not found: {p}")
    fields = {"width": None, "height": None, "texture_seed": 0, "base": "noise"}
    regimes: list[tuple[int, MotionParams]] = []
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "regime":
            toks = value.split()
            if len(toks) != 5:
                raise ConfigError(f"{p}:{lineno}: regime needs 'length tx ty theta scale'")
            length = int(toks[0])
            regimes.append(
                (length, MotionParams(
                    tx=float(toks[1]), ty=float(toks[2]),
                    theta=float(toks[3]), scale=float(toks[4]),
                ))
            )
        elif key in ("width", "height", "texture_seed"):
            fields[key] = int(value)
        elif key == "base":
            fields[key] = value
        else:
            raise ConfigError(f"{p}:{lineno}: unknown key {key!r}")
    if fields["width"] is None or fields["height"] is None or not regimes:
        raise ConfigError(f"{p}: width, height and at least one regime are required")
    return SynthSpec(
        width=fields["width"],
        height=fields["height"],
        regimes=regimes,
        texture_seed=fields["texture_seed"],
        base=fields["base"],
    )


def cmd_synth(args) -> int:
    spec = _parse_synth_spec(args.input)
    result = synth_video(spec)
    if not args.output:
        raise ConfigError("synth requires --output for the frame stream")
    save_raw_stream(result.sequence, args.output)
    breaks_s = ", ".join(str(b) for b in result.breaks)
    report = '{"n_frames": %d, "width": %d, "height": %d, "breaks": [%s]}' % (
        len(result.sequence),
        spec.width,
        spec.height,
        breaks_s,
    )
    Path(args.output + ".json").write_text(report + "\n")
    print(report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mavsr",
        description="Motion-aware segment-wise video reconstruction toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, mode=False, seed=False, suite=False):
        p.add_argument("--input", help="input video (raw stream or image directory)")
        p.add_argument("--output", help="output path")
        p.add_argument("--config", help="key = value config file")
        if mode:
            p.add_argument("--mode", choices=sorted(_MODES), default="motion-aware")
        if seed:
            p.add_argument("--seed", type=int, default=None)
        if suite:
            p.add_argument("--suite", choices=["gradcheck", "oracle", "all"], default="all")

    p = sub.add_parser("analyze", help="motion analysis and segmentation report")
    common(p)
    p.set_defaults(fn=cmd_analyze, needs_input=True)

    p = sub.add_parser("reconstruct", help="segment-wise VAE round trip with PSNR")
    common(p, mode=True)
    p.set_defaults(fn=cmd_reconstruct, needs_input=True)

    p = sub.add_parser("forward", help="single guided restoration forward pass")
    common(p, mode=True, seed=True)
    p.set_defaults(fn=cmd_forward, needs_input=True)

    p = sub.add_parser("verify", help="run self-check suites")
    common(p, suite=True)
    p.set_defaults(fn=cmd_verify, needs_input=False)

    p = sub.add_parser("synth", help="render a synthetic test video from a spec file")
    common(p)
    p.set_defaults(fn=cmd_synth, needs_input=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_thread_cap()
        if args.needs_input and not args.input:
            print(f"{args.command}: --input is required", file=sys.stderr)
            return 2
        return args.fn(args)
    except (MavsrError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
