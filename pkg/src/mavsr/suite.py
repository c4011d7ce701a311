"""The fixed synthetic evaluation suite.

Twelve deterministic videos: three with no camera motion and nine with one to
three single-frame motion kicks (translation, rotation, zoom) separated by
sub-threshold drift. Kick frames avoid indices = 1 (mod 4): a kick aligned
with the toy VAE's absolute group grid would be losslessly absorbed by
whole-sequence encoding too, leaving no measurable gap between the two
reconstruction modes.
"""

from __future__ import annotations

from dataclasses import dataclass

from .similarity import MotionParams
from .video_io import SynthResult, SynthSpec, synth_video

STILL = MotionParams()
DRIFT_A = MotionParams(tx=0.03)
DRIFT_B = MotionParams(tx=-0.02, ty=0.025)
DRIFT_C = MotionParams(ty=-0.03, theta=0.0008)
KICK_T = MotionParams(tx=12.0)
KICK_R = MotionParams(theta=0.25)
KICK_Z = MotionParams(scale=1.25)


@dataclass(frozen=True)
class SuiteEntry:
    name: str
    spec: SynthSpec
    static: bool


def standard_suite() -> list[SuiteEntry]:
    e = SuiteEntry
    return [
        e("static_noise", SynthSpec(64, 64, [(60, STILL)], texture_seed=10), True),
        e("static_checker", SynthSpec(72, 72, [(72, STILL)], texture_seed=11, base="checker"), True),
        e("static_blobs", SynthSpec(64, 64, [(64, STILL)], texture_seed=12, base="blobs"), True),
        e("kick_translate", SynthSpec(64, 64, [(22, DRIFT_A), (1, KICK_T), (37, DRIFT_B)], texture_seed=13), False),
        e("kick_rotate", SynthSpec(80, 80, [(26, DRIFT_A), (1, KICK_R), (73, DRIFT_B)], texture_seed=14), False),
        e("kick_zoom", SynthSpec(64, 64, [(30, DRIFT_B), (1, KICK_Z), (49, DRIFT_A)], texture_seed=15), False),
        e("kicks_tr", SynthSpec(64, 64, [(22, DRIFT_A), (1, KICK_T), (24, DRIFT_B), (1, KICK_R), (42, DRIFT_C)], texture_seed=16), False),
        e("kicks_rz", SynthSpec(96, 96, [(26, DRIFT_B), (1, KICK_R), (27, DRIFT_C), (1, KICK_Z), (41, DRIFT_A)], texture_seed=17), False),
        e("kicks_trz", SynthSpec(64, 64, [(22, DRIFT_A), (1, KICK_T), (24, DRIFT_B), (1, KICK_R), (24, DRIFT_C), (1, KICK_Z), (27, DRIFT_A)], texture_seed=18), False),
        e("kicks_ztr", SynthSpec(80, 80, [(30, DRIFT_C), (1, KICK_Z), (24, DRIFT_A), (1, KICK_T), (24, DRIFT_B), (1, KICK_R), (19, DRIFT_A)], texture_seed=19), False),
        e("checker_translate", SynthSpec(72, 72, [(34, DRIFT_B), (1, KICK_T), (25, DRIFT_A)], texture_seed=20, base="checker"), False),
        e("blobs_rz", SynthSpec(64, 64, [(26, DRIFT_A), (1, KICK_R), (24, DRIFT_B), (1, KICK_Z), (28, DRIFT_C)], texture_seed=21, base="blobs"), False),
    ]


def render(entry: SuiteEntry) -> SynthResult:
    return synth_video(entry.spec)
