"""Similarity-transform geometry: parameter set, composition and decomposition.

A 4-DOF similarity maps a point p to s*R(theta)*p + t. It is stored either as
decomposed ``MotionParams`` or as the 2x3 ``AffineMatrix`` [[a, b, tx], [c, d, ty]]
with a = d = s*cos(theta) and c = -b = s*sin(theta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DegenerateMotion

_MIN_SCALE = 1e-9


@dataclass(frozen=True)
class MotionParams:
    """Decomposed inter-frame similarity: translation (px), rotation (rad), scale."""

    tx: float = 0.0
    ty: float = 0.0
    theta: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0.0:
            raise DegenerateMotion(f"scale must be positive, got {self.scale}")

    def is_identity(self) -> bool:
        return self.tx == 0.0 and self.ty == 0.0 and self.theta == 0.0 and self.scale == 1.0


@dataclass(frozen=True)
class AffineMatrix:
    """2x3 linear map [[a, b, tx], [c, d, ty]] with non-singular linear part."""

    a: float
    b: float
    c: float
    d: float
    tx: float
    ty: float

    def apply(self, x: float, y: float) -> tuple[float, float]:
        return (self.a * x + self.b * y + self.tx, self.c * x + self.d * y + self.ty)


def compose_similarity(p: MotionParams) -> AffineMatrix:
    """Build the matrix form of a similarity from its parameters."""
    ct = p.scale * math.cos(p.theta)
    st = p.scale * math.sin(p.theta)
    return AffineMatrix(a=ct, b=-st, c=st, d=ct, tx=p.tx, ty=p.ty)


def decompose_affine(m: AffineMatrix) -> MotionParams:
    """Recover (tx, ty, theta, scale) from a similarity matrix.

    A matrix that is only approximately a similarity is first projected to the
    nearest one (averaging a/d and b/-c); an exactly-similar input round-trips
    to 1e-12.
    """
    a = 0.5 * (m.a + m.d)
    c = 0.5 * (m.c - m.b)
    scale = math.hypot(a, c)
    if scale < _MIN_SCALE:
        raise DegenerateMotion("linear part has vanishing scale")
    return MotionParams(tx=m.tx, ty=m.ty, theta=math.atan2(c, a), scale=scale)


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi
