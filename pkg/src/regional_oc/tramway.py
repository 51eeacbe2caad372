"""Closed-form tramway solution (unit speed off the rail, speed 10 on it).

Normal form: start ``(x0, y0)`` with ``y0 < 0``, target ``(x1, -y0)`` with
``x1 > x0``, rail ``y = 0``. A 1-H-2 path walks to ``(x0 + a, 0)``, rides the
rail and walks symmetrically up, which costs

    C(a) = 2 sqrt(y0^2 + a^2) + (x1 - x0)/10 - a/5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .structures import StructureWord

RAIL_SPEED = 10.0


@dataclass(frozen=True)
class TramwayInstance:
    x0: float
    y0: float
    x1: float

    def __post_init__(self):
        if not self.y0 < 0:
            raise DomainError("need y0 < 0")
        if not self.x1 > self.x0:
            raise DomainError("need x1 > x0")

    @classmethod
    def from_points(cls, start, end) -> "TramwayInstance":
        if abs(float(end[1]) + float(start[1])) > 1e-12:
            raise DomainError("target must mirror the start across the rail (y1 = -y0)")
        return cls(float(start[0]), float(start[1]), float(end[0]))

    @property
    def span(self) -> float:
        return self.x1 - self.x0

    @property
    def depth(self) -> float:
        return -self.y0


@dataclass(frozen=True)
class TramwayOptimum:
    word: StructureWord
    a: float
    tf: float
    switch_points: tuple
    P1: np.ndarray
    Q_H: np.ndarray
    nu1: float | None
    nu2: float | None


def cost_of_a(inst: TramwayInstance, a: float) -> float:
    if not (0.0 <= a <= inst.span / 2):
        raise DomainError(f"a = {a} outside [0, {inst.span / 2}]")
    return 2.0 * math.hypot(inst.y0, a) + inst.span / RAIL_SPEED - a / 5.0


def threshold(inst: TramwayInstance) -> float:
    """Walking offset where the rail starts to pay: |y0| / (3 sqrt 11)."""
    return inst.depth / (3.0 * math.sqrt(11.0))


def optimal(inst: TramwayInstance) -> TramwayOptimum:
    a_star = threshold(inst)
    if inst.span / 2 > a_star:
        a = a_star
        word = StructureWord.parse("1-H-2")
        tf = cost_of_a(inst, a)
        pts = ((inst.x0 + a, 0.0), (inst.x1 - a, 0.0))
    else:
        a = inst.span / 2
        word = StructureWord.parse("1-2")
        tf = 2.0 * math.sqrt(inst.y0 ** 2 + a * a)
        pts = ((inst.x0 + a, 0.0),)
    rho = math.hypot(a, inst.y0)
    P1 = np.array([a, inst.depth]) / rho
    if len(word) == 3:
        return TramwayOptimum(word, a, tf, pts, P1, np.array([1.0 / RAIL_SPEED, 0.0]),
                              -inst.depth / rho, inst.depth / rho)
    return TramwayOptimum(word, a, tf, pts, P1, P1.copy(), None, None)


def brute_force(inst: TramwayInstance, samples: int = 1_000_000) -> tuple[float, float]:
    """Grid minimum of ``C`` over ``[0, span/2]``; returns ``(a, C(a))``."""
    a = np.linspace(0.0, inst.span / 2, samples)
    c = 2.0 * np.hypot(inst.y0, a) + inst.span / RAIL_SPEED - a / 5.0
    k = int(np.argmin(c))
    return float(a[k]), float(c[k])
