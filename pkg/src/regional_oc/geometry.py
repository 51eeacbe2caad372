"""Interface ``{psi = 0}``, region classification and tangent projections."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import expr as ex
from .errors import DegenerateNormal, NotOnInterface

NORMAL_MIN = 1e-10
TANGENCY_TOL = 1e-8


class RegionLabel(enum.IntEnum):
    """Region labels; the integer values give the iteration order R1 < H < R2."""

    R1 = 0
    H = 1
    R2 = 2

    @property
    def text(self) -> str:
        return {0: "1", 1: "H", 2: "2"}[int(self)]

    @classmethod
    def parse(cls, s) -> "RegionLabel":
        if isinstance(s, RegionLabel):
            return s
        try:
            return {"1": cls.R1, "2": cls.R2, "H": cls.H}[str(s)]
        except KeyError:
            raise ValueError(f"unknown region label {s!r}") from None

    @property
    def sign(self) -> int:
        """-1 on the side where psi < 0 (region 1), +1 on region 2, 0 on H."""
        return {0: -1, 1: 0, 2: 1}[int(self)]


@dataclass(frozen=True)
class Interface:
    psi: ex.Expr
    n_state: int
    eta: float = 1e-9
    _grad: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if ex.depends_on_control(self.psi):
            raise ValueError("psi must depend on the state only")
        object.__setattr__(self, "_grad", ex.gradient_exprs(self.psi, "x", self.n_state))

    @property
    def grad_exprs(self) -> tuple:
        return self._grad

    def value(self, x: Sequence[float]) -> float:
        return ex.evaluate(self.psi, x)

    def gradient(self, x: Sequence[float]) -> np.ndarray:
        return np.array([ex.evaluate(g, x) for g in self._grad])

    def normal(self, x: Sequence[float]) -> np.ndarray:
        """Unit normal pointing from region 1 to region 2."""
        g = self.gradient(x)
        nrm = float(np.linalg.norm(g))
        if nrm <= NORMAL_MIN:
            raise DegenerateNormal(f"|grad psi| = {nrm:.3e} at {list(x)}")
        return g / nrm

    def classify(self, x: Sequence[float]) -> RegionLabel:
        v = self.value(x)
        if abs(v) <= self.eta:
            g = self.gradient(x)
            if np.linalg.norm(g) <= NORMAL_MIN:
                raise DegenerateNormal(f"grad psi vanishes at interface point {list(x)}")
            return RegionLabel.H
        return RegionLabel.R1 if v < 0 else RegionLabel.R2

    def tangent_project(self, x: Sequence[float], v: Sequence[float]) -> np.ndarray:
        """Orthogonal projection of ``v`` on the tangent space at ``x`` (``x`` on H)."""
        if abs(self.value(x)) > self.eta:
            raise NotOnInterface(f"psi(x) = {self.value(x):.3e} exceeds eta = {self.eta:.1e}")
        return project_out(self.normal(x), v)

    def snap(self, x: Sequence[float], max_iter: int = 20, tol: float = 1e-14) -> np.ndarray:
        """Newton projection of ``x`` on ``{psi = 0}`` along the gradient."""
        y = np.array(x, dtype=float)
        for _ in range(max_iter):
            p = self.value(y)
            if abs(p) <= tol:
                break
            g = self.gradient(y)
            gg = float(g @ g)
            if gg <= NORMAL_MIN**2:
                raise DegenerateNormal(f"grad psi vanishes at {y.tolist()}")
            y = y - (p / gg) * g
        return y


def project_out(n: np.ndarray, v: Sequence[float]) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v - float(v @ n) * n


def classify(iface: Interface, x: Sequence[float]) -> RegionLabel:
    return iface.classify(x)


def tangent_project(iface: Interface, x: Sequence[float], v: Sequence[float]) -> np.ndarray:
    return iface.tangent_project(x, v)


@dataclass
class TangencyReport:
    max_residual: float
    worst_sample: int
    passed: bool
    residuals: list


def check_tangency(
    iface: Interface,
    f_h: Sequence[ex.Expr],
    samples: Iterable[tuple[Sequence[float], Sequence[float]]],
    tol: float = TANGENCY_TOL,
) -> TangencyReport:
    """Max of ``|<f_H(x, a), grad psi(x)>| / |grad psi(x)|`` over samples."""
    res = []
    for x, a in samples:
        n = iface.normal(x)
        f = np.array([ex.evaluate(fi, x, a) for fi in f_h])
        res.append(abs(float(f @ n)))
    if not res:
        return TangencyReport(0.0, -1, True, [])
    worst = int(np.argmax(res))
    return TangencyReport(res[worst], worst, res[worst] <= tol, res)
