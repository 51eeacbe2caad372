"""Duplicated (lifted) problem for one structure word.

Every arc k gets its own copy ``Y_k`` of the state and a clock ``rho_k``, all
driven on the common pseudo-time interval [0, 1]::

    Y_k' = w_k f_k(Y_k, v_k),    rho_k' = w_k,    w_k in [W_LO, W_HI]

Consecutive arcs are glued by ``Y_k(1) = Y_{k+1}(0)``, ``rho_k(1) = rho_{k+1}(0)``
and ``psi(Y_k(1)) = 0``. The running cost is ``sum_k l_k(Y_k, v_k) w_k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidWord
from .geometry import RegionLabel
from .problem import Region, RegionalProblem
from .structures import StructureWord, validate

T0, T1 = 0.0, 1.0
W_LO, W_HI = 1e-3, 1e3


@dataclass(frozen=True)
class ArcSpec:
    index: int
    label: RegionLabel
    region: Region

    @property
    def m(self) -> int:
        return self.region.m

    @property
    def on_interface(self) -> bool:
        return self.label == RegionLabel.H

    @property
    def side(self) -> int:
        """Sign of psi the arc must keep (0 on H arcs)."""
        return self.label.sign


@dataclass(frozen=True)
class Junction:
    index: int  # junction between arcs index and index + 1
    left: RegionLabel
    right: RegionLabel

    @property
    def kind(self) -> str:
        if self.right == RegionLabel.H:
            return "entry"
        if self.left == RegionLabel.H:
            return "exit"
        return "crossing"

    @property
    def name(self) -> str:
        return f"{self.left.text}->{self.right.text}"


@dataclass(frozen=True)
class LiftedProblem:
    prob: RegionalProblem
    word: StructureWord
    arcs: tuple
    junctions: tuple

    @property
    def K(self) -> int:
        return len(self.arcs)

    @property
    def N(self) -> int:
        return self.prob.n_state

    @property
    def lifted_dim(self) -> int:
        return self.K * (self.N + 1)

    @property
    def n_junction_blocks(self) -> int:
        return len(self.junctions)

    @property
    def n_interface_constraints(self) -> int:
        # every transition touches H
        return len(self.junctions)

    def n_controls(self, nodes: int) -> int:
        return sum(nodes * (a.m + 1) for a in self.arcs)


def build(prob: RegionalProblem, word) -> LiftedProblem:
    word = StructureWord.parse(word)
    bad = validate(word, prob.x0_label, prob.xf_label)
    if bad is not None:
        raise InvalidWord(f"{word}: {bad}")
    arcs = tuple(ArcSpec(k, lab, prob.regions[lab]) for k, lab in enumerate(word.labels))
    junctions = tuple(Junction(k, word[k], word[k + 1]) for k in range(len(word) - 1))
    return LiftedProblem(prob, word, arcs, junctions)


def clock_nodes(rho0: float, w) -> np.ndarray:
    """Clock values at the pseudo-time nodes for piecewise-constant ``w``."""
    w = np.asarray(w, dtype=float)
    out = np.empty(len(w) + 1)
    out[0] = rho0
    out[1:] = rho0 + np.cumsum(w) / len(w) * (T1 - T0)
    return out


def pullback_time(rho0: float, w, tau: float) -> float:
    """Original time ``rho_k(tau)`` on an arc with clock nodes ``w`` starting at ``rho0``."""
    if not T0 <= tau <= T1:
        raise ValueError(f"tau = {tau} outside [{T0}, {T1}]")
    w = np.asarray(w, dtype=float)
    M = len(w)
    s = (tau - T0) / (T1 - T0) * M
    n = min(int(s), M - 1)
    rho = clock_nodes(rho0, w)
    return float(rho[n] + (s - n) * w[n] * (T1 - T0) / M)

