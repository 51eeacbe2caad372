"""Flat bytecode bundle describing one arc for the shooting kernels.

Program slots: ``0..N-1`` dynamics components, ``N`` running cost, ``N+1``
the interface function and ``N+2..2N+1`` its gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import expr as ex

MAX_STACK = 256


@dataclass(frozen=True)
class ArcProgram:
    N: int
    m: int
    on_interface: bool
    side: int
    exprs: tuple
    ops: np.ndarray = field(repr=False)
    args: np.ndarray = field(repr=False)
    consts: np.ndarray = field(repr=False)
    starts: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, f, l, psi, grad_psi, m: int, on_interface: bool, side: int) -> "ArcProgram":
        exprs = tuple(f) + (l, psi) + tuple(grad_psi)
        N = len(f)
        ops, args, consts, starts = [], [], [], [0]
        for e in exprs:
            o, a, c, depth = ex.bytecode(e)
            if depth > MAX_STACK:
                raise ValueError("expression too deeply nested for the compiled kernel")
            base = len(consts)
            for op, arg in zip(o, a):
                ops.append(op)
                args.append(arg + base if op == ex.OP_CONST else arg)
            consts.extend(c)
            starts.append(len(ops))
        return cls(
            N=N,
            m=m,
            on_interface=bool(on_interface),
            side=int(side),
            exprs=exprs,
            ops=np.asarray(ops, dtype=np.int32),
            args=np.asarray(args, dtype=np.int32),
            # padded so the compiled side can always take a pointer
            consts=np.asarray(consts + [0.0], dtype=np.float64),
            starts=np.asarray(starts, dtype=np.int32),
        )

    @classmethod
    def for_arc(cls, arc, iface) -> "ArcProgram":
        return cls.build(
            arc.region.f,
            arc.region.l,
            iface.psi,
            iface.grad_exprs,
            arc.m,
            arc.on_interface,
            arc.side,
        )

    @property
    def f(self):
        return self.exprs[: self.N]

    @property
    def l(self):
        return self.exprs[self.N]

    @property
    def psi(self):
        return self.exprs[self.N + 1]

    @property
    def grad_psi(self):
        return self.exprs[self.N + 2 :]
