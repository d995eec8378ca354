"""Polarized traces: the block system and its Gauss-Seidel preconditioner.

A trace pair at interface ``j`` is split into a down-going part, stored at
local planes ``(n, n+1)`` of layer ``j`` (its owner), and an up-going part
stored at planes ``(0, 1)`` of layer ``j+1``.  Both live on the same two
global planes, so ``u = u_down + u_up`` entry by entry and both components
use the trace layout of :mod:`poltrace.partition`.

The polarized system is

    [ D_down  U    ] [u_down]   [b_down]
    [ L       D_up ] [u_up  ] = [b_up  ]

with unit block diagonals on ``D_down``/``D_up`` (sign -1), block bidiagonal
``D`` blocks inverted by sweeps, and layer-local reflection blocks ``L``
and ``U``.  All five blocks are applied with one local solve per layer that
has work to do; nothing is assembled.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .sie import _batched


class PolarizedOperator:
    """Matrix-free polarized blocks on a :class:`~poltrace.sie.LayerStack`.

    ``log`` is an optional object with a ``record(sender, receiver, planes,
    stage, rhs)`` method; sweeps report every plane-pair hand-off to it.
    With ``fuse=True`` the preconditioner issues each layer's reflection
    solve right after that layer's sweep step instead of in a separate
    pass; the arithmetic and the solve count are unchanged.
    """

    def __init__(self, stack, log=None, fuse=False):
        self.stack = stack
        self.part = stack.part
        self.log = log
        self.fuse = fuse
        self.messages = 0

    # -- layer kernels -------------------------------------------------

    def _pair(self, x, j):
        return (x[:, 2 * j], x[:, 2 * j + 1])

    def down_step(self, layer, top, rhs):
        """Sweep step: ``T(top)`` at planes ``(n, n+1)`` minus ``rhs``."""
        n = self.part.thicknesses[layer]
        w = self.stack.top_bottom(layer, top, None, extract=(n, n + 1))
        return (w[n] - rhs[0], w[n + 1] - rhs[1])

    def up_step(self, layer, bottom, rhs):
        """Sweep step: ``B(bottom)`` at planes ``(0, 1)`` minus ``rhs``."""
        w = self.stack.top_bottom(layer, None, bottom, extract=(0, 1))
        return (w[0] - rhs[0], w[1] - rhs[1])

    def reflect_up(self, layer, top, bottom):
        """Up-going reflection from down-going input, output at planes ``(0, 1)``."""
        w = self.stack.top_bottom(layer, top, bottom, extract=(0, 1))
        return (w[0], w[1] - top[1])

    def reflect_down(self, layer, top, bottom):
        """Down-going reflection from up-going input, output at planes ``(n, n+1)``."""
        n = self.part.thicknesses[layer]
        w = self.stack.top_bottom(layer, top, bottom, extract=(n, n + 1))
        return (w[n] - bottom[0], w[n + 1])

    def _send(self, sender, receiver, stage, batch):
        self.messages += batch
        if self.log is not None:
            for r in range(batch):
                self.log.record(sender, receiver, 2, stage, r)

    # -- forward blocks ------------------------------------------------

    def _prep(self, v):
        vb, single = _batched(v, self.part, self.stack.plane_shape)
        return vb, single, np.zeros_like(vb, dtype=np.complex128)

    @staticmethod
    def _put(out, j, pair):
        out[:, 2 * j], out[:, 2 * j + 1] = pair

    def apply_D_down(self, v):
        vb, single, out = self._prep(v)
        L = self.part.L
        if L > 1:
            self._put(out, 0, (-vb[:, 0], -vb[:, 1]))
        for layer in range(1, L - 1):
            self._put(out, layer, self.down_step(layer, self._pair(vb, layer - 1), self._pair(vb, layer)))
        return out[0] if single else out

    def apply_D_up(self, v):
        vb, single, out = self._prep(v)
        L = self.part.L
        if L > 1:
            self._put(out, L - 2, (-vb[:, 2 * (L - 2)], -vb[:, 2 * (L - 2) + 1]))
        for layer in range(L - 2, 0, -1):
            self._put(out, layer - 1, self.up_step(layer, self._pair(vb, layer), self._pair(vb, layer - 1)))
        return out[0] if single else out

    def apply_L(self, v):
        vb, single, out = self._prep(v)
        L = self.part.L
        for layer in range(1, L):
            bottom = self._pair(vb, layer) if layer < L - 1 else None
            self._put(out, layer - 1, self.reflect_up(layer, self._pair(vb, layer - 1), bottom))
        return out[0] if single else out

    def apply_U(self, v):
        vb, single, out = self._prep(v)
        L = self.part.L
        for layer in range(L - 1):
            top = self._pair(vb, layer - 1) if layer > 0 else None
            self._put(out, layer, self.reflect_down(layer, top, self._pair(vb, layer)))
        return out[0] if single else out

    # -- inverses --------------------------------------------------------

    def downward_sweep(self, v):
        """Apply ``D_down^{-1}``: one dependent solve per layer ``1 .. L-2``."""
        vb, single, out = self._prep(v)
        L = self.part.L
        if L > 1:
            self._put(out, 0, (-vb[:, 0], -vb[:, 1]))
        for layer in range(1, L - 1):
            self._send(layer - 1, layer, "sweep_down", vb.shape[0])
            self._put(out, layer, self.down_step(layer, self._pair(out, layer - 1), self._pair(vb, layer)))
        return out[0] if single else out

    def upward_sweep(self, v):
        """Apply ``D_up^{-1}``: one dependent solve per layer ``L-2 .. 1``."""
        vb, single, out = self._prep(v)
        L = self.part.L
        if L > 1:
            self._put(out, L - 2, (-vb[:, 2 * (L - 2)], -vb[:, 2 * (L - 2) + 1]))
        for layer in range(L - 2, 0, -1):
            self._send(layer + 1, layer, "sweep_up", vb.shape[0])
            self._put(out, layer - 1, self.up_step(layer, self._pair(out, layer), self._pair(vb, layer - 1)))
        return out[0] if single else out

    # -- composite operators -------------------------------------------

    @staticmethod
    def split(x):
        x = np.asarray(x)
        half = x.shape[-3] // 2
        return x[..., :half, :, :], x[..., half:, :, :]

    @staticmethod
    def join(down, up):
        return np.concatenate([down, up], axis=-3)

    def apply_polarized(self, x):
        """``(D_down x_d + U x_u, D_up x_u + L x_d)`` on the stacked vector ``(x_d, x_u)``."""
        d, u = self.split(x)
        return self.join(self.apply_D_down(d) + self.apply_U(u), self.apply_D_up(u) + self.apply_L(d))

    def apply_preconditioner(self, x):
        """Block Gauss-Seidel: ``(D_down^{-1} x_d, D_up^{-1}(x_u - L D_down^{-1} x_d))``."""
        d, u = self.split(x)
        if self.fuse:
            yd, ly = self._sweep_with_reflections(d)
        else:
            yd = self.downward_sweep(d)
            ly = self.apply_L(yd)
        return self.join(yd, self.upward_sweep(u - ly))

    def _sweep_with_reflections(self, v):
        vb, single = _batched(v, self.part, self.stack.plane_shape)
        L = self.part.L
        out = np.zeros_like(vb, dtype=np.complex128)
        refl = np.zeros_like(out)
        if L > 1:
            self._put(out, 0, (-vb[:, 0], -vb[:, 1]))
        for layer in range(1, L):
            if layer < L - 1:
                self._send(layer - 1, layer, "sweep_down", vb.shape[0])
                self._put(out, layer, self.down_step(layer, self._pair(out, layer - 1), self._pair(vb, layer)))
                bottom = self._pair(out, layer)
            else:
                bottom = None
            self._put(refl, layer - 1, self.reflect_up(layer, self._pair(out, layer - 1), bottom))
        if single:
            return out[0], refl[0]
        return out, refl

    def polarized_rhs(self, v):
        """Polarized right-hand side from the local fields ``v`` of :meth:`SieSystem.local_fields`.

        The down part carries ``-v`` at planes ``(n, n+1)`` of layers
        ``0 .. L-2``; the up part ``-v`` at planes ``(0, 1)`` of layers
        ``1 .. L-1``.
        """
        part = self.part
        B = v[0][1].shape[0]
        shape = (B, part.n_traces) + self.stack.plane_shape
        down = np.zeros(shape, dtype=np.complex128)
        up = np.zeros(shape, dtype=np.complex128)
        for j in range(part.L - 1):
            n = part.thicknesses[j]
            down[:, 2 * j], down[:, 2 * j + 1] = -v[j][n], -v[j][n + 1]
            up[:, 2 * j], up[:, 2 * j + 1] = -v[j + 1][0], -v[j + 1][1]
        return self.join(down, up)

    def collapse(self, x):
        """Traces ``u = u_down + u_up`` of a polarized vector."""
        d, u = self.split(x)
        return d + u

    def solves_per_preconditioner(self):
        L = self.part.L
        if L < 2:
            return 0
        return 3 * L - 5


def check_pair(x, part, plane_shape):
    want = (2 * part.n_traces,) + tuple(plane_shape)
    if np.shape(x)[-3:] != want:
        raise ContractError(f"polarized vector of shape {np.shape(x)} does not conform to {want}")
