"""Surface integral equation on the layer interfaces.

Every layer operator ``H`` is only ever touched through a local solve with a
right-hand side built from delta-injected planes.  With ``W = -1/h**2`` (the
negated plane coupling of the stencil), the Green's representation of the
solution restricted to layer ``l`` reads

    u = H^{-1} [ f + W (d_1 u_0 - d_0 u_1 - d_{n+1} u_n + d_n u_{n+1}) ]

where ``d_k`` places a plane at local depth ``k``.  The two top terms form
the operator ``T(a, b) = H^{-1} W (d_1 a - d_0 b)`` and the two bottom terms
``B(c, d) = H^{-1} W (-d_{n+1} c + d_n d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .partition import dirac_scale, grf_weight


@dataclass
class LayerStack:
    """Partition, factorizations and the per-layer solve kernel."""

    part: object
    facts: list
    plane_shape: tuple
    h: float
    solves: list = field(default=None)

    def __post_init__(self):
        if len(self.facts) != self.part.L:
            raise ContractError(f"{len(self.facts)} factorizations for {self.part.L} layers")
        for i, f in enumerate(self.facts):
            want = self.plane_shape[0] * self.plane_shape[1] * self.part.local_nz(i)
            if f.size != want:
                raise ContractError(f"layer {i} factorization has size {f.size}, expected {want}")
        self.plane_shape = tuple(self.plane_shape)
        self.reset_counters()

    @property
    def L(self):
        return self.part.L

    def reset_counters(self):
        self.solves = [0] * self.part.L

    def layer_shape(self, layer):
        return self.plane_shape + (self.part.local_nz(layer),)

    def solve(self, layer, inject=(), extract=(), source=None, batch=None):
        """Local solve on ``layer`` with injected planes.

        ``inject`` is a sequence of ``(k, sign, planes)`` with planes shaped
        ``(B, Px, Py)``: each adds ``sign * W * delta_k(planes)``.  ``source``
        is an optional extended volume batch ``(Px, Py, Nz, B)``.  Returns
        ``{k: (B, Px, Py)}`` for every ``k`` in ``extract``, or the full
        solution volume ``(Px, Py, Nz, B)`` when ``extract`` is None.
        """
        shape = self.layer_shape(layer)
        if batch is None:
            if inject:
                batch = inject[0][2].shape[0]
            elif source is not None:
                batch = source.shape[-1]
            else:
                raise ContractError("batch size cannot be inferred")
        rhs = np.zeros(shape + (batch,), dtype=np.complex128)
        if source is not None:
            rhs += source
        w = grf_weight(self.h) * dirac_scale(self.h)
        for k, sign, planes in inject:
            z = self.part.z_index(layer, k)
            rhs[:, :, z, :] += (sign * w) * np.moveaxis(planes, 0, -1)
        x = self.facts[layer].solve(rhs.reshape(-1, batch))
        self.solves[layer] += batch
        x = x.reshape(shape + (batch,))
        if extract is None:
            return x
        return {k: np.moveaxis(x[:, :, self.part.z_index(layer, k), :], -1, 0) for k in extract}

    def top_bottom(self, layer, top=None, bottom=None, extract=(), source=None):
        """Apply ``T(top) + B(bottom)`` on ``layer`` (either pair may be None)."""
        n = self.part.thicknesses[layer]
        inject = []
        if top is not None:
            inject += [(1, 1.0, top[0]), (0, -1.0, top[1])]
        if bottom is not None:
            inject += [(n + 1, -1.0, bottom[0]), (n, 1.0, bottom[1])]
        return self.solve(layer, inject, extract, source=source)


def _batched(x, part, plane_shape):
    x = np.asarray(x)
    want = (part.n_traces,) + tuple(plane_shape)
    if x.shape == want:
        return x[None], True
    if x.ndim == 4 and x.shape[1:] == want:
        return x, False
    raise ContractError(f"trace array of shape {x.shape} does not conform to {want}")


class SieSystem:
    """Matrix-free interface system ``M u = f`` for a layer stack."""

    def __init__(self, stack):
        self.stack = stack
        self.part = stack.part

    def split_source(self, f):
        """Partition a bulk source batch ``(B, nx, ny, nz)`` into extended layer volumes."""
        part, a = self.part, self.part.alpha
        out = []
        for layer in range(part.L):
            z0 = part.offsets[layer]
            slab = f[:, :, :, z0:z0 + part.thicknesses[layer]]
            ext = np.zeros((f.shape[0],) + self.stack.layer_shape(layer), dtype=np.complex128)
            ext[:, a:a + f.shape[1], a:a + f.shape[2], a:a + slab.shape[3]] = slab
            out.append(np.moveaxis(ext, 0, -1))
        return out

    def _source_batch(self, f):
        f = np.asarray(f)
        nx = self.stack.plane_shape[0] - 2 * self.part.alpha
        ny = self.stack.plane_shape[1] - 2 * self.part.alpha
        want = (nx, ny, self.part.nz)
        if f.shape == want:
            return f[None], True
        if f.ndim == 4 and f.shape[1:] == want:
            return f, False
        raise ContractError(f"source of shape {f.shape} does not match bulk grid {want}")

    def local_fields(self, f):
        """``(sources, v)`` with ``v[l] = H_l^{-1} f_l`` at planes ``0, 1, n, n+1``.

        Layers without source skip the solve: their ``v`` is zero.
        """
        fb, _ = self._source_batch(f)
        sources = self.split_source(fb)
        B = fb.shape[0]
        v = []
        for layer, src in enumerate(sources):
            n = self.part.thicknesses[layer]
            ks = (0, 1, n, n + 1)
            if not np.any(src):
                zero = np.zeros((B,) + self.stack.plane_shape, dtype=np.complex128)
                v.append({k: zero for k in ks})
            else:
                v.append(self.stack.solve(layer, (), ks, source=src))
        return sources, v

    def rhs_from_local(self, v):
        """Interface right-hand side ``f = -(v planes)`` in trace ordering."""
        part = self.part
        B = v[0][1].shape[0]
        out = np.zeros((B, part.n_traces) + self.stack.plane_shape, dtype=np.complex128)
        for j in range(part.L - 1):
            out[:, 2 * j] = -v[j][part.thicknesses[j]]
            out[:, 2 * j + 1] = -v[j + 1][1]
        return out

    def build_rhs(self, f):
        """Return ``(f_traces, sources)``; the sources are kept for :meth:`reconstruct`."""
        fb, single = self._source_batch(f)
        sources, v = self.local_fields(fb)
        rhs = self.rhs_from_local(v)
        return (rhs[0] if single else rhs), sources

    def apply_M(self, u):
        ub, single = _batched(u, self.part, self.stack.plane_shape)
        out = np.zeros_like(ub, dtype=np.complex128)
        part = self.part
        for layer in range(part.L):
            n = part.thicknesses[layer]
            top = bottom = None
            ks = []
            if layer > 0:
                j = layer - 1
                top = (ub[:, 2 * j], ub[:, 2 * j + 1])
                ks.append(1)
            if layer < part.L - 1:
                bottom = (ub[:, 2 * layer], ub[:, 2 * layer + 1])
                ks.append(n)
            if not ks:
                continue
            w = self.stack.top_bottom(layer, top, bottom, extract=ks)
            if layer > 0:
                out[:, 2 * (layer - 1) + 1] = w[1] - ub[:, 2 * (layer - 1) + 1]
            if layer < part.L - 1:
                out[:, 2 * layer] = w[n] - ub[:, 2 * layer]
        return out[0] if single else out

    def reconstruct(self, u, sources):
        """Bulk volume ``(nx, ny, nz)`` (or a batch) from interface traces and kept sources."""
        ub, single = _batched(u, self.part, self.stack.plane_shape)
        part, a = self.part, self.part.alpha
        Px, Py = self.stack.plane_shape
        B = ub.shape[0]
        vol = np.zeros((B, Px - 2 * a, Py - 2 * a, part.nz), dtype=np.complex128)
        for layer in range(part.L):
            top = bottom = None
            if layer > 0:
                j = layer - 1
                top = (ub[:, 2 * j], ub[:, 2 * j + 1])
            if layer < part.L - 1:
                bottom = (ub[:, 2 * layer], ub[:, 2 * layer + 1])
            x = self.stack.top_bottom(layer, top, bottom, extract=None, source=sources[layer])
            z0, n = part.offsets[layer], part.thicknesses[layer]
            vol[:, :, :, z0:z0 + n] = np.moveaxis(x[a:Px - a, a:Py - a, a:a + n, :], -1, 0)
        return vol[0] if single else vol
