"""Layered z-decomposition, trace planes and the numerical Dirac delta.

Layers are numbered from 0 in code.  Within a layer, depth indices follow
the usual local numbering: planes ``1..n`` are the layer's bulk planes,
``0`` and ``n+1`` are the first PML planes above and below it.  In the
global grid those two planes coincide with the last bulk plane of the
layer above and the first bulk plane of the layer below.

Trace vectors hold full extended planes (x/y PML columns included), shape
``(2*(L-1), Px, Py)``.  Entries ``2j`` and ``2j+1`` are the two global planes
straddling interface ``j`` (between layers ``j`` and ``j+1``): the bottom
bulk plane of layer ``j`` and the top bulk plane of layer ``j+1``.  The
down-going and up-going polarized components use the same layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, InvalidPartitionError


@dataclass(frozen=True)
class LayerPartition:
    thicknesses: tuple
    alpha: int

    def __post_init__(self):
        t = tuple(int(x) for x in self.thicknesses)
        if len(t) < 1:
            raise InvalidPartitionError("at least one layer is required")
        if len(t) > 1 and min(t) < 2:
            raise InvalidPartitionError(f"every layer needs at least 2 planes, got {t}")
        if min(t) < 1:
            raise InvalidPartitionError(f"layer thicknesses must be positive, got {t}")
        object.__setattr__(self, "thicknesses", t)

    @property
    def L(self):
        return len(self.thicknesses)

    @property
    def nz(self):
        return sum(self.thicknesses)

    @property
    def offsets(self):
        return tuple(int(x) for x in np.concatenate([[0], np.cumsum(self.thicknesses)[:-1]]))

    @property
    def n_traces(self):
        return 2 * (self.L - 1)

    def local_nz(self, layer):
        return self.thicknesses[layer] + 2 * self.alpha

    def z_index(self, layer, k):
        """Array index along z of local depth ``k`` in the layer's extended grid."""
        n = self.thicknesses[layer]
        if k not in (0, 1, n, n + 1):
            raise IndexError(f"local depth {k} is not one of 0, 1, {n}, {n + 1} for layer {layer}")
        return k + self.alpha - 1

    def global_plane(self, layer, k):
        """Bulk z index (0-based) of local depth ``k`` of ``layer``."""
        return self.offsets[layer] + k - 1


def make_partition(nz, L, alpha):
    """Split ``nz`` planes into ``L`` layers whose thicknesses differ by at most one."""
    if L < 1:
        raise InvalidPartitionError(f"layer count must be positive, got {L}")
    if L > 1 and nz < 2 * L:
        raise InvalidPartitionError(f"{nz} planes cannot form {L} layers of at least 2 planes")
    base, extra = divmod(nz, L)
    return LayerPartition(tuple(base + (1 if i < extra else 0) for i in range(L)), alpha)


def dirac_scale(h):
    """Weight of the numerical Dirac delta on a constant-z plane."""
    return 1.0 / h**3


def grf_weight(h):
    """Factor turning a delta-injected trace into the stencil's plane coupling.

    Adjacent planes of the 7-point operator are coupled by ``+1/h**2``; the
    Green's representation needs the negated coupling, i.e. ``-h`` times the
    ``1/h**3`` delta.
    """
    return -h


def extract_plane(volume, part, layer, k, plane_shape):
    """Copy the extended plane at local depth ``k`` from a layer volume."""
    Px, Py = plane_shape
    Nz = part.local_nz(layer)
    v = np.asarray(volume)
    if v.size != Px * Py * Nz:
        raise ContractError(f"volume of size {v.size} does not match layer {layer} grid {(Px, Py, Nz)}")
    return v.reshape(Px, Py, Nz)[:, :, part.z_index(layer, k)].copy()


def inject_delta(plane, k, part, layer, h, out=None, weight=1.0):
    """Add ``weight * plane / h**3`` at local depth ``k``; returns the flat volume."""
    plane = np.asarray(plane)
    Px, Py = plane.shape[:2]
    Nz = part.local_nz(layer)
    if out is None:
        out = np.zeros(Px * Py * Nz, dtype=np.complex128)
    elif out.size != Px * Py * Nz:
        raise ContractError(f"output of size {out.size} does not match layer {layer} grid")
    vol = out.reshape(Px, Py, Nz)
    vol[:, :, part.z_index(layer, k)] += (weight * dirac_scale(h)) * plane
    return out


def empty_traces(part, plane_shape, batch=None):
    shape = (part.n_traces,) + tuple(plane_shape)
    if batch is not None:
        shape = (batch,) + shape
    return np.zeros(shape, dtype=np.complex128)


def layer_planes(traces, part):
    """Split a trace vector into ``{(layer, k): plane}`` for the planes each layer owns."""
    traces = np.asarray(traces)
    if traces.shape[0] != part.n_traces:
        raise ContractError(f"expected {part.n_traces} trace planes, got {traces.shape[0]}")
    out = {}
    for j in range(part.L - 1):
        out[(j, part.thicknesses[j])] = traces[2 * j]
        out[(j + 1, 1)] = traces[2 * j + 1]
    return out


def gather_planes(planes, part, plane_shape):
    """Inverse of :func:`layer_planes`."""
    traces = empty_traces(part, plane_shape)
    for j in range(part.L - 1):
        traces[2 * j] = planes[(j, part.thicknesses[j])]
        traces[2 * j + 1] = planes[(j + 1, 1)]
    return traces


def restrict_to_interfaces(volume_ext, part, alpha):
    """Trace vector of a global extended volume, shaped ``(Px, Py, Nz)``."""
    planes = []
    for j in range(part.L - 1):
        z_bottom = part.offsets[j] + part.thicknesses[j] - 1
        planes.append(volume_ext[:, :, alpha + z_bottom])
        planes.append(volume_ext[:, :, alpha + z_bottom + 1])
    return np.array(planes, dtype=np.complex128)
