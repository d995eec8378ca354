"""Finite-difference Helmholtz operators with complex-stretched PML.

Grid conventions
----------------
Bulk nodes along an axis with ``n`` points sit at ``x_i = i*h`` for
``i = 1..n``, so the physical interval is ``[0, (n+1)h]``.  The PML adds
``alpha`` nodes on each side (``i = 1-alpha..0`` and ``n+1..n+alpha``) and
the stretched interval is ``[-delta, L + delta]`` with ``delta = alpha*h``.
Homogeneous Dirichlet conditions close the extended box.  The node just
outside the bulk (``i = 0`` or ``n+1``) sits on the PML interface where the
profile vanishes, so the couplings between the bulk and the first PML plane
are the unstretched ``1/h**2``.

Arrays are indexed ``[ix, iy, iz]`` and flattened in C order (z fastest).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, InvalidPartitionError, ResourceError

#: default absorption strength; see the README for how it was chosen
DEFAULT_PML_STRENGTH = 60.0
DEFAULT_PML_POINTS = 10


@dataclass(frozen=True)
class VelocityModel:
    """Squared slowness ``m = 1/c**2`` sampled on a regular grid."""

    m: np.ndarray
    h: float

    def __post_init__(self):
        m = np.ascontiguousarray(self.m, dtype=np.float64)
        if m.ndim != 3 or min(m.shape) < 1:
            raise ContractError(f"squared slowness must be a non-empty 3D array, got shape {m.shape}")
        if not np.all(np.isfinite(m)) or not np.all(m > 0):
            raise ContractError("squared slowness must be finite and strictly positive")
        if not self.h > 0:
            raise ContractError(f"grid spacing must be positive, got {self.h}")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def from_velocity(cls, c, h):
        c = np.asarray(c, dtype=np.float64)
        return cls(1.0 / c**2, h)

    @property
    def shape(self):
        return self.m.shape

    @property
    def nx(self):
        return self.m.shape[0]

    @property
    def ny(self):
        return self.m.shape[1]

    @property
    def nz(self):
        return self.m.shape[2]

    @property
    def velocity(self):
        return 1.0 / np.sqrt(self.m)

    @property
    def c_min(self):
        return float(1.0 / np.sqrt(self.m.max()))

    def fingerprint(self):
        """Short content hash used as a cache key."""
        import hashlib

        digest = hashlib.sha1(self.m.tobytes())
        digest.update(np.float64(self.h).tobytes())
        digest.update(np.asarray(self.m.shape, dtype=np.int64).tobytes())
        return digest.hexdigest()[:16]

    def save(self, path):
        """Write ``path`` (JSON sidecar) and ``path`` with ``.bin`` suffix."""
        path = Path(path)
        raw = path.with_suffix(".bin")
        meta = {"nx": self.nx, "ny": self.ny, "nz": self.nz, "h": self.h,
                "dtype": "<f8", "order": "z-fastest", "quantity": "squared_slowness",
                "data": raw.name}
        path.write_text(json.dumps(meta, indent=2))
        self.m.astype("<f8").tofile(raw)
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(path.read_text())
        raw = path.parent / meta.get("data", path.with_suffix(".bin").name)
        shape = (int(meta["nx"]), int(meta["ny"]), int(meta["nz"]))
        data = np.fromfile(raw, dtype="<f8")
        if data.size != np.prod(shape):
            raise ContractError(f"{raw} holds {data.size} values, expected {np.prod(shape)}")
        values = data.reshape(shape)
        if meta.get("quantity", "squared_slowness") == "velocity":
            values = 1.0 / values**2
        return cls(values, float(meta["h"]))


@dataclass(frozen=True)
class PmlConfig:
    """PML thickness ``alpha`` (grid points) and strength ``C``."""

    alpha: int = DEFAULT_PML_POINTS
    C: float = DEFAULT_PML_STRENGTH

    def __post_init__(self):
        if int(self.alpha) != self.alpha or self.alpha < 1:
            raise ContractError(f"alpha must be a positive integer, got {self.alpha}")
        if self.C < 0:
            raise ContractError(f"C must be non-negative, got {self.C}")

    def delta(self, h):
        return self.alpha * h

    @classmethod
    def log_scaled(cls, n, base_points=DEFAULT_PML_POINTS, base_n=50, C=DEFAULT_PML_STRENGTH):
        """Thickness growing like ``log n``, anchored at ``base_points`` for ``base_n``."""
        alpha = max(1, int(round(base_points * np.log(n) / np.log(base_n))))
        return cls(alpha, C)


def pml_profile(x, axis_length, pml, h, omega):
    """Complex stretch factor ``1/(1 + i sigma(x)/omega)`` at coordinates ``x``.

    ``sigma`` vanishes on ``[0, axis_length]`` and grows quadratically to
    ``C/delta`` at distance ``delta`` outside it.
    """
    x = np.asarray(x, dtype=np.float64)
    delta = pml.delta(h)
    dist = np.where(x < 0, -x, np.where(x > axis_length, x - axis_length, 0.0))
    sigma = pml.C / delta * (dist / delta) ** 2
    return 1.0 / (1.0 + 1j * sigma / omega)


def second_difference(n, pml, h, omega):
    """1D stretched operator ``beta d/dx (beta d/dx)`` on ``n + 2 alpha`` nodes."""
    a = pml.alpha
    size = n + 2 * a
    length = (n + 1) * h
    nodes = (np.arange(size) - a + 1) * h
    beta = pml_profile(nodes, length, pml, h, omega)
    # beta_half[p] is sampled at nodes[p] - h/2; one extra entry closes the right end
    halves = np.concatenate([nodes - 0.5 * h, [nodes[-1] + 0.5 * h]])
    beta_half = pml_profile(halves, length, pml, h, omega)
    inv_h2 = 1.0 / h**2
    lower = beta[1:] * beta_half[1:size] * inv_h2
    upper = beta[:-1] * beta_half[1:size] * inv_h2
    diag = -beta * (beta_half[:size] + beta_half[1:]) * inv_h2
    return sp.diags([lower, diag, upper], [-1, 0, 1], shape=(size, size), format="csr", dtype=np.complex128)


@dataclass(frozen=True, eq=False)
class StretchedOperator:
    """Assembled extended-domain Helmholtz matrix ``H = Lap_beta + omega^2 m``."""

    matrix: sp.csr_matrix
    shape: tuple
    omega: float
    h: float
    alpha: int
    bulk_z: tuple = field(default=(0, 0))
    layer: int | None = None

    @property
    def size(self):
        return self.matrix.shape[0]

    def grid_index(self, flat):
        """Map flat indices to ``(i, j, k)`` on the extended grid."""
        return np.unravel_index(flat, self.shape)

    def fingerprint(self):
        import hashlib

        A = self.matrix
        digest = hashlib.sha1(A.indptr.tobytes())
        digest.update(A.indices.tobytes())
        digest.update(A.data.tobytes())
        digest.update(np.asarray(self.shape, dtype=np.int64).tobytes())
        return digest.hexdigest()


def _assemble(m_ext, counts, pml, h, omega, max_dof):
    Nx, Ny, Nz = m_ext.shape
    if max_dof is not None and Nx * Ny * Nz > max_dof:
        raise ResourceError(f"operator with {Nx * Ny * Nz} unknowns exceeds cap {max_dof}")
    Dx = second_difference(counts[0], pml, h, omega)
    Dy = second_difference(counts[1], pml, h, omega)
    Dz = second_difference(counts[2], pml, h, omega)
    Ix, Iy, Iz = (sp.identity(k, dtype=np.complex128, format="csr") for k in (Nx, Ny, Nz))
    lap = sp.kron(sp.kron(Dx, Iy), Iz) + sp.kron(sp.kron(Ix, Dy), Iz) + sp.kron(Ix, sp.kron(Iy, Dz))
    H = (lap + sp.diags(omega**2 * m_ext.ravel())).tocsr()
    H.sort_indices()
    return H


def extend_model(m, alpha):
    """Pad ``m`` by ``alpha`` nodes per face, replicating the nearest bulk value."""
    return np.pad(m, alpha, mode="edge")


def discretize_global(model, omega, pml, max_dof=None):
    """Operator on the whole extended box with PML on all six faces."""
    if not omega > 0:
        raise ContractError("omega must be positive")
    a = pml.alpha
    m_ext = extend_model(model.m, a)
    try:
        H = _assemble(m_ext, model.shape, pml, model.h, omega, max_dof)
    except MemoryError as exc:
        if isinstance(exc, ResourceError):
            raise
        raise ResourceError(f"could not allocate global operator: {exc}") from exc
    return StretchedOperator(H, m_ext.shape, omega, model.h, a, bulk_z=(0, model.nz))


def discretize_local(model, omega, pml, z_start, thickness, layer=None, max_dof=None):
    """Operator for the slab of bulk planes ``z_start .. z_start+thickness-1``.

    The x/y faces carry the global PML; both z faces get a fresh PML of
    ``alpha`` planes into which the slab's own boundary planes of ``m`` are
    replicated.
    """
    if not omega > 0:
        raise ContractError("omega must be positive")
    if thickness < 1:
        raise InvalidPartitionError(f"layer thickness must be at least one plane, got {thickness}")
    if z_start < 0 or z_start + thickness > model.nz:
        raise InvalidPartitionError(
            f"layer planes [{z_start}, {z_start + thickness}) fall outside [0, {model.nz})")
    a = pml.alpha
    m_slab = model.m[:, :, z_start:z_start + thickness]
    m_ext = extend_model(m_slab, a)
    counts = (model.nx, model.ny, thickness)
    try:
        H = _assemble(m_ext, counts, pml, model.h, omega, max_dof)
    except MemoryError as exc:
        if isinstance(exc, ResourceError):
            raise
        raise ResourceError(f"could not allocate local operator: {exc}") from exc
    return StretchedOperator(H, m_ext.shape, omega, model.h, a, bulk_z=(z_start, z_start + thickness), layer=layer)


def bulk_view(volume, alpha, shape_ext):
    """Strip the PML from an extended volume (flat or shaped)."""
    v = np.asarray(volume).reshape(shape_ext)
    a = alpha
    return v[a:shape_ext[0] - a, a:shape_ext[1] - a, a:shape_ext[2] - a]


def frequency_for_ppw(model, ppw):
    """Angular frequency giving ``ppw`` points per wavelength at the slowest velocity."""
    return 2.0 * np.pi * model.c_min / (ppw * model.h)
