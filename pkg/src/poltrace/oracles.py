"""Reference solutions and benchmark media, independent of the layered solver."""

from __future__ import annotations

import numpy as np
import scipy.sparse.linalg as spla
from scipy.ndimage import gaussian_filter

from .discretization import VelocityModel, bulk_view, discretize_global
from .errors import ContractError, ResourceError

GLOBAL_DOF_CAP = 64**3
PROBE_DOF_CAP = 4096


def global_direct_solve(model, omega, pml, f, max_dof=GLOBAL_DOF_CAP, return_extended=False):
    """Monolithic sparse LU solve of the global extended system.

    ``f`` is a bulk source volume; it is zero-padded into the PML.  Uses
    SuperLU with its default column ordering and partial pivoting, so it
    shares nothing with the layer factorizations beyond the operator.
    """
    f = np.asarray(f, dtype=np.complex128)
    if f.shape != model.shape:
        raise ContractError(f"source of shape {f.shape} does not match model {model.shape}")
    size = int(np.prod([s + 2 * pml.alpha for s in model.shape]))
    if size > max_dof:
        raise ResourceError(f"global system with {size} unknowns exceeds the oracle cap {max_dof}")
    op = discretize_global(model, omega, pml)
    rhs = np.pad(f, pml.alpha).ravel()
    if not np.any(rhs):
        u = np.zeros_like(rhs)
    else:
        lu = spla.splu(op.matrix.tocsc())
        u = lu.solve(rhs)
        res = np.linalg.norm(op.matrix @ u - rhs) / np.linalg.norm(rhs)
        if res > 1e-10:
            raise ArithmeticError(f"global direct solve residual {res:.2e} exceeds 1e-10")
    u = u.reshape(op.shape)
    if return_extended:
        return u
    return np.array(bulk_view(u, pml.alpha, op.shape))


def analytic_green_homogeneous(receiver, source, omega, c):
    """Free-space kernel ``exp(i omega r / c) / (4 pi r)``."""
    r = np.linalg.norm(np.asarray(receiver, dtype=float) - np.asarray(source, dtype=float), axis=-1)
    if np.any(r == 0):
        raise ValueError("receiver coincides with the source")
    return np.exp(1j * omega * r / c) / (4 * np.pi * r)


def probe_operator(apply, shape, max_dof=PROBE_DOF_CAP, dtype=np.complex128):
    """Dense matrix of a linear closure acting on arrays of ``shape``.

    Column ``j`` is ``apply(e_j)``.  Refuses more than ``max_dof`` unknowns.
    """
    size = int(np.prod(shape))
    if size > max_dof:
        raise ResourceError(f"probing {size} unknowns exceeds the cap {max_dof}")
    cols = []
    for j in range(size):
        e = np.zeros(size, dtype=dtype)
        e[j] = 1.0
        out = np.asarray(apply(e.reshape(shape)))
        cols.append(out.ravel())
    if not cols:
        return np.zeros((0, 0), dtype=dtype)
    return np.array(cols).T


def make_benchmark_model(kind, n, seed=0, shape=None):
    """Benchmark media on the unit cube, ``h = 1/(n+1)``.

    ``homogeneous``: ``c = 1``.  ``smooth_random``: a seeded Gaussian field
    smoothed with a 2.5-point kernel and mapped onto ``c`` in ``[1, 2]``.
    ``fault``: ``c = 1`` above and ``c = 1.5`` below a plane dipping 20
    degrees along x.
    """
    if n < 8:
        raise ContractError(f"benchmark models need n >= 8, got {n}")
    shape = tuple(shape) if shape is not None else (n, n, n)
    h = 1.0 / (n + 1)
    if kind == "homogeneous":
        c = np.ones(shape)
    elif kind == "smooth_random":
        rng = np.random.default_rng(seed)
        field = gaussian_filter(rng.standard_normal(shape), sigma=2.5, mode="reflect")
        lo, hi = field.min(), field.max()
        c = 1.0 + (field - lo) / (hi - lo)
    elif kind == "fault":
        x = (np.arange(shape[0]) + 1) * h
        z = (np.arange(shape[2]) + 1) * h
        depth = 0.45 + np.tan(np.radians(20.0)) * (x - 0.5)
        below = z[None, None, :] > depth[:, None, None]
        c = np.where(np.broadcast_to(below, shape), 1.5, 1.0)
    else:
        raise ContractError(f"unknown model kind {kind!r}")
    return VelocityModel.from_velocity(c, h)


def point_source(model, index, amplitude=1.0):
    """Bulk volume with ``amplitude / h**3`` at grid ``index`` (0-based bulk indices)."""
    f = np.zeros(model.shape, dtype=np.complex128)
    f[tuple(index)] = amplitude / model.h**3
    return f
