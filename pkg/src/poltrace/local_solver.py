"""Sparse direct factorization of the per-layer operators.

The elimination order is a geometric nested dissection of the extended
layer grid; SuperLU then factors the symmetrically permuted matrix with
static (diagonal) pivoting so that the factors and every solve are fully
deterministic.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .errors import ContractError, FactorizationError, ResourceError

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


def nested_dissection(shape, leaf=64):
    """Nested-dissection ordering of a structured grid (C order, z fastest).

    The box is bisected recursively across its longest axis by a one-plane
    separator which is numbered after both halves.  Boxes with at most
    ``leaf`` nodes are numbered in natural order.
    """
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    order = []

    def visit(lo, hi):
        dims = [b - a for a, b in zip(lo, hi)]
        if min(dims) <= 0:
            return
        sub = idx[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
        if sub.size <= leaf or max(dims) <= 2:
            order.append(sub.ravel())
            return
        ax = int(np.argmax(dims))
        mid = lo[ax] + dims[ax] // 2
        hi_left = list(hi)
        hi_left[ax] = mid
        lo_right = list(lo)
        lo_right[ax] = mid + 1
        visit(lo, hi_left)
        visit(lo_right, hi)
        sep_lo = list(lo)
        sep_hi = list(hi)
        sep_lo[ax], sep_hi[ax] = mid, mid + 1
        order.append(idx[sep_lo[0]:sep_hi[0], sep_lo[1]:sep_hi[1], sep_lo[2]:sep_hi[2]].ravel())

    visit([0, 0, 0], list(shape))
    return np.concatenate(order)


def estimate_factor_entries(shape, leaf=64):
    """Multifrontal estimate of the stored factor entries under nested dissection."""
    total = 0

    def boundary(lo, hi):
        b = 0
        for ax in range(3):
            area = 1
            for other in range(3):
                if other != ax:
                    area *= hi[other] - lo[other]
            b += area * ((lo[ax] > 0) + (hi[ax] < shape[ax]))
        return b

    def visit(lo, hi):
        nonlocal total
        dims = [b - a for a, b in zip(lo, hi)]
        size = int(np.prod(dims))
        if size <= 0:
            return
        if size <= leaf or max(dims) <= 2:
            sep = size
        else:
            ax = int(np.argmax(dims))
            mid = lo[ax] + dims[ax] // 2
            hi_left = list(hi)
            hi_left[ax] = mid
            lo_right = list(lo)
            lo_right[ax] = mid + 1
            visit(lo, hi_left)
            visit(lo_right, hi)
            sep = size // dims[ax]
        total += sep * sep + 2 * sep * boundary(lo, hi)

    visit([0, 0, 0], list(shape))
    return total


def available_memory_bytes():
    """``MemAvailable`` from ``/proc/meminfo``, or None where that is not readable."""
    try:
        with open("/proc/meminfo") as fh:
            for line in fh:
                if line.startswith("MemAvailable:"):
                    return int(line.split()[1]) * 1024
    except OSError:  # pragma: no cover
        pass
    return None


@dataclass(eq=False)
class LocalFactorization:
    """Permuted sparse LU factors of one layer operator."""

    perm: np.ndarray
    lu: object
    layer: int | None
    shape: tuple
    nnz: int
    factor_seconds: float
    solves: int = field(default=0)

    @property
    def size(self):
        return self.perm.size

    def solve(self, rhs):
        """Solve ``H x = rhs`` for one (``(N,)``) or several (``(N, k)``) right-hand sides."""
        b = np.asarray(rhs)
        if b.shape[0] != self.size or b.ndim > 2:
            raise ContractError(f"right-hand side of shape {b.shape} does not match operator size {self.size}")
        bp = np.ascontiguousarray(b[self.perm], dtype=np.complex128)
        xp = self.lu.solve(bp)
        x = np.empty_like(xp)
        x[self.perm] = xp
        self.solves += 1 if b.ndim == 1 else b.shape[1]
        return x


def factorize(op, layer=None, check=True, leaf=64, memory_cap=None, rng_seed=0):
    """Factor a :class:`StretchedOperator` and verify the factors on a random probe."""
    shape = op.shape
    if memory_cap is not None:
        need = 16 * estimate_factor_entries(shape, leaf)
        if need > memory_cap:
            raise ResourceError(
                f"layer {layer}: factors of grid {shape} need about {need / 2**30:.2f} GiB, "
                f"cap is {memory_cap / 2**30:.2f} GiB")
    perm = nested_dissection(shape, leaf)
    A = op.matrix[perm][:, perm].tocsc()
    t0 = time.perf_counter()
    try:
        lu = spla.splu(A, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise FactorizationError(f"layer {layer}: {exc}", layer=layer) from exc
    except MemoryError as exc:
        raise ResourceError(f"layer {layer}: out of memory while factoring grid {shape}") from exc
    seconds = time.perf_counter() - t0
    fact = LocalFactorization(perm, lu, layer, tuple(shape), int(lu.nnz), seconds)
    if check:
        rng = np.random.default_rng(rng_seed)
        e = rng.standard_normal(op.size) + 1j * rng.standard_normal(op.size)
        b = op.matrix @ e
        x = fact.solve(b)
        fact.solves = 0
        res = np.linalg.norm(op.matrix @ x - b) / np.linalg.norm(b)
        if not np.isfinite(res) or res > RESIDUAL_TOL:
            raise FactorizationError(f"layer {layer}: residual check failed ({res:.2e})", layer=layer)
    log.debug("layer %s: factored %s unknowns in %.2fs (%d nonzeros)", layer, op.size, seconds, fact.nnz)
    return fact


def factorize_all(ops, dedupe=True, memory_cap=None, **kwargs):
    """Factor every layer operator; bitwise-identical operators share one factorization."""
    facts = []
    seen = {}
    for i, op in enumerate(ops):
        key = op.fingerprint() if dedupe else None
        if key is not None and key in seen:
            facts.append(seen[key])
            continue
        fact = factorize(op, layer=i, memory_cap=memory_cap, **kwargs)
        if memory_cap is not None:
            memory_cap -= 16 * fact.nnz
        facts.append(fact)
        if key is not None:
            seen[key] = fact
    return facts


def local_solve(fact, rhs):
    return fact.solve(rhs)
