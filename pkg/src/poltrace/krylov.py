"""GMRES on the preconditioned polarized system and the end-to-end solver."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .discretization import PmlConfig, discretize_local
from .errors import ContractError
from .local_solver import available_memory_bytes, factorize_all
from .partition import make_partition
from .polarized import PolarizedOperator
from .sie import LayerStack, SieSystem

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-7


@dataclass
class SolveReport:
    iterations: int = 0
    residuals: list = field(default_factory=list)
    true_residual: float | None = None
    converged: bool = False
    tol: float = DEFAULT_TOL
    timings: dict = field(default_factory=dict)
    local_solves: int = 0
    messages: int = 0
    preconditioned: bool = True

    def to_dict(self):
        return asdict(self)


class GmresState:
    """Unrestarted GMRES with modified Gram-Schmidt and Givens rotations.

    The state is driven from outside: :attr:`vector` is the next Krylov
    vector to which the (preconditioned) operator must be applied, and
    :meth:`update` takes the result.  This lets several right-hand sides
    advance in lockstep through one batched operator application.
    """

    def __init__(self, rhs, tol=DEFAULT_TOL, max_iter=50):
        if not 0 < tol < 1:
            raise ContractError(f"tol must lie in (0, 1), got {tol}")
        rhs = np.asarray(rhs, dtype=np.complex128)
        if not np.all(np.isfinite(rhs)):
            raise ContractError("right-hand side is not finite")
        self.shape = rhs.shape
        self.tol = tol
        self.max_iter = int(max_iter)
        self.beta = float(np.linalg.norm(rhs))
        self.basis = []
        self.hess = np.zeros((self.max_iter + 1, self.max_iter), dtype=np.complex128)
        self.cs = np.zeros(self.max_iter, dtype=np.complex128)
        self.sn = np.zeros(self.max_iter, dtype=np.complex128)
        self.g = np.zeros(self.max_iter + 1, dtype=np.complex128)
        self.residuals = [1.0]
        self.iterations = 0
        self.converged = False
        self.done = False
        if self.beta == 0.0:
            self.residuals = [0.0]
            self.converged = True
            self.done = True
            return
        self.g[0] = self.beta
        self.basis.append(rhs.ravel() / self.beta)
        if self.max_iter == 0:
            self.done = True

    @property
    def vector(self):
        return self.basis[-1].reshape(self.shape)

    def update(self, w):
        k = self.iterations
        w = np.array(w, dtype=np.complex128).ravel()
        H = self.hess
        for i, v in enumerate(self.basis):
            H[i, k] = np.vdot(v, w)
            w -= H[i, k] * v
        H[k + 1, k] = np.linalg.norm(w)
        for i in range(k):
            a, b = H[i, k], H[i + 1, k]
            H[i, k] = np.conj(self.cs[i]) * a + np.conj(self.sn[i]) * b
            H[i + 1, k] = -self.sn[i] * a + self.cs[i] * b
        a, b = H[k, k], H[k + 1, k]
        r = np.hypot(abs(a), abs(b))
        if r == 0.0:
            self.cs[k], self.sn[k] = 1.0, 0.0
        else:
            self.cs[k], self.sn[k] = a / r, b / r
        H[k, k] = r
        H[k + 1, k] = 0.0
        self.g[k + 1] = -self.sn[k] * self.g[k]
        self.g[k] = np.conj(self.cs[k]) * self.g[k]
        self.iterations = k + 1
        res = abs(self.g[k + 1]) / self.beta
        self.residuals.append(float(res))
        breakdown = abs(b) <= 1e-14 * max(r, 1e-300)
        if res <= self.tol or breakdown:
            self.converged = bool(res <= self.tol or breakdown)
            self.done = True
        elif self.iterations >= self.max_iter:
            self.done = True
        if not self.done:
            self.basis.append(w / abs(b))

    def solution(self):
        k = self.iterations
        if k == 0:
            return np.zeros(self.shape, dtype=np.complex128)
        R = self.hess[:k, :k]
        y = np.zeros(k, dtype=np.complex128)
        for i in range(k - 1, -1, -1):
            y[i] = (self.g[i] - R[i, i + 1:k] @ y[i + 1:k]) / R[i, i]
        x = np.zeros(self.basis[0].size, dtype=np.complex128)
        for i in range(k):
            x += y[i] * self.basis[i]
        return x.reshape(self.shape)


def run_lockstep(states, apply_batch):
    """Advance several :class:`GmresState` objects together.

    ``apply_batch`` maps a stacked array of Krylov vectors (one per active
    state, leading axis) to the operator outputs.
    """
    while True:
        active = [s for s in states if not s.done]
        if not active:
            return
        out = apply_batch(np.stack([s.vector for s in active]))
        for s, w in zip(active, out):
            s.update(w)


def gmres(apply, rhs, precond=None, tol=DEFAULT_TOL, max_iter=50):
    """Solve ``precond(apply(x)) = precond(rhs)`` and report the preconditioned residuals."""
    rhs = np.asarray(rhs, dtype=np.complex128)
    t0 = time.perf_counter()
    b = rhs if precond is None else precond(rhs)
    state = GmresState(b, tol, max_iter)
    if precond is None:
        run_lockstep([state], lambda v: np.stack([apply(x) for x in v]))
    else:
        run_lockstep([state], lambda v: np.stack([precond(apply(x)) for x in v]))
    x = state.solution()
    nb = np.linalg.norm(rhs)
    true = 0.0 if nb == 0 else float(np.linalg.norm(rhs - apply(x)) / nb)
    report = SolveReport(state.iterations, state.residuals, true, state.converged, tol,
                         {"gmres": time.perf_counter() - t0}, preconditioned=precond is not None)
    return x, report


@dataclass
class SolverConfig:
    layers: int | None = None
    pml: PmlConfig = field(default_factory=PmlConfig)
    tol: float = DEFAULT_TOL
    max_iter: int = 50
    preconditioned: bool = True
    fuse: bool = False
    dedupe: bool = True
    memory_cap: int | None = None

    def layer_count(self, nz):
        if self.layers is not None:
            return int(self.layers)
        return max(1, nz // 10)


class HelmholtzSolver:
    """Offline factorizations plus the online polarized-traces solve.

    Construction partitions the model, assembles every layer operator and
    factors it once.  :meth:`solve` then handles any number of sources.
    """

    def __init__(self, model, omega, config=None, log=None):
        self.config = config or SolverConfig()
        self.model = model
        self.omega = float(omega)
        pml = self.config.pml
        self.part = make_partition(model.nz, self.config.layer_count(model.nz), pml.alpha)
        t0 = time.perf_counter()
        ops = [discretize_local(model, omega, pml, self.part.offsets[i], self.part.thicknesses[i], layer=i)
               for i in range(self.part.L)]
        cap = self.config.memory_cap
        if cap is None:
            cap = available_memory_bytes()
        self.facts = factorize_all(ops, dedupe=self.config.dedupe, memory_cap=cap)
        del ops
        self.offline_seconds = time.perf_counter() - t0
        plane = (model.nx + 2 * pml.alpha, model.ny + 2 * pml.alpha)
        self.stack = LayerStack(self.part, self.facts, plane, model.h)
        self.sie = SieSystem(self.stack)
        self.polar = PolarizedOperator(self.stack, log=log, fuse=self.config.fuse)
        log_ = logging.getLogger(__name__)
        log_.info("factored %d layers (%d distinct) in %.1fs", self.part.L,
                  len({id(f) for f in self.facts}), self.offline_seconds)

    @property
    def n_distinct_factors(self):
        return len({id(f) for f in self.facts})

    def operator(self):
        """Batched closure applying the system GMRES iterates on."""
        cfg = self.config
        if cfg.preconditioned:
            return lambda x: self.polar.apply_preconditioner(self.polar.apply_polarized(x))
        return self.sie.apply_M

    def solve(self, sources, batch=True):
        """Solve for a list (or stacked array) of bulk source volumes.

        With ``batch=True`` all right-hand sides advance in lockstep and
        share multi-column local solves; otherwise they are solved one at a
        time.  Both give bitwise identical results.
        """
        f = np.asarray(sources, dtype=np.complex128)
        if f.ndim == 3:
            f = f[None]
        if not batch:
            vols, reps = [], []
            for fi in f:
                v, r = self.solve(fi[None], batch=True)
                vols.append(v[0])
                reps.extend(r)
            return np.stack(vols), reps
        cfg = self.config
        stack, polar = self.stack, self.polar
        stack.reset_counters()
        msg0 = polar.messages
        t0 = time.perf_counter()
        srcs, v = self.sie.local_fields(f)
        if cfg.preconditioned:
            b = polar.apply_preconditioner(polar.polarized_rhs(v))
        else:
            b = self.sie.rhs_from_local(v)
        t1 = time.perf_counter()
        states = [GmresState(bi, cfg.tol, cfg.max_iter) for bi in b]
        run_lockstep(states, self.operator())
        x = np.stack([s.solution() for s in states])
        traces = polar.collapse(x) if cfg.preconditioned else x
        t2 = time.perf_counter()
        true = self._true_residual(traces, v)
        vol = self.sie.reconstruct(traces, srcs)
        t3 = time.perf_counter()
        reports = []
        for i, s in enumerate(states):
            reports.append(SolveReport(
                iterations=s.iterations, residuals=s.residuals, true_residual=true[i],
                converged=s.converged, tol=cfg.tol,
                timings={"rhs": t1 - t0, "gmres": t2 - t1, "reconstruct": t3 - t2,
                         "offline": self.offline_seconds},
                local_solves=sum(stack.solves), messages=polar.messages - msg0,
                preconditioned=cfg.preconditioned))
            if not s.converged:
                log.warning("right-hand side %d did not converge in %d iterations", i, s.iterations)
        return vol, reports

    def _true_residual(self, traces, v):
        """Relative residual of the collapsed traces in the interface system."""
        rhs = self.sie.rhs_from_local(v)
        if self.part.L < 2:
            return [0.0] * traces.shape[0]
        r = self.sie.apply_M(traces) - rhs
        out = []
        for ri, bi in zip(r, rhs):
            nb = np.linalg.norm(bi)
            out.append(0.0 if nb == 0 else float(np.linalg.norm(ri) / nb))
        return out


def solve_helmholtz(model, omega, sources, config=None):
    """One-shot driver: factor, solve every source, reconstruct the volumes."""
    solver = HelmholtzSolver(model, omega, config)
    return solver.solve(sources)
