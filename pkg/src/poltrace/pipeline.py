"""Pipelined multi-RHS execution over per-layer workers.

The executor runs in one process and one thread, so wall time is the sum of
every task.  To expose the schedule's parallel cost it keeps a logical clock
per worker: each task is timed as it runs, starts when its worker is free
and every message it consumes has arrived, and advances the worker's clock
by its measured duration.  ``parallel_seconds`` is the resulting makespan,
i.e. the runtime on one core per worker with free communication.

Stages per GMRES iteration, for all active right-hand sides:

* four layer-parallel passes for the polarized operator, batched over RHS;
* the downward sweep, one single-column solve per (layer, RHS), pipelined
  so layer ``l`` works on RHS ``r`` while layer ``l+1`` works on ``r-1``;
* the reflection pass (batched), or with ``fuse`` one solve per sweep step;
* the upward sweep, pipelined the same way;
* a barrier for the Gram-Schmidt step.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .krylov import GmresState, SolveReport

log = logging.getLogger(__name__)

SWEEP_STAGES = ("sweep_down", "sweep_up")


@dataclass(frozen=True)
class Message:
    sender: int
    receiver: int
    planes: int
    stage: str
    rhs: int
    seq: int
    iteration: int


class MessageLog:
    """Ordered record of every plane transfer between layers."""

    def __init__(self):
        self.records = []
        self.iteration = 0

    def record(self, sender, receiver, planes, stage, rhs):
        if abs(sender - receiver) != 1:
            raise ContractError(f"message {sender} -> {receiver} is not between adjacent layers")
        self.records.append(Message(int(sender), int(receiver), int(planes), stage, int(rhs),
                                    len(self.records), self.iteration))

    def __len__(self):
        return len(self.records)

    def count(self, stage=None, rhs=None, iteration=None):
        return sum(1 for m in self.records
                   if (stage is None or m.stage == stage)
                   and (rhs is None or m.rhs == rhs)
                   and (iteration is None or m.iteration == iteration))

    def adjacent_only(self):
        return all(abs(m.sender - m.receiver) == 1 for m in self.records)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sender", "receiver", "planes", "stage", "rhs", "seq", "iteration"])
            for m in self.records:
                w.writerow([m.sender, m.receiver, m.planes, m.stage, m.rhs, m.seq, m.iteration])
        return path


@dataclass
class LayerWorker:
    index: int
    layers: tuple
    clock: float = 0.0
    busy: float = 0.0
    solves: int = 0
    tasks: list = field(default_factory=list)


def predict_runtime(R, L, gamma):
    """Modelled seconds per GMRES iteration for ``R`` pipelined right-hand sides."""
    return 5 * R * gamma + 2 * (L + R) * gamma


def measure_gamma(fact, repeats=3, seed=0):
    """Median wall time of ``repeats`` single-column solves after one warm-up."""
    rng = np.random.default_rng(seed)
    b = rng.standard_normal(fact.size) + 0j
    fact.solve(b)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fact.solve(b)
        times.append(time.perf_counter() - t0)
    fact.solves -= repeats + 1
    return float(np.median(times))


class PipelinedExecutor:
    """Schedule the polarized GMRES solve of many RHS over layer workers.

    ``workers`` (default: one per layer) groups contiguous layers onto a
    worker; grouped layers share that worker's clock.
    """

    def __init__(self, solver, workers=None, fuse=None):
        if not solver.config.preconditioned:
            raise ContractError("the pipelined executor runs the preconditioned polarized solve")
        self.solver = solver
        self.stack = solver.stack
        self.polar = solver.polar
        self.part = solver.part
        self.fuse = solver.config.fuse if fuse is None else fuse
        L = self.part.L
        nw = L if workers is None else max(1, min(int(workers), L))
        bounds = np.linspace(0, L, nw + 1).round().astype(int)
        self.workers = [LayerWorker(w, tuple(range(bounds[w], bounds[w + 1]))) for w in range(nw)]
        self.owner = {}
        for w in self.workers:
            for layer in w.layers:
                self.owner[layer] = w
        self.log = MessageLog()
        self.passes = 0
        self._sweep = 0

    # -- clocks --------------------------------------------------------

    def reset(self):
        for w in self.workers:
            w.clock = w.busy = 0.0
            w.solves = 0
            w.tasks = []
        self.log = MessageLog()
        self.passes = 0
        self._sweep = 0

    def _task(self, layer, kind, fn, ready=0.0):
        w = self.owner[layer]
        start = max(w.clock, float(ready))
        s0 = self.stack.solves[layer]
        t0 = time.perf_counter()
        out = fn()
        dt = time.perf_counter() - t0
        w.clock = start + dt
        w.busy += dt
        solves = self.stack.solves[layer] - s0
        w.solves += solves
        w.tasks.append((kind, layer, start, w.clock, solves, self._sweep))
        return out, w.clock

    def _barrier(self, seconds=0.0):
        t = float(max(w.clock for w in self.workers) + seconds)
        for w in self.workers:
            w.clock = t
        return t

    def now(self):
        return max(w.clock for w in self.workers)

    def _send(self, sender, receiver, stage, rhs_ids):
        for r in rhs_ids:
            self.log.record(sender, receiver, 2, stage, r)

    # -- operator passes -------------------------------------------------

    def apply_polarized(self, X, rhs_ids):
        """``M x`` as four layer-parallel passes; returns the stacked result."""
        pol, L = self.polar, self.part.L
        d, u = pol.split(X)
        yd = np.zeros_like(d)
        yu = np.zeros_like(u)
        pair = pol._pair
        for layer in range(1, L):
            self._send(layer - 1, layer, "halo_down", rhs_ids)
        for layer in range(L - 1):
            self._send(layer + 1, layer, "halo_up", rhs_ids)
        # D_down
        if L > 1:
            self._task(0, "D_down", lambda: pol._put(yd, 0, (-d[:, 0], -d[:, 1])))
        for layer in range(1, L - 1):
            res, _ = self._task(layer, "D_down",
                                lambda layer=layer: pol.down_step(layer, pair(d, layer - 1), pair(d, layer)))
            pol._put(yd, layer, res)
        # U
        for layer in range(L - 1):
            top = pair(u, layer - 1) if layer > 0 else None
            res, _ = self._task(layer, "U", lambda layer=layer, top=top: pol.reflect_down(layer, top, pair(u, layer)))
            yd[:, 2 * layer] = yd[:, 2 * layer] + res[0]
            yd[:, 2 * layer + 1] = yd[:, 2 * layer + 1] + res[1]
        # D_up
        if L > 1:
            j = L - 2
            self._task(L - 1, "D_up", lambda: pol._put(yu, j, (-u[:, 2 * j], -u[:, 2 * j + 1])))
        for layer in range(L - 2, 0, -1):
            res, _ = self._task(layer, "D_up",
                                lambda layer=layer: pol.up_step(layer, pair(u, layer), pair(u, layer - 1)))
            pol._put(yu, layer - 1, res)
        # L
        for layer in range(1, L):
            bottom = pair(d, layer) if layer < L - 1 else None
            res, _ = self._task(layer, "L", lambda layer=layer, bottom=bottom:
                                pol.reflect_up(layer, pair(d, layer - 1), bottom))
            yu[:, 2 * (layer - 1)] = yu[:, 2 * (layer - 1)] + res[0]
            yu[:, 2 * (layer - 1) + 1] = yu[:, 2 * (layer - 1) + 1] + res[1]
        self.passes += 4
        return pol.join(yd, yu)

    def apply_preconditioner(self, X, rhs_ids):
        pol, L = self.polar, self.part.L
        self._sweep += 1
        d, u = pol.split(X)
        B = d.shape[0]
        yd = np.zeros_like(d)
        ly = np.zeros_like(u)
        pair = pol._pair
        # downward sweep, pipelined over right-hand sides
        done = np.zeros((L, B))
        for r in range(B):
            one = slice(r, r + 1)
            if L > 1:
                _, done[0, r] = self._task(0, "sweep_down",
                                           lambda one=one: pol._put(yd[one], 0, (-d[one, 0], -d[one, 1])))
            for layer in range(1, L - 1):
                self._send(layer - 1, layer, "sweep_down", [rhs_ids[r]])
                res, done[layer, r] = self._task(
                    layer, "sweep_down",
                    lambda layer=layer, one=one: pol.down_step(layer, pair(yd[one], layer - 1), pair(d[one], layer)),
                    ready=done[layer - 1, r])
                pol._put(yd[one], layer, res)
                if self.fuse:
                    res, done[layer, r] = self._task(
                        layer, "L", lambda layer=layer, one=one:
                        pol.reflect_up(layer, pair(yd[one], layer - 1), pair(yd[one], layer)))
                    pol._put(ly[one], layer - 1, res)
        # reflections
        if L > 1:
            self._send(L - 2, L - 1, "halo_reflect", rhs_ids)
        layers = [L - 1] if self.fuse else range(1, L)
        for layer in layers:
            bottom = pair(yd, layer) if layer < L - 1 else None
            ready = done[layer - 1].max()
            res, _ = self._task(layer, "L", lambda layer=layer, bottom=bottom:
                                pol.reflect_up(layer, pair(yd, layer - 1), bottom), ready=ready)
            pol._put(ly, layer - 1, res)
        if not self.fuse:
            self.passes += 1
        rest = u - ly
        # upward sweep
        yu = np.zeros_like(u)
        done_up = np.zeros((L, B))
        for r in range(B):
            one = slice(r, r + 1)
            j = L - 2
            if L > 1:
                _, done_up[L - 1, r] = self._task(
                    L - 1, "sweep_up",
                    lambda one=one: pol._put(yu[one], j, (-rest[one, 2 * j], -rest[one, 2 * j + 1])))
            for layer in range(L - 2, 0, -1):
                self._send(layer + 1, layer, "sweep_up", [rhs_ids[r]])
                res, done_up[layer, r] = self._task(
                    layer, "sweep_up",
                    lambda layer=layer, one=one: pol.up_step(layer, pair(yu[one], layer), pair(rest[one], layer - 1)),
                    ready=done_up[layer + 1, r])
                pol._put(yu[one], layer - 1, res)
        return pol.join(yd, yu)

    # -- driver ----------------------------------------------------------

    def run(self, sources):
        """Solve every source; returns ``(volumes, reports, log, timing)``."""
        f = np.asarray(sources, dtype=np.complex128)
        if f.ndim == 3:
            f = f[None]
        R = f.shape[0]
        if R < 1:
            raise ContractError("at least one source is required")
        self.reset()
        solver, sie, pol, stack = self.solver, self.solver.sie, self.polar, self.stack
        cfg = solver.config
        stack.reset_counters()
        wall0 = time.perf_counter()
        ids = list(range(R))

        # local fields, layer-parallel and batched
        fb, _ = sie._source_batch(f)
        srcs = sie.split_source(fb)
        v = []
        for layer in range(self.part.L):
            n = self.part.thicknesses[layer]
            ks = (0, 1, n, n + 1)
            if not np.any(srcs[layer]):
                zero = np.zeros((R,) + stack.plane_shape, dtype=np.complex128)
                v.append({k: zero for k in ks})
            else:
                out, _ = self._task(layer, "local", lambda layer=layer, ks=ks:
                                    stack.solve(layer, (), ks, source=srcs[layer]))
                v.append(out)
        b = self.apply_preconditioner(pol.polarized_rhs(v), ids)
        t_rhs = self._barrier()
        wall_rhs = time.perf_counter()

        states = [GmresState(bi, cfg.tol, cfg.max_iter) for bi in b]
        rounds = 0
        while True:
            active = [i for i, s in enumerate(states) if not s.done]
            if not active:
                break
            rounds += 1
            self.log.iteration = rounds
            V = np.stack([states[i].vector for i in active])
            W = self.apply_preconditioner(self.apply_polarized(V, active), active)
            t0 = time.perf_counter()
            for i, w in zip(active, W):
                states[i].update(w)
            self._barrier(time.perf_counter() - t0)
        x = np.stack([s.solution() for s in states])
        traces = pol.collapse(x)
        t_gmres = self._barrier()
        wall_gmres = time.perf_counter()

        self.log.iteration = rounds + 1
        Px, Py = stack.plane_shape
        a = self.part.alpha
        vol = np.zeros((R, Px - 2 * a, Py - 2 * a, self.part.nz), dtype=np.complex128)
        for layer in range(self.part.L):
            top = (traces[:, 2 * layer - 2], traces[:, 2 * layer - 1]) if layer > 0 else None
            bottom = (traces[:, 2 * layer], traces[:, 2 * layer + 1]) if layer < self.part.L - 1 else None
            xl, _ = self._task(layer, "reconstruct", lambda layer=layer, top=top, bottom=bottom:
                               stack.top_bottom(layer, top, bottom, extract=None, source=srcs[layer]))
            z0, n = self.part.offsets[layer], self.part.thicknesses[layer]
            vol[:, :, :, z0:z0 + n] = np.moveaxis(xl[a:Px - a, a:Py - a, a:a + n, :], -1, 0)
        t_end = self._barrier()
        wall_end = time.perf_counter()
        online_solves = sum(stack.solves)

        true = solver._true_residual(traces, v)
        reports = []
        for i, s in enumerate(states):
            reports.append(SolveReport(
                iterations=s.iterations, residuals=s.residuals, true_residual=true[i],
                converged=s.converged, tol=cfg.tol,
                timings={"rhs": t_rhs, "gmres": t_gmres - t_rhs, "reconstruct": t_end - t_gmres,
                         "offline": solver.offline_seconds},
                local_solves=online_solves, messages=sum(1 for m in self.log.records if m.rhs == i),
                preconditioned=True))
        timing = {
            "parallel_seconds": t_end,
            "parallel_gmres_seconds": t_gmres - t_rhs,
            "wall_seconds": wall_end - wall0,
            "wall_gmres_seconds": wall_gmres - wall_rhs,
            "rounds": rounds,
            "per_rhs_seconds": t_end / R,
            "per_iteration_seconds": (t_gmres - t_rhs) / max(rounds, 1),
            "passes": self.passes,
            "occupancy": self.sweep_occupancy(),
        }
        return vol, reports, self.log, timing

    def sweep_occupancy(self, kind="sweep_down"):
        """Worst busy fraction of a sweeping worker inside the full-pipeline window.

        For each sweep the window runs from the first solve of the last
        worker in the chain to the last solve of the first one; it is only
        non-empty when the sweep carries more right-hand sides than there
        are workers in the chain.  Returns None when no sweep has a window.
        """
        sweeps = {}
        for w in self.workers:
            for t in w.tasks:
                if t[0] == kind and t[4] > 0:
                    sweeps.setdefault(t[5], {}).setdefault(w.index, []).append(t)
        worst = None
        for per_worker in sweeps.values():
            if len(per_worker) < 2:
                continue
            order = sorted(per_worker)
            first, last = (order[0], order[-1]) if kind == "sweep_down" else (order[-1], order[0])
            lo = min(t[2] for t in per_worker[last])
            hi = max(t[3] for t in per_worker[first])
            if hi <= lo:
                continue
            for tasks in per_worker.values():
                busy = sum(max(0.0, min(t[3], hi) - max(t[2], lo)) for t in tasks)
                frac = busy / (hi - lo)
                worst = frac if worst is None else min(worst, frac)
        return worst


def run_pipelined(solver, sources, workers=None, fuse=None):
    """Convenience wrapper around :class:`PipelinedExecutor`."""
    return PipelinedExecutor(solver, workers=workers, fuse=fuse).run(sources)
