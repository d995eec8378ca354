"""Command-line front end: ``poltrace solve`` and ``poltrace verify``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .discretization import DEFAULT_PML_POINTS, DEFAULT_PML_STRENGTH, PmlConfig, VelocityModel
from .errors import PolTraceError, ResourceError
from .krylov import DEFAULT_TOL, HelmholtzSolver, SolverConfig
from .pipeline import PipelinedExecutor

log = logging.getLogger("poltrace")

REPORT_SCHEMA = "poltrace.report/1"

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_IO = 0, 1, 2, 3


class ConfigError(Exception):
    pass


def read_sources(path, model):
    """Point sources from a JSON list of ``{"position": [i, j, k], "amplitude": a}``.

    Positions are 0-based bulk grid indices; amplitudes may be a number,
    ``[re, im]`` or ``{"re": .., "im": ..}``.  Each source becomes
    ``amplitude / h**3`` at its grid point.
    """
    with open(path) as fh:
        items = json.load(fh)
    if isinstance(items, dict):
        items = [items]
    if not isinstance(items, list) or not items:
        raise ConfigError("sources file must hold a non-empty JSON list")
    out = []
    for k, item in enumerate(items):
        try:
            pos = tuple(int(p) for p in item["position"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"source {k}: bad or missing position") from exc
        if len(pos) != 3 or any(not 0 <= p < s for p, s in zip(pos, model.shape)):
            raise ConfigError(f"source {k}: position {pos} outside grid {model.shape}")
        amp = item.get("amplitude", 1.0)
        if isinstance(amp, dict):
            amp = complex(amp.get("re", 0.0), amp.get("im", 0.0))
        elif isinstance(amp, (list, tuple)):
            amp = complex(amp[0], amp[1] if len(amp) > 1 else 0.0)
        else:
            amp = complex(amp)
        f = np.zeros(model.shape, dtype=np.complex128)
        f[pos] = amp / model.h**3
        out.append(f)
    return out


def write_field(path, u, model, meta):
    """Raw little-endian float64 with interleaved real/imaginary parts plus a JSON sidecar."""
    path = Path(path)
    data = np.empty(u.shape + (2,), dtype="<f8")
    data[..., 0] = u.real
    data[..., 1] = u.imag
    data.tofile(path)
    side = {"nx": model.nx, "ny": model.ny, "nz": model.nz, "h": model.h, "dtype": "<f8",
            "layout": "interleaved-complex", "order": "z-fastest", "data": path.name}
    side.update(meta)
    path.with_suffix(".json").write_text(json.dumps(side, indent=2))


def read_field(path):
    path = Path(path)
    side = json.loads(path.with_suffix(".json").read_text())
    shape = (side["nx"], side["ny"], side["nz"])
    raw = np.fromfile(path, dtype="<f8").reshape(shape + (2,))
    return raw[..., 0] + 1j * raw[..., 1]


def build_report(args, model, omega, solver, reports, timing):
    return {
        "schema": REPORT_SCHEMA,
        "version": __version__,
        "model": {"nx": model.nx, "ny": model.ny, "nz": model.nz, "h": model.h,
                  "fingerprint": model.fingerprint()},
        "frequency_hz": args.freq,
        "omega": omega,
        "layers": solver.part.L,
        "thicknesses": list(solver.part.thicknesses),
        "pml": {"alpha": solver.config.pml.alpha, "C": solver.config.pml.C},
        "tol": solver.config.tol,
        "max_iter": solver.config.max_iter,
        "rhs_batch": args.rhs_batch,
        "preconditioned": solver.config.preconditioned,
        "offline_seconds": solver.offline_seconds,
        "distinct_factorizations": solver.n_distinct_factors,
        "timing": timing,
        "sources": [dict(index=i, **r.to_dict()) for i, r in enumerate(reports)],
    }


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def cmd_solve(args):
    try:
        model = VelocityModel.load(args.model)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        log.error("cannot read model %s: %s", args.model, exc)
        return EXIT_IO
    try:
        sources = read_sources(args.sources, model)
    except OSError as exc:
        log.error("cannot read sources %s: %s", args.sources, exc)
        return EXIT_IO
    except (json.JSONDecodeError, ConfigError) as exc:
        log.error("bad sources file: %s", exc)
        return EXIT_CONFIG
    if not args.freq > 0:
        log.error("--freq must be positive")
        return EXIT_CONFIG
    omega = 2 * np.pi * args.freq
    pml = PmlConfig.log_scaled(max(model.shape), C=args.pml_strength) if args.pml_log else \
        PmlConfig(args.pml, args.pml_strength)
    cfg = SolverConfig(layers=args.layers, pml=pml, tol=args.tol, max_iter=args.max_iter,
                       preconditioned=not args.unpreconditioned, fuse=args.fuse)
    if args.rhs_batch == "pipelined" and cfg.preconditioned is False:
        log.error("--rhs-batch pipelined needs the preconditioned solver")
        return EXIT_CONFIG
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        log.error("cannot create output directory %s: %s", out, exc)
        return EXIT_IO
    t0 = time.perf_counter()
    solver = HelmholtzSolver(model, omega, cfg)
    timing = {}
    if args.rhs_batch == "pipelined":
        vol, reports, mlog, timing = PipelinedExecutor(solver, workers=args.workers).run(sources)
    else:
        vol, reports = solver.solve(sources, batch=args.rhs_batch == "lockstep")
        mlog = None
    timing["total_seconds"] = time.perf_counter() - t0
    try:
        for i, u in enumerate(vol):
            write_field(out / f"field_{i:04d}.bin", u, model, {"source": i, "frequency_hz": args.freq})
        report = build_report(args, model, omega, solver, reports, timing)
        (out / "report.json").write_text(json.dumps(_jsonable(report), indent=2))
        if mlog is not None:
            mlog.to_csv(out / "messages.csv")
    except OSError as exc:
        log.error("cannot write results to %s: %s", out, exc)
        return EXIT_IO
    its = [r.iterations for r in reports]
    log.info("solved %d source(s); iterations %s; %.1fs", len(reports), its, timing["total_seconds"])
    if not all(r.converged for r in reports):
        log.error("some right-hand sides did not converge")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_verify(args):
    from .verification import SUITES, run_named

    names = SUITES[args.suite]
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    failed = 0
    for name in names:
        checks, rows = run_named(name)
        for c in checks:
            print(c.line(), flush=True)
            failed += not c.passed
        if rows and out is not None:
            path = out / f"{name}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(rows[0]))
                w.writeheader()
                w.writerows(rows)
            print(f"wrote {path}")
        elif rows:
            w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK if failed == 0 else EXIT_CONFIG


def make_parser():
    p = argparse.ArgumentParser(prog="poltrace", description="Layered polarized-traces Helmholtz solver.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve for a set of point sources")
    s.add_argument("--model", required=True, help="model JSON sidecar (see docs/formats.md)")
    s.add_argument("--sources", required=True, help="JSON list of point sources")
    s.add_argument("--freq", type=float, required=True, help="frequency in Hz (omega = 2 pi freq)")
    s.add_argument("--layers", type=int, default=None, help="layer count (default nz // 10)")
    s.add_argument("--pml", type=int, default=DEFAULT_PML_POINTS, help="PML thickness in grid points")
    s.add_argument("--pml-strength", type=float, default=DEFAULT_PML_STRENGTH, help="PML strength C")
    s.add_argument("--pml-log", action="store_true", help="scale the PML thickness like log n")
    s.add_argument("--tol", type=float, default=DEFAULT_TOL)
    s.add_argument("--max-iter", type=int, default=50)
    s.add_argument("--rhs-batch", choices=("sequential", "lockstep", "pipelined"), default="lockstep")
    s.add_argument("--workers", type=int, default=None, help="layer workers (default one per layer)")
    s.add_argument("--fuse", action="store_true", help="issue reflection solves inside the sweep")
    s.add_argument("--unpreconditioned", action="store_true", help="diagnostic: GMRES on M without P")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="run a verification suite and print PASS/FAIL lines")
    v.add_argument("--suite", choices=("tiny", "scaling", "pipeline", "full"), default="tiny")
    v.add_argument("--out", default=None, help="directory for CSV output")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if os.environ.get("POLTRACE_CACHE_DIR"):
        log.info("POLTRACE_CACHE_DIR is set but factorizations are not cached to disk")
    try:
        return args.func(args)
    except ResourceError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except PolTraceError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
