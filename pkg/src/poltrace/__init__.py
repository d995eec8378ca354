"""Layered domain decomposition Helmholtz solver based on polarized traces."""

__version__ = "0.1.0"

from .discretization import (PmlConfig, StretchedOperator, VelocityModel, discretize_global,
                             discretize_local, frequency_for_ppw, pml_profile)
from .errors import (ContractError, FactorizationError, InvalidPartitionError, PolTraceError,
                     ResourceError)
from .krylov import HelmholtzSolver, SolveReport, SolverConfig, gmres, solve_helmholtz
from .local_solver import LocalFactorization, factorize, factorize_all, local_solve
from .oracles import (analytic_green_homogeneous, global_direct_solve, make_benchmark_model,
                      point_source, probe_operator)
from .partition import LayerPartition, make_partition
from .pipeline import MessageLog, PipelinedExecutor, predict_runtime, run_pipelined
from .polarized import PolarizedOperator
from .sie import LayerStack, SieSystem
