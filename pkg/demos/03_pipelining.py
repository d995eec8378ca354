# %% [markdown]
# # Pipelining many right-hand sides
#
# The executor keeps one logical clock per layer worker. Each sweep step of
# right-hand side r on layer l waits for step (l-1, r), and several
# right-hand sides keep all workers busy at once. Per-source cost therefore
# drops as R grows and then levels off.

# %%
import numpy as np

from poltrace import (HelmholtzSolver, PmlConfig, SolverConfig, frequency_for_ppw, make_benchmark_model,
                      point_source, predict_runtime)
from poltrace.pipeline import PipelinedExecutor, measure_gamma

model = make_benchmark_model("homogeneous", 20)
L = 4
solver = HelmholtzSolver(model, frequency_for_ppw(model, 10), SolverConfig(layers=L, pml=PmlConfig(5)))
gamma = measure_gamma(solver.facts[1])
rng = np.random.default_rng(0)

# %%
print(" R   per-RHS [ms]   per-iter [ms]   model per-iter [ms]")
for R in (1, 2, 4, 8, 12):
    src = [point_source(model, rng.integers(2, 18, size=3)) for _ in range(R)]
    _, reps, log, tm = PipelinedExecutor(solver).run(src)
    print(f"{R:2d}   {1e3 * tm['per_rhs_seconds']:11.2f}   {1e3 * tm['per_iteration_seconds']:12.2f}"
          f"   {1e3 * predict_runtime(R, L, gamma):16.2f}")

# %% [markdown]
# Every transfer goes between neighbouring layers. Each sweep moves a
# right-hand side through the L-2 inner layers.

# %%
print("adjacent only:", log.adjacent_only())
for stage in ("halo_down", "halo_up", "sweep_down", "sweep_up", "halo_reflect"):
    print(f"{stage:13s} {log.count(stage):5d}")
print("sweep_down messages for rhs 0, iteration 1:", log.count("sweep_down", rhs=0, iteration=1))
