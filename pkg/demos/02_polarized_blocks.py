# %% [markdown]
# # The polarized block system at probe size
#
# At n = 12 with three layers the interface unknowns are few enough to
# assemble every block operator densely. We check that the sweeps invert the
# diagonal blocks, and that the preconditioner is the inverse of the block
# lower triangle. We also look at the spectrum before and after
# preconditioning.

# %%
import numpy as np

from poltrace import (HelmholtzSolver, PmlConfig, SolverConfig, frequency_for_ppw, make_benchmark_model,
                      probe_operator)

model = make_benchmark_model("fault", 12)
solver = HelmholtzSolver(model, frequency_for_ppw(model, 10), SolverConfig(layers=3, pml=PmlConfig(4)))
pol = solver.polar
shape = (solver.part.n_traces,) + solver.stack.plane_shape
pshape = (2 * shape[0],) + shape[1:]
print("trace array shape", shape)

# %%
M = probe_operator(solver.sie.apply_M, shape)
Mbar = probe_operator(pol.apply_polarized, pshape)
P = probe_operator(pol.apply_preconditioner, pshape)
Dd = probe_operator(pol.apply_D_down, shape)
sweep = probe_operator(pol.downward_sweep, shape)
print("|D_down sweep - I| =", np.abs(Dd @ sweep - np.eye(len(Dd))).max())

n = M.shape[0]
low = Mbar.copy()
low[:n, n:] = 0
print("|P low - I| =", np.abs(P @ low - np.eye(2 * n)).max())

# %% [markdown]
# The preconditioned eigenvalues cluster at one. The residual spread comes
# from the up-going reflections dropped by the triangular approximation.

# %%
for name, A in (("M", M), ("P Mbar", P @ Mbar)):
    ev = np.linalg.eigvals(A)
    print(f"{name:7s} cond {np.linalg.cond(A):10.2e}   max |lambda - 1| {np.abs(ev - 1).max():.3f}")
