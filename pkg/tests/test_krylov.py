import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poltrace.errors import ContractError
from poltrace.krylov import GmresState, SolverConfig, gmres, solve_helmholtz
from poltrace.discretization import PmlConfig, frequency_for_ppw
from poltrace.oracles import global_direct_solve, make_benchmark_model, point_source
from poltrace.verification import _setup, default_source


def test_zero_rhs():
    x, rep = gmres(lambda v: 2 * v, np.zeros(5))
    assert rep.iterations == 0 and rep.converged and not np.any(x)


def test_identity_one_iteration():
    b = np.arange(1, 6) + 1j
    x, rep = gmres(lambda v: v, b)
    assert rep.iterations == 1 and rep.converged
    assert np.allclose(x, b, rtol=1e-14)


def test_against_dense_solver():
    rng = np.random.default_rng(0)
    n = 40
    A = np.eye(n) * 4 + rng.standard_normal((n, n)) / np.sqrt(n) + 1j * rng.standard_normal((n, n)) / n
    b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    x, rep = gmres(lambda v: A @ v, b, tol=1e-12, max_iter=n)
    assert rep.converged
    assert np.linalg.norm(x - np.linalg.solve(A, b)) <= 1e-10 * np.linalg.norm(x)
    P = np.linalg.inv(np.diag(np.diag(A)))
    xp, repp = gmres(lambda v: A @ v, b, precond=lambda v: P @ v, tol=1e-12, max_iter=n)
    assert np.linalg.norm(xp - x) <= 1e-10 * np.linalg.norm(x)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 30))
def test_residuals_non_increasing(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    b = rng.standard_normal(n) + 0j
    _, rep = gmres(lambda v: A @ v, b, tol=1e-10, max_iter=n)
    r = rep.residuals
    assert all(b_ <= a_ * (1 + 1e-12) for a_, b_ in zip(r, r[1:]))
    assert rep.converged == (r[-1] <= 1e-10)


def test_exhaustion_is_reported_not_raised():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((30, 30))
    _, rep = gmres(lambda v: A @ v, rng.standard_normal(30) + 0j, tol=1e-12, max_iter=3)
    assert rep.iterations == 3 and not rep.converged


def test_bad_arguments():
    with pytest.raises(ContractError):
        GmresState(np.ones(3), tol=0.0)
    with pytest.raises(ContractError):
        GmresState(np.array([np.inf, 1.0]))


def test_polarized_gmres_matches_dense(tiny_fault, probed):
    model, _, _, solver = tiny_fault
    pol = solver.polar
    _, v = solver.sie.local_fields(point_source(model, (5, 5, 7)))
    b = pol.polarized_rhs(v)[0]
    ref = np.linalg.solve(probed["P"] @ probed["Mbar"], probed["P"] @ b.ravel())
    x, rep = gmres(pol.apply_polarized, b, precond=pol.apply_preconditioner, tol=1e-13, max_iter=60)
    assert rep.converged
    assert np.linalg.norm(x.ravel() - ref) <= 1e-8 * np.linalg.norm(ref)


def test_end_to_end_against_oracle():
    model = make_benchmark_model("fault", 12)
    omega = frequency_for_ppw(model, 10)
    pml = PmlConfig(4)
    f = [point_source(model, (6, 6, 3)), point_source(model, (2, 9, 10), 1j)]
    vol, reps = solve_helmholtz(model, omega, f, SolverConfig(layers=3, pml=pml))
    for fi, ui, r in zip(f, vol, reps):
        ref = global_direct_solve(model, omega, pml, fi)
        assert r.converged and r.true_residual <= 1e-6
        assert np.linalg.norm(ui - ref) <= 1e-6 * np.linalg.norm(ref)
        assert set(r.timings) >= {"rhs", "gmres", "reconstruct"}


def test_batch_and_sequential_are_bitwise_equal(tiny_four):
    model, _, _, solver = tiny_four
    f = [point_source(model, (3, 4, 5)), point_source(model, (8, 2, 9)), default_source(model)]
    a, ra = solver.solve(f, batch=True)
    b, rb = solver.solve(f, batch=False)
    assert np.array_equal(a, b)
    assert [r.residuals for r in ra] == [r.residuals for r in rb]


def test_solver_linearity(tiny_four):
    model, _, _, solver = tiny_four
    f1, f2 = point_source(model, (3, 4, 5)), point_source(model, (8, 2, 9))
    vol, _ = solver.solve([2 * f1 - 1j * f2, f1, f2])
    ref = 2 * vol[1] - 1j * vol[2]
    assert np.linalg.norm(vol[0] - ref) <= 10 * solver.config.tol * np.linalg.norm(ref)


def test_non_convergence_flagged_per_source(tiny_four):
    model, _, _, solver = tiny_four
    old = solver.config.max_iter
    solver.config.max_iter = 1
    try:
        _, reps = solver.solve([point_source(model, (3, 4, 5)), np.zeros(model.shape)])
    finally:
        solver.config.max_iter = old
    assert not reps[0].converged and reps[0].iterations == 1
    assert reps[1].converged and reps[1].iterations == 0


@pytest.mark.parametrize("kind", ["homogeneous", "smooth_random", "fault"])
def test_unpreconditioned_needs_more_iterations(kind):
    model, omega, pml, solver = _setup(kind, 30, 3, 10)
    f = default_source(model)
    _, rep = solver.solve([f])
    assert rep[0].converged
    k = rep[0].iterations
    solver.config.preconditioned = False
    solver.config.max_iter = k
    _, plain = solver.solve([f])
    assert not plain[0].converged and plain[0].iterations == k
