import numpy as np
import pytest

from conftest import random_traces
from poltrace.discretization import PmlConfig, discretize_local, frequency_for_ppw
from poltrace.errors import ContractError
from poltrace.oracles import global_direct_solve, make_benchmark_model, point_source, probe_operator
from poltrace.partition import restrict_to_interfaces
from poltrace.verification import _setup


def test_zero_source(tiny_fault):
    model, _, _, solver = tiny_fault
    rhs, _ = solver.sie.build_rhs(np.zeros(model.shape))
    assert rhs.shape == (4,) + solver.stack.plane_shape and not np.any(rhs)


def test_source_confined_to_one_layer():
    model, omega, pml, solver = _setup("smooth_random", 12, 4, 3)
    part = solver.part
    z = part.offsets[1] + 1
    solver.stack.reset_counters()
    rhs, _ = solver.sie.build_rhs(point_source(model, (5, 6, z)))
    assert solver.stack.solves == [0, 1, 0, 0]
    # planes owned by layers 0, 2, 3 vanish; layer 1 owns entries 1 and 2
    assert not np.any(rhs[[0, 3, 4, 5]])
    assert np.any(rhs[1]) and np.any(rhs[2])


def test_rhs_against_dense_layer_solves(tiny_four):
    model, omega, pml, solver = tiny_four
    part = solver.part
    rng = np.random.default_rng(0)
    f = rng.standard_normal(model.shape) + 1j * rng.standard_normal(model.shape)
    rhs, _ = solver.sie.build_rhs(f)
    a = pml.alpha
    for layer in range(part.L):
        op = discretize_local(model, omega, pml, part.offsets[layer], part.thicknesses[layer])
        src = np.zeros(op.shape, dtype=complex)
        z0, n = part.offsets[layer], part.thicknesses[layer]
        src[a:-a, a:-a, a:a + n] = f[:, :, z0:z0 + n]
        v = np.linalg.solve(op.matrix.toarray(), src.ravel()).reshape(op.shape)
        if layer > 0:
            ref = -v[:, :, part.z_index(layer, 1)]
            assert np.linalg.norm(rhs[2 * layer - 1] - ref) <= 1e-10 * np.linalg.norm(ref)
        if layer < part.L - 1:
            ref = -v[:, :, part.z_index(layer, n)]
            assert np.linalg.norm(rhs[2 * layer] - ref) <= 1e-10 * np.linalg.norm(ref)


def test_apply_zero(tiny_fault):
    solver = tiny_fault[3]
    shape = (4,) + solver.stack.plane_shape
    assert not np.any(solver.sie.apply_M(np.zeros(shape)))


def test_apply_counts_one_solve_per_layer(tiny_four, rng):
    solver = tiny_four[3]
    solver.stack.reset_counters()
    solver.sie.apply_M(random_traces(rng, solver))
    assert solver.stack.solves == [1] * solver.part.L


@pytest.fixture(scope="module")
def probed_M(tiny_fault):
    solver = tiny_fault[3]
    shape = (solver.part.n_traces,) + solver.stack.plane_shape
    return probe_operator(solver.sie.apply_M, shape)


def test_probe_matches_matrix_free(tiny_fault, probed_M, rng):
    solver = tiny_fault[3]
    x = random_traces(rng, solver)
    y = solver.sie.apply_M(x)
    assert np.linalg.norm(probed_M @ x.ravel() - y.ravel()) <= 1e-10 * np.linalg.norm(y)


def test_block_banded(tiny_four):
    solver = tiny_four[3]
    P = solver.stack.plane_shape[0] * solver.stack.plane_shape[1]
    nt = solver.part.n_traces
    # unit plane on interface j reaches interfaces j-1, j, j+1 only
    for j in range(nt // 2):
        x = np.zeros((nt,) + solver.stack.plane_shape, dtype=complex)
        x[2 * j, 3, 4] = 1.0
        y = solver.sie.apply_M(x)
        hit = {i // 2 for i in range(nt) if np.any(y[i])}
        assert hit <= {j - 1, j, j + 1} and j in hit
    assert P > 0


def test_single_layer_reconstruct_is_global_solve():
    model, omega, pml, solver = _setup("fault", 9, 1, 3)
    f = point_source(model, (4, 4, 4))
    rhs, src = solver.sie.build_rhs(f)
    assert rhs.shape[0] == 0
    vol = solver.sie.reconstruct(rhs, src)
    ref = global_direct_solve(model, omega, pml, f)
    assert np.linalg.norm(vol - ref) <= 1e-10 * np.linalg.norm(ref)


def test_grf_identity_small():
    model, omega, pml, solver = _setup("smooth_random", 10, 3, 3, seed=7)
    f = point_source(model, (3, 4, 5)) + point_source(model, (7, 2, 1), 2j)
    ext = global_direct_solve(model, omega, pml, f, return_extended=True)
    traces = restrict_to_interfaces(ext, solver.part, pml.alpha)
    rhs, src = solver.sie.build_rhs(f)
    a = pml.alpha
    ref = ext[a:-a, a:-a, a:-a]
    vol = solver.sie.reconstruct(traces, src)
    assert np.linalg.norm(vol - ref) <= 1e-8 * np.linalg.norm(ref)
    r = solver.sie.apply_M(traces) - rhs
    assert np.linalg.norm(r) <= 1e-10 * np.linalg.norm(rhs)


def test_dense_sie_solution_is_restricted_global(tiny_fault, probed_M):
    model, omega, pml, solver = tiny_fault
    f = point_source(model, (6, 5, 6))
    rhs, _ = solver.sie.build_rhs(f)
    u = np.linalg.solve(probed_M, rhs.ravel())
    ext = global_direct_solve(model, omega, pml, f, return_extended=True)
    ref = restrict_to_interfaces(ext, solver.part, pml.alpha).ravel()
    assert np.linalg.norm(u - ref) <= 1e-8 * np.linalg.norm(ref)


def test_linearity(tiny_four, rng):
    model, _, _, solver = tiny_four
    a, b = random_traces(rng, solver), random_traces(rng, solver)
    sie = solver.sie
    lhs = sie.apply_M(2 * a - 3j * b)
    assert np.linalg.norm(lhs - 2 * sie.apply_M(a) + 3j * sie.apply_M(b)) <= 1e-12 * np.linalg.norm(lhs)
    f = rng.standard_normal((2,) + model.shape) + 0j
    _, src = sie.build_rhs(0.5 * f[0] + f[1])
    _, s0 = sie.build_rhs(f[0])
    _, s1 = sie.build_rhs(f[1])
    x = sie.reconstruct(0.5 * a + b, src)
    y = 0.5 * sie.reconstruct(a, s0) + sie.reconstruct(b, s1)
    assert np.linalg.norm(x - y) <= 1e-12 * np.linalg.norm(y)


def test_shape_errors(tiny_fault):
    solver = tiny_fault[3]
    with pytest.raises(ContractError):
        solver.sie.apply_M(np.zeros((3, 2, 2)))
    with pytest.raises(ContractError):
        solver.sie.build_rhs(np.zeros((4, 4, 4)))


def test_homogeneous_benchmark_setup():
    model = make_benchmark_model("homogeneous", 8)
    assert frequency_for_ppw(model, 10) == pytest.approx(2 * np.pi * 9 / 10)
    assert PmlConfig().alpha == 10
