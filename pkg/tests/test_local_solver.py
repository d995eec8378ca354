import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from poltrace.discretization import PmlConfig, StretchedOperator, discretize_local
from poltrace.errors import ContractError, FactorizationError, ResourceError
from poltrace.local_solver import (estimate_factor_entries, factorize, factorize_all, local_solve,
                                   nested_dissection)
from poltrace.oracles import make_benchmark_model


def _op(matrix, shape):
    return StretchedOperator(sp.csr_matrix(matrix, dtype=np.complex128), shape, 1.0, 1.0, 1)


@pytest.fixture(scope="module")
def layer_op():
    model = make_benchmark_model("smooth_random", 10, seed=5)
    return discretize_local(model, 18.0, PmlConfig(3), 2, 4, layer=0)


def test_identity():
    f = factorize(_op(sp.identity(27), (3, 3, 3)))
    b = np.arange(27) + 1j
    assert np.array_equal(f.solve(b), b)
    eye = np.eye(27)
    assert np.array_equal(f.lu.L.toarray(), eye) and np.array_equal(f.lu.U.toarray(), eye)


def test_1d_helmholtz_against_dense():
    n = 8
    A = (sp.diags([1, -2, 1], [-1, 0, 1], shape=(n, n)) * 81 + 30 * sp.identity(n)).astype(complex)
    A = A + sp.diags(1j * np.linspace(0, 3, n))
    f = factorize(_op(A, (1, 1, n)))
    b = np.linspace(1, 2, n) + 0.5j
    ref = np.linalg.solve(A.toarray(), b)
    assert np.allclose(f.solve(b), ref, rtol=1e-12, atol=0)


def test_zero_rhs(layer_op):
    f = factorize(layer_op)
    assert not np.any(f.solve(np.zeros(layer_op.size)))


def test_self_consistency(layer_op):
    f = factorize(layer_op)
    e = np.random.default_rng(0).standard_normal(layer_op.size) + 0.3j
    x = local_solve(f, layer_op.matrix @ e)
    assert np.linalg.norm(x - e) <= 1e-10 * np.linalg.norm(e)
    b = layer_op.matrix @ e
    assert np.linalg.norm(layer_op.matrix @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_deterministic_and_batched(layer_op):
    f1, f2 = factorize(layer_op), factorize(layer_op)
    rng = np.random.default_rng(1)
    B = rng.standard_normal((layer_op.size, 4)) + 1j * rng.standard_normal((layer_op.size, 4))
    X = f1.solve(B)
    assert np.array_equal(X, f2.solve(B))
    for k in range(4):
        assert np.array_equal(X[:, k], f1.solve(B[:, k]))
    assert f1.solves == 8


def test_linearity(layer_op):
    f = factorize(layer_op)
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((2, layer_op.size)) + 0j
    lhs = f.solve(2.5 * a - 1j * b)
    rhs = 2.5 * f.solve(a) - 1j * f.solve(b)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(rhs)


def test_size_mismatch(layer_op):
    f = factorize(layer_op)
    with pytest.raises(ContractError):
        f.solve(np.zeros(layer_op.size + 1))


def test_singular_pivot_names_layer():
    A = sp.identity(8, format="lil", dtype=complex)
    A[3, 3] = 0.0
    with pytest.raises(FactorizationError) as info:
        factorize(_op(A.tocsr(), (2, 2, 2)), layer=7)
    assert info.value.layer == 7 and "layer 7" in str(info.value)


def test_shared_factorizations():
    model = make_benchmark_model("homogeneous", 8)
    ops = [discretize_local(model, 10.0, PmlConfig(2), z, 4, layer=i) for i, z in enumerate((0, 4))]
    facts = factorize_all(ops)
    assert facts[0] is facts[1]
    assert factorize_all(ops, dedupe=False)[0] is not factorize_all(ops, dedupe=False)[1]


def test_memory_cap(layer_op):
    with pytest.raises(ResourceError):
        factorize(layer_op, memory_cap=1024)


def test_estimate_tracks_fill(layer_op):
    f = factorize(layer_op)
    est = estimate_factor_entries(layer_op.shape)
    assert 0.3 < est / f.nnz < 3.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 12), st.sampled_from([1, 8, 64]))
def test_nested_dissection_is_permutation(a, b, c, leaf):
    p = nested_dissection((a, b, c), leaf=leaf)
    assert np.array_equal(np.sort(p), np.arange(a * b * c))
