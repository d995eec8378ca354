import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from poltrace.discretization import (PmlConfig, VelocityModel, discretize_global, discretize_local,
                                     frequency_for_ppw, pml_profile, second_difference)
from poltrace.errors import ContractError, InvalidPartitionError
from poltrace.oracles import global_direct_solve, make_benchmark_model, point_source


def test_profile_is_one_in_bulk():
    pml = PmlConfig(5, 30.0)
    x = np.linspace(0, 1.0, 11)
    assert np.all(pml_profile(x, 1.0, pml, 0.1, 7.0) == 1.0)


def test_profile_endpoint():
    pml = PmlConfig(5, 30.0)
    h, omega = 0.1, 7.0
    delta = pml.delta(h)
    beta = pml_profile(-delta, 1.0, pml, h, omega)
    assert beta == pytest.approx(1 / (1 + 1j * 30.0 / (delta * omega)))


def test_profile_half_depth():
    pml = PmlConfig(4, 12.0)
    h, omega, Lx = 0.05, 3.0, 1.0
    delta = pml.delta(h)
    x = Lx + delta / 2
    sigma = 12.0 / delta * ((x - Lx) / delta) ** 2
    assert sigma == pytest.approx(12.0 / (4 * delta))
    assert pml_profile(x, Lx, pml, h, omega) == pytest.approx(1 / (1 + 1j * sigma / omega))


def test_pml_config_validation():
    with pytest.raises(ContractError):
        PmlConfig(0)
    with pytest.raises(ContractError):
        PmlConfig(3, -1.0)
    assert PmlConfig.log_scaled(50).alpha == 10
    assert PmlConfig.log_scaled(400).alpha > 10


def test_model_validation():
    with pytest.raises(ContractError):
        VelocityModel(np.zeros((2, 2, 2)), 0.1)
    with pytest.raises(ContractError):
        VelocityModel(np.ones((2, 2)), 0.1)
    with pytest.raises(ContractError):
        VelocityModel(np.ones((2, 2, 2)), 0.0)
    with pytest.raises(ContractError):
        VelocityModel(np.full((2, 2, 2), np.nan), 0.1)


def test_model_roundtrip(tmp_path):
    m = make_benchmark_model("smooth_random", 9, seed=2)
    path = m.save(tmp_path / "m.json")
    back = VelocityModel.load(path)
    assert np.array_equal(back.m, m.m) and back.h == m.h
    raw = np.fromfile(tmp_path / "m.bin", dtype="<f8")
    assert raw[1] == m.m[0, 0, 1]  # z fastest


def test_single_node_size():
    model = VelocityModel(np.ones((1, 1, 1)), 0.5)
    op = discretize_global(model, 1.0, PmlConfig(1))
    assert op.shape == (3, 3, 3) and op.size == 27


def test_unstretched_stencil():
    model = VelocityModel(np.full((4, 4, 4), 0.25), 0.1)
    omega = 5.0
    op = discretize_global(model, omega, PmlConfig(2, 0.0))
    A = op.matrix.toarray()
    h2 = 1 / 0.1**2
    assert np.allclose(np.diag(A), -6 * h2 + omega**2 * 0.25, rtol=0, atol=1e-9)
    off = A - np.diag(np.diag(A))
    assert set(np.unique(off[off != 0]).round(9)) == {round(h2, 9)}


def test_c_zero_matches_plain_laplacian():
    n = 5
    model = VelocityModel(np.ones((n, n, n)), 0.2)
    op = discretize_global(model, 2.0, PmlConfig(2, 0.0))
    N = n + 4
    d = sp.diags([1, -2, 1], [-1, 0, 1], shape=(N, N)) / 0.2**2
    I = sp.identity(N)
    lap = sp.kron(sp.kron(d, I), I) + sp.kron(sp.kron(I, d), I) + sp.kron(I, sp.kron(I, d))
    ref = (lap + 4.0 * sp.identity(N**3)).toarray()
    assert np.array_equal(op.matrix.toarray(), ref.astype(complex))


def test_stencil_shape():
    model = make_benchmark_model("fault", 8)
    op = discretize_global(model, 4.0, PmlConfig(3))
    A = op.matrix.tocsr()
    assert np.diff(A.indptr).max() <= 7
    pattern = (A != 0).astype(int)
    assert (pattern - pattern.T).nnz == 0


def test_stretched_operator_symmetrizable():
    # diag(1 / (beta_x beta_y beta_z)) H is symmetric
    n, a = 4, 2
    pml = PmlConfig(a, 20.0)
    h, omega = 0.2, 3.0
    D = second_difference(n, pml, h, omega).toarray()
    nodes = (np.arange(n + 2 * a) - a + 1) * h
    beta = pml_profile(nodes, (n + 1) * h, pml, h, omega)
    S = np.diag(1 / beta) @ D
    assert np.allclose(S, S.T, atol=1e-12)


def test_full_layer_equals_global():
    model = make_benchmark_model("smooth_random", 8, seed=1)
    pml = PmlConfig(3)
    g = discretize_global(model, 5.0, pml)
    loc = discretize_local(model, 5.0, pml, 0, model.nz)
    assert g.shape == loc.shape
    assert (g.matrix != loc.matrix).nnz == 0


def test_local_extent():
    model = make_benchmark_model("homogeneous", 8)
    op = discretize_local(model, 5.0, PmlConfig(4), 3, 2)
    assert op.shape == (16, 16, 10)
    with pytest.raises(InvalidPartitionError):
        discretize_local(model, 5.0, PmlConfig(4), 3, 0)
    with pytest.raises(InvalidPartitionError):
        discretize_local(model, 5.0, PmlConfig(4), 7, 2)


def _row_block(op, planes):
    A = op.matrix.tocsr()
    Px, Py, Nz = op.shape
    rows = np.arange(op.size).reshape(op.shape)[:, :, planes].ravel()
    return A[rows]


def test_adjacent_layers_share_interior_rows():
    model = make_benchmark_model("homogeneous", 10)
    pml = PmlConfig(3)
    a = pml.alpha
    top = discretize_local(model, 6.0, pml, 0, 5)
    bot = discretize_local(model, 6.0, pml, 5, 5)
    # bulk planes 1..3 of each layer touch no z-PML node
    A, B = _row_block(top, list(range(a + 1, a + 4))), _row_block(bot, list(range(a + 1, a + 4)))
    assert (A != B).nnz == 0


def test_local_rows_match_global_away_from_z_pml():
    model = make_benchmark_model("smooth_random", 10, seed=4)
    pml = PmlConfig(3)
    a = pml.alpha
    g = discretize_global(model, 6.0, pml)
    z0, t = 3, 4
    loc = discretize_local(model, 6.0, pml, z0, t)
    Px, Py, _ = loc.shape
    for k in range(1, t - 1):
        rl = _row_block(loc, [a + k]).toarray().reshape(Px * Py, Px, Py, loc.shape[2])
        rg = _row_block(g, [a + z0 + k]).toarray().reshape(Px * Py, Px, Py, g.shape[2])
        assert np.array_equal(rl[..., a + k - 1:a + k + 2], rg[..., a + z0 + k - 1:a + z0 + k + 2])
        assert not np.any(np.delete(rl, np.s_[a + k - 1:a + k + 2], axis=3))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 3),
       st.floats(0.0, 80.0))
def test_operator_size_and_pattern(nx, ny, nz, alpha, C):
    model = VelocityModel(np.ones((nx, ny, nz)), 0.1)
    op = discretize_global(model, 3.0, PmlConfig(alpha, C))
    assert op.size == (nx + 2 * alpha) * (ny + 2 * alpha) * (nz + 2 * alpha)
    A = op.matrix.tocsr()
    assert np.diff(A.indptr).max() <= 7
    pattern = (A != 0).astype(int)
    assert (pattern - pattern.T).nnz == 0


def test_frequency_for_ppw():
    model = make_benchmark_model("fault", 20)
    omega = frequency_for_ppw(model, 10)
    wavelength = 2 * np.pi * model.c_min / omega
    assert wavelength == pytest.approx(10 * model.h)


def test_pml_absorbs():
    # outer PML boundary vs bulk boundary on the n=20 homogeneous oracle run
    model = make_benchmark_model("homogeneous", 20)
    pml = PmlConfig()
    omega = frequency_for_ppw(model, 10)
    u = global_direct_solve(model, omega, pml, point_source(model, (10, 10, 10)), return_extended=True)
    a = pml.alpha
    faces_outer = [u[0], u[-1], u[:, 0], u[:, -1], u[:, :, 0], u[:, :, -1]]
    bulk = u[a:-a, a:-a, a:-a]
    faces_bulk = [bulk[0], bulk[-1], bulk[:, 0], bulk[:, -1], bulk[:, :, 0], bulk[:, :, -1]]
    outer = max(np.abs(f).max() for f in faces_outer)
    inner = max(np.abs(f).max() for f in faces_bulk)
    assert outer <= 1e-2 * inner
