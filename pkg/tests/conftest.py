import numpy as np
import pytest

from poltrace.oracles import probe_operator
from poltrace.verification import _setup

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def tiny_fault():
    """n=12, L=3 fault model with a 4-point PML (probe-sized)."""
    model, omega, pml, solver = _setup("fault", 12, 3, 4)
    return model, omega, pml, solver


@pytest.fixture(scope="session")
def tiny_four():
    """n=12, L=4 smooth model."""
    return _setup("smooth_random", 12, 4, 4, seed=3)


@pytest.fixture(scope="session")
def probed(tiny_fault):
    solver = tiny_fault[3]
    pol = solver.polar
    shape = (solver.part.n_traces,) + solver.stack.plane_shape
    pshape = (2 * shape[0],) + shape[1:]
    return {
        "D_down": probe_operator(pol.apply_D_down, shape),
        "D_up": probe_operator(pol.apply_D_up, shape),
        "L": probe_operator(pol.apply_L, shape),
        "U": probe_operator(pol.apply_U, shape),
        "Mbar": probe_operator(pol.apply_polarized, pshape),
        "M": probe_operator(solver.sie.apply_M, shape),
        "P": probe_operator(pol.apply_preconditioner, pshape),
    }


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_traces(rng, solver, batch=None, polarized=False):
    shape = (solver.part.n_traces * (2 if polarized else 1),) + solver.stack.plane_shape
    if batch is not None:
        shape = (batch,) + shape
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
