import numpy as np
import pytest

from fqr.basis import build_basis, compute_gram_set
from fqr.design import assemble_design
from fqr.simlab import SimScenario, generate

ACCEPTANCE_LINES: list = []


def report(criterion: str, ok: bool, detail: str) -> None:
    """Record one acceptance result for the terminal summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_problem():
    """Scenario I data at n=300 with a coarse basis, for quick solver tests."""
    sc = SimScenario.named("normal", n=300, seed=11)
    data = generate(sc)
    basis = build_basis(sc.domain, 20, 3)
    gs = compute_gram_set(basis, 2)
    return sc, data, basis, gs, assemble_design(data, basis)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
