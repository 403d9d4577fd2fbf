import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

from gamblets import FemGrid, assemble, build_hierarchy, multiscale_coefficient  # noqa: E402
from gamblets.discretization import laplacian_coefficient  # noqa: E402

ACCEPTANCE = {}


@pytest.fixture(scope="session")
def setups():
    """``setups(r, kind)`` -> ``(tree, cells, asm)``, cached per session."""
    cache = {}

    def get(r, kind="multiscale"):
        if (r, kind) not in cache:
            coeff = multiscale_coefficient(r) if kind == "multiscale" else laplacian_coefficient(r)
            tree, cells = build_hierarchy(r)
            cache[(r, kind)] = (tree, cells, assemble(FemGrid(r), coeff))
        return cache[(r, kind)]

    return get


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
