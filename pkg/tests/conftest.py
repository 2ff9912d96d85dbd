import os
import shutil
from pathlib import Path

import pytest

REPO = Path(__file__).resolve().parent.parent
DATA = Path(__file__).resolve().parent / "data"
SMT_FIXTURES = REPO / "fixtures" / "smt"


def _discover_solver() -> str | None:
    env = os.environ.get("BCV_SOLVER")
    if env:
        return env
    for name in ("z3", "cvc5"):
        path = shutil.which(name)
        if path:
            return path
    wrapper = REPO / "tools" / "solver" / "z3_smtlib.js"
    if (
        wrapper.exists()
        and (wrapper.parent / "node_modules").is_dir()
        and shutil.which("node")
    ):
        return str(wrapper)
    return None


SOLVER = _discover_solver()
if SOLVER is not None:
    # make the CLI's discovery chain find the same solver the tests use
    os.environ.setdefault("BCV_SOLVER", SOLVER)

requires_solver = pytest.mark.skipif(
    SOLVER is None, reason="no SMT solver available (set BCV_SOLVER)"
)


@pytest.fixture(scope="session")
def solver_path() -> str:
    if SOLVER is None:
        pytest.skip("no SMT solver available (set BCV_SOLVER)")
    return SOLVER


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def smt_fixtures() -> Path:
    return SMT_FIXTURES
