"""External SMT solver driver and an independent brute-force grid oracle.

The solver is any SMT-LIB v2 compliant executable: one process per query,
query text on stdin or as a temp-file argument, verdict read from stdout
(exit codes are ignored in favor of output parsing).

The grid oracle cross-checks solver verdicts by exhaustive evaluation over
reduced coordinates. The barrier and its derivative depend on the pair state
only through (g, d, a_f, a_l) - gap, closing speed and the two accelerations
- so a grid over those four dimensions covers every behavior of the full
(x, v, a) encoding within its bounds, at a fraction of the search space.
"""
from __future__ import annotations

import logging
import os
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._backend import kernels
from .smtlib import (
    InvalidSpec,
    ModelAssignment,
    QueryMode,
    QuerySpec,
    parse_solver_output,
)

logger = logging.getLogger(__name__)

SOLVER_ENV_VAR = "BCV_SOLVER"
_KNOWN_SOLVERS = ("z3", "cvc5", "cvc4", "yices-smt2", "mathsat")


@dataclass(frozen=True)
class SolverConfig:
    """How to launch the external solver.

    With ``use_stdin`` false (the default) the query is written to a
    temporary ``.smt2`` file passed as the last argument, which plain
    ``z3``/``cvc5`` binaries accept with no extra flags.
    """

    executable: str
    extra_args: tuple[str, ...] = ()
    timeout: float = 30.0
    use_stdin: bool = False

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError(f"timeout must be positive, got {self.timeout}")


@dataclass(frozen=True)
class SolverRun:
    """Outcome of one solver invocation.

    ``status`` is sat/unsat/unknown from the solver's output, or
    timeout/launch_failure for process-level failures; ``output`` keeps the
    raw transcript for reporting.
    """

    status: str
    model: ModelAssignment | None = None
    detail: str = ""
    output: str = ""


def find_solver() -> str | None:
    """Locate a solver executable: BCV_SOLVER if set, else well-known names
    on PATH."""
    override = os.environ.get(SOLVER_ENV_VAR)
    if override:
        return override
    for name in _KNOWN_SOLVERS:
        path = shutil.which(name)
        if path:
            return path
    return None


def run_solver(query_text: str, config: SolverConfig) -> SolverRun:
    """Run one solver process on one query and parse its verdict.

    Timeouts terminate the process; parse errors propagate to the caller
    since they indicate a solver/protocol mismatch rather than a verdict.
    """
    cmd = [config.executable, *config.extra_args]
    tmp_path = None
    try:
        if config.use_stdin:
            proc = subprocess.run(
                cmd,
                input=query_text.encode(),
                capture_output=True,
                timeout=config.timeout,
            )
        else:
            fd, tmp_path = tempfile.mkstemp(suffix=".smt2")
            with os.fdopen(fd, "w") as handle:
                handle.write(query_text)
            proc = subprocess.run(
                cmd + [tmp_path],
                capture_output=True,
                timeout=config.timeout,
            )
    except subprocess.TimeoutExpired:
        return SolverRun("timeout", detail=f"no verdict within {config.timeout}s")
    except OSError as exc:
        return SolverRun("launch_failure", detail=str(exc))
    finally:
        if tmp_path is not None:
            try:
                os.unlink(tmp_path)
            except OSError:
                pass

    output = proc.stdout.decode("utf-8", errors="replace")
    if proc.stderr:
        logger.debug("solver stderr: %s", proc.stderr.decode(errors="replace"))
    response = parse_solver_output(output)
    return SolverRun(response.status, response.model, output=output)


@dataclass(frozen=True)
class GridBounds:
    """Closed intervals for the reduced coordinates plus samples per axis."""

    gap: tuple[float, float] = (1.0, 100.0)
    closing: tuple[float, float] = (0.5, 20.0)
    follower_accel: tuple[float, float] = (-6.0, 3.0)
    leader_accel: tuple[float, float] = (-6.0, 3.0)
    resolution: int = 50

    def __post_init__(self) -> None:
        for name in ("gap", "closing", "follower_accel", "leader_accel"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} interval must have lower < upper: ({lo}, {hi})")
        if self.resolution < 2:
            raise ValueError(f"resolution must be at least 2, got {self.resolution}")

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        res = self.resolution
        return (
            np.linspace(self.gap[0], self.gap[1], res),
            np.linspace(self.closing[0], self.closing[1], res),
            np.linspace(self.follower_accel[0], self.follower_accel[1], res),
            np.linspace(self.leader_accel[0], self.leader_accel[1], res),
        )


@dataclass(frozen=True)
class GridCounterexample:
    """A reduced-coordinate state violating the barrier condition."""

    gap: float
    closing: float
    follower_accel: float
    leader_accel: float
    barrier: float
    barrier_dot: float

    def to_model(self, spec: QuerySpec) -> ModelAssignment:
        """Lift the reduced state to a full n-vehicle model on pair (1, 0).

        Remaining vehicles are padded far apart with infinitesimal closing
        speeds and filter-satisfying accelerations, so the lifted model
        passes every base assertion of both query modes.
        """
        values: dict[str, Fraction] = {}
        # room for the padded platoon behind vehicle 1 while keeping x > 0
        x1 = Fraction(100) + (spec.n - 2) * (Fraction(20) + Fraction(spec.length))
        values["x_1"] = x1
        values["x_0"] = x1 + Fraction(self.gap) + Fraction(spec.length)
        v0 = Fraction(1)
        values["v_0"] = v0
        values["v_1"] = v0 + Fraction(self.closing)
        values["a_0"] = Fraction(self.leader_accel)
        values["a_1"] = Fraction(self.follower_accel)
        pad_gap = Fraction(20)
        pad_closing = Fraction(1, 1000)
        for i in range(2, spec.n):
            values[f"x_{i}"] = values[f"x_{i - 1}"] - pad_gap - Fraction(spec.length)
            values[f"v_{i}"] = values[f"v_{i - 1}"] + pad_closing
            values[f"a_{i}"] = values[f"a_{i - 1}"]
        return ModelAssignment(values)


def grid_oracle_search(
    spec: QuerySpec, bounds: GridBounds | None = None
) -> GridCounterexample | None:
    """Exhaustive scan for a barrier-condition violation.

    Evaluates B >= 0 and dB/dt < 0 (and, in closed-loop mode, the safety
    filter) over the full grid, in deterministic gap-major order; returns
    the first violating state or None once the grid is exhausted.
    """
    if spec.n < 2:
        raise InvalidSpec(f"need at least 2 vehicles for a pair, got n={spec.n}")
    if bounds is None:
        bounds = GridBounds()
    g_axis, d_axis, af_axis, al_axis = bounds.axes()
    hit = kernels.grid_search(
        g_axis,
        d_axis,
        af_axis,
        al_axis,
        spec.params.t_safe,
        spec.mode is QueryMode.CLOSED_LOOP,
        spec.params.eps,
    )
    if hit is None:
        return None
    g, d, af, al, b, bdot = hit
    return GridCounterexample(g, d, af, al, b, bdot)
