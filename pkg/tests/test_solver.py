import os
import stat
import sys

import pytest

from ttcbarrier.kinematics import BarrierParams, pair_from_gap, barrier_derivative, barrier_value
from ttcbarrier.smtlib import (
    InvalidSpec,
    QueryMode,
    QuerySpec,
    build_query,
    emit_smtlib,
    validate_counterexample,
)
from ttcbarrier.solver import (
    GridBounds,
    SolverConfig,
    grid_oracle_search,
    run_solver,
)

OPEN_2 = QuerySpec(n=2, mode=QueryMode.OPEN_LOOP)
CLOSED_2 = QuerySpec(n=2, mode=QueryMode.CLOSED_LOOP)


def _script(tmp_path, name: str, body: str) -> str:
    path = tmp_path / name
    path.write_text(f"#!{sys.executable}\n{body}")
    path.chmod(path.stat().st_mode | stat.S_IXUSR)
    return str(path)


class TestRunSolver:
    def test_open_loop_is_sat_with_valid_model(self, solver_path):
        config = SolverConfig(executable=solver_path)
        run = run_solver(emit_smtlib(build_query(OPEN_2)), config)
        assert run.status == "sat"
        assert run.model is not None
        assert validate_counterexample(run.model, OPEN_2)

    def test_closed_loop_is_unsat(self, solver_path):
        config = SolverConfig(executable=solver_path)
        run = run_solver(emit_smtlib(build_query(CLOSED_2)), config)
        assert run.status == "unsat"

    def test_nonexistent_executable_is_launch_failure(self):
        config = SolverConfig(executable="/nonexistent/solver-binary")
        run = run_solver("(check-sat)\n", config)
        assert run.status == "launch_failure"
        assert run.detail

    def test_timeout_terminates_the_process(self, tmp_path):
        slow = _script(
            tmp_path, "slow.py", "import time\ntime.sleep(30)\nprint('unsat')\n"
        )
        config = SolverConfig(executable=slow, timeout=0.4)
        run = run_solver("(check-sat)\n", config)
        assert run.status == "timeout"

    def test_unknown_verdict_passes_through(self, tmp_path):
        shrug = _script(tmp_path, "shrug.py", "print('unknown')\n")
        run = run_solver("(check-sat)\n", SolverConfig(executable=shrug))
        assert run.status == "unknown"

    def test_stdin_protocol(self, tmp_path):
        echoer = _script(
            tmp_path,
            "stdin_solver.py",
            "import sys\n"
            "text = sys.stdin.read()\n"
            "print('unsat' if '(check-sat)' in text else 'unknown')\n",
        )
        config = SolverConfig(executable=echoer, use_stdin=True)
        assert run_solver("(check-sat)\n", config).status == "unsat"

    def test_exit_code_is_ignored_in_favor_of_output(self, tmp_path):
        grumpy = _script(
            tmp_path, "grumpy.py", "import sys\nprint('unsat')\nsys.exit(3)\n"
        )
        assert run_solver("x", SolverConfig(executable=grumpy)).status == "unsat"

    def test_timeout_must_be_positive(self):
        with pytest.raises(ValueError):
            SolverConfig(executable="z3", timeout=0.0)


class TestGridOracle:
    def test_open_loop_finds_a_counterexample(self):
        hit = grid_oracle_search(OPEN_2)
        assert hit is not None
        # equal accelerations always give dB/dt = -1; any grid point with
        # TTC at or above the threshold violates the condition
        assert hit.barrier >= 0.0
        assert hit.barrier_dot < 0.0
        pair = pair_from_gap(
            hit.gap,
            hit.closing,
            follower_accel=hit.follower_accel,
            leader_accel=hit.leader_accel,
        )
        params = BarrierParams()
        assert barrier_value(pair, params).value >= 0.0
        assert barrier_derivative(pair, params) < 0.0

    def test_closed_loop_finds_nothing(self):
        assert grid_oracle_search(CLOSED_2) is None

    def test_degenerate_closing_interval_finds_nothing(self):
        bounds = GridBounds(closing=(-5.0, 0.0))
        assert grid_oracle_search(OPEN_2, bounds) is None

    def test_search_is_deterministic(self):
        assert grid_oracle_search(OPEN_2) == grid_oracle_search(OPEN_2)

    def test_counterexample_lifts_to_a_valid_model(self):
        for n in (2, 3, 5):
            spec = QuerySpec(n=n, mode=QueryMode.OPEN_LOOP)
            hit = grid_oracle_search(spec)
            assert hit is not None
            assert validate_counterexample(hit.to_model(spec), spec)

    def test_agreement_with_solver(self, solver_path):
        config = SolverConfig(executable=solver_path)
        for spec in (OPEN_2, CLOSED_2):
            run = run_solver(emit_smtlib(build_query(spec)), config)
            assert (run.status == "sat") == (grid_oracle_search(spec) is not None)

    def test_spec_needs_two_vehicles(self):
        with pytest.raises(InvalidSpec):
            grid_oracle_search(QuerySpec(n=1))

    def test_bounds_validation(self):
        with pytest.raises(ValueError):
            GridBounds(gap=(5.0, 5.0))
        with pytest.raises(ValueError):
            GridBounds(resolution=1)


class TestEnvDiscovery:
    def test_env_var_wins(self, monkeypatch):
        from ttcbarrier.solver import find_solver

        monkeypatch.setenv("BCV_SOLVER", "/opt/solvers/bin/z3")
        assert find_solver() == "/opt/solvers/bin/z3"
