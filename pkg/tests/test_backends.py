"""The compiled extension and the numpy fallback must be interchangeable:
same API, bit-identical outputs."""
import os
import subprocess
import sys

import numpy as np
import pytest

from ttcbarrier import backend_name, get_kernels

try:
    compiled = get_kernels("compiled")
    HAVE_COMPILED = True
except ImportError:
    HAVE_COMPILED = False

fallback = get_kernels("python")

needs_compiled = pytest.mark.skipif(
    not HAVE_COMPILED, reason="compiled extension not built"
)

AXES = (
    np.linspace(1.0, 100.0, 50),
    np.linspace(0.5, 20.0, 50),
    np.linspace(-6.0, 3.0, 50),
    np.linspace(-6.0, 3.0, 50),
)


def random_pairs(n=100_000, seed=7):
    rng = np.random.default_rng(seed)
    return rng.uniform(-5.0, 150.0, n), rng.uniform(-10.0, 25.0, n)


@needs_compiled
class TestParity:
    def test_classification_is_bit_identical(self):
        gap, dv = random_pairs()
        assert np.array_equal(
            compiled.classify_pairs(gap, dv, 3.0), fallback.classify_pairs(gap, dv, 3.0)
        )

    def test_ttc_is_bit_identical(self):
        gap, dv = random_pairs()
        assert np.array_equal(
            compiled.ttc_pairs(gap, dv), fallback.ttc_pairs(gap, dv), equal_nan=True
        )

    @pytest.mark.parametrize("closed", [False, True])
    def test_grid_search_returns_the_same_first_point(self, closed):
        a = compiled.grid_search(*AXES, 3.0, closed, 1e-9)
        b = fallback.grid_search(*AXES, 3.0, closed, 1e-9)
        assert a == b

    def test_rollout_traces_are_bit_identical(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            lead = np.repeat(rng.uniform(-4.0, 2.0, 8), 30)
            cmd = np.repeat(rng.uniform(-2.0, 2.0, 8), 30)
            args = (
                0.0, float(rng.uniform(15.0, 30.0)),
                float(rng.uniform(30.0, 90.0)), 20.0, 5.0,
                cmd, lead, 3.0, 0.5, -6.0, 3.0, 1e-9, 0.04, True,
            )
            out_c = compiled.rollout_steps(*args)
            out_p = fallback.rollout_steps(*args)
            assert set(out_c) == set(out_p)
            for key in out_c:
                assert np.array_equal(out_c[key], out_p[key], equal_nan=True), key


class TestSelection:
    def test_active_backend_is_reported(self):
        assert backend_name() in ("compiled", "python")

    def test_unknown_backend_name_rejected(self):
        with pytest.raises(ValueError):
            get_kernels("fortran")

    def test_env_var_forces_the_fallback(self):
        env = dict(os.environ, TTCBARRIER_PURE_PYTHON="1")
        result = subprocess.run(
            [sys.executable, "-c", "import ttcbarrier; print(ttcbarrier.backend_name())"],
            capture_output=True,
            text=True,
            env=env,
        )
        assert result.stdout.strip() == "python"


class TestGridScanOrder:
    def test_first_point_is_gap_major(self):
        # the first violating point must be the smallest gap with a
        # barrier-eligible TTC, at the smallest closing speed and both
        # accelerations at their lower bounds (equal accelerations give
        # dB/dt = -1 < 0 immediately)
        hit = fallback.grid_search(*AXES, 3.0, False, 1e-9)
        g_axis, d_axis, af_axis, al_axis = AXES
        expected_g = next(
            float(g) for g in g_axis if g / d_axis[0] - 3.0 >= 0.0
        )
        assert hit[0] == expected_g
        assert hit[1] == d_axis[0]
        assert hit[2] == af_axis[0]
        assert hit[3] == al_axis[0]
