import json

import pytest

from ttcbarrier.cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_DISAGREEMENT,
    EXIT_OK,
    RunConfig,
    canonical_json,
    load_config,
    main,
    parse_window_spec,
)

from conftest import SOLVER

requires_solver = pytest.mark.skipif(SOLVER is None, reason="no SMT solver available")


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


class TestVerify:
    def test_emit_only_writes_the_golden_query(self, tmp_path, smt_fixtures):
        out = tmp_path / "v"
        code = run_cli("--out", out, "verify", "--mode", "open", "--n", "2", "--emit-only")
        assert code == EXIT_OK
        assert (out / "query.smt2").read_bytes() == (smt_fixtures / "open_n2.smt2").read_bytes()
        assert not (out / "verdict.json").exists()

    @requires_solver
    def test_open_loop_run(self, tmp_path):
        out = tmp_path / "open"
        assert run_cli("--out", out, "verify", "--mode", "open", "--n", "2") == EXIT_OK
        verdict = json.loads((out / "verdict.json").read_text())
        assert verdict["status"] == "sat"
        assert verdict["validated"] is True
        assert verdict["oracle_agreement"] is True
        assert verdict["oracle_counterexample"]["validated"] is True
        assert verdict["config_digest"]
        assert verdict["tool_version"]

    @requires_solver
    def test_closed_loop_run(self, tmp_path):
        out = tmp_path / "closed"
        assert run_cli("--out", out, "verify", "--mode", "closed", "--n", "2") == EXIT_OK
        verdict = json.loads((out / "verdict.json").read_text())
        assert verdict["status"] == "unsat"
        assert verdict["model"] is None
        assert verdict["oracle_counterexample"] is None
        assert verdict["oracle_agreement"] is True

    def test_bad_solver_path_is_a_config_error(self, tmp_path, monkeypatch):
        monkeypatch.delenv("BCV_SOLVER", raising=False)
        code = run_cli(
            "--out", tmp_path, "verify", "--mode", "open",
            "--solver", "/nonexistent/solver",
        )
        assert code == EXIT_CONFIG

    def test_too_few_vehicles_is_a_config_error(self, tmp_path):
        assert (
            run_cli("--out", tmp_path, "verify", "--mode", "open", "--n", "1", "--emit-only")
            == EXIT_CONFIG
        )

    def test_gibberish_solver_output_fails_verification(self, tmp_path):
        import stat
        import sys as _sys

        babbler = tmp_path / "babbler.py"
        babbler.write_text(f"#!{_sys.executable}\nprint('lorem ipsum')\n")
        babbler.chmod(babbler.stat().st_mode | stat.S_IXUSR)
        code = run_cli(
            "--out", tmp_path / "g", "verify", "--mode", "open", "--solver", babbler
        )
        assert code == EXIT_DISAGREEMENT


class TestScan:
    def test_fixture_counts(self, tmp_path, data_dir):
        out = tmp_path / "scan"
        code = run_cli("--out", out, "scan", data_dir / "three_lane.csv")
        assert code == EXIT_OK
        report = json.loads((out / "conflicts.json").read_text())
        per_lane = {entry["lane"]: entry["conflicts"] for entry in report["per_lane"]}
        assert per_lane == {2: 88, 3: 24}
        assert report["total_conflicts"] == 112
        assert len(report["events"]) == 3
        csv_lines = (out / "ttc_per_frame.csv").read_text().splitlines()
        assert csv_lines[0].startswith("# config_digest=")
        assert csv_lines[2] == "frame,lane,follower,leader,ttc,class"
        assert len(csv_lines) == 3 + report["pair_rows"]

    def test_zero_conflict_fixture(self, tmp_path, data_dir):
        out = tmp_path / "scan0"
        assert run_cli("--out", out, "scan", data_dir / "positional_fallback.csv") == EXIT_OK
        report = json.loads((out / "conflicts.json").read_text())
        assert report["events"] == []
        assert report["total_conflicts"] == 0

    def test_malformed_csv_exits_with_data_error(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("frame,id,x\n0,1,5\n")
        assert run_cli("--out", tmp_path / "o", "scan", bad) == EXIT_DATA

    def test_missing_file_exits_with_data_error(self, tmp_path):
        assert run_cli("--out", tmp_path, "scan", tmp_path / "nope.csv") == EXIT_DATA

    def test_window_flag(self, tmp_path, data_dir):
        out = tmp_path / "w"
        code = run_cli(
            "--out", out, "scan", data_dir / "two_vehicle_closing.csv", "--window", "0:60"
        )
        assert code == EXIT_OK
        report = json.loads((out / "conflicts.json").read_text())
        assert report["window"] == [0, 60]
        assert report["total_conflicts"] == 9


class TestAdjust:
    def test_instantaneous_reaches_full_reduction(self, tmp_path, data_dir):
        out = tmp_path / "adj"
        code = run_cli("--out", out, "adjust", data_dir / "two_vehicle_closing.csv")
        assert code == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert report["totals"]["before"] == 74
        assert report["totals"]["after"] == 0
        lane_rows = [
            line
            for line in (out / "report.csv").read_text().splitlines()
            if not line.startswith("#")
        ]
        assert lane_rows == ["lane,before,after,reduction_pct", "2,74,0,100.000000"]
        hist = (out / "hist_before.csv").read_text().splitlines()
        assert hist[2] == "bin_low,bin_high,count"
        assert len(hist) == 3 + 40

    def test_decel_limited_is_partial(self, tmp_path, data_dir):
        out = tmp_path / "adj2"
        code = run_cli(
            "--out", out, "adjust", data_dir / "three_lane.csv",
            "--strategy", "decel-limited",
        )
        assert code == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert 0 < report["totals"]["reduction_pct"] < 100
        for entry in report["per_lane"]:
            assert entry["after"] <= entry["before"]

    def test_runs_are_byte_deterministic(self, tmp_path, data_dir):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        for out in (out_a, out_b):
            assert run_cli("--out", out, "adjust", data_dir / "three_lane.csv") == EXIT_OK
        for name in ("report.json", "report.csv", "hist_before.csv", "hist_after.csv"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name

    def test_propagated_mode_flag(self, tmp_path, data_dir):
        out = tmp_path / "prop"
        code = run_cli(
            "--out", out, "adjust", data_dir / "two_vehicle_closing.csv",
            "--adjust-mode", "propagated",
        )
        assert code == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert report["adjust_mode"] == "propagated"
        assert report["totals"]["after"] == 0


class TestConfig:
    def test_config_file_overrides_defaults(self, tmp_path, data_dir):
        config = tmp_path / "run.toml"
        config.write_text(
            "[barrier]\nt_safe = 1.5\n\n[report]\nwindow = \"all\"\n"
        )
        out = tmp_path / "cfg"
        code = run_cli(
            "--config", config, "--out", out, "scan", data_dir / "two_vehicle_closing.csv"
        )
        assert code == EXIT_OK
        report = json.loads((out / "conflicts.json").read_text())
        # gap < 1.5 * 10 starts at frame 88 (t > 3.5 s): 124 - 88 + 1 rows
        assert report["t_safe"] == 1.5
        assert report["total_conflicts"] == 37

    def test_bad_toml_is_a_config_error(self, tmp_path):
        config = tmp_path / "broken.toml"
        config.write_text("[barrier\nt_safe = ")
        assert run_cli("--config", config, "--out", tmp_path, "verify", "--mode", "open") == EXIT_CONFIG

    def test_missing_config_file_is_a_config_error(self, tmp_path):
        assert (
            run_cli("--config", tmp_path / "absent.toml", "--out", tmp_path,
                    "verify", "--mode", "open", "--emit-only")
            == EXIT_CONFIG
        )

    def test_invalid_strategy_kind(self, tmp_path):
        config = tmp_path / "run.toml"
        config.write_text("[strategy]\nkind = \"teleport\"\n")
        assert (
            run_cli("--config", config, "--out", tmp_path, "verify",
                    "--mode", "open", "--emit-only")
            == EXIT_CONFIG
        )

    def test_bad_window_spec(self, tmp_path, data_dir):
        code = run_cli(
            "--out", tmp_path, "scan", data_dir / "two_vehicle_closing.csv",
            "--window", "sideways",
        )
        assert code == EXIT_CONFIG

    def test_unknown_flag_is_a_config_error(self, tmp_path):
        assert run_cli("--frobnicate") == EXIT_CONFIG

    def test_window_spec_parsing(self):
        assert parse_window_spec("all", (0, 100)) is None
        assert parse_window_spec("30", (10, 100)) == (10, 40)
        assert parse_window_spec("5:25", (0, 100)) == (5, 25)

    def test_json_only_format_skips_csv_artifacts(self, tmp_path, data_dir):
        config = tmp_path / "run.toml"
        config.write_text('[report]\nformats = ["json"]\n')
        out = tmp_path / "jsononly"
        code = run_cli(
            "--config", config, "--out", out, "adjust", data_dir / "two_vehicle_closing.csv"
        )
        assert code == EXIT_OK
        assert (out / "report.json").exists()
        assert not (out / "report.csv").exists()
        assert not (out / "hist_before.csv").exists()

    def test_empty_preceding_mapping_disables_id_pairing(self, tmp_path, data_dir):
        config = tmp_path / "run.toml"
        config.write_text('[ingest]\npreceding = ""\n')
        out = tmp_path / "pos"
        code = run_cli(
            "--config", config, "--out", out, "scan", data_dir / "two_vehicle_closing.csv"
        )
        assert code == EXIT_OK
        report = json.loads((out / "conflicts.json").read_text())
        assert report["total_conflicts"] == 74  # positional chain finds the same pair

    def test_digest_ignores_output_location(self):
        a = RunConfig()
        b = RunConfig()
        b.out_dir = a.out_dir / "elsewhere"
        b.solver_executable = "/some/other/z3"
        assert a.digest() == b.digest()

    def test_digest_tracks_semantic_changes(self, tmp_path):
        config_file = tmp_path / "c.toml"
        config_file.write_text("[barrier]\nt_safe = 2.0\n")
        assert load_config(config_file).digest() != RunConfig().digest()


class TestCanonicalJson:
    def test_sorted_keys_and_fixed_decimals(self):
        text = canonical_json({"b": 1.0, "a": [1, 2.5], "c": {"x": True, "y": None}})
        assert text.index('"a"') < text.index('"b"') < text.index('"c"')
        assert "2.500000" in text and "1.000000" in text

    def test_nan_maps_to_null(self):
        assert canonical_json(float("nan")) == "null"

    def test_round_trips_as_json(self):
        payload = {"nested": {"list": [1, 2.0, "three", None, False]}}
        assert json.loads(canonical_json(payload)) == {
            "nested": {"list": [1, 2.0, "three", None, False]}
        }
