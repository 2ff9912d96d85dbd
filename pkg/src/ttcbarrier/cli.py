"""Command-line interface: verification runs, dataset scanning, and
speed-adjustment reports.

Subcommands
    verify --mode {open,closed} --n N [--emit-only]
        writes query.smt2; unless emit-only, runs the external solver and
        the grid oracle and writes verdict.json with
        {status, model, oracle_agreement, validated, ...}.
    scan <tracks.csv...>
        writes conflicts.json (events, per-lane counts, diagnostics) and
        ttc_per_frame.csv (frame, lane, follower, leader, ttc, class).
    adjust <tracks.csv...>
        writes report.json (full before/after report), report.csv
        (lane, before, after, reduction_pct), and hist_before.csv /
        hist_after.csv (TTC histogram bins: bin_low, bin_high, count).

Exit codes
    0   success (closed-loop unsat, open-loop sat with a validated model,
        or a completed scan/adjust)
    2   verification disagreement, validation failure, or an
        unknown/timeout verdict
    64  configuration errors (bad config file or flags, missing solver)
    65  data errors (unreadable/malformed dataset, empty window)

All artifacts are deterministic: JSON keys are sorted, floats carry six
fractional digits, CSVs embed provenance as leading '#' comment lines, and
every artifact carries the config digest and tool version. The .smt2 query
file is emitted verbatim (no provenance header) so it stays byte-identical
to the golden corpus. The BCV_SOLVER environment variable overrides the
configured solver path; an explicit --solver flag beats both.

Config file: a single TOML document with optional sections [barrier],
[query], [oracle], [ingest], [strategy], [solver] and [report] mirroring
the run configuration; see the README for a complete example.
"""
from __future__ import annotations

import argparse
import hashlib
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from ._backend import backend_name
from .ingest import IngestError, IngestSchema, PositionReference, load_dataset
from .kinematics import BarrierParams
from .pipeline import (
    AdjustmentMode,
    DecelLimited,
    EmptyWindow,
    Instantaneous,
    apply_adjustment,
    scan_conflicts,
)
from .smtlib import (
    MissingModel,
    ParseError,
    QueryMode,
    QuerySpec,
    StateBounds,
    build_query,
    emit_smtlib,
    validate_counterexample,
)
from .solver import (
    SOLVER_ENV_VAR,
    GridBounds,
    SolverConfig,
    find_solver,
    grid_oracle_search,
    run_solver,
)

EXIT_OK = 0
EXIT_DISAGREEMENT = 2
EXIT_CONFIG = 64
EXIT_DATA = 65

_CLASS_NAMES = {0: "safe", 1: "conflict", 2: "collision"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Resolved run configuration; the digest covers the semantic fields
    only (not output placement or the solver's filesystem path)."""

    params: BarrierParams = field(default_factory=BarrierParams)
    schema: IngestSchema = field(default_factory=IngestSchema)
    bounds: StateBounds = field(default_factory=StateBounds)
    grid: GridBounds = field(default_factory=GridBounds)
    length: float = 5.0
    n: int = 2
    strategy_kind: str = "instantaneous"
    strategy_t_target: float | None = None
    strategy_dt: float | None = None
    adjust_mode: AdjustmentMode = AdjustmentMode.PER_FRAME
    window_spec: str = "all"
    formats: tuple[str, ...] = ("json", "csv")
    solver_executable: str | None = None
    solver_args: tuple[str, ...] = ()
    solver_timeout: float = 30.0
    solver_use_stdin: bool = False
    out_dir: Path = Path("out")

    def strategy(self, frame_rate: float):
        t_target = self.strategy_t_target
        if t_target is None:
            t_target = self.params.t_target
        if self.strategy_kind == "instantaneous":
            return Instantaneous(t_target=t_target)
        if self.strategy_kind == "decel_limited":
            dt = self.strategy_dt if self.strategy_dt is not None else 1.0 / frame_rate
            return DecelLimited(t_target=t_target, a_min=self.params.a_min, dt=dt)
        raise ConfigError(f"unknown strategy {self.strategy_kind!r}")

    def digest(self) -> str:
        semantic = {
            "barrier": {
                "t_safe": self.params.t_safe,
                "a_min": self.params.a_min,
                "a_max": self.params.a_max,
                "eps": self.params.eps,
                "t_target": self.params.t_target,
            },
            "query": {
                "n": self.n,
                "length": self.length,
                "x_min": self.bounds.x_min,
                "x_max": self.bounds.x_max,
                "v_min": self.bounds.v_min,
                "v_max": self.bounds.v_max,
            },
            "oracle": {
                "gap": list(self.grid.gap),
                "closing": list(self.grid.closing),
                "follower_accel": list(self.grid.follower_accel),
                "leader_accel": list(self.grid.leader_accel),
                "resolution": self.grid.resolution,
            },
            "ingest": {
                "frame": self.schema.frame,
                "id": self.schema.vehicle_id,
                "x": self.schema.x,
                "v": self.schema.v,
                "a": self.schema.a,
                "length": self.schema.length,
                "lane": self.schema.lane,
                "preceding": self.schema.preceding,
                "frame_rate": self.schema.frame_rate,
                "position_reference": self.schema.position_reference.value,
            },
            "strategy": {
                "kind": self.strategy_kind,
                "t_target": self.strategy_t_target,
                "dt": self.strategy_dt,
                "adjust_mode": self.adjust_mode.value,
            },
            "report": {"window": self.window_spec, "formats": list(self.formats)},
            "solver": {
                "args": list(self.solver_args),
                "timeout": self.solver_timeout,
                "stdin": self.solver_use_stdin,
            },
        }
        return hashlib.sha256(canonical_json(semantic).encode()).hexdigest()


def _section(data: dict, name: str) -> dict:
    value = data.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"config section [{name}] must be a table")
    return value


def load_config(path: str | Path | None) -> RunConfig:
    """Parse the TOML config file into a RunConfig (defaults when absent)."""
    config = RunConfig()
    if path is None:
        return config
    try:
        with open(path, "rb") as handle:
            data = tomllib.load(handle)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc

    try:
        barrier = _section(data, "barrier")
        config.params = BarrierParams(
            t_safe=float(barrier.get("t_safe", 3.0)),
            a_min=float(barrier.get("a_min", -6.0)),
            a_max=float(barrier.get("a_max", 3.0)),
            eps=float(barrier.get("eps", 1e-9)),
            t_target=float(barrier["t_target"]) if "t_target" in barrier else None,
        )
        query = _section(data, "query")
        config.n = int(query.get("n", 2))
        config.length = float(query.get("length", 5.0))
        config.bounds = StateBounds(
            x_min=float(query.get("x_min", 0.0)),
            x_max=float(query.get("x_max", 10000.0)),
            v_min=float(query.get("v_min", 0.0)),
            v_max=float(query.get("v_max", 60.0)),
        )
        oracle = _section(data, "oracle")
        accel = oracle.get("accel", [-6.0, 3.0])
        config.grid = GridBounds(
            gap=tuple(oracle.get("gap", [1.0, 100.0])),
            closing=tuple(oracle.get("closing", [0.5, 20.0])),
            follower_accel=tuple(oracle.get("follower_accel", accel)),
            leader_accel=tuple(oracle.get("leader_accel", accel)),
            resolution=int(oracle.get("resolution", 50)),
        )
        ingest = _section(data, "ingest")
        reference = ingest.get("position_reference", "corner")
        preceding = ingest.get("preceding", "precedingId")
        config.schema = IngestSchema(
            frame=ingest.get("frame", "frame"),
            vehicle_id=ingest.get("id", "id"),
            x=ingest.get("x", "x"),
            v=ingest.get("v", "xVelocity"),
            a=ingest.get("a", "xAcceleration"),
            length=ingest.get("length", "width"),
            lane=ingest.get("lane", "laneId"),
            preceding=preceding or None,  # "" disables preceding-id pairing
            frame_rate=float(ingest.get("frame_rate", 25.0)),
            position_reference=PositionReference(reference),
        )
        strategy = _section(data, "strategy")
        config.strategy_kind = strategy.get("kind", "instantaneous")
        if config.strategy_kind not in ("instantaneous", "decel_limited"):
            raise ConfigError(f"unknown strategy kind {config.strategy_kind!r}")
        if "t_target" in strategy:
            config.strategy_t_target = float(strategy["t_target"])
        if "dt" in strategy:
            config.strategy_dt = float(strategy["dt"])
        config.adjust_mode = AdjustmentMode(strategy.get("adjust_mode", "per_frame"))
        solver = _section(data, "solver")
        config.solver_executable = solver.get("executable")
        config.solver_args = tuple(solver.get("args", []))
        config.solver_timeout = float(solver.get("timeout", 30.0))
        config.solver_use_stdin = solver.get("input", "file") == "stdin"
        report = _section(data, "report")
        config.window_spec = str(report.get("window", "all"))
        formats = tuple(report.get("formats", ["json", "csv"]))
        for fmt in formats:
            if fmt not in ("json", "csv"):
                raise ConfigError(f"unknown report format {fmt!r}")
        if not formats:
            raise ConfigError("at least one report format must be selected")
        config.formats = formats
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config value: {exc}") from exc
    return config


def parse_window_spec(spec: str, frame_range: tuple[int, int]) -> tuple[int, int] | None:
    """Window syntax: "all", "N" (first N frames) or "start:stop"."""
    spec = spec.strip()
    if spec == "all":
        return None
    if ":" in spec:
        start_text, stop_text = spec.split(":", 1)
        try:
            return int(start_text), int(stop_text)
        except ValueError as exc:
            raise ConfigError(f"bad window spec {spec!r}") from exc
    try:
        count = int(spec)
    except ValueError as exc:
        raise ConfigError(f"bad window spec {spec!r}") from exc
    if count <= 0:
        raise ConfigError(f"window frame count must be positive, got {count}")
    return frame_range[0], frame_range[0] + count


def canonical_json(obj, indent: int = 0) -> str:
    """Deterministic JSON: sorted keys, floats with six fractional digits."""
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if value != value:  # NaN has no JSON form
            return "null"
        return f"{value:.6f}"
    if isinstance(obj, str):
        escaped = (
            obj.replace("\\", "\\\\")
            .replace('"', '\\"')
            .replace("\n", "\\n")
            .replace("\r", "\\r")
            .replace("\t", "\\t")
        )
        return f'"{escaped}"'
    if isinstance(obj, (list, tuple, np.ndarray)):
        items = [canonical_json(item, indent + 1) for item in obj]
        if not items:
            return "[]"
        return "[\n" + ",\n".join(inner + item for item in items) + "\n" + pad + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        parts = []
        for key in sorted(obj):
            parts.append(
                inner + canonical_json(str(key)) + ": " + canonical_json(obj[key], indent + 1)
            )
        return "{\n" + ",\n".join(parts) + "\n" + pad + "}"
    raise TypeError(f"cannot serialize {type(obj)!r}")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(canonical_json(payload) + "\n", encoding="utf-8")


def _provenance_lines(config: RunConfig) -> list[str]:
    return [
        f"# config_digest={config.digest()}",
        f"# tool_version={__version__}",
    ]


def _write_csv(path: Path, header: str, rows: list[str], config: RunConfig) -> None:
    lines = _provenance_lines(config) + [header] + rows
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _common_payload(config: RunConfig) -> dict:
    return {
        "schema_version": 1,
        "tool_version": __version__,
        "config_digest": config.digest(),
        "kernel_backend": backend_name(),
    }


def _resolve_solver(config: RunConfig, flag_value: str | None) -> str | None:
    if flag_value:
        return flag_value
    env_value = os.environ.get(SOLVER_ENV_VAR)
    if env_value:
        return env_value
    if config.solver_executable:
        return config.solver_executable
    return find_solver()


def cmd_verify(config: RunConfig, args) -> int:
    mode = QueryMode(args.mode)
    n = args.n if args.n is not None else config.n
    spec = QuerySpec(
        n=n, mode=mode, params=config.params, bounds=config.bounds, length=config.length
    )
    try:
        system = build_query(spec)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    query_text = emit_smtlib(system)
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "query.smt2").write_text(query_text, encoding="utf-8")
    if args.emit_only:
        print(f"wrote {out / 'query.smt2'} (emit-only)")
        return EXIT_OK

    executable = _resolve_solver(config, args.solver)
    if not executable:
        print(
            "error: no SMT solver configured (use --solver, the config file "
            f"or ${SOLVER_ENV_VAR})",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    solver_config = SolverConfig(
        executable=executable,
        extra_args=config.solver_args,
        timeout=args.timeout if args.timeout is not None else config.solver_timeout,
        use_stdin=config.solver_use_stdin,
    )
    try:
        run = run_solver(query_text, solver_config)
    except (ParseError, MissingModel) as exc:
        print(f"error: solver output not understood: {exc}", file=sys.stderr)
        return EXIT_DISAGREEMENT
    if run.status == "launch_failure":
        print(f"error: solver failed to launch: {run.detail}", file=sys.stderr)
        return EXIT_CONFIG

    oracle_hit = grid_oracle_search(spec, config.grid)
    validated = None
    if run.status == "sat" and run.model is not None:
        validated = validate_counterexample(run.model, spec)
    oracle_payload = None
    if oracle_hit is not None:
        oracle_payload = {
            "gap": oracle_hit.gap,
            "closing": oracle_hit.closing,
            "follower_accel": oracle_hit.follower_accel,
            "leader_accel": oracle_hit.leader_accel,
            "barrier": oracle_hit.barrier,
            "barrier_dot": oracle_hit.barrier_dot,
            "validated": validate_counterexample(oracle_hit.to_model(spec), spec),
        }
    agreement = None
    if run.status in ("sat", "unsat"):
        agreement = (run.status == "sat") == (oracle_hit is not None)

    payload = _common_payload(config)
    payload.update(
        {
            "mode": mode.value,
            "n": n,
            "status": run.status,
            "model": run.model.as_floats() if run.model is not None else None,
            "model_exact": {k: str(v) for k, v in run.model.values.items()}
            if run.model is not None
            else None,
            "validated": validated,
            "oracle_agreement": agreement,
            "oracle_counterexample": oracle_payload,
            "solver_output": run.output,
            "detail": run.detail,
        }
    )
    _write_json(out / "verdict.json", payload)

    if mode is QueryMode.CLOSED_LOOP:
        ok = run.status == "unsat" and agreement is True
    else:
        ok = run.status == "sat" and validated is True and agreement is True
        if oracle_payload is not None:
            ok = ok and oracle_payload["validated"]
    print(
        f"verify mode={mode.value} n={n}: status={run.status} "
        f"oracle_agreement={agreement} validated={validated}"
    )
    return EXIT_OK if ok else EXIT_DISAGREEMENT


def _load_for_scan(config: RunConfig, paths):
    dataset = load_dataset([Path(p) for p in paths], config.schema)
    window = parse_window_spec(config.window_spec, dataset.frame_range)
    return dataset, window


def cmd_scan(config: RunConfig, args) -> int:
    try:
        dataset, window = _load_for_scan(config, args.paths)
        result = scan_conflicts(dataset, config.params, window)
    except (IngestError, EmptyWindow, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)

    diags = result.table.diagnostics
    payload = _common_payload(config)
    payload.update(
        {
            "window": list(result.window),
            "t_safe": result.t_safe,
            "pair_rows": len(result.table),
            "total_conflicts": result.total_conflicts,
            "per_lane": [
                {
                    "lane": lane,
                    "conflicts": count,
                    "collisions": result.collision_counts.get(lane, 0),
                }
                for lane, count in sorted(result.conflict_counts.items())
            ],
            "events": [
                {
                    "follower": e.follower,
                    "leader": e.leader,
                    "lane": e.lane,
                    "first_frame": e.first_frame,
                    "last_frame": e.last_frame,
                    "min_ttc": e.min_ttc,
                    "frames": e.frames,
                }
                for e in result.events
            ],
            "collisions": [
                {
                    "follower": s.follower,
                    "leader": s.leader,
                    "lane": s.lane,
                    "first_frame": s.first_frame,
                    "last_frame": s.last_frame,
                    "frames": s.frames,
                }
                for s in result.collisions
            ],
            "diagnostics": {
                "dangling_preceding": diags.dangling_preceding,
                "cross_lane_preceding": diags.cross_lane_preceding,
                "order_contradictions": diags.order_contradictions,
            },
        }
    )
    if "json" in config.formats:
        _write_json(out / "conflicts.json", payload)
    if "csv" in config.formats:
        table = result.table
        rows = []
        for i in range(len(table)):
            ttc_value = result.ttc[i]
            ttc_text = f"{ttc_value:.6f}" if np.isfinite(ttc_value) else ""
            rows.append(
                f"{int(table.frame[i])},{int(table.lane[i])},{int(table.follower[i])},"
                f"{int(table.leader[i])},{ttc_text},{_CLASS_NAMES[int(result.classes[i])]}"
            )
        _write_csv(
            out / "ttc_per_frame.csv",
            "frame,lane,follower,leader,ttc,class",
            rows,
            config,
        )
    print(
        f"scan: {result.total_conflicts} conflict frame-instances, "
        f"{len(result.events)} events over window {result.window}"
    )
    return EXIT_OK


def cmd_adjust(config: RunConfig, args) -> int:
    try:
        dataset, window = _load_for_scan(config, args.paths)
        strategy = config.strategy(dataset.frame_rate)
        outcome = apply_adjustment(
            dataset, strategy, config.params, window, config.adjust_mode
        )
    except (IngestError, EmptyWindow, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    report = outcome.report
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)

    strategy_payload = {"kind": config.strategy_kind, "t_target": strategy.t_target}
    if isinstance(strategy, DecelLimited):
        strategy_payload["a_min"] = strategy.a_min
        strategy_payload["dt"] = strategy.dt

    payload = _common_payload(config)
    payload.update(
        {
            "window": list(report.window),
            "t_safe": report.t_safe,
            "strategy": strategy_payload,
            "adjust_mode": config.adjust_mode.value,
            "no_conflicts": report.no_conflicts,
            "totals": {
                "before": report.total_before,
                "after": report.total_after,
                "reduction_pct": report.total_reduction_pct,
                "events_before": report.events_before,
                "events_after": report.events_after,
                "collisions_before": report.collisions_before,
                "collisions_after": report.collisions_after,
            },
            "per_lane": [
                {
                    "lane": stats.lane,
                    "before": stats.before,
                    "after": stats.after,
                    "reduction_pct": stats.reduction_pct,
                    "events_before": stats.events_before,
                    "events_after": stats.events_after,
                    "collisions_before": stats.collisions_before,
                    "collisions_after": stats.collisions_after,
                }
                for stats in report.per_lane
            ],
            "histogram": {
                "bin_edges": report.hist_edges,
                "before": report.hist_before,
                "after": report.hist_after,
            },
        }
    )
    if "json" in config.formats:
        _write_json(out / "report.json", payload)
    if "csv" in config.formats:
        lane_rows = [
            f"{stats.lane},{stats.before},{stats.after},{stats.reduction_pct:.6f}"
            for stats in report.per_lane
        ]
        _write_csv(out / "report.csv", "lane,before,after,reduction_pct", lane_rows, config)
        for name, counts in (
            ("hist_before.csv", report.hist_before),
            ("hist_after.csv", report.hist_after),
        ):
            hist_rows = [
                f"{report.hist_edges[i]:.6f},{report.hist_edges[i + 1]:.6f},{int(counts[i])}"
                for i in range(len(counts))
            ]
            _write_csv(out / name, "bin_low,bin_high,count", hist_rows, config)
    print(
        f"adjust ({config.strategy_kind}, {config.adjust_mode.value}): "
        f"{report.total_before} -> {report.total_after} conflicts "
        f"({report.total_reduction_pct:.1f}% reduction)"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttcbarrier",
        description="TTC barrier-certificate verification and trajectory validation",
    )
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument("--out", default=None, help="output directory (default: out)")
    sub = parser.add_subparsers(dest="command", required=True)

    verify = sub.add_parser("verify", help="build and check an SMT safety query")
    verify.add_argument("--mode", choices=["open", "closed"], required=True)
    verify.add_argument("--n", type=int, default=None, help="number of vehicles")
    verify.add_argument(
        "--emit-only", action="store_true", help="write query.smt2 and stop"
    )
    verify.add_argument("--solver", default=None, help="solver executable")
    verify.add_argument("--timeout", type=float, default=None, help="solver timeout (s)")

    scan = sub.add_parser("scan", help="detect TTC conflicts in trajectory CSVs")
    scan.add_argument("paths", nargs="+", help="trajectory CSV files")
    scan.add_argument("--window", default=None, help='frame window: "all", "N" or "start:stop"')

    adjust = sub.add_parser("adjust", help="apply speed adjustment and report before/after")
    adjust.add_argument("paths", nargs="+", help="trajectory CSV files")
    adjust.add_argument("--window", default=None, help='frame window: "all", "N" or "start:stop"')
    adjust.add_argument(
        "--strategy", choices=["instantaneous", "decel-limited"], default=None
    )
    adjust.add_argument(
        "--adjust-mode", choices=["per-frame", "propagated"], default=None
    )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG

    try:
        config = load_config(args.config)
        if args.out is not None:
            config.out_dir = Path(args.out)
        if getattr(args, "window", None) is not None:
            config.window_spec = args.window
        if getattr(args, "strategy", None) is not None:
            config.strategy_kind = args.strategy.replace("-", "_")
        if getattr(args, "adjust_mode", None) is not None:
            config.adjust_mode = AdjustmentMode(args.adjust_mode.replace("-", "_"))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "verify":
            return cmd_verify(config, args)
        if args.command == "scan":
            return cmd_scan(config, args)
        if args.command == "adjust":
            return cmd_adjust(config, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    raise AssertionError(f"unhandled command {args.command!r}")


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
