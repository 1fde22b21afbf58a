"""Command-line entry point: solve, bench, verify, serve, export."""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .game import ConfigurationError, NumericError

OUT_DIR_ENV = "MODEPLAN_OUT_DIR"


def _out_dir(args) -> Path:
    base = getattr(args, "out_dir", None) or os.environ.get(OUT_DIR_ENV) or "."
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _resolve_scenario(name_or_path: str, args=None):
    from .scenarios import PRESETS, load_scenario, preset

    if name_or_path in PRESETS:
        cfg = preset(name_or_path)
    elif Path(name_or_path).exists():
        cfg = load_scenario(name_or_path)
    else:
        raise ConfigurationError(
            f"{name_or_path!r} is neither a preset ({sorted(PRESETS)}) nor a scenario file"
        )
    if args is None:
        return cfg
    from dataclasses import replace

    overrides = {}
    for flag, fieldname in [
        ("r_col", "r_col"),
        ("r_obs", "r_obs"),
        ("tau", "horizon"),
        ("dt", "dt"),
    ]:
        value = getattr(args, flag, None)
        if value is not None:
            overrides[fieldname] = value
    if getattr(args, "u_b", None) is not None:
        ub = tuple(args.u_b)
        overrides["u_bounds"] = (ub, ub)
    return replace(cfg, **overrides) if overrides else cfg


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modeplan",
        description=(
            "Enumerate interaction modes of two-agent trajectory games, "
            "benchmark against random restarts, verify equilibria, and host "
            "interactive sessions."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_scenario_flags(p):
        p.add_argument("scenario", help="preset name (head_on, obstacle_swap) or scenario file")
        p.add_argument("--r-col", dest="r_col", type=float, default=None)
        p.add_argument("--r-obs", dest="r_obs", type=float, default=None)
        p.add_argument("--tau", type=int, default=None, help="horizon steps")
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--u-b", dest="u_b", type=float, nargs=2, default=None,
                       help="control bounds (both agents)")
        p.add_argument("--alpha", type=float, default=5.0, help="barrier sharpness")
        p.add_argument("--q-eta", dest="q_eta", type=float, default=600.0,
                       help="constraint slack weight")

    p_solve = sub.add_parser("solve", help="enumerate the scenario's modes")
    add_scenario_flags(p_solve)
    p_solve.add_argument("--seed", type=int, default=0)
    p_solve.add_argument("--particles", type=int, default=50)
    p_solve.add_argument("--out", default=None, help="output file (JSON)")
    p_solve.add_argument("--out-dir", default=None)
    p_solve.add_argument("--report", action="store_true",
                         help="also write the filter diagnostics report")

    p_bench = sub.add_parser("bench", help="compare against random restarts")
    add_scenario_flags(p_bench)
    p_bench.add_argument("--runs", type=int, default=30)
    p_bench.add_argument("--particles", type=int, default=50)
    p_bench.add_argument("--budget", type=int, default=120)
    p_bench.add_argument("--workers", type=int, default=1)
    p_bench.add_argument("--out", default=None)
    p_bench.add_argument("--out-dir", default=None)

    p_verify = sub.add_parser("verify", help="check a saved mode set's certificates")
    p_verify.add_argument("file", help="equilibria document to verify")
    p_verify.add_argument("--eps", type=float, default=0.5, help="deviation radius")
    p_verify.add_argument("--samples", type=int, default=200)
    p_verify.add_argument("--seed", type=int, default=0)

    p_serve = sub.add_parser("serve", help="host the interactive session server")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8710)
    p_serve.add_argument("--scenario", default="head_on")
    p_serve.add_argument("--dstar", type=float, default=1.0)
    p_serve.add_argument("--seed", type=int, default=0)

    p_export = sub.add_parser("export", help="export a run document to CSV tables")
    p_export.add_argument("file", help="equilibria / bench / run-log document")
    p_export.add_argument("--format", choices=["csv"], default="csv")
    p_export.add_argument("--out-dir", default=None)

    return parser


def _cmd_solve(args) -> int:
    from .bench import EXPECTED_MODES
    from .filtering import FilterConfig
    from .planner import enumerate_modes
    from .scenarios import build_scenario
    from .serialize import save_equilibria
    from .virtual import BarrierConfig

    scenario = _resolve_scenario(args.scenario, args)
    game = build_scenario(scenario)
    modes = enumerate_modes(
        game,
        filter_cfg=FilterConfig(particles=args.particles, seed=args.seed),
        barrier=BarrierConfig(alpha=args.alpha),
        q_eta=args.q_eta,
    )
    out = Path(args.out) if args.out else _out_dir(args) / f"{scenario.kind}_modes.json"
    save_equilibria(out, modes, scenario=scenario, seed=args.seed)
    print(f"modes found: {len(modes)}")
    for k, mode in enumerate(modes.modes):
        print(
            f"  mode {k}: potential {mode.potential:.3f}, "
            f"violation {mode.max_violation:.2e}, "
            f"stationarity {mode.stationarity.max():.2e}"
        )
    for note in modes.diagnostics:
        print(f"  note: {note}")
    print(f"wrote {out}")
    expected = EXPECTED_MODES.get(scenario.kind)
    if len(modes) == 0:
        return 1
    if expected is not None and len(modes) != expected:
        print(f"warning: expected {expected} modes for {scenario.kind}")
    return 0


def _cmd_bench(args) -> int:
    from .bench import BenchConfig, run_benchmark
    from .filtering import FilterConfig
    from .serialize import save_equilibria  # noqa: F401  (kept near other writers)
    from .virtual import BarrierConfig

    scenario = _resolve_scenario(args.scenario, args)
    cfg = BenchConfig(
        runs=args.runs,
        baseline_budget=args.budget,
        workers=args.workers,
        filter_cfg=FilterConfig(particles=args.particles),
        barrier=BarrierConfig(alpha=args.alpha),
        q_eta=args.q_eta,
    )
    report = run_benchmark(scenario, cfg)
    out = Path(args.out) if args.out else _out_dir(args) / f"{scenario.kind}_bench.json"
    report.save(out)
    print(report.summary())
    print(f"wrote {out}")
    return 0


def _cmd_verify(args) -> int:
    from .refine import check_local_gne
    from .serialize import game_for_document, load_equilibria

    modes, scenario, _ = load_equilibria(args.file)
    game = game_for_document(scenario)
    rng = np.random.default_rng(args.seed)
    failures = 0
    for k, eq in enumerate(modes.modes):
        try:
            cert = check_local_gne(
                game, eq, radius=args.eps, samples=args.samples, rng=rng
            )
        except ConfigurationError as exc:
            print(f"mode {k}: FAIL ({exc})")
            failures += 1
            continue
        status = "PASS" if cert.passed else "FAIL"
        print(
            f"mode {k}: {status} worst improvement {cert.worst_improvement:.3e}, "
            f"stationarity {cert.max_stationarity:.3e}"
        )
        if not cert.passed:
            failures += 1
            print(cert.describe())
    if failures:
        print(f"{failures}/{len(modes)} modes failed verification")
        return 1
    print(f"all {len(modes)} modes verified")
    return 0


def _cmd_serve(args) -> int:
    from .server import SessionConfig, serve

    serve(
        host=args.host,
        port=args.port,
        cfg=SessionConfig(scenario=args.scenario, dstar=args.dstar, seed=args.seed),
    )
    return 0


def _cmd_export(args) -> int:
    import json

    from .serialize import export_csv

    with open(args.file) as fh:
        doc = json.load(fh)
    tables = export_csv(doc)
    out_dir = _out_dir(args)
    stem = Path(args.file).stem
    for name, text in tables.items():
        out = out_dir / f"{stem}_{name}"
        out.write_text(text)
        print(f"wrote {out}")
    return 0


def cli_dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {
        "solve": _cmd_solve,
        "bench": _cmd_bench,
        "verify": _cmd_verify,
        "serve": _cmd_serve,
        "export": _cmd_export,
    }
    try:
        return handlers[args.command](args)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
