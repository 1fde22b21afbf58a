"""Self-describing text formats for equilibria, run logs, and CSV export.

All documents are JSON with a ``format`` tag and integer ``version`` so files
identify themselves. Floats serialize through ``repr`` and therefore
round-trip bit-exactly; CSV export is byte-deterministic so that
export -> parse -> export reproduces identical bytes.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, is_dataclass
from typing import Optional

import numpy as np

from .game import ConfigurationError, GameSpec, JointTrajectory
from .refine import EquilibriumSet, RefinedEquilibrium
from .scenarios import ScenarioConfig, build_scenario, scenario_from_dict, scenario_to_dict

EQUILIBRIA_FORMAT = "modeplan/equilibria"
RUNLOG_FORMAT = "modeplan/run-log"
BENCH_FORMAT = "modeplan/bench-report"
FORMAT_VERSION = 1


def _to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if is_dataclass(obj) and not isinstance(obj, type):
        return _to_jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


def canonical_json(payload) -> str:
    return json.dumps(_to_jsonable(payload), sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """Stable short hash of any configuration-like object."""
    if isinstance(obj, GameSpec):
        payload = {
            "agents": [
                {
                    "Q": a.Q,
                    "Q_tau": a.Q_tau,
                    "R": a.R,
                    "reference": a.reference,
                    "dynamics_id": a.dynamics_id,
                }
                for a in obj.agents
            ],
            "horizon": obj.horizon,
            "dt": obj.dt,
            "x0": obj.x0,
            "constraint_id": obj.constraint_id,
            "constraint_params": obj.constraint_params,
        }
    else:
        payload = obj
    return hashlib.sha256(canonical_json(payload).encode()).hexdigest()[:16]


def trajectory_to_dict(traj: JointTrajectory) -> dict:
    return {"states": traj.states.tolist(), "controls": traj.controls.tolist()}


def trajectory_from_dict(d: dict) -> JointTrajectory:
    return JointTrajectory(np.asarray(d["states"]), np.asarray(d["controls"]))


def equilibrium_to_dict(eq: RefinedEquilibrium) -> dict:
    return {
        "trajectory": trajectory_to_dict(eq.trajectory),
        "potential": eq.potential,
        "max_violation": eq.max_violation,
        "stationarity": list(np.asarray(eq.stationarity, dtype=float)),
        "converged": bool(eq.converged),
        "iterations": int(eq.iterations),
        "provenance": _to_jsonable(eq.provenance),
    }


def equilibrium_from_dict(d: dict) -> RefinedEquilibrium:
    return RefinedEquilibrium(
        trajectory=trajectory_from_dict(d["trajectory"]),
        potential=float(d["potential"]),
        max_violation=float(d["max_violation"]),
        stationarity=np.asarray(d["stationarity"], dtype=float),
        converged=bool(d["converged"]),
        iterations=int(d["iterations"]),
        provenance=dict(d.get("provenance", {})),
    )


def save_equilibria(
    path,
    modes: EquilibriumSet,
    scenario: Optional[ScenarioConfig] = None,
    seed: Optional[int] = None,
    extra: Optional[dict] = None,
) -> None:
    doc = {
        "format": EQUILIBRIA_FORMAT,
        "version": FORMAT_VERSION,
        "scenario": None if scenario is None else scenario_to_dict(scenario),
        "scenario_hash": modes.scenario_hash,
        "seed": seed,
        "timings": _to_jsonable(modes.timings),
        "diagnostics": list(modes.diagnostics),
        "refiner_invocations": modes.refiner_invocations,
        "cluster_count": modes.cluster_count,
        "modes": [equilibrium_to_dict(m) for m in modes.modes],
    }
    if extra:
        doc.update(_to_jsonable(extra))
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_equilibria(path) -> tuple[EquilibriumSet, Optional[ScenarioConfig], dict]:
    """Load a mode-set document; returns (modes, scenario, raw document)."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != EQUILIBRIA_FORMAT:
        raise ConfigurationError(
            f"{path} is not an equilibria document (format={doc.get('format')!r})"
        )
    if doc.get("version") != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported document version {doc.get('version')!r}")
    modes = EquilibriumSet(
        modes=tuple(equilibrium_from_dict(d) for d in doc["modes"]),
        scenario_hash=doc.get("scenario_hash", ""),
        timings=doc.get("timings", {}),
        diagnostics=tuple(doc.get("diagnostics", ())),
        refiner_invocations=doc.get("refiner_invocations", 0),
        cluster_count=doc.get("cluster_count", 0),
    )
    scenario = None
    if doc.get("scenario") is not None:
        scenario = scenario_from_dict(doc["scenario"])
    return modes, scenario, doc


def game_for_document(doc_scenario: Optional[ScenarioConfig]) -> GameSpec:
    if doc_scenario is None:
        raise ConfigurationError("document carries no scenario; cannot rebuild the game")
    return build_scenario(doc_scenario)


# ---------------------------------------------------------------------------
# CSV export (plot-ready tables)
# ---------------------------------------------------------------------------

def _csv_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(header: list[str], rows: list[list]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_csv_cell(v) for v in row))
    return "\n".join(lines) + "\n"


def parse_csv(text: str) -> tuple[list[str], list[list[str]]]:
    lines = [ln for ln in text.split("\n") if ln != ""]
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:]]


def modes_csv(doc: dict) -> str:
    """One row per (mode, agent, step): positions and full state."""
    header = ["mode", "agent", "t", "p", "q", "theta", "nu", "omega", "dnu", "domega"]
    rows = []
    for mode_idx, mode in enumerate(doc["modes"]):
        states = np.asarray(mode["trajectory"]["states"])
        controls = np.asarray(mode["trajectory"]["controls"])
        n_agents = states.shape[1] // 5 if states.shape[1] % 5 == 0 else 1
        width = states.shape[1] // n_agents
        cwidth = controls.shape[1] // n_agents
        for agent in range(n_agents):
            xs = states[:, agent * width:(agent + 1) * width]
            us = controls[:, agent * cwidth:(agent + 1) * cwidth]
            for t in range(states.shape[0]):
                state_cells = [float(v) for v in xs[t][:5]]
                state_cells += [0.0] * (5 - len(state_cells))
                ctrl_cells = [float(v) for v in us[t][:2]]
                ctrl_cells += [0.0] * (2 - len(ctrl_cells))
                rows.append([mode_idx, agent, t] + state_cells + ctrl_cells)
    return rows_to_csv(header, rows)


def bench_csv(doc: dict) -> str:
    """One row per benchmark run record."""
    header = [
        "method", "seed", "invocations", "modes_found",
        "filter_s", "cluster_s", "refine_s", "total_s", "success",
    ]
    rows = []
    for rec in doc["records"]:
        rows.append([
            rec["method"],
            rec["seed"],
            rec["invocations"],
            rec["modes_found"],
            float(rec["timings"].get("filter_s", 0.0)),
            float(rec["timings"].get("cluster_s", 0.0)),
            float(rec["timings"].get("refine_s", 0.0)),
            float(rec["timings"].get("total_s", 0.0)),
            int(rec["success"]),
        ])
    return rows_to_csv(header, rows)


def runlog_csv(doc: dict) -> str:
    """One row per tick of a closed-loop run log."""
    header = ["t"]
    n_agents = len(doc["agents"])
    for a in range(n_agents):
        header += [f"p{a}", f"q{a}", f"theta{a}", f"nu{a}", f"omega{a}"]
    header += [f"d{k}" for k in range(doc["n_modes"])]
    header += ["locked"]
    rows = []
    states = np.asarray(doc["states"])
    dists = doc["belief_distances"]
    locked = doc["belief_locked"]
    for t in range(states.shape[0]):
        row = [t]
        for a in range(n_agents):
            row += [float(v) for v in states[t, 5 * a:5 * a + 5]]
        row += [float(v) for v in dists[min(t, len(dists) - 1)]]
        row += [-1 if locked[min(t, len(locked) - 1)] is None else locked[min(t, len(locked) - 1)]]
        rows.append(row)
    return rows_to_csv(header, rows)


def export_csv(doc: dict) -> dict[str, str]:
    """Dispatch on document format; returns {filename: csv text}."""
    fmt = doc.get("format")
    if fmt == EQUILIBRIA_FORMAT:
        return {"modes.csv": modes_csv(doc)}
    if fmt == BENCH_FORMAT:
        return {"bench.csv": bench_csv(doc)}
    if fmt == RUNLOG_FORMAT:
        return {"runlog.csv": runlog_csv(doc)}
    raise ConfigurationError(f"cannot export documents of format {fmt!r}")
