"""Monte Carlo benchmark: mode enumeration vs. random-restart baseline.

Each run executes both methods on the same seeded scenario and records how
many refiner invocations each needed, what it found, and where the time
went. Aggregates are stored alongside the raw records and re-derived on
load as an integrity check.
"""
from __future__ import annotations

import concurrent.futures
import json
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .clustering import ClusterConfig
from .filtering import FilterConfig
from .game import ConfigurationError
from .planner import baseline_random_init, enumerate_modes
from .refine import RefinerConfig
from .scenarios import ScenarioConfig, build_scenario
from .serialize import BENCH_FORMAT, FORMAT_VERSION, _to_jsonable
from .virtual import BarrierConfig

EXPECTED_MODES = {"head_on": 2, "obstacle_swap": 6}


@dataclass(frozen=True)
class BenchConfig:
    runs: int = 30
    seeds: Optional[tuple[int, ...]] = None
    target_modes: Optional[int] = None
    baseline_budget: int = 120
    sigma_b: float = 0.3
    workers: int = 1
    filter_cfg: FilterConfig = field(default_factory=FilterConfig)
    cluster_cfg: Optional[ClusterConfig] = None
    refiner_cfg: RefinerConfig = field(default_factory=RefinerConfig)
    barrier: BarrierConfig = field(default_factory=BarrierConfig)
    q_eta: float = 600.0

    def seed_list(self) -> list[int]:
        if self.seeds is not None:
            if len(self.seeds) != self.runs:
                raise ConfigurationError("seed list length must equal run count")
            return list(self.seeds)
        return list(range(self.runs))


@dataclass
class RunRecord:
    method: str
    seed: int
    invocations: int
    modes_found: int
    success: bool
    timings: dict

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "invocations": self.invocations,
            "modes_found": self.modes_found,
            "success": self.success,
            "timings": _to_jsonable(self.timings),
        }

    @staticmethod
    def from_dict(d: dict) -> "RunRecord":
        return RunRecord(
            method=d["method"],
            seed=int(d["seed"]),
            invocations=int(d["invocations"]),
            modes_found=int(d["modes_found"]),
            success=bool(d["success"]),
            timings=dict(d["timings"]),
        )


def _aggregate(values: Sequence[float]) -> dict:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return {"mean": 0.0, "std": 0.0, "min": 0.0, "max": 0.0, "count": 0}
    return {
        "mean": float(arr.mean()),
        "std": float(arr.std(ddof=0)),
        "min": float(arr.min()),
        "max": float(arr.max()),
        "count": int(arr.size),
    }


def _int_histogram(values: Sequence[int]) -> dict:
    if len(values) == 0:
        return {"bins": [], "counts": []}
    lo, hi = int(min(values)), int(max(values))
    bins = list(range(lo, hi + 1))
    counts = [int(sum(1 for v in values if int(v) == b)) for b in bins]
    return {"bins": bins, "counts": counts}


def _time_histogram(values: Sequence[float], width: float = 0.5) -> dict:
    if len(values) == 0:
        return {"edges": [], "counts": []}
    hi = max(values)
    n_bins = max(1, int(np.ceil((hi + 1e-12) / width)))
    edges = [round(k * width, 6) for k in range(n_bins + 1)]
    counts, _ = np.histogram(values, bins=np.asarray(edges))
    return {"edges": edges, "counts": [int(c) for c in counts]}


def compute_aggregates(records: Sequence[RunRecord]) -> dict:
    pipeline = [r for r in records if r.method == "pipeline"]
    baseline = [r for r in records if r.method == "baseline"]
    filter_fracs = [
        r.timings["filter_s"] / r.timings["total_s"]
        for r in pipeline
        if r.timings.get("total_s", 0.0) > 0 and "filter_s" in r.timings
    ]
    return {
        "pipeline_invocations": _aggregate([r.invocations for r in pipeline]),
        "baseline_invocations": _aggregate([r.invocations for r in baseline]),
        "pipeline_total_s": _aggregate([r.timings.get("total_s", 0.0) for r in pipeline]),
        "baseline_total_s": _aggregate([r.timings.get("total_s", 0.0) for r in baseline]),
        "pipeline_filter_fraction": _aggregate(filter_fracs),
        "filter_fraction_median": float(np.median(filter_fracs)) if filter_fracs else 0.0,
        "pipeline_failures": int(sum(1 for r in pipeline if not r.success)),
        "baseline_failures": int(sum(1 for r in baseline if not r.success)),
        "invocation_histogram_pipeline": _int_histogram([r.invocations for r in pipeline]),
        "invocation_histogram_baseline": _int_histogram([r.invocations for r in baseline]),
        "time_histogram_pipeline": _time_histogram(
            [r.timings.get("total_s", 0.0) for r in pipeline]
        ),
        "time_histogram_baseline": _time_histogram(
            [r.timings.get("total_s", 0.0) for r in baseline]
        ),
        "run_failures": int(sum(1 for r in pipeline if "error" in r.timings)),
    }


@dataclass
class BenchReport:
    scenario: ScenarioConfig
    records: list
    aggregates: dict
    config_snapshot: dict

    def to_dict(self) -> dict:
        from .serialize import scenario_to_dict

        return {
            "format": BENCH_FORMAT,
            "version": FORMAT_VERSION,
            "scenario": scenario_to_dict(self.scenario),
            "records": [r.to_dict() for r in self.records],
            "aggregates": _to_jsonable(self.aggregates),
            "config": _to_jsonable(self.config_snapshot),
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(path) -> "BenchReport":
        from .scenarios import scenario_from_dict

        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != BENCH_FORMAT:
            raise ConfigurationError(f"{path} is not a bench report")
        records = [RunRecord.from_dict(d) for d in doc["records"]]
        stored = doc["aggregates"]
        recomputed = _to_jsonable(compute_aggregates(records))
        if json.dumps(stored, sort_keys=True) != json.dumps(recomputed, sort_keys=True):
            raise ConfigurationError("stored aggregates do not match the records")
        return BenchReport(
            scenario=scenario_from_dict(doc["scenario"]),
            records=records,
            aggregates=stored,
            config_snapshot=doc.get("config", {}),
        )

    def summary(self) -> str:
        agg = self.aggregates
        pi = agg["pipeline_invocations"]
        bi = agg["baseline_invocations"]
        lines = [
            f"runs: {pi['count']}",
            f"pipeline invocations: {pi['mean']:.2f} +- {pi['std']:.2f}",
            f"baseline invocations: {bi['mean']:.2f} +- {bi['std']:.2f}",
            f"pipeline total s: {agg['pipeline_total_s']['mean']:.2f} "
            f"+- {agg['pipeline_total_s']['std']:.2f}",
            f"baseline total s: {agg['baseline_total_s']['mean']:.2f} "
            f"+- {agg['baseline_total_s']['std']:.2f}",
            f"filter fraction median: {agg['filter_fraction_median']:.3f}",
            f"failures: pipeline {agg['pipeline_failures']}, "
            f"baseline {agg['baseline_failures']}",
        ]
        return "\n".join(lines)


def _one_run(scenario: ScenarioConfig, seed: int, cfg: BenchConfig,
             target: int) -> list[RunRecord]:
    from dataclasses import replace as dc_replace

    game = build_scenario(scenario)
    records = []

    filter_cfg = dc_replace(cfg.filter_cfg, seed=seed)
    tic = time.perf_counter()
    modes = enumerate_modes(
        game,
        filter_cfg=filter_cfg,
        cluster_cfg=cfg.cluster_cfg,
        refiner_cfg=cfg.refiner_cfg,
        barrier=cfg.barrier,
        q_eta=cfg.q_eta,
    )
    wall = time.perf_counter() - tic
    timings = dict(modes.timings)
    timings.setdefault("total_s", wall)
    records.append(
        RunRecord(
            method="pipeline",
            seed=seed,
            invocations=modes.refiner_invocations,
            modes_found=len(modes),
            success=len(modes) == target,
            timings=timings,
        )
    )

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBA5E]))
    base = baseline_random_init(
        game,
        cfg.refiner_cfg,
        target_modes=target,
        budget=cfg.baseline_budget,
        rng=rng,
        sigma_b=cfg.sigma_b,
    )
    records.append(
        RunRecord(
            method="baseline",
            seed=seed,
            invocations=base.invocations,
            modes_found=len(base.modes),
            success=not base.exhausted,
            timings={"total_s": base.wall_s},
        )
    )
    return records


def run_benchmark(scenario: ScenarioConfig, cfg: BenchConfig = BenchConfig()) -> BenchReport:
    """Run the full comparison; individual run failures are recorded, not fatal."""
    if cfg.runs < 1:
        raise ConfigurationError("need at least one run")
    target = cfg.target_modes
    if target is None:
        target = EXPECTED_MODES.get(scenario.kind, 1)
    seeds = cfg.seed_list()

    records: list[RunRecord] = []
    if cfg.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {
                pool.submit(_one_run, scenario, seed, cfg, target): seed
                for seed in seeds
            }
            results = {}
            for fut in concurrent.futures.as_completed(futures):
                seed = futures[fut]
                try:
                    results[seed] = fut.result()
                except Exception as exc:  # recorded, not fatal
                    results[seed] = [
                        RunRecord("pipeline", seed, 0, 0, False, {"error": str(exc)}),
                        RunRecord("baseline", seed, 0, 0, False, {"error": str(exc)}),
                    ]
        for seed in seeds:
            records.extend(results[seed])
    else:
        for seed in seeds:
            try:
                records.extend(_one_run(scenario, seed, cfg, target))
            except Exception as exc:
                records.append(RunRecord("pipeline", seed, 0, 0, False, {"error": str(exc)}))
                records.append(RunRecord("baseline", seed, 0, 0, False, {"error": str(exc)}))

    aggregates = compute_aggregates(records)
    snapshot = {
        "runs": cfg.runs,
        "seeds": seeds,
        "target_modes": target,
        "baseline_budget": cfg.baseline_budget,
        "sigma_b": cfg.sigma_b,
        "particles": cfg.filter_cfg.particles,
        "q_eta": cfg.q_eta,
        "barrier_alpha": cfg.barrier.alpha,
    }
    return BenchReport(
        scenario=scenario,
        records=records,
        aggregates=aggregates,
        config_snapshot=snapshot,
    )
