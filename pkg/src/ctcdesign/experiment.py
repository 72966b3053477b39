"""Seeded experiment driver: data, estimation, design and metrics over (model, M, replicate) cells.

Every random stream is derived from the master seed and a role tag, so any
cell can be recomputed in isolation and worker partitioning never changes
results. Cell records are appended to ``cells.jsonl`` as they finish; the
metric tables are written sorted by key once all cells are done.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
import time
import traceback
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .choice_models import model_to_dict
from .design import (
    DesignOutcome,
    GAOptions,
    Portfolio,
    ideal_design,
    outer_optimize,
    price_on_offering,
    true_profit,
    truth_normals,
)
from .engineering import EngineeringConfig, default_engineering
from .estimation import MODEL_KINDS, EstimationOptions, estimate
from .market import generate_markets, simulate_shares, true_choice_probability
from .metrics import MetricReport, design_error, kld, profit_recovery
from .population import POPULATION_PRESETS, PopulationSpec

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
METRIC_FIELDS = (
    "schema_version",
    "model",
    "M",
    "replicate",
    "status",
    "kld",
    "kld_full",
    "design_error",
    "profit_recovery",
    "pricing_on_offering_recovery",
    "model_profit",
    "true_profit",
    "true_profit_se",
    "repriced_true_profit",
    "final_ll",
    "converged",
    "n_vehicles",
    "styles",
)
DESIGN_FIELDS = ("schema_version", "model", "M", "replicate", "j", "b", "e", "a", "p")
TIMING_FIELDS = ("model", "M", "replicate", "estimate_seconds", "design_seconds", "evaluate_seconds")
FIGURE_METRICS = {1: "kld", 2: "design_error", 3: "profit_recovery", 4: "pricing_on_offering_recovery"}


@dataclass
class ExperimentConfig:
    """Everything that determines an experiment's results (plus where to write them)."""

    M_grid: list = field(default_factory=lambda: [10, 50, 200])
    replicates: int = 5
    J_m: int = 5
    N_m: int = 100
    validation_markets: int = 1000
    I_rcl: int = 1000
    I_true: int = 10_000
    I_search: int = 500
    master_seed: int = 0
    models: list = field(default_factory=lambda: list(MODEL_KINDS))
    population: str = "calibrated"
    population_path: str | None = None
    engineering_path: str | None = None
    multistart: dict = field(default_factory=lambda: {"mnl": 5, "rcl": 2, "nml": 5, "ctc": 5})
    max_iterations: int = 3000
    ga: dict = field(default_factory=dict)
    ideal_polish: int = 5
    kld_include_outside: bool = False
    workers: int = 1
    output_dir: str = "results"

    def __post_init__(self):
        self.M_grid = [int(m) for m in self.M_grid]
        if not self.M_grid or any(m < 1 for m in self.M_grid):
            raise ValueError("M_grid needs positive market counts")
        if self.M_grid != sorted(self.M_grid):
            raise ValueError("M_grid must be sorted ascending")
        for name in ("replicates", "J_m", "N_m", "validation_markets", "I_rcl", "I_true", "I_search", "workers", "max_iterations"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        unknown = set(self.models) - set(MODEL_KINDS)
        if unknown or not self.models:
            raise ValueError(f"models must be a nonempty subset of {MODEL_KINDS}; unknown: {sorted(unknown)}")
        if self.population_path is None and self.population not in POPULATION_PRESETS:
            raise ValueError(f"unknown population preset {self.population!r}")
        GAOptions(**self.ga)

    @classmethod
    def paper_scale(cls, **overrides) -> "ExperimentConfig":
        """The full protocol: seven market counts, 20 replicates, 10^5 true-behavior draws."""
        kw = dict(
            M_grid=[10, 25, 50, 100, 200, 500, 1000],
            replicates=20,
            I_true=100_000,
            I_search=10_000,
            multistart={k: 5 for k in MODEL_KINDS},
        )
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def content_hash(self) -> str:
        """Hash of the result-determining settings (output location and worker count excluded)."""
        doc = {k: v for k, v in self.to_dict().items() if k not in ("output_dir", "workers")}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def load_population(self) -> PopulationSpec:
        if self.population_path:
            return PopulationSpec.load(self.population_path)
        return POPULATION_PRESETS[self.population]()

    def load_engineering(self) -> EngineeringConfig:
        return EngineeringConfig.load(self.engineering_path) if self.engineering_path else default_engineering()

    def ga_options(self) -> GAOptions:
        return GAOptions(**self.ga)

    def cells(self):
        return [(k, M, r) for k in self.models for M in self.M_grid for r in range(self.replicates)]


def derive_seed(master_seed, tag, M=0, replicate=0) -> int:
    """Deterministic 32-bit seed for a (role, M, replicate) stream."""
    ss = np.random.SeedSequence([int(master_seed), zlib.crc32(tag.encode()), int(M), int(replicate)])
    return int(ss.generate_state(1)[0])


def generate_data(config: ExperimentConfig, pop, M, replicate):
    """Estimation markets and simulated shares for one (M, replicate); shared by all models."""
    rng = np.random.default_rng(derive_seed(config.master_seed, "data", M, replicate))
    markets = generate_markets(rng, M, config.J_m, pop.n_styles)
    shares = [simulate_shares(m, pop, config.N_m, rng) for m in markets]
    return markets, shares


@dataclass
class Context:
    """Inputs shared by every cell: population, engineering, validation set and the ideal design."""

    config: ExperimentConfig
    pop: PopulationSpec
    cfg: EngineeringConfig
    validation: list
    validation_truth: list
    ideal: DesignOutcome
    eval_seed: int


def build_context(config: ExperimentConfig) -> Context:
    pop = config.load_population()
    cfg = config.load_engineering()
    rng = np.random.default_rng(derive_seed(config.master_seed, "validation"))
    validation = generate_markets(rng, config.validation_markets, config.J_m, pop.n_styles)
    normals = truth_normals(config.I_true, derive_seed(config.master_seed, "validation-truth"))
    truth = [true_choice_probability(m, pop, normals=normals) for m in validation]
    eval_seed = derive_seed(config.master_seed, "evaluation")
    ideal = ideal_design(
        pop,
        cfg,
        config.ga_options(),
        seed=eval_seed,
        search_draws=config.I_search,
        final_draws=config.I_true,
        n_polish=config.ideal_polish,
    )
    return Context(config, pop, cfg, validation, truth, ideal, eval_seed)


def run_cell(ctx: Context, kind, M, replicate) -> dict:
    """Estimate, design and evaluate one (model, M, replicate) cell."""
    config = ctx.config
    t0 = time.perf_counter()
    markets, shares = generate_data(config, ctx.pop, M, replicate)
    options = EstimationOptions(
        multistart_count=int(config.multistart.get(kind, 5)),
        max_iterations=config.max_iterations,
        rcl_mc_draws=config.I_rcl,
        seed=derive_seed(config.master_seed, "estimate", M, replicate),
    )
    fit = estimate(kind, markets, shares, options, ctx.pop.n_styles)
    t1 = time.perf_counter()
    design_seed = derive_seed(config.master_seed, f"design-{kind}", M, replicate)
    outcome = outer_optimize(
        fit.model,
        ctx.cfg,
        config.ga_options(),
        rng=design_seed,
        seed=design_seed,
        provenance={"data_seed": derive_seed(config.master_seed, "data", M, replicate), "M": M, "replicate": replicate},
    )
    t2 = time.perf_counter()
    normals = truth_normals(config.I_true, ctx.eval_seed)
    outcome.true_profit, outcome.true_profit_se = true_profit(outcome.portfolio, ctx.pop, ctx.cfg, normals=normals)
    repriced, repriced_profit = price_on_offering(outcome.portfolio, ctx.pop, ctx.cfg, normals=normals)
    ideal_profit = ctx.ideal.true_profit
    report = MetricReport(
        model=kind,
        M=M,
        replicate=replicate,
        kld=kld(ctx.validation, fit.model, ctx.validation_truth, include_outside=config.kld_include_outside),
        kld_full=kld(ctx.validation, fit.model, ctx.validation_truth, include_outside=True),
        design_error=design_error(outcome.portfolio, ctx.ideal.portfolio, ctx.pop.n_styles),
        profit_recovery=profit_recovery(outcome.true_profit, ideal_profit),
        pricing_on_offering_recovery=profit_recovery(repriced_profit, ideal_profit),
    )
    t3 = time.perf_counter()
    return {
        "key": [kind, M, replicate],
        "status": "ok",
        "metrics": report.to_dict(),
        "fit": {
            "model": model_to_dict(fit.model),
            "final_ll": fit.final_ll,
            "converged": fit.converged,
            "start_index": fit.start_index,
            "n_iterations": fit.n_iterations,
            "degenerate": fit.degenerate,
            "seed": options.seed,
        },
        "design": outcome.to_dict(),
        "repriced": {"portfolio": repriced.to_dict(), "true_profit": repriced_profit},
        "timings": {"estimate_seconds": t1 - t0, "design_seconds": t2 - t1, "evaluate_seconds": t3 - t2},
    }


def _safe_cell(ctx, kind, M, replicate):
    try:
        with threadpool_limits(limits=1):
            return run_cell(ctx, kind, M, replicate)
    except Exception as exc:  # a failed cell is recorded and the run continues
        log.exception("cell %s/%s/%s failed", kind, M, replicate)
        return {"key": [kind, M, replicate], "status": "failed", "error": f"{type(exc).__name__}: {exc}", "traceback": traceback.format_exc()}


_WORKER_CTX: Context | None = None


def _init_worker(ctx):
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _worker_cell(key):
    return _safe_cell(_WORKER_CTX, *key)


@dataclass
class RunRecord:
    config: ExperimentConfig
    config_hash: str
    ideal: DesignOutcome
    cells: list
    output_dir: Path | None = None

    @property
    def ok(self) -> bool:
        keys = {tuple(c["key"]) for c in self.cells if c["status"] == "ok"}
        return all(tuple(k) in keys for k in self.config.cells())

    def metric_rows(self) -> list[dict]:
        return [c["metrics"] for c in self.cells if c["status"] == "ok"]

    def failures(self):
        return [c for c in self.cells if c["status"] != "ok"]


def _cell_order(config):
    model_rank = {k: i for i, k in enumerate(MODEL_KINDS)}
    return lambda key: (model_rank[key[0]], int(key[1]), int(key[2]))


def _fmt(x):
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, float):
        return repr(x)
    return str(x)


def run_experiment(config: ExperimentConfig, output_dir=None, resume=False) -> RunRecord:
    """Run every (model, M, replicate) cell and write the result tables.

    Output files in ``output_dir``: ``cells.jsonl`` (one full record per
    cell, appended as cells finish), ``metrics.csv``, ``designs.csv``,
    ``timings.csv``, ``ideal.json`` and ``manifest.json``. With
    ``resume=True`` cells already present in ``cells.jsonl`` are reused.
    """
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()
    with threadpool_limits(limits=1):
        ctx = build_context(config)
    ctx.ideal.save(out / "ideal.json")

    jsonl = out / "cells.jsonl"
    done = {}
    if resume and jsonl.exists():
        for line in jsonl.read_text().splitlines():
            rec = json.loads(line)
            if rec["status"] == "ok":
                done[tuple(rec["key"])] = rec
    elif jsonl.exists():
        jsonl.unlink()
    todo = [k for k in config.cells() if k not in done]

    records = list(done.values())
    with open(jsonl, "a") as fh:

        def keep(rec):
            fh.write(json.dumps(rec) + "\n")
            fh.flush()
            records.append(rec)
            log.info("cell %s: %s", rec["key"], rec["status"])

        if config.workers > 1 and len(todo) > 1:
            with ProcessPoolExecutor(config.workers, initializer=_init_worker, initargs=(ctx,)) as pool:
                for rec in pool.map(_worker_cell, todo):
                    keep(rec)
        else:
            for key in todo:
                keep(_safe_cell(ctx, *key))

    order = _cell_order(config)
    records.sort(key=lambda r: order(r["key"]))
    record = RunRecord(config, config.content_hash(), ctx.ideal, records, out)
    _write_tables(record, out)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config": config.to_dict(),
        "config_hash": record.config_hash,
        "seeds": {
            "master": config.master_seed,
            "evaluation": ctx.eval_seed,
            "validation": derive_seed(config.master_seed, "validation"),
        },
        "metrics_sha256": hashlib.sha256((out / "metrics.csv").read_bytes()).hexdigest(),
        "n_cells": len(config.cells()),
        "n_failed": len(record.failures()),
        "wall_seconds": time.perf_counter() - t_start,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return record


def _write_tables(record: RunRecord, out: Path):
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for rec in record.cells:
            kind, M, r = rec["key"]
            if rec["status"] != "ok":
                w.writerow([SCHEMA_VERSION, kind, M, r, "failed"] + [""] * (len(METRIC_FIELDS) - 5))
                continue
            m, d, f = rec["metrics"], rec["design"], rec["fit"]
            port = Portfolio.from_dict(d["portfolio"])
            row = {
                "schema_version": SCHEMA_VERSION,
                "model": kind,
                "M": M,
                "replicate": r,
                "status": "ok",
                **{k: m[k] for k in ("kld", "kld_full", "design_error", "profit_recovery", "pricing_on_offering_recovery")},
                "model_profit": d["model_profit"],
                "true_profit": d["true_profit"],
                "true_profit_se": d["true_profit_se"],
                "repriced_true_profit": rec["repriced"]["true_profit"],
                "final_ll": f["final_ll"],
                "converged": f["converged"],
                "n_vehicles": port.n_vehicles,
                "styles": " ".join(str(b + 1) for b in port.styles),
            }
            w.writerow([_fmt(row[k]) for k in METRIC_FIELDS])
    with open(out / "designs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DESIGN_FIELDS)
        for rec in record.cells:
            if rec["status"] != "ok":
                continue
            kind, M, r = rec["key"]
            for j, v in enumerate(rec["design"]["portfolio"]["vehicles"]):
                w.writerow([SCHEMA_VERSION, kind, M, r, j + 1, v["b"], _fmt(v["e"]), _fmt(v["a"]), _fmt(v["p"])])
    with open(out / "timings.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TIMING_FIELDS)
        for rec in record.cells:
            if rec["status"] == "ok":
                t = rec["timings"]
                w.writerow(list(rec["key"]) + [f"{t[k]:.3f}" for k in TIMING_FIELDS[3:]])


def load_record(output_dir) -> RunRecord:
    out = Path(output_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    config = ExperimentConfig.from_dict(manifest["config"])
    cells = [json.loads(line) for line in (out / "cells.jsonl").read_text().splitlines()]
    cells.sort(key=lambda r: _cell_order(config)(r["key"]))
    return RunRecord(config, manifest["config_hash"], DesignOutcome.load(out / "ideal.json"), cells, out)


# ---------------------------------------------------------------------------
# figure tables


def emit_figure_data(record: RunRecord, figure: int) -> list[dict]:
    """Summary table behind one of the five result figures.

    Figures 1-4 give min/mean/max across replicates of KLD, design error,
    profit recovery and pricing-on-offering recovery per (model, M). Figure 5
    gives the per-(model, M) means of the other metrics against mean KLD.
    Cells without results appear with ``status = "gap"`` and empty values.
    """
    if figure not in (1, 2, 3, 4, 5):
        raise ValueError("figure must be 1..5")
    config = record.config
    by_key: dict = {}
    for row in record.metric_rows():
        by_key.setdefault((row["model"], row["M"]), []).append(row)
    rows = []
    for kind in config.models:
        for M in config.M_grid:
            got = sorted(by_key.get((kind, M), []), key=lambda r: r["replicate"])
            status = "ok" if len(got) == config.replicates else ("partial" if got else "gap")
            base = {"model": kind, "M": M, "n": len(got), "status": status}
            if figure == 5:
                for name in ("kld", "design_error", "profit_recovery", "pricing_on_offering_recovery"):
                    base[f"mean_{name}"] = float(np.mean([r[name] for r in got])) if got else None
            else:
                vals = np.array([r[FIGURE_METRICS[figure]] for r in got], dtype=float)
                base["metric"] = FIGURE_METRICS[figure]
                base.update(
                    {"min": float(vals.min()), "mean": float(vals.mean()), "max": float(vals.max())}
                    if got
                    else {"min": None, "mean": None, "max": None}
                )
            rows.append(base)
    return rows


def write_figure_csv(rows, path) -> None:
    fields = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for r in rows:
            w.writerow(["" if r[k] is None else _fmt(r[k]) for k in fields])


def default_workers() -> int:
    return max(1, min(8, os.cpu_count() or 1))
