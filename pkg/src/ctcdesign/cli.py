"""Command-line interface: ``ctcdesign <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .choice_models import model_from_dict, model_to_dict
from .design import DesignOutcome, ideal_design, outer_optimize, price_on_offering, true_profit, truth_normals
from .engineering import EngineeringConfig, default_engineering, feasibility_table
from .estimation import MODEL_KINDS, EstimationOptions, estimate
from .experiment import (
    ExperimentConfig,
    derive_seed,
    emit_figure_data,
    load_record,
    run_experiment,
    write_figure_csv,
)
from .market import generate_markets, read_bundle, read_shares_csv, simulate_shares, true_choice_probability, write_bundle, write_shares_csv
from .metrics import kld

log = logging.getLogger("ctcdesign")


def _config(args) -> ExperimentConfig:
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        doc.update(overrides)
        if args.paper_scale:
            return ExperimentConfig.paper_scale(**doc)
        return ExperimentConfig.from_dict(doc)
    return ExperimentConfig.paper_scale(**overrides) if args.paper_scale else ExperimentConfig(**overrides)


def _out(config) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_data(path):
    path = Path(path)
    if path.suffix == ".json":
        markets, shares, _ = read_bundle(path)
    else:
        markets, shares = read_shares_csv(path)
    return markets, shares


def _engineering(config) -> EngineeringConfig:
    return config.load_engineering()


def cmd_generate(args) -> int:
    config = _config(args)
    pop = config.load_population()
    M = args.markets or config.M_grid[0]
    seed = derive_seed(config.master_seed, "data", M, args.replicate)
    rng = np.random.default_rng(seed)
    markets = generate_markets(rng, M, config.J_m, pop.n_styles)
    shares = [simulate_shares(m, pop, config.N_m, rng) for m in markets]
    out = _out(config)
    write_shares_csv(out / "shares.csv", markets, shares)
    write_bundle(out / "bundle.json", markets, shares, seed=seed, master_seed=config.master_seed, M=M, replicate=args.replicate, N_m=config.N_m)
    print(f"wrote {M} markets to {out / 'shares.csv'} and {out / 'bundle.json'}")
    return 0


def cmd_estimate(args) -> int:
    config = _config(args)
    markets, shares = _load_data(args.data)
    seed = config.master_seed
    options = EstimationOptions(
        multistart_count=args.multistart or int(config.multistart.get(args.model, 5)),
        max_iterations=config.max_iterations,
        rcl_mc_draws=config.I_rcl,
        seed=seed,
        log_path=args.log,
    )
    fit = estimate(args.model, markets, shares, options)
    doc = {
        **model_to_dict(fit.model),
        "estimation": {
            "seed": seed,
            "M": len(markets),
            "final_ll": fit.final_ll,
            "converged": fit.converged,
            "start_index": fit.start_index,
            "n_iterations": fit.n_iterations,
            "wall_time": fit.wall_time,
            "degenerate": fit.degenerate,
        },
    }
    out = _out(config)
    path = out / f"model_{args.model}.json"
    path.write_text(json.dumps(doc, indent=2))
    print(f"{args.model}: LL={fit.final_ll:.6f} converged={fit.converged} -> {path}")
    return 0 if fit.converged else 1


def cmd_design(args) -> int:
    config = _config(args)
    cfg = _engineering(config)
    out = _out(config)
    ga = config.ga_options()
    eval_seed = derive_seed(config.master_seed, "evaluation")
    pop = config.load_population()
    if args.truth:
        outcome = ideal_design(pop, cfg, ga, seed=eval_seed, search_draws=config.I_search, final_draws=config.I_true, n_polish=config.ideal_polish)
        path = out / "ideal.json"
    else:
        if not args.model_file:
            print("design needs --model-file or --truth", file=sys.stderr)
            return 2
        model = model_from_dict(json.loads(Path(args.model_file).read_text()))
        seed = derive_seed(config.master_seed, f"design-{model.kind}")
        outcome = outer_optimize(model, cfg, ga, rng=seed, seed=seed, provenance={"model_file": str(args.model_file)})
        outcome.true_profit, outcome.true_profit_se = true_profit(outcome.portfolio, pop, cfg, config.I_true, eval_seed)
        path = out / f"design_{model.kind}.json"
    outcome.save(path)
    print(f"model profit {outcome.model_profit:.6f}, true profit {outcome.true_profit:.6f} -> {path}")
    return 0


def cmd_evaluate(args) -> int:
    config = _config(args)
    pop = config.load_population()
    cfg = _engineering(config)
    report = {}
    if args.model_file:
        model = model_from_dict(json.loads(Path(args.model_file).read_text()))
        rng = np.random.default_rng(derive_seed(config.master_seed, "validation"))
        markets = generate_markets(rng, config.validation_markets, config.J_m, pop.n_styles)
        normals = truth_normals(config.I_true, derive_seed(config.master_seed, "validation-truth"))
        truth = [true_choice_probability(m, pop, normals=normals) for m in markets]
        report["kld"] = kld(markets, model, truth, include_outside=config.kld_include_outside)
        report["kld_full"] = kld(markets, model, truth, include_outside=True)
    if args.design_file:
        outcome = DesignOutcome.load(args.design_file)
        eval_seed = derive_seed(config.master_seed, "evaluation")
        normals = truth_normals(config.I_true, eval_seed)
        profit, se = true_profit(outcome.portfolio, pop, cfg, normals=normals)
        _, repriced = price_on_offering(outcome.portfolio, pop, cfg, normals=normals)
        report.update(true_profit=profit, true_profit_se=se, repriced_true_profit=repriced)
        if args.ideal_file:
            ideal = DesignOutcome.load(args.ideal_file)
            from .metrics import design_error, profit_recovery

            report["design_error"] = design_error(outcome.portfolio, ideal.portfolio, pop.n_styles)
            report["profit_recovery"] = profit_recovery(profit, ideal.true_profit)
            report["pricing_on_offering_recovery"] = profit_recovery(repriced, ideal.true_profit)
    if not report:
        print("evaluate needs --model-file and/or --design-file", file=sys.stderr)
        return 2
    print(json.dumps(report, indent=2))
    return 0


def cmd_experiment(args) -> int:
    config = _config(args)
    if args.workers:
        config.workers = args.workers
    record = run_experiment(config, resume=args.resume)
    failed = record.failures()
    print(f"{len(record.cells) - len(failed)} cells ok, {len(failed)} failed; results in {config.output_dir}")
    for rec in failed:
        print(f"  failed {rec['key']}: {rec['error']}", file=sys.stderr)
    return 0 if record.ok else 1


def cmd_figure(args) -> int:
    run_dir = Path(args.output_dir or "results")
    record = load_record(run_dir)
    rows = emit_figure_data(record, args.n)
    path = run_dir / f"figure{args.n}.csv"
    write_figure_csv(rows, path)
    print(path.read_text(), end="")
    return 0 if all(r["status"] == "ok" for r in rows) else 1


def cmd_engineering(args) -> int:
    cfg = EngineeringConfig.load(args.config) if args.config else default_engineering()
    w = csv.writer(sys.stdout)
    w.writerow(["b", "a", "e", "denominator", "cost", "within_bounds"])
    for row in feasibility_table(cfg, args.points):
        w.writerow([row[0], f"{row[1]:.6g}", f"{row[2]:.6g}", f"{row[3]:.6g}", f"{row[4]:.6g}", str(row[5]).lower()])
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--output-dir", help="directory for outputs")
    common.add_argument("--paper-scale", action="store_true", help="use the full grid, replicate count and Monte Carlo sizes")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="ctcdesign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="simulate markets and shares")
    p.add_argument("--markets", "-M", type=int, help="number of markets (default: first M in the grid)")
    p.add_argument("--replicate", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("estimate", parents=[common], help="fit a choice model to share data")
    p.add_argument("--data", required=True, help="shares CSV or JSON bundle")
    p.add_argument("--model", required=True, choices=MODEL_KINDS)
    p.add_argument("--multistart", type=int)
    p.add_argument("--log", help="per-iteration estimation log CSV")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("design", parents=[common], help="optimize a portfolio under a fitted model or the true behavior")
    p.add_argument("--model-file")
    p.add_argument("--truth", action="store_true", help="design against the true behavior (ideal portfolio)")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("evaluate", parents=[common], help="KLD of a model and true profit of a design")
    p.add_argument("--model-file")
    p.add_argument("--design-file")
    p.add_argument("--ideal-file")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", parents=[common], help="run the full grid")
    p.add_argument("--workers", type=int)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("figure", parents=[common], help="write figure data from a finished run")
    p.add_argument("n", type=int, choices=range(1, 6))
    p.set_defaults(func=cmd_figure)

    p = sub.add_parser("engineering", parents=[common], help="print feasibility curves as CSV")
    p.add_argument("--points", type=int, default=25)
    p.set_defaults(func=cmd_engineering)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)], format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
