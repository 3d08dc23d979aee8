import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import pandas as pd

import config.config as config
from datagen import (
    DatasetOptions,
    GridGenConfig,
    ScenarioGenConfig,
    build_dataset,
    gen_grid,
    kerber_like_configs,
    load_generator_config,
)
from errors import BadConfig, BoostRpfError, EmptyDataset, SchemaError
from evaluation import evaluate, scaling_study
from gbt import count_parameters
from grid_model import GridDataset, load_grid, load_grid_dataset, load_scenario, save_grid_dataset, save_voltage_state
from path_engine import orient
from plugin_loader import MethodLoader
from plugins.voltage_method import VoltageMethod
from run_config import RunConfig, derive_seeds, load_run_config, split_indices
from run_manifest import RunManifest, hash_inputs
from sequential_model import save_predictor, train

logger = logging.getLogger(__name__)

SPLITS_FILE = "splits.json"


def _write_json(path: Path, document: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _finish(command: str, run_config: RunConfig, inputs: Sequence[str], outputs: List[Path]) -> List[Path]:
    out_dir = Path(run_config.out)
    manifest = RunManifest(
        command=command,
        config=run_config.to_dict(),
        seed=run_config.seed,
        inputs=hash_inputs([p for p in inputs if p]),
        outputs=[Path(p).relative_to(out_dir).as_posix() for p in outputs],
    )
    return outputs + [manifest.save(out_dir)]


def _method(run_config: RunConfig, loader: MethodLoader) -> VoltageMethod:
    options = {
        "predictor_path": run_config.predictor,
        "by_depth": run_config.by_depth,
        "tol": run_config.solver.tol,
        "max_iter": run_config.solver.max_iter,
    }
    return loader.get(run_config.method, options).prepare()


def cmd_generate(run_config: RunConfig, loader: MethodLoader) -> List[Path]:
    if run_config.generator_config:
        grid_config, scenario_config = load_generator_config(run_config.generator_config)
    elif run_config.preset == "kerber":
        grid_config, scenario_config = kerber_like_configs()
    else:
        grid_config, scenario_config = GridGenConfig(), ScenarioGenConfig()

    out_dir = Path(run_config.out)
    seeds = derive_seeds(run_config.seed, 2 * len(run_config.grid_sizes))
    opts = DatasetOptions(solver=run_config.solver)
    outputs: List[Path] = []
    for i, n_buses in enumerate(run_config.grid_sizes):
        name = f"grid_{i:02d}_n{n_buses}"
        grid = gen_grid(replace(grid_config, n_buses=n_buses, seed=seeds[2 * i]))
        dataset = build_dataset(
            grid, replace(scenario_config, seed=seeds[2 * i + 1]), run_config.n_samples, opts, name=name
        )
        outputs.extend(save_grid_dataset(dataset, out_dir / name))
        logger.info(f"Generated {name}: {grid.n_buses} buses, {len(dataset.samples)} samples")
    return _finish("generate", run_config, [run_config.generator_config], outputs)


def _load_datasets(directories: Sequence[str]) -> List[GridDataset]:
    return [load_grid_dataset(directory) for directory in directories]


def cmd_train(run_config: RunConfig, loader: MethodLoader) -> List[Path]:
    datasets = _load_datasets(run_config.datasets)
    if not datasets:
        raise EmptyDataset("train needs at least one dataset directory (--dataset)")
    r_train, r_val, r_test = run_config.split_fractions
    seeds = derive_seeds(run_config.seed, len(datasets) + 1)

    splits: Dict[str, Dict[str, List[int]]] = {}
    train_sets, val_sets = [], []
    for directory, dataset, seed in zip(run_config.datasets, datasets, seeds):
        n_samples = len(dataset.samples)
        if run_config.split_mode == "scenario":
            parts = split_indices(n_samples, (r_train, r_val, r_test), seed)
        else:
            if r_train + r_val <= 0:
                raise BadConfig("Grid split mode needs a positive train or validation ratio")
            parts = split_indices(n_samples, (r_train / (r_train + r_val), r_val / (r_train + r_val), 0.0), seed)
            parts = {"train": sorted(parts["train"] + parts["test"]), "val": parts["val"], "test": []}
        splits[directory] = parts
        train_sets.append(dataset.subset(parts["train"]))
        val_sets.append(dataset.subset(parts["val"]))

    if run_config.split_mode == "grid":
        if not run_config.test_datasets:
            raise BadConfig("Grid split mode needs held-out grids (--test-dataset)")
        for directory, dataset in zip(run_config.test_datasets, _load_datasets(run_config.test_datasets)):
            splits[directory] = {"train": [], "val": [], "test": list(range(len(dataset.samples)))}

    params = replace(run_config.gbt, seed=seeds[-1])
    predictor = train(
        train_sets,
        run_config.variant,
        params,
        anchor=run_config.ldf_anchor,
        eval_datasets=[s for s in val_sets if s.samples] or None,
    )
    logger.info(f"Trained {len(predictor.model.trees)} trees, {count_parameters(predictor.model)} parameters")

    out_dir = Path(run_config.out)
    outputs = [save_predictor(predictor, out_dir / "predictor.json")]
    log_path = out_dir / "training_log.csv"
    pd.DataFrame(predictor.model.history).to_csv(log_path, index=False)
    outputs.append(log_path)
    outputs.append(
        _write_json(out_dir / SPLITS_FILE, {"mode": run_config.split_mode, "seed": run_config.seed, "datasets": splits})
    )
    return _finish("train", run_config, run_config.datasets + run_config.test_datasets, outputs)


def _test_datasets(splits_path: str) -> List[GridDataset]:
    try:
        with open(splits_path, "r", encoding="utf-8") as f:
            document = json.load(f)
        entries = document["datasets"]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise SchemaError(f"{splits_path} is not a valid splits file: {e}") from e
    return [
        load_grid_dataset(directory).subset(parts["test"]) for directory, parts in entries.items() if parts.get("test")
    ]


def cmd_eval(run_config: RunConfig, loader: MethodLoader) -> List[Path]:
    method = _method(run_config, loader)
    if run_config.splits:
        datasets = _test_datasets(run_config.splits)
    else:
        datasets = _load_datasets(run_config.datasets)
    report = evaluate(method, datasets, include_slack=run_config.include_slack)
    outputs = report.save(run_config.out)
    inputs = list(run_config.datasets) + [run_config.splits, run_config.predictor]
    return _finish("eval", run_config, inputs, outputs)


def cmd_solve(run_config: RunConfig, loader: MethodLoader) -> List[Path]:
    if not run_config.grid or not run_config.scenario:
        raise BadConfig("solve needs a grid file (--grid) and a scenario file (--scenario)")
    grid = load_grid(run_config.grid)
    scenario = load_scenario(run_config.scenario)
    method = _method(run_config, loader)
    result = method.run(grid, orient(grid), scenario)
    if not result.success:
        raise result.error
    logger.info(f"{method.name} solved {grid.n_buses} buses in {result.elapsed_ms:.3f} ms")
    outputs = [save_voltage_state(result.state, Path(run_config.out) / "voltage_state.json")]
    return _finish("solve", run_config, [run_config.grid, run_config.scenario, run_config.predictor], outputs)


def cmd_bench(run_config: RunConfig, loader: MethodLoader) -> List[Path]:
    method = _method(run_config, loader)
    report = scaling_study(
        method,
        run_config.bench_sizes,
        scenarios_per_size=run_config.scenarios_per_size,
        repetitions=run_config.repetitions,
        warmup=run_config.warmup,
        seed=derive_seeds(run_config.seed, 1)[0],
    )
    outputs = report.save(run_config.out)
    return _finish("bench", run_config, [run_config.predictor], outputs)


COMMANDS: Dict[str, Callable[[RunConfig, MethodLoader], List[Path]]] = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "solve": cmd_solve,
    "bench": cmd_bench,
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Run config file (YAML or JSON) or a manifest.json to re-run")
    parser.add_argument("--seed", type=int, help="Root seed all randomness is derived from")
    parser.add_argument("--out", help=f"Output directory (default {config.OUT_DIR})")


def _add_method(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--method", help="Voltage method name from the method registry")
    parser.add_argument("--predictor", help="Predictor file of the xgb-* methods")
    parser.add_argument("--by-depth", dest="by_depth", action="store_true", default=None,
                        help="Batch boosted inference per BFS depth level")
    parser.add_argument("--tol", dest="solver_tol", type=float, help="Iterative solver tolerance (p.u.)")
    parser.add_argument("--max-iter", dest="solver_max_iter", type=int, help="Iterative solver iteration limit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Radial power flow with boosted voltage-drop trees")
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="Generate grids and oracle-labeled scenario datasets")
    _add_common(generate)
    generate.add_argument("--generator-config", dest="generator_config", help="Generator config (grid / scenario sections)")
    generate.add_argument("--preset", choices=["kerber"], help="Built-in generator settings")
    generate.add_argument("--grid-sizes", dest="grid_sizes", type=int, nargs="+", help="Bus count of every grid")
    generate.add_argument("--n-samples", dest="n_samples", type=int, help="Scenarios per grid")

    train_cmd = commands.add_parser("train", help="Train a boosted predictor")
    _add_common(train_cmd)
    train_cmd.add_argument("--dataset", dest="datasets", action="append", help="Dataset directory (repeatable)")
    train_cmd.add_argument("--test-dataset", dest="test_datasets", action="append", help="Held-out dataset directory (grid split mode)")
    train_cmd.add_argument("--variant", help="absolute | parent | ldf")
    train_cmd.add_argument("--ldf-anchor", dest="ldf_anchor", choices=["parent", "slack"])
    train_cmd.add_argument("--split", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    train_cmd.add_argument("--split-mode", dest="split_mode", choices=["scenario", "grid"])
    train_cmd.add_argument("--n-estimators", dest="gbt_n_estimators", type=int)
    train_cmd.add_argument("--max-depth", dest="gbt_max_depth", type=int)
    train_cmd.add_argument("--learning-rate", dest="gbt_learning_rate", type=float)
    train_cmd.add_argument("--subsample", dest="gbt_subsample", type=float)
    train_cmd.add_argument("--multi-strategy", dest="gbt_multi_strategy", choices=["multi_output_tree", "one_output_per_tree"])

    eval_cmd = commands.add_parser("eval", help="Score a method on labeled datasets")
    _add_common(eval_cmd)
    _add_method(eval_cmd)
    eval_cmd.add_argument("--dataset", dest="datasets", action="append", help="Dataset directory (repeatable)")
    eval_cmd.add_argument("--splits", help="splits.json of a training run; its test scenarios are scored")
    eval_cmd.add_argument("--include-slack", dest="include_slack", action="store_true", default=None)

    solve = commands.add_parser("solve", help="Solve one scenario")
    _add_common(solve)
    _add_method(solve)
    solve.add_argument("--grid", help="Grid file")
    solve.add_argument("--scenario", help="Scenario file")

    bench = commands.add_parser("bench", help="Inference-time scaling study")
    _add_common(bench)
    _add_method(bench)
    bench.add_argument("--sizes", dest="bench_sizes", type=int, nargs="+", help="Grid sizes (at least 3, distinct)")
    bench.add_argument("--scenarios-per-size", dest="scenarios_per_size", type=int)
    bench.add_argument("--repetitions", type=int)
    bench.add_argument("--warmup", type=int)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    # Configure logging
    logging.basicConfig(level=config.LOG_LEVEL)

    overrides = {key: value for key, value in vars(args).items() if key not in ("command", "config")}
    try:
        run_config = load_run_config(args.config)
        if args.config is None and overrides.get("out") is None:
            overrides["out"] = str(config.OUT_DIR)
        run_config = run_config.with_overrides(overrides)
        loader = MethodLoader(config.METHOD_CONFIG_PATH)
        outputs = COMMANDS[args.command](run_config, loader)
    except (BoostRpfError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1

    logger.info(f"{args.command} wrote {len(outputs)} files to {run_config.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
