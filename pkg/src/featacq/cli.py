"""Command line front end.

Subcommands cover the full workflow: ``ingest`` dumps transport files to
inspectable tables, ``prepare`` builds a reusable task bundle, ``costs``
turns survey responses into per-category prices, ``train`` fits a strategy
checkpoint, ``sweep`` evaluates it across budgets, ``session`` steps through
one acquisition interactively, and ``inspect`` prints stored artifacts.

Configuration comes from an optional TOML or JSON file mirroring RunConfig;
command line flags override file values. Every command that produces
artifacts records the resolved configuration next to them, and rerunning
with that file reproduces the artifacts byte for byte. Seeds are always
explicit: nothing here ever draws entropy from the clock.

Exit codes: 0 on success, 2 for configuration problems (bad flags, missing
paths, unknown tasks), 3 for data problems (malformed transport files,
unusable survey or bundle contents).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import evaluation, pipeline, strategies, survey, xpt
from .core import AllAcquired, Budget, available_actions, initial_state, query
from .nets import make_rng

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3

TASKS = ("diabetes", "heart", "hypertension", "custom")
STRATEGIES = ("random", "static-order", "exhaustive", "fact", "rl", "ol")
SYNTHETIC_TASKS = ("threshold", "proxy", "three-bit")


class ConfigError(Exception):
    """Wrong flags, missing paths, malformed configuration. Exit 2."""


class DataError(Exception):
    """Inputs exist but cannot be used. Exit 3."""


# --- configuration --------------------------------------------------------------


@dataclass
class RunConfig:
    """Everything a command needs, mergeable from file and flags."""

    task: str = "custom"
    seed: Optional[int] = None
    out_dir: str = "results"
    xpt: tuple = ()
    id_variable: Optional[str] = None
    label_variable: Optional[str] = None
    indicator_variables: tuple = ()
    features: tuple = ()
    synthetic: Optional[str] = None
    n_rows: int = 2000
    bundle: Optional[str] = None
    survey: Optional[str] = None
    catalog: Optional[str] = None
    checkpoint: Optional[str] = None
    strategy: str = "random"
    rule: str = "budget"
    budget: float = math.inf
    budget_grid: tuple = ()
    order_samples: int = 25
    tau_mi: Optional[float] = None
    tau_avail: Optional[float] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}, expected one of {TASKS}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(
                f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}"
            )
        if self.synthetic is not None and self.synthetic not in SYNTHETIC_TASKS:
            raise ConfigError(
                f"unknown synthetic task {self.synthetic!r}, expected one of {SYNTHETIC_TASKS}"
            )
        if self.rule not in ("budget", "all-acquired"):
            raise ConfigError(f"unknown rule {self.rule!r}")
        self.xpt = tuple(self.xpt)
        self.indicator_variables = tuple(self.indicator_variables)
        self.features = tuple(self.features)
        try:
            self.budget = float(self.budget)
            self.budget_grid = tuple(float(b) for b in self.budget_grid)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"budgets must be numbers: {exc}") from exc

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("an explicit --seed is required")
        return int(self.seed)

    def existing_path(self, name: str) -> Path:
        value = getattr(self, name)
        if value is None:
            raise ConfigError(f"--{name.replace('_', '-')} is required")
        path = Path(value)
        if not path.exists():
            raise ConfigError(f"{name} path does not exist: {path}")
        return path


def load_config_file(path: Path) -> dict:
    if not path.exists():
        raise ConfigError(f"config file does not exist: {path}")
    try:
        if path.suffix == ".json":
            doc = json.loads(path.read_text())
        elif path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # 3.10
                import tomli as tomllib
            doc = tomllib.loads(path.read_text())
        else:
            raise ConfigError(f"config file must be .toml or .json, got {path.suffix!r}")
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a table of settings")
    # Manifests written by commands wrap the settings under "config".
    if "config" in doc and isinstance(doc["config"], dict):
        doc = doc["config"]
    return doc


def resolve_config(args: argparse.Namespace) -> RunConfig:
    file_values: dict = {}
    if getattr(args, "config", None):
        file_values = load_config_file(Path(args.config))
    flag_values = {
        k: v
        for k, v in vars(args).items()
        if k not in ("command", "config", "func") and v is not None
    }
    merged = {**file_values, **flag_values}
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(merged) - known
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    return RunConfig(**merged)


def config_dict(config: RunConfig) -> dict:
    # Infinities go out as strings so the file stays strict JSON; RunConfig
    # coerces them back through float().
    doc = dataclasses.asdict(config)
    doc["budget"] = "inf" if math.isinf(config.budget) else config.budget
    doc["budget_grid"] = ["inf" if math.isinf(b) else b for b in config.budget_grid]
    return doc


def _write_config(config: RunConfig, command: str, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run_config.json", "w") as fh:
        json.dump({"command": command, "config": config_dict(config)}, fh, indent=2, sort_keys=True)


# --- shared helpers -----------------------------------------------------------------


def _parse_xpt(path: Path) -> xpt.XptDocument:
    try:
        return xpt.parse_document(path.read_bytes())
    except (ValueError, KeyError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def _load_bundle(config: RunConfig) -> pipeline.TaskBundle:
    path = config.existing_path("bundle")
    try:
        return pipeline.load_bundle(path)
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load bundle {path}: {exc}") from exc


def _load_checkpoint(config: RunConfig):
    path = config.existing_path("checkpoint")
    try:
        with open(path) as fh:
            return strategies.load_strategy(fh)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load checkpoint {path}: {exc}") from exc


def bundle_hash(bundle_dir: Path) -> str:
    """Order-fixed digest over every artifact in a saved bundle."""
    digest = hashlib.sha256()
    for name in ("matrix.csv", "catalog.csv", "splits.json", "manifest.json"):
        digest.update(name.encode())
        digest.update((bundle_dir / name).read_bytes())
    return digest.hexdigest()


def _make_config(cls, overrides: dict, seed: int):
    try:
        return cls(**{**overrides, "seed": seed})
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {cls.__name__}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"bad parameters for {cls.__name__}: {exc}") from exc


# --- ingest -----------------------------------------------------------------------


def cmd_ingest(config: RunConfig, stdout) -> int:
    if not config.xpt:
        raise ConfigError("--xpt is required")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for raw in config.xpt:
        path = Path(raw)
        if not path.exists():
            raise ConfigError(f"xpt path does not exist: {path}")
        document = _parse_xpt(path)
        print(xpt.inventory(document), file=stdout)
        for member in document.members:
            base = f"{path.stem}_{member.name}"
            with open(out / f"{base}_variables.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["name", "type", "length", "label"])
                for var in member.variables:
                    writer.writerow([var.name, var.type, var.length, var.label])
            with open(out / f"{base}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow([var.name for var in member.variables])
                for row in member.observations:
                    writer.writerow(
                        ["" if isinstance(v, xpt.MissingValue) else v for v in row]
                    )
            print(f"wrote {out / (base + '.csv')}", file=stdout)
    return EXIT_OK


# --- prepare -----------------------------------------------------------------------


def _synthetic_bundle(config: RunConfig, seed: int) -> pipeline.TaskBundle:
    from . import synthetic

    makers = {
        "threshold": lambda: synthetic.threshold_task_data(n=config.n_rows, seed=seed),
        "proxy": lambda: synthetic.proxy_task_data(n=config.n_rows, seed=seed),
        "three-bit": lambda: synthetic.three_bit_task_data(n=config.n_rows, seed=seed),
    }
    return makers[config.synthetic]()


def _task_def(config: RunConfig) -> pipeline.TaskDef:
    if config.task == "diabetes":
        if not config.label_variable:
            raise ConfigError("diabetes needs --label-variable (the glucose column)")
        return pipeline.diabetes_task(config.label_variable)
    if config.task == "hypertension":
        if not config.label_variable:
            raise ConfigError("hypertension needs --label-variable (the systolic column)")
        return pipeline.hypertension_task(config.label_variable)
    if config.task == "heart":
        if not config.indicator_variables:
            raise ConfigError("heart needs --indicator-variables")
        return pipeline.heart_disease_task(config.indicator_variables)
    raise ConfigError("custom tasks prepare from --synthetic only")


def cmd_prepare(config: RunConfig, stdout) -> int:
    seed = config.require_seed()
    out = Path(config.out_dir)
    if config.task == "custom":
        if config.synthetic is None:
            raise ConfigError("custom task needs --synthetic")
        bundle = _synthetic_bundle(config, seed)
    else:
        if not config.xpt:
            raise ConfigError("--xpt is required for survey-backed tasks")
        if not config.id_variable:
            raise ConfigError("--id-variable is required for survey-backed tasks")
        tables = []
        counters: dict = {}
        for raw in config.xpt:
            path = Path(raw)
            if not path.exists():
                raise ConfigError(f"xpt path does not exist: {path}")
            document = _parse_xpt(path)
            try:
                tables.extend(xpt.to_variable_tables(document, config.id_variable, counters))
            except KeyError as exc:
                raise DataError(f"{path}: {exc}") from exc
        prep_kwargs: dict = {"seed": seed}
        if config.tau_mi is not None:
            prep_kwargs["tau_mi"] = config.tau_mi
        if config.tau_avail is not None:
            prep_kwargs["tau_avail"] = config.tau_avail
        if config.features:
            prep_kwargs["features"] = config.features
        try:
            bundle = pipeline.build_task(tables, _task_def(config), pipeline.PrepConfig(**prep_kwargs))
        except (ValueError, KeyError) as exc:
            raise DataError(str(exc)) from exc
    pipeline.save_bundle(bundle, out)
    _write_config(config, "prepare", out)
    print(f"bundle {out} sha256 {bundle_hash(out)}", file=stdout)
    return EXIT_OK


# --- costs -------------------------------------------------------------------------


def _cost_table_from_file(path: Path) -> survey.CostTable:
    with open(path, newline="") as fh:
        first = fh.readline().strip()
    try:
        with open(path, newline="") as fh:
            if first == "category,median":
                return survey.CostTable.from_medians(survey.load_medians_csv(fh))
            return survey.survey_costs(survey.load_survey_csv(fh))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def cmd_costs(config: RunConfig, stdout) -> int:
    table = _cost_table_from_file(config.existing_path("survey"))
    table.to_csv(stdout)
    if config.catalog is not None:
        catalog_path = config.existing_path("catalog")
        try:
            with open(catalog_path, newline="") as fh:
                catalog = pipeline.FeatureCatalog.from_csv(fh)
            stamped = survey.assign_costs(catalog, table)
        except (ValueError, KeyError) as exc:
            raise DataError(f"{catalog_path}: {exc}") from exc
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "catalog.csv", "w", newline="") as fh:
            stamped.to_csv(fh)
        print(f"wrote {out / 'catalog.csv'}", file=stdout)
    return EXIT_OK


# --- train -------------------------------------------------------------------------


def _train_strategy(config: RunConfig, bundle: pipeline.TaskBundle, seed: int):
    ds = bundle.dataset
    train = bundle.splits.train
    matrix = ds.matrix[train]
    avail = ds.availability[train]
    labels = ds.labels[train]
    params = dict(config.params)
    predictor_overrides = params.pop("predictor", {})

    def predictor():
        cfg = _make_config(strategies.PredictorConfig, predictor_overrides, seed)
        return strategies.train_partial_predictor(
            matrix, avail, labels, ds.n_classes, ds.catalog, cfg
        )

    name = config.strategy
    if name == "random":
        if params:
            raise ConfigError(f"random takes no parameters, got {sorted(params)}")
        return strategies.RandomStrategy(predictor(), strategies.RandomConfig(seed=seed))
    if name == "static-order":
        ordering = tuple(params.pop("ordering", range(len(ds.catalog))))
        if params:
            raise ConfigError(f"unknown static-order parameters: {sorted(params)}")
        return strategies.StaticOrderStrategy(
            predictor(), strategies.StaticOrderConfig(ordering=ordering), ds.catalog
        )
    if name == "exhaustive":
        try:
            cfg = strategies.ExhaustiveConfig(**params)
        except TypeError as exc:
            raise ConfigError(f"bad parameters for ExhaustiveConfig: {exc}") from exc
        store = strategies.build_train_store(
            matrix, avail, ds.catalog, bins=cfg.bins, neighbors=cfg.neighbors
        )
        return strategies.ExhaustiveStrategy(predictor(), store, ds.catalog, cfg)
    if name == "fact":
        cfg = _make_config(strategies.FactConfig, params, seed)
        model = strategies.train_fact(matrix, avail, labels, ds.n_classes, ds.catalog, cfg)
        return strategies.FactStrategy(model, ds.catalog, cfg)
    if name == "rl":
        cfg = _make_config(strategies.RlBasedConfig, params, seed)
        strategy, _ = strategies.train_q_strategy(
            "rl", matrix, avail, labels, ds.n_classes, ds.catalog, cfg,
            predictor_config=_make_config(strategies.PredictorConfig, predictor_overrides, seed),
        )
        return strategy
    cfg = _make_config(strategies.OlConfig, params, seed)
    strategy, _ = strategies.train_q_strategy(
        "ol", matrix, avail, labels, ds.n_classes, ds.catalog, cfg,
        predictor_config=_make_config(strategies.PredictorConfig, predictor_overrides, seed),
    )
    return strategy


def cmd_train(config: RunConfig, stdout) -> int:
    seed = config.require_seed()
    bundle = _load_bundle(config)
    try:
        strategy = _train_strategy(config, bundle, seed)
    except strategies.StrategyError as exc:
        raise DataError(str(exc)) from exc
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint = out / f"{config.strategy}.json"
    with open(checkpoint, "w") as fh:
        strategies.save_strategy(strategy, fh)
    _write_config(config, "train", out)
    print(
        f"checkpoint {checkpoint} sha256 {evaluation.checkpoint_hash(strategy)}",
        file=stdout,
    )
    return EXIT_OK


# --- sweep -------------------------------------------------------------------------


def cmd_sweep(config: RunConfig, stdout) -> int:
    seed = config.require_seed()
    bundle = _load_bundle(config)
    strategy = _load_checkpoint(config)
    ds = bundle.dataset
    instances = evaluation.bundle_instances(bundle, "test")
    if not instances:
        raise DataError("bundle has an empty test split")
    grid = config.budget_grid or (math.inf,)
    if config.rule == "budget":
        template = Budget
    else:
        template = lambda _c: AllAcquired()
    strategy_id = evaluation.strategy_label(strategy)
    try:
        result, lines = evaluation.sweep(
            strategy, instances, grid, template, seed, ds.catalog,
            strategy_id=strategy_id, task_id=ds.task_name,
        )
    except evaluation.UntrainedStrategyError as exc:
        raise DataError(str(exc)) from exc
    matrix = evaluation.order_matrix(
        strategy, instances, config.order_samples, AllAcquired(), seed, ds.catalog,
        task_id=ds.task_name,
    )
    importance = evaluation.logistic_importance(ds, seed=seed)
    manifest = {
        "command": "sweep",
        "config": config_dict(config),
        "seed": seed,
        "task": ds.task_name,
        "strategy": strategy_id,
        "checkpoint_sha256": evaluation.checkpoint_hash(strategy),
    }
    written = evaluation.write_results(
        config.out_dir, ds.task_name, strategy_id,
        sweep_result=result, trajectory_lines=lines, matrix=matrix,
        importance=importance, manifest=manifest,
    )
    _write_config(config, "sweep", Path(config.out_dir) / ds.task_name / strategy_id)
    for point in result.points:
        print(
            f"control={point.control:g} mean_cost={point.mean_cost:.4f} "
            f"accuracy={point.accuracy:.4f} episodes={point.n_episodes}",
            file=stdout,
        )
    print(f"results under {written['sweep'].parent}", file=stdout)
    return EXIT_OK


# --- session -----------------------------------------------------------------------


def _read_block(line: str, width: int) -> Optional[list]:
    parts = [p.strip() for p in line.split(",")]
    if len(parts) != width:
        return None
    try:
        return [float(p) for p in parts]
    except ValueError:
        return None


def cmd_session(config: RunConfig, stdin, stdout) -> int:
    """Drive one acquisition by hand: the engine proposes, the user supplies.

    This is a debugging surface. The policy cannot be steered, only refused
    a feature with ``skip``; values are entered in encoded units.
    """
    seed = config.require_seed()
    bundle = _load_bundle(config)
    strategy = _load_checkpoint(config)
    catalog = bundle.dataset.catalog
    budget = config.budget
    rng = make_rng(seed)
    state = initial_state(catalog)
    skipped: set = set()
    print(f"budget {budget:g}; features: {', '.join(catalog.names)}", file=stdout)
    while True:
        # Fraction <= float compares exactly, and an infinite budget never binds.
        legal = sorted(
            j
            for j in available_actions(state)
            if j not in skipped and state.spent + catalog.costs[j] <= budget
        )
        if not legal:
            print("no affordable features left", file=stdout)
            break
        choice = strategy.select(state, legal, rng)
        if choice is None:
            print("policy stops here", file=stdout)
            break
        entry = catalog.entries[choice]
        width = entry.encoded_width
        hint = "value" if width == 1 else f"{width} comma-separated values"
        print(
            f"next: {entry.name} (cost {entry.cost}); enter {hint}, 'skip', or 'stop'",
            file=stdout,
        )
        line = stdin.readline()
        if not line:
            break
        line = line.strip()
        if line == "stop":
            break
        if line == "skip":
            skipped.add(choice)
            continue
        block = _read_block(line, width)
        if block is None:
            print(f"could not read {hint}; try again", file=stdout)
            continue
        state = query(state, choice, block[0] if width == 1 else block, catalog)
        prediction = strategy.predict(state, rng=rng)
        certainty = strategy.certainty(state, rng=rng)
        print(
            f"prediction={prediction} certainty={certainty:.3f} spent={state.spent}",
            file=stdout,
        )
    prediction = strategy.predict(state, rng=rng)
    certainty = strategy.certainty(state, rng=rng)
    print(
        f"final prediction={prediction} certainty={certainty:.3f} spent={state.spent}",
        file=stdout,
    )
    return EXIT_OK


# --- inspect -----------------------------------------------------------------------


def cmd_inspect(config: RunConfig, stdout) -> int:
    shown = False
    if config.bundle is not None:
        bundle = _load_bundle(config)
        print(json.dumps(bundle.manifest, indent=2, sort_keys=True), file=stdout)
        bundle.dataset.catalog.to_csv(stdout)
        splits = bundle.splits
        print(
            f"rows: train={len(splits.train)} val={len(splits.val)} test={len(splits.test)}",
            file=stdout,
        )
        shown = True
    if config.checkpoint is not None:
        strategy = _load_checkpoint(config)
        doc = strategies.strategy_to_dict(strategy)
        print(f"strategy: {doc['variant']}", file=stdout)
        print(json.dumps(doc.get("config", {}), indent=2, sort_keys=True), file=stdout)
        print(f"sha256: {evaluation.checkpoint_hash(strategy)}", file=stdout)
        shown = True
    if config.xpt:
        for raw in config.xpt:
            path = Path(raw)
            if not path.exists():
                raise ConfigError(f"xpt path does not exist: {path}")
            print(xpt.inventory(_parse_xpt(path)), file=stdout)
        shown = True
    if not shown:
        raise ConfigError("inspect needs --bundle, --checkpoint, or --xpt")
    return EXIT_OK


# --- argument parsing ----------------------------------------------------------------


def _comma_floats(text: str) -> tuple:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok != "")
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}: {exc}") from exc


def _json_params(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"params must be JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise argparse.ArgumentTypeError("params must be a JSON object")
    return doc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="featacq",
        description="Budget-aware sequential feature acquisition workflows.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML or JSON settings file; flags override")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", dest="out_dir")

    p = sub.add_parser("ingest", help="dump transport files to CSV tables")
    common(p)
    p.add_argument("--xpt", action="append", help="transport file (repeatable)")

    p = sub.add_parser("prepare", help="build a task bundle")
    common(p)
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--xpt", action="append")
    p.add_argument("--id-variable", dest="id_variable")
    p.add_argument("--label-variable", dest="label_variable")
    p.add_argument("--indicator-variables", dest="indicator_variables",
                   type=lambda s: tuple(s.split(",")))
    p.add_argument("--features", type=lambda s: tuple(s.split(",")))
    p.add_argument("--synthetic", choices=SYNTHETIC_TASKS)
    p.add_argument("--n-rows", dest="n_rows", type=int)
    p.add_argument("--tau-mi", dest="tau_mi", type=float)
    p.add_argument("--tau-avail", dest="tau_avail", type=float)

    p = sub.add_parser("costs", help="price categories from survey responses")
    common(p)
    p.add_argument("--survey")
    p.add_argument("--catalog", help="catalog to restamp with the new costs")

    p = sub.add_parser("train", help="fit a strategy checkpoint")
    common(p)
    p.add_argument("--bundle")
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--params", type=_json_params, help="strategy parameters as JSON")

    p = sub.add_parser("sweep", help="evaluate a checkpoint across budgets")
    common(p)
    p.add_argument("--bundle")
    p.add_argument("--checkpoint")
    p.add_argument("--grid", dest="budget_grid", type=_comma_floats,
                   help="comma-separated budget limits, e.g. 0,1,2,inf")
    p.add_argument("--rule", choices=("budget", "all-acquired"))
    p.add_argument("--order-samples", dest="order_samples", type=int)

    p = sub.add_parser("session", help="step through one acquisition by hand")
    common(p)
    p.add_argument("--bundle")
    p.add_argument("--checkpoint")
    p.add_argument("--budget", type=float)

    p = sub.add_parser("inspect", help="print stored artifacts")
    common(p)
    p.add_argument("--bundle")
    p.add_argument("--checkpoint")
    p.add_argument("--xpt", action="append")

    return parser


def main(argv: Optional[Sequence[str]] = None, stdin=None, stdout=None, stderr=None) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    stderr = stderr if stderr is not None else sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        config = resolve_config(args)
        if args.command == "ingest":
            return cmd_ingest(config, stdout)
        if args.command == "prepare":
            return cmd_prepare(config, stdout)
        if args.command == "costs":
            return cmd_costs(config, stdout)
        if args.command == "train":
            return cmd_train(config, stdout)
        if args.command == "sweep":
            return cmd_sweep(config, stdout)
        if args.command == "session":
            return cmd_session(config, stdin, stdout)
        return cmd_inspect(config, stdout)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
