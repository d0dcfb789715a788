"""
Command-line interface for training, sampling and evaluating CAEs.

Every command reads a run config (`--config PATH` plus `--section.key value`
overrides), computes its results, and only then writes its outputs and the
fully resolved config into `--out DIR`.

Exit codes: 0 success, 2 configuration or input error, 3 numeric divergence,
1 anything else.
"""

import argparse
import logging
import signal
import sys
from pathlib import Path

import numpy as np
from rich.console import Console
from rich.markdown import Markdown
from rich.panel import Panel
from rich.table import Table

from .config import RESOLVED_CONFIG_NAME, SCHEMA, ConfigError, RunConfig, config, load_run_config, write_resolved
from .data import (
    DataFormatError,
    Dataset,
    binarize,
    grid_shape,
    load_idx_dataset,
    split,
    subset,
    synth_circle,
)
from .evaluation import (
    DEFAULT_BANDWIDTHS,
    DeformRanges,
    EvaluationError,
    cross_validate_bandwidth,
    deform_dataset,
    identity_deform,
    linear_probe,
    parzen_fit,
    parzen_loglik,
    random_affine,
    sensitivity_difference,
    sensitivity_from_pairs,
)
from .health_monitor import HealthMonitor
from .model import CaeHyper, CaeParams, DivergenceError, init_params, train
from .model_loader import get_model_info, load_first_layer, load_model
from .numerics import make_rng
from .reports import (
    create_parzen_summary,
    create_probe_summary,
    create_sampling_summary,
    create_sensitivity_summary,
    create_spectrum_summary,
    create_training_summary,
    write_report,
    write_table,
)
from .sampler import (
    ChainConfig,
    ChainDivergenceError,
    cross_initialization_gap,
    energy_fraction,
    harvest,
    run_chains,
    spectrum_profile,
)
from .stack import CaePlusHyper, StackedCae, features, train_layer2
from .storage import layout, load_trace, normalize_rows, render_grid, save_layer, save_stack, save_trace, write_pgm

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3

# Key overridden by --seed for each command
PRIMARY_SEED = {
    "train": "train.seed",
    "stack": "stack.seed",
    "sample": "sampler.seed",
    "eval-parzen": "parzen.baseline_seed",
    "eval-sensitivity": "sensitivity.seed",
    "probe": "probe.seed",
    "render": "data.seed",
    "spectrum": "data.seed",
}

COMMAND_HELP = {
    "train": "Train a single CAE layer (writes model.cae)",
    "stack": "Train layer 2 on a frozen layer 1 (writes model.cae2)",
    "sample": "Run Jacobian and/or isotropic chains (writes traces and grids)",
    "eval-parzen": "Parzen log-likelihood of the test split under chain samples",
    "eval-sensitivity": "Normalized sensitivity of models to affine deformations",
    "probe": "Frozen-feature linear probe (proxy for fine-tuning)",
    "render": "Render dataset items, chain states or filters as a PGM grid",
    "spectrum": "Singular spectrum of the Jacobian at dataset points",
}


def _build(cls, **kwargs):
    """Construct a validated dataclass, reporting invalid settings as ConfigError."""
    try:
        return cls(**kwargs)
    except ValueError as e:
        raise ConfigError(f"Invalid {cls.__name__} settings: {e}")


def _data_path(raw: str) -> Path:
    path = Path(raw)
    if not path.is_absolute() and not path.exists():
        candidate = Path(config.DATA_DIR) / path
        if candidate.exists():
            return candidate
    return path


def load_dataset(cfg: RunConfig) -> Dataset:
    """Dataset described by the `data.*` section."""
    d = cfg.section("data")
    if d["source"] == "circle":
        dataset = _build_circle(d)
    elif d["source"] == "idx":
        if not d["images"]:
            raise ConfigError("data.images is required when data.source = idx")
        labels = _data_path(d["labels"]) if d["labels"] else None
        dataset = subset(load_idx_dataset(_data_path(d["images"]), labels), d["n"])
    else:
        raise ConfigError(f"Unknown data.source '{d['source']}' (expected circle or idx)")

    if d["binarize"] is not None:
        dataset = binarize(dataset, d["binarize"])
    return dataset


def _build_circle(d: dict) -> Dataset:
    try:
        return synth_circle(d["n"], d["dim"], d["radius"], d["noise_std"], d["seed"])
    except ValueError as e:
        raise ConfigError(f"Invalid circle settings: {e}")


def load_splits(cfg: RunConfig) -> tuple[Dataset, Dataset, Dataset]:
    try:
        return split(load_dataset(cfg), cfg["data.split"], cfg["data.split_seed"])
    except DataFormatError:
        raise
    except ValueError as e:
        raise ConfigError(str(e))


def layer_hyper(section: dict) -> CaeHyper:
    return _build(
        CaeHyper,
        hidden=section["hidden"],
        lam=section["lambda"],
        learning_rate=section["learning_rate"],
        epochs=section["epochs"],
        batch_size=section["batch_size"],
        seed=section["seed"],
        init_scale=section["init_scale"],
    )


def _require(cfg: RunConfig, key: str) -> str:
    value = cfg[key]
    if not value:
        raise ConfigError(f"{key} is required for this command")
    return value


def _check_input_size(model, dataset: Dataset):
    if model.input_size != dataset.dim:
        raise ConfigError(
            f"Model input size {model.input_size} does not match data dimension {dataset.dim}"
        )


def _show(console: Console, summary: str, style: str = "cyan"):
    console.print(Panel(Markdown(summary), border_style=style))


def cmd_train(cfg: RunConfig, out: Path, console: Console) -> dict:
    """Train layer 1 and write model.cae, train_log.csv and report.txt."""
    train_set, _, _ = load_splits(cfg)
    hyper = layer_hyper(cfg.section("train"))

    with console.status("[cyan]Training CAE layer...", spinner="dots", spinner_style="cyan"):
        params, log = train(train_set, hyper)

    rows = log.to_rows()
    info = get_model_info(params)
    save_layer(out / "model.cae", params)
    write_table(out / "train_log.csv", rows)
    report = {
        "command": "train",
        "seed": hyper.seed,
        "data_seed": cfg["data.seed"],
        "split_seed": cfg["data.split_seed"],
        "examples": len(train_set),
        "initial_objective": log.initial.objective,
        "final_objective": log.final.objective,
        "final_reconstruction": log.final.reconstruction,
        "final_penalty": log.final.penalty,
    }
    write_report(out / "report.txt", report)
    _show(console, create_training_summary(rows, info, "Layer-1 training"))
    return report


def cmd_stack(cfg: RunConfig, out: Path, console: Console) -> dict:
    """Train layer 2 (CAE-2, or CAE-2_p when lambda_p > 0) and write model.cae2."""
    layer1 = load_first_layer(_require(cfg, "stack.layer1"))
    train_set, _, _ = load_splits(cfg)
    _check_input_size(layer1, train_set)

    s = cfg.section("stack")
    hyper = _build(
        CaePlusHyper, layer=layer_hyper(s), lambda_p=s["lambda_p"], sigma=s["sigma"], clip=s["clip"]
    )

    with console.status("[cyan]Training layer 2...", spinner="dots", spinner_style="cyan"):
        layer2, log = train_layer2(train_set, layer1, hyper)

    model = StackedCae(layer1=layer1, layer2=layer2)
    rows = log.to_rows()
    save_stack(out / "model.cae2", model)
    write_table(out / "train_log.csv", rows)
    report = {
        "command": "stack",
        "seed": s["seed"],
        "lambda_p": s["lambda_p"],
        "sigma": s["sigma"],
        "initial_invariance": log.initial.invariance,
        "final_invariance": log.final.invariance,
        "final_objective": log.final.objective,
        "final_penalty": log.final.penalty,
    }
    write_report(out / "report.txt", report)
    _show(console, create_training_summary(rows, get_model_info(model), "Layer-2 training"))
    return report


def chain_configs(cfg: RunConfig) -> list[ChainConfig]:
    """One config per (mode, chain); the same chain index shares its seed across modes."""
    s = cfg.section("sampler")
    if not s["modes"]:
        raise ConfigError("sampler.modes must name at least one mode")
    if s["init"] not in ("uniform", "example"):
        raise ConfigError(f"sampler.init must be uniform or example, got '{s['init']}'")
    configs = []
    for mode in s["modes"]:
        for i in range(s["chains"]):
            configs.append(
                _build(
                    ChainConfig,
                    sigma=s["sigma"],
                    steps=s["steps"],
                    mode=mode,
                    seed=s["seed"] + i,
                    init=s["init"],
                    init_index=s["init_index"] + i,
                    record_every=s["record_every"],
                    burn_in=s["burn_in"],
                )
            )
    return configs


def trace_name(mode: str, index: int) -> str:
    return f"chain_{mode}_{index:03d}.ctrc"


def cmd_sample(cfg: RunConfig, out: Path, console: Console) -> dict:
    """Run the chains and write CTRC traces, recon-error tables and sample grids."""
    model = load_model(_require(cfg, "sampler.model"))
    train_set, _, _ = load_splits(cfg)
    _check_input_size(model, train_set)

    s = cfg.section("sampler")
    configs = chain_configs(cfg)
    if s["init"] == "example" and s["init_index"] + s["chains"] > len(train_set):
        raise ConfigError("sampler.init_index + sampler.chains exceeds the training split")

    with console.status(f"[cyan]Running {len(configs)} chains...", spinner="dots", spinner_style="cyan"):
        traces = run_chains(model, configs, train_set, workers=config.WORKERS)

    manifold = train_set.geometry.manifold
    recon_rows, summary_rows, grids = [], [], {}
    for mode in s["modes"]:
        mode_traces = [t for t in traces if t.config.mode == mode]
        for i, trace in enumerate(mode_traces):
            for step, err in zip(trace.steps, trace.recon_errors):
                recon_rows.append({"mode": mode, "chain": i, "step": step, "recon_error": err})

        errors = [e for t in mode_traces for step, e in zip(t.steps, t.recon_errors) if step >= s["burn_in"]]
        samples = harvest(mode_traces, s["burn_in"], s["thin"])
        row = {
            "mode": mode,
            "chains": len(mode_traces),
            "samples": samples.shape[0],
            "mean_recon_error": float(np.mean(errors)) if errors else float("nan"),
            "cross_init_gap": cross_initialization_gap(mode_traces, s["burn_in"]),
        }
        if manifold is not None:
            row["mean_distance"] = float(np.mean(manifold.distance(samples))) if len(samples) else float("nan")
        summary_rows.append(row)

        if train_set.geometry.kind == "grid" and len(samples):
            shown = samples[: s["grid_images"]]
            rows, cols = layout(len(shown), s["grid_cols"])
            grids[mode] = render_grid(shown, grid_shape(train_set), rows, cols, s["grid_pad"])

    for mode in s["modes"]:
        for i, trace in enumerate(t for t in traces if t.config.mode == mode):
            save_trace(out / "traces" / trace_name(mode, i), trace)
    write_table(out / "recon_errors.csv", recon_rows)
    write_table(out / "summary.csv", summary_rows)
    for mode, panel in grids.items():
        write_pgm(out / f"samples_{mode}.pgm", panel)

    _show(console, create_sampling_summary(summary_rows))
    return {"command": "sample", "seed": s["seed"], "summary": summary_rows}


def _trace_groups(trace_dir: Path) -> dict[str, list]:
    if not trace_dir.is_dir():
        raise FileNotFoundError(f"Trace directory not found: {trace_dir}")
    groups: dict[str, list] = {}
    for path in sorted(trace_dir.glob("chain_*.ctrc")):
        mode = path.stem[len("chain_") :].rsplit("_", 1)[0]
        groups.setdefault(mode, []).append(load_trace(path))
    if not groups:
        raise EvaluationError(f"No chain traces (chain_*.ctrc) in {trace_dir}")
    return groups


def _score(samples: np.ndarray, valid: np.ndarray, test: np.ndarray, grid) -> dict:
    bandwidth = cross_validate_bandwidth(samples, valid, grid)
    mean_ll, stderr = parzen_loglik(parzen_fit(samples, bandwidth), test)
    return {"samples": samples.shape[0], "bandwidth": bandwidth, "mean_ll": mean_ll, "stderr": stderr}


def cmd_eval_parzen(cfg: RunConfig, out: Path, console: Console) -> dict:
    """Score the test split under Parzen fits of each mode's samples and a uniform baseline."""
    groups = _trace_groups(Path(_require(cfg, "parzen.traces")))
    _, valid, test = load_splits(cfg)
    p = cfg.section("parzen")
    test_items = subset(test, p["max_test"]).items
    if len(valid) == 0 or len(test_items) == 0:
        raise EvaluationError("Parzen evaluation needs non-empty validation and test splits")
    grid = p["bandwidths"] or DEFAULT_BANDWIDTHS

    rows = []
    largest = 0
    with console.status("[cyan]Fitting Parzen windows...", spinner="dots", spinner_style="cyan"):
        for mode, traces in groups.items():
            samples = harvest(traces, cfg["sampler.burn_in"], cfg["sampler.thin"])
            if samples.shape[0] < p["min_samples"]:
                raise EvaluationError(
                    f"Mode '{mode}' yields {samples.shape[0]} samples, fewer than parzen.min_samples={p['min_samples']}"
                )
            if samples.shape[1] != test_items.shape[1]:
                raise EvaluationError(
                    f"Samples of dimension {samples.shape[1]} do not match test data ({test_items.shape[1]})"
                )
            largest = max(largest, samples.shape[0])
            rows.append({"source": mode, **_score(samples, valid.items, test_items, grid)})

        noise = make_rng(p["baseline_seed"]).uniform(0.0, 1.0, size=(largest, test_items.shape[1]))
        rows.append({"source": "uniform-noise", **_score(noise, valid.items, test_items, grid)})

    write_table(out / "parzen.csv", rows)
    report = {
        "command": "eval-parzen",
        "baseline_seed": p["baseline_seed"],
        "burn_in": cfg["sampler.burn_in"],
        "thin": cfg["sampler.thin"],
        "test_examples": len(test_items),
        "stderr_kind": "standard error of the mean",
    }
    for row in rows:
        for key in ("samples", "bandwidth", "mean_ll", "stderr"):
            report[f"{row['source']}.{key}"] = row[key]
    write_report(out / "report.txt", report)
    _show(console, create_parzen_summary(rows))
    return report


def deform_ranges(cfg: RunConfig) -> DeformRanges:
    values = {}
    for name in DeformRanges.__dataclass_fields__:
        bounds = cfg[f"sensitivity.{name}"]
        if len(bounds) != 2:
            raise ConfigError(f"sensitivity.{name} must be 'low,high'")
        values[name] = tuple(bounds)
    return _build(DeformRanges, **values)


def cmd_eval_sensitivity(cfg: RunConfig, out: Path, console: Console) -> dict:
    """Paired normalized sensitivity of each model; differences against the last model."""
    s = cfg.section("sensitivity")
    if not s["models"]:
        raise ConfigError("sensitivity.models must list at least one model file")
    models = [load_model(path) for path in s["models"]]
    train_set, _, _ = load_splits(cfg)
    shape = grid_shape(train_set)
    for model in models:
        _check_input_size(model, train_set)

    data = subset(train_set, s["n"]).items
    deform = identity_deform if s["identity"] else random_affine(shape, deform_ranges(cfg))

    with console.status("[cyan]Measuring sensitivity...", spinner="dots", spinner_style="cyan"):
        deformed = deform_dataset(data, deform, make_rng(s["seed"]))
        reports = [
            sensitivity_from_pairs(lambda x, m=model: features(m, x), data, deformed)
            for model in models
        ]

    reference = reports[-1]
    rows = []
    for name, rep in zip(s["models"], reports):
        diff, diff_se = sensitivity_difference(rep, reference)
        rows.append(
            {
                "model": name,
                "gamma_bar": rep.gamma_bar,
                "gamma_stderr": rep.gamma_stderr,
                "selected_units": len(rep.selected_units),
                "diff_vs_ref": diff,
                "diff_stderr": diff_se,
            }
        )

    per_example = [
        {"example": i, **{name: rep.gamma_per_example[i] for name, rep in zip(s["models"], reports)}}
        for i in range(len(data))
    ]
    write_table(out / "sensitivity.csv", rows)
    write_table(out / "gamma_per_example.csv", per_example)
    report = {"command": "eval-sensitivity", "seed": s["seed"], "examples": len(data), "identity": s["identity"]}
    for row in rows:
        for key in ("gamma_bar", "gamma_stderr", "diff_vs_ref", "diff_stderr"):
            report[f"{row['model']}.{key}"] = row[key]
    write_report(out / "report.txt", report)
    _show(console, create_sensitivity_summary(rows, s["models"][-1]))
    return report


def cmd_probe(cfg: RunConfig, out: Path, console: Console) -> dict:
    """Linear probe on frozen top-layer features of each model (a proxy, not fine-tuning)."""
    p = cfg.section("probe")
    if not p["models"]:
        raise ConfigError("probe.models must list at least one model file")
    train_set, _, test = load_splits(cfg)
    if train_set.labels is None:
        raise EvaluationError("The linear probe needs labels (set data.labels)")
    if len(test) == 0:
        raise EvaluationError("The linear probe needs a non-empty test split")

    labels = np.concatenate([train_set.labels, test.labels])
    splits = (np.arange(len(train_set)), np.arange(len(train_set), len(train_set) + len(test)))

    rows = []
    with console.status("[cyan]Training linear probes...", spinner="dots", spinner_style="cyan"):
        for path in p["models"]:
            model = load_model(path)
            _check_input_size(model, train_set)
            feats = np.vstack([features(model, train_set.items), features(model, test.items)])
            result = linear_probe(
                feats,
                labels,
                splits,
                seed=p["seed"],
                epochs=p["epochs"],
                learning_rate=p["learning_rate"],
                batch_size=p["batch_size"],
            )
            rows.append(
                {"model": path, "accuracy": result.accuracy, "train_accuracy": result.train_accuracy}
            )

    write_table(out / "probe.csv", rows)
    report = {"command": "probe", "seed": p["seed"], "kind": "frozen-feature proxy"}
    for row in rows:
        report[f"{row['model']}.accuracy"] = row["accuracy"]
    write_report(out / "report.txt", report)
    _show(console, create_probe_summary(rows))
    return report


def cmd_render_grid(cfg: RunConfig, out: Path, console: Console) -> dict:
    """Render dataset items, post-burn-in chain states or layer-1 filters as one PGM."""
    r = cfg.section("render")
    dataset = load_dataset(cfg)
    shape = grid_shape(dataset)

    if r["source"] == "dataset":
        images = dataset.items
    elif r["source"] == "trace":
        images = harvest([load_trace(_require(cfg, "render.input"))], cfg["sampler.burn_in"], cfg["sampler.thin"])
    elif r["source"] == "filters":
        images = normalize_rows(load_first_layer(_require(cfg, "render.input")).w)
    else:
        raise ConfigError(f"Unknown render.source '{r['source']}' (expected dataset, trace or filters)")

    images = images[: r["count"]]
    if len(images) == 0:
        raise EvaluationError("Nothing to render")
    if images.shape[1] != shape[0] * shape[1]:
        raise DataFormatError(f"Items of size {images.shape[1]} do not share the {shape[0]}x{shape[1]} geometry")
    rows, cols = layout(len(images), r["cols"])
    panel = render_grid(images, shape, rows, cols, r["pad"])
    write_pgm(out / "render.pgm", panel)

    console.print(f"[green]✓ Rendered {len(images)} images as {panel.shape[0]}x{panel.shape[1]} pixels[/green]")
    return {"command": "render", "images": len(images), "height": panel.shape[0], "width": panel.shape[1]}


def _spectrum_stats(spectra: list, top_m: int, ratio_index: int) -> tuple[float, float]:
    energy = float(np.mean([energy_fraction(s, top_m) for s in spectra]))
    ratios = [s[0] / s[ratio_index - 1] if s[ratio_index - 1] > 0 else np.inf for s in spectra]
    return energy, float(np.mean(ratios))


def _training_settings(cfg: RunConfig, model_path: Path) -> dict:
    """
    The train.* settings a layer was trained with.

    Read from the resolved.conf written next to the model; a model without one
    falls back to the current run's train.* keys.
    """
    resolved = model_path.parent / RESOLVED_CONFIG_NAME
    if resolved.is_file():
        logger.info(f"Initialization baseline from {resolved}")
        return load_run_config(resolved).section("train")
    logger.warning(f"No {RESOLVED_CONFIG_NAME} next to {model_path}; baseline uses this run's train.* keys")
    return cfg.section("train")


def cmd_spectrum(cfg: RunConfig, out: Path, console: Console) -> dict:
    """Jacobian singular values at training points, with the initialization for comparison."""
    model = load_model(_require(cfg, "spectrum.model"))
    train_set, _, _ = load_splits(cfg)
    _check_input_size(model, train_set)
    sp = cfg.section("spectrum")
    points = subset(train_set, sp["points"]).items
    rank = min(model.input_size, model.hidden_size)
    if not 1 <= sp["top_m"] <= rank or not 1 <= sp["ratio_index"] <= rank:
        raise ConfigError(f"spectrum.top_m and spectrum.ratio_index must lie in [1, {rank}]")

    spectra = spectrum_profile(model, points)
    energy, ratio = _spectrum_stats(spectra, sp["top_m"], sp["ratio_index"])
    stats = {"points": len(points), "top_m": sp["top_m"], "ratio_index": sp["ratio_index"],
             "mean_energy": energy, "mean_ratio": ratio}

    if isinstance(model, CaeParams):
        t = _training_settings(cfg, Path(sp["model"]))
        initial = init_params(model.input_size, model.hidden_size, t["init_scale"], make_rng(t["seed"]))
        stats["init_mean_energy"], stats["init_mean_ratio"] = _spectrum_stats(
            spectrum_profile(initial, points), sp["top_m"], sp["ratio_index"]
        )

    rows = [{"point": i, **{f"s{j + 1}": v for j, v in enumerate(s)}} for i, s in enumerate(spectra)]
    write_table(out / "spectrum.csv", rows)
    write_report(out / "report.txt", {"command": "spectrum", **stats})
    _show(console, create_spectrum_summary(stats))
    return stats


COMMANDS = {
    "train": cmd_train,
    "stack": cmd_stack,
    "sample": cmd_sample,
    "eval-parzen": cmd_eval_parzen,
    "eval-sensitivity": cmd_eval_sensitivity,
    "probe": cmd_probe,
    "render": cmd_render_grid,
    "spectrum": cmd_spectrum,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cae",
        description="Contractive auto-encoders: training, Jacobian-chain sampling and evaluation",
        allow_abbrev=False,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMAND_HELP.items():
        sub = subparsers.add_parser(name, help=help_text, allow_abbrev=False)
        sub.add_argument("--config", type=str, default=None, help="Run config file (key = value)")
        sub.add_argument("--seed", type=int, default=None, help=f"Overrides {PRIMARY_SEED[name]}")
        sub.add_argument("--out", type=str, default=None, help=f"Output directory (default: runs/{name})")
        sub.add_argument(
            "--verbose", "-v", action="store_true", help="Show detailed technical logs for debugging"
        )
    return parser


def parse_overrides(tokens: list[str]) -> dict[str, str]:
    """
    Turn `--section.key value` / `--section.key=value` tokens into raw overrides.

    Raises:
        ConfigError: For stray arguments, missing values or unknown keys
    """
    overrides = {}
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--"):
            raise ConfigError(f"Unexpected argument: {token}")
        key = token[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        elif i + 1 < len(tokens):
            value = tokens[i + 1]
            i += 2
        else:
            raise ConfigError(f"Missing value for --{key}")
        if key not in SCHEMA:
            raise ConfigError(f"Unknown option --{key}")
        overrides[key] = value
    return overrides


def setup_logging(verbose: bool):
    """Rich console handler plus a rotating log file outside any output directory."""
    from logging.handlers import RotatingFileHandler

    from rich.logging import RichHandler

    log_level = logging.DEBUG if verbose else getattr(logging, config.LOG_LEVEL.upper(), logging.WARNING)
    handlers = [RichHandler(rich_tracebacks=True, show_time=False, show_path=False)]

    file_handler = RotatingFileHandler(
        config.LOG_FILE,
        maxBytes=10 * 1024 * 1024,  # 10MB per file
        backupCount=5,
        encoding="utf-8",
    )
    file_handler.setLevel(logging.INFO)
    file_handler.setFormatter(logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s"))
    handlers.append(file_handler)

    logging.basicConfig(level=log_level, format="%(message)s", handlers=handlers)


def _print_resources(console: Console, monitor: HealthMonitor):
    summary = monitor.get_metrics_summary()
    if not summary:
        return
    table = Table(title="Resources", show_header=True, header_style="dim")
    table.add_column("metric")
    for col in ("min", "max", "avg"):
        table.add_column(col, justify="right")
    for key in ("memory_mb", "thread_count", "cpu_percent"):
        table.add_row(key, *(str(summary[key][col]) for col in ("min", "max", "avg")))
    console.print(table, style="dim")


def run(argv: list[str] | None = None, console: Console | None = None) -> int:
    """
    Parse arguments, run one command and map failures to exit codes.

    Returns:
        Process exit code
    """
    console = console or Console()
    args, extra = build_parser().parse_known_args(argv)
    config.VERBOSE_MODE = args.verbose

    try:
        overrides = parse_overrides(extra)
        if args.seed is not None:
            overrides[PRIMARY_SEED[args.command]] = str(args.seed)
        cfg = load_run_config(args.config, overrides)
        out = Path(args.out or f"runs/{args.command}")

        logger.info(f"Running '{args.command}' into {out}")
        with HealthMonitor(out_dir=out, check_interval=config.MONITOR_INTERVAL) as monitor:
            COMMANDS[args.command](cfg, out, console)
        write_resolved(cfg, out)

        if config.VERBOSE_MODE:
            _print_resources(console, monitor)
        console.print(f"[green]✓ {args.command} finished; outputs in {out}[/green]")
        return EXIT_OK

    except (ConfigError, DataFormatError, EvaluationError, FileNotFoundError) as e:
        logger.error(f"{args.command} failed: {e}")
        console.print(f"[red]✗ Error: {e}[/red]")
        return EXIT_CONFIG

    except (DivergenceError, ChainDivergenceError) as e:
        logger.error(f"{args.command} diverged: {e}")
        console.print(f"[red]✗ Numeric divergence: {e}[/red]")
        return EXIT_DIVERGENCE

    except KeyboardInterrupt:
        console.print("\n[yellow]⚠ Interrupted. No outputs were finalized.[/yellow]")
        return EXIT_FAILURE

    except Exception as e:
        logger.exception(f"{args.command} failed unexpectedly: {e}")
        console.print(f"[red]✗ Error: {e}[/red]")
        return EXIT_FAILURE


def main():
    """Main entry point for the command-line interface."""
    verbose = any(flag in sys.argv[1:] for flag in ("--verbose", "-v"))
    setup_logging(verbose)

    def signal_handler(signum, frame):
        """Turn SIGTERM into the same clean shutdown as Ctrl-C."""
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, signal_handler)
    sys.exit(run())


if __name__ == "__main__":
    main()
