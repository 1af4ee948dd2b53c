"""Command-line pipeline orchestration.

Subcommands (each takes a JSON config, a seed, and an output directory):

* ``simulate``       -- run the forecasting game for one agent, write per-cell
                        panel CSVs.
* ``build-dataset``  -- construct instruction JSONL splits plus a hygiene
                        report.
* ``train``          -- pretrain a dense base or LoRA-SFT an existing
                        checkpoint from JSONL data; writes checkpoint +
                        training-report CSV.
* ``evaluate``       -- diagnose forecasts (panel files, a checkpoint, a
                        remote endpoint, or a full built-in experiment) into
                        report tables and plot CSVs.
* ``report``         -- consolidated summary of a run directory.

Exit codes: 0 success, 2 usage/config, 3 data, 4 training, 5 endpoint.
Every command writes a ``manifest.json`` recording config hash, seed,
input digests, outputs, and timings.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import replace

from . import __version__
from .agents import ExtrapConfig, ExtrapolativeAgent, LlmAgent, NetAgent, RationalAgent
from .ar1 import write_panel_csv, read_panel_csv
from .client import InferenceClient
from .datasets import (
    PromptVariant,
    SplitPlan,
    build_ar1_instruction_set,
    build_stock_instruction_set,
    export_jsonl,
    import_jsonl,
    split_guard,
)
from .econ import error_revision_regression
from .errors import (
    ConfigurationError,
    DataError,
    DebiasLabError,
    ProtocolError,
    TrainingError,
    TransportError,
)
from .net import (
    InputNormalizer,
    attach_lora,
    init_dense,
    load_checkpoint,
    merge_lora,
    parameter_counts,
    save_checkpoint,
)
from .pipeline import (
    DEFAULT_MASTER_SEED,
    SeriesExperimentConfig,
    StockExperimentConfig,
    evaluate_agent_on_cells,
    run_series_experiment,
    run_stock_experiment,
    series_examples_to_matrices,
    stock_examples_to_matrices,
)
from .reports import (
    FULL_SCALE_ERROR_REVISION_BASE,
    FULL_SCALE_ERROR_REVISION_FINETUNED,
    FULL_SCALE_EXTRAPOLATION_BASE,
    FULL_SCALE_EXTRAPOLATION_FINETUNED,
    write_descriptives_table,
    write_error_revision_plot,
    write_error_revision_table,
    write_extrapolation_table,
)
from .returns import build_windows, load_returns_csv, synth_reversal_panel
from .train import TrainConfig, train_dense, train_sft, write_report_csv

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_TRAINING = 4
EXIT_ENDPOINT = 5


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


class Manifest:
    def __init__(self, command: str, config: dict, seed: int, out_dir: str):
        self.data = {
            "command": command,
            "version": __version__,
            "seed": seed,
            "config": config,
            "config_hash": _config_hash(config),
            "inputs": {},
            "outputs": [],
            "timings": {},
        }
        self.out_dir = out_dir
        self._t0 = time.time()

    def add_input(self, path: str) -> None:
        self.data["inputs"][path] = _sha256_file(path)

    def add_output(self, path: str) -> None:
        self.data["outputs"].append(path)

    def finish(self) -> str:
        self.data["timings"]["total_seconds"] = round(time.time() - self._t0, 3)
        path = os.path.join(self.out_dir, "manifest.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def _load_config(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from exc


def _build_agent(spec: dict, seed: int):
    kind = spec.get("kind")
    if kind == "rational":
        return lambda rho: RationalAgent(rho=rho, mean=spec.get("mean", 0.0))
    if kind == "extrapolative":
        theta = spec.get("theta", 0.5)
        return lambda rho: ExtrapolativeAgent(
            ExtrapConfig(rho=rho, theta=theta, mean=spec.get("mean", 0.0))
        )
    if kind == "net":
        net, normalizer, _ = load_checkpoint(spec["checkpoint"])
        if normalizer is None:
            raise ConfigurationError("checkpoint carries no input normalizer")
        agent = NetAgent(net, normalizer)
        return lambda rho: agent
    if kind == "llm":
        client = InferenceClient(
            endpoint=spec.get("endpoint"),
            model=spec.get("model", "default"),
            cache_dir=spec.get("cache_dir"),
            parallelism=int(spec.get("parallelism", 4)),
        )
        variant = PromptVariant(kind=spec.get("variant", "baseline"), task="ar1")
        agent = LlmAgent(client, variant, max_tokens=int(spec.get("max_tokens", 256)))
        return lambda rho: agent
    raise ConfigurationError(f"unknown agent kind {kind!r}")


def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    seed = args.seed if args.seed is not None else config.get("seed", DEFAULT_MASTER_SEED)
    os.makedirs(args.out_dir, exist_ok=True)
    manifest = Manifest("simulate", config, seed, args.out_dir)
    manifest.add_input(args.config)

    rhos = tuple(config.get("rhos", [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]))
    agent_for = _build_agent(config.get("agent", {"kind": "rational"}), seed)
    results, panels = evaluate_agent_on_cells(
        agent_for,
        rhos=rhos,
        master_seed=seed,
        sessions_per_cell=int(config.get("sessions_per_cell", 32)),
        split=config.get("split", "test"),
        sigma=float(config.get("sigma", 20.0)),
        mean=float(config.get("mean", 0.0)),
        history_len=int(config.get("history_len", 40)),
        rounds=int(config.get("rounds", 40)),
    )
    sessions = int(config.get("sessions_per_cell", 32))
    expected_rows = sessions * (int(config.get("rounds", 40)) - 1)
    for rho in rhos:
        path = os.path.join(args.out_dir, f"panel_rho{rho:g}.csv")
        write_panel_csv(panels[rho], path)
        manifest.add_output(path)
        dropped = expected_rows - len(panels[rho])
        note = f" ({dropped} rows dropped from failed rounds)" if dropped else ""
        print(f"rho={rho:g}: {len(panels[rho])} rows{note} -> {path}")
    manifest.finish()
    return EXIT_OK


def cmd_build_dataset(args) -> int:
    config = _load_config(args.config)
    seed = args.seed if args.seed is not None else config.get("seed", DEFAULT_MASTER_SEED)
    os.makedirs(args.out_dir, exist_ok=True)
    manifest = Manifest("build-dataset", config, seed, args.out_dir)
    manifest.add_input(args.config)

    task = config.get("task", "ar1")
    plan = SplitPlan.from_dict(config.get("plan", {}))
    variant = PromptVariant(kind=config.get("variant", "baseline"), task=task)

    if task == "ar1":
        datasets = build_ar1_instruction_set(
            plan,
            rhos=tuple(config.get("rhos", [0.0, 0.2, 0.4, 0.6, 0.8, 1.0])),
            master_seed=seed,
            variant=variant,
            sigma=float(config.get("sigma", 20.0)),
            mean=float(config.get("mean", 0.0)),
        )
    elif task == "stock":
        if "returns_csv" in config:
            panel = load_returns_csv(config["returns_csv"])
            manifest.add_input(config["returns_csv"])
        else:
            synth = config.get("synth", {})
            panel = synth_reversal_panel(
                int(synth.get("n_firms", 500)),
                int(synth.get("n_months", 120)),
                float(synth.get("phi", -0.1)),
                float(synth.get("vol", 0.08)),
                seed,
            )
        rows = build_windows(panel)
        datasets, dropped = build_stock_instruction_set(rows, plan, variant=variant)
        print(f"dropped {dropped} rows outside split ranges")
    else:
        raise ConfigurationError(f"unknown task {task!r}")

    for split, examples in datasets.items():
        if not examples:
            print(f"{split}: empty, skipped")
            continue
        path = os.path.join(args.out_dir, f"{task}_{split}.jsonl")
        export_jsonl(examples, path)
        manifest.add_output(path)
        print(f"{split}: {len(examples)} examples -> {path}")

    violations = split_guard(datasets)
    report_path = os.path.join(args.out_dir, "hygiene_report.txt")
    with open(report_path, "w", encoding="utf-8") as fh:
        if violations:
            fh.write("\n".join(violations) + "\n")
        else:
            fh.write("clean: no split hygiene violations\n")
    manifest.add_output(report_path)
    manifest.finish()
    if violations:
        print(f"{len(violations)} hygiene violations (see {report_path})", file=sys.stderr)
        return EXIT_DATA
    print(f"hygiene: clean -> {report_path}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args.config)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    os.makedirs(args.out_dir, exist_ok=True)
    manifest = Manifest("train", config, seed, args.out_dir)
    manifest.add_input(args.config)

    task = config.get("task", "ar1")
    train_examples = import_jsonl(config["train_jsonl"])
    val_examples = import_jsonl(config["val_jsonl"])
    manifest.add_input(config["train_jsonl"])
    manifest.add_input(config["val_jsonl"])

    if task == "ar1":
        window = int(config.get("feature_window", 40))
        Xtr, Ytr = series_examples_to_matrices(train_examples, window)
        Xva, Yva = series_examples_to_matrices(val_examples, window)
    else:
        Xtr, Ytr = stock_examples_to_matrices(train_examples)
        Xva, Yva = stock_examples_to_matrices(val_examples)
        window = Xtr.shape[1]

    train_cfg = TrainConfig(
        learning_rate=float(config.get("learning_rate", 0.03)),
        batch_size=int(config.get("batch_size", 64)),
        max_epochs=int(config.get("max_epochs", 60)),
        patience=int(config.get("patience", 15)),
        eval_every=int(config.get("eval_every", 480)),
        seed=seed,
        momentum=float(config.get("momentum", 0.9)),
    )

    mode = config.get("mode", "pretrain")
    if mode == "pretrain":
        normalizer = InputNormalizer.fit(Xtr, Ytr)
        hidden = int(config.get("hidden_width", 64))
        net = init_dense(
            [window, hidden, hidden, Ytr.shape[1]], seed=int(config.get("net_seed", 11))
        )
        trained, report = train_dense(
            net,
            (normalizer.normalize_x(Xtr), normalizer.normalize_y(Ytr)),
            (normalizer.normalize_x(Xva), normalizer.normalize_y(Yva)),
            train_cfg,
        )
        out_net = trained
    elif mode == "sft":
        base, normalizer, _ = load_checkpoint(config["base_checkpoint"])
        manifest.add_input(config["base_checkpoint"])
        if normalizer is None:
            raise ConfigurationError("base checkpoint carries no normalizer")
        adapted = attach_lora(
            base,
            rank=int(config.get("rank", 8)),
            alpha=config.get("alpha"),
            seed=int(config.get("lora_seed", 21)),
        )
        trainable, base_params, fraction = parameter_counts(adapted)
        print(
            f"adapters: {trainable} trainable vs {base_params} frozen base "
            f"parameters ({fraction:.1%})"
        )
        adapted, report = train_sft(
            adapted,
            (normalizer.normalize_x(Xtr), normalizer.normalize_y(Ytr)),
            (normalizer.normalize_x(Xva), normalizer.normalize_y(Yva)),
            train_cfg,
        )
        out_net = merge_lora(adapted) if config.get("merge", True) else adapted
    else:
        raise ConfigurationError(f"unknown train mode {mode!r}")

    ckpt_path = os.path.join(args.out_dir, "checkpoint.npz")
    save_checkpoint(ckpt_path, out_net, normalizer, meta={"mode": mode, "task": task})
    report_path = os.path.join(args.out_dir, "train_report.csv")
    write_report_csv(report, report_path)
    manifest.add_output(ckpt_path)
    manifest.add_output(report_path)
    manifest.finish()
    print(
        f"{mode}: best val loss {report.best_val_loss:.6f} at step {report.best_step}"
        f" ({'early stop' if report.stopped_early else 'ran to end'}) -> {ckpt_path}"
    )
    return EXIT_OK


_REFERENCES = {
    "base": FULL_SCALE_ERROR_REVISION_BASE,
    "finetuned": FULL_SCALE_ERROR_REVISION_FINETUNED,
}


def _train_overrides(config: dict, prefix: str, defaults: TrainConfig) -> TrainConfig:
    """TrainConfig with any `{prefix}_<field>` keys from the config applied."""
    kwargs = {}
    for name in ("learning_rate", "batch_size", "max_epochs", "patience",
                 "eval_every", "seed", "momentum"):
        key = f"{prefix}_{name}"
        if key in config:
            kwargs[name] = config[key]
    return replace(defaults, **kwargs) if kwargs else defaults


def _series_config(config: dict, seed: int) -> SeriesExperimentConfig:
    defaults = SeriesExperimentConfig()
    keys = ("sessions_per_cell", "theta", "feature_window", "hidden_width",
            "lora_rank", "net_seed", "lora_seed", "sigma", "mean")
    kwargs = {k: config[k] for k in keys if k in config}
    if "rhos" in config:
        kwargs["rhos"] = tuple(config["rhos"])
    return replace(
        defaults,
        master_seed=seed,
        pretrain=_train_overrides(config, "pretrain", defaults.pretrain),
        sft=_train_overrides(config, "sft", defaults.sft),
        **kwargs,
    )


def _stock_config(config: dict, seed: int) -> StockExperimentConfig:
    defaults = StockExperimentConfig()
    keys = ("n_firms", "n_months", "phi", "vol", "hidden_width", "lora_rank",
            "net_seed", "lora_seed", "window_len")
    kwargs = {k: config[k] for k in keys if k in config}
    return replace(
        defaults,
        master_seed=seed,
        pretrain=_train_overrides(config, "pretrain", defaults.pretrain),
        sft=_train_overrides(config, "sft", defaults.sft),
        **kwargs,
    )


def _write_error_revision_outputs(results, panels, out_dir, manifest, prefix="", reference=None):
    table = os.path.join(out_dir, f"{prefix}error_revision_table.csv")
    plot = os.path.join(out_dir, f"{prefix}error_revision_plot.csv")
    desc = os.path.join(out_dir, f"{prefix}descriptives.csv")
    write_error_revision_table(results, table, reference=reference)
    write_error_revision_plot(results, plot)
    write_descriptives_table(panels, desc)
    for path in (table, plot, desc):
        manifest.add_output(path)
    for rho in sorted(results):
        res = results[rho]
        print(f"  rho={rho:g}: b={res.slope:+.4f} t={res.slope_t:+.2f} n={res.n}")


def cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    seed = args.seed if args.seed is not None else config.get("seed", DEFAULT_MASTER_SEED)
    os.makedirs(args.out_dir, exist_ok=True)
    manifest = Manifest("evaluate", config, seed, args.out_dir)
    manifest.add_input(args.config)
    mode = config.get("mode")
    reference = _REFERENCES.get(config.get("reference"))

    if mode == "panels":
        results, panels = {}, {}
        for rho_text, path in config["panels"].items():
            panel = read_panel_csv(path)
            manifest.add_input(path)
            rho = float(rho_text)
            panels[rho] = panel
            results[rho] = error_revision_regression(
                panel, se_mode=config.get("se_mode", "classical")
            )
        _write_error_revision_outputs(results, panels, args.out_dir, manifest, reference=reference)
    elif mode in ("checkpoint", "endpoint"):
        if mode == "checkpoint":
            agent_for = _build_agent(
                {"kind": "net", "checkpoint": config["checkpoint"]}, seed
            )
            manifest.add_input(config["checkpoint"])
        else:
            agent_for = _build_agent(
                {
                    "kind": "llm",
                    "endpoint": config.get("endpoint"),
                    "model": config.get("model", "default"),
                    "variant": config.get("variant", "baseline"),
                    "cache_dir": config.get("cache_dir"),
                    "parallelism": config.get("parallelism", 4),
                },
                seed,
            )
        rhos = tuple(config.get("rhos", [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]))
        results, panels = evaluate_agent_on_cells(
            agent_for,
            rhos=rhos,
            master_seed=seed,
            sessions_per_cell=int(config.get("sessions_per_cell", 32)),
            split=config.get("split", "test"),
            se_mode=config.get("se_mode", "classical"),
        )
        _write_error_revision_outputs(results, panels, args.out_dir, manifest, reference=reference)
    elif mode == "series-experiment":
        cfg = _series_config(config, seed)
        plan = SplitPlan.from_dict(config.get("plan", {}))
        result = run_series_experiment(cfg, plan)
        print("biased base:")
        _write_error_revision_outputs(
            result.base_results, result.base_panels, args.out_dir, manifest,
            prefix="base_", reference=FULL_SCALE_ERROR_REVISION_BASE,
        )
        print("after adapter fine-tuning:")
        _write_error_revision_outputs(
            result.sft_results, result.sft_panels, args.out_dir, manifest,
            prefix="sft_", reference=FULL_SCALE_ERROR_REVISION_FINETUNED,
        )
    elif mode == "stock-experiment":
        cfg = _stock_config(config, seed)
        result = run_stock_experiment(cfg)
        base_path = os.path.join(args.out_dir, "base_extrapolation_table.csv")
        sft_path = os.path.join(args.out_dir, "sft_extrapolation_table.csv")
        write_extrapolation_table(result.base_result, base_path, reference=FULL_SCALE_EXTRAPOLATION_BASE)
        write_extrapolation_table(result.sft_result, sft_path, reference=FULL_SCALE_EXTRAPOLATION_FINETUNED)
        manifest.add_output(base_path)
        manifest.add_output(sft_path)
        print(
            f"base beta0={result.base_result.beta[0]:+.4f} (t={result.base_result.t[0]:+.1f})"
            f" | sft beta0={result.sft_result.beta[0]:+.4f} (t={result.sft_result.t[0]:+.1f})"
        )
    else:
        raise ConfigurationError(f"unknown evaluate mode {mode!r}")

    manifest.finish()
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = args.run_dir
    manifest_path = os.path.join(run_dir, "manifest.json")
    if not os.path.isdir(run_dir) or not os.path.exists(manifest_path):
        raise DataError(f"no run manifest under {run_dir}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    lines = [
        f"run: {manifest['command']} (debiaslab {manifest['version']})",
        f"seed: {manifest['seed']}",
        f"config hash: {manifest['config_hash']}",
        f"elapsed: {manifest['timings'].get('total_seconds', '?')} s",
        "outputs:",
    ]
    for path in manifest["outputs"]:
        size = os.path.getsize(path) if os.path.exists(path) else "missing"
        lines.append(f"  {path} ({size} bytes)")
    tables = [p for p in manifest["outputs"] if p.endswith(".csv")]
    lines.append(f"tables: {len(tables)}")
    text = "\n".join(lines)
    print(text)
    summary_path = os.path.join(run_dir, "summary.txt")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="debiaslab",
        description="Simulate forecasting experiments, build instruction datasets, "
        "fine-tune the toy forecaster, and diagnose extrapolation bias.",
    )
    parser.add_argument("--print-config", action="store_true", help="echo the parsed config and exit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out-dir", default="runs/latest", help="output directory")

    common(sub.add_parser("simulate", help="run the forecasting game, write panels"))
    common(sub.add_parser("build-dataset", help="construct instruction JSONL splits"))
    common(sub.add_parser("train", help="pretrain or adapter-fine-tune the forecaster"))
    common(sub.add_parser("evaluate", help="emit diagnostic tables and plot CSVs"))
    report = sub.add_parser("report", help="summarize a run directory")
    report.add_argument("--run-dir", required=True)
    return parser


_HANDLERS = {
    "simulate": cmd_simulate,
    "build-dataset": cmd_build_dataset,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config and getattr(args, "config", None):
        print(json.dumps(_load_config(args.config), indent=2, sort_keys=True))
        return EXIT_OK
    try:
        return _HANDLERS[args.command](args)
    except (TransportError, ProtocolError) as exc:
        print(f"endpoint error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DebiasLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
