"""Command-line entry point.

Commands: train, eval, ablate, emb-info. Exit codes: 0 success, 2 config
problem, 3 insufficient data, 4 checkpoint mismatch, 5 store format error.
Reports are deterministic given config + seed (timing goes to a separate
file); the resolved configuration is echoed to the output directory before
any compute starts.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import os
import sys

import numpy as np

from .data import (
    SplitTables,
    dataset_spec,
    few_shot_subset,
    load_csv,
    split,
    split_named,
)
from .encoders import load_embedding_store
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    StoreFormatError,
    T3TimeError,
)
from .model import (
    ABLATION_VARIANTS,
    ModelConfig,
    T3TimeModel,
    ablate,
    load_checkpoint,
)
from .training import (
    ForecastReport,
    HorizonResult,
    StoreEmbeddings,
    StubEmbeddings,
    TrainSettings,
    evaluate_model,
    run_experiment,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECKPOINT = 4
EXIT_STORE = 5


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _apply_thread_cap() -> None:
    cap = os.environ.get("T3TIME_THREADS")
    if not cap:
        return
    try:
        limit = int(cap)
    except ValueError:
        raise ConfigError(f"T3TIME_THREADS must be an integer, got {cap!r}") from None
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limit)
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(limit)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="t3time")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key=value config file; flags override it")
        p.add_argument("--data", help="input CSV (timestamp + N numeric columns)")
        p.add_argument("--dataset-name", help="named benchmark for splits/templates")
        p.add_argument("--seq-len", type=int, help="lookback steps")
        p.add_argument("--pred-len", help="forecast horizon(s), comma separated")
        p.add_argument("--channel", type=int, help="model channel dim")
        p.add_argument("--heads", type=int, help="attention heads (blocks and CMA)")
        p.add_argument("--cma-heads", type=int, help="override CMA head count only")
        p.add_argument("--enc-layers", type=int)
        p.add_argument("--dec-layers", type=int)
        p.add_argument("--dropout", type=float)
        p.add_argument("--batch", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--weight-decay", type=float)
        p.add_argument("--patience", type=int)
        p.add_argument("--max-steps", type=int)
        p.add_argument("--seed", help="seed list, comma separated")
        p.add_argument("--emb", help="stub | store:PATH (dir of {split}.t3emb or one file)")
        p.add_argument("--few-shot", type=float, help="training fraction, e.g. 0.1")
        p.add_argument("--ablate", help="comma list of {frequency,multihead,residual,gating}")
        p.add_argument("--normalization", choices=("instance", "global"))
        p.add_argument("--emb-dim", type=int, help="prompt embedding width")
        p.add_argument("--out", help="output directory")

    p_train = sub.add_parser("train", help="train and evaluate over horizons x seeds")
    add_common(p_train)
    p_eval = sub.add_parser("eval", help="evaluate saved checkpoints")
    add_common(p_eval)
    p_eval.add_argument("--ckpt-dir", help="directory with ckpt_h*_s*.t3ckpt "
                                           "(defaults to --out)")
    p_ablate = sub.add_parser("ablate", help="train the design variants and compare")
    add_common(p_ablate)
    p_info = sub.add_parser("emb-info", help="describe an embedding store file")
    p_info.add_argument("path")
    return parser


# ---------------------------------------------------------------------------
# resolved run configuration

_DEFAULTS = {
    "data": None, "dataset_name": None, "seq_len": None, "pred_len": "96",
    "channel": 64, "heads": 4, "cma_heads": None, "enc_layers": 1, "dec_layers": 1,
    "dropout": 0.1, "batch": 16, "epochs": 10, "lr": 1e-4, "weight_decay": 1e-3,
    "patience": 10, "max_steps": None, "seed": "1", "emb": "stub", "few_shot": None,
    "ablate": None, "normalization": "instance", "emb_dim": 768, "out": "t3time_out",
}

_CASTS = {
    "seq_len": int, "channel": int, "heads": int, "cma_heads": int, "enc_layers": int,
    "dec_layers": int, "dropout": float, "batch": int, "epochs": int, "lr": float,
    "weight_decay": float, "patience": int, "max_steps": int, "few_shot": float,
    "emb_dim": int,
}


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults < config file < CLI flags."""
    resolved = dict(_DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        if not os.path.exists(config_path):
            raise ConfigError(f"config file not found: {config_path}")
        with open(config_path) as fh:
            for raw in fh:
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"bad config line: {raw.rstrip()!r}")
                key, value = (part.strip() for part in line.split("=", 1))
                key = key.replace("-", "_")
                if key not in resolved:
                    raise ConfigError(f"unknown config key {key!r}")
                resolved[key] = _CASTS.get(key, str)(value) if value != "" else None
    for key in resolved:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
    if resolved["data"] is None:
        raise ConfigError("--data is required")
    if resolved["seq_len"] is None:
        resolved["seq_len"] = (dataset_spec(resolved["dataset_name"]).default_lookback
                               if resolved["dataset_name"] else 96)
    resolved["pred_len"] = _int_list(str(resolved["pred_len"]))
    resolved["seed"] = _int_list(str(resolved["seed"]))
    if not resolved["pred_len"]:
        raise ConfigError("horizon list must not be empty")
    if not resolved["seed"]:
        raise ConfigError("seed list must not be empty")
    emb = resolved["emb"]
    if emb != "stub" and not emb.startswith("store:"):
        raise ConfigError(f"--emb must be 'stub' or 'store:PATH', got {emb!r}")
    return resolved


_ABLATE_FLAG_MAP = {
    "frequency": "use_frequency",
    "multihead": "use_multihead_cma",
    "residual": "use_residual",
    "gating": "use_gating",
}


def model_config_from(resolved: dict, num_variables: int) -> ModelConfig:
    flags = {}
    if resolved["ablate"]:
        for token in str(resolved["ablate"]).split(","):
            token = token.strip().lower()
            if not token:
                continue
            if token not in _ABLATE_FLAG_MAP:
                raise ConfigError(
                    f"unknown ablation flag {token!r}; known: {sorted(_ABLATE_FLAG_MAP)}")
            flags[_ABLATE_FLAG_MAP[token]] = False
    return ModelConfig(
        lookback=resolved["seq_len"],
        horizon=resolved["pred_len"][0],
        num_variables=num_variables,
        channels=resolved["channel"],
        cma_heads=resolved["cma_heads"] or resolved["heads"],
        encoder_layers=resolved["enc_layers"],
        decoder_layers=resolved["dec_layers"],
        attn_heads=resolved["heads"],
        dropout=resolved["dropout"],
        prompt_emb_dim=resolved["emb_dim"],
        seed=resolved["seed"][0],
        **flags,
    ).validate()


def train_settings_from(resolved: dict) -> TrainSettings:
    patience = resolved["patience"]
    if patience is not None and patience < 0:
        patience = None  # negative disables early stopping
    return TrainSettings(
        lr=resolved["lr"], weight_decay=resolved["weight_decay"],
        batch_size=resolved["batch"], epochs=resolved["epochs"],
        patience=patience, max_steps=resolved["max_steps"])


def load_tables(resolved: dict) -> SplitTables:
    path = resolved["data"]
    if not os.path.exists(path):
        raise ConfigError(f"data file not found: {path}")
    table = load_csv(path)
    lookback = resolved["seq_len"]
    if resolved["dataset_name"]:
        tables = split_named(table, resolved["dataset_name"], context=lookback)
    else:
        tables = split(table, (0.7, 0.1, 0.2), context=lookback)
    if resolved["few_shot"] is not None:
        horizon = max(resolved["pred_len"])
        tables = SplitTables(
            train=few_shot_subset(tables.train, resolved["few_shot"], lookback, horizon),
            val=tables.val, test=tables.test)
    return tables


def make_provider_factory(resolved: dict):
    emb = resolved["emb"]
    if emb == "stub":
        provider = StubEmbeddings(resolved["emb_dim"])
        return lambda split_name, ws: provider

    root = emb.split(":", 1)[1]

    def factory(split_name: str, ws):
        path = os.path.join(root, f"{split_name}.t3emb") if os.path.isdir(root) else root
        store = load_embedding_store(path)
        if store.dim != resolved["emb_dim"]:
            raise ConfigError(
                f"store {path} has dim {store.dim}, run expects {resolved['emb_dim']}")
        if store.num_windows < len(ws):
            raise ConfigError(
                f"store {path} covers {store.num_windows} windows, split needs {len(ws)}")
        return StoreEmbeddings(store)

    return factory


def _echo_config(resolved: dict, out_dir: str, extra: dict | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"{key}={resolved[key]}" for key in sorted(resolved)]
    for key, value in (extra or {}).items():
        lines.append(f"{key}={value}")
    with open(os.path.join(out_dir, "resolved_config.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_train(args: argparse.Namespace) -> int:
    resolved = resolve_config(args)
    tables = load_tables(resolved)
    config = model_config_from(resolved, tables.train.num_variables)
    out_dir = resolved["out"]
    _echo_config(resolved, out_dir, {"model_config": config.to_text().replace("\n", ";")})
    report, _ = run_experiment(
        tables, config, resolved["pred_len"], resolved["seed"],
        train_settings_from(resolved), make_provider_factory(resolved),
        normalization=resolved["normalization"], checkpoint_dir=out_dir,
        dataset_name=resolved["dataset_name"] or os.path.basename(resolved["data"]))
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write(report.to_text())
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        fh.write(report.to_json())
    with open(os.path.join(out_dir, "timing.txt"), "w") as fh:
        fh.write(f"wall_clock_seconds={report.wall_clock_seconds:.3f}\n")
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    resolved = resolve_config(args)
    tables = load_tables(resolved)
    out_dir = resolved["out"]
    ckpt_dir = getattr(args, "ckpt_dir", None) or out_dir
    _echo_config(resolved, out_dir)
    provider_factory = make_provider_factory(resolved)
    report = ForecastReport(
        dataset=resolved["dataset_name"] or os.path.basename(resolved["data"]),
        seeds=resolved["seed"], horizons=resolved["pred_len"])
    from .data import WindowSet

    for horizon in resolved["pred_len"]:
        for seed in resolved["seed"]:
            path = os.path.join(ckpt_dir, f"ckpt_h{horizon}_s{seed}.t3ckpt")
            if not os.path.exists(path):
                raise CheckpointError(f"missing checkpoint {path}")
            model = load_checkpoint(path)
            if model.config.horizon != horizon:
                raise CheckpointError(
                    f"checkpoint {path} was trained for horizon "
                    f"{model.config.horizon}, not {horizon}")
            if model.config.num_variables != tables.test.num_variables:
                raise CheckpointError(
                    f"checkpoint {path} expects {model.config.num_variables} "
                    f"variables, data has {tables.test.num_variables}")
            test_ws = WindowSet(tables.test, model.config.lookback, horizon,
                                resolved["normalization"])
            metrics = evaluate_model(model, test_ws, provider_factory("test", test_ws))
            report.results.append(HorizonResult(
                horizon=horizon, seed=seed, mse=metrics.mse, mae=metrics.mae,
                denorm_mse=metrics.denorm_mse, denorm_mae=metrics.denorm_mae,
                best_val_mse=float("nan"), steps=0, early_stopped=False))
    with open(os.path.join(out_dir, "eval_report.txt"), "w") as fh:
        fh.write(report.to_text())
    with open(os.path.join(out_dir, "eval_summary.json"), "w") as fh:
        fh.write(report.to_json())
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    resolved = resolve_config(args)
    tables = load_tables(resolved)
    base = model_config_from(resolved, tables.train.num_variables)
    out_dir = resolved["out"]
    _echo_config(resolved, out_dir)
    settings = train_settings_from(resolved)
    provider_factory = make_provider_factory(resolved)
    horizon = resolved["pred_len"][0]
    seed = resolved["seed"][0]

    lines = []
    counts = {}
    for variant in ABLATION_VARIANTS:
        config = dataclasses.replace(ablate(base, variant), horizon=horizon, seed=seed)
        report, _ = run_experiment(
            tables, config, [horizon], [seed], settings, provider_factory,
            normalization=resolved["normalization"],
            dataset_name=resolved["dataset_name"] or os.path.basename(resolved["data"]))
        mse_mean, mae_mean = report.per_horizon_mean(horizon)
        counts[variant] = T3TimeModel(config).parameter_count()
        label = "full model" if variant == "full" else variant
        lines.append(f"variant={label} mse={mse_mean:.6f} mae={mae_mean:.6f} "
                     f"params={counts[variant]}")
    text = "\n".join(lines) + "\n"
    with open(os.path.join(out_dir, "ablation_report.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")
    return EXIT_OK


def cmd_emb_info(args: argparse.Namespace) -> int:
    path = args.path
    if not os.path.exists(path):
        raise StoreFormatError(f"store file not found: {path}", offset=0)
    store = load_embedding_store(path)
    with open(path, "rb") as fh:
        checksum = hashlib.sha256(fh.read()).hexdigest()
    first = float(np.linalg.norm(store.lookup(0, 0))) if store.num_windows else 0.0
    last = float(np.linalg.norm(
        store.lookup(store.num_windows - 1, store.num_variables - 1))) \
        if store.num_windows else 0.0
    print(f"magic=T3EMB version=1 windows={store.num_windows} "
          f"variables={store.num_variables} dim={store.dim}")
    print(f"sha256={checksum}")
    print(f"first_vector_norm={first:.6f}")
    print(f"last_vector_norm={last:.6f}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
                "emb-info": cmd_emb_info}
    try:
        return handlers[args.command](args)
    except StoreFormatError as err:
        print(f"store format error: {err}", file=sys.stderr)
        return EXIT_STORE
    except CheckpointError as err:
        print(f"checkpoint error: {err}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except T3TimeError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
