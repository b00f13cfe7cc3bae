"""Loss, metrics, the Adam optimizer, the training loop with early
stopping, horizon evaluation, and multi-seed report assembly."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .data import WindowBatch, WindowSet, denormalize_forecast
from .encoders import PromptEmbeddingStore, stub_embed
from .errors import ConfigError, ContractError, DimensionError, InsufficientDataError
from .model import ModelConfig, T3TimeModel
from .tensor import Tensor, backward, constant, mean, mul, sub

# ---------------------------------------------------------------------------
# loss and metrics


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Differentiable mean squared error over all elements."""
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss shapes disagree: {pred.shape} vs {target.shape}")
    diff = sub(pred, target)
    return mean(mul(diff, diff))


def mae_metric(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean absolute error; evaluation only."""
    if pred.shape != target.shape:
        raise DimensionError(f"mae_metric shapes disagree: {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target)))


def mse_metric(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise DimensionError(f"mse_metric shapes disagree: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Bias-corrected Adam with decoupled weight decay (decay shrinks the
    parameter directly, scaled by the learning rate, before the moment
    update is applied)."""

    def __init__(self, params: list[tuple[str, Tensor]], lr: float = 1e-4,
                 weight_decay: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if not 0 <= beta1 < 1 or not 0 <= beta2 < 1:
            raise ConfigError(f"betas must be in [0, 1), got {beta1}, {beta2}")
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data, dtype=np.float64) for name, t in self.params}
        self.v = {name: np.zeros_like(t.data, dtype=np.float64) for name, t in self.params}

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1 ** t
        bias2 = 1.0 - self.beta2 ** t
        for name, param in self.params:
            if param.grad is None:
                raise ContractError(f"parameter {name!r} has no gradient; "
                                    "did the forward pass use it?")
            grad = param.grad.astype(np.float64)
            if self.weight_decay:
                param.data = param.data - (self.lr * self.weight_decay) * param.data
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * grad
            v *= self.beta2
            v += (1 - self.beta2) * grad * grad
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            param.data = (param.data - self.lr * update).astype(param.data.dtype)

    def zero_grad(self) -> None:
        for _, param in self.params:
            param.zero_grad()


# ---------------------------------------------------------------------------
# prompt-embedding providers


class StubEmbeddings:
    """Hermetic provider: derive embeddings from the raw windows on the fly."""

    def __init__(self, dim: int):
        self.dim = dim

    def __call__(self, batch: WindowBatch) -> np.ndarray:
        return np.stack([
            stub_embed(batch.x_raw[i], batch.time_markers[i], self.dim)
            for i in range(batch.size)
        ])


class StoreEmbeddings:
    """Provider backed by an exporter-written embedding store."""

    def __init__(self, store: PromptEmbeddingStore):
        self.store = store

    def __call__(self, batch: WindowBatch) -> np.ndarray:
        return self.store.gather(batch.window_indices)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainSettings:
    lr: float = 1e-4
    weight_decay: float = 1e-3
    batch_size: int = 16
    epochs: int = 150
    patience: int | None = 10    # None disables early stopping
    max_steps: int | None = None
    eval_batch_size: int = 64


@dataclass
class TrainResult:
    model: T3TimeModel
    step_losses: list[float]
    epoch_val_mse: list[float]
    best_val_mse: float
    best_epoch: int
    steps_run: int
    early_stopped: bool


def train_model(model: T3TimeModel, train_windows: WindowSet,
                val_windows: WindowSet | None, provider,
                settings: TrainSettings, val_provider=None) -> TrainResult:
    """Minimize MSE over shuffled batches; keep the best-on-validation state.

    Deterministic given the model's config seed: batch order, dropout masks,
    and initialization all derive from it. `val_provider` defaults to the
    training provider (they differ when embeddings come from per-split
    store files).
    """
    if len(train_windows) == 0:
        raise InsufficientDataError("no training windows available")
    if val_provider is None:
        val_provider = provider
    from .tensor import spawn_generators

    shuffle_rng = spawn_generators(model.config.seed, 3)[2]
    optimizer = Adam(model.parameters(), lr=settings.lr,
                     weight_decay=settings.weight_decay)

    step_losses: list[float] = []
    epoch_val: list[float] = []
    best_val = float("inf")
    best_state = model.state_arrays()
    best_epoch = -1
    bad_epochs = 0
    steps = 0
    early_stopped = False

    for epoch in range(settings.epochs):
        order = shuffle_rng.permutation(len(train_windows))
        for start in range(0, len(order), settings.batch_size):
            batch = train_windows.batch(order[start: start + settings.batch_size])
            embeddings = provider(batch)
            optimizer.zero_grad()
            pred = model.forward(batch.x_norm, embeddings, training=True)
            loss = mse_loss(pred, constant(
                np.asarray(batch.target_norm, dtype=pred.data.dtype),
                dtype=pred.data.dtype))
            backward(loss)
            optimizer.step()
            step_losses.append(loss.item())
            steps += 1
            if settings.max_steps is not None and steps >= settings.max_steps:
                break
        if val_windows is not None and len(val_windows) > 0:
            metrics = evaluate_model(model, val_windows, val_provider,
                                     batch_size=settings.eval_batch_size)
            epoch_val.append(metrics.mse)
            if metrics.mse < best_val:
                best_val = metrics.mse
                best_state = model.state_arrays()
                best_epoch = epoch
                bad_epochs = 0
            else:
                bad_epochs += 1
                if settings.patience is not None and bad_epochs > settings.patience:
                    early_stopped = True
                    break
        else:
            best_state = model.state_arrays()
            best_epoch = epoch
        if settings.max_steps is not None and steps >= settings.max_steps:
            break

    model.load_state_arrays(best_state)
    if best_val == float("inf") and epoch_val:
        best_val = min(epoch_val)
    return TrainResult(model=model, step_losses=step_losses, epoch_val_mse=epoch_val,
                       best_val_mse=best_val, best_epoch=best_epoch, steps_run=steps,
                       early_stopped=early_stopped)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalMetrics:
    mse: float
    mae: float
    denorm_mse: float
    denorm_mae: float
    windows: int


def evaluate_model(model: T3TimeModel, windows: WindowSet, provider,
                   batch_size: int = 64,
                   collect_forecasts: bool = False) -> EvalMetrics | tuple:
    """Unshuffled full pass; metrics on the normalized scale plus their
    denormalized counterparts. Optionally also returns the denormalized
    forecast series."""
    if len(windows) == 0:
        raise InsufficientDataError("no evaluation windows available")
    se_sum = ae_sum = dn_se_sum = dn_ae_sum = 0.0
    count = dn_count = 0
    forecasts = [] if collect_forecasts else None
    for start in range(0, len(windows), batch_size):
        batch = windows.batch(range(start, min(start + batch_size, len(windows))))
        pred = model.forward(batch.x_norm, provider(batch), training=False).data
        target = batch.target_norm.astype(pred.dtype)
        se_sum += float(np.sum((pred - target) ** 2))
        ae_sum += float(np.sum(np.abs(pred - target)))
        count += pred.size
        denorm_pred = denormalize_forecast(pred.astype(np.float64), batch.stats)
        denorm_target = denormalize_forecast(target.astype(np.float64), batch.stats)
        dn_se_sum += float(np.sum((denorm_pred - denorm_target) ** 2))
        dn_ae_sum += float(np.sum(np.abs(denorm_pred - denorm_target)))
        dn_count += denorm_pred.size
        if collect_forecasts:
            forecasts.append(denorm_pred)
    metrics = EvalMetrics(
        mse=se_sum / count, mae=ae_sum / count,
        denorm_mse=dn_se_sum / dn_count, denorm_mae=dn_ae_sum / dn_count,
        windows=len(windows))
    if collect_forecasts:
        return metrics, np.concatenate(forecasts, axis=0)
    return metrics


# ---------------------------------------------------------------------------
# reports


@dataclass
class HorizonResult:
    horizon: int
    seed: int
    mse: float
    mae: float
    denorm_mse: float
    denorm_mae: float
    best_val_mse: float
    steps: int
    early_stopped: bool


@dataclass
class ForecastReport:
    """Per-(horizon, seed) metrics with per-horizon means and the horizon
    average; the reported mean is the arithmetic mean of per-seed values."""

    dataset: str
    seeds: list[int]
    horizons: list[int]
    results: list[HorizonResult] = field(default_factory=list)
    config_echo: str = ""
    wall_clock_seconds: float = 0.0  # kept out of the deterministic text

    def per_horizon_mean(self, horizon: int) -> tuple[float, float]:
        rows = [r for r in self.results if r.horizon == horizon]
        if not rows:
            raise ConfigError(f"no results recorded for horizon {horizon}")
        return (float(np.mean([r.mse for r in rows])),
                float(np.mean([r.mae for r in rows])))

    def average(self) -> tuple[float, float]:
        means = [self.per_horizon_mean(h) for h in self.horizons]
        return (float(np.mean([m for m, _ in means])),
                float(np.mean([a for _, a in means])))

    def to_text(self) -> str:
        lines = [f"dataset={self.dataset}",
                 f"seeds={','.join(str(s) for s in self.seeds)}",
                 f"horizons={','.join(str(h) for h in self.horizons)}"]
        for r in sorted(self.results, key=lambda r: (r.horizon, r.seed)):
            prefix = f"horizon={r.horizon} seed={r.seed}"
            lines.append(f"{prefix} mse={r.mse:.6f} mae={r.mae:.6f} "
                         f"denorm_mse={r.denorm_mse:.6f} denorm_mae={r.denorm_mae:.6f} "
                         f"val_mse={r.best_val_mse:.6f} steps={r.steps} "
                         f"early_stopped={r.early_stopped}")
        for h in self.horizons:
            m, a = self.per_horizon_mean(h)
            lines.append(f"horizon={h} mean mse={m:.6f} mae={a:.6f}")
        m, a = self.average()
        lines.append(f"average mse={m:.6f} mae={a:.6f}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "dataset": self.dataset,
            "seeds": self.seeds,
            "horizons": self.horizons,
            "results": [dataclasses.asdict(r) for r in
                        sorted(self.results, key=lambda r: (r.horizon, r.seed))],
            "per_horizon_mean": {str(h): self.per_horizon_mean(h) for h in self.horizons},
            "average": self.average(),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


class Stopwatch:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


# ---------------------------------------------------------------------------
# experiment orchestration (horizons x seeds)


def run_experiment(tables, base_config: ModelConfig, horizons: list[int],
                   seeds: list[int], settings: TrainSettings, provider_factory,
                   normalization: str = "instance",
                   checkpoint_dir: str | None = None,
                   dataset_name: str = "dataset") -> tuple[ForecastReport, dict]:
    """Train and test one model per (horizon, seed); average seeds per horizon.

    `tables` is a data.SplitTables; `provider_factory(split_name, window_set)`
    returns the prompt-embedding provider for that split.
    """
    from .model import save_checkpoint

    if not horizons:
        raise ConfigError("horizon list must not be empty")
    if not seeds:
        raise ConfigError("seed list must not be empty")
    report = ForecastReport(dataset=dataset_name, seeds=list(seeds),
                            horizons=list(horizons), config_echo=base_config.to_text())
    checkpoints: dict[tuple[int, int], str] = {}
    with Stopwatch() as watch:
        for horizon in horizons:
            lookback = base_config.lookback
            train_ws = WindowSet(tables.train, lookback, horizon, normalization)
            if len(train_ws) == 0:
                raise InsufficientDataError(
                    f"training split of {len(tables.train)} steps holds no "
                    f"{lookback}+{horizon} window")
            val_ws = WindowSet(tables.val, lookback, horizon, normalization)
            test_ws = WindowSet(tables.test, lookback, horizon, normalization)
            if len(test_ws) == 0:
                raise InsufficientDataError(
                    f"test split of {len(tables.test)} steps holds no "
                    f"{lookback}+{horizon} window")
            for seed in seeds:
                config = dataclasses.replace(base_config, horizon=horizon, seed=seed)
                model = T3TimeModel(config)
                result = train_model(model, train_ws,
                                     val_ws if len(val_ws) else None,
                                     provider_factory("train", train_ws), settings,
                                     val_provider=provider_factory("val", val_ws)
                                     if len(val_ws) else None)
                metrics = evaluate_model(model, test_ws,
                                         provider_factory("test", test_ws),
                                         batch_size=settings.eval_batch_size)
                report.results.append(HorizonResult(
                    horizon=horizon, seed=seed, mse=metrics.mse, mae=metrics.mae,
                    denorm_mse=metrics.denorm_mse, denorm_mae=metrics.denorm_mae,
                    best_val_mse=result.best_val_mse, steps=result.steps_run,
                    early_stopped=result.early_stopped))
                if checkpoint_dir is not None:
                    path = f"{checkpoint_dir}/ckpt_h{horizon}_s{seed}.t3ckpt"
                    save_checkpoint(path, model)
                    checkpoints[(horizon, seed)] = path
    report.wall_clock_seconds = watch.elapsed
    return report, checkpoints
