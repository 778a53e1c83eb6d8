"""Losses, optimizers, the two-stage training protocol, and evaluation.

Stage 1 trains the single-encoder CNN regressor with plain SGD (no momentum);
stage 2 seeds the full model's shared encoder from stage 1 and trains with
bias-corrected Adam. Early stopping watches validation MSE with a strict
less-than improvement test and restores the best epoch's parameters. All
shuffling and dropout derive from (seed, epoch), so single-threaded runs are
bit-reproducible.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import SequenceSample
from .errors import DivergenceError, ValidationError
from .neuralnet.models import (
    CnnRegressorConfig,
    FullModelConfig,
    ModelBundle,
    NormStats,
    cnn_backward,
    cnn_forward,
    count_parameters,
    full_backward,
    full_forward,
    init_cnn_params,
    init_full_params,
)

# -- metrics ---------------------------------------------------------------------


def mse(observed: np.ndarray, predicted: np.ndarray) -> float:
    """Mean squared error (1/n) sum (y - y_hat)^2."""
    y, yh = _paired(observed, predicted)
    return float(np.mean((y - yh) ** 2))


def mape(observed: np.ndarray, predicted: np.ndarray) -> float:
    """Mean absolute percentage error, in percent. Undefined if any y is 0."""
    y, yh = _paired(observed, predicted)
    if np.any(y == 0):
        raise ValidationError("MAPE is undefined when an observed rate is zero")
    return float(100.0 * np.mean(np.abs((y - yh) / y)))


def pearson(observed: np.ndarray, predicted: np.ndarray) -> float:
    """Sample Pearson correlation coefficient."""
    y, yh = _paired(observed, predicted)
    if len(y) < 2:
        raise ValidationError("Pearson correlation needs at least two points")
    yc = y - y.mean()
    hc = yh - yh.mean()
    denom = np.sqrt((yc**2).sum() * (hc**2).sum())
    if denom == 0:
        raise ValidationError("Pearson correlation is undefined for zero-variance input")
    return float(np.clip((yc * hc).sum() / denom, -1.0, 1.0))


def _paired(observed, predicted) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(observed, dtype=np.float64).ravel()
    yh = np.asarray(predicted, dtype=np.float64).ravel()
    if len(y) != len(yh):
        raise ValidationError(f"length mismatch: {len(y)} observed vs {len(yh)} predicted")
    if len(y) == 0:
        raise ValidationError("metrics are undefined for empty inputs")
    return y, yh


# -- optimizers ------------------------------------------------------------------


def sgd_step(params: dict, grads: dict, lr: float) -> None:
    """In-place p <- p - lr * g."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValidationError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        p -= (lr * g).astype(p.dtype, copy=False)


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter tensor."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    t: int,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> None:
    """Standard bias-corrected Adam update, in place. ``t`` starts at 1."""
    if t < 1:
        raise ValidationError("Adam step counter starts at 1")
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValidationError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p -= (lr * m_hat / (np.sqrt(v_hat) + epsilon)).astype(p.dtype, copy=False)


# -- early stopping ----------------------------------------------------------------


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without strictly lower
    validation loss; the best epoch's model is the one to retain."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ValidationError("patience must be >= 1")
        self.patience = patience
        self.best_loss: float | None = None
        self.best_epoch: int | None = None
        self.counter = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record an epoch; returns True when training should stop."""
        if self.best_loss is None or val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.counter = 0
            return False
        self.counter += 1
        return self.counter >= self.patience


# -- configuration and report -------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    sgd_lr: float = 1e-3
    adam_lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    patience: int = 6
    max_epochs: int = 60
    seed: int = 0
    freeze_encoder: bool = False

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValidationError("patience must be >= 1")
        if self.sgd_lr <= 0 or self.adam_lr <= 0:
            raise ValidationError("learning rates must be positive")
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    train_mse: float
    val_mse: float
    seconds: float


@dataclass
class TrainReport:
    stage: str
    epochs: list[EpochStats]
    best_epoch: int
    stopping_reason: str
    val_mse_best: float
    test_mse: float | None
    test_mape: float | None
    pearson_by_video: dict[str, float]
    param_count: int
    batch_size: int
    learning_rate: float
    adam_epsilon: float | None
    seed: int

    def epochs_used(self) -> int:
        return len(self.epochs)

    def to_csv(self) -> str:
        lines = ["epoch,train_mse,val_mse,seconds"]
        lines += [f"{e.epoch},{e.train_mse:.10g},{e.val_mse:.10g},{e.seconds:.3f}" for e in self.epochs]
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        parts = [
            f"stage={self.stage}",
            f"epochs={self.epochs_used()}",
            f"best_epoch={self.best_epoch}",
            f"stopping={self.stopping_reason}",
            f"val_mse_best={self.val_mse_best:.10g}",
            f"params={self.param_count}",
            f"batch_size={self.batch_size}",
            f"lr={self.learning_rate:g}",
            f"seed={self.seed}",
        ]
        if self.adam_epsilon is not None:
            parts.append(f"adam_epsilon={self.adam_epsilon:g}")
        if self.test_mse is not None:
            parts.append(f"test_mse={self.test_mse:.10g}")
        if self.test_mape is not None:
            parts.append(f"test_mape={self.test_mape:.6g}%")
        for vid, r in sorted(self.pearson_by_video.items()):
            parts.append(f"pearson[{vid}]={r:.6g}")
        return "\n".join(parts) + "\n"


# -- sample conversion ----------------------------------------------------------------


@dataclass
class RegressionArrays:
    """Model-ready arrays: stage-1 uses the last tensor of each sequence, the
    full model the whole sequence; targets are the following window's rate."""

    inputs: np.ndarray
    targets: np.ndarray
    videos: np.ndarray

    def __len__(self) -> int:
        return len(self.targets)


def to_arrays(samples: Sequence[SequenceSample], stage: str) -> RegressionArrays:
    if not samples:
        raise ValidationError("empty dataset")
    modes = {s.target_mode for s in samples}
    if len(modes) != 1:
        raise ValidationError(f"samples mix aggregation modes: {sorted(modes)}")
    if stage == "cnn":
        inputs = np.stack([s.inputs[-1] for s in samples])
    elif stage == "full":
        inputs = np.stack([s.inputs for s in samples])
    else:
        raise ValidationError(f"unknown stage {stage!r}")
    targets = np.array([s.target for s in samples], dtype=np.float64)
    videos = np.array([f"{s.participant_id}/{s.video_id}" for s in samples])
    return RegressionArrays(inputs=inputs, targets=targets, videos=videos)


# -- training loops ----------------------------------------------------------------------


def _epoch_rngs(seed: int, epoch: int) -> tuple[np.ndarray, np.random.Generator]:
    """Shuffle order and dropout generator derived from (seed, epoch)."""
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((seed, epoch, 0)))
    dropout_rng = np.random.default_rng(np.random.SeedSequence((seed, epoch, 1)))
    return shuffle_rng, dropout_rng


def _check_finite(loss: float, stage: str, epoch: int) -> None:
    if not np.isfinite(loss):
        raise DivergenceError(f"{stage}: non-finite training loss at epoch {epoch}")


def _run_loop(
    *,
    stage: str,
    params: dict,
    step_fn,
    forward,
    backward,
    train_arrays: RegressionArrays,
    val_arrays: RegressionArrays,
    norm: NormStats,
    config: TrainConfig,
    learning_rate: float,
) -> tuple[dict, TrainReport]:
    dtype = next(iter(params.values())).dtype
    stopper = EarlyStopping(config.patience)
    epochs: list[EpochStats] = []
    best_params = copy.deepcopy(params)
    stopping_reason = "max_epochs"
    step = 0
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        shuffle_rng, dropout_rng = _epoch_rngs(config.seed, epoch)
        order = shuffle_rng.permutation(len(train_arrays))
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            x = norm.apply(train_arrays.inputs[idx], dtype=dtype)
            y = train_arrays.targets[idx]
            pred, cache = forward(x, params, train=True, rng=dropout_rng)
            err = pred.astype(np.float64) - y
            _check_finite(float((err**2).sum()), stage, epoch)
            dpred = (2.0 * err / len(idx)).astype(dtype)
            grads = backward(dpred, cache, params)
            step += 1
            step_fn(params, grads, step)
        # model-property MSE: dropout off, so the logged value is deterministic
        train_pred = _predict(params, forward, train_arrays.inputs, norm, config.batch_size)
        train_mse = mse(train_arrays.targets, train_pred)
        _check_finite(train_mse, stage, epoch)
        val_pred = _predict(params, forward, val_arrays.inputs, norm, config.batch_size)
        val_mse = mse(val_arrays.targets, val_pred)
        _check_finite(val_mse, stage, epoch)
        epochs.append(EpochStats(epoch, train_mse, val_mse, time.perf_counter() - t0))
        stop = stopper.update(epoch, val_mse)
        if stopper.best_epoch == epoch:
            best_params = copy.deepcopy(params)
        if stop:
            stopping_reason = "early_stopping"
            break
    report = TrainReport(
        stage=stage,
        epochs=epochs,
        best_epoch=int(stopper.best_epoch),
        stopping_reason=stopping_reason,
        val_mse_best=float(stopper.best_loss),
        test_mse=None,
        test_mape=None,
        pearson_by_video={},
        param_count=count_parameters(params),
        batch_size=config.batch_size,
        learning_rate=learning_rate,
        adam_epsilon=config.epsilon if stage == "full" else None,
        seed=config.seed,
    )
    return best_params, report


def _predict(params, forward, inputs, norm: NormStats, batch_size: int) -> np.ndarray:
    dtype = next(iter(params.values())).dtype
    out = np.empty(len(inputs), dtype=np.float64)
    for i in range(0, len(inputs), batch_size):
        x = norm.apply(inputs[i : i + batch_size], dtype=dtype)
        pred, _ = forward(x, params, train=False, rng=None)
        out[i : i + len(pred)] = pred
    return out


def _attach_test_metrics(report: TrainReport, params, forward, test_arrays, norm, batch_size) -> np.ndarray:
    pred = _predict(params, forward, test_arrays.inputs, norm, batch_size)
    report.test_mse = mse(test_arrays.targets, pred)
    report.test_mape = mape(test_arrays.targets, pred)
    for vid in np.unique(test_arrays.videos):
        sel = test_arrays.videos == vid
        if sel.sum() >= 2 and np.std(test_arrays.targets[sel]) > 0 and np.std(pred[sel]) > 0:
            report.pearson_by_video[str(vid)] = pearson(test_arrays.targets[sel], pred[sel])
    return pred


def train_cnn(
    train_samples: Sequence[SequenceSample],
    val_samples: Sequence[SequenceSample],
    test_samples: Sequence[SequenceSample] | None,
    model_config: CnnRegressorConfig,
    config: TrainConfig,
    dtype=np.float32,
) -> tuple[ModelBundle, TrainReport, np.ndarray | None]:
    """Stage 1: encoder + regression head, SGD without momentum."""
    train_arrays = to_arrays(train_samples, "cnn")
    val_arrays = to_arrays(val_samples, "cnn")
    norm = NormStats.from_maps(train_arrays.inputs)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 100)))
    params = init_cnn_params(model_config, rng, dtype)
    params["head2_b"][:] = train_arrays.targets.mean()

    def forward(x, p, train, rng):
        return cnn_forward(x, p, model_config, train=train, rng=rng)

    def backward(dpred, cache, p):
        return cnn_backward(dpred, cache, p, model_config)

    def step_fn(p, grads, step):
        sgd_step(p, grads, config.sgd_lr)

    best, report = _run_loop(
        stage="cnn",
        params=params,
        step_fn=step_fn,
        forward=forward,
        backward=backward,
        train_arrays=train_arrays,
        val_arrays=val_arrays,
        norm=norm,
        config=config,
        learning_rate=config.sgd_lr,
    )
    bundle = ModelBundle(kind="cnn", config=model_config, params=best, norm=norm)
    test_pred = None
    if test_samples:
        test_arrays = to_arrays(test_samples, "cnn")
        test_pred = _attach_test_metrics(report, best, forward, test_arrays, norm, config.batch_size)
    return bundle, report, test_pred


def train_full(
    train_samples: Sequence[SequenceSample],
    val_samples: Sequence[SequenceSample],
    test_samples: Sequence[SequenceSample] | None,
    model_config: FullModelConfig,
    config: TrainConfig,
    encoder_init: dict | None = None,
    dtype=np.float32,
) -> tuple[ModelBundle, TrainReport, np.ndarray | None]:
    """Stage 2: full model with Adam; the shared encoder starts from stage 1.

    With ``freeze_encoder`` the copied encoder weights receive no updates;
    otherwise they are fine-tuned.
    """
    train_arrays = to_arrays(train_samples, "full")
    val_arrays = to_arrays(val_samples, "full")
    norm = NormStats.from_maps(train_arrays.inputs)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 200)))
    params = init_full_params(model_config, rng, dtype)
    if encoder_init is not None:
        for key, value in encoder_init.items():
            if key.startswith("enc."):
                if key not in params:
                    raise ValidationError(f"encoder parameter {key!r} not present in the full model")
                if params[key].shape != value.shape:
                    raise ValidationError(
                        f"encoder parameter {key!r} shape {value.shape} does not match {params[key].shape}"
                    )
                params[key] = value.astype(dtype).copy()
    params["head2_b"][:] = train_arrays.targets.mean()

    adam = AdamState.for_params(params)
    frozen = {k for k in params if k.startswith("enc.")} if config.freeze_encoder else set()

    def forward(x, p, train, rng):
        return full_forward(x, p, model_config, train=train, rng=rng)

    def backward(dpred, cache, p):
        return full_backward(dpred, cache, p, model_config)

    def step_fn(p, grads, step):
        live = {k: v for k, v in p.items() if k not in frozen}
        adam_step(
            live,
            grads,
            adam,
            step,
            lr=config.adam_lr,
            beta1=config.beta1,
            beta2=config.beta2,
            epsilon=config.epsilon,
        )

    best, report = _run_loop(
        stage="full",
        params=params,
        step_fn=step_fn,
        forward=forward,
        backward=backward,
        train_arrays=train_arrays,
        val_arrays=val_arrays,
        norm=norm,
        config=config,
        learning_rate=config.adam_lr,
    )
    bundle = ModelBundle(kind="full", config=model_config, params=best, norm=norm)
    test_pred = None
    if test_samples:
        test_arrays = to_arrays(test_samples, "full")
        test_pred = _attach_test_metrics(report, best, forward, test_arrays, norm, config.batch_size)
    return bundle, report, test_pred


@dataclass
class TwoStageResult:
    cnn: ModelBundle
    cnn_report: TrainReport
    cnn_test_pred: np.ndarray | None
    full: ModelBundle
    full_report: TrainReport
    full_test_pred: np.ndarray | None


def train_two_stage(
    train_samples: Sequence[SequenceSample],
    val_samples: Sequence[SequenceSample],
    test_samples: Sequence[SequenceSample] | None,
    full_config: FullModelConfig,
    config: TrainConfig,
    dtype=np.float32,
) -> TwoStageResult:
    """The full protocol: CNN pretraining, then the weight-shared full model."""
    cnn_config = CnnRegressorConfig(
        encoder=full_config.encoder, head_units=full_config.head_units, dropout=full_config.dropout
    )
    cnn_bundle, cnn_report, cnn_pred = train_cnn(
        train_samples, val_samples, test_samples, cnn_config, config, dtype
    )
    full_bundle, full_report, full_pred = train_full(
        train_samples,
        val_samples,
        test_samples,
        full_config,
        config,
        encoder_init=cnn_bundle.params,
        dtype=dtype,
    )
    return TwoStageResult(cnn_bundle, cnn_report, cnn_pred, full_bundle, full_report, full_pred)


def prediction_rows(
    test_samples: Sequence[SequenceSample],
    cnn_pred: np.ndarray,
    full_pred: np.ndarray,
) -> list[tuple[str, int, float, float, float]]:
    """Per-sequence trace rows: (video_id, window_index, y, y_cnn, y_cnnlstm)."""
    if not (len(test_samples) == len(cnn_pred) == len(full_pred)):
        raise ValidationError("prediction traces need one prediction per test sample")
    return [
        (f"{s.participant_id}/{s.video_id}", s.start_window, s.target, float(c), float(f))
        for s, c, f in zip(test_samples, cnn_pred, full_pred)
    ]


def batch_size_study(
    splits: Sequence[tuple[Sequence[SequenceSample], Sequence[SequenceSample], Sequence[SequenceSample]]],
    model_config: CnnRegressorConfig,
    base_config: TrainConfig,
    batch_sizes: tuple[int, ...] = (32, 100),
) -> dict[int, list[dict]]:
    """Train the stage-1 CNN per split and batch size; returns the validation
    and test MSE plus epoch-count distributions the comparison plots use."""
    results: dict[int, list[dict]] = {b: [] for b in batch_sizes}
    for batch in batch_sizes:
        cfg = TrainConfig(
            batch_size=batch,
            sgd_lr=base_config.sgd_lr,
            adam_lr=base_config.adam_lr,
            beta1=base_config.beta1,
            beta2=base_config.beta2,
            epsilon=base_config.epsilon,
            patience=base_config.patience,
            max_epochs=base_config.max_epochs,
            seed=base_config.seed,
        )
        for train_s, val_s, test_s in splits:
            _, report, _ = train_cnn(train_s, val_s, test_s, model_config, cfg)
            results[batch].append(
                {
                    "val_mse": report.val_mse_best,
                    "test_mse": report.test_mse,
                    "epochs": report.epochs_used(),
                }
            )
    return results
