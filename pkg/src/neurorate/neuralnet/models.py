"""Network definitions: the VGG-style encoder with a regression head, and the
full weight-shared parallel-encoder + LSTM + variation-branch regressor.

Parameters live in flat dicts of numpy arrays ("enc.conv0_w", "lstm.w_xi",
"head1_w", ...). Forward passes return ``(prediction, cache)``; backward
passes consume the cache and return gradients keyed like the parameters, with
the shared encoder's gradients accumulated across all sequence positions.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import FormatError, ValidationError
from . import layers
from .lstm import BIAS_NAMES, WEIGHT_NAMES, init_lstm_params, lstm_backward, lstm_forward

MODEL_MAGIC = b"NRMD"
MODEL_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    """Stacked conv blocks: ``blocks[i] = (n_layers, n_filters)``.

    Every conv layer is 3x3 stride 1 pad 1 with ReLU; each block ends in a
    2x2/2 max pool, halving the spatial size. The canonical encoder maps
    32x32x5 inputs to 4x4x128 features through 7 conv layers.
    """

    grid: int = 32
    in_bands: int = 5
    blocks: tuple[tuple[int, int], ...] = ((4, 32), (2, 64), (1, 128))

    def __post_init__(self) -> None:
        blocks = tuple(tuple(b) for b in self.blocks)
        if not blocks or any(n < 1 or f < 1 for n, f in blocks):
            raise ValidationError(f"invalid encoder blocks {blocks}")
        if self.grid % (1 << len(blocks)) != 0:
            raise ValidationError(
                f"grid {self.grid} is not divisible by 2^{len(blocks)} pooling stages"
            )
        object.__setattr__(self, "blocks", blocks)

    @property
    def n_conv_layers(self) -> int:
        return sum(n for n, _ in self.blocks)

    @property
    def out_spatial(self) -> int:
        return self.grid >> len(self.blocks)

    @property
    def out_channels(self) -> int:
        return self.blocks[-1][1]

    @property
    def feature_size(self) -> int:
        return self.out_spatial * self.out_spatial * self.out_channels

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(in_channels, out_channels) for each conv layer in order."""
        shapes = []
        c_in = self.in_bands
        for n_layers, filters in self.blocks:
            for _ in range(n_layers):
                shapes.append((c_in, filters))
                c_in = filters
        return shapes


def _he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = float(np.sqrt(6.0 / fan_in))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32) -> dict:
    params = {}
    for i, (c_in, c_out) in enumerate(cfg.layer_shapes()):
        params[f"conv{i}_w"] = _he_uniform(rng, (3, 3, c_in, c_out), 9 * c_in, dtype)
        params[f"conv{i}_b"] = np.zeros(c_out, dtype=dtype)
    return params


def encoder_forward(x: np.ndarray, params: dict, cfg: EncoderConfig, prefix: str = ""):
    """Feature maps for a batch of tensors (B, grid, grid, bands)."""
    if x.shape[1:] != (cfg.grid, cfg.grid, cfg.in_bands):
        raise ValidationError(
            f"encoder input {x.shape[1:]} does not match config {(cfg.grid, cfg.grid, cfg.in_bands)}"
        )
    caches = []
    out = x
    layer = 0
    for depth, (n_layers, _) in enumerate(cfg.blocks):
        for _ in range(n_layers):
            out, c_conv = layers.conv2d_forward(out, params[f"{prefix}conv{layer}_w"], params[f"{prefix}conv{layer}_b"], pad=1)
            out, c_relu = layers.relu_forward(out)
            caches.append(("conv", c_conv, c_relu))
            layer += 1
        out, c_pool = layers.maxpool2x2_forward(out)
        caches.append(("pool", c_pool))
        assert out.shape[1] == cfg.grid >> (depth + 1), "spatial size must halve at each block"
    return out, caches


def encoder_backward(dout: np.ndarray, caches, cfg: EncoderConfig, prefix: str = ""):
    grads = {}
    layer = cfg.n_conv_layers
    dx = dout
    for entry in reversed(caches):
        if entry[0] == "pool":
            dx = layers.maxpool2x2_backward(dx, entry[1])
        else:
            layer -= 1
            dx = layers.relu_backward(dx, entry[2])
            dx, dw, db = layers.conv2d_backward(dx, entry[1])
            grads[f"{prefix}conv{layer}_w"] = dw
            grads[f"{prefix}conv{layer}_b"] = db
    return grads, dx


@dataclass(frozen=True)
class CnnRegressorConfig:
    """Single-encoder regression model: encoder -> dense(units, ReLU) ->
    dropout -> dense(1)."""

    encoder: EncoderConfig = EncoderConfig()
    head_units: int = 512
    dropout: float = 0.5


def init_cnn_params(cfg: CnnRegressorConfig, rng: np.random.Generator, dtype=np.float32) -> dict:
    params = {f"enc.{k}": v for k, v in init_encoder_params(cfg.encoder, rng, dtype).items()}
    feat = cfg.encoder.feature_size
    params["head1_w"] = _he_uniform(rng, (feat, cfg.head_units), feat, dtype)
    params["head1_b"] = np.zeros(cfg.head_units, dtype=dtype)
    limit = float(np.sqrt(1.0 / cfg.head_units))
    params["head2_w"] = rng.uniform(-limit, limit, size=(cfg.head_units, 1)).astype(dtype)
    params["head2_b"] = np.zeros(1, dtype=dtype)
    return params


def cnn_forward(
    x: np.ndarray,
    params: dict,
    cfg: CnnRegressorConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
):
    feats, c_enc = encoder_forward(x, params, cfg.encoder, prefix="enc.")
    flat, c_shape = layers.flatten_forward(feats)
    h1, c_d1 = layers.dense_forward(flat, params["head1_w"], params["head1_b"])
    a1, c_r1 = layers.relu_forward(h1)
    drop, c_drop = layers.dropout_forward(a1, cfg.dropout, rng, train)
    out, c_d2 = layers.dense_forward(drop, params["head2_w"], params["head2_b"])
    return out[:, 0], (c_enc, c_shape, c_d1, c_r1, c_drop, c_d2)


def cnn_backward(dpred: np.ndarray, cache, params: dict, cfg: CnnRegressorConfig):
    c_enc, c_shape, c_d1, c_r1, c_drop, c_d2 = cache
    grads = {}
    dout = dpred[:, None]
    ddrop, grads["head2_w"], grads["head2_b"] = layers.dense_backward(dout, c_d2)
    da1 = layers.dropout_backward(ddrop, c_drop)
    dh1 = layers.relu_backward(da1, c_r1)
    dflat, grads["head1_w"], grads["head1_b"] = layers.dense_backward(dh1, c_d1)
    dfeats = layers.flatten_backward(dflat, c_shape)
    enc_grads, _ = encoder_backward(dfeats, c_enc, cfg.encoder, prefix="enc.")
    grads.update(enc_grads)
    return grads


@dataclass(frozen=True)
class FullModelConfig:
    """Parallel weight-shared encoders over a sequence, an LSTM over the
    flattened per-window features, and a variation branch convolving the
    channel-concatenated feature maps; both feed the regression head."""

    encoder: EncoderConfig = EncoderConfig()
    seq_len: int = 7
    lstm_hidden: int = 128
    variation_filters: int = 64
    variation_kernel: int = 3
    head_units: int = 512
    dropout: float = 0.5

    def __post_init__(self) -> None:
        if self.seq_len < 1:
            raise ValidationError("sequence length must be >= 1")
        if self.variation_kernel > self.encoder.out_spatial:
            raise ValidationError(
                f"variation kernel {self.variation_kernel} exceeds encoder output "
                f"spatial size {self.encoder.out_spatial}"
            )

    @property
    def variation_out_spatial(self) -> int:
        return self.encoder.out_spatial - self.variation_kernel + 1

    @property
    def variation_flat(self) -> int:
        return self.variation_out_spatial**2 * self.variation_filters

    @property
    def head_in(self) -> int:
        return self.lstm_hidden + self.variation_flat


def init_full_params(cfg: FullModelConfig, rng: np.random.Generator, dtype=np.float32) -> dict:
    params = {f"enc.{k}": v for k, v in init_encoder_params(cfg.encoder, rng, dtype).items()}
    params.update(
        {f"lstm.{k}": v for k, v in init_lstm_params(cfg.encoder.feature_size, cfg.lstm_hidden, rng, dtype).items()}
    )
    var_in = cfg.encoder.out_channels * cfg.seq_len
    k = cfg.variation_kernel
    params["var_w"] = _he_uniform(rng, (k, k, var_in, cfg.variation_filters), k * k * var_in, dtype)
    params["var_b"] = np.zeros(cfg.variation_filters, dtype=dtype)
    params["head1_w"] = _he_uniform(rng, (cfg.head_in, cfg.head_units), cfg.head_in, dtype)
    params["head1_b"] = np.zeros(cfg.head_units, dtype=dtype)
    limit = float(np.sqrt(1.0 / cfg.head_units))
    params["head2_w"] = rng.uniform(-limit, limit, size=(cfg.head_units, 1)).astype(dtype)
    params["head2_b"] = np.zeros(1, dtype=dtype)
    return params


def full_forward(
    seq: np.ndarray,
    params: dict,
    cfg: FullModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
):
    """Predict one rate per sequence; ``seq`` is (B, seq_len, grid, grid, bands)."""
    if seq.ndim != 5 or seq.shape[1] != cfg.seq_len:
        raise ValidationError(f"expected (B, {cfg.seq_len}, G, G, bands) input, got {seq.shape}")
    bsz = seq.shape[0]
    feats = []
    enc_caches = []
    for t in range(cfg.seq_len):
        f, c = encoder_forward(seq[:, t], params, cfg.encoder, prefix="enc.")
        feats.append(f)
        enc_caches.append(c)

    xs = np.stack([f.reshape(bsz, -1) for f in feats], axis=1)
    lstm_params = {k: params[f"lstm.{k}"] for k in WEIGHT_NAMES + BIAS_NAMES}
    h_last, lstm_caches = lstm_forward(xs, lstm_params)

    var_in = np.concatenate(feats, axis=3)
    var, c_var = layers.conv2d_forward(var_in, params["var_w"], params["var_b"], pad=0)
    var_a, c_var_relu = layers.relu_forward(var)
    var_flat, c_var_shape = layers.flatten_forward(var_a)

    joint = np.concatenate([h_last, var_flat], axis=1)
    drop1, c_drop1 = layers.dropout_forward(joint, cfg.dropout, rng, train)
    h1, c_d1 = layers.dense_forward(drop1, params["head1_w"], params["head1_b"])
    a1, c_r1 = layers.relu_forward(h1)
    drop2, c_drop2 = layers.dropout_forward(a1, cfg.dropout, rng, train)
    out, c_d2 = layers.dense_forward(drop2, params["head2_w"], params["head2_b"])

    cache = (enc_caches, lstm_caches, lstm_params, c_var, c_var_relu, c_var_shape,
             c_drop1, c_d1, c_r1, c_drop2, c_d2, feats[0].shape)
    return out[:, 0], cache


def full_backward(dpred: np.ndarray, cache, params: dict, cfg: FullModelConfig):
    (enc_caches, lstm_caches, lstm_params, c_var, c_var_relu, c_var_shape,
     c_drop1, c_d1, c_r1, c_drop2, c_d2, feat_shape) = cache
    grads = {}
    dout = dpred[:, None]
    ddrop2, grads["head2_w"], grads["head2_b"] = layers.dense_backward(dout, c_d2)
    da1 = layers.dropout_backward(ddrop2, c_drop2)
    dh1 = layers.relu_backward(da1, c_r1)
    ddrop1, grads["head1_w"], grads["head1_b"] = layers.dense_backward(dh1, c_d1)
    djoint = layers.dropout_backward(ddrop1, c_drop1)

    dh_last = djoint[:, : cfg.lstm_hidden]
    dvar_flat = djoint[:, cfg.lstm_hidden :]

    dvar_a = layers.flatten_backward(dvar_flat, c_var_shape)
    dvar = layers.relu_backward(dvar_a, c_var_relu)
    dvar_in, grads["var_w"], grads["var_b"] = layers.conv2d_backward(dvar, c_var)

    lstm_grads, dxs = lstm_backward(dh_last, lstm_caches, lstm_params)
    grads.update({f"lstm.{k}": v for k, v in lstm_grads.items()})

    out_ch = cfg.encoder.out_channels
    for t in range(cfg.seq_len):
        dfeat = dxs[:, t, :].reshape(feat_shape) + dvar_in[:, :, :, t * out_ch : (t + 1) * out_ch]
        enc_grads, _ = encoder_backward(dfeat, enc_caches[t], cfg.encoder, prefix="enc.")
        for k, v in enc_grads.items():
            if k in grads:
                grads[k] += v
            else:
                grads[k] = v
    return grads


def count_parameters(params: dict) -> int:
    """Total number of trainable scalars."""
    return int(sum(v.size for v in params.values()))


# -- input normalization ---------------------------------------------------------


@dataclass(frozen=True)
class NormStats:
    """Per-band standardization statistics estimated on the training set."""

    band_mean: np.ndarray
    band_std: np.ndarray

    @classmethod
    def identity(cls, n_bands: int) -> "NormStats":
        return cls(np.zeros(n_bands), np.ones(n_bands))

    @classmethod
    def from_maps(cls, maps: np.ndarray) -> "NormStats":
        """``maps`` is any array whose last axis is the band axis."""
        axes = tuple(range(maps.ndim - 1))
        mean = maps.mean(axis=axes)
        std = maps.std(axis=axes)
        return cls(band_mean=mean, band_std=np.maximum(std, 1e-8))

    def apply(self, maps: np.ndarray, dtype=None) -> np.ndarray:
        out = (maps - self.band_mean) / self.band_std
        return out.astype(dtype) if dtype is not None else out


# -- bundle and container --------------------------------------------------------


@dataclass
class ModelBundle:
    """A trained model: architecture kind, config, parameters, input stats."""

    kind: str  # "cnn" | "full"
    config: CnnRegressorConfig | FullModelConfig
    params: dict
    norm: NormStats

    def predict(self, inputs: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Inference-mode predictions (dropout disabled, deterministic)."""
        dtype = next(iter(self.params.values())).dtype
        out = np.empty(len(inputs), dtype=np.float64)
        for i in range(0, len(inputs), batch_size):
            chunk = self.norm.apply(inputs[i : i + batch_size], dtype=dtype)
            if self.kind == "cnn":
                pred, _ = cnn_forward(chunk, self.params, self.config, train=False)
            else:
                pred, _ = full_forward(chunk, self.params, self.config, train=False)
            out[i : i + len(chunk)] = pred
        return out


def _config_to_dict(kind: str, config) -> dict:
    enc = config.encoder
    base = {"grid": enc.grid, "in_bands": enc.in_bands, "blocks": [list(b) for b in enc.blocks]}
    if kind == "cnn":
        return {"encoder": base, "head_units": config.head_units, "dropout": config.dropout}
    return {
        "encoder": base,
        "seq_len": config.seq_len,
        "lstm_hidden": config.lstm_hidden,
        "variation_filters": config.variation_filters,
        "variation_kernel": config.variation_kernel,
        "head_units": config.head_units,
        "dropout": config.dropout,
    }


def _config_from_dict(kind: str, d: dict):
    enc = EncoderConfig(
        grid=d["encoder"]["grid"],
        in_bands=d["encoder"]["in_bands"],
        blocks=tuple(tuple(b) for b in d["encoder"]["blocks"]),
    )
    if kind == "cnn":
        return CnnRegressorConfig(encoder=enc, head_units=d["head_units"], dropout=d["dropout"])
    return FullModelConfig(
        encoder=enc,
        seq_len=d["seq_len"],
        lstm_hidden=d["lstm_hidden"],
        variation_filters=d["variation_filters"],
        variation_kernel=d["variation_kernel"],
        head_units=d["head_units"],
        dropout=d["dropout"],
    )


def save_model(path: str | Path, bundle: ModelBundle) -> None:
    """``NRMD`` container: JSON descriptor (architecture, parameter shapes,
    normalization statistics), then the tensors as little-endian f32."""
    names = sorted(bundle.params)
    descriptor = {
        "kind": bundle.kind,
        "config": _config_to_dict(bundle.kind, bundle.config),
        "parameters": [{"name": n, "shape": list(bundle.params[n].shape)} for n in names],
        "normalization": {
            "band_mean": bundle.norm.band_mean.tolist(),
            "band_std": bundle.norm.band_std.tolist(),
        },
    }
    blob = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sHI", MODEL_MAGIC, MODEL_VERSION, len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(bundle.params[name], dtype="<f4").tobytes())


def load_model(path: str | Path) -> ModelBundle:
    raw = Path(path).read_bytes()
    head = struct.Struct("<4sHI")
    if len(raw) < head.size:
        raise FormatError(f"{path}: file too short for a model header")
    magic, version, blob_len = head.unpack_from(raw)
    if magic != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    try:
        descriptor = json.loads(raw[head.size : head.size + blob_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable model descriptor") from exc
    offset = head.size + blob_len
    params = {}
    for entry in descriptor["parameters"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * 4
        if end > len(raw):
            raise FormatError(f"{path}: truncated tensor {entry['name']!r}")
        params[entry["name"]] = np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    norm = NormStats(
        band_mean=np.array(descriptor["normalization"]["band_mean"]),
        band_std=np.array(descriptor["normalization"]["band_std"]),
    )
    kind = descriptor["kind"]
    return ModelBundle(kind=kind, config=_config_from_dict(kind, descriptor["config"]), params=params, norm=norm)
