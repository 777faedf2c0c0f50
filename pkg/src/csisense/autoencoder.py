"""Compression autoencoder: conv feature-extraction encoder to a dense
codeword, dense decoder refined by two residual conv blocks.

The codeword length follows the compression-ratio law
N = 2 * n_delay * n_antennas / gamma.
"""

import hashlib
import json
from dataclasses import dataclass, asdict, field

import numpy as np

from . import nn
from .errors import ConfigError, ShapeError, TrainingError
from .transform import NormStats

LEAKY_SLOPE = 0.1
RESIDUAL_CHANNELS = (2, 8, 16, 2)
DEFAULT_RATIOS = (4, 16, 32, 64)


def codeword_length(n_delay, n_antennas, gamma):
    raw = 2 * n_delay * n_antennas
    if gamma < 1 or raw % gamma:
        raise ConfigError(f"gamma {gamma} does not divide {raw} tensor entries")
    return raw // gamma


class ResidualBlock(nn.Layer):
    """Three 3x3 convs with leaky-relu between; identity skip joins the conv
    path before the block's final activation."""

    def __init__(self, channels=RESIDUAL_CHANNELS, slope=LEAKY_SLOPE, rng=None,
                 dtype=np.float32):
        if channels[0] != channels[-1]:
            raise ConfigError(f"skip path needs equal in/out channels, got {channels}")
        self.channels = tuple(channels)
        self.slope = slope
        self.layers = []
        for cin, cout in zip(channels[:-1], channels[1:]):
            if self.layers:
                self.layers.append(nn.LeakyRelu(slope))
            self.layers.append(nn.Conv2d(cin, cout, rng=rng, dtype=dtype))
        self.final = nn.LeakyRelu(slope)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads()]

    def forward(self, x):
        y = x
        for layer in self.layers:
            y = layer.forward(y)
        return self.final.forward(x + y)

    def backward(self, dout):
        g = self.final.backward(dout)
        dy = g
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy + g

    def descriptor(self):
        return {
            "type": "residual_block",
            "channels": list(self.channels),
            "slope": self.slope,
        }


nn.register_layer(
    "residual_block", lambda channels, slope: ResidualBlock(channels, slope)
)


@dataclass
class AutoencoderModel:
    encoder: nn.Sequential
    decoder: nn.Sequential
    n_delay: int
    n_antennas: int
    gamma: int

    @property
    def code_length(self):
        return codeword_length(self.n_delay, self.n_antennas, self.gamma)

    def encode(self, x):
        if x.ndim != 4 or x.shape[1:] != (2, self.n_delay, self.n_antennas):
            raise ShapeError(
                f"encoder expects (B, 2, {self.n_delay}, {self.n_antennas}), "
                f"got {x.shape}"
            )
        return self.encoder.forward(x)

    def decode(self, s):
        if s.ndim != 2 or s.shape[1] != self.code_length:
            raise ShapeError(
                f"decoder expects (B, {self.code_length}), got {s.shape}"
            )
        return self.decoder.forward(s)

    def params(self):
        return self.encoder.params() + self.decoder.params()

    def grads(self):
        return self.encoder.grads() + self.decoder.grads()

    def state(self):
        return self.encoder.state() + self.decoder.state()

    def load_state(self, arrays):
        n_enc = len(self.encoder.params())
        self.encoder.load_state(arrays[:n_enc])
        self.decoder.load_state(arrays[n_enc:])


def build_autoencoder(gamma, n_delay=32, n_antennas=32, seed=0) -> AutoencoderModel:
    n_code = codeword_length(n_delay, n_antennas, gamma)
    flat = 2 * n_delay * n_antennas
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    encoder = nn.Sequential(
        [
            nn.Conv2d(2, 2, rng=rng),
            nn.LeakyRelu(LEAKY_SLOPE),
            nn.Flatten(),
            nn.Dense(flat, n_code, rng=rng),
        ]
    )
    decoder = nn.Sequential(
        [
            nn.Dense(n_code, flat, rng=rng),
            nn.Reshape((2, n_delay, n_antennas)),
            ResidualBlock(rng=rng),
            ResidualBlock(rng=rng),
            nn.Conv2d(2, 2, rng=rng),
            nn.Sigmoid(),
        ]
    )
    return AutoencoderModel(encoder, decoder, n_delay, n_antennas, gamma)


def mse_loss(batch_true, batch_pred):
    """Mean over the batch of per-sample squared l2 error."""
    if batch_true.shape != batch_pred.shape:
        raise ShapeError(f"shape mismatch {batch_true.shape} vs {batch_pred.shape}")
    d = (batch_pred - batch_true).astype(np.float64, copy=False)
    return float(np.sum(d * d) / batch_true.shape[0])


def mse_loss_grad(batch_true, batch_pred):
    loss = mse_loss(batch_true, batch_pred)
    grad = (2.0 / batch_true.shape[0]) * (batch_pred - batch_true)
    return loss, grad.astype(batch_pred.dtype, copy=False)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    patience: int = 20

    def validate(self):
        if min(self.epochs, self.batch_size, self.patience) <= 0 or self.lr <= 0:
            raise ConfigError(f"all TrainConfig fields must be positive: {self}")

    def content_hash(self):
        return hashlib.sha256(
            json.dumps(asdict(self), sort_keys=True).encode()
        ).hexdigest()[:16]


def _forward_loss(model, x, chunk=512):
    total = 0.0
    for i in range(0, x.shape[0], chunk):
        part = x[i : i + chunk]
        total += mse_loss(part, model.decode(model.encode(part))) * part.shape[0]
    return total / x.shape[0]


def train_autoencoder(train_x, val_x, gamma, config: TrainConfig, sample_ids=None):
    """Train on normalized tensors; returns (model, history).

    The model returned carries the parameters of the best validation epoch.
    history records per-epoch train/val loss, the running best, and the
    sample ids consumed (for routing instrumentation).
    """
    config.validate()
    if train_x.shape[0] == 0 or val_x.shape[0] == 0:
        raise TrainingError("empty training or validation partition")
    n_delay, n_ant = train_x.shape[2], train_x.shape[3]
    model = build_autoencoder(gamma, n_delay, n_ant, seed=config.seed)
    opt = nn.Adam(model.params(), lr=config.lr)
    shuffle_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(config.seed, spawn_key=(1,)))
    )
    if sample_ids is None:
        sample_ids = np.arange(train_x.shape[0])
    history = {
        "train_loss": [],
        "val_loss": [],
        "best_val": [],
        "seen_ids": np.sort(np.asarray(sample_ids)),
    }
    best = np.inf
    best_state = model.state()
    stale = 0
    n = train_x.shape[0]
    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(n)
        running = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            batch = np.ascontiguousarray(train_x[idx])
            pred = model.decode(model.encode(batch))
            loss, grad = mse_loss_grad(batch, pred)
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}")
            d_code = model.decoder.backward(grad)
            model.encoder.backward(d_code)
            opt.step(model.grads())
            running += loss * batch.shape[0]
        val = _forward_loss(model, val_x)
        history["train_loss"].append(running / n)
        history["val_loss"].append(val)
        if val < best:
            best = val
            best_state = model.state()
            stale = 0
        else:
            stale += 1
        history["best_val"].append(best)
        if stale >= config.patience:
            break
    model.load_state(best_state)
    return model, history


def save_autoencoder(path, model: AutoencoderModel, norm: NormStats, config_hash=""):
    arrays = {}
    for i, p in enumerate(model.encoder.params()):
        arrays[f"enc{i}"] = p
    for i, p in enumerate(model.decoder.params()):
        arrays[f"dec{i}"] = p
    meta = {
        "encoder": model.encoder.descriptors(),
        "decoder": model.decoder.descriptors(),
        "n_delay": model.n_delay,
        "n_antennas": model.n_antennas,
        "gamma": model.gamma,
        "norm": {"offset": norm.offset, "scale": norm.scale},
        "train_config_hash": config_hash,
    }
    nn.save_container(path, "autoencoder", meta, arrays)


def load_autoencoder(path):
    kind, meta, arrays = nn.load_container(path)
    if kind != "autoencoder":
        raise ConfigError(f"expected an autoencoder container, found {kind!r}")
    encoder = nn.sequential_from_descriptors(meta["encoder"])
    decoder = nn.sequential_from_descriptors(meta["decoder"])
    model = AutoencoderModel(
        encoder, decoder, meta["n_delay"], meta["n_antennas"], meta["gamma"]
    )
    n_enc = len(encoder.params())
    model.load_state(
        [arrays[f"enc{i}"] for i in range(n_enc)]
        + [arrays[f"dec{i}"] for i in range(len(decoder.params()))]
    )
    norm = NormStats(meta["norm"]["offset"], meta["norm"]["scale"])
    return model, norm, meta
