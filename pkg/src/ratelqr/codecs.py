"""Per-sensor compression codecs: identity, PCA, and a dense autoencoder.

Every codec exposes encode/decode over 1-d vectors plus batched variants over
sample-per-row matrices. The autoencoder is a plain MLP (ReLU on hidden
layers, linear latent and output) trained by minibatch backprop with an
adaptive-moment optimizer; the latent vector is what crosses the rate-limited
link, so its dimension is the codec's transmission cost.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, ConfigError, NumericsError
from .mathkernel import RngStream, sym_eig

CHECKPOINT_FORMAT_VERSION = 1
DEFAULT_HIDDEN = (512, 1024, 512)


@dataclass(frozen=True)
class CodecDescriptor:
    kind: str  # "identity" | "pca" | "ae"
    input_dim: int
    latent_dim: int

    def __post_init__(self):
        if self.kind not in ("identity", "pca", "ae"):
            raise ConfigError(f"unknown codec kind {self.kind!r}")
        if self.input_dim < 1 or self.latent_dim < 1:
            raise ConfigError("codec dimensions must be >= 1")
        if self.kind == "identity" and self.latent_dim != self.input_dim:
            raise ConfigError("identity codec requires latent_dim == input_dim")
        if self.kind == "pca" and self.latent_dim > self.input_dim:
            raise ConfigError("pca codec requires latent_dim <= input_dim")


class IdentityCodec:
    """Transmits the raw observation unchanged (the uncompressed baselines)."""

    kind = "identity"

    def __init__(self, dim: int):
        self.input_dim = int(dim)
        self.latent_dim = int(dim)

    def encode(self, y):
        return np.asarray(y, dtype=float)

    def decode(self, z):
        return np.asarray(z, dtype=float)

    def encode_batch(self, ys):
        return np.asarray(ys, dtype=float)

    def decode_batch(self, zs):
        return np.asarray(zs, dtype=float)


class PcaCodec:
    """Linear codec: project onto the top-d eigenvectors of the data covariance."""

    kind = "pca"

    def __init__(self, mean: np.ndarray, basis: np.ndarray, spectrum: np.ndarray):
        self.mean = np.asarray(mean, dtype=float)
        self.basis = np.asarray(basis, dtype=float)
        self.spectrum = np.asarray(spectrum, dtype=float)
        if self.basis.shape[0] != self.mean.shape[0]:
            raise ConfigError("basis rows must match mean dimension")
        if self.spectrum.shape[0] != self.mean.shape[0]:
            raise ConfigError("spectrum must hold all input_dim eigenvalues")

    @property
    def input_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.basis.shape[1]

    def encode(self, y):
        return self.basis.T @ (np.asarray(y, dtype=float) - self.mean)

    def decode(self, z):
        return self.basis @ np.asarray(z, dtype=float) + self.mean

    def encode_batch(self, ys):
        return (np.asarray(ys, dtype=float) - self.mean) @ self.basis

    def decode_batch(self, zs):
        return np.asarray(zs, dtype=float) @ self.basis.T + self.mean


def pca_fit(samples: np.ndarray, d: int) -> PcaCodec:
    """Fit a PCA codec on sample-per-row data.

    The covariance uses the 1/N normalization, so the in-sample mean squared
    reconstruction error equals the sum of the discarded eigenvalues exactly.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2:
        raise ConfigError(f"samples must be 2-d, got shape {samples.shape}")
    n, input_dim = samples.shape
    if n <= input_dim:
        raise ConfigError(f"need more samples ({n}) than dimensions ({input_dim})")
    if not 1 <= d <= input_dim:
        raise ConfigError(f"latent dim {d} out of range [1, {input_dim}]")
    mean = samples.mean(axis=0)
    centered = samples - mean
    cov = centered.T @ centered / n
    spectrum, vectors = sym_eig(cov)
    return PcaCodec(mean=mean, basis=vectors[:, :d], spectrum=np.clip(spectrum, 0.0, None))


def pca_offline_mse(spectrum: np.ndarray, d: int) -> float:
    """In-sample PCA reconstruction MSE: the eigenvalue tail sum."""
    return float(np.sum(spectrum[d:]))


class AeCodec:
    """Dense autoencoder with explicit parameters.

    Layers are (W, b) pairs computing a = h @ W.T + b; ReLU follows every
    layer except the encoder's last (the latent) and the decoder's last (the
    output). Inputs are standardized per component by input_mean/input_scale
    and outputs are de-standardized, so reconstruction error is measured in
    the original units.
    """

    kind = "ae"

    def __init__(self, encoder_layers, decoder_layers, input_mean, input_scale):
        self.encoder_layers = [(np.asarray(w, dtype=float), np.asarray(b, dtype=float)) for w, b in encoder_layers]
        self.decoder_layers = [(np.asarray(w, dtype=float), np.asarray(b, dtype=float)) for w, b in decoder_layers]
        self.input_mean = np.asarray(input_mean, dtype=float)
        self.input_scale = np.asarray(input_scale, dtype=float)
        dims = self.layer_dims()
        if dims[0] != dims[-1]:
            raise ConfigError(f"autoencoder output dim {dims[-1]} != input dim {dims[0]}")
        if self.input_mean.shape != (dims[0],) or self.input_scale.shape != (dims[0],):
            raise ConfigError("standardization statistics must match the input dimension")

    def layer_dims(self) -> list[int]:
        dims = [self.encoder_layers[0][0].shape[1]]
        for w, b in self.encoder_layers + self.decoder_layers:
            if w.shape[1] != dims[-1]:
                raise ConfigError(f"layer dimension chain broken: {w.shape} after {dims[-1]}")
            if b.shape != (w.shape[0],):
                raise ConfigError(f"bias shape {b.shape} does not match weight {w.shape}")
            dims.append(w.shape[0])
        return dims

    @property
    def input_dim(self) -> int:
        return self.encoder_layers[0][0].shape[1]

    @property
    def latent_dim(self) -> int:
        return self.encoder_layers[-1][0].shape[0]

    def parameters(self):
        """Flat list of parameter arrays (encoder then decoder, W then b)."""
        out = []
        for w, b in self.encoder_layers + self.decoder_layers:
            out.extend((w, b))
        return out

    def copy(self) -> "AeCodec":
        return AeCodec(
            [(w.copy(), b.copy()) for w, b in self.encoder_layers],
            [(w.copy(), b.copy()) for w, b in self.decoder_layers],
            self.input_mean.copy(),
            self.input_scale.copy(),
        )

    def forward_batch(self, ys: np.ndarray):
        """(Z, Yhat) for sample-per-row input."""
        h = (np.asarray(ys, dtype=float) - self.input_mean) / self.input_scale
        n_enc = len(self.encoder_layers)
        for i, (w, b) in enumerate(self.encoder_layers):
            h = h @ w.T + b
            if i < n_enc - 1:
                np.maximum(h, 0.0, out=h)
        z = h
        n_dec = len(self.decoder_layers)
        for i, (w, b) in enumerate(self.decoder_layers):
            h = h @ w.T + b
            if i < n_dec - 1:
                np.maximum(h, 0.0, out=h)
        yhat = h * self.input_scale + self.input_mean
        if not np.all(np.isfinite(yhat)):
            raise NumericsError("autoencoder forward pass produced non-finite values")
        return z, yhat

    def encode(self, y):
        z, _ = self.forward_batch(np.asarray(y, dtype=float)[None, :])
        return z[0]

    def decode(self, z):
        h = np.asarray(z, dtype=float)[None, :]
        n_dec = len(self.decoder_layers)
        for i, (w, b) in enumerate(self.decoder_layers):
            h = h @ w.T + b
            if i < n_dec - 1:
                np.maximum(h, 0.0, out=h)
        return (h * self.input_scale + self.input_mean)[0]

    def encode_batch(self, ys):
        z, _ = self.forward_batch(ys)
        return z

    def decode_batch(self, zs):
        h = np.asarray(zs, dtype=float)
        n_dec = len(self.decoder_layers)
        for i, (w, b) in enumerate(self.decoder_layers):
            h = h @ w.T + b
            if i < n_dec - 1:
                np.maximum(h, 0.0, out=h)
        return h * self.input_scale + self.input_mean


def ae_forward(codec: AeCodec, y: np.ndarray):
    """(z, yhat) for a single observation vector."""
    z, yhat = codec.forward_batch(np.asarray(y, dtype=float)[None, :])
    return z[0], yhat[0]


def ae_init(
    descriptor: CodecDescriptor,
    rng: RngStream,
    hidden: tuple[int, ...] = DEFAULT_HIDDEN,
    weight_scale: float = 1.0,
) -> AeCodec:
    """Fresh autoencoder with N(0, 2/fan_in) weights and zero biases.

    The decoder mirrors the encoder's hidden sizes. `weight_scale` multiplies
    the draw; zero gives the all-zero debug network.
    """
    if descriptor.kind != "ae":
        raise ConfigError(f"ae_init requires an ae descriptor, got {descriptor.kind}")
    enc_dims = [descriptor.input_dim, *hidden, descriptor.latent_dim]
    dec_dims = [descriptor.latent_dim, *reversed(hidden), descriptor.input_dim]

    def make_layers(dims):
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = weight_scale * np.sqrt(2.0 / fan_in) * rng.standard_normal((fan_out, fan_in))
            layers.append((w, np.zeros(fan_out)))
        return layers

    return AeCodec(
        encoder_layers=make_layers(enc_dims),
        decoder_layers=make_layers(dec_dims),
        input_mean=np.zeros(descriptor.input_dim),
        input_scale=np.ones(descriptor.input_dim),
    )


def ae_loss(codec: AeCodec, batch: np.ndarray) -> float:
    """Mean over the batch of the squared reconstruction norm |yhat - y|^2."""
    batch = np.asarray(batch, dtype=float)
    _, yhat = codec.forward_batch(batch)
    return float(np.mean(np.sum((yhat - batch) ** 2, axis=1)))


def ae_gradient(codec: AeCodec, batch: np.ndarray):
    """Backprop gradients of ae_loss w.r.t. every weight and bias.

    Returns (loss, grads) where grads matches codec.parameters() order.
    """
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ConfigError(f"batch must be a nonempty 2-d array, got shape {batch.shape}")
    n = batch.shape[0]
    layers = codec.encoder_layers + codec.decoder_layers
    n_enc = len(codec.encoder_layers)
    # Layers without a ReLU: the latent (index n_enc - 1) and the output.
    linear_idx = {n_enc - 1, len(layers) - 1}

    x_std = (batch - codec.input_mean) / codec.input_scale
    inputs = []  # input to each layer
    relu_masks = []
    h = x_std
    for i, (w, b) in enumerate(layers):
        inputs.append(h)
        h = h @ w.T + b
        if i in linear_idx:
            relu_masks.append(None)
        else:
            mask = h > 0.0
            h = h * mask
            relu_masks.append(mask)
    yhat = h * codec.input_scale + codec.input_mean
    loss = float(np.mean(np.sum((yhat - batch) ** 2, axis=1)))

    d_h = (2.0 / n) * (yhat - batch) * codec.input_scale  # through de-standardization
    grads = [None] * (2 * len(layers))
    for i in range(len(layers) - 1, -1, -1):
        if relu_masks[i] is not None:
            d_h = d_h * relu_masks[i]
        w, _ = layers[i]
        grads[2 * i] = d_h.T @ inputs[i]
        grads[2 * i + 1] = d_h.sum(axis=0)
        if i > 0:
            d_h = d_h @ w
    return loss, grads


class AdamOptimizer:
    """Adaptive-moment minibatch optimizer with bias correction."""

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / (1 - self.beta1**self.t)
            v_hat = self.v[i] / (1 - self.beta2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    epochs: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    validation_fraction: float = 0.1
    patience: int | None = 10  # epochs without validation improvement; None disables
    steps_per_epoch: int | None = None  # cap minibatches per epoch; None = full pass

    def __post_init__(self):
        if not 0 < self.validation_fraction < 1:
            raise ConfigError("validation_fraction must be in (0, 1)")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigError("steps_per_epoch must be >= 1")

    def to_dict(self):
        return {
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "seed": self.seed,
            "validation_fraction": self.validation_fraction,
            "patience": self.patience,
            "steps_per_epoch": self.steps_per_epoch,
        }


def _validation_mse(codec: AeCodec, data: np.ndarray, chunk: int = 8192) -> float:
    total = 0.0
    for start in range(0, data.shape[0], chunk):
        block = data[start : start + chunk]
        _, yhat = codec.forward_batch(block)
        total += float(np.sum((yhat - block) ** 2))
    return total / data.shape[0]


def ae_train(
    descriptor: CodecDescriptor,
    dataset: np.ndarray,
    cfg: TrainConfig,
    hidden: tuple[int, ...] = DEFAULT_HIDDEN,
):
    """Train an autoencoder on sample-per-row data.

    Standardizes inputs by the training split's mean/std, optimizes the
    reconstruction MSE with Adam, and returns (codec with the best validation
    parameters, per-epoch curve). With epochs == 0 the freshly initialized
    network is returned untouched.
    """
    dataset = np.asarray(dataset, dtype=float)
    if dataset.ndim != 2 or dataset.shape[1] != descriptor.input_dim:
        raise ConfigError(f"dataset shape {dataset.shape} does not match input_dim {descriptor.input_dim}")
    if dataset.shape[0] < cfg.batch_size:
        raise ConfigError(f"dataset has {dataset.shape[0]} rows, need >= batch_size {cfg.batch_size}")

    root = RngStream(cfg.seed)
    codec = ae_init(descriptor, root.substream(0), hidden=hidden)
    curve: list[dict] = []
    if cfg.epochs == 0:
        return codec, curve

    perm = root.substream(1).permutation(dataset.shape[0])
    n_val = max(1, int(round(dataset.shape[0] * cfg.validation_fraction)))
    val = dataset[perm[-n_val:]]
    train = dataset[perm[:-n_val]]
    if train.shape[0] < cfg.batch_size:
        raise ConfigError("training split smaller than batch_size; reduce validation_fraction")

    mean = train.mean(axis=0)
    std = train.std(axis=0)
    codec.input_mean = mean
    codec.input_scale = np.where(std > 1e-12, std, 1.0)

    params = codec.parameters()
    opt = AdamOptimizer(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    shuffle = root.substream(2)

    val0 = _validation_mse(codec, val)
    best_val = np.inf
    best_params = None
    epochs_since_best = 0
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(train.shape[0])
        train_loss_sum = 0.0
        n_batches = 0
        for start in range(0, train.shape[0], cfg.batch_size):
            if cfg.steps_per_epoch is not None and n_batches >= cfg.steps_per_epoch:
                break
            batch = train[order[start : start + cfg.batch_size]]
            loss, grads = ae_gradient(codec, batch)
            opt.step(params, grads)
            train_loss_sum += loss
            n_batches += 1
        val_mse = _validation_mse(codec, val)
        curve.append(
            {"epoch": epoch, "train_mse": train_loss_sum / n_batches, "val_mse": val_mse}
        )
        if not np.isfinite(val_mse) or val_mse > 10.0 * max(val0, 1e-30):
            raise NumericsError(
                f"autoencoder training diverged at epoch {epoch}: "
                f"validation MSE {val_mse:.6g} vs initial {val0:.6g}"
            )
        if val_mse < best_val:
            best_val = val_mse
            best_params = [p.copy() for p in params]
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if cfg.patience is not None and epochs_since_best >= cfg.patience:
                break
    if best_params is not None:
        for p, bp in zip(params, best_params):
            p[...] = bp
    return codec, curve


def codec_roundtrip(codec, y: np.ndarray) -> np.ndarray:
    """decode(encode(y)) for any codec; identity returns y bit-exactly."""
    y = np.asarray(y, dtype=float)
    if y.shape != (codec.input_dim,):
        raise ConfigError(f"observation shape {y.shape} does not match codec input_dim {codec.input_dim}")
    if codec.kind == "identity":
        return y
    return codec.decode(codec.encode(y))


def codec_roundtrip_batch(codec, ys: np.ndarray) -> np.ndarray:
    ys = np.asarray(ys, dtype=float)
    if ys.shape[1] != codec.input_dim:
        raise ConfigError(f"batch dim {ys.shape[1]} does not match codec input_dim {codec.input_dim}")
    if codec.kind == "identity":
        return ys
    if codec.kind == "ae":
        _, yhat = codec.forward_batch(ys)
        return yhat
    return codec.decode_batch(codec.encode_batch(ys))


def _layer_to_json(w: np.ndarray, b: np.ndarray) -> dict:
    return {
        "rows": int(w.shape[0]),
        "cols": int(w.shape[1]),
        "weights": w.ravel().tolist(),
        "bias": b.tolist(),
    }


def save_codec(codec, path: str) -> None:
    """Write a self-describing JSON checkpoint with full float64 precision."""
    doc: dict = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": codec.kind,
        "input_dim": int(codec.input_dim),
        "latent_dim": int(codec.latent_dim),
    }
    if codec.kind == "ae":
        doc["input_mean"] = codec.input_mean.tolist()
        doc["input_scale"] = codec.input_scale.tolist()
        doc["layers"] = [
            _layer_to_json(w, b) for w, b in codec.encoder_layers + codec.decoder_layers
        ]
    elif codec.kind == "pca":
        doc["pca"] = {
            "mean": codec.mean.tolist(),
            "spectrum": codec.spectrum.tolist(),
            "basis": codec.basis.tolist(),
        }
    elif codec.kind != "identity":
        raise ConfigError(f"cannot serialize codec kind {codec.kind!r}")
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def _field(doc: dict, name: str):
    if name not in doc:
        raise CheckpointError(f"checkpoint missing field {name!r}")
    return doc[name]


def load_codec(path: str):
    """Load a codec checkpoint written by save_codec."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CheckpointError(f"checkpoint {path} must hold a JSON object")
    version = _field(doc, "format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format_version {version} is incompatible "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    kind = _field(doc, "kind")
    input_dim = int(_field(doc, "input_dim"))
    latent_dim = int(_field(doc, "latent_dim"))
    if kind == "identity":
        if latent_dim != input_dim:
            raise CheckpointError("identity checkpoint with latent_dim != input_dim")
        return IdentityCodec(input_dim)
    if kind == "pca":
        pca = _field(doc, "pca")
        mean = np.asarray(_field(pca, "mean"), dtype=float)
        spectrum = np.asarray(_field(pca, "spectrum"), dtype=float)
        basis = np.asarray(_field(pca, "basis"), dtype=float)
        if basis.shape != (input_dim, latent_dim):
            raise CheckpointError(f"field 'basis' has shape {basis.shape}, expected ({input_dim}, {latent_dim})")
        return PcaCodec(mean=mean, basis=basis, spectrum=spectrum)
    if kind == "ae":
        layers = []
        for i, entry in enumerate(_field(doc, "layers")):
            rows = int(_field(entry, "rows"))
            cols = int(_field(entry, "cols"))
            w = np.asarray(_field(entry, "weights"), dtype=float)
            if w.shape != (rows * cols,):
                raise CheckpointError(f"layer {i} field 'weights' has {w.shape[0]} values, expected {rows * cols}")
            b = np.asarray(_field(entry, "bias"), dtype=float)
            if b.shape != (rows,):
                raise CheckpointError(f"layer {i} field 'bias' has {b.shape[0]} values, expected {rows}")
            layers.append((w.reshape(rows, cols), b))
        # The encoder ends at the first layer producing the latent dimension.
        split = None
        for i, (w, _) in enumerate(layers):
            if w.shape[0] == latent_dim:
                split = i + 1
                break
        if split is None or split == len(layers):
            raise CheckpointError("field 'layers' does not contain a latent layer matching latent_dim")
        return AeCodec(
            encoder_layers=layers[:split],
            decoder_layers=layers[split:],
            input_mean=np.asarray(_field(doc, "input_mean"), dtype=float),
            input_scale=np.asarray(_field(doc, "input_scale"), dtype=float),
        )
    raise CheckpointError(f"unknown codec kind {kind!r} in field 'kind'")
