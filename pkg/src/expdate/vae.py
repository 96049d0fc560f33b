"""Convolutional-recurrent variational autoencoder for dot-matrix -> solid translation.

Encoder: strided 3x3 convs (each followed by batchnorm and ReLU), flatten,
a length-1 sequence through two bidirectional LSTMs with dropout between
them, then two affine heads for the latent mean and log-variance.
Decoder: dense projection, reshape, transposed convs with ReLU, and a
final single-channel transposed conv with sigmoid.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .nn import BatchNormState, ConvSpec, DenseSpec, LstmSpec
from .tensor import DomainError, Rng, ShapeError, Tensor, exp, mul, record, reduce, relu, sigmoid

PAPER_LATENTS = (32, 64, 128, 256, 512, 1024)
BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class VaeConfig:
    input_shape: tuple[int, int, int] = (64, 256, 1)
    encoder_filters: tuple[int, ...] = (64, 128, 256, 512)
    encoder_strides: tuple[int, ...] = (2, 2, 2, 2)
    bilstm_hidden: tuple[int, int] = (256, 128)
    dropout_rate: float = 0.2
    latent_dim: int = 1024
    latent_head: str = "bilstm"
    decoder_dense_shape: tuple[int, int, int] = (16, 64, 64)
    decoder_filters: tuple[int, ...] = (64, 128, 256, 512, 1)
    decoder_strides: tuple[int, ...] = (2, 2, 1, 1, 1)
    kernel: int = 3

    def __post_init__(self):
        for name in ("input_shape", "encoder_filters", "encoder_strides", "bilstm_hidden",
                     "decoder_dense_shape", "decoder_filters", "decoder_strides"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    @classmethod
    def paper(cls, **overrides) -> "VaeConfig":
        return cls(**overrides)

    @classmethod
    def toy(cls, **overrides) -> "VaeConfig":
        base = dict(input_shape=(32, 128, 1), encoder_filters=(8, 16, 32, 64), bilstm_hidden=(32, 16),
                    latent_dim=64, decoder_dense_shape=(8, 32, 16), decoder_filters=(16, 16, 16, 16, 1),
                    dropout_rate=0.1)
        base.update(overrides)
        return cls(**base)

    def validate(self) -> None:
        if len(self.encoder_filters) != len(self.encoder_strides):
            raise ValueError("encoder_filters and encoder_strides differ in length")
        if len(self.decoder_filters) != len(self.decoder_strides):
            raise ValueError("decoder_filters and decoder_strides differ in length")
        if self.decoder_filters[-1] != self.input_shape[2]:
            raise ValueError("last decoder filter count must equal the input channel count")
        body = self.decoder_filters[:-1]
        if any(b < a for a, b in zip(body, body[1:])):
            raise ValueError(f"decoder filters must be non-decreasing before the projection, got {body}")
        up = math.prod(self.decoder_strides)
        dh, dw, _ = self.decoder_dense_shape
        if (dh * up, dw * up) != self.input_shape[:2]:
            raise ValueError(f"decoder output {(dh * up, dw * up)} != input {self.input_shape[:2]}")
        if self.latent_head not in ("bilstm", "dense"):
            raise ValueError(f"latent_head must be 'bilstm' or 'dense', got {self.latent_head!r}")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.latent_dim not in PAPER_LATENTS:
            warnings.warn(f"latent_dim {self.latent_dim} outside the studied sizes {PAPER_LATENTS}", stacklevel=3)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "VaeConfig":
        return cls(**d)


@dataclass
class LayerRow:
    name: str
    output_shape: tuple
    params: int
    group: str = "encoder"

    def shape_str(self) -> str:
        return "(" + ", ".join("None" if v is None else str(v) for v in self.output_shape) + ")"


# ------------------------------------------------------------------ geometry


def _encoder_convs(cfg: VaeConfig) -> list[ConvSpec]:
    specs, c = [], cfg.input_shape[2]
    for f, s in zip(cfg.encoder_filters, cfg.encoder_strides):
        specs.append(ConvSpec(c, f, cfg.kernel, s, "same"))
        c = f
    return specs


def _encoder_feature_shape(cfg: VaeConfig) -> tuple[int, int, int]:
    h, w, c = cfg.input_shape
    for spec in _encoder_convs(cfg):
        h, w = spec.output_hw(h, w)
        c = spec.out_channels
    return h, w, c


def _latent_layers(cfg: VaeConfig):
    flat = math.prod(_encoder_feature_shape(cfg))
    h1, h2 = cfg.bilstm_hidden
    if cfg.latent_head == "bilstm":
        return LstmSpec(flat, h1, True, True), LstmSpec(2 * h1, h2, True, False)
    return DenseSpec(flat, 2 * h1), DenseSpec(2 * h1, 2 * h2)


def _decoder_convs(cfg: VaeConfig) -> list[ConvSpec]:
    specs, c = [], cfg.decoder_dense_shape[2]
    for f, s in zip(cfg.decoder_filters, cfg.decoder_strides):
        specs.append(ConvSpec(c, f, cfg.kernel, s, "same"))
        c = f
    return specs


def param_shapes(cfg: VaeConfig) -> dict[str, tuple[int, ...]]:
    """Trainable parameter shapes keyed by name."""
    shapes: dict[str, tuple[int, ...]] = {}
    for i, spec in enumerate(_encoder_convs(cfg), 1):
        shapes[f"enc.conv{i}.weight"] = spec.weight_shape
        shapes[f"enc.conv{i}.bias"] = (spec.out_channels,)
        shapes[f"enc.bn{i}.gamma"] = (spec.out_channels,)
        shapes[f"enc.bn{i}.beta"] = (spec.out_channels,)
    first, second = _latent_layers(cfg)
    for i, spec in enumerate((first, second), 1):
        if isinstance(spec, LstmSpec):
            for k, shp in nn.lstm_param_shapes(spec).items():
                shapes[f"enc.lstm{i}.{k}"] = shp
        else:
            shapes[f"enc.dense{i}.weight"] = (spec.in_features, spec.out_features)
            shapes[f"enc.dense{i}.bias"] = (spec.out_features,)
    h_enc = 2 * cfg.bilstm_hidden[1]
    for head in ("mean", "logvar"):
        shapes[f"enc.{head}.weight"] = (h_enc, cfg.latent_dim)
        shapes[f"enc.{head}.bias"] = (cfg.latent_dim,)
    shapes["dec.dense.weight"] = (cfg.latent_dim, math.prod(cfg.decoder_dense_shape))
    shapes["dec.dense.bias"] = (math.prod(cfg.decoder_dense_shape),)
    for i, spec in enumerate(_decoder_convs(cfg), 1):
        shapes[f"dec.deconv{i}.weight"] = spec.weight_shape
        shapes[f"dec.deconv{i}.bias"] = (spec.out_channels,)
    return shapes


def state_shapes(cfg: VaeConfig) -> dict[str, tuple[int, ...]]:
    """Non-trainable batchnorm statistics."""
    out = {}
    for i, f in enumerate(cfg.encoder_filters, 1):
        out[f"enc.bn{i}.running_mean"] = (f,)
        out[f"enc.bn{i}.running_var"] = (f,)
    return out


def summary(cfg: VaeConfig) -> list[LayerRow]:
    """Keras-style per-layer output shapes and parameter counts."""
    rows = [LayerRow("InputLayer", (None, *cfg.input_shape), 0)]
    h, w, _ = cfg.input_shape
    for spec in _encoder_convs(cfg):
        h, w = spec.output_hw(h, w)
        rows.append(LayerRow("Conv2D", (None, h, w, spec.out_channels), spec.param_count()))
        rows.append(LayerRow("BatchNormalization", (None, h, w, spec.out_channels),
                             BatchNormState.param_count(spec.out_channels)))
    flat = h * w * cfg.encoder_filters[-1]
    rows.append(LayerRow("Flatten", (None, flat), 0))
    first, second = _latent_layers(cfg)
    if cfg.latent_head == "bilstm":
        rows.append(LayerRow("Reshape", (None, 1, flat), 0))
        rows.append(LayerRow("Bidirectional", (None, 1, first.output_size), first.param_count()))
        rows.append(LayerRow("Dropout", (None, 1, first.output_size), 0))
        rows.append(LayerRow("Bidirectional", (None, second.output_size), second.param_count()))
    else:
        rows.append(LayerRow("Dense", (None, first.out_features), first.param_count()))
        rows.append(LayerRow("Dropout", (None, first.out_features), 0))
        rows.append(LayerRow("Dense", (None, second.out_features), second.param_count()))
    head = DenseSpec(2 * cfg.bilstm_hidden[1], cfg.latent_dim)
    rows.append(LayerRow("mean", (None, cfg.latent_dim), head.param_count()))
    rows.append(LayerRow("Variance", (None, cfg.latent_dim), head.param_count()))
    rows.append(LayerRow("Sampling", (None, cfg.latent_dim), 0))

    dec = [LayerRow("input 2 (InputLayer)", (None, cfg.latent_dim), 0, "decoder")]
    units = math.prod(cfg.decoder_dense_shape)
    dec.append(LayerRow("dense", (None, units), DenseSpec(cfg.latent_dim, units).param_count(), "decoder"))
    dec.append(LayerRow("reshape 1 (Reshape)", (None, *cfg.decoder_dense_shape), 0, "decoder"))
    h, w, _ = cfg.decoder_dense_shape
    for i, spec in enumerate(_decoder_convs(cfg)):
        h, w = spec.transpose_output_hw(h, w)
        name = "conv2d transpose" + (f" {i}" if i else "")
        dec.append(LayerRow(name, (None, h, w, spec.out_channels), spec.param_count(), "decoder"))
    return rows + dec


def parameter_totals(cfg: VaeConfig) -> dict[str, int]:
    rows = summary(cfg)
    enc = sum(r.params for r in rows if r.group == "encoder")
    dec = sum(r.params for r in rows if r.group == "decoder")
    return {"encoder": enc, "decoder": dec, "total": enc + dec}


# ---------------------------------------------------------------- the model


def init_params(cfg: VaeConfig, rng: Rng, dtype=np.float32) -> dict[str, np.ndarray]:
    """Glorot-uniform conv/dense weights, zero biases, unit batchnorm scale."""
    out: dict[str, np.ndarray] = {}
    shapes = param_shapes(cfg)
    lstm_done = set()
    for name, shape in shapes.items():
        layer = name.rsplit(".", 1)[0]
        if ".lstm" in name:
            prefix = name.split(".fw.")[0].split(".bw.")[0]
            if prefix in lstm_done:
                continue
            lstm_done.add(prefix)
            i = int(prefix[-1])
            spec = _latent_layers(cfg)[i - 1]
            for k, v in nn.lstm_init(rng.derive(len(out)), spec, dtype).items():
                out[f"{prefix}.{k}"] = v
        elif name.endswith(".gamma"):
            out[name] = np.ones(shape, dtype)
        elif name.endswith((".bias", ".beta")):
            out[name] = np.zeros(shape, dtype)
        else:
            if len(shape) == 4:
                kh, kw, ci, co = shape
                fan_in, fan_out = kh * kw * ci, kh * kw * co
            else:
                fan_in, fan_out = shape
            out[name] = nn.glorot_uniform(rng.derive(len(out)), shape, fan_in, fan_out, dtype)
    return {k: out[k] for k in shapes}


class LCBVAE:
    """Parameters, batchnorm statistics and the forward passes."""

    kind = "vae"

    def __init__(self, config: VaeConfig, params: dict | None = None, state: dict | None = None,
                 rng: Rng | None = None, dtype=np.float32):
        self.config = config
        if params is None:
            params = init_params(config, rng or Rng(0), dtype)
        self.params: dict[str, Tensor] = {k: v if isinstance(v, Tensor) else Tensor(v, dtype) for k, v in params.items()}
        if state is None:
            state = {}
            for k, shp in state_shapes(config).items():
                state[k] = (np.zeros if k.endswith("mean") else np.ones)(shp, dtype)
        self.state: dict[str, np.ndarray] = {k: np.asarray(v, dtype) for k, v in state.items()}
        expected = param_shapes(config)
        for k, shp in expected.items():
            if k not in self.params or self.params[k].shape != tuple(shp):
                raise ShapeError(f"parameter {k} missing or misshaped")

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values()) + sum(v.size for v in self.state.values())

    def _bn(self, i: int) -> BatchNormState:
        p = f"enc.bn{i}"
        return BatchNormState(self.params[f"{p}.gamma"], self.params[f"{p}.beta"],
                              self.state[f"{p}.running_mean"], self.state[f"{p}.running_var"])

    def encode(self, x, mode: str = "infer", rng: Rng | None = None) -> tuple[Tensor, Tensor]:
        cfg = self.config
        x = x if isinstance(x, Tensor) else Tensor(x, self.dtype)
        if x.ndim == 3:
            x = x.reshape((1, *x.shape))
        if x.shape[1:] != cfg.input_shape:
            raise ShapeError(f"expected images of shape {cfg.input_shape}, got {x.shape[1:]}")
        p = self.params
        h = x
        for i, spec in enumerate(_encoder_convs(cfg), 1):
            h = nn.conv2d(h, spec, p[f"enc.conv{i}.weight"], p[f"enc.conv{i}.bias"])
            bn = self._bn(i)
            h = nn.batchnorm(h, bn, mode)
            if mode == "train":
                self.state[f"enc.bn{i}.running_mean"] = bn.running_mean
                self.state[f"enc.bn{i}.running_var"] = bn.running_var
            h = relu(h)
        n = h.shape[0]
        flat = h.reshape((n, -1))
        first, second = _latent_layers(cfg)
        drop_rng = rng.derive(101) if rng is not None else None
        if cfg.latent_head == "bilstm":
            seq = flat.reshape((n, 1, flat.shape[1]))
            seq = nn.lstm_forward(seq, first, _sub(p, "enc.lstm1."))
            seq = nn.dropout(seq, cfg.dropout_rate, mode, drop_rng)
            h_enc = nn.lstm_forward(seq, second, _sub(p, "enc.lstm2."))
        else:
            h1 = relu(nn.dense(flat, p["enc.dense1.weight"], p["enc.dense1.bias"]))
            h1 = nn.dropout(h1, cfg.dropout_rate, mode, drop_rng)
            h_enc = relu(nn.dense(h1, p["enc.dense2.weight"], p["enc.dense2.bias"]))
        z_mean = nn.dense(h_enc, p["enc.mean.weight"], p["enc.mean.bias"])
        z_logvar = nn.dense(h_enc, p["enc.logvar.weight"], p["enc.logvar.bias"])
        return z_mean, z_logvar

    def decode(self, z) -> Tensor:
        cfg = self.config
        z = z if isinstance(z, Tensor) else Tensor(z, self.dtype)
        if z.ndim == 1:
            z = z.reshape((1, z.shape[0]))
        if z.shape[-1] != cfg.latent_dim:
            raise ShapeError(f"latent length {z.shape[-1]} != {cfg.latent_dim}")
        p = self.params
        h = relu(nn.dense(z, p["dec.dense.weight"], p["dec.dense.bias"]))
        h = h.reshape((z.shape[0], *cfg.decoder_dense_shape))
        specs = _decoder_convs(cfg)
        for i, spec in enumerate(specs, 1):
            h = nn.conv2d_transpose(h, spec, p[f"dec.deconv{i}.weight"], p[f"dec.deconv{i}.bias"])
            h = relu(h) if i < len(specs) else sigmoid(h)
        return h

    def translate(self, x, deterministic: bool = True, rng: Rng | None = None) -> np.ndarray:
        """Dot-matrix batch -> reconstructed solid batch, as a numpy array."""
        z_mean, z_logvar = self.encode(x, "infer")
        z = z_mean if deterministic else sample_latent(z_mean, z_logvar, rng=rng)
        return self.decode(z).data

    def loss(self, x, target, mode: str = "train", rng: Rng | None = None):
        """(total, reconstruction, kl) for a batch of pairs."""
        z_mean, z_logvar = self.encode(x, mode, rng)
        z = sample_latent(z_mean, z_logvar, rng=rng.derive(202) if rng is not None else None,
                          eps=None if rng is not None else np.zeros(z_mean.shape, z_mean.dtype))
        recon = self.decode(z)
        return elbo_loss(target, recon, z_mean, z_logvar)

    def tensors(self) -> dict[str, np.ndarray]:
        out = {k: t.data for k, t in self.params.items()}
        out.update(self.state)
        return out

    @classmethod
    def from_tensors(cls, config: VaeConfig, tensors: dict[str, np.ndarray]) -> "LCBVAE":
        st = state_shapes(config)
        params = {k: v for k, v in tensors.items() if k not in st}
        state = {k: tensors[k] for k in st}
        return cls(config, params, state)


def _sub(params: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


# ------------------------------------------------------------ latent & loss


def sample_latent(z_mean: Tensor, z_logvar: Tensor, rng: Rng | None = None, eps=None) -> Tensor:
    """Reparameterized draw ``z_mean + eps * exp(z_logvar / 2)``; eps is a constant."""
    if z_mean.shape != z_logvar.shape:
        raise ShapeError(f"z_mean {z_mean.shape} and z_logvar {z_logvar.shape} differ")
    if eps is None:
        if rng is None:
            raise ValueError("need rng or eps")
        eps = rng.normal(z_mean.shape, z_mean.dtype)
    eps = np.asarray(eps, dtype=z_mean.dtype)
    if eps.shape != z_mean.shape:
        raise ShapeError(f"eps shape {eps.shape} != {z_mean.shape}")
    return z_mean + mul(Tensor(eps), exp(z_logvar * 0.5))


def kl_divergence(z_mean: Tensor, z_logvar: Tensor) -> Tensor:
    """KL(N(mu, e^v) || N(0, 1)) summed over latent dims, averaged over a leading batch axis."""
    if z_mean.shape != z_logvar.shape:
        raise ShapeError(f"z_mean {z_mean.shape} and z_logvar {z_logvar.shape} differ")
    terms = z_mean * z_mean + exp(z_logvar) - z_logvar - 1.0
    total = reduce("sum", terms) * 0.5
    n = z_mean.shape[0] if z_mean.ndim > 1 else 1
    return total * (1.0 / n)


def binary_cross_entropy(target, recon: Tensor) -> Tensor:
    """Per-image summed BCE, averaged over the batch axis."""
    x = target.data if isinstance(target, Tensor) else np.asarray(target)
    p = recon.data
    if x.shape != p.shape:
        raise ShapeError(f"target {x.shape} and reconstruction {p.shape} differ")
    if not np.all((p >= 0) & (p <= 1)):
        raise DomainError("reconstruction must lie in [0, 1]")
    x = x.astype(p.dtype)
    n = p.shape[0] if p.ndim == 4 else 1
    q = np.clip(p, BCE_CLAMP, 1 - BCE_CLAMP)
    loss = -(x * np.log(q) + (1 - x) * np.log1p(-q)).sum() / n
    inside = (p > BCE_CLAMP) & (p < 1 - BCE_CLAMP)

    def grad(g):
        return (g * inside * (-(x / q) + (1 - x) / (1 - q)) / n).astype(p.dtype),

    return record(np.asarray(loss, p.dtype), (recon,), grad)


def elbo_loss(x, recon: Tensor, z_mean: Tensor, z_logvar: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Negative ELBO split as (total, reconstruction, kl)."""
    rec = binary_cross_entropy(x, recon)
    kl = kl_divergence(z_mean, z_logvar)
    return rec + kl, rec, kl
