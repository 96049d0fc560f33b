"""Compact CRNN recognizer with CTC loss and greedy decoding."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .nn import ConvSpec, DenseSpec, LstmSpec
from .synth import ALPHABET
from .tensor import Rng, ShapeError, Tensor, concat, log_softmax, record, relu, transpose


class Charset:
    """Alphabet indices 0..10 plus a trailing CTC blank."""

    def __init__(self, alphabet: str = ALPHABET):
        if len(set(alphabet)) != len(alphabet):
            raise ValueError("alphabet has duplicate characters")
        self.alphabet = alphabet
        self.index = {ch: i for i, ch in enumerate(alphabet)}

    @property
    def blank(self) -> int:
        return len(self.alphabet)

    @property
    def num_classes(self) -> int:
        return len(self.alphabet) + 1

    def encode(self, text: str) -> list[int]:
        try:
            return [self.index[ch] for ch in text]
        except KeyError as exc:
            raise ValueError(f"character {exc.args[0]!r} is not in the alphabet") from None

    def decode(self, indices) -> str:
        return "".join(self.alphabet[i] for i in indices)


CHARSET = Charset()


@dataclass(frozen=True)
class CrnnConfig:
    input_shape: tuple[int, int, int] = (64, 256, 1)
    conv_maps: tuple[int, ...] = (16, 8, 4)
    pool_after: tuple[int, ...] = (1, 2)
    lstm_hidden: int = 16
    lstm_layers: int = 3
    num_classes: int = 12
    rgb_shim: bool = False

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "conv_maps", tuple(int(v) for v in self.conv_maps))
        object.__setattr__(self, "pool_after", tuple(int(v) for v in self.pool_after))
        if any(b >= a for a, b in zip(self.conv_maps, self.conv_maps[1:])):
            raise ValueError(f"conv_maps must be strictly decreasing, got {self.conv_maps}")
        h, w, _ = self.input_shape
        k = 2 ** len(self.pool_after)
        if h % k or w % k:
            raise ValueError(f"input extents {h}x{w} must be divisible by {k}")

    @classmethod
    def paper(cls, **overrides) -> "CrnnConfig":
        return cls(**overrides)

    @classmethod
    def toy(cls, **overrides) -> "CrnnConfig":
        return cls(**{"input_shape": (32, 128, 1), **overrides})

    @property
    def conv_in_channels(self) -> int:
        return 3 if self.rgb_shim else self.input_shape[2]

    @property
    def steps(self) -> int:
        return self.input_shape[1] // 2 ** len(self.pool_after)

    @property
    def feature_size(self) -> int:
        return self.input_shape[0] // 2 ** len(self.pool_after) * self.conv_maps[-1]

    def conv_specs(self) -> list[ConvSpec]:
        specs, c = [], self.conv_in_channels
        for m in self.conv_maps:
            specs.append(ConvSpec(c, m, 3, 1, "same"))
            c = m
        return specs

    def lstm_specs(self) -> list[LstmSpec]:
        specs, n = [], self.feature_size
        for _ in range(self.lstm_layers):
            specs.append(LstmSpec(n, self.lstm_hidden, True, True))
            n = 2 * self.lstm_hidden
        return specs

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "CrnnConfig":
        return cls(**d)


def param_shapes(cfg: CrnnConfig) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for i, spec in enumerate(cfg.conv_specs(), 1):
        shapes[f"conv{i}.weight"] = spec.weight_shape
        shapes[f"conv{i}.bias"] = (spec.out_channels,)
    for i, spec in enumerate(cfg.lstm_specs(), 1):
        for k, shp in nn.lstm_param_shapes(spec).items():
            shapes[f"lstm{i}.{k}"] = shp
    shapes["out.weight"] = (2 * cfg.lstm_hidden, cfg.num_classes)
    shapes["out.bias"] = (cfg.num_classes,)
    return shapes


def summary(cfg: CrnnConfig) -> list[tuple[str, tuple, int]]:
    rows = [("Input", (None, *cfg.input_shape), 0)]
    h, w, _ = cfg.input_shape
    for i, spec in enumerate(cfg.conv_specs(), 1):
        rows.append((f"Convolution maps:{spec.out_channels}", (None, h, w, spec.out_channels), spec.param_count()))
        if i in cfg.pool_after:
            h, w = h // 2, w // 2
            rows.append(("MaxPooling 2x2 s2", (None, h, w, spec.out_channels), 0))
    for spec in cfg.lstm_specs():
        rows.append((f"Bi-LSTM hidden:{spec.hidden_size}", (None, cfg.steps, spec.output_size), spec.param_count()))
    out = DenseSpec(2 * cfg.lstm_hidden, cfg.num_classes)
    rows.append(("Dense (log-softmax)", (None, cfg.steps, cfg.num_classes), out.param_count()))
    return rows


def reference_crnn_param_count() -> int:
    """Trainable weights of the large reference CRNN configuration, read bottom-up.

    Conv stack on a W x 32 grayscale input: 64, 128, 2 x 512, 2 x 512 (3x3),
    then 512 with a 2x2 kernel; two bidirectional LSTMs with 256 units.
    """
    convs = [ConvSpec(1, 64), ConvSpec(64, 128), ConvSpec(128, 512), ConvSpec(512, 512),
             ConvSpec(512, 512), ConvSpec(512, 512), ConvSpec(512, 512, 2, 1, "valid")]
    lstms = [LstmSpec(512, 256), LstmSpec(512, 256)]
    return sum(s.param_count() for s in convs) + sum(s.param_count() for s in lstms)


def init_params(cfg: CrnnConfig, rng: Rng, dtype=np.float32) -> dict[str, np.ndarray]:
    out = {}
    for i, spec in enumerate(cfg.conv_specs(), 1):
        kh, kw, ci, _ = spec.weight_shape
        out[f"conv{i}.weight"] = nn.he_uniform(rng.derive(i), spec.weight_shape, kh * kw * ci, dtype)
        out[f"conv{i}.bias"] = np.zeros(spec.out_channels, dtype)
    for i, spec in enumerate(cfg.lstm_specs(), 1):
        for k, v in nn.lstm_init(rng.derive(100 + i), spec, dtype).items():
            out[f"lstm{i}.{k}"] = v
    n_in = 2 * cfg.lstm_hidden
    out["out.weight"] = nn.glorot_uniform(rng.derive(999), (n_in, cfg.num_classes), n_in, cfg.num_classes, dtype)
    out["out.bias"] = np.zeros(cfg.num_classes, dtype)
    return out


class Crnn:
    kind = "crnn"

    def __init__(self, config: CrnnConfig, params: dict | None = None, rng: Rng | None = None, dtype=np.float32):
        self.config = config
        if params is None:
            params = init_params(config, rng or Rng(0), dtype)
        self.params = {k: v if isinstance(v, Tensor) else Tensor(v, dtype) for k, v in params.items()}
        for k, shp in param_shapes(config).items():
            if k not in self.params or self.params[k].shape != tuple(shp):
                raise ShapeError(f"parameter {k} missing or misshaped")

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def forward(self, images, mode: str = "infer") -> Tensor:
        """Per-step log-probabilities of shape ``(N, T, classes)``."""
        cfg = self.config
        x = images if isinstance(images, Tensor) else Tensor(images, self.dtype)
        if x.ndim == 3:
            x = x.reshape((1, *x.shape))
        if x.shape[1:] != cfg.input_shape:
            raise ShapeError(f"expected images of shape {cfg.input_shape}, got {x.shape[1:]}")
        if cfg.rgb_shim and x.shape[-1] == 1:
            x = concat([x, x, x], axis=-1)
        p = self.params
        h = x
        for i, spec in enumerate(cfg.conv_specs(), 1):
            h = relu(nn.conv2d(h, spec, p[f"conv{i}.weight"], p[f"conv{i}.bias"]))
            if i in cfg.pool_after:
                h = nn.maxpool2d(h, (2, 2), 2)
        n, fh, fw, fc = h.shape
        seq = transpose(h, (0, 2, 1, 3)).reshape((n, fw, fh * fc))
        for i, spec in enumerate(cfg.lstm_specs(), 1):
            prefix = f"lstm{i}."
            seq = nn.lstm_forward(seq, spec, {k[len(prefix):]: v for k, v in p.items() if k.startswith(prefix)})
        logits = nn.dense(seq, p["out.weight"], p["out.bias"])
        return log_softmax(logits, axis=-1)

    def predict(self, images) -> list[str]:
        return ctc_greedy_decode(self.forward(images, "infer").data)

    def tensors(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    @classmethod
    def from_tensors(cls, config: CrnnConfig, tensors: dict[str, np.ndarray]) -> "Crnn":
        return cls(config, dict(tensors))


# ----------------------------------------------------------------------- ctc


def _extend(label, blank: int) -> list[int]:
    ext = [blank]
    for k in label:
        ext += [int(k), blank]
    return ext


def ctc_min_steps(label) -> int:
    """Fewest frames that can emit ``label`` (repeats need a blank between them)."""
    label = list(label)
    return len(label) + sum(1 for a, b in zip(label, label[1:]) if a == b)


def ctc_loss(log_probs: Tensor, labels, blank: int | None = None) -> Tensor:
    """Negative log-likelihood of ``labels`` under CTC.

    ``log_probs`` is ``(T, C)`` with one label, or ``(N, T, C)`` with a list
    of labels; the batch result is the mean over samples.
    """
    lp = log_probs.data
    single = lp.ndim == 2
    if single:
        lp = lp[None]
        labels = [labels]
    if lp.ndim != 3:
        raise ShapeError(f"log_probs must be (T, C) or (N, T, C), got {log_probs.shape}")
    n, steps, classes = lp.shape
    if len(labels) != n:
        raise ShapeError(f"{len(labels)} labels for a batch of {n}")
    blank = classes - 1 if blank is None else blank
    labels = [[int(k) for k in lab] for lab in labels]
    for lab in labels:
        if any(k == blank for k in lab):
            raise ValueError("label contains the blank index")
        if any(not 0 <= k < classes for k in lab):
            raise ValueError(f"label index out of range for {classes} classes")
        if ctc_min_steps(lab) > steps:
            raise ValueError(f"label of length {len(lab)} needs {ctc_min_steps(lab)} steps, have {steps}")

    exts = [_extend(lab, blank) for lab in labels]
    s_max = max(2, max(len(e) for e in exts))
    ext = np.full((n, s_max), blank, dtype=np.int64)
    valid = np.zeros((n, s_max), dtype=bool)
    skip = np.zeros((n, s_max), dtype=bool)
    for b, e in enumerate(exts):
        ext[b, :len(e)] = e
        valid[b, :len(e)] = True
        for s in range(2, len(e)):
            skip[b, s] = e[s] != blank and e[s] != e[s - 2]
    lens = np.array([len(e) for e in exts])
    neg = -np.inf
    calc = lp.astype(np.float64)
    emit = np.take_along_axis(calc, np.broadcast_to(ext[:, None, :], (n, steps, s_max)), axis=2)
    emit = np.where(valid[:, None, :], emit, neg)

    def lse3(a, b, c):
        m = np.maximum(np.maximum(a, b), c)
        safe = np.where(np.isfinite(m), m, 0.0)
        with np.errstate(divide="ignore"):
            return safe + np.log(np.exp(a - safe) + np.exp(b - safe) + np.exp(c - safe))

    alpha = np.full((n, steps, s_max), neg)
    alpha[:, 0, 0] = emit[:, 0, 0]
    alpha[:, 0, 1] = np.where(lens > 1, emit[:, 0, 1], neg)
    negcol = np.full((n, 1), neg)
    for t in range(1, steps):
        prev = alpha[:, t - 1]
        s1 = np.concatenate([negcol, prev[:, :-1]], axis=1)
        s2 = np.concatenate([negcol, negcol, prev[:, :-2]], axis=1)
        s2 = np.where(skip, s2, neg)
        alpha[:, t] = lse3(prev, s1, s2) + emit[:, t]

    beta = np.full((n, steps, s_max), neg)
    rows = np.arange(n)
    second = np.maximum(lens - 2, 0)
    beta[rows, steps - 1, second] = np.where(lens > 1, emit[rows, steps - 1, second], neg)
    beta[rows, steps - 1, lens - 1] = emit[rows, steps - 1, lens - 1]
    skip_next = np.concatenate([skip[:, 2:], np.zeros((n, 2), bool)], axis=1)
    for t in range(steps - 2, -1, -1):
        nxt = beta[:, t + 1]
        s1 = np.concatenate([nxt[:, 1:], negcol], axis=1)
        s2 = np.concatenate([nxt[:, 2:], negcol, negcol], axis=1)
        s2 = np.where(skip_next, s2, neg)
        beta[:, t] = lse3(nxt, s1, s2) + emit[:, t]

    end = alpha[rows, steps - 1]
    log_p = np.logaddexp(end[rows, lens - 1], np.where(lens > 1, end[rows, second], neg))
    if np.any(~np.isfinite(log_p)):
        raise ValueError("label has zero probability under log_probs")
    losses = -log_p
    out = losses[0] if single else losses.mean()

    def grad(g):
        with np.errstate(invalid="ignore"):
            occ = np.exp(alpha + beta - emit - log_p[:, None, None])
        occ = np.where(valid[:, None, :], np.nan_to_num(occ, nan=0.0), 0.0)
        onehot = np.zeros((n, s_max, classes))
        np.put_along_axis(onehot, ext[:, :, None], valid[:, :, None].astype(float), axis=2)
        d = -np.einsum("nts,nsc->ntc", occ, onehot)
        if not single:
            d /= n
        d = (d * g).astype(log_probs.dtype)
        return (d[0] if single else d,)

    return record(np.asarray(out, dtype=log_probs.dtype), (log_probs,), grad)


def ctc_greedy_decode(log_probs, charset: Charset = CHARSET):
    """Argmax path, collapse repeats, drop blanks. Batched input gives a list."""
    lp = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    if lp.ndim == 3:
        return [ctc_greedy_decode(row, charset) for row in lp]
    best = np.argmax(lp, axis=-1)
    out, prev = [], None
    for k in best:
        k = int(k)
        if k != prev and k != charset.blank:
            out.append(k)
        prev = k
    return charset.decode(out)


def sequence_accuracy(predictions, truths) -> float:
    """Fraction of exact string matches; any wrong character fails the sample."""
    predictions, truths = list(predictions), list(truths)
    if len(predictions) != len(truths):
        raise ValueError(f"{len(predictions)} predictions for {len(truths)} truths")
    if not truths:
        return 0.0
    return sum(p == t for p, t in zip(predictions, truths)) / len(truths)
