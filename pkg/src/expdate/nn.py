"""Neural network layers on top of :mod:`expdate.tensor`.

Images are channels-last ``(N, H, W, C)``; a 3-D ``(H, W, C)`` input is
treated as a batch of one. Each layer is a single fused tape node with a
hand-written backward rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Rng, ShapeError, Tensor, concat, record

__all__ = [
    "ConvSpec",
    "LstmSpec",
    "BatchNormState",
    "DenseSpec",
    "conv2d",
    "conv2d_transpose",
    "maxpool2d",
    "batchnorm",
    "dense",
    "dropout",
    "lstm_direction",
    "lstm_forward",
    "glorot_uniform",
]


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    return (int(v[0]), int(v[1]))


def _same_pad(n: int, k: int, s: int) -> tuple[int, int, int]:
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    return out, total // 2, total - total // 2


def _conv_geometry(n: int, k: int, s: int, padding: str) -> tuple[int, int, int]:
    if padding == "same":
        return _same_pad(n, k, s)
    if padding == "valid":
        if n < k:
            raise ShapeError(f"extent {n} smaller than kernel {k}")
        return (n - k) // s + 1, 0, 0
    raise ValueError(f"unknown padding {padding!r}")


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: tuple[int, int] = (1, 1)
    padding: str = "same"

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "stride", _pair(self.stride))

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (*self.kernel, self.in_channels, self.out_channels)

    def param_count(self) -> int:
        kh, kw = self.kernel
        return kh * kw * self.in_channels * self.out_channels + self.out_channels

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        return (_conv_geometry(h, self.kernel[0], self.stride[0], self.padding)[0],
                _conv_geometry(w, self.kernel[1], self.stride[1], self.padding)[0])

    def transpose_output_hw(self, h: int, w: int) -> tuple[int, int]:
        sh, sw = self.stride
        if self.padding == "same":
            return h * sh, w * sw
        kh, kw = self.kernel
        return (h - 1) * sh + kh, (w - 1) * sw + kw


@dataclass(frozen=True)
class DenseSpec:
    in_features: int
    out_features: int

    def param_count(self) -> int:
        return self.in_features * self.out_features + self.out_features


@dataclass(frozen=True)
class LstmSpec:
    input_size: int
    hidden_size: int
    bidirectional: bool = True
    return_sequences: bool = True

    def direction_param_count(self) -> int:
        h = self.hidden_size
        return 4 * ((self.input_size + h) * h + h)

    def param_count(self) -> int:
        return self.direction_param_count() * (2 if self.bidirectional else 1)

    @property
    def output_size(self) -> int:
        return self.hidden_size * (2 if self.bidirectional else 1)


@dataclass
class BatchNormState:
    """Per-channel affine parameters plus running statistics."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    epsilon: float = 1e-5

    @classmethod
    def create(cls, channels: int, dtype=np.float32, momentum: float = 0.9, epsilon: float = 1e-5):
        return cls(Tensor(np.ones(channels, dtype)), Tensor(np.zeros(channels, dtype)),
                   np.zeros(channels, dtype), np.ones(channels, dtype), momentum, epsilon)

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    @staticmethod
    def param_count(channels: int) -> int:
        return 4 * channels

    @staticmethod
    def trainable_count(channels: int) -> int:
        return 2 * channels


def glorot_uniform(rng: Rng, shape, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape, dtype)


def he_uniform(rng: Rng, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    """Variance-preserving for ReLU stacks without normalization."""
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, shape, dtype)


# ------------------------------------------------------------------ conv


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return x.reshape((1, *x.shape)), True
    if x.ndim != 4:
        raise ShapeError(f"expected (N, H, W, C) or (H, W, C), got {x.shape}")
    return x, False


def _im2col(xp: np.ndarray, kh, kw, sh, sw, oh, ow) -> np.ndarray:
    n, _, _, c = xp.shape
    cols = np.empty((n, oh, ow, kh, kw, c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + sh * (oh - 1) + 1:sh, j:j + sw * (ow - 1) + 1:sw, :]
    return cols


def _col2im(cols: np.ndarray, padded_shape, sh, sw) -> np.ndarray:
    n, oh, ow, kh, kw, c = cols.shape
    out = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + sh * (oh - 1) + 1:sh, j:j + sw * (ow - 1) + 1:sw, :] += cols[:, :, :, i, j, :]
    return out


def _check_weights(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Tensor | None, transpose: bool):
    if x.shape[-1] != spec.in_channels:
        raise ShapeError(f"input has {x.shape[-1]} channels, layer expects {spec.in_channels}")
    if weight.shape != spec.weight_shape:
        raise ShapeError(f"weight shape {weight.shape} != {spec.weight_shape}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ShapeError(f"bias shape {bias.shape} != ({spec.out_channels},)")


# Stride-1 kernels work on images flattened to (N, P, C) with every sample
# padded to the same row width. A kernel tap then becomes a fixed offset along
# P, and stacking the batch end to end turns each tap into one 2-D GEMM. Samples
# never mix because outputs past ``length`` in each sample are discarded.


def _shift_gather(src: np.ndarray, mats, offsets, length: int) -> np.ndarray:
    """out[n, p] = sum_k src[n, p + offsets[k]] @ mats[k], for p < length."""
    n, total, c = src.shape
    flat = src.reshape(n * total, c)
    span = (n - 1) * total + length
    out = np.zeros((n * total, mats[0].shape[1]), dtype=src.dtype)
    for m, o in zip(mats, offsets):
        out[:span] += flat[o:o + span] @ m
    return out.reshape(n, total, -1)[:, :length]


def _shift_scatter(src: np.ndarray, mats, offsets, total: int) -> np.ndarray:
    """dst[n, p + offsets[k]] += src[n, p] @ mats[k]; ``src`` is (N, length, C)."""
    n, length, c = src.shape
    padded = np.zeros((n, total, c), dtype=src.dtype)
    padded[:, :length] = src
    flat = padded.reshape(n * total, c)
    span = (n - 1) * total + length
    dst = np.zeros((n * total, mats[0].shape[1]), dtype=src.dtype)
    for m, o in zip(mats, offsets):
        dst[o:o + span] += flat[:span] @ m
    return dst.reshape(n, total, -1)


def _shift_wgrad(a: np.ndarray, b: np.ndarray, offsets, length: int) -> list[np.ndarray]:
    """[sum_{n, p < length} a[n, p + o]^T b[n, p] for o in offsets]; ``b`` is (N, length, C)."""
    n, total, c = a.shape
    padded = np.zeros((n, total, b.shape[-1]), dtype=b.dtype)
    padded[:, :length] = b
    span = (n - 1) * total + length
    bf = padded.reshape(n * total, -1)[:span]
    af = a.reshape(n * total, c)
    return [af[o:o + span].T @ bf for o in offsets]


def _flat_padded(x: np.ndarray, pads, extra: int) -> np.ndarray:
    """Zero-pad (N, H, W, C) spatially and flatten rows, with ``extra`` trailing zero pixels."""
    (pt, pb), (pl, pr) = pads
    n, h, w, c = x.shape
    hp, wp = h + pt + pb, w + pl + pr
    out = np.zeros((n, hp * wp + extra, c), dtype=x.dtype)
    out[:, :hp * wp, :].reshape(n, hp, wp, c)[:, pt:pt + h, pl:pl + w, :] = x
    return out


def conv2d(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Cross-correlation with ``weight`` of shape ``(kh, kw, c_in, c_out)``."""
    _check_weights(x, spec, weight, bias, False)
    xb, squeeze = _batched(x)
    n, h, w, c = xb.shape
    (kh, kw), (sh, sw) = spec.kernel, spec.stride
    oh, pt, pb = _conv_geometry(h, kh, sh, spec.padding)
    ow, pl, pr = _conv_geometry(w, kw, sw, spec.padding)
    co = spec.out_channels
    wd = weight.data
    if (sh, sw) == (1, 1):
        y = _conv_s1(xb, wd, (pt, pb, pl, pr), oh, ow, weight, bias)
    else:
        xp = np.pad(xb.data, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if pt or pb or pl or pr else xb.data
        cols = _im2col(xp, kh, kw, sh, sw, oh, ow).reshape(n * oh * ow, kh * kw * c)
        w2 = wd.reshape(kh * kw * c, co)
        out = cols @ w2
        if bias is not None:
            out += bias.data
        out = out.reshape(n, oh, ow, co)
        padded_shape = xp.shape

        def grad(g):
            g2 = g.reshape(-1, co)
            dw = (cols.T @ g2).reshape(wd.shape)
            db = g2.sum(axis=0) if bias is not None else None
            dcols = (g2 @ w2.T).reshape(n, oh, ow, kh, kw, c)
            dxp = _col2im(dcols, padded_shape, sh, sw)
            return dxp[:, pt:pt + h, pl:pl + w, :], dw, db

        y = record(out, (xb, weight, bias), grad)
    return y.reshape(y.shape[1:]) if squeeze else y


def _conv_s1(xb: Tensor, wd: np.ndarray, pads, oh: int, ow: int, weight: Tensor, bias: Tensor | None) -> Tensor:
    n, h, w, c = xb.shape
    kh, kw, _, co = wd.shape
    pt, pb, pl, pr = pads
    hp, wp = h + pt + pb, w + pl + pr
    offsets = [i * wp + j for i in range(kh) for j in range(kw)]
    length = oh * wp
    xf = _flat_padded(xb.data, ((pt, pb), (pl, pr)), kw - 1)
    mats = [wd[i, j] for i in range(kh) for j in range(kw)]
    full = _shift_gather(xf, mats, offsets, length)
    out = full.reshape(n, oh, wp, co)[:, :, :ow, :]
    out = out + bias.data if bias is not None else np.ascontiguousarray(out)

    def grad(g):
        gf = np.zeros((n, oh, wp, co), dtype=g.dtype)
        gf[:, :, :ow, :] = g
        gf = gf.reshape(n, length, co)
        dxf = _shift_scatter(gf, [m.T for m in mats], offsets, xf.shape[1])
        dx = dxf[:, :hp * wp, :].reshape(n, hp, wp, c)[:, pt:pt + h, pl:pl + w, :]
        dw = np.stack(_shift_wgrad(xf, gf, offsets, length)).reshape(wd.shape)
        db = g.reshape(-1, co).sum(axis=0) if bias is not None else None
        return dx, dw, db

    return record(out, (xb, weight, bias), grad)


def conv2d_transpose(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Transposed convolution: the input-adjoint of :func:`conv2d`.

    ``weight`` has shape ``(kh, kw, c_in, c_out)``. With ``"same"`` padding an
    extent ``n`` maps to ``n * stride``.
    """
    _check_weights(x, spec, weight, bias, True)
    xb, squeeze = _batched(x)
    n, h, w, c = xb.shape
    (kh, kw), (sh, sw) = spec.kernel, spec.stride
    if kh < sh or kw < sw:
        raise ShapeError("kernel must be at least as large as the stride")
    oh, ow = spec.transpose_output_hw(h, w)
    fh, fw = (h - 1) * sh + kh, (w - 1) * sw + kw
    pt, pl = (fh - oh) // 2, (fw - ow) // 2
    co = spec.out_channels
    wd = weight.data
    if (sh, sw) == (1, 1):
        y = _conv_transpose_s1(xb, wd, (fh, fw), (pt, pl), (oh, ow), weight, bias)
        return y.reshape(y.shape[1:]) if squeeze else y
    wt = wd.transpose(2, 0, 1, 3).reshape(c, kh * kw * co)
    x2 = xb.data.reshape(n * h * w, c)
    contrib = (x2 @ wt).reshape(n, h, w, kh, kw, co)
    full = _col2im(contrib, (n, fh, fw, co), sh, sw)
    out = full[:, pt:pt + oh, pl:pl + ow, :]
    out = out + bias.data if bias is not None else np.ascontiguousarray(out)

    def grad(g):
        gfull = np.zeros((n, fh, fw, co), dtype=g.dtype)
        gfull[:, pt:pt + oh, pl:pl + ow, :] = g
        gcols = _im2col(gfull, kh, kw, sh, sw, h, w).reshape(n * h * w, kh * kw * co)
        dx = (gcols @ wt.T).reshape(n, h, w, c)
        dw = (x2.T @ gcols).reshape(c, kh, kw, co).transpose(1, 2, 0, 3)
        db = g.reshape(-1, co).sum(axis=0) if bias is not None else None
        return dx, dw, db

    y = record(out, (xb, weight, bias), grad)
    return y.reshape(y.shape[1:]) if squeeze else y


def _conv_transpose_s1(xb: Tensor, wd: np.ndarray, full_hw, crop, out_hw, weight: Tensor, bias: Tensor | None) -> Tensor:
    n, h, w, c = xb.shape
    kh, kw, _, co = wd.shape
    fh, fw = full_hw
    pt, pl = crop
    oh, ow = out_hw
    offsets = [i * fw + j for i in range(kh) for j in range(kw)]
    length = h * fw
    xf = _flat_padded(xb.data, ((0, 0), (0, fw - w)), 0)
    mats = [wd[i, j] for i in range(kh) for j in range(kw)]
    total = fh * fw + kw - 1
    full = _shift_scatter(xf, mats, offsets, total)
    out = full[:, :fh * fw, :].reshape(n, fh, fw, co)[:, pt:pt + oh, pl:pl + ow, :]
    out = out + bias.data if bias is not None else np.ascontiguousarray(out)

    def grad(g):
        gf = np.zeros((n, total, co), dtype=g.dtype)
        gf[:, :fh * fw, :].reshape(n, fh, fw, co)[:, pt:pt + oh, pl:pl + ow, :] = g
        dxf = _shift_gather(gf, [m.T for m in mats], offsets, length)
        dx = dxf.reshape(n, h, fw, c)[:, :, :w, :]
        dw = np.stack([m.T for m in _shift_wgrad(gf, xf, offsets, length)]).reshape(wd.shape)
        db = g.reshape(-1, co).sum(axis=0) if bias is not None else None
        return dx, dw, db

    return record(out, (xb, weight, bias), grad)


def maxpool2d(x: Tensor, window=(2, 2), stride=None) -> Tensor:
    """Max over windows; ties send the gradient to the first (row-major) maximum."""
    xb, squeeze = _batched(x)
    ph, pw = _pair(window)
    sh, sw = _pair(stride if stride is not None else window)
    n, h, w, c = xb.shape
    oh, pt, pb = _same_pad(h, ph, sh)
    ow, pl, pr = _same_pad(w, pw, sw)
    xp = xb.data
    if pt or pb or pl or pr:
        xp = np.pad(xp, ((0, 0), (pt, pb), (pl, pr), (0, 0)), constant_values=-np.inf)
    cols = _im2col(xp, ph, pw, sh, sw, oh, ow)  # (n, oh, ow, ph, pw, c)
    cols = cols.transpose(0, 1, 2, 5, 3, 4).reshape(n, oh, ow, c, ph * pw)
    idx = np.argmax(cols, axis=-1)[..., None]
    out = np.take_along_axis(cols, idx, axis=-1)[..., 0]
    padded_shape = xp.shape

    def grad(g):
        gcols = np.zeros((n, oh, ow, c, ph * pw), dtype=g.dtype)
        np.put_along_axis(gcols, idx, g[..., None], axis=-1)
        gcols = gcols.reshape(n, oh, ow, c, ph, pw).transpose(0, 1, 2, 4, 5, 3)
        dxp = _col2im(gcols, padded_shape, sh, sw)
        return (dxp[:, pt:pt + h, pl:pl + w, :],)

    y = record(out, (xb,), grad)
    return y.reshape(y.shape[1:]) if squeeze else y


# ----------------------------------------------------------- normalization


def batchnorm(x: Tensor, state: BatchNormState, mode: str = "train") -> Tensor:
    """Normalize over every axis but the last.

    In ``"train"`` mode the batch statistics are used and the running
    statistics in ``state`` are replaced by their momentum update.
    """
    if x.shape[-1] != state.channels:
        raise ShapeError(f"input has {x.shape[-1]} channels, state has {state.channels}")
    c = state.channels
    xd = x.data.reshape(-1, c)
    m = xd.shape[0]
    gamma, beta = state.gamma.data, state.beta.data
    eps = state.epsilon
    if mode == "train":
        if m == 0:
            raise ShapeError("batchnorm in train mode needs a nonempty batch")
        mu = xd.mean(axis=0)
        var = xd.var(axis=0)
        unbiased = var * (m / (m - 1)) if m > 1 else var
        mom = state.momentum
        state.running_mean = (mom * state.running_mean + (1 - mom) * mu).astype(state.running_mean.dtype)
        state.running_var = (mom * state.running_var + (1 - mom) * unbiased).astype(state.running_var.dtype)
    elif mode == "infer":
        mu, var = state.running_mean, state.running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu) * inv
    out = (xhat * gamma + beta).reshape(x.shape)
    shape = x.shape

    def grad(g):
        g2 = g.reshape(-1, c)
        dgamma = (g2 * xhat).sum(axis=0)
        dbeta = g2.sum(axis=0)
        dxhat = g2 * gamma
        if mode == "train":
            dx = inv / m * (m * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv
        return dx.reshape(shape), dgamma, dbeta

    return record(out.astype(x.dtype), (x, state.gamma, state.beta), grad)


# ----------------------------------------------------------------- dense


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight + bias`` over the trailing axis."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"dense shape mismatch: input {x.shape}, weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"bias shape {bias.shape} != ({weight.shape[1]},)")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, weight.shape[0])
    out = x2 @ weight.data
    if bias is not None:
        out += bias.data
    wd = weight.data

    def grad(g):
        g2 = g.reshape(-1, wd.shape[1])
        dx = (g2 @ wd.T).reshape(*lead, wd.shape[0])
        return dx, x2.T @ g2, (g2.sum(axis=0) if bias is not None else None)

    return record(out.reshape(*lead, wd.shape[1]), (x, weight, bias), grad)


def dropout(x: Tensor, rate: float, mode: str, rng: Rng | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "infer" or rate == 0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= rate)
    scale = (keep / (1.0 - rate)).astype(x.dtype)
    return record(x.data * scale, (x,), lambda g: (g * scale,))


# ------------------------------------------------------------------ lstm


def _sig(z):
    return np.exp(-np.logaddexp(0, -z)).astype(z.dtype)


def lstm_direction(x: Tensor, kernel: Tensor, recurrent: Tensor, bias: Tensor, reverse: bool = False) -> Tensor:
    """One LSTM pass over ``x`` of shape ``(N, T, n)``; returns ``(N, T, h)``.

    Gate order in the packed weights is (input, forget, cell, output). With
    ``reverse`` the sequence is consumed from the last step backwards and the
    outputs stay aligned with the input time axis.
    """
    n_b, steps, n_in = x.shape
    hid = recurrent.shape[0]
    if kernel.shape != (n_in, 4 * hid) or recurrent.shape != (hid, 4 * hid) or bias.shape != (4 * hid,):
        raise ShapeError(f"lstm weights {kernel.shape}, {recurrent.shape}, {bias.shape} "
                         f"do not fit input width {n_in} and hidden {hid}")
    if steps == 0:
        raise ShapeError("lstm needs at least one time step")
    dt = x.dtype
    wx, wh = kernel.data, recurrent.data
    x2 = x.data.reshape(-1, n_in)
    xw = (x2 @ wx + bias.data).reshape(n_b, steps, 4 * hid)
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    hs = np.zeros((n_b, steps, hid), dt)
    cs = np.zeros((n_b, steps, hid), dt)
    gates = np.zeros((n_b, steps, 4 * hid), dt)
    h = np.zeros((n_b, hid), dt)
    c = np.zeros((n_b, hid), dt)
    for t in order:
        z = xw[:, t] + h @ wh
        a = np.empty_like(z)
        a[:, :2 * hid] = _sig(z[:, :2 * hid])
        a[:, 2 * hid:3 * hid] = np.tanh(z[:, 2 * hid:3 * hid])
        a[:, 3 * hid:] = _sig(z[:, 3 * hid:])
        i, f, g, o = a[:, :hid], a[:, hid:2 * hid], a[:, 2 * hid:3 * hid], a[:, 3 * hid:]
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[:, t], cs[:, t], hs[:, t] = a, c, h

    def grad(dH):
        dxw = np.zeros_like(xw)
        dwh = np.zeros_like(wh)
        dh_next = np.zeros((n_b, hid), dt)
        dc_next = np.zeros((n_b, hid), dt)
        zeros = np.zeros((n_b, hid), dt)
        for t in reversed(list(order)):
            prev = t + 1 if reverse else t - 1
            has_prev = 0 <= prev < steps
            h_prev = hs[:, prev] if has_prev else zeros
            c_prev = cs[:, prev] if has_prev else zeros
            a = gates[:, t]
            i, f, g, o = a[:, :hid], a[:, hid:2 * hid], a[:, 2 * hid:3 * hid], a[:, 3 * hid:]
            tc = np.tanh(cs[:, t])
            dh = dH[:, t] + dh_next
            dc = dh * o * (1 - tc * tc) + dc_next
            dz = np.concatenate([
                dc * g * i * (1 - i),
                dc * c_prev * f * (1 - f),
                dc * i * (1 - g * g),
                dh * tc * o * (1 - o),
            ], axis=1)
            dxw[:, t] = dz
            dwh += h_prev.T @ dz
            dh_next = dz @ wh.T
            dc_next = dc * f
        d2 = dxw.reshape(-1, 4 * hid)
        dx = (d2 @ wx.T).reshape(x.shape)
        return dx, x2.T @ d2, dwh, d2.sum(axis=0)

    return record(hs, (x, kernel, recurrent, bias), grad)


def lstm_forward(x: Tensor, spec: LstmSpec, params: dict[str, Tensor]) -> Tensor:
    """(Bi)directional LSTM layer.

    ``params`` holds ``fw.kernel``, ``fw.recurrent``, ``fw.bias`` and, when
    bidirectional, the same keys under ``bw.``. Input is ``(N, T, n)`` or
    ``(T, n)``. Without ``return_sequences`` only the final state of each
    direction is emitted.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape((1, *x.shape))
    if x.ndim != 3 or x.shape[-1] != spec.input_size:
        raise ShapeError(f"lstm expects (N, T, {spec.input_size}), got {x.shape}")
    if x.shape[1] == 0:
        raise ShapeError("lstm needs at least one time step")
    fw = lstm_direction(x, params["fw.kernel"], params["fw.recurrent"], params["fw.bias"])
    if spec.bidirectional:
        bw = lstm_direction(x, params["bw.kernel"], params["bw.recurrent"], params["bw.bias"], reverse=True)
        if spec.return_sequences:
            out = concat([fw, bw], axis=-1)
        else:
            out = concat([fw[:, -1, :], bw[:, 0, :]], axis=-1)
    else:
        out = fw if spec.return_sequences else fw[:, -1, :]
    return out.reshape(out.shape[1:]) if squeeze else out


def lstm_param_shapes(spec: LstmSpec) -> dict[str, tuple[int, ...]]:
    h = spec.hidden_size
    shapes = {}
    for d in ("fw", "bw") if spec.bidirectional else ("fw",):
        shapes[f"{d}.kernel"] = (spec.input_size, 4 * h)
        shapes[f"{d}.recurrent"] = (h, 4 * h)
        shapes[f"{d}.bias"] = (4 * h,)
    return shapes


def lstm_init(rng: Rng, spec: LstmSpec, dtype=np.float32) -> dict[str, np.ndarray]:
    """Uniform weights in +-sqrt(1/hidden); forget-gate bias 1, other biases 0."""
    h = spec.hidden_size
    limit = math.sqrt(1.0 / h)
    out = {}
    for name, shape in lstm_param_shapes(spec).items():
        if name.endswith("bias"):
            b = np.zeros(shape, dtype)
            b[h:2 * h] = 1.0
            out[name] = b
        else:
            out[name] = rng.uniform(-limit, limit, shape, dtype)
    return out


__all__ += ["lstm_param_shapes", "lstm_init"]
