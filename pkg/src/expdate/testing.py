"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor, backward


def analytic_gradients(loss_fn: Callable[[dict[str, Tensor]], Tensor], arrays: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    tape = Tape()
    tensors = {k: tape.watch(Tensor(v)) for k, v in arrays.items()}
    grads = backward(loss_fn(tensors), tape)
    return {k: grads[t] for k, t in tensors.items()}


def numeric_gradient(loss_fn, arrays: dict[str, np.ndarray], name: str, indices, eps: float = 1e-6) -> np.ndarray:
    """d loss / d arrays[name] at the flat ``indices``; forward evaluations only."""
    base = {k: np.array(v, copy=True) for k, v in arrays.items()}
    flat = base[name].reshape(-1)
    out = np.empty(len(indices))
    for j, idx in enumerate(indices):
        orig = flat[idx]
        flat[idx] = orig + eps
        up = float(loss_fn({k: Tensor(v) for k, v in base.items()}).data)
        flat[idx] = orig - eps
        down = float(loss_fn({k: Tensor(v) for k, v in base.items()}).data)
        flat[idx] = orig
        out[j] = (up - down) / (2 * eps)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def gradient_check(loss_fn, arrays: dict[str, np.ndarray], rng: np.random.Generator | None = None,
                   max_coords: int = 12, eps: float = 1e-6) -> dict[str, float]:
    """Relative error between tape and finite-difference gradients, per input.

    At most ``max_coords`` randomly chosen coordinates are probed per array.
    """
    rng = rng or np.random.default_rng(0)
    analytic = analytic_gradients(loss_fn, arrays)
    errors = {}
    for name, arr in arrays.items():
        size = arr.size
        idx = np.arange(size) if size <= max_coords else rng.choice(size, max_coords, replace=False)
        num = numeric_gradient(loss_fn, arrays, name, idx, eps)
        errors[name] = relative_error(analytic[name].reshape(-1)[idx], num)
    return errors
