"""End-to-end recognition: dot-matrix image -> VAE translation -> CRNN -> text."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .crnn import Crnn, ctc_greedy_decode, sequence_accuracy
from .synth import Dataset, load_dataset, write_png
from .tensor import ShapeError
from .vae import LCBVAE

MISSING = ""  # confusion column for a truth character with no prediction at its position


def checkpoint_id(path) -> str:
    """Short content hash identifying a checkpoint file."""
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]


@dataclass
class PipelineReport:
    dataset: dict
    checkpoints: dict
    accuracy: float
    correct: int
    total: int
    confusion: dict = field(default_factory=dict)
    latency_ms: float = 0.0
    failures: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PipelineReport":
        return cls(**json.loads(text))

    def summary(self) -> str:
        lines = [f"images      {self.total}",
                 f"exact match {self.correct}/{self.total} = {self.accuracy:.4f}",
                 f"latency     {self.latency_ms:.2f} ms/image"]
        for f in self.failures[:5]:
            lines.append(f"  miss #{f['index']}: expected {f['label']} got {f['prediction']}")
        return "\n".join(lines)


def confusion_counts(predictions, truths) -> dict[str, dict[str, int]]:
    """Position-wise ``truth char -> predicted char -> count``.

    Positions past the end of a short prediction count under ``MISSING``, so each
    row sums to the number of occurrences of that truth character.
    """
    out: dict[str, dict[str, int]] = {}
    for pred, truth in zip(predictions, truths):
        for i, ch in enumerate(truth):
            got = pred[i] if i < len(pred) else MISSING
            row = out.setdefault(ch, {})
            row[got] = row.get(got, 0) + 1
    return out


def check_compatible(vae: LCBVAE, crnn: Crnn) -> None:
    vh, vw, _ = vae.config.input_shape
    ch, cw, _ = crnn.config.input_shape
    if (vh, vw) != (ch, cw):
        raise ShapeError(f"VAE works on {vh}x{vw} images but the CRNN expects {ch}x{cw}")


def recognize(vae: LCBVAE, crnn: Crnn, images: np.ndarray, threshold: float | None = 0.5):
    """(texts, reconstructions) for a batch of dot-matrix images.

    The translation uses ``z_mean``. With ``threshold`` set, the reconstruction
    is binarized before recognition so the CRNN sees the clean {0, 1} images it
    was trained on.
    """
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[None]
    if images.shape[1:] != vae.config.input_shape:
        raise ShapeError(f"expected images of shape {vae.config.input_shape}, got {images.shape[1:]}")
    recon = vae.translate(images)
    seen = (recon > threshold).astype(np.float32) if threshold is not None else recon
    return ctc_greedy_decode(crnn.forward(seen, "infer").data), recon


def reconstruction_grid(inputs, recons, targets, rows: int = 8, sep: int = 2) -> np.ndarray:
    """Rows of ``input | reconstruction | target`` as a float image in [0, 1]."""
    rows = min(rows, len(inputs))
    h, w = inputs.shape[1:3]
    grid = np.full((rows * (h + sep) - sep, 3 * w + 2 * sep), 0.5, dtype=np.float32)
    for r in range(rows):
        y = r * (h + sep)
        for c, src in enumerate((inputs, recons, targets)):
            x = c * (w + sep)
            grid[y:y + h, x:x + w] = src[r, ..., 0]
    return grid


def write_grid(path, grid: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.clip(grid * 255 + 0.5, 0, 255).astype(np.uint8), mode="L").save(path, format="PNG")


def evaluate(vae: LCBVAE, crnn: Crnn, data, checkpoints: dict | None = None, grid_path=None,
             threshold: float | None = 0.5) -> PipelineReport:
    """Run every test pair through the pipeline and score exact matches.

    Images are processed one at a time so ``latency_ms`` is the mean per-image
    wall-clock of translation plus recognition.
    """
    check_compatible(vae, crnn)
    ds = data if isinstance(data, Dataset) else load_dataset(data)
    preds, recons, elapsed = [], [], 0.0
    for img in ds.inputs:
        t0 = time.perf_counter()
        text, rec = recognize(vae, crnn, img[None], threshold)
        elapsed += time.perf_counter() - t0
        preds.append(text[0])
        recons.append(rec[0])
    labels = list(ds.labels)
    correct = sum(p == t for p, t in zip(preds, labels))
    if grid_path is not None:
        write_grid(grid_path, reconstruction_grid(ds.inputs, np.stack(recons), ds.targets))
    source = str(data) if not isinstance(data, Dataset) else "<memory>"
    return PipelineReport(
        dataset={"source": source, "count": len(ds), "shape": list(ds.image_shape)},
        checkpoints=checkpoints or {},
        accuracy=sequence_accuracy(preds, labels),
        correct=int(correct),
        total=len(ds),
        confusion=confusion_counts(preds, labels),
        latency_ms=1000.0 * elapsed / max(len(ds), 1),
        failures=[{"index": i, "label": t, "prediction": p}
                  for i, (p, t) in enumerate(zip(preds, labels)) if p != t],
    )


def infer(vae: LCBVAE, crnn: Crnn, image: np.ndarray, dump=None, threshold: float | None = 0.5) -> str:
    """Decode one ``(H, W)`` or ``(H, W, 1)`` image; optionally save the reconstruction."""
    check_compatible(vae, crnn)
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        image = image[..., None]
    if image.shape != vae.config.input_shape:
        raise ShapeError(f"image is {image.shape[0]}x{image.shape[1]}, models expect "
                         f"{vae.config.input_shape[0]}x{vae.config.input_shape[1]}")
    texts, recon = recognize(vae, crnn, image[None], threshold)
    if dump is not None:
        write_png(Path(dump), recon[0] > 0.5)
    return texts[0]
