"""Dot-matrix expiry-date recognition.

A convolutional VAE translates dot-matrix date images into solid ones; a small
CRNN trained with CTC reads the solid image. Everything runs on numpy through a
tape-based autodiff core.
"""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, load_model, save_checkpoint
from .crnn import CHARSET, Crnn, CrnnConfig, ctc_greedy_decode, ctc_loss, sequence_accuracy
from .pipeline import PipelineReport, evaluate, infer
from .synth import ALPHABET, DIGITS, GlyphAtlas, generate_dataset, load_dataset
from .tensor import DomainError, Rng, ShapeError, Tape, Tensor, backward
from .training import MetricsLog, TrainConfig, train_crnn, train_vae
from .vae import LCBVAE, VaeConfig

__version__ = "0.1.0"
