"""Synthetic dot-matrix / filled-in expiry date pairs.

Glyphs are hand-drawn 7-row dot grids for the Arabic-Indic digits and the
slash. The same grids render either as isolated discs (the printer-style
input) or as touching square cells (the solid target).
"""

from __future__ import annotations

import datetime as _dt
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .tensor import Rng

DIGITS = "٠١٢٣٤٥٦٧٨٩"
SLASH = "/"
ALPHABET = DIGITS + SLASH
ASCII_TABLE = str.maketrans(DIGITS, "0123456789")
ARABIC_TABLE = str.maketrans("0123456789", DIGITS)

YEAR_MIN, YEAR_MAX = 2019, 2027

_GLYPHS = {
    "٠": ("....",
          "....",
          ".##.",
          "#..#",
          ".##.",
          "....",
          "...."),
    "١": (".##.",
          "..#.",
          "..#.",
          "..#.",
          "..#.",
          "..#.",
          "..#."),
    "٢": ("#...#",
          "#.##.",
          "##...",
          "#....",
          "#....",
          "#....",
          "#...."),
    "٣": ("#.#.#",
          "#.#.#",
          "####.",
          "#....",
          "#....",
          "#....",
          "#...."),
    "٤": (".###",
          "#...",
          ".##.",
          "#...",
          "#...",
          ".###",
          "...."),
    "٥": ("..#..",
          ".#.#.",
          "#...#",
          "#...#",
          "#...#",
          ".#.#.",
          "..#.."),
    "٦": ("####",
          "...#",
          "...#",
          "...#",
          "...#",
          "...#",
          "...#"),
    "٧": ("#...#",
          "#...#",
          ".#.#.",
          ".#.#.",
          ".#.#.",
          "..#..",
          "..#.."),
    "٨": ("..#..",
          "..#..",
          ".#.#.",
          ".#.#.",
          ".#.#.",
          "#...#",
          "#...#"),
    "٩": (".##.",
          "#..#",
          "#..#",
          ".###",
          "...#",
          "...#",
          "...#"),
    "/": ("...#",
          "...#",
          "..#.",
          "..#.",
          ".#..",
          ".#..",
          "#..."),
}


def _grid(rows) -> np.ndarray:
    return np.array([[ch == "#" for ch in r] for r in rows], dtype=bool)


@dataclass(frozen=True)
class GlyphAtlas:
    """Dot grids plus rendering geometry (all sizes in pixels)."""

    pitch: int = 4
    dot_radius: float | None = None
    gap: int = 0
    grids: dict = field(default_factory=lambda: {c: _grid(r) for c, r in _GLYPHS.items()}, compare=False)

    @classmethod
    def for_canvas(cls, height: int, width: int, gap: int = 0) -> "GlyphAtlas":
        """Largest pitch (>= 2) that fits the widest date in the canvas."""
        base = cls(pitch=1, gap=gap)
        rows = base.rows
        widest_cols = 8 * max(base.width(c) for c in DIGITS) + 2 * base.width(SLASH)
        pitch = 2
        while (rows * (pitch + 1) <= height // 2
               and widest_cols * (pitch + 1) + 9 * gap <= width):
            pitch += 1
        return cls(pitch=pitch, gap=gap)

    @property
    def rows(self) -> int:
        return next(iter(self.grids.values())).shape[0]

    def width(self, ch: str) -> int:
        return self.grids[ch].shape[1]

    @property
    def radius(self) -> float:
        if self.dot_radius is not None:
            return self.dot_radius
        return 0.45 * max(self.pitch - 1, 1)

    def text_size(self, text: str) -> tuple[int, int]:
        """(height, width) in pixels of the solid rendering."""
        cols = sum(self.width(ch) for ch in text)
        return self.rows * self.pitch, cols * self.pitch + self.gap * max(len(text) - 1, 0)

    def dot_mask(self) -> np.ndarray:
        block = max(self.pitch - 1, 1)
        c = (block - 1) / 2
        yy, xx = np.mgrid[0:block, 0:block]
        return (yy - c) ** 2 + (xx - c) ** 2 <= self.radius ** 2 + 1e-9

    def cell_mask(self, style: str) -> np.ndarray:
        mask = np.zeros((self.pitch, self.pitch), dtype=bool)
        if style == "filled":
            mask[:] = True
        elif style == "dotted":
            dm = self.dot_mask()
            mask[:dm.shape[0], :dm.shape[1]] = dm
        else:
            raise ValueError(f"unknown style {style!r}")
        return mask

    def glyph_image(self, ch: str, style: str) -> np.ndarray:
        grid = self.grids[ch]
        return np.kron(grid, self.cell_mask(style)).astype(np.uint8)


@dataclass(frozen=True)
class DateText:
    text: str
    kind: str

    def __post_init__(self):
        validate_date_text(self.text)


@dataclass
class SamplePair:
    input_image: np.ndarray
    target_image: np.ndarray
    label: DateText
    offset: tuple[int, int]


def validate_date_text(text: str) -> None:
    if len(text) != 10:
        raise ValueError(f"date text must have 10 characters, got {len(text)}: {text!r}")
    for i, ch in enumerate(text):
        if i in (4, 7):
            if ch != SLASH:
                raise ValueError(f"position {i} must be '/', got {ch!r}")
        elif ch not in DIGITS:
            raise ValueError(f"position {i} must be an Arabic-Indic digit, got {ch!r}")


def to_ascii(text: str) -> str:
    return text.translate(ASCII_TABLE)


def to_arabic(text: str) -> str:
    return text.translate(ARABIC_TABLE)


def parse_date(text: str) -> _dt.date:
    """Calendar date for a rendered label; raises ValueError if invalid."""
    validate_date_text(text)
    y, m, d = to_ascii(text).split("/")
    return _dt.date(int(y), int(m), int(d))


def sample_unrealistic_date(rng: Rng) -> DateText:
    digits = rng.integers(0, 10, size=8)
    s = "".join(DIGITS[int(d)] for d in digits)
    return DateText(f"{s[:4]}/{s[4:6]}/{s[6:]}", "unrealistic")


_FIRST = _dt.date(YEAR_MIN, 1, 1).toordinal()
_LAST = _dt.date(YEAR_MAX, 12, 31).toordinal()


def sample_realistic_date(rng: Rng) -> DateText:
    day = _dt.date.fromordinal(int(rng.integers(_FIRST, _LAST + 1)))
    return DateText(to_arabic(day.strftime("%Y/%m/%d")), "realistic")


SAMPLERS = {"realistic": sample_realistic_date, "unrealistic": sample_unrealistic_date}


def _render(text: str, atlas: GlyphAtlas, canvas: tuple[int, int], offset: tuple[int, int], style: str) -> np.ndarray:
    h, w = canvas
    dx, dy = offset
    th, tw = atlas.text_size(text)
    if dx < 0 or dy < 0 or dx + tw > w or dy + th > h:
        raise ValueError(f"text of size {th}x{tw} at offset {offset} does not fit canvas {h}x{w}")
    img = np.zeros((h, w), dtype=np.uint8)
    x = dx
    for ch in text:
        if ch not in atlas.grids:
            raise ValueError(f"character {ch!r} has no glyph")
        g = atlas.glyph_image(ch, style)
        img[dy:dy + g.shape[0], x:x + g.shape[1]] |= g
        x += g.shape[1] + atlas.gap
    return img


def render_dotmatrix(text, atlas: GlyphAtlas, canvas=(64, 256), offset=(0, 0)) -> np.ndarray:
    """Binary ``(H, W)`` uint8 image of the text as isolated dots."""
    return _render(getattr(text, "text", text), atlas, canvas, offset, "dotted")


def render_filled(text, atlas: GlyphAtlas, canvas=(64, 256), offset=(0, 0)) -> np.ndarray:
    """Binary ``(H, W)`` uint8 image of the text with solid strokes."""
    return _render(getattr(text, "text", text), atlas, canvas, offset, "filled")


def read_filled(image: np.ndarray, atlas: GlyphAtlas, offset: tuple[int, int], length: int = 10) -> str | None:
    """Recover the text of a solid rendering by exact template matching.

    Returns None if no glyph sequence reproduces the image.
    """
    img = np.asarray(image).reshape(image.shape[0], image.shape[1]).astype(bool)
    dx, dy = offset
    glyphs = {c: atlas.glyph_image(c, "filled").astype(bool) for c in atlas.grids}
    gh = atlas.rows * atlas.pitch

    def search(x: int, prefix: str):
        if len(prefix) == length:
            rendered = _render(prefix, atlas, img.shape, offset, "filled").astype(bool)
            return prefix if np.array_equal(rendered, img) else None
        for ch, g in glyphs.items():
            gw = g.shape[1]
            if x + gw > img.shape[1]:
                continue
            if np.array_equal(img[dy:dy + gh, x:x + gw], g):
                found = search(x + gw + atlas.gap, prefix + ch)
                if found is not None:
                    return found
        return None

    return search(dx, "")


def make_pair(label: DateText, atlas: GlyphAtlas, canvas: tuple[int, int], rng: Rng) -> SamplePair:
    """Render ``label`` at a uniformly jittered placement."""
    th, tw = atlas.text_size(label.text)
    h, w = canvas
    if th > h or tw > w:
        raise ValueError(f"canvas {h}x{w} too small for text of size {th}x{tw}")
    dx = int(rng.integers(0, w - tw + 1))
    dy = int(rng.integers(0, h - th + 1))
    return SamplePair(render_dotmatrix(label, atlas, canvas, (dx, dy)),
                      render_filled(label, atlas, canvas, (dx, dy)), label, (dx, dy))


def sample_pair(kind: str, seed: int, index: int, canvas: tuple[int, int], atlas: GlyphAtlas | None = None) -> SamplePair:
    """The ``index``-th pair of a dataset; depends only on its arguments."""
    atlas = atlas or GlyphAtlas.for_canvas(*canvas)
    rng = Rng(seed).derive(index)
    label = SAMPLERS[kind](rng)
    return make_pair(label, atlas, canvas, rng)


# --------------------------------------------------------------- dataset io

MANIFEST = "manifest.jsonl"


@dataclass
class DatasetManifest:
    root: Path
    records: list[dict]

    @property
    def path(self) -> Path:
        return self.root / MANIFEST

    def __len__(self) -> int:
        return len(self.records)


def write_png(path, image: np.ndarray) -> None:
    """Binary image as 8-bit grayscale PNG with values {0, 255}."""
    arr = (np.asarray(image).reshape(image.shape[0], image.shape[1]) > 0).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path, format="PNG", optimize=False, compress_level=6)


def read_png(path) -> np.ndarray:
    """(H, W) float32 image in {0.0, 1.0}; gray values are thresholded at 128."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr >= 128).astype(np.float32)


def _write_sample(args) -> dict:
    kind, seed, index, canvas, gap, out_dir = args
    atlas = GlyphAtlas.for_canvas(*canvas, gap=gap)
    pair = sample_pair(kind, seed, index, canvas, atlas)
    inp, tgt = f"input/{index:06d}.png", f"target/{index:06d}.png"
    write_png(os.path.join(out_dir, inp), pair.input_image)
    write_png(os.path.join(out_dir, tgt), pair.target_image)
    return {"input": inp, "target": tgt, "label": pair.label.text, "kind": kind, "offset": list(pair.offset)}


def generate_dataset(count: int, kind: str, seed: int, canvas=(64, 256), out_dir=".",
                     workers: int = 1, gap: int = 0) -> DatasetManifest:
    """Write ``count`` pairs and ``manifest.jsonl`` to ``out_dir``.

    Output is byte-identical for any ``workers`` value.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    if kind not in SAMPLERS:
        raise ValueError(f"kind must be one of {sorted(SAMPLERS)}, got {kind!r}")
    canvas = (int(canvas[0]), int(canvas[1]))
    atlas = GlyphAtlas.for_canvas(*canvas, gap=gap)
    widest = "/".join([DIGITS[0] * 4, DIGITS[0] * 2, DIGITS[0] * 2])
    widest_digit = max(DIGITS, key=atlas.width)
    widest = widest.replace(DIGITS[0], widest_digit)
    th, tw = atlas.text_size(widest)
    if th > canvas[0] or tw > canvas[1]:
        raise ValueError(f"canvas {canvas} too small for the widest date ({th}x{tw})")
    root = Path(out_dir)
    (root / "input").mkdir(parents=True, exist_ok=True)
    (root / "target").mkdir(parents=True, exist_ok=True)
    if not os.access(root, os.W_OK):
        raise PermissionError(f"{root} is not writable")
    jobs = [(kind, seed, i, canvas, gap, str(root)) for i in range(count)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_write_sample, jobs, chunksize=max(1, count // (4 * workers))))
    else:
        records = [_write_sample(j) for j in jobs]
    with open(root / MANIFEST, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
    return DatasetManifest(root, records)


def load_manifest(data_dir) -> DatasetManifest:
    root = Path(data_dir)
    path = root / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no {MANIFEST} in {root}")
    with open(path, encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    return DatasetManifest(root, records)


@dataclass
class Dataset:
    """In-memory arrays for a manifest: images are ``(N, H, W, 1)`` float32."""

    inputs: np.ndarray
    targets: np.ndarray
    labels: list[str]
    offsets: list[tuple[int, int]]

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.inputs.shape[1:]


def load_dataset(data_dir) -> Dataset:
    man = load_manifest(data_dir)
    if not man.records:
        raise ValueError(f"dataset {data_dir} is empty")
    inputs = np.stack([read_png(man.root / r["input"]) for r in man.records])[..., None]
    targets = np.stack([read_png(man.root / r["target"]) for r in man.records])[..., None]
    return Dataset(inputs, targets, [r["label"] for r in man.records],
                   [tuple(r["offset"]) for r in man.records])
