import datetime as dt
import hashlib
import json
from collections import Counter

import numpy as np
import pytest

from expdate.crnn import CHARSET
from expdate.synth import (
    ALPHABET, DIGITS, DateText, GlyphAtlas, generate_dataset, load_dataset, load_manifest, make_pair,
    parse_date, read_filled, read_png, render_dotmatrix, render_filled, sample_pair,
    sample_realistic_date, sample_unrealistic_date, to_arabic, to_ascii, write_png,
)
from expdate.tensor import Rng


def _tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_atlas_structure():
    atlas = GlyphAtlas(pitch=2)
    rows = {atlas.grids[c].shape[0] for c in ALPHABET}
    widths = {atlas.width(c) for c in ALPHABET}
    assert rows == {7}
    assert len(widths) >= 2 and widths <= {4, 5, 6}
    grids = [atlas.grids[c].tobytes() + bytes(atlas.grids[c].shape) for c in ALPHABET]
    assert len(set(grids)) == len(ALPHABET)
    assert all(atlas.grids[c].any() for c in ALPHABET)


def test_for_canvas_picks_pitch():
    assert GlyphAtlas.for_canvas(32, 128).pitch == 2
    assert GlyphAtlas.for_canvas(64, 256).pitch == 4


def test_date_text_validation():
    DateText("٢٠٢٥/٠٧/٣٠", "realistic")
    for bad in ("٢٠٢٥/٠٧/٣", "2025/07/30", "٢٠٢٥-٠٧-٣٠", "٢٠٢٥/٠٧٣٠/"):
        with pytest.raises(ValueError):
            DateText(bad, "realistic")
    assert to_ascii("٢٠٢٥/٠٧/٣٠") == "2025/07/30"
    assert to_arabic("2025/07/30") == "٢٠٢٥/٠٧/٣٠"


def test_unrealistic_dates_are_uniform():
    rng = Rng(3)
    counts = [Counter() for _ in range(8)]
    for _ in range(100_000):
        s = sample_unrealistic_date(rng).text.replace("/", "")
        for i, ch in enumerate(s):
            counts[i][ch] += 1
    for c in counts:
        for d in DIGITS:
            assert abs(c[d] / 100_000 - 0.1) <= 0.011


def test_unrealistic_deterministic():
    assert sample_unrealistic_date(Rng(8)) == sample_unrealistic_date(Rng(8))


def test_realistic_dates_valid_and_cover_range():
    rng = Rng(11)
    seen = set()
    years = set()
    for _ in range(20_000):
        d = sample_realistic_date(rng)
        day = parse_date(d.text)
        assert 2019 <= day.year <= 2027
        assert len(d.text) == 10 and d.text[4] == d.text[7] == "/"
        years.add(day.year)
        seen.add(day)
    assert years == set(range(2019, 2028))
    with pytest.raises(ValueError):
        parse_date("٢٠١٩/٠٢/٢٩")
    assert parse_date("٢٠٢٠/٠٢/٢٩") == dt.date(2020, 2, 29)
    # 20,000 draws over 3,287 days: leap day 2020-02-29 is hit with near certainty
    assert dt.date(2020, 2, 29) in seen


def test_rendering_properties():
    atlas = GlyphAtlas(pitch=4)
    text = "٢٠٢٥/٠٧/٣٠"
    dots = render_dotmatrix(text, atlas, (64, 256), (0, 0))
    assert dots.sum() > 0
    assert np.array_equal(dots, render_dotmatrix(text, atlas, (64, 256), (0, 0)))
    shifted = render_dotmatrix(text, atlas, (64, 256), (5, 2))
    assert np.array_equal(shifted[2:, 5:], dots[:-2, :-5])
    filled = render_filled(text, atlas, (64, 256), (5, 2))
    assert filled.sum() > shifted.sum()
    assert np.all(filled >= shifted)
    th, tw = atlas.text_size(text)
    outside = filled.copy()
    outside[2:2 + th, 5:5 + tw] = 0
    assert not outside.any()
    assert set(np.unique(filled)) <= {0, 1}


def test_render_overflow_rejected():
    with pytest.raises(ValueError, match="does not fit"):
        render_filled("٨٨٨٨/٨٨/٨٨", GlyphAtlas(pitch=4), (32, 128), (0, 0))


def test_pairs_decode_back_to_labels():
    for canvas in ((32, 128), (64, 256)):
        atlas = GlyphAtlas.for_canvas(*canvas)
        for i in range(25):
            pair = sample_pair("unrealistic", 4, i, canvas, atlas)
            assert pair.input_image.shape == pair.target_image.shape == canvas
            assert read_filled(pair.target_image, atlas, pair.offset) == pair.label.text


def test_make_pair_jitter_spans_slack():
    atlas = GlyphAtlas.for_canvas(32, 128)
    label = DateText("٢٠٢٥/٠٧/٣٠", "realistic")
    th, tw = atlas.text_size(label.text)
    rng = Rng(0)
    offs = np.array([make_pair(label, atlas, (32, 128), rng).offset for _ in range(2000)])
    assert offs[:, 0].min() == 0 and offs[:, 0].max() == 128 - tw
    assert offs[:, 1].min() == 0 and offs[:, 1].max() == 32 - th


def test_png_round_trip(tmp_path):
    img = (np.random.default_rng(0).random((7, 9)) > 0.5).astype(np.uint8)
    write_png(tmp_path / "a.png", img)
    assert np.array_equal(read_png(tmp_path / "a.png"), img.astype(np.float32))


def test_generate_dataset_is_byte_identical_across_runs_and_workers(tmp_path):
    a = generate_dataset(24, "unrealistic", 5, (32, 128), tmp_path / "a")
    generate_dataset(24, "unrealistic", 5, (32, 128), tmp_path / "b")
    generate_dataset(24, "unrealistic", 5, (32, 128), tmp_path / "c", workers=3)
    digest = _tree_digest(tmp_path / "a")
    assert digest == _tree_digest(tmp_path / "b") == _tree_digest(tmp_path / "c")
    assert len(a) == 24
    assert _tree_digest(tmp_path / "a") != _tree_digest(generate_dataset(24, "unrealistic", 6, (32, 128),
                                                                          tmp_path / "d").root)


def test_manifest_contents(tmp_path):
    generate_dataset(10, "realistic", 1, (32, 128), tmp_path)
    man = load_manifest(tmp_path)
    assert len(man) == 10
    lines = (tmp_path / "manifest.jsonl").read_text(encoding="utf-8").splitlines()
    rec = json.loads(lines[0])
    assert set(rec) == {"input", "target", "label", "kind", "offset"}
    assert rec["kind"] == "realistic" and len(rec["offset"]) == 2
    for r in man.records:
        assert (tmp_path / r["input"]).exists() and (tmp_path / r["target"]).exists()
        parse_date(r["label"])
        CHARSET.encode(r["label"])
    ds = load_dataset(tmp_path)
    assert ds.inputs.shape == (10, 32, 128, 1) and ds.inputs.dtype == np.float32
    assert set(np.unique(ds.targets)) <= {0.0, 1.0}


def test_generate_dataset_errors(tmp_path):
    with pytest.raises(ValueError):
        generate_dataset(0, "realistic", 1, (32, 128), tmp_path)
    with pytest.raises(ValueError, match="too small"):
        generate_dataset(1, "realistic", 1, (16, 64), tmp_path)
    with pytest.raises(ValueError):
        generate_dataset(1, "plausible", 1, (32, 128), tmp_path)
