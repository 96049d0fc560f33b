"""Show what one training pair looks like, as terminal art.

The dot-matrix input is what a printer stamps on a package; the filled target is
what the translator is asked to produce. Both share the same glyph grid and the
same placement, so the target is always a superset of the input's ink.

    python demos/render_pair.py [date] [--seed N]
"""
import argparse

import numpy as np

from expdate.synth import DateText, GlyphAtlas, make_pair, to_arabic, to_ascii
from expdate.tensor import Rng


def art(image: np.ndarray) -> str:
    # two pixels per character cell keeps the aspect ratio close to square
    rows = []
    for top, bottom in zip(image[0::2], image[1::2]):
        rows.append("".join(" ▄▀█"[2 * int(a) + int(b)] for a, b in zip(top, bottom)))
    return "\n".join(r.rstrip() for r in rows if r.strip())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("date", nargs="?", default="2025/07/30")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--height", type=int, default=32)
    ap.add_argument("--width", type=int, default=128)
    args = ap.parse_args()

    label = DateText(to_arabic(args.date), "realistic")
    atlas = GlyphAtlas.for_canvas(args.height, args.width)
    pair = make_pair(label, atlas, (args.height, args.width), Rng(args.seed))

    print(f"label {label.text} ({to_ascii(label.text)}), pitch {atlas.pitch} px, offset {pair.offset}")
    print("\ndot-matrix input:")
    print(art(pair.input_image))
    print("\nfilled target:")
    print(art(pair.target_image))
    ink_in, ink_out = pair.input_image.sum(), pair.target_image.sum()
    covered = bool(np.all(pair.target_image >= pair.input_image))
    print(f"\nink: {ink_in:.0f} px dotted, {ink_out:.0f} px filled; target covers input: {covered}")


if __name__ == "__main__":
    main()
