"""``expdate`` command line: gen-data, train, eval, infer."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import crnn as crnn_mod
from . import vae as vae_mod
from .checkpoint import CheckpointError, load_model
from .crnn import CrnnConfig
from .pipeline import checkpoint_id, evaluate, infer
from .synth import SAMPLERS, generate_dataset, read_png, to_ascii
from .tensor import ShapeError
from .training import OPTIMIZERS, TrainConfig, train_crnn, train_vae
from .vae import VaeConfig

log = logging.getLogger("expdate")

# Epoch counts for the desk preset; the paper preset trains both models for 50.
TOY_EPOCHS = {"vae": 15, "crnn": 10}
PAPER_EPOCHS = 50


def _positive(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {value}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--ascii-digits", action="store_true",
                        help="print 0-9 instead of Arabic-Indic digits")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="expdate", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate paired dot-matrix/solid images")
    g.add_argument("--kind", required=True, choices=sorted(SAMPLERS))
    g.add_argument("--count", required=True, type=_positive)
    g.add_argument("--seed", required=True, type=int)
    g.add_argument("--out", required=True, type=Path)
    g.add_argument("--height", type=_positive, default=64)
    g.add_argument("--width", type=_positive, default=256)
    g.add_argument("--workers", type=_positive, default=1)

    t = sub.add_parser("train", parents=[common], help="train the VAE or the CRNN")
    t.add_argument("model", choices=("vae", "crnn"))
    t.add_argument("--data", type=Path)
    t.add_argument("--scale", required=True, choices=("paper", "toy"))
    t.add_argument("--epochs", type=_positive)
    t.add_argument("--batch", type=_positive, default=32)
    t.add_argument("--lr", type=_positive_float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--optimizer", choices=OPTIMIZERS, default="adam")
    t.add_argument("--out", type=Path)
    t.add_argument("--metrics", type=Path, help="metrics CSV (default: next to --out)")
    t.add_argument("--eval-data", type=Path, help="clean held-out set scored after each CRNN epoch")
    t.add_argument("--dry-run", action="store_true", help="print the architecture and exit")

    e = sub.add_parser("eval", parents=[common], help="score the full pipeline on a test set")
    e.add_argument("--vae", required=True, type=Path)
    e.add_argument("--crnn", required=True, type=Path)
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--report", required=True, type=Path)
    e.add_argument("--grid", type=Path)

    i = sub.add_parser("infer", parents=[common], help="read the date from one image")
    i.add_argument("--vae", required=True, type=Path)
    i.add_argument("--crnn", required=True, type=Path)
    i.add_argument("--image", required=True, type=Path)
    i.add_argument("--dump-reconstruction", type=Path)
    return p


def _text(s: str, args) -> str:
    return to_ascii(s) if args.ascii_digits else s


def _model_config(model: str, scale: str):
    if model == "vae":
        return VaeConfig.toy() if scale == "toy" else VaeConfig()
    return CrnnConfig.toy() if scale == "toy" else CrnnConfig.paper()


def _print_summary(model: str, cfg) -> None:
    if model == "vae":
        rows = vae_mod.summary(cfg)
        for group in ("encoder", "decoder"):
            print(f"{group}:")
            for r in rows:
                if r.group == group:
                    print(f"  {r.name:<24} {r.shape_str():<24} {r.params:>12,}")
        totals = vae_mod.parameter_totals(cfg)
        print(f"encoder total {totals['encoder']:,}")
        print(f"decoder total {totals['decoder']:,}")
        print(f"total {totals['total']:,}")
    else:
        rows = crnn_mod.summary(cfg)
        for name, shape, n in rows:
            shp = "(" + ", ".join("None" if v is None else str(v) for v in shape) + ")"
            print(f"  {name:<24} {shp:<24} {n:>12,}")
        print(f"total {sum(r[2] for r in rows):,}")


def cmd_gen_data(args) -> int:
    m = generate_dataset(args.count, args.kind, args.seed, (args.height, args.width), args.out, args.workers)
    print(f"wrote {len(m)} {args.kind} pairs ({args.height}x{args.width}) to {m.path}")
    return 0


def cmd_train(args, parser) -> int:
    cfg = _model_config(args.model, args.scale)
    if args.dry_run:
        _print_summary(args.model, cfg)
        return 0
    if args.data is None:
        parser.error("train: --data is required unless --dry-run is given")
    if args.out is None:
        parser.error("train: --out is required unless --dry-run is given")
    epochs = args.epochs or (TOY_EPOCHS[args.model] if args.scale == "toy" else PAPER_EPOCHS)
    tc = TrainConfig(batch_size=args.batch, epochs=epochs, learning_rate=args.lr,
                     optimizer=args.optimizer, seed=args.seed, scale=args.scale)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    if args.model == "vae":
        _, metrics, _ = train_vae(args.data, cfg, tc, out=args.out)
    else:
        _, metrics, _ = train_crnn(args.data, cfg, tc, out=args.out, eval_data=args.eval_data)
    csv_path = args.metrics or args.out.with_suffix(".csv")
    metrics.write_csv(csv_path)
    last = metrics.rows[-1]
    print(f"trained {args.model} for {epochs} epochs: final loss {last['loss_total']:.4f}")
    print(f"checkpoint {args.out}")
    print(f"metrics {csv_path}")
    return 0


def cmd_eval(args) -> int:
    vae = load_model(args.vae, "vae")
    rec = load_model(args.crnn, "crnn")
    ids = {"vae": {"path": str(args.vae), "sha256": checkpoint_id(args.vae)},
           "crnn": {"path": str(args.crnn), "sha256": checkpoint_id(args.crnn)}}
    report = evaluate(vae, rec, args.data, ids, args.grid)
    args.report.write_text(report.to_json() + "\n", encoding="utf-8")
    print(_text(report.summary(), args))
    print(f"report {args.report}")
    return 0


def cmd_infer(args) -> int:
    vae = load_model(args.vae, "vae")
    rec = load_model(args.crnn, "crnn")
    image = read_png(args.image)
    print(_text(infer(vae, rec, image, args.dump_reconstruction), args))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen-data":
            return cmd_gen_data(args)
        if args.command == "train":
            return cmd_train(args, parser)
        if args.command == "eval":
            return cmd_eval(args)
        return cmd_infer(args)
    except (ValueError, ShapeError, CheckpointError, OSError) as exc:
        print(f"expdate: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
