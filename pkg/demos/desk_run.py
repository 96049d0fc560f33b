"""Desk-scale run of the whole system on a laptop CPU.

Generates the toy datasets, trains the translator and the recognizer with the
toy preset, then scores the pipeline on realistic dates. Everything is written
under --out, including metrics CSVs, checkpoints, the JSON report and a
reconstruction grid (input | translation | target per row).

    python demos/desk_run.py --out runs/desk            # full protocol, a few minutes per model
    python demos/desk_run.py --out runs/quick --vae-epochs 2 --crnn-epochs 2 --train 200
"""
import argparse
import logging
import time
from pathlib import Path

from expdate.crnn import CrnnConfig
from expdate.pipeline import checkpoint_id, evaluate
from expdate.synth import generate_dataset, load_dataset, to_ascii
from expdate.training import TrainConfig, evaluate_crnn, train_crnn, train_vae
from expdate.vae import VaeConfig

CANVAS = (32, 128)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=Path("runs/desk"))
    ap.add_argument("--train", type=int, default=2000)
    ap.add_argument("--test", type=int, default=200)
    ap.add_argument("--vae-epochs", type=int, default=15)
    ap.add_argument("--crnn-epochs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = args.out
    t0 = time.perf_counter()

    # unrealistic dates (any digit anywhere) for training, real calendar dates for testing
    generate_dataset(args.train, "unrealistic", args.seed, CANVAS, out / "train")
    generate_dataset(args.test, "realistic", args.seed + 1, CANVAS, out / "test")
    train, test = load_dataset(out / "train"), load_dataset(out / "test")
    print(f"data: {len(train)} train pairs, {len(test)} test pairs at {CANVAS[0]}x{CANVAS[1]}")

    _, vae_log, vae = train_vae(train, VaeConfig.toy(), TrainConfig(epochs=args.vae_epochs, seed=args.seed),
                                out=out / "vae.ckpt")
    vae_log.write_csv(out / "vae.csv")
    losses = vae_log.column("loss_total")
    print(f"vae: loss {losses[0]:.1f} -> {losses[-1]:.1f} ({1 - losses[-1] / losses[0]:.1%} lower)")

    # the recognizer only ever sees clean filled-in images
    _, crnn_log, crnn = train_crnn(train, CrnnConfig.toy(), TrainConfig(epochs=args.crnn_epochs, seed=args.seed),
                                   out=out / "crnn.ckpt")
    crnn_log.write_csv(out / "crnn.csv")
    print(f"crnn: ctc {crnn_log.column('loss_ctc')[-1]:.3f}, "
          f"clean held-out accuracy {evaluate_crnn(crnn, test.targets, test.labels):.1%}")

    report = evaluate(vae, crnn, test, grid_path=out / "grid.png",
                      checkpoints={k: {"sha256": checkpoint_id(out / f"{k}.ckpt")} for k in ("vae", "crnn")})
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    print(f"pipeline: {report.correct}/{report.total} exact ({report.accuracy:.1%}), "
          f"{report.latency_ms:.1f} ms per image")
    for miss in report.failures[:5]:
        print(f"  expected {to_ascii(miss['label'])}  got {to_ascii(miss['prediction']) or '(nothing)'}")
    print(f"done in {(time.perf_counter() - t0) / 60:.1f} min; artifacts in {out}")


if __name__ == "__main__":
    main()
