import json

import numpy as np
import pytest

from expdate.checkpoint import model_checkpoint, save_checkpoint
from expdate.cli import main
from expdate.crnn import CHARSET, Crnn, CrnnConfig
from expdate.pipeline import (
    MISSING, PipelineReport, check_compatible, checkpoint_id, confusion_counts, evaluate, reconstruction_grid,
)
from expdate.synth import read_png, write_png
from expdate.tensor import Rng, ShapeError, Tensor
from expdate.vae import LCBVAE, VaeConfig


class EchoVae:
    """Stands in for a perfect translator: returns the solid target of each input."""

    def __init__(self, ds):
        self.config = VaeConfig.toy()
        self.lookup = {x.tobytes(): t for x, t in zip(ds.inputs, ds.targets)}

    def translate(self, x):
        return np.stack([self.lookup[img.tobytes()] for img in x])


class OracleCrnn:
    """Emits a one-hot CTC path spelling the label of each solid image."""

    def __init__(self, ds, wrong=()):
        self.config = CrnnConfig.toy()
        self.lookup = {t.tobytes(): lab for t, lab in zip(ds.targets, ds.labels)}
        self.wrong = set(wrong)

    def forward(self, x, mode="infer"):
        out = np.full((len(x), 32, 12), -30.0)
        for n, img in enumerate(x):
            text = self.lookup[img.tobytes()]
            if text in self.wrong:
                text = text[:-1] + ("١" if text[-1] != "١" else "٢")
            path = []
            for k in CHARSET.encode(text):
                path += [k, 11]
            out[n, np.arange(len(path)), path] = 0.0
            out[n, len(path):, 11] = 0.0
        return Tensor(out)


@pytest.fixture(scope="module")
def ckpts(tmp_path_factory):
    root = tmp_path_factory.mktemp("ckpt")
    vae = save_checkpoint(model_checkpoint(LCBVAE(VaeConfig.toy(), rng=Rng(1))), root / "vae.ckpt")
    rec = save_checkpoint(model_checkpoint(Crnn(CrnnConfig.toy(), rng=Rng(2))), root / "crnn.ckpt")
    return vae, rec


def test_sanity_manifest_scores_perfectly(tiny):
    sub = tiny.__class__(tiny.inputs[:10], tiny.targets[:10], tiny.labels[:10], tiny.offsets[:10])
    report = evaluate(EchoVae(sub), OracleCrnn(sub), sub)
    assert report.accuracy == 1.0 and report.correct == report.total == 10
    assert report.failures == [] and report.latency_ms > 0


def test_one_wrong_character_fails_the_sample(tiny):
    report = evaluate(EchoVae(tiny), OracleCrnn(tiny, wrong=[tiny.labels[0]]), tiny)
    assert report.correct == len(tiny) - 1
    assert report.failures[0]["index"] == 0
    assert report.failures[0]["prediction"] != tiny.labels[0]


def test_confusion_rows_sum_to_occurrences():
    truths = ["٢٠٢٥/٠٧/٣٠", "٢٠١٩/٠١/٠١"]
    preds = ["٢٠٢٥/٠٧/٣١", "٢٠١٩/٠"]
    conf = confusion_counts(preds, truths)
    for ch, row in conf.items():
        assert sum(row.values()) == sum(t.count(ch) for t in truths)
    assert conf["٠"]["١"] == 1
    assert conf["١"][MISSING] == 2


def test_report_json_round_trip(tiny, tmp_path):
    report = evaluate(EchoVae(tiny), OracleCrnn(tiny, wrong=tiny.labels[:2]), tiny,
                      checkpoints={"vae": {"sha256": "ab"}}, grid_path=tmp_path / "g.png")
    assert PipelineReport.from_json(report.to_json()) == report
    doc = json.loads(report.to_json())
    assert set(doc) == {"dataset", "checkpoints", "accuracy", "correct", "total", "confusion", "latency_ms",
                        "failures"}
    grid = read_png(tmp_path / "g.png")
    assert grid.shape == (8 * 34 - 2, 3 * 128 + 4)
    with pytest.raises(ValueError):
        PipelineReport({}, {}, 1.5, 0, 0)


def test_reconstruction_grid_layout():
    a = np.zeros((2, 4, 5, 1))
    b = np.ones((2, 4, 5, 1))
    g = reconstruction_grid(a, b, a, rows=2, sep=1)
    assert g.shape == (9, 17)
    assert g[0, 6] == 1.0 and g[0, 0] == 0.0 and g[4, 0] == 0.5


def test_incompatible_models():
    with pytest.raises(ShapeError, match="32x128.*64x256"):
        check_compatible(LCBVAE(VaeConfig.toy(), rng=Rng(0)), Crnn(CrnnConfig.paper(), rng=Rng(0)))


def test_cli_gen_data_and_errors(tmp_path, capsys):
    out = tmp_path / "d"
    assert main(["gen-data", "--kind", "realistic", "--count", "5", "--seed", "3", "--out", str(out),
                 "--height", "32", "--width", "128"]) == 0
    assert "wrote 5 realistic pairs" in capsys.readouterr().out
    assert len((out / "manifest.jsonl").read_text(encoding="utf-8").splitlines()) == 5
    with pytest.raises(SystemExit) as exc:
        main(["gen-data", "--kind", "realistic", "--count", "0", "--seed", "1", "--out", str(tmp_path / "e")])
    assert exc.value.code != 0
    assert main(["gen-data", "--kind", "realistic", "--count", "1", "--seed", "1", "--out", str(tmp_path / "f"),
                 "--height", "16", "--width", "64"]) == 1
    assert "too small" in capsys.readouterr().err


def test_cli_train_requires_data(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["train", "vae", "--scale", "toy", "--out", str(tmp_path / "v.ckpt")])
    assert exc.value.code == 2


def test_cli_dry_run_writes_nothing(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["train", "vae", "--scale", "paper", "--dry-run", "--out", "v.ckpt"]) == 0
    assert main(["train", "crnn", "--scale", "toy", "--dry-run"]) == 0
    text = capsys.readouterr().out
    assert "encoder total 70,371,584" in text and "decoder total 68,765,121" in text
    assert "67,635,200" in text and "(None, 64, 256, 1)" in text
    assert list(tmp_path.iterdir()) == []


def test_cli_train_writes_checkpoint_and_metrics(tiny_dir, tmp_path, capsys):
    out = tmp_path / "c.ckpt"
    assert main(["train", "crnn", "--data", str(tiny_dir), "--scale", "toy", "--epochs", "2", "--batch", "6",
                 "--out", str(out)]) == 0
    assert out.exists()
    lines = out.with_suffix(".csv").read_text().splitlines()
    assert len(lines) == 3 and lines[0].startswith("epoch,seconds")
    assert "trained crnn for 2 epochs" in capsys.readouterr().out


def test_cli_infer_and_dump(ckpts, tiny_dir, tmp_path, capsys):
    vae, rec = ckpts
    img = tiny_dir / "input" / "000000.png"
    dump = tmp_path / "r.png"
    assert main(["infer", "--vae", str(vae), "--crnn", str(rec), "--image", str(img),
                 "--dump-reconstruction", str(dump), "--ascii-digits"]) == 0
    printed = capsys.readouterr().out.strip()
    assert set(printed) <= set("0123456789/")
    assert read_png(dump).shape == read_png(img).shape


def test_cli_infer_wrong_size(ckpts, tmp_path, capsys):
    vae, rec = ckpts
    write_png(tmp_path / "big.png", np.zeros((64, 256), np.uint8))
    assert main(["infer", "--vae", str(vae), "--crnn", str(rec), "--image", str(tmp_path / "big.png")]) == 1
    assert "64x256" in capsys.readouterr().err


def test_cli_eval_report(ckpts, tiny_dir, tmp_path, capsys):
    vae, rec = ckpts
    report = tmp_path / "r.json"
    assert main(["eval", "--vae", str(vae), "--crnn", str(rec), "--data", str(tiny_dir), "--report", str(report),
                 "--grid", str(tmp_path / "g.png")]) == 0
    doc = json.loads(report.read_text(encoding="utf-8"))
    assert doc["total"] == 12 and 0 <= doc["accuracy"] <= 1
    assert doc["checkpoints"]["vae"]["sha256"] == checkpoint_id(vae)
    assert (tmp_path / "g.png").exists()
    assert "exact match" in capsys.readouterr().out
    assert main(["eval", "--vae", str(rec), "--crnn", str(rec), "--data", str(tiny_dir),
                 "--report", str(report)]) == 1
