import csv
import json

import numpy as np
import pytest

from cgm import imagecore as ic
from cgm.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, main, read_config_file
from cgm.datasets import SynthSpec, generate_synthetic, write_pairs

TINY_TRAIN = ["--seed", "3", "--size", "32", "--steps", "3", "--refiner-steps", "2", "--batch", "2",
              "--channels", "4,4", "--depth", "1"]


@pytest.fixture()
def corpus(tmp_path):
    pairs = generate_synthetic(SynthSpec(seed=11, count=4, size=32))
    write_pairs(pairs, tmp_path / "ds")
    pred = tmp_path / "pred"
    rng = np.random.default_rng(0)
    for i, (_, m) in enumerate(pairs):
        ic.save_prob(np.clip(m * 0.8 + rng.uniform(0, 0.2, m.shape), 0, 1), pred / f"synth_{i:04d}.png")
    return tmp_path


def _csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ------------------------------------------------------------ eval

def test_eval_perfect_predictions(corpus, capsys):
    out = corpus / "ev"
    assert main(["eval", "--pred", str(corpus / "ds" / "gt"), "--gt", str(corpus / "ds" / "gt"),
                 "--out", str(out)]) == EXIT_OK
    rows = _csv(out / "per_image.csv")
    assert [r["id"] for r in rows] == [f"synth_{i:04d}" for i in range(4)]
    assert list(rows[0]) == ["id", "max_f", "weighted_f", "e_measure", "s_measure", "mae", "dice", "iou", "ber",
                             "acc"]
    md = (out / "report.md").read_text()
    for label, val in [(r"$F_\beta^{max}$", "1.0000"), (r"$F_\beta^\omega$", "1.0000"), (r"$E_\phi^m$", "1.0000"),
                       (r"$S_m$", "1.0000"), ("MAE", "0.0000"), ("Dice", "1.0000"), ("IoU", "1.0000"),
                       ("BER", "0.0000"), ("Acc", "1.0000")]:
        assert any(line.startswith(f"| {label} ") and line.rstrip().endswith(f"| {val} |")
                   for line in md.splitlines()), label
    assert "command=eval" in md and f"out={out}" in md


def test_eval_rerun_byte_identical(corpus):
    args = ["eval", "--pred", str(corpus / "pred"), "--gt", str(corpus / "ds" / "gt"), "--out", str(corpus / "ev")]
    assert main(args) == EXIT_OK
    first = {p.name: p.read_bytes() for p in (corpus / "ev").iterdir()}
    assert main(args + ["--jobs", "1"]) == EXIT_OK
    assert {p.name: p.read_bytes() for p in (corpus / "ev").iterdir()} == first


def test_eval_jobs_same_numbers(corpus):
    base = ["eval", "--pred", str(corpus / "pred"), "--gt", str(corpus / "ds" / "gt")]
    main(base + ["--out", str(corpus / "a")])
    main(base + ["--out", str(corpus / "b"), "--jobs", "3"])
    assert (corpus / "a" / "per_image.csv").read_bytes() == (corpus / "b" / "per_image.csv").read_bytes()


def test_eval_corrupt_file_is_io_error(corpus, capsys):
    bad = corpus / "pred" / "synth_0002.png"
    bad.write_bytes(b"garbage")
    code = main(["eval", "--pred", str(corpus / "pred"), "--gt", str(corpus / "ds" / "gt"), "--out", str(corpus / "e")])
    assert code == EXIT_IO
    assert str(bad) in capsys.readouterr().err


def test_eval_all_empty_gt_is_numeric_error(tmp_path):
    for d in ("p", "g"):
        ic.save_mask(np.zeros((8, 8), np.uint8), tmp_path / d / "x.png")
    assert main(["eval", "--pred", str(tmp_path / "p"), "--gt", str(tmp_path / "g"),
                 "--out", str(tmp_path / "o")]) == EXIT_NUMERIC


def test_eval_excludes_empty_gt(corpus):
    ic.save_mask(np.zeros((32, 32), np.uint8), corpus / "ds" / "gt" / "synth_0001.png")
    out = corpus / "ev"
    assert main(["eval", "--pred", str(corpus / "pred"), "--gt", str(corpus / "ds" / "gt"), "--out", str(out)]) == 0
    rows = _csv(out / "per_image.csv")
    assert rows[1]["mae"] == "" and rows[0]["mae"] != ""
    assert "3 image(s) evaluated, 1 excluded" in (out / "report.md").read_text()


def test_eval_no_pairs(tmp_path):
    (tmp_path / "p").mkdir()
    (tmp_path / "g").mkdir()
    assert main(["eval", "--pred", str(tmp_path / "p"), "--gt", str(tmp_path / "g"),
                 "--out", str(tmp_path / "o")]) == EXIT_IO


def test_eval_missing_flags():
    assert main(["eval"]) == EXIT_CONFIG


def test_eval_resizes_predictions(corpus):
    pred = corpus / "big"
    for p in ic.list_pngs(corpus / "ds" / "gt"):
        m = ic.load_mask(p)
        ic.save_prob(ic.resize_bilinear(m.astype(float), 64, 64), pred / p.name)
    assert main(["eval", "--pred", str(pred), "--gt", str(corpus / "ds" / "gt"), "--out", str(corpus / "o")]) == 0


# ------------------------------------------------------------ config

def test_config_precedence(tmp_path, corpus):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# thresholds\nt-low = 0.2\nt_high=0.8\n")
    assert read_config_file(cfg) == {"t_low": "0.2", "t_high": "0.8"}
    out = corpus / "tm"
    assert main(["trimap", "--pred", str(corpus / "pred"), "--out", str(out), "--config", str(cfg),
                 "--t-high", "0.9"]) == 0
    echoed = (out / "run_config.txt").read_text().splitlines()
    assert "t_low=0.2" in echoed and "t_high=0.9" in echoed


@pytest.mark.parametrize("text", ["bogus=1\n", "no equals sign\n", "t_low=abc\n"])
def test_bad_config_file(tmp_path, corpus, text):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    assert main(["trimap", "--pred", str(corpus / "pred"), "--out", str(tmp_path / "o"),
                 "--config", str(cfg)]) == EXIT_CONFIG


def test_missing_config_file(tmp_path, corpus):
    assert main(["trimap", "--pred", str(corpus / "pred"), "--out", str(tmp_path / "o"),
                 "--config", str(tmp_path / "none.cfg")]) == EXIT_CONFIG


# ------------------------------------------------------------ trimap

def test_trimap_half_probability(tmp_path):
    ic.save_prob(np.full((5, 6), 0.5), tmp_path / "p" / "h.png")
    assert main(["trimap", "--pred", str(tmp_path / "p"), "--out", str(tmp_path / "t")]) == 0
    assert np.all(ic.load_trimap(tmp_path / "t" / "h.png") == 128)
    rows = _csv(tmp_path / "t" / "band_stats.csv")
    assert rows == [{"id": "h", "background": "0.0000000000", "unknown": "1.0000000000",
                     "foreground": "0.0000000000"}]


def test_trimap_fractions_sum_to_one(corpus):
    assert main(["trimap", "--pred", str(corpus / "pred"), "--out", str(corpus / "t")]) == 0
    for r in _csv(corpus / "t" / "band_stats.csv"):
        assert abs(float(r["background"]) + float(r["unknown"]) + float(r["foreground"]) - 1) < 1e-9


def test_trimap_logit_input(tmp_path):
    # logit PNG: byte 255 -> +16, byte 0 -> -16, 128 -> about +0.06
    ic.save_prob(np.array([[0.0, 128 / 255, 1.0]]), tmp_path / "p" / "l.png")
    assert main(["trimap", "--pred", str(tmp_path / "p"), "--out", str(tmp_path / "t"), "--input", "logit"]) == 0
    assert ic.load_trimap(tmp_path / "t" / "l.png").tolist() == [[0, 128, 255]]


@pytest.mark.parametrize("lo,hi", [("0.6", "0.4"), ("0", "0.9")])
def test_trimap_invalid_thresholds(corpus, lo, hi):
    assert main(["trimap", "--pred", str(corpus / "pred"), "--out", str(corpus / "t"),
                 "--t-low", lo, "--t-high", hi]) == EXIT_CONFIG


# ------------------------------------------------------------ refine

def test_refine_from_predictions(corpus):
    out = corpus / "r"
    assert main(["refine", "--images", str(corpus / "ds" / "im"), "--pred", str(corpus / "pred"),
                 "--out", str(out), "--policy", "refiner-full", "--bits", "16"]) == 0
    side = json.loads((out / "synth_0000.json").read_text())
    assert side["policy"] == "refiner-full"
    for suffix in ("base", "trimap", "refined", "final"):
        assert (out / f"synth_0000_{suffix}.png").is_file()


def test_refine_needs_a_base(corpus):
    assert main(["refine", "--images", str(corpus / "ds" / "im"), "--out", str(corpus / "r")]) == EXIT_CONFIG


def test_refine_with_checkpoint(corpus):
    ck = corpus / "train"
    assert main(["train-toy", "--out", str(ck)] + TINY_TRAIN) == 0
    out = corpus / "r"
    assert main(["refine", "--images", str(corpus / "ds" / "im"), "--checkpoint", str(ck / "checkpoint.bin"),
                 "--refiner", "checkpoint", "--out", str(out)]) == 0
    assert ic.load_gray(out / "synth_0003_final.png").shape == (32, 32)


def test_refine_bad_checkpoint(corpus):
    bad = corpus / "bad.bin"
    bad.write_bytes(b"nope")
    assert main(["refine", "--images", str(corpus / "ds" / "im"), "--checkpoint", str(bad),
                 "--out", str(corpus / "r")]) == EXIT_IO


# ------------------------------------------------------------ train-toy

def test_train_toy_outputs_and_resume(tmp_path):
    out = tmp_path / "t"
    assert main(["train-toy", "--out", str(out)] + TINY_TRAIN) == 0
    rows = _csv(out / "loss_curve.csv")
    assert [(r["stage"], r["step"]) for r in rows] == [("base", "0"), ("base", "1"), ("base", "2"),
                                                       ("refiner", "0"), ("refiner", "1")]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["base_steps"] == 3 and summary["refiner_steps"] == 2
    assert summary["initial_eval_loss"] > 0 and summary["final_eval_loss"] > 0
    # resuming a finished run adds nothing and reproduces the curve
    out2 = tmp_path / "t2"
    assert main(["train-toy", "--out", str(out2), "--resume", str(out / "checkpoint.bin")] + TINY_TRAIN) == 0
    assert (out2 / "loss_curve.csv").read_bytes() == (out / "loss_curve.csv").read_bytes()


@pytest.mark.parametrize("flags", [["--size", "20"], ["--channels", "4,x"], ["--noise", "0.5"], ["--t-low", "0.99"]])
def test_train_toy_bad_spec(tmp_path, flags):
    assert main(["train-toy", "--out", str(tmp_path)] + TINY_TRAIN + flags) == EXIT_CONFIG


# ------------------------------------------------------------ ablate

def test_ablate_on_directories(corpus):
    out = corpus / "ab"
    assert main(["ablate", "--pred", str(corpus / "pred"), "--gt", str(corpus / "ds" / "gt"),
                 "--images", str(corpus / "ds" / "im"), "--out", str(out)]) == 0
    rows = _csv(out / "ablation.csv")
    for policy in ("refiner-full", "band-only"):
        sel = [r for r in rows if r["policy"] == policy]
        assert [(float(r["low"]), float(r["high"])) for r in sel] == [
            (0.45, 0.55), (0.35, 0.65), (0.25, 0.75), (0.15, 0.85), (0.05, 0.95), (0.01, 0.99), (0.005, 0.995)]
        unk = [float(r["unknown"]) for r in sel]
        assert unk == sorted(unk)
        assert [r["default"] for r in sel] == ["", "", "", "", "yes", "", ""]
    md = (out / "ablation.md").read_text()
    assert "| Low | High | MAE | Dice | IoU | BER | Acc | Unknown |" in md
    assert md.count("**default**") == 2


def test_ablate_requires_sources(tmp_path):
    assert main(["ablate", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_ablate_extra_pair_validation(tmp_path):
    assert main(["ablate", "--synthetic", "2", "--out", str(tmp_path), "--extra-pair", "0.9,0.1"]) == EXIT_CONFIG
    assert main(["ablate", "--synthetic", "2", "--out", str(tmp_path), "--degenerate-eps", "0.7"]) == EXIT_CONFIG


def test_ablate_degenerate_pair_matches_binarised_base(tmp_path):
    out = tmp_path / "ab"
    assert main(["ablate", "--synthetic", "12", "--seed", "5", "--out", str(out), "--degenerate-eps", "0.001"]) == 0
    rows = _csv(out / "ablation.csv")
    ref = next(r for r in rows if r["policy"] == "base-binarised")
    for policy in ("refiner-full", "band-only"):
        deg = [r for r in rows if r["policy"] == policy][-1]
        assert (float(deg["low"]), float(deg["high"])) == (0.499, 0.501)
        # off-band pixels equal the binarised base exactly, so MAE and Acc move by at most the band fraction
        frac = float(deg["unknown"])
        assert frac < 0.01
        for m in ("mae", "acc"):
            assert abs(float(deg[m]) - float(ref[m])) <= frac + 1e-12
        for m in ("dice", "iou", "ber"):
            assert abs(float(deg[m]) - float(ref[m])) < 0.01
