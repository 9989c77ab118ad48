"""``cgm`` command line: eval, trimap, refine, train-toy, ablate."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import imagecore as ic
from .autodiff import CheckpointError
from .datasets import DatasetError, SynthSpec, band_noise, generate_synthetic, scan_pairs
from .imagecore import ImageIOError
from .metrics import (METRIC_NAMES, DegenerateGroundTruth, MetricReport, average_reports, evaluate_dataset,
                      evaluate_pair)
from .pipeline import CompositePolicy, refine_from_prob, run_pipeline
from .training import TrainConfig, TrainingDiverged, TrainState, train_toy
from .trimap import ABLATION_THRESHOLDS, DEFAULT_THRESHOLDS, ThresholdPair, region_fractions, trimap_from_prob

log = logging.getLogger("cgm")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

MEASURE_LABELS = {
    "max_f": r"$F_\beta^{max}$",
    "weighted_f": r"$F_\beta^\omega$",
    "e_measure": r"$E_\phi^m$",
    "s_measure": r"$S_m$",
    "mae": "MAE",
    "dice": "Dice",
    "iou": "IoU",
    "ber": "BER",
    "acc": "Acc",
}
HIGHER_IS_BETTER = {"mae": False, "ber": False}


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------ config

def read_config_file(path) -> dict:
    """Flat ``key=value`` lines; '#' starts a comment; keys may use '-' or '_'."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config file ({exc.strerror})") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(args, defaults: dict) -> dict:
    """defaults < config file < explicit flags; values converted to the defaults' types."""
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = set(file_values) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    cfg = {}
    for key, default in defaults.items():
        value = getattr(args, key, None)
        if value is None:
            value = file_values.get(key, default)
        if value is not None and default is not None and isinstance(value, str) and not isinstance(default, str):
            try:
                value = type(default)(value) if not isinstance(default, bool) else value.lower() in ("1", "true", "yes")
            except ValueError:
                raise ConfigError(f"invalid value for {key}: {value!r}") from None
        cfg[key] = value
    cfg["command"] = args.command
    return cfg


def config_lines(cfg: dict) -> list[str]:
    return [f"{k}={cfg[k]}" for k in sorted(cfg)]


def write_config(cfg: dict, out: Path) -> None:
    (out / "run_config.txt").write_text("\n".join(config_lines(cfg)) + "\n")


def markdown_header(title: str, cfg: dict) -> str:
    body = "\n".join(config_lines(cfg))
    return f"# {title}\n\nResolved configuration:\n\n```\n{body}\n```\n\n"


def thresholds_from(cfg: dict) -> ThresholdPair:
    try:
        return ThresholdPair(float(cfg["t_low"]), float(cfg["t_high"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def policy_from(cfg: dict) -> CompositePolicy:
    try:
        return CompositePolicy(cfg["policy"])
    except ValueError:
        raise ConfigError(f"unknown policy {cfg['policy']!r}") from None


def _fmt(v) -> str:
    return f"{v:.10f}" if isinstance(v, float) else str(v)


def write_csv(path: Path, header: list, rows: list) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_bytes(buf.getvalue().encode("utf-8"))


def _out_dir(cfg) -> Path:
    if not cfg.get("out"):
        raise ConfigError("--out is required")
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ImageIOError(out, exc.strerror or str(exc)) from None
    return out


def _map(fn, items, jobs: int):
    if jobs and jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _load_all(fn, paths, jobs):
    """Apply a loader to every path; collect per-file I/O errors instead of stopping at the first."""
    def safe(p):
        try:
            return fn(p), None
        except ImageIOError as exc:
            return None, exc
    results = _map(safe, paths, jobs)
    errors = [e for _, e in results if e is not None]
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        raise ImageIOError(errors[0].path, f"{len(errors)} unreadable file(s)")
    return [r for r, _ in results]


def _match_dirs(pred_dir, gt_dir):
    preds = {ic.stem_of(p): p for p in ic.list_pngs(pred_dir)}
    gts = {ic.stem_of(p): p for p in ic.list_pngs(gt_dir)}
    ids = sorted(set(preds) & set(gts))
    for s in sorted(set(preds) ^ set(gts)):
        log.warning("unmatched id %s ignored", s)
    if not ids:
        raise DatasetError(f"no matching prediction/ground-truth stems in {pred_dir} and {gt_dir}")
    return ids, preds, gts


def _load_state(path):
    if not path:
        return None
    try:
        return TrainState.load(path)
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: not a train-toy checkpoint ({exc})") from None


def _choose_refiner(cfg, state):
    if cfg["refiner"] == "heuristic":
        return "heuristic"
    if cfg["refiner"] == "checkpoint":
        if state is None:
            raise ConfigError("--refiner checkpoint needs --checkpoint")
        return state.refiner
    raise ConfigError("--refiner must be 'heuristic' or 'checkpoint'")


def _fit(q, shape):
    return q if q.shape == shape else ic.resize_bilinear(q, *shape)


# ------------------------------------------------------------ eval

EVAL_DEFAULTS = {"pred": None, "gt": None, "out": None, "threshold": 0.5, "jobs": 1, "name": "prediction"}


def metric_markdown(columns: dict, cfg: dict, title: str) -> str:
    """Rows are measures, one column per named report."""
    names = list(columns)
    lines = [markdown_header(title, cfg).rstrip("\n"), ""]
    lines.append("| Measure | " + " | ".join(names) + " |")
    lines.append("|---|" + "---|" * len(names))
    for m in METRIC_NAMES:
        arrow = "↑" if HIGHER_IS_BETTER.get(m, True) else "↓"
        vals = " | ".join(f"{getattr(columns[n], m):.4f}" for n in names)
        lines.append(f"| {MEASURE_LABELS[m]} {arrow} | {vals} |")
    lines.append("")
    for n in names:
        r = columns[n]
        lines.append(f"{n}: {r.n_images} image(s) evaluated, {r.n_excluded} excluded (empty ground truth)")
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    cfg = resolve(args, EVAL_DEFAULTS)
    if not cfg["pred"] or not cfg["gt"]:
        raise ConfigError("--pred and --gt are required")
    out = _out_dir(cfg)
    ids, preds, gts = _match_dirs(cfg["pred"], cfg["gt"])
    jobs = int(cfg["jobs"])
    gt_maps = _load_all(ic.load_mask, [gts[i] for i in ids], jobs)
    pred_maps = _load_all(ic.load_gray, [preds[i] for i in ids], jobs)
    t = float(cfg["threshold"])

    def one(k):
        q, y = _fit(pred_maps[k], gt_maps[k].shape), gt_maps[k]
        try:
            return evaluate_pair(q, y, t)
        except DegenerateGroundTruth:
            log.warning("%s: empty ground truth, excluded", ids[k])
            return None

    reports = _map(one, range(len(ids)), jobs)
    rows = []
    for i, r in zip(ids, reports):
        rows.append([i] + ([getattr(r, m) for m in METRIC_NAMES] if r else [""] * len(METRIC_NAMES)))
    write_csv(out / "per_image.csv", ["id", *METRIC_NAMES], rows)
    kept = [r for r in reports if r is not None]
    if not kept:
        raise DegenerateGroundTruth("every ground truth is empty; nothing to aggregate")
    agg = average_reports(kept, n_excluded=len(reports) - len(kept))
    (out / "report.md").write_text(metric_markdown({cfg["name"]: agg}, cfg, "Evaluation"))
    write_config(cfg, out)
    print(f"evaluated {agg.n_images} image(s); MAE {agg.mae:.4f}, Dice {agg.dice:.4f} -> {out}")
    return EXIT_OK


# ------------------------------------------------------------ trimap

TRIMAP_DEFAULTS = {"pred": None, "out": None, "t_low": DEFAULT_THRESHOLDS.t_low,
                   "t_high": DEFAULT_THRESHOLDS.t_high, "input": "prob", "logit_range": 16.0, "jobs": 1}


def decode_logit_png(gray: np.ndarray, logit_range: float) -> np.ndarray:
    """Logit PNGs map [-range, +range] linearly onto the full intensity scale."""
    return (np.asarray(gray, np.float64) * 2.0 - 1.0) * logit_range


def cmd_trimap(args) -> int:
    cfg = resolve(args, TRIMAP_DEFAULTS)
    th = thresholds_from(cfg)
    if cfg["input"] not in ("prob", "logit"):
        raise ConfigError("--input must be 'prob' or 'logit'")
    if not cfg["pred"]:
        raise ConfigError("--pred is required")
    out = _out_dir(cfg)
    paths = ic.list_pngs(cfg["pred"])
    if not paths:
        raise DatasetError(f"{cfg['pred']}: no PNG predictions")
    maps = _load_all(ic.load_gray, paths, int(cfg["jobs"]))
    rows = []
    for p, g in zip(paths, maps):
        prob = ic.sigmoid_map(decode_logit_png(g, float(cfg["logit_range"]))) if cfg["input"] == "logit" else g
        t = trimap_from_prob(prob, th)
        ic.save_trimap(t, out / f"{ic.stem_of(p)}.png")
        fr = region_fractions(t)
        rows.append([ic.stem_of(p), fr.background, fr.unknown, fr.foreground])
    write_csv(out / "band_stats.csv", ["id", "background", "unknown", "foreground"], rows)
    write_config(cfg, out)
    print(f"wrote {len(rows)} trimap(s) to {out}")
    return EXIT_OK


# ------------------------------------------------------------ refine

REFINE_DEFAULTS = {"images": None, "pred": None, "checkpoint": None, "out": None, "refiner": "heuristic",
                   "t_low": DEFAULT_THRESHOLDS.t_low, "t_high": DEFAULT_THRESHOLDS.t_high,
                   "policy": CompositePolicy.BAND_ONLY.value, "size": 0, "bits": 8}


def cmd_refine(args) -> int:
    cfg = resolve(args, REFINE_DEFAULTS)
    th, policy = thresholds_from(cfg), policy_from(cfg)
    if not cfg["images"]:
        raise ConfigError("--images is required")
    if not cfg["pred"] and not cfg["checkpoint"]:
        raise ConfigError("need a base source: --pred <dir> or --checkpoint <file>")
    out = _out_dir(cfg)
    state = _load_state(cfg["checkpoint"])
    refiner = _choose_refiner(cfg, state)
    img_paths = ic.list_pngs(cfg["images"])
    if not img_paths:
        raise DatasetError(f"{cfg['images']}: no PNG images")
    size = int(cfg["size"]) or (state.cfg.size if state else 0)
    n = 0
    for p in img_paths:
        img = ic.load_image(p)
        if size:
            img = ic.resize_bilinear(img, size, size)
        if cfg["pred"]:
            # precomputed base maps take precedence; the checkpoint then only supplies the refiner
            pred_path = Path(cfg["pred"]) / f"{ic.stem_of(p)}.png"
            q = _fit(ic.load_gray(pred_path), img.shape[:2])
            res = refine_from_prob(img, q, refiner, th, policy)
        else:
            res = run_pipeline(img, state.base, refiner, th, policy)
        res.save(out, ic.stem_of(p), bits=int(cfg["bits"]))
        n += 1
    write_config(cfg, out)
    print(f"refined {n} image(s) -> {out}")
    return EXIT_OK


# ------------------------------------------------------------ train-toy

TRAIN_DEFAULTS = {"out": None, "seed": 7, "size": 64, "steps": 200, "refiner_steps": 100, "batch": 4,
                  "lr": 5e-3, "depth": 2, "channels": "8,16,32", "family": "mixed", "noise": 0.1,
                  "checkpoint_every": 50, "resume": None, "t_low": DEFAULT_THRESHOLDS.t_low,
                  "t_high": DEFAULT_THRESHOLDS.t_high}


def train_config_from(cfg: dict) -> TrainConfig:
    try:
        channels = tuple(int(c) for c in str(cfg["channels"]).split(","))
        tc = TrainConfig(seed=int(cfg["seed"]), size=int(cfg["size"]), steps=int(cfg["steps"]),
                         refiner_steps=int(cfg["refiner_steps"]), batch=int(cfg["batch"]), lr=float(cfg["lr"]),
                         channels=channels, depth=int(cfg["depth"]), family=cfg["family"],
                         noise=float(cfg["noise"]), checkpoint_every=int(cfg["checkpoint_every"]),
                         t_low=float(cfg["t_low"]), t_high=float(cfg["t_high"]))
        tc.net_config()
        SynthSpec(size=tc.size, family=tc.family, bg_noise=tc.noise, fg_noise=tc.noise)
        ThresholdPair(tc.t_low, tc.t_high)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return tc


def write_curve(path: Path, curve: list) -> None:
    write_csv(path, ["stage", "step", "loss"], [[s, int(k), float(v)] for s, k, v in curve])


def cmd_train_toy(args) -> int:
    cfg = resolve(args, TRAIN_DEFAULTS)
    out = _out_dir(cfg)
    tc = train_config_from(cfg)
    resume = cfg["resume"]
    if resume:
        saved = _load_state(resume)
        if saved.cfg != tc and any(getattr(args, k, None) is not None for k in ("seed", "size", "steps")):
            log.warning("resuming: training configuration is taken from the checkpoint")
    try:
        state = train_toy(tc, out_dir=out, resume=resume)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}; last good checkpoint: {exc.checkpoint}", file=sys.stderr)
        return EXIT_NUMERIC
    write_curve(out / "loss_curve.csv", state.curve)
    summary = {
        "config": config_lines(cfg),
        "initial_eval_loss": state.initial_eval,
        "final_eval_loss": state.final_eval,
        "reduction": None if not state.final_eval else 1.0 - state.final_eval / state.initial_eval,
        "base_steps": state.base_opt.step,
        "refiner_steps": state.refiner_opt.step,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_config(cfg, out)
    print(f"initial combined loss {state.initial_eval:.4f}, final {state.final_eval:.4f} -> {out}")
    return EXIT_OK


# ------------------------------------------------------------ ablate

ABLATE_DEFAULTS = {"pred": None, "gt": None, "images": None, "out": None, "synthetic": 0, "seed": 0,
                   "size": 64, "checkpoint": None, "refiner": "heuristic", "band_noise": 0.45,
                   "extra_pair": None, "degenerate_eps": None, "threshold": 0.5, "jobs": 1}
ABLATION_COLUMNS = ["policy", "low", "high", "mae", "dice", "iou", "ber", "acc", "unknown", "default"]


def _synthetic_sources(cfg, state):
    """Synthetic validation set with base predictions corrupted near GT boundaries."""
    from .imagecore import sigmoid_map
    from .nets import image_batch
    from .training import stream_seed
    from scipy.ndimage import gaussian_filter

    pairs = generate_synthetic(SynthSpec(seed=int(cfg["seed"]), count=int(cfg["synthetic"]),
                                         size=int(cfg["size"])))
    rng = np.random.default_rng(stream_seed(int(cfg["seed"]), 3))
    items = []
    for k, (img, mask) in enumerate(pairs):
        if state is not None:
            q = sigmoid_map(state.base.predict(image_batch([img]))[0])
        else:
            q = np.clip(gaussian_filter(mask.astype(np.float64), 1.0), 0, 1)
        q = band_noise(q, mask, rng, amplitude=float(cfg["band_noise"]))
        items.append((f"synth_{k:04d}", img, ic.as_prob(q), mask))
    return items


def _disk_sources(cfg):
    if not (cfg["pred"] and cfg["gt"] and cfg["images"]):
        raise ConfigError("ablation needs --pred, --gt and --images, or --synthetic N")
    ids, preds, gts = _match_dirs(cfg["pred"], cfg["gt"])
    images = {ic.stem_of(p): p for p in ic.list_pngs(cfg["images"])}
    missing = [i for i in ids if i not in images]
    if missing:
        raise DatasetError(f"no image for id(s): {', '.join(missing[:5])}")
    items = []
    for i in ids:
        y = ic.load_mask(gts[i])
        img = ic.load_image(images[i])
        if img.shape[:2] != y.shape:
            img = ic.resize_bilinear(img, *y.shape)
        items.append((i, img, _fit(ic.load_gray(preds[i]), y.shape), y))
    return items


def ablation_pairs(cfg) -> list[ThresholdPair]:
    pairs = list(ABLATION_THRESHOLDS)
    if cfg.get("extra_pair"):
        try:
            lo, hi = (float(v) for v in str(cfg["extra_pair"]).split(","))
            pairs.append(ThresholdPair(lo, hi))
        except ValueError as exc:
            raise ConfigError(f"--extra-pair expects 'low,high': {exc}") from None
    if cfg.get("degenerate_eps") is not None:
        eps = float(cfg["degenerate_eps"])
        try:
            pairs.append(ThresholdPair(0.5 - eps, 0.5 + eps))
        except ValueError as exc:
            raise ConfigError(f"--degenerate-eps: {exc}") from None
    return pairs


def run_ablation(items, th_pairs, refiner, t: float = 0.5, jobs: int = 1) -> list[dict]:
    """One row per (policy, threshold pair) plus base reference rows."""
    rows = []
    base_rep = evaluate_dataset([(q, y) for _, _, q, y in items], t, jobs)
    bin_rep = evaluate_dataset([(ic.as_prob((q >= t).astype(np.float64)), y) for _, _, q, y in items], t, jobs)
    for policy in CompositePolicy:
        for th in th_pairs:
            def one(it, th=th, policy=policy):
                _, img, q, y = it
                res = refine_from_prob(img, q, refiner, th, policy)
                return res.final_prob, region_fractions(res.trimap).unknown
            results = _map(one, items, jobs)
            rep = evaluate_dataset([(f, it[3]) for (f, _), it in zip(results, items)], t, jobs)
            unknown = float(np.mean([u for _, u in results]))
            rows.append({"policy": policy.value, "low": th.t_low, "high": th.t_high, "report": rep,
                         "unknown": unknown, "default": th == DEFAULT_THRESHOLDS})
    return rows, base_rep, bin_rep


def ablation_markdown(rows, base_rep: MetricReport, bin_rep: MetricReport, cfg: dict) -> str:
    out = [markdown_header("Confidence-band ablation", cfg).rstrip("\n"), ""]
    for policy in CompositePolicy:
        out.append(f"## Policy: {policy.value}\n")
        out.append("| Low | High | MAE | Dice | IoU | BER | Acc | Unknown | |")
        out.append("|---|---|---|---|---|---|---|---|---|")
        for r in rows:
            if r["policy"] != policy.value:
                continue
            rep = r["report"]
            mark = "**default**" if r["default"] else ""
            out.append(f"| {r['low']:g} | {r['high']:g} | {rep.mae:.4f} | {rep.dice:.4f} | {rep.iou:.4f} | "
                       f"{rep.ber:.4f} | {rep.acc:.4f} | {r['unknown']:.4f} | {mark} |")
        out.append("")
    out.append("## Reference (no refinement)\n")
    out.append("| Source | MAE | Dice | IoU | BER | Acc |")
    out.append("|---|---|---|---|---|---|")
    for name, rep in (("base", base_rep), ("base binarised at 0.5", bin_rep)):
        out.append(f"| {name} | {rep.mae:.4f} | {rep.dice:.4f} | {rep.iou:.4f} | {rep.ber:.4f} | {rep.acc:.4f} |")
    out.append("")
    return "\n".join(out)


def cmd_ablate(args) -> int:
    cfg = resolve(args, ABLATE_DEFAULTS)
    out = _out_dir(cfg)
    state = _load_state(cfg["checkpoint"])
    refiner = _choose_refiner(cfg, state)
    th_pairs = ablation_pairs(cfg)
    items = _synthetic_sources(cfg, state) if int(cfg["synthetic"]) > 0 else _disk_sources(cfg)
    rows, base_rep, bin_rep = run_ablation(items, th_pairs, refiner, float(cfg["threshold"]), int(cfg["jobs"]))
    csv_rows = []
    for r in rows:
        rep = r["report"]
        csv_rows.append([r["policy"], r["low"], r["high"], rep.mae, rep.dice, rep.iou, rep.ber, rep.acc,
                         r["unknown"], "yes" if r["default"] else ""])
    for name, rep in (("base", base_rep), ("base-binarised", bin_rep)):
        csv_rows.append([name, "", "", rep.mae, rep.dice, rep.iou, rep.ber, rep.acc, "", ""])
    write_csv(out / "ablation.csv", ABLATION_COLUMNS, csv_rows)
    (out / "ablation.md").write_text(ablation_markdown(rows, base_rep, bin_rep, cfg))
    write_config(cfg, out)
    print(f"ablation over {len(th_pairs)} threshold pair(s) x {len(CompositePolicy)} policies -> {out}")
    return EXIT_OK


# ------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cgm", description="Confidence-guided matting toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, jobs=True):
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--config", help="flat key=value config file; flags override it")
        if jobs:
            sp.add_argument("--jobs", type=int, help="worker threads")

    def thresholds(sp):
        sp.add_argument("--t-low", dest="t_low", type=float, help="low confidence threshold (default 0.05)")
        sp.add_argument("--t-high", dest="t_high", type=float, help="high confidence threshold (default 0.95)")

    sp = sub.add_parser("eval", help="score probability PNGs against ground-truth masks")
    sp.add_argument("--pred", help="directory of probability PNGs")
    sp.add_argument("--gt", help="directory of ground-truth PNGs")
    sp.add_argument("--threshold", type=float, help="binarisation threshold for Dice/IoU/BER/Acc")
    sp.add_argument("--name", help="column label in the Markdown report")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("trimap", help="confidence trimaps from prediction PNGs")
    sp.add_argument("--pred", help="directory of probability or logit PNGs")
    sp.add_argument("--input", choices=["prob", "logit"], help="how to read prediction PNGs")
    sp.add_argument("--logit-range", dest="logit_range", type=float, help="logit PNG scale (default 16)")
    thresholds(sp)
    common(sp)
    sp.set_defaults(func=cmd_trimap)

    sp = sub.add_parser("refine", help="run base -> trimap -> refiner and save all stages")
    sp.add_argument("--images", help="directory of input PNG images")
    sp.add_argument("--pred", help="directory of base probability PNGs (instead of --checkpoint)")
    sp.add_argument("--checkpoint", help="train-toy checkpoint providing the base (and refiner) network")
    sp.add_argument("--refiner", choices=["heuristic", "checkpoint"])
    sp.add_argument("--policy", choices=[c.value for c in CompositePolicy])
    sp.add_argument("--size", type=int, help="working resolution (0 keeps the input size)")
    sp.add_argument("--bits", type=int, choices=[8, 16], help="bit depth of written probability PNGs")
    thresholds(sp)
    common(sp, jobs=False)
    sp.set_defaults(func=cmd_refine)

    sp = sub.add_parser("train-toy", help="train the toy base and refiner on synthetic shapes")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--size", type=int)
    sp.add_argument("--steps", type=int, help="base training steps")
    sp.add_argument("--refiner-steps", dest="refiner_steps", type=int)
    sp.add_argument("--batch", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--depth", type=int)
    sp.add_argument("--channels", help="comma-separated channels per stage, e.g. 8,16,32")
    sp.add_argument("--family", choices=["mixed", "disks", "polygons", "rings", "stars"])
    sp.add_argument("--noise", type=float)
    sp.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    sp.add_argument("--resume", help="checkpoint to continue from")
    thresholds(sp)
    common(sp, jobs=False)
    sp.set_defaults(func=cmd_train_toy)

    sp = sub.add_parser("ablate", help="sweep the confidence band under both composite policies")
    sp.add_argument("--pred", help="directory of base probability PNGs")
    sp.add_argument("--gt", help="directory of ground-truth PNGs")
    sp.add_argument("--images", help="directory of input PNG images")
    sp.add_argument("--synthetic", type=int, help="use N synthetic images instead of directories")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--size", type=int)
    sp.add_argument("--checkpoint", help="train-toy checkpoint for the synthetic base predictions")
    sp.add_argument("--refiner", choices=["heuristic", "checkpoint"])
    sp.add_argument("--band-noise", dest="band_noise", type=float, help="synthetic corruption amplitude")
    sp.add_argument("--extra-pair", dest="extra_pair", help="additional 'low,high' threshold pair")
    sp.add_argument("--degenerate-eps", dest="degenerate_eps", type=float,
                    help="append the narrow pair (0.5-eps, 0.5+eps)")
    sp.add_argument("--threshold", type=float)
    common(sp)
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ImageIOError, DatasetError, CheckpointError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DegenerateGroundTruth, TrainingDiverged, FloatingPointError, ValueError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
