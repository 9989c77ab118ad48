"""Desk-scale training of the toy base (combined multi-scale loss) and refiner (structure loss)."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import AdamState, Graph, NonFiniteGradient, adam_step, load_checkpoint, save_checkpoint
from .datasets import SynthSpec, generate_synthetic
from .imagecore import sigmoid_map
from .losses import LossWeights, MultiScaleOutputs, combined_loss, structure_loss
from .nets import ToyNet, ToyNetConfig, build_toy_base, build_toy_refiner, image_batch, refiner_batch
from .trimap import DEFAULT_THRESHOLDS, ThresholdPair, trimap_from_prob

log = logging.getLogger(__name__)

CURVE_FIELDS = ("stage", "step", "loss")


class TrainingDiverged(FloatingPointError):
    def __init__(self, msg: str, checkpoint: Path | None):
        super().__init__(msg)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 7
    size: int = 64
    steps: int = 200
    refiner_steps: int = 100
    batch: int = 4
    lr: float = 5e-3
    channels: tuple = (8, 16, 32)
    depth: int = 2
    family: str = "mixed"
    noise: float = 0.1
    eval_count: int = 8
    checkpoint_every: int = 50
    t_low: float = DEFAULT_THRESHOLDS.t_low
    t_high: float = DEFAULT_THRESHOLDS.t_high

    def net_config(self) -> ToyNetConfig:
        return ToyNetConfig(channels=tuple(self.channels), depth=self.depth, input_size=self.size)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


def stream_seed(seed: int, *keys: int) -> int:
    """Independent integer seed for a (stage, step) stream."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def synth_batch(cfg: TrainConfig, stage: int, step: int, count: int | None = None):
    spec = SynthSpec(seed=stream_seed(cfg.seed, stage, step), count=count or cfg.batch,
                     size=cfg.size, family=cfg.family, bg_noise=cfg.noise, fg_noise=cfg.noise)
    return generate_synthetic(spec)


def eval_pairs(cfg: TrainConfig):
    return synth_batch(cfg, 99, 0, cfg.eval_count)


# ------------------------------------------------------------ loss + grad

def _graph_for(net: ToyNet) -> Graph:
    return Graph(next(iter(net.params.values())).dtype)


def base_loss_and_grads(net: ToyNet, pairs, lw: LossWeights = LossWeights(), backward: bool = True):
    """Mean combined loss over the batch, and parameter gradients."""
    g = _graph_for(net)
    out = net.forward(g, image_batch([p[0] for p in pairs]))
    n = len(pairs)
    seeds = {}
    total = 0.0
    for b, (_, mask) in enumerate(pairs):
        ms = MultiScaleOutputs.from_predictions(
            [nd.value[b, 0] for nd in out["local"]],
            [nd.value[b, 0] for nd in out["global"]],
            [nd.value[b, 0] for nd in out["token"]], mask)
        cl = combined_loss(ms, lw)
        total += cl.total / n
        if backward:
            for group, key in (("local", "local"), ("global", "global_"), ("token", "token")):
                for nd, gr in zip(out[group], cl.grads[key]):
                    seed = seeds.setdefault(nd, np.zeros(nd.shape))
                    seed[b, 0] += gr / n
    grads = g.backward(seeds) if backward else None
    return total, grads


def base_trimaps(base: ToyNet, images, th: ThresholdPair):
    logits = base.predict(image_batch(images))
    return [trimap_from_prob(sigmoid_map(lg), th) for lg in logits]


def refiner_loss_and_grads(refiner: ToyNet, base: ToyNet, pairs, th: ThresholdPair,
                           lw: LossWeights = LossWeights(), backward: bool = True):
    images = [p[0] for p in pairs]
    trimaps = base_trimaps(base, images, th)
    g = _graph_for(refiner)
    out = refiner.forward(g, refiner_batch(images, trimaps))
    final = out["final"]
    n = len(pairs)
    seed = np.zeros(final.shape)
    total = 0.0
    for b, (_, mask) in enumerate(pairs):
        br = structure_loss(final.value[b, 0], mask, lw)
        total += br.total / n
        seed[b, 0] = br.grad / n
    grads = g.backward({final: seed}) if backward else None
    return total, grads


# ------------------------------------------------------------ checkpoints

def _pack(prefix: str, d: dict) -> dict:
    return {f"{prefix}/{k}": v for k, v in d.items()}


def _unpack(prefix: str, tensors: dict) -> dict:
    p = prefix + "/"
    return {k[len(p):]: v for k, v in tensors.items() if k.startswith(p)}


@dataclass
class TrainState:
    cfg: TrainConfig
    base: ToyNet
    refiner: ToyNet
    base_opt: AdamState = field(default_factory=AdamState)
    refiner_opt: AdamState = field(default_factory=AdamState)
    stage: str = "base"  # "base", "refiner" or "done"
    step: int = 0  # next step to run within ``stage``
    curve: list = field(default_factory=list)
    initial_eval: float | None = None
    final_eval: float | None = None

    @classmethod
    def fresh(cls, cfg: TrainConfig) -> "TrainState":
        ncfg = cfg.net_config()
        return cls(cfg, build_toy_base(ncfg, cfg.seed), build_toy_refiner(ncfg, cfg.seed + 1))

    def save(self, path) -> None:
        tensors = {}
        tensors.update(_pack("base", self.base.params))
        tensors.update(_pack("refiner", self.refiner.params))
        for name, opt in (("base_opt", self.base_opt), ("refiner_opt", self.refiner_opt)):
            tensors.update(_pack(f"{name}.m", opt.m))
            tensors.update(_pack(f"{name}.v", opt.v))
        meta = {
            "config": self.cfg.to_dict(),
            "net": self.base.cfg.to_dict(),
            "stage": self.stage,
            "step": self.step,
            "base_opt_step": self.base_opt.step,
            "refiner_opt_step": self.refiner_opt.step,
            "curve": self.curve,
            "initial_eval": self.initial_eval,
            "final_eval": self.final_eval,
        }
        save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path) -> "TrainState":
        tensors, meta = load_checkpoint(path)
        c = dict(meta["config"])
        c["channels"] = tuple(c["channels"])
        cfg = TrainConfig(**c)
        fresh = cls.fresh(cfg)
        base = fresh.base.with_params(_unpack("base", tensors))
        refiner = fresh.refiner.with_params(_unpack("refiner", tensors))
        base_opt = AdamState(meta["base_opt_step"], _unpack("base_opt.m", tensors), _unpack("base_opt.v", tensors))
        ref_opt = AdamState(meta["refiner_opt_step"], _unpack("refiner_opt.m", tensors),
                            _unpack("refiner_opt.v", tensors))
        return cls(cfg, base, refiner, base_opt, ref_opt, meta["stage"], meta["step"],
                   [list(r) for r in meta["curve"]], meta["initial_eval"], meta["final_eval"])


def load_networks(path) -> tuple[ToyNet, ToyNet]:
    st = TrainState.load(path)
    return st.base, st.refiner


# ------------------------------------------------------------ loop

def train_toy(cfg: TrainConfig, out_dir=None, resume=None, stop_after: int | None = None) -> TrainState:
    """Train base then refiner. ``stop_after`` limits the number of optimiser steps run in this call."""
    out_dir = Path(out_dir) if out_dir is not None else None
    state = TrainState.load(resume) if resume is not None else TrainState.fresh(cfg)
    cfg = state.cfg
    th = ThresholdPair(cfg.t_low, cfg.t_high)
    ckpt = out_dir / "checkpoint.bin" if out_dir is not None else None
    last_good = None
    if state.initial_eval is None:
        state.initial_eval, _ = base_loss_and_grads(state.base, eval_pairs(cfg), backward=False)
        log.info("initial eval combined loss %.4f", state.initial_eval)
    budget = math.inf if stop_after is None else stop_after

    def checkpoint():
        nonlocal last_good
        if ckpt is not None:
            state.save(ckpt)
            last_good = ckpt

    def run_stage(name, stage_id, total_steps, loss_fn, net_attr, opt_attr):
        nonlocal budget
        while state.step < total_steps and budget > 0:
            pairs = synth_batch(cfg, stage_id, state.step)
            loss, grads = loss_fn(getattr(state, net_attr), pairs)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite {name} loss at step {state.step}", last_good)
            net = getattr(state, net_attr)
            try:
                params, opt = adam_step(net.params, grads, getattr(state, opt_attr), lr=cfg.lr)
            except NonFiniteGradient as exc:
                raise TrainingDiverged(str(exc), last_good) from None
            setattr(state, net_attr, net.with_params(params))
            setattr(state, opt_attr, opt)
            state.curve.append([name, state.step, loss])
            if state.step % 20 == 0:
                log.info("%s step %d loss %.4f", name, state.step, loss)
            state.step += 1
            budget -= 1
            if cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                checkpoint()

    if state.stage == "base":
        run_stage("base", 1, cfg.steps, base_loss_and_grads, "base", "base_opt")
        if state.step >= cfg.steps:
            state.final_eval, _ = base_loss_and_grads(state.base, eval_pairs(cfg), backward=False)
            log.info("final eval combined loss %.4f", state.final_eval)
            state.stage, state.step = "refiner", 0
    if state.stage == "refiner":
        def ref_loss(refiner, pairs):
            return refiner_loss_and_grads(refiner, state.base, pairs, th)
        run_stage("refiner", 2, cfg.refiner_steps, ref_loss, "refiner", "refiner_opt")
        if state.step >= cfg.refiner_steps:
            state.stage, state.step = "done", 0
    checkpoint()
    return state
