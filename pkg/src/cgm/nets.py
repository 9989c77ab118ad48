"""Toy encoder-decoder base and refiner networks (instance norm + GELU)."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from itertools import cycle, islice

import numpy as np

from .autodiff import Graph, Node
from .losses import DEFAULT_SCALE_COUNTS, SSIM_WINDOW


@dataclass(frozen=True)
class ToyNetConfig:
    channels: tuple = (8, 16, 32)
    depth: int = 2
    input_size: int = 64
    in_channels: int = 3
    activation: str = "gelu"
    normalization: str = "instance"

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if not 1 <= self.depth <= 3:
            raise ValueError("depth must be between 1 and 3")
        if len(self.channels) != self.depth + 1:
            raise ValueError(f"need depth + 1 = {self.depth + 1} channel counts, got {len(self.channels)}")
        if any(c < 1 or c > 32 for c in self.channels):
            raise ValueError("channels per stage must be in [1, 32]")
        if self.input_size < 1 or self.input_size % (2 ** self.depth):
            raise ValueError(f"input size {self.input_size} not divisible by 2**depth = {2 ** self.depth}")
        if self.activation != "gelu" or self.normalization != "instance":
            raise ValueError("toy networks support only GELU activation with instance normalization")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


class ToyNet:
    """Parameters plus a forward function that records into a :class:`Graph`.

    ``with_heads=True`` (base) adds 1x1 auxiliary heads for the local / global /
    token lists; the refiner only emits the final logit map.
    """

    def __init__(self, cfg: ToyNetConfig, params: dict, with_heads: bool,
                 counts: dict | None = None):
        self.cfg = cfg
        self.params = params
        self.with_heads = with_heads
        self.counts = dict(counts or DEFAULT_SCALE_COUNTS)

    # parameter layout -------------------------------------------------
    @staticmethod
    def _layout(cfg: ToyNetConfig, with_heads: bool, counts: dict) -> dict:
        shapes = {}

        def block(name, cin, cout):
            for i, (a, b) in enumerate(((cin, cout), (cout, cout))):
                shapes[f"{name}.conv{i}.w"] = (b, a, 3, 3)
                shapes[f"{name}.conv{i}.b"] = (b,)
                shapes[f"{name}.norm{i}.g"] = (b,)
                shapes[f"{name}.norm{i}.b"] = (b,)

        ch = cfg.channels
        block("enc0", cfg.in_channels, ch[0])
        for i in range(1, cfg.depth + 1):
            block(f"enc{i}", ch[i - 1], ch[i])
        for i in range(cfg.depth - 1, -1, -1):
            block(f"dec{i}", ch[i + 1] + ch[i], ch[i])
        shapes["final.w"] = (1, ch[0], 1, 1)
        shapes["final.b"] = (1,)
        if with_heads:
            for group, slots in ToyNet._head_slots(cfg, counts).items():
                for k, (_, c, _) in enumerate(slots):
                    shapes[f"head.{group}{k}.w"] = (1, c, 1, 1)
                    shapes[f"head.{group}{k}.b"] = (1,)
        return shapes

    @staticmethod
    def _features(cfg: ToyNetConfig):
        """(name, channels, size) of every feature map large enough for the SSIM window."""
        feats = [(f"dec{i}", cfg.channels[i], cfg.input_size >> i) for i in range(cfg.depth)]
        feats += [(f"enc{i}", cfg.channels[i], cfg.input_size >> i) for i in range(cfg.depth + 1)]
        return [f for f in feats if f[2] >= SSIM_WINDOW]

    @staticmethod
    def _head_slots(cfg: ToyNetConfig, counts: dict) -> dict:
        feats = ToyNet._features(cfg)
        if not feats:
            raise ValueError("no feature map is at least as large as the SSIM window")
        coarse_first = sorted(feats, key=lambda f: f[2])
        return {
            # the final map is local slot 0, heads fill the rest
            "local": list(islice(cycle(feats), max(counts["local"] - 1, 0))),
            "global": list(islice(cycle(coarse_first), counts["global"])),
            "token": list(islice(cycle(feats[::-1]), counts["token"])),
        }

    @classmethod
    def init(cls, cfg: ToyNetConfig, seed: int, with_heads: bool,
             counts: dict | None = None) -> "ToyNet":
        counts = dict(counts or DEFAULT_SCALE_COUNTS)
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in cls._layout(cfg, with_heads, counts).items():
            if name.endswith(".w") and len(shape) == 4:
                fan_in = shape[1] * shape[2] * shape[3]
                # fan-in init; heads start small so early logits stay near zero
                std = (0.1 if name.startswith(("head.", "final.")) else np.sqrt(2.0)) / np.sqrt(fan_in)
                params[name] = (rng.standard_normal(shape) * std).astype(np.float32)
            elif ".norm" in name and name.endswith(".g"):
                params[name] = np.ones(shape, np.float32)
            else:
                params[name] = np.zeros(shape, np.float32)
        return cls(cfg, params, with_heads, counts)

    # forward ----------------------------------------------------------
    def _block(self, g: Graph, name: str, x: Node) -> Node:
        for i in range(2):
            x = g.conv2d(x, g.param(f"{name}.conv{i}.w", self.params[f"{name}.conv{i}.w"]),
                         g.param(f"{name}.conv{i}.b", self.params[f"{name}.conv{i}.b"]))
            x = g.instance_norm(x, g.param(f"{name}.norm{i}.g", self.params[f"{name}.norm{i}.g"]),
                                g.param(f"{name}.norm{i}.b", self.params[f"{name}.norm{i}.b"]))
            x = g.gelu(x)
        return x

    def _head(self, g: Graph, name: str, x: Node) -> Node:
        return g.conv2d(x, g.param(f"{name}.w", self.params[f"{name}.w"]),
                        g.param(f"{name}.b", self.params[f"{name}.b"]))

    def forward(self, g: Graph, x) -> dict:
        """Returns {'final': node, 'local': [...], 'global': [...], 'token': [...]} of (N,1,h,w) logits."""
        x = x if isinstance(x, Node) else g.input(x)
        cfg = self.cfg
        if x.shape[1] != cfg.in_channels:
            raise ValueError(f"expected {cfg.in_channels} input channels, got {x.shape[1]}")
        if x.shape[2] % (2 ** cfg.depth) or x.shape[3] % (2 ** cfg.depth):
            raise ValueError(f"input size {x.shape[2:]} not divisible by 2**depth")
        feats = {}
        h = self._block(g, "enc0", x)
        feats["enc0"] = h
        for i in range(1, cfg.depth + 1):
            h = self._block(g, f"enc{i}", g.downsample(h))
            feats[f"enc{i}"] = h
        for i in range(cfg.depth - 1, -1, -1):
            h = self._block(g, f"dec{i}", g.concat([g.upsample(h), feats[f"enc{i}"]]))
            feats[f"dec{i}"] = h
        final = self._head(g, "final", h)
        out = {"final": final, "local": [final], "global": [], "token": []}
        if self.with_heads:
            for group, slots in self._head_slots(cfg, self.counts).items():
                for k, (fname, _, _) in enumerate(slots):
                    out[group].append(self._head(g, f"head.{group}{k}", feats[fname]))
        return out

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Final logits (N, H, W) as float64 for a batch (N, C, H, W)."""
        g = Graph(dtype=np.float32)
        out = self.forward(g, np.asarray(x, np.float32))
        return out["final"].value[:, 0].astype(np.float64)

    def astype(self, dtype) -> "ToyNet":
        return ToyNet(self.cfg, {k: v.astype(dtype) for k, v in self.params.items()},
                      self.with_heads, self.counts)

    def with_params(self, params: dict) -> "ToyNet":
        return ToyNet(self.cfg, params, self.with_heads, self.counts)


def build_toy_base(cfg: ToyNetConfig = ToyNetConfig(), seed: int = 0) -> ToyNet:
    return ToyNet.init(replace(cfg, in_channels=3), seed, with_heads=True)


def build_toy_refiner(cfg: ToyNetConfig = ToyNetConfig(), seed: int = 0) -> ToyNet:
    """Refiner over image + trimap/255 (4 channels), emitting one logit map."""
    return ToyNet.init(replace(cfg, in_channels=4), seed, with_heads=False)


def image_batch(images) -> np.ndarray:
    """(H, W, 3) images -> (N, 3, H, W) float32."""
    return np.stack([np.asarray(im, np.float32).transpose(2, 0, 1) for im in images])


def refiner_batch(images, trimaps) -> np.ndarray:
    """Image channels plus trimap / 255 as a fourth channel."""
    x = image_batch(images)
    t = np.stack([np.asarray(tm, np.float32) / 255.0 for tm in trimaps])[:, None]
    return np.concatenate([x, t], axis=1)
