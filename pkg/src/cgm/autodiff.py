"""Minimal reverse-mode differentiation over NCHW arrays.

A :class:`Graph` records nodes in creation order, which is already a
topological order, so ``backward`` is a single reverse sweep::

    g = Graph()
    x = g.input(batch)
    w = g.param("conv.w", weights)
    y = g.gelu(g.conv2d(x, w))
    grads = g.backward({y: np.ones_like(y.value)})
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

IN_EPS = 1e-5
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class GraphError(RuntimeError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass(eq=False)
class Node:
    id: int
    op: str
    inputs: tuple
    value: np.ndarray
    vjp: Callable | None = None
    grad: np.ndarray | None = None
    name: str | None = None

    @property
    def shape(self):
        return self.value.shape


class Graph:
    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.nodes: list[Node] = []
        self.parameters: dict[str, Node] = {}
        self._backpropagated = False

    # -- construction -------------------------------------------------
    def _add(self, op, inputs, value, vjp=None, name=None) -> Node:
        if self._backpropagated:
            raise GraphError("graph already backpropagated; call zero_grad() before extending it")
        node = Node(len(self.nodes), op, tuple(n.id for n in inputs), value, vjp, None, name)
        self.nodes.append(node)
        return node

    def input(self, array) -> Node:
        return self._add("input", (), np.asarray(array, dtype=self.dtype))

    def param(self, name: str, array) -> Node:
        if name in self.parameters:
            return self.parameters[name]
        node = self._add("param", (), np.array(array, dtype=self.dtype), name=name)
        self.parameters[name] = node
        return node

    # -- ops ----------------------------------------------------------
    def conv2d(self, x: Node, w: Node, b: Node | None = None) -> Node:
        """Stride-1 'same' convolution; kernel (O, C, k, k) with odd k."""
        n, c, h, wd = x.shape
        o, c2, k, k2 = w.shape
        if c != c2 or k != k2 or k % 2 == 0:
            raise ValueError(f"conv2d shape mismatch: input {x.shape}, kernel {w.shape}")
        pad = k // 2
        xp = np.pad(x.value, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        cols = sliding_window_view(xp, (k, k), axis=(2, 3))  # n c h w k k
        cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, c * k * k)
        wmat = w.value.reshape(o, c * k * k)
        out = cols @ wmat.T
        if b is not None:
            out = out + b.value
        out = out.reshape(n, h, wd, o).transpose(0, 3, 1, 2)

        def vjp(g):
            gm = g.transpose(0, 2, 3, 1).reshape(n * h * wd, o)
            gw = (gm.T @ cols).reshape(w.shape)
            dcols = (gm @ wmat).reshape(n, h, wd, c, k, k)
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + h, j:j + wd] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = dxp[:, :, pad:pad + h, pad:pad + wd]
            if b is None:
                return gx, gw
            return gx, gw, gm.sum(axis=0)

        ins = (x, w) if b is None else (x, w, b)
        return self._add("conv2d", ins, np.ascontiguousarray(out), vjp)

    def downsample(self, x: Node) -> Node:
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"downsample needs even spatial size, got {x.shape}")
        out = x.value.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

        def vjp(g):
            return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

        return self._add("downsample", (x,), out, vjp)

    def upsample(self, x: Node) -> Node:
        out = np.repeat(np.repeat(x.value, 2, axis=2), 2, axis=3)

        def vjp(g):
            n, c, h, w = g.shape
            return (g.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)),)

        return self._add("upsample", (x,), out, vjp)

    def instance_norm(self, x: Node, gamma: Node, beta: Node, eps: float = IN_EPS) -> Node:
        n, c, h, w = x.shape
        if gamma.shape != (c,) or beta.shape != (c,):
            raise ValueError("instance_norm affine parameters must have shape (C,)")
        mu = x.value.mean(axis=(2, 3), keepdims=True)
        var = x.value.var(axis=(2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.value - mu) * inv
        g4 = gamma.value.reshape(1, c, 1, 1)
        out = xhat * g4 + beta.value.reshape(1, c, 1, 1)

        def vjp(g):
            dxhat = g * g4
            m = h * w
            gx = inv / m * (m * dxhat - dxhat.sum(axis=(2, 3), keepdims=True)
                            - xhat * (dxhat * xhat).sum(axis=(2, 3), keepdims=True))
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

        return self._add("instance_norm", (x, gamma, beta), out.astype(self.dtype), vjp)

    def gelu(self, x: Node) -> Node:
        v = x.value
        cdf = 0.5 * (1.0 + erf(v / _SQRT2))
        out = (v * cdf).astype(self.dtype)

        def vjp(g):
            pdf = _INV_SQRT_2PI * np.exp(-0.5 * v * v)
            return (g * (cdf + v * pdf)).astype(self.dtype),

        return self._add("gelu", (x,), out, vjp)

    def sigmoid(self, x: Node) -> Node:
        v = x.value
        e = np.exp(-np.abs(v))
        out = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(self.dtype)

        def vjp(g):
            return (g * out * (1 - out),)

        return self._add("sigmoid", (x,), out, vjp)

    def concat(self, nodes: list[Node], axis: int = 1) -> Node:
        shapes = [n.shape for n in nodes]
        base = [s[:axis] + s[axis + 1:] for s in shapes]
        if any(b != base[0] for b in base):
            raise ValueError(f"concat shape mismatch: {shapes}")
        out = np.concatenate([n.value for n in nodes], axis=axis)
        splits = np.cumsum([s[axis] for s in shapes])[:-1]

        def vjp(g):
            return tuple(np.split(g, splits, axis=axis))

        return self._add("concat", tuple(nodes), out, vjp)

    def add(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
        return self._add("add", (a, b), a.value + b.value, lambda g: (g, g))

    def sum(self, x: Node) -> Node:
        shape = x.shape
        return self._add("sum", (x,), np.asarray(x.value.sum(dtype=np.float64)),
                         lambda g: (np.full(shape, g, dtype=x.value.dtype),))

    # -- differentiation ----------------------------------------------
    def zero_grad(self) -> None:
        for node in self.nodes:
            node.grad = None
        self._backpropagated = False

    def backward(self, seeds) -> dict[str, np.ndarray]:
        """Propagate ``seeds`` ({node: d loss / d node}) and return parameter gradients."""
        if not self.nodes:
            raise GraphError("backward called before any forward computation")
        if self._backpropagated:
            raise GraphError("gradients already accumulated; call zero_grad() first")
        if isinstance(seeds, Node):
            seeds = {seeds: np.ones_like(seeds.value)}
        for node, g in seeds.items():
            if node.id >= len(self.nodes) or self.nodes[node.id] is not node:
                raise GraphError("seed node does not belong to this graph")
            g = np.asarray(g, dtype=self.dtype)
            if g.shape != node.shape:
                raise ValueError(f"seed shape {g.shape} does not match node shape {node.shape}")
            node.grad = g if node.grad is None else node.grad + g
        self._backpropagated = True
        for node in reversed(self.nodes):
            if node.grad is None or node.vjp is None:
                continue
            for inp_id, gi in zip(node.inputs, node.vjp(node.grad)):
                inp = self.nodes[inp_id]
                gi = np.asarray(gi, dtype=self.dtype)
                inp.grad = gi if inp.grad is None else inp.grad + gi
        return {name: (n.grad if n.grad is not None else np.zeros_like(n.value))
                for name, n in self.parameters.items()}


# ------------------------------------------------------------------ Adam

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``; inputs are untouched."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != np.shape(params[name]):
            raise ValueError(f"gradient shape mismatch for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter {name!r} at step {state.step + 1}")
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads.get(name, np.zeros_like(p)), dtype=np.float64)
        m = beta1 * state.m.get(name, np.zeros(p.shape)) + (1 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros(p.shape)) + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        new_params[name] = (p - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(t, new_m, new_v)


# ------------------------------------------------------------ checkpoints

CHECKPOINT_MAGIC = b"CGMCKPT\x00"
CHECKPOINT_VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8"), 4: np.dtype("u1")}
_CODES = {np.dtype(v).kind + str(np.dtype(v).itemsize): k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> None:
    """Little-endian binary: magic, version, JSON metadata, then named tensors in sorted order."""
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(meta_bytes)), meta_bytes,
              struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        code = _CODES.get(arr.dtype.kind + str(arr.dtype.itemsize))
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw_name)) + raw_name)
        chunks.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict, dict]:
    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, meta_len = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        meta = json.loads(take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: corrupt metadata block") from None
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"{path}: corrupt tensor name") from None
        code, ndim = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dt = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        tensors[name] = np.frombuffer(take(nbytes), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return tensors, meta
