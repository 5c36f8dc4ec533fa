"""Small reverse-mode autodiff over complex arrays with real parameters.

Values carry an optional leading batch axis; every primitive acts on the last
axis.  For a complex node z the stored gradient is dL/dRe(z) + i dL/dIm(z),
which for a real loss L equals 2 dL/dz*.  With that convention a holomorphic
linear map y = M v back-propagates as g_v = M^H g_y, and a real parameter p
entering through a complex value c(p) receives Re(conj(g_c) * dc/dp).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Literal, Sequence

import numpy as np


class GraphError(RuntimeError):
    pass


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "_done")

    def __init__(self, value: np.ndarray, parents: tuple = (), backward_fn: Callable | None = None,
                 op: str = ""):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self._done = False

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        self.grad = g if self.grad is None else self.grad + g

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"


class Parameter:
    """Named real-valued trainable array with a gradient buffer."""

    def __init__(self, name: str, value, trainable: bool = True):
        self.name = name
        self.value = np.array(value, dtype=float)
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape}, trainable={self.trainable})"


def constant(value) -> Node:
    return Node(np.asarray(value, dtype=complex), op="const")


def topological_order(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if isinstance(p, Node) and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> list[Node]:
    """Accumulate d(loss)/d(parameter) into every reachable Parameter.

    Returns the tape in the order it was replayed (reverse topological).
    A graph can be replayed only once.
    """
    if loss.value.size != 1 or np.iscomplexobj(loss.value) and loss.value.imag.any():
        raise GraphError("backward needs a real scalar loss")
    if loss._done:
        raise GraphError("backward already ran on this graph; run a new forward pass")
    tape = topological_order(loss)[::-1]
    loss.grad = np.ones_like(loss.value, dtype=float)
    for node in tape:
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
    loss._done = True
    return tape


def _sum_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a batched gradient down to an unbatched parameter shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return g


def complex_input(re: Parameter, im: Parameter) -> Node:
    """Complex leaf built from two real parameters (for gradient checks)."""
    def back(g):
        re.grad += np.real(g)
        im.grad += np.imag(g)
    return Node(re.value + 1j * im.value, (), back, "complex_input")


def matvec(m, v: Node) -> Node:
    m = np.asarray(m)
    if m.shape[-1] != v.shape[-1]:
        raise ValueError(f"matvec dimension mismatch: {m.shape} @ {v.shape}")
    out = Node(v.value @ m.T, (v,), None, "matvec")

    def back(g):
        v.accumulate(g @ m.conj())
    out.backward_fn = back
    return out


def real_matvec(w: Parameter, v: Node) -> Node:
    """y = W v with W a real weight parameter."""
    if w.shape[-1] != v.shape[-1]:
        raise ValueError(f"real_matvec dimension mismatch: {w.shape} @ {v.shape}")
    out = Node(v.value @ w.value.T, (v,), None, "real_matvec")

    def back(g):
        v.accumulate(g @ w.value)
        if w.trainable:
            g2 = g.reshape(-1, g.shape[-1])
            v2 = v.value.reshape(-1, v.value.shape[-1])
            w.grad += np.real(g2.T @ v2.conj())
    out.backward_fn = back
    return out


MaskMode = Literal["amp_phase", "amp_only", "phase_only"]


def mask_values(alpha: Parameter | None, theta: Parameter | None, mode: MaskMode,
                size: int) -> tuple[np.ndarray, np.ndarray, int | None]:
    """Realized amplitude a_m = |alpha_m| / max|alpha| and phase 2 pi theta_m."""
    if mode == "phase_only":
        amp, k = np.ones(size), None
    else:
        mag = np.abs(alpha.value)
        k = int(np.argmax(mag))
        if mag[k] == 0:
            raise ValueError("all mask amplitudes are zero; normalization undefined")
        amp = mag / mag[k]
    phase = np.zeros(size) if mode == "amp_only" else 2 * np.pi * theta.value
    return amp, phase, k


def diagonal_mask(alpha: Parameter | None, theta: Parameter | None, v: Node,
                  mode: MaskMode = "phase_only", noise: np.ndarray | None = None) -> Node:
    """y_m = noise_m * a_m * exp(i phi_m) * v_m.

    The max in the amplitude normalization is differentiated through the
    winning element only.  ``noise`` is a fixed complex factor per element.
    """
    size = v.shape[-1]
    for p in (alpha, theta):
        if p is not None and p.shape != (size,):
            raise ValueError(f"mask parameter {p.name} has shape {p.shape}, expected ({size},)")
    amp, phase, k = mask_values(alpha, theta, mode, size)
    rot = np.exp(1j * phase)
    if noise is not None:
        rot = rot * noise
    c = amp * rot
    out = Node(v.value * c, (v,), None, "diagonal_mask")

    def back(g):
        v.accumulate(g * c.conj())
        gc = _sum_to(g * v.value.conj(), c.shape)
        if mode != "amp_only" and theta.trainable:
            theta.grad += 2 * np.pi * np.real(gc.conj() * 1j * c)
        if mode != "phase_only" and alpha.trainable:
            ga = np.real(gc.conj() * rot)            # dL/da_m
            mag = np.abs(alpha.value)
            sgn = np.sign(alpha.value)
            d = ga * sgn / mag[k]
            d[k] -= np.dot(ga, mag) / mag[k] ** 2 * sgn[k]
            alpha.grad += d
    out.backward_fn = back
    return out


def _bias_values(bias, size: int) -> np.ndarray:
    if bias is None:
        return np.zeros(size)
    val = bias.value if isinstance(bias, Parameter) else np.asarray(bias, dtype=float)
    if val.size not in (1, size):
        raise ValueError(f"bias length {val.size} incompatible with vector length {size}")
    return np.broadcast_to(val.reshape(-1) if val.size == size else val.reshape(()), (size,))


def modrelu(v: Node, bias: Parameter | float | np.ndarray | None = None,
            keep_phase: bool = True) -> Node:
    """ReLU(|v| + b) * exp(i arg v), or with the phase dropped when not ``keep_phase``.

    Subgradients are zero at the ReLU kink and at v = 0.
    """
    size = v.shape[-1]
    b = _bias_values(bias, size)
    r = np.abs(v.value)
    s = r + b
    active = s > 0
    f = np.where(active, s, 0.0)
    nz = r > 0
    unit = np.where(nz, v.value / np.where(nz, r, 1.0), 0.0)
    y = f * unit if keep_phase else f.astype(complex)
    out = Node(y, (v,), None, "modrelu")

    def back(g):
        if keep_phase:
            a = g.conj() * unit
            df = np.real(a) * active
            tang = np.where(nz, -np.imag(a) * f / np.where(nz, r, 1.0), 0.0)
            v.accumulate(unit * (df + 1j * tang))
        else:
            df = np.real(g) * active
            v.accumulate(unit * df)
        if isinstance(bias, Parameter) and bias.trainable:
            gb = _sum_to(df, (size,))
            bias.grad += gb if bias.size == size else np.sum(gb).reshape(bias.shape)
    out.backward_fn = back
    return out


def cabs(v: Node) -> Node:
    return modrelu(v, None, keep_phase=False)


def powers(v: np.ndarray) -> np.ndarray:
    return np.abs(v) ** 2


def power_softmax_xent(v: Node, scale: Parameter, labels) -> Node:
    """Mean cross-entropy of softmax(beta^2 |v|^2) against integer labels."""
    labels = np.atleast_1d(np.asarray(labels))
    vals = v.value.reshape(-1, v.shape[-1])
    if labels.shape[0] != vals.shape[0]:
        raise ValueError(f"{labels.shape[0]} labels for a batch of {vals.shape[0]}")
    ncls = vals.shape[1]
    if labels.min() < 0 or labels.max() >= ncls:
        raise ValueError(f"label out of range [0, {ncls})")
    beta = float(scale.value.reshape(()))
    p = powers(vals)
    logits = beta * beta * p
    z = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logz
    rows = np.arange(len(labels))
    loss = -logp[rows, labels].mean()
    out = Node(np.array(loss), (v,), None, "power_softmax_xent")

    def back(g):
        dlogits = np.exp(logp)
        dlogits[rows, labels] -= 1.0
        dlogits *= float(g) / len(labels)
        gv = 2 * vals * (beta * beta * dlogits)
        v.accumulate(gv.reshape(v.shape))
        if scale.trainable:
            scale.grad += np.sum(dlogits * 2 * beta * p).reshape(scale.shape)
    out.backward_fn = back
    return out


def predict_classes(v: np.ndarray) -> np.ndarray:
    return np.argmax(powers(v), axis=-1)


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    h: float = 1e-6

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def __str__(self):
        lines = [f"{name}: {err:.3e}" for name, err in self.errors.items()]
        lines.append(f"max relative error: {self.max_error:.3e} (h={self.h:g})")
        return "\n".join(lines)


def check_gradients(loss_fn: Callable[[], Node], params: Sequence[Parameter], h: float = 1e-6,
                    floor: float = 1e-8) -> GradCheckReport:
    """Compare backprop gradients with central differences.

    For each parameter the error is max_i |g_i - n_i| / max(max|g|, max|n|, floor),
    i.e. relative to that parameter's gradient scale.
    """
    for p in params:
        p.zero_grad()
    backward(loss_fn())
    analytic = {p.name: p.grad.copy() for p in params}
    report = GradCheckReport(h=h)
    for p in params:
        numeric = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(np.real(loss_fn().value))
            flat[i] = orig - h
            down = float(np.real(loss_fn().value))
            flat[i] = orig
            nflat[i] = (up - down) / (2 * h)
        a = analytic[p.name]
        denom = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(numeric), initial=0.0), floor)
        report.errors[p.name] = float(np.max(np.abs(a - numeric), initial=0.0) / denom)
    return report


# Checkpoint file layout (version 1), all integers little-endian:
#   8 bytes   magic b"PCNNCKPT"
#   uint32    format version
#   uint32    header length L
#   L bytes   UTF-8 JSON: {"params": [{"name", "shape", "trainable"}, ...], "meta": {...}}
#   then each parameter's values as little-endian float64, C order, in header order
CKPT_MAGIC = b"PCNNCKPT"
CKPT_VERSION = 1


def save_parameters(path, params: Iterable[Parameter], meta: dict | None = None) -> None:
    params = list(params)
    header = {"params": [{"name": p.name, "shape": list(p.shape), "trainable": p.trainable}
                         for p in params], "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(blob)))
        fh.write(blob)
        for p in params:
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def load_parameters(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen])
    pos = 16 + hlen
    out = {}
    for entry in header["params"]:
        n = int(np.prod(entry["shape"], dtype=int))
        if pos + 8 * n > len(data):
            raise ValueError(f"{path}: truncated at parameter {entry['name']}")
        out[entry["name"]] = np.frombuffer(data, "<f8", n, pos).reshape(entry["shape"]).copy()
        pos += 8 * n
    return out, header.get("meta", {})
