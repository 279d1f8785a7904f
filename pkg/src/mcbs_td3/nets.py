"""Dense networks with hand-written backprop, Adam and Polyak blending.

Everything is float64 numpy. A network maps a single vector ``(n_in,)`` or a
batch ``(batch, n_in)`` to the matching output shape.

Checkpoint byte layout (all integers and floats little-endian)::

    magic        6 bytes   b"MLPNET"
    version      uint16    currently 1
    n_sizes      uint32    number of entries in layer_sizes
    layer_sizes  uint32 * n_sizes
    hidden_tag   uint8     0 = relu
    output_tag   uint8     0 = identity, 1 = tanh
    then for each layer k:
        weights  float64 * (layer_sizes[k+1] * layer_sizes[k]), row-major
        bias     float64 * layer_sizes[k+1]

Float data is written with ``ndarray.tobytes`` so a save/load round trip is
bit-exact.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

MAGIC = b"MLPNET"
FORMAT_VERSION = 1

HIDDEN_TAGS = {"relu": 0}
OUTPUT_TAGS = {"identity": 0, "tanh": 1}


class ShapeError(ValueError):
    """Raised when an array does not have the shape a network expects."""


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf shows up where only finite values are allowed."""


@dataclass
class Mlp:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self) -> None:
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ShapeError(f"layer_sizes must hold >= 2 positive ints, got {self.layer_sizes}")
        if self.hidden_activation not in HIDDEN_TAGS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_TAGS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        n_layers = len(self.layer_sizes) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ShapeError(f"expected {n_layers} weight/bias pairs")
        for k in range(n_layers):
            shape = (self.layer_sizes[k + 1], self.layer_sizes[k])
            self.weights[k] = np.asarray(self.weights[k], dtype=np.float64)
            self.biases[k] = np.asarray(self.biases[k], dtype=np.float64)
            if self.weights[k].shape != shape:
                raise ShapeError(f"layer {k}: weight shape {self.weights[k].shape}, expected {shape}")
            if self.biases[k].shape != (shape[0],):
                raise ShapeError(f"layer {k}: bias shape {self.biases[k].shape}, expected {(shape[0],)}")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> Mlp:
        return Mlp(
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.hidden_activation,
            self.output_activation,
        )

    def zeros_like(self) -> Mlp:
        return Mlp(
            self.layer_sizes,
            [np.zeros_like(w) for w in self.weights],
            [np.zeros_like(b) for b in self.biases],
            self.hidden_activation,
            self.output_activation,
        )

    def params(self) -> list[np.ndarray]:
        """Weights and biases interleaved per layer: [W0, b0, W1, b1, ...]."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def same_architecture(self, other: Mlp) -> bool:
        return (
            self.layer_sizes == other.layer_sizes
            and self.hidden_activation == other.hidden_activation
            and self.output_activation == other.output_activation
        )

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return mlp_forward(self, x)


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def scale(self, c: float) -> Gradients:
        return Gradients([w * c for w in self.weights], [b * c for b in self.biases])


@dataclass
class AdamState:
    m: Gradients
    v: Gradients
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: Mlp) -> AdamState:
        z = net.zeros_like()
        z2 = net.zeros_like()
        return cls(Gradients(z.weights, z.biases), Gradients(z2.weights, z2.biases))


def init_mlp(
    layer_sizes: Sequence[int],
    rng: np.random.Generator,
    output_activation: str = "identity",
    hidden_activation: str = "relu",
) -> Mlp:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weights and biases."""
    sizes = tuple(int(n) for n in layer_sizes)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return Mlp(sizes, weights, biases, hidden_activation, output_activation)


def _as_batch(x: np.ndarray, width: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        got = x.shape[-1] if x.ndim else 0
        raise ShapeError(f"{what}: expected length {width}, got {got} (array shape {x.shape})")
    return x, single


def _forward_cached(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    # cache holds the input of every layer plus the final pre-activation
    acts = [x]
    h = x
    last = net.n_layers - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        if k < last:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            acts.append(z)
            h = np.tanh(z) if net.output_activation == "tanh" else z
    return h, acts


def mlp_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    xb, single = _as_batch(x, net.n_in, "mlp_forward input")
    out, _ = _forward_cached(net, xb)
    return out[0] if single else out


def mlp_backward(net: Mlp, x: np.ndarray, upstream: np.ndarray) -> tuple[Gradients, np.ndarray]:
    """Gradients of ``sum(upstream * net(x))`` w.r.t. parameters and input.

    For a batch the parameter gradients are summed over rows; the input
    gradient keeps one row per sample.
    """
    grads, dx = _backward(net, x, upstream, want_params=True)
    assert grads is not None
    return grads, dx


def mlp_input_grad(net: Mlp, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Input gradient only; skips the parameter gradient products."""
    return _backward(net, x, upstream, want_params=False)[1]


def _backward(
    net: Mlp, x: np.ndarray, upstream: np.ndarray, want_params: bool
) -> tuple[Gradients | None, np.ndarray]:
    xb, single = _as_batch(x, net.n_in, "mlp_backward input")
    ub, _ = _as_batch(upstream, net.n_out, "mlp_backward upstream")
    if ub.shape[0] != xb.shape[0]:
        raise ShapeError(f"mlp_backward: {xb.shape[0]} inputs but {ub.shape[0]} upstream rows")
    out, acts = _forward_cached(net, xb)

    if net.output_activation == "tanh":
        delta = ub * (1.0 - out * out)
    else:
        delta = ub
    gw: list[np.ndarray] = []
    gb: list[np.ndarray] = []
    for k in range(net.n_layers - 1, -1, -1):
        h_in = acts[k]
        if want_params:
            gw.append(delta.T @ h_in)
            gb.append(delta.sum(axis=0))
        delta = delta @ net.weights[k]
        if k > 0:
            delta = delta * (h_in > 0.0)
    dx = delta[0] if single else delta
    if not want_params:
        return None, dx
    return Gradients(gw[::-1], gb[::-1]), dx


def sgd_adam_step(net: Mlp, grads: Gradients, state: AdamState, lr: float) -> Mlp:
    """One Adam descent step, applied in place. Returns ``net`` for chaining."""
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    for k, (gw, gb) in enumerate(zip(grads.weights, grads.biases)):
        if gw.shape != net.weights[k].shape or gb.shape != net.biases[k].shape:
            raise ShapeError(f"layer {k}: gradient shapes do not mirror the network")
        if state.m.weights[k].shape != gw.shape or state.m.biases[k].shape != gb.shape:
            raise ShapeError(f"layer {k}: optimizer state does not match the network")
        if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
            raise NonFiniteError(f"non-finite gradient in layer {k}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(net.params(), grads.params(), state.m.params(), state.v.params()):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net


def polyak_update(target: Mlp, online: Mlp, tau: float) -> Mlp:
    """target <- tau * online + (1 - tau) * target, in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if not target.same_architecture(online):
        raise ShapeError(
            f"architecture mismatch: target {target.layer_sizes} vs online {online.layer_sizes}"
        )
    if tau == 0.0:
        return target
    for pt, po in zip(target.params(), online.params()):
        if tau == 1.0:
            pt[...] = po
        else:
            # written as an increment so identical nets stay bit-identical
            pt += tau * (po - pt)
    return target


def write_mlp(net: Mlp, fh: BinaryIO) -> None:
    fh.write(MAGIC)
    fh.write(struct.pack("<H", FORMAT_VERSION))
    fh.write(struct.pack("<I", len(net.layer_sizes)))
    fh.write(struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes))
    fh.write(struct.pack("<BB", HIDDEN_TAGS[net.hidden_activation], OUTPUT_TAGS[net.output_activation]))
    for w, b in zip(net.weights, net.biases):
        fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def read_mlp(fh: BinaryIO) -> Mlp:
    if fh.read(len(MAGIC)) != MAGIC:
        raise ValueError("not an MLP checkpoint (bad magic)")
    (version,) = struct.unpack("<H", fh.read(2))
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (n,) = struct.unpack("<I", fh.read(4))
    sizes = struct.unpack(f"<{n}I", fh.read(4 * n))
    htag, otag = struct.unpack("<BB", fh.read(2))
    hidden = {v: k for k, v in HIDDEN_TAGS.items()}[htag]
    output = {v: k for k, v in OUTPUT_TAGS.items()}[otag]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(_read_floats(fh, fan_out * fan_in).reshape(fan_out, fan_in))
        biases.append(_read_floats(fh, fan_out))
    return Mlp(sizes, weights, biases, hidden, output)


def _read_floats(fh: BinaryIO, count: int) -> np.ndarray:
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise ValueError("truncated MLP checkpoint")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def mlp_to_bytes(net: Mlp) -> bytes:
    buf = io.BytesIO()
    write_mlp(net, buf)
    return buf.getvalue()


def mlp_from_bytes(data: bytes) -> Mlp:
    return read_mlp(io.BytesIO(data))


def save_mlp(net: Mlp, path: str | Path) -> None:
    with open(path, "wb") as fh:
        write_mlp(net, fh)


def load_mlp(path: str | Path) -> Mlp:
    with open(path, "rb") as fh:
        return read_mlp(fh)
