"""Contractive autoencoder over square spectrograms.

Parameters live in one flat float64 vector; every forward pass slices
per-layer views out of it, which keeps gradients with respect to the whole
model a single array. Forward and backward passes run in torch (float64).
"""

from __future__ import annotations

import hashlib
import logging
import struct
import zlib
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F

from . import _binio
from .errors import DomainError, FormatError, NumericError, TrainingError

log = logging.getLogger(__name__)

PARAM_MAGIC = b"CAEP"
PARAM_VERSION = 1
KINDS = ("linear", "mlp", "conv")
DTYPE = torch.float64

_ACTIVATIONS = {
    "identity": lambda h: h,
    "tanh": torch.tanh,
    "sigmoid": torch.sigmoid,
    "softplus": F.softplus,
}


class Layer(NamedTuple):
    name: str
    op: str  # dense | conv | convT
    weight_shape: tuple
    bias_shape: tuple
    stride: int
    padding: int
    activation: str

    @property
    def size(self):
        return int(np.prod(self.weight_shape)) + int(np.prod(self.bias_shape))

    @property
    def fan_in(self):
        if self.op == "dense":
            return self.weight_shape[1]
        in_ch, k = (self.weight_shape[1], self.weight_shape[2]) if self.op == "conv" else (self.weight_shape[0], self.weight_shape[2])
        return max(1, in_ch * k * k // (self.stride * self.stride if self.op == "convT" else 1))


@dataclass(frozen=True)
class CaeArchitecture:
    kind: str
    side: int
    d_r: int = 32
    widths: tuple = (8, 16)
    activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.kind not in KINDS:
            raise DomainError(f"unknown architecture kind {self.kind!r}; choose from {KINDS}")
        if self.kind == "linear" and self.widths:
            raise DomainError("a linear autoencoder has no hidden widths")
        for act in (self.activation, self.output_activation):
            if act not in _ACTIVATIONS:
                raise DomainError(f"unknown activation {act!r}")
        if self.side < 1 or self.d_r < 1:
            raise DomainError(f"side and d_r must be positive, got side={self.side}, d_r={self.d_r}")
        if self.d_r > self.side * self.side:
            raise DomainError(f"d_r={self.d_r} exceeds the input size {self.side}x{self.side}")
        if self.kind == "conv":
            if not self.widths:
                raise DomainError("a conv autoencoder needs at least one channel width")
            if self.side % (1 << len(self.widths)):
                raise DomainError(f"side {self.side} is not divisible by 2**{len(self.widths)} for the stride-2 stack")

    @classmethod
    def linear(cls, side, d_r):
        return cls("linear", side, d_r, (), "identity", "identity")

    @property
    def input_dim(self):
        return self.side * self.side

    def encoder_layers(self) -> list[Layer]:
        if self.kind == "conv":
            layers, ch = [], 1
            for i, w in enumerate(self.widths):
                layers.append(Layer(f"enc{i}", "conv", (w, ch, 4, 4), (w,), 2, 1, self.activation))
                ch = w
            k = self.side >> len(self.widths)
            layers.append(Layer(f"enc{len(self.widths)}", "conv", (self.d_r, ch, k, k), (self.d_r,), 1, 0, "identity"))
            return layers
        dims = [self.input_dim, *self.widths, self.d_r]
        act = "identity" if self.kind == "linear" else self.activation
        return [
            Layer(f"enc{i}", "dense", (dims[i + 1], dims[i]), (dims[i + 1],), 1, 0,
                  "identity" if i == len(dims) - 2 else act)
            for i in range(len(dims) - 1)
        ]

    def decoder_layers(self) -> list[Layer]:
        if self.kind == "conv":
            rev = list(reversed(self.widths))
            k = self.side >> len(self.widths)
            layers = [Layer("dec0", "convT", (self.d_r, rev[0], k, k), (rev[0],), 1, 0, self.activation)]
            outs = rev[1:] + [1]
            for i, (cin, cout) in enumerate(zip(rev, outs), start=1):
                act = self.output_activation if cout == 1 and i == len(rev) else self.activation
                layers.append(Layer(f"dec{i}", "convT", (cin, cout, 4, 4), (cout,), 2, 1, act))
            return layers
        dims = [self.d_r, *reversed(self.widths), self.input_dim]
        act = "identity" if self.kind == "linear" else self.activation
        last = "identity" if self.kind == "linear" else self.output_activation
        return [
            Layer(f"dec{i}", "dense", (dims[i + 1], dims[i]), (dims[i + 1],), 1, 0,
                  last if i == len(dims) - 2 else act)
            for i in range(len(dims) - 1)
        ]

    def layers(self) -> list[Layer]:
        return self.encoder_layers() + self.decoder_layers()

    @property
    def param_count(self) -> int:
        return sum(layer.size for layer in self.layers())

    def descriptor(self) -> str:
        widths = ",".join(str(w) for w in self.widths)
        return (f"kind={self.kind};side={self.side};d_r={self.d_r};widths={widths};"
                f"activation={self.activation};output={self.output_activation}")

    @classmethod
    def from_descriptor(cls, text: str) -> "CaeArchitecture":
        try:
            kv = dict(item.split("=", 1) for item in text.split(";"))
            widths = tuple(int(w) for w in kv["widths"].split(",") if w)
            return cls(kv["kind"], int(kv["side"]), int(kv["d_r"]), widths, kv["activation"], kv["output"])
        except (KeyError, ValueError) as exc:
            raise FormatError(f"unreadable architecture descriptor {text!r}") from exc


@dataclass(frozen=True, eq=False)
class CaeParams:
    arch: CaeArchitecture
    vector: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vector, dtype=np.float64)
        if v.shape != (self.arch.param_count,):
            raise DomainError(f"expected {self.arch.param_count} parameters for {self.arch.descriptor()}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NumericError("parameter vector contains non-finite entries")
        object.__setattr__(self, "vector", v)

    @property
    def count(self) -> int:
        return self.vector.size

    def views(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        out, at = {}, 0
        for layer in self.arch.layers():
            nw = int(np.prod(layer.weight_shape))
            nb = int(np.prod(layer.bias_shape))
            out[layer.name] = (self.vector[at:at + nw].reshape(layer.weight_shape),
                               self.vector[at + nw:at + nw + nb])
            at += nw + nb
        return out

    def as_float32(self) -> "CaeParams":
        return CaeParams(self.arch, self.vector.astype(np.float32).astype(np.float64))

    def checksum(self) -> int:
        h = hashlib.blake2b(digest_size=8)
        h.update(self.arch.descriptor().encode())
        h.update(self.vector.astype("<f8").tobytes())
        return int.from_bytes(h.digest(), "little")


def init_params(arch: CaeArchitecture, seed: int = 0) -> CaeParams:
    """Fan-in scaled uniform weights, zero biases, rounded to float32."""
    rng = np.random.default_rng(seed)
    parts = []
    for layer in arch.layers():
        bound = 1.0 / np.sqrt(layer.fan_in)
        parts.append(rng.uniform(-bound, bound, size=int(np.prod(layer.weight_shape))))
        parts.append(np.zeros(int(np.prod(layer.bias_shape))))
    return CaeParams(arch, np.concatenate(parts)).as_float32()


def zero_params(arch: CaeArchitecture) -> CaeParams:
    return CaeParams(arch, np.zeros(arch.param_count))


# -- torch forward passes ---------------------------------------------------

def _unflatten(arch, theta):
    out, at = [], 0
    for layer in arch.layers():
        nw = int(np.prod(layer.weight_shape))
        nb = int(np.prod(layer.bias_shape))
        out.append((layer, theta[at:at + nw].view(layer.weight_shape), theta[at + nw:at + nw + nb]))
        at += nw + nb
    return out


def _run(stack, h, check):
    for layer, w, b in stack:
        if layer.op == "dense":
            h = F.linear(h, w, b)
        elif layer.op == "conv":
            h = F.conv2d(h, w, b, stride=layer.stride, padding=layer.padding)
        else:
            h = F.conv_transpose2d(h, w, b, stride=layer.stride, padding=layer.padding)
        h = _ACTIVATIONS[layer.activation](h)
        if check and not torch.isfinite(h).all():
            raise NumericError(f"non-finite activation in layer {layer.name}")
    return h


def _encode_t(arch, stack, x, check=False):
    n_enc = len(arch.encoder_layers())
    B = x.shape[0]
    h = x.reshape(B, 1, arch.side, arch.side) if arch.kind == "conv" else x.reshape(B, -1)
    return _run(stack[:n_enc], h, check).reshape(B, arch.d_r)


def _decode_t(arch, stack, e, check=False):
    n_enc = len(arch.encoder_layers())
    B = e.shape[0]
    h = e.reshape(B, arch.d_r, 1, 1) if arch.kind == "conv" else e
    return _run(stack[n_enc:], h, check).reshape(B, arch.side, arch.side)


def _jacobian_sq_norm(e, x, create_graph):
    """Per-sample squared Frobenius norm of de/dx, one reverse pass per embedding unit."""
    total = torch.zeros(x.shape[0], dtype=x.dtype)
    for i in range(e.shape[1]):
        (g,) = torch.autograd.grad(e[:, i].sum(), x, create_graph=create_graph,
                                   retain_graph=True, allow_unused=True)
        if g is not None:
            total = total + (g * g).reshape(x.shape[0], -1).sum(1)
    return total


def _objective(arch, theta, x, lam, *, need_con=True, create_graph=True):
    """Per-sample reconstruction and contraction terms as torch tensors."""
    stack = _unflatten(arch, theta)
    if need_con:
        x = x.detach().requires_grad_(True)
    e = _encode_t(arch, stack, x)
    r = _decode_t(arch, stack, e)
    rec = ((x - r) ** 2).reshape(x.shape[0], -1).sum(1)
    if need_con:
        con = _jacobian_sq_norm(e, x, create_graph=create_graph)
    else:
        con = torch.zeros_like(rec)
    return rec, con


def _as_batch(arch, data):
    x = np.asarray(data, dtype=np.float64)
    if x.shape == (arch.side, arch.side):
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (arch.side, arch.side):
        raise DomainError(f"expected {arch.side}x{arch.side} spectrograms, got shape {np.shape(data)}")
    if x.shape[0] == 0:
        raise DomainError("empty batch")
    return torch.from_numpy(x)


def _theta(params, requires_grad=False):
    return torch.tensor(params.vector, dtype=DTYPE, requires_grad=requires_grad)


def encode_batch(params: CaeParams, batch) -> np.ndarray:
    x = _as_batch(params.arch, batch)
    with torch.no_grad():
        e = _encode_t(params.arch, _unflatten(params.arch, _theta(params)), x, check=True)
    return e.numpy()


def encode(params: CaeParams, spectrogram) -> np.ndarray:
    if np.shape(spectrogram) != (params.arch.side, params.arch.side):
        raise DomainError(f"expected a {params.arch.side}x{params.arch.side} spectrogram, got {np.shape(spectrogram)}")
    return encode_batch(params, spectrogram)[0]


def decode(params: CaeParams, embedding) -> np.ndarray:
    arch = params.arch
    z = np.asarray(embedding, dtype=np.float64)
    if z.shape != (arch.d_r,):
        raise DomainError(f"expected an embedding of length {arch.d_r}, got shape {z.shape}")
    with torch.no_grad():
        r = _decode_t(arch, _unflatten(arch, _theta(params)), torch.from_numpy(z)[None], check=True)
    return r[0].numpy()


def _finite(value, what):
    if not np.isfinite(value):
        raise NumericError(f"{what} is not finite")
    return value


def loss_rec(params: CaeParams, spectrogram) -> float:
    """Squared Frobenius distance between the input and its reconstruction."""
    x = _as_batch(params.arch, spectrogram)
    with torch.no_grad():
        rec, _ = _objective(params.arch, _theta(params), x, 0.0, need_con=False)
    return _finite(float(rec.sum()), "reconstruction loss")


def loss_con(params: CaeParams, spectrogram) -> float:
    """Squared Frobenius norm of the encoder Jacobian at the input."""
    x = _as_batch(params.arch, spectrogram)
    _, con = _objective(params.arch, _theta(params), x, 0.0, create_graph=False)
    return _finite(float(con.sum()), "contraction loss")


def loss_terms(params: CaeParams, batch) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample (reconstruction, contraction) losses."""
    x = _as_batch(params.arch, batch)
    rec, con = _objective(params.arch, _theta(params), x, 0.0, create_graph=False)
    return rec.detach().numpy(), con.detach().numpy()


def loss_total(params: CaeParams, batch, lam: float) -> float:
    rec, con = loss_terms(params, batch)
    return _finite(float(np.mean(rec + lam * con)), "total loss")


def grad_total(params: CaeParams, batch, lam: float) -> np.ndarray:
    """Exact gradient of the batch-mean objective, second-order contraction term included."""
    x = _as_batch(params.arch, batch)
    theta = _theta(params, requires_grad=True)
    rec, con = _objective(params.arch, theta, x, lam, need_con=lam != 0)
    loss = (rec + lam * con).mean()
    (g,) = torch.autograd.grad(loss, theta, allow_unused=True)
    g = torch.zeros_like(theta) if g is None else g
    out = g.detach().numpy().copy()
    if not np.all(np.isfinite(out)):
        raise NumericError("gradient contains non-finite entries")
    return out


# -- training ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.5
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.lam < 0:
            raise DomainError(f"lambda must be non-negative, got {self.lam}")
        if self.learning_rate <= 0:
            raise DomainError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 0:
            raise DomainError("batch_size must be >= 1 and epochs >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise DomainError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainHistory:
    total: list[float] = field(default_factory=list)
    rec: list[float] = field(default_factory=list)
    con: list[float] = field(default_factory=list)


@dataclass
class TrainResult:
    params: CaeParams
    history: TrainHistory


def train(dataset, arch: CaeArchitecture, config: TrainConfig = TrainConfig(),
          init: CaeParams | None = None) -> TrainResult:
    """Seeded mini-batch training; returns float32-representable parameters.

    Epoch statistics are sample-weighted means of the losses seen during
    that epoch's updates.
    """
    data = _as_batch(arch, dataset)
    params = init if init is not None else init_params(arch, config.seed)
    if params.arch != arch:
        raise DomainError(f"initial parameters are for {params.arch.descriptor()}, not {arch.descriptor()}")
    history = TrainHistory()
    if config.epochs == 0:
        return TrainResult(params, history)

    theta = _theta(params, requires_grad=True)
    if config.optimizer == "adam":
        opt = torch.optim.Adam([theta], lr=config.learning_rate)
    else:
        opt = torch.optim.SGD([theta], lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    N = data.shape[0]
    need_con_grad = config.lam != 0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(N)
        sums = np.zeros(3)
        for start in range(0, N, config.batch_size):
            idx = torch.from_numpy(order[start:start + config.batch_size])
            xb = data[idx]
            rec, con = _objective(arch, theta, xb, config.lam, create_graph=need_con_grad)
            loss = (rec + config.lam * con).mean()
            if not torch.isfinite(loss.detach()):
                raise TrainingError(f"loss became non-finite in epoch {epoch}", epoch=epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            b = xb.shape[0]
            sums += b * np.array([loss.item(), rec.detach().mean().item(), con.detach().mean().item()])
        history.total.append(sums[0] / N)
        history.rec.append(sums[1] / N)
        history.con.append(sums[2] / N)
        if epoch == 1 or epoch % 25 == 0 or epoch == config.epochs:
            log.info("epoch %d: total %.5g rec %.5g con %.5g", epoch, *(sums / N))

    final = theta.detach().numpy()
    if not np.all(np.isfinite(final)):
        raise TrainingError("parameters became non-finite", epoch=config.epochs)
    return TrainResult(CaeParams(arch, final).as_float32(), history)


# -- persistence ------------------------------------------------------------

def save_params(params: CaeParams, path) -> None:
    v32 = params.vector.astype("<f4")
    if not np.array_equal(v32.astype(np.float64), params.vector):
        raise DomainError("parameters are not exactly representable as float32; use params.as_float32()")
    desc = params.arch.descriptor().encode()
    body = (PARAM_MAGIC + struct.pack("<HH", PARAM_VERSION, len(desc)) + desc
            + struct.pack("<Q", params.count) + v32.tobytes())
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))


def load_params(path, expected: CaeArchitecture | None = None) -> CaeParams:
    with open(path, "rb") as fh:
        data = fh.read()
    what = f"parameter file {path}"
    if len(data) < 4:
        raise FormatError(f"{what}: truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    r = _binio.Reader(body, what)
    r.magic(PARAM_MAGIC)
    r.version(PARAM_VERSION)
    if zlib.crc32(body) != crc:
        raise FormatError(f"{what}: CRC32 mismatch")
    (n,) = r.unpack("<H")
    arch = CaeArchitecture.from_descriptor(r.take(n).decode("utf-8", errors="replace"))
    (count,) = r.unpack("<Q")
    if count != arch.param_count:
        raise FormatError(f"{what}: header says {count} parameters, {arch.descriptor()} needs {arch.param_count}")
    vec = np.frombuffer(r.take(4 * count), dtype="<f4").astype(np.float64)
    r.done()
    if expected is not None and expected != arch:
        raise FormatError(f"{what}: architecture mismatch, file has {arch.descriptor()}, expected {expected.descriptor()}")
    return CaeParams(arch, vec)
