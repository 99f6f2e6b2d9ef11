"""Convolutional latent semantic encoder with hand-derived gradients.

One tower, applied to both queries and documents::

    local_t = act(conv_weight @ window_t + conv_bias)      per position t
    global_j = max_t local_t[j]                            max-pool
    output = act(sem_weight @ global + sem_bias)           semantic vector

Everything runs in float64 with numpy / scipy.sparse. The batched entry
points (:func:`encode` and :func:`backward_batch`) are what training uses;
:func:`forward` and :func:`backward` are the single-sequence views.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .text import DEFAULT_WINDOW, HashedSequence

FORMAT_VERSION = 1
MAGIC = b"WCLSM\x00"
NORM_EPS = 1e-12

_ACTIVATIONS = {
    # name: (f, f' expressed through the output value)
    "tanh": (np.tanh, lambda y: 1.0 - y * y),
    "relu": (lambda x: np.maximum(x, 0.0), lambda y: (y > 0).astype(y.dtype)),
}


@dataclass(frozen=True)
class Hyper:
    vocab_size: int
    window: int = DEFAULT_WINDOW
    conv_dim: int = 300
    sem_dim: int = 128
    activation: str = "tanh"

    def __post_init__(self):
        for name in ("vocab_size", "window", "conv_dim", "sem_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.window * self.vocab_size


@dataclass(frozen=True)
class ModelParams:
    """Learnable tensors of the encoder. Also used to hold gradients."""

    conv_weight: np.ndarray  # (conv_dim, window * vocab_size)
    conv_bias: np.ndarray    # (conv_dim,)
    sem_weight: np.ndarray   # (sem_dim, conv_dim)
    sem_bias: np.ndarray     # (sem_dim,)
    hyper: Hyper
    seed: int | None = None

    TENSORS = ("conv_weight", "conv_bias", "sem_weight", "sem_bias")

    def __post_init__(self):
        h = self.hyper
        expected = {
            "conv_weight": (h.conv_dim, h.input_dim),
            "conv_bias": (h.conv_dim,),
            "sem_weight": (h.sem_dim, h.conv_dim),
            "sem_bias": (h.sem_dim,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")

    def tensors(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in self.TENSORS]

    def zeros_like(self) -> "ModelParams":
        return replace(self, **{n: np.zeros_like(getattr(self, n)) for n in self.TENSORS})

    def axpy(self, alpha: float, other: "ModelParams") -> "ModelParams":
        """Return ``self + alpha * other`` as new params."""
        return replace(self, **{n: getattr(self, n) + alpha * getattr(other, n)
                                for n in self.TENSORS})

    def scaled(self, alpha: float) -> "ModelParams":
        return replace(self, **{n: alpha * getattr(self, n) for n in self.TENSORS})

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors()])

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(t * t)) for t in self.tensors())))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors())

    def fingerprint(self) -> str:
        """SHA-256 over the hyperparameters and the float32 tensor bytes."""
        h = hashlib.sha256()
        h.update(json.dumps(_hyper_dict(self.hyper), sort_keys=True).encode())
        for t in self.tensors():
            h.update(np.ascontiguousarray(t, dtype="<f4").tobytes())
        return h.hexdigest()


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(hyper: Hyper, seed: int) -> ModelParams:
    """Uniform fan-in/fan-out initialisation; biases start at zero."""
    rng = np.random.default_rng(seed)
    b1 = glorot_bound(hyper.input_dim, hyper.conv_dim)
    b2 = glorot_bound(hyper.conv_dim, hyper.sem_dim)
    return ModelParams(
        conv_weight=rng.uniform(-b1, b1, size=(hyper.conv_dim, hyper.input_dim)),
        conv_bias=np.zeros(hyper.conv_dim),
        sem_weight=rng.uniform(-b2, b2, size=(hyper.sem_dim, hyper.conv_dim)),
        sem_bias=np.zeros(hyper.sem_dim),
        hyper=hyper,
        seed=seed,
    )


@dataclass
class EncodeCache:
    """Everything the backward pass needs from a batched forward pass.

    ``offsets[i]:offsets[i+1]`` are the rows of ``windows``/``local`` that
    belong to sequence ``i``; ``argmax`` holds absolute row indices.
    """

    windows: sp.csr_matrix
    offsets: np.ndarray
    conv_pre: np.ndarray
    local: np.ndarray
    argmax: np.ndarray
    pooled: np.ndarray
    sem_pre: np.ndarray
    output: np.ndarray


@dataclass
class ForwardTrace:
    """Single-sequence forward record (argmax indices are positions)."""

    conv_pre: np.ndarray
    local: np.ndarray
    argmax: np.ndarray
    pooled: np.ndarray
    sem_pre: np.ndarray
    output: np.ndarray
    windows: sp.csr_matrix = field(repr=False)


def _rowdot(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # x @ w.T computed row-independently, so a row's result does not depend
    # on how many other rows share the batch.
    return np.einsum("nc,sc->ns", x, w)


def _check_inputs(params: ModelParams, seqs: Sequence[HashedSequence]) -> None:
    h = params.hyper
    for s in seqs:
        if s.window != h.window or s.vocab_size != h.vocab_size:
            raise ValueError(
                f"sequence built with window={s.window}, vocab={s.vocab_size}; "
                f"model expects window={h.window}, vocab={h.vocab_size}")


def encode(params: ModelParams, seqs: Sequence[HashedSequence]) -> tuple[np.ndarray, EncodeCache]:
    """Batched forward pass; returns ``(n, sem_dim)`` vectors and the cache."""
    if not seqs:
        raise ValueError("nothing to encode")
    _check_inputs(params, seqs)
    act, _ = _ACTIVATIONS[params.hyper.activation]
    lengths = np.array([s.n_positions for s in seqs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    X = sp.vstack([s.windows for s in seqs], format="csr")

    conv_pre = X @ np.ascontiguousarray(params.conv_weight.T) + params.conv_bias
    local = act(conv_pre)
    starts = offsets[:-1]
    pooled = np.maximum.reduceat(local, starts, axis=0)
    # lowest position wins ties
    seg = np.repeat(np.arange(len(seqs)), lengths)
    rows = np.arange(local.shape[0])[:, None]
    cand = np.where(local == pooled[seg], rows, local.shape[0])
    argmax = np.minimum.reduceat(cand, starts, axis=0)

    sem_pre = _rowdot(pooled, params.sem_weight) + params.sem_bias
    output = act(sem_pre)
    return output, EncodeCache(X, offsets, conv_pre, local, argmax, pooled, sem_pre, output)


def backward_batch(params: ModelParams, cache: EncodeCache, grad_output: np.ndarray) -> ModelParams:
    """Gradient of a scalar loss wrt params, given dLoss/d(output) per row."""
    _, dact = _ACTIVATIONS[params.hyper.activation]
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if grad_output.shape != cache.output.shape:
        raise ValueError(f"grad_output shape {grad_output.shape} != {cache.output.shape}")
    d_sem = grad_output * dact(cache.output)
    g_sem_w = np.einsum("ns,nc->sc", d_sem, cache.pooled)
    g_sem_b = d_sem.sum(axis=0)
    d_pooled = np.einsum("ns,sc->nc", d_sem, params.sem_weight)
    d_conv_sel = d_pooled * dact(cache.pooled)

    # max-pool routes each (sequence, channel) gradient to its argmax row
    d_conv = np.zeros_like(cache.local)
    cols = np.broadcast_to(np.arange(d_conv.shape[1]), cache.argmax.shape)
    d_conv[cache.argmax, cols] = d_conv_sel
    g_conv_w = np.asarray(cache.windows.T @ d_conv).T
    g_conv_b = d_conv_sel.sum(axis=0)
    return replace(params, conv_weight=np.ascontiguousarray(g_conv_w), conv_bias=g_conv_b,
                   sem_weight=g_sem_w, sem_bias=g_sem_b)


def forward(params: ModelParams, seq: HashedSequence) -> tuple[np.ndarray, ForwardTrace]:
    out, c = encode(params, [seq])
    trace = ForwardTrace(conv_pre=c.conv_pre, local=c.local, argmax=c.argmax[0],
                         pooled=c.pooled[0], sem_pre=c.sem_pre[0], output=out[0],
                         windows=c.windows)
    return out[0], trace


def replay(params: ModelParams, trace: ForwardTrace) -> np.ndarray:
    """Recompute the semantic vector from a trace's recorded argmax routing."""
    act, _ = _ACTIVATIONS[params.hyper.activation]
    pooled = trace.local[trace.argmax, np.arange(trace.local.shape[1])]
    return act(_rowdot(pooled[None, :], params.sem_weight) + params.sem_bias)[0]


def backward(params: ModelParams, traces: Sequence[ForwardTrace],
             grad_outputs: Sequence[np.ndarray]) -> ModelParams:
    """Sum of parameter gradients over several single-sequence traces."""
    if len(traces) != len(grad_outputs):
        raise ValueError("one upstream gradient per trace is required")
    offsets = np.concatenate([[0], np.cumsum([t.local.shape[0] for t in traces])])
    cache = EncodeCache(
        windows=sp.vstack([t.windows for t in traces], format="csr"),
        offsets=offsets,
        conv_pre=np.vstack([t.conv_pre for t in traces]),
        local=np.vstack([t.local for t in traces]),
        argmax=np.stack([t.argmax + o for t, o in zip(traces, offsets[:-1])]),
        pooled=np.stack([t.pooled for t in traces]),
        sem_pre=np.stack([t.sem_pre for t in traces]),
        output=np.stack([t.output for t in traces]),
    )
    return backward_batch(params, cache, np.stack(grad_outputs))


def cosine(a: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    """Cosine similarity and a degenerate flag (either norm below 1e-12 gives 0)."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < NORM_EPS or nb < NORM_EPS:
        return 0.0, True
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0)), False


def cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine of two equally shaped matrices (degenerate rows give 0)."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    ok = (na >= NORM_EPS) & (nb >= NORM_EPS)
    out = np.zeros(a.shape[0])
    out[ok] = np.einsum("ij,ij->i", a[ok], b[ok]) / (na[ok] * nb[ok])
    return out


def cosine_rows_grad(a: np.ndarray, b: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Back-propagate ``g = dL/dcos`` (one per row) to both arguments."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    ok = (na >= NORM_EPS) & (nb >= NORM_EPS)
    ga = np.zeros_like(a)
    gb = np.zeros_like(b)
    a_, b_, na_, nb_ = a[ok], b[ok], na[ok, None], nb[ok, None]
    cos = np.einsum("ij,ij->i", a_, b_)[:, None] / (na_ * nb_)
    gg = g[ok, None]
    ga[ok] = gg * (b_ / (na_ * nb_) - cos * a_ / na_ ** 2)
    gb[ok] = gg * (a_ / (na_ * nb_) - cos * b_ / nb_ ** 2)
    return ga, gb


# -- checkpoint container ----------------------------------------------------

def _hyper_dict(h: Hyper) -> dict:
    return {"vocab_size": h.vocab_size, "window": h.window, "conv_dim": h.conv_dim,
            "sem_dim": h.sem_dim, "activation": h.activation}


def save_checkpoint(path, params: ModelParams, vocab_trigrams: Sequence[str] | None = None,
                    extra: dict | None = None) -> None:
    """Write header JSON + float32 little-endian tensors; atomic via rename.

    Layout: ``MAGIC``, uint32 header length, UTF-8 JSON header, then
    conv_weight, conv_bias, sem_weight, sem_bias in row-major order.
    """
    header = {
        "format_version": FORMAT_VERSION,
        "hyper": _hyper_dict(params.hyper),
        "seed": params.seed,
        "tensors": [[n, list(getattr(params, n).shape)] for n in ModelParams.TENSORS],
        "dtype": "<f4",
    }
    if vocab_trigrams is not None:
        header["vocab"] = list(vocab_trigrams)
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for t in params.tensors():
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    """Return params (as float64) and the parsed header."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(MAGIC):
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {header.get('format_version')}")
    tensors = {}
    for name, shape in header["tensors"]:
        n = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=pos).reshape(shape)
        tensors[name] = arr.astype(np.float64)
        pos += 4 * n
    if pos != len(raw):
        raise ValueError(f"{path}: trailing bytes after tensors")
    params = ModelParams(hyper=Hyper(**header["hyper"]), seed=header.get("seed"), **tensors)
    return params, header
