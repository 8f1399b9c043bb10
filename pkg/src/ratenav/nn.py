"""Small fully-connected networks with hand-written reverse mode, an
optional inverse-perception front end, and Adam.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``X`` of
shape ``(B, fan_in)`` maps through ``X @ W + b``.
"""
from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

log = logging.getLogger(__name__)


class NumericFault(RuntimeError):
    pass


class TapeError(RuntimeError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    out_dim: int
    hidden: tuple[int, ...] = (64, 64, 64)
    dropout: float = 0.0
    ip_slots: int = 0
    ip_eps: float = 0.01

    def __post_init__(self):
        if len(self.hidden) < 1 or any(w <= 0 for w in self.hidden):
            raise ValueError("need at least one hidden layer with positive width")
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ValueError("input and output widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0 <= self.ip_slots <= self.in_dim:
            raise ValueError("ip_slots out of range")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.in_dim, *self.hidden, self.out_dim)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        if self.ip_slots:
            shapes["ip.beta"] = (self.ip_slots,)
        w = self.widths
        for i in range(len(w) - 1):
            shapes[f"l{i}.W"] = (w[i], w[i + 1])
            shapes[f"l{i}.b"] = (w[i + 1],)
        return shapes

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1


class ParameterStore:
    """Named arrays with a frozen shape registry and a single dtype.

    All arrays are views into one flat buffer. ``version`` increments on
    every in-place update so that tapes recorded against older values can
    be detected.
    """

    def __init__(self, arrays: Mapping[str, np.ndarray], dtype=np.float64):
        self.dtype = np.dtype(dtype)
        arrays = {k: np.asarray(v, dtype=self.dtype) for k, v in arrays.items()}
        self.shapes = {k: v.shape for k, v in arrays.items()}
        self._flat = (np.concatenate([v.ravel() for v in arrays.values()]) if arrays
                      else np.zeros(0, dtype=self.dtype))
        self._bind()
        self.version = 0
        if not np.all(np.isfinite(self._flat)):
            bad = [k for k, v in self._arrays.items() if not np.all(np.isfinite(v))]
            raise NumericFault(f"parameters not finite: {bad}")

    def _bind(self) -> None:
        self._arrays = {}
        self._slices = {}
        i = 0
        for k, shape in self.shapes.items():
            n = int(np.prod(shape))
            self._slices[k] = slice(i, i + n)
            self._arrays[k] = self._flat[i:i + n].reshape(shape)
            i += n

    def __getstate__(self):
        return {"shapes": self.shapes, "flat": self._flat, "version": self.version}

    def __setstate__(self, state):
        self.shapes = state["shapes"]
        self._flat = state["flat"]
        self.dtype = self._flat.dtype
        self.version = state["version"]
        self._bind()

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    def names(self) -> list[str]:
        return list(self._arrays)

    def set(self, name: str, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=self.dtype)
        if value.shape != self.shapes[name]:
            raise ValueError(f"shape mismatch for '{name}': {value.shape} vs {self.shapes[name]}")
        self._arrays[name][...] = value
        self.version += 1

    def bump(self) -> None:
        self.version += 1

    def copy(self) -> "ParameterStore":
        return ParameterStore({k: v.copy() for k, v in self._arrays.items()}, self.dtype)

    def astype(self, dtype) -> "ParameterStore":
        return ParameterStore(dict(self._arrays), dtype)

    def flat(self) -> np.ndarray:
        return self._flat.copy()

    def flat_view(self) -> np.ndarray:
        return self._flat

    def flatten_grads(self, grads: Mapping[str, np.ndarray]) -> np.ndarray:
        out = np.zeros_like(self._flat)
        for k, g in grads.items():
            out[self._slices[k]] = np.ravel(g)
        return out

    def load_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=self.dtype)
        if vec.shape != self._flat.shape:
            raise ValueError("flat vector has the wrong length")
        self._flat[...] = vec
        self.version += 1

    @property
    def size(self) -> int:
        return self._flat.size

    def polyak_from(self, online: "ParameterStore", tau: float) -> None:
        """``self <- tau * online + (1 - tau) * self`` elementwise."""
        self._flat[...] = tau * online._flat + (1.0 - tau) * self._flat
        self.version += 1

    def allclose(self, other: "ParameterStore", atol: float = 0.0) -> bool:
        return self.shapes == other.shapes and bool(np.allclose(self._flat, other._flat, rtol=0, atol=atol))


def init_params(spec: MlpSpec, rng: np.random.Generator, beta_init: float = 0.0,
                dtype=np.float64) -> ParameterStore:
    """Uniform fan-in initialization, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    arrays = {}
    for name, shape in spec.param_shapes().items():
        if name == "ip.beta":
            arrays[name] = np.full(shape, beta_init)
            continue
        layer = int(name[1:name.index(".")])
        bound = 1.0 / np.sqrt(spec.widths[layer])
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ParameterStore(arrays, dtype)


@dataclass
class GradientTape:
    spec: MlpSpec
    store: ParameterStore
    version: int
    x: np.ndarray
    ip_den: np.ndarray | None
    ip_clamped: np.ndarray | None
    layer_inputs: list
    activations: list
    masks: list
    squeeze: bool
    consumed: bool = False
    clamp_events: int = 0


def forward(spec: MlpSpec, params: ParameterStore, x: np.ndarray, mode: str = "eval",
            rng: np.random.Generator | None = None) -> tuple[np.ndarray, GradientTape | None]:
    """Run the network on a vector or a batch.

    ``mode="train"`` applies inverted dropout (drawing masks from ``rng``) and
    returns a tape for :func:`backward`; ``mode="eval"`` is deterministic and
    returns ``None`` for the tape.
    """
    x = np.asarray(x, dtype=params.dtype)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[-1] != spec.in_dim:
        raise ValueError(f"input width {x.shape[-1]} does not match spec {spec.in_dim}")
    train = mode == "train"
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode '{mode}'")
    if train and spec.dropout > 0 and rng is None:
        raise ValueError("train mode with dropout needs an rng")

    den = clamped = None
    clamp_events = 0
    h = x
    n = spec.ip_slots
    if n:
        den = x[:, :n] - params["ip.beta"]
        clamped = den < spec.ip_eps
        clamp_events = int(clamped.sum())
        den = np.where(clamped, spec.ip_eps, den)
        h = np.concatenate([1.0 / den, x[:, n:]], axis=1)

    layer_inputs, activations, masks = [], [], []
    last = spec.n_layers - 1
    for i in range(spec.n_layers):
        layer_inputs.append(h)
        z = h @ params[f"l{i}.W"] + params[f"l{i}.b"]
        if i == last:
            h = z
            break
        a = np.tanh(z)
        activations.append(a)
        mask = None
        if train and spec.dropout > 0:
            keep = 1.0 - spec.dropout
            mask = (rng.random(a.shape, dtype=np.float32) < keep).astype(a.dtype) / a.dtype.type(keep)
            a = a * mask
        masks.append(mask)
        h = a

    if not np.all(np.isfinite(h)):
        digest = hashlib.sha1(params.flat().tobytes()).hexdigest()[:12]
        raise NumericFault(f"non-finite network output (params v{params.version}, sha1 {digest})")
    out = h[0] if squeeze else h
    if not train:
        return out, None
    tape = GradientTape(spec, params, params.version, x, den, clamped, layer_inputs,
                        activations, masks, squeeze, clamp_events=clamp_events)
    return out, tape


def backward(tape: GradientTape, grad_out: np.ndarray,
             param_grads: bool = True) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter and the raw input.

    ``grad_out`` is dLoss/dOutput with the same shape as the forward output.
    With ``param_grads=False`` only the input gradient is computed. A tape
    can be consumed once and only while its parameters are unchanged.
    """
    if tape.consumed:
        raise TapeError("tape already consumed by a backward pass")
    if tape.store.version != tape.version:
        raise TapeError("parameters changed since the forward pass")
    tape.consumed = True
    spec = tape.spec
    params = tape.store
    delta = np.asarray(grad_out, dtype=params.dtype)
    if tape.squeeze:
        delta = delta[None, :]
    grads: dict[str, np.ndarray] = {}
    for i in reversed(range(spec.n_layers)):
        if param_grads:
            grads[f"l{i}.W"] = tape.layer_inputs[i].T @ delta
            grads[f"l{i}.b"] = delta.sum(axis=0)
        dh = delta @ params[f"l{i}.W"].T
        if i == 0:
            break
        a = tape.activations[i - 1]
        mask = tape.masks[i - 1]
        if mask is not None:
            dh = dh * mask
        delta = dh * (1.0 - a * a)
    grad_in = dh
    n = spec.ip_slots
    if n:
        inv2 = np.where(tape.ip_clamped, 0.0, 1.0 / (tape.ip_den * tape.ip_den))
        dp = grad_in[:, :n]
        if param_grads:
            grads["ip.beta"] = (dp * inv2).sum(axis=0)
        grad_in = np.concatenate([-dp * inv2, grad_in[:, n:]], axis=1)
    if tape.squeeze:
        grad_in = grad_in[0]
    return grads, grad_in


class Adam:
    """Adam with bias correction. Rejects steps whose gradients are not finite."""

    def __init__(self, store: ParameterStore, lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(store.size, dtype=store.dtype)
        self.v = np.zeros(store.size, dtype=store.dtype)
        self.t = 0
        self.rejected = 0

    def step(self, grads: Mapping[str, np.ndarray]) -> bool:
        unknown = set(grads) - set(self.store.shapes)
        if unknown:
            raise KeyError(f"unknown gradient names {unknown}")
        g = self.store.flatten_grads(grads)
        if not np.all(np.isfinite(g)):
            self.rejected += 1
            log.warning("non-finite gradient, Adam step rejected (total %d)", self.rejected)
            return False
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1.0 - b1) * g
        self.v *= b2
        self.v += (1.0 - b2) * g * g
        m_hat = self.m / (1.0 - b1 ** self.t)
        v_hat = self.v / (1.0 - b2 ** self.t)
        self.store.flat_view()[...] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        self.store.bump()
        return True


# ----------------------------------------------------------------------
# Checkpoint files
# ----------------------------------------------------------------------

MAGIC = b"RNAVCKPT"
FORMAT_VERSION = 1


def spec_hash(obj) -> str:
    """Stable digest of a JSON-able description (dataclasses allowed)."""
    def default(o):
        if hasattr(o, "__dataclass_fields__"):
            return asdict(o)
        raise TypeError(type(o))
    text = json.dumps(obj, sort_keys=True, default=default)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_checkpoint(path: str | Path, stores: Mapping[str, ParameterStore], header: dict | None = None) -> None:
    """Write stores as little-endian float64 blobs behind a JSON header.

    Layout: magic, ``<I`` format version, ``<Q`` header length, header JSON,
    then the arrays in header order.
    """
    header = dict(header or {})
    index = []
    blobs = []
    for net, store in stores.items():
        for name, arr in store.items():
            index.append({"net": net, "name": name, "shape": list(arr.shape), "dtype": store.dtype.name})
            blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header["format_version"] = FORMAT_VERSION
    header["arrays"] = index
    raw = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(raw)))
        fh.write(raw)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, ParameterStore], dict]:
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<IQ", data, off)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format {version}")
    off += struct.calcsize("<IQ")
    header = json.loads(data[off:off + hlen].decode())
    off += hlen
    arrays: dict[str, dict[str, np.ndarray]] = {}
    dtypes: dict[str, str] = {}
    for entry in header["arrays"]:
        n = int(np.prod(entry["shape"]))
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(entry["shape"])
        off += 8 * n
        arrays.setdefault(entry["net"], {})[entry["name"]] = arr.astype(np.float64)
        dtypes[entry["net"]] = entry.get("dtype", "float64")
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes after arrays")
    return {net: ParameterStore(a, dtypes[net]) for net, a in arrays.items()}, header
