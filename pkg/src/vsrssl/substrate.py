"""Differentiable-computation plumbing: parameter stores, seeded RNG streams,
forward/backward evaluation and a finite-difference gradient checker.

Autodiff itself is torch's; everything here wraps it behind a small contract
so that model code and tests talk about named parameter stores rather than
``nn.Module`` internals.
"""
from __future__ import annotations

import hashlib
import io
import math
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Mapping

import numpy as np
import torch
from torch.overrides import TorchFunctionMode

MAGIC = b"LIRA"
FORMAT_VERSION = 1

# dtype tag <-> numpy dtype (always little-endian on disk)
_DTYPE_TAGS: dict[int, np.dtype] = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("<i4"),
    3: np.dtype("<i8"),
    4: np.dtype("u1"),
}
_TAG_OF = {dt.str.lstrip("<|"): tag for tag, dt in _DTYPE_TAGS.items()}


class ShapeError(ValueError):
    """A primitive received operands of incompatible shapes."""

    def __init__(self, primitive: str, message: str):
        super().__init__(f"{primitive}: {message}")
        self.primitive = primitive


class NonDeterministicProgram(ValueError):
    pass


@dataclass(frozen=True)
class TensorSpec:
    shape: tuple[int, ...]
    dtype: str = "f32"

    def __post_init__(self):
        if len(self.shape) < 1:
            raise ValueError("TensorSpec needs rank >= 1")
        if any(int(e) < 1 for e in self.shape):
            raise ValueError(f"extents must be >= 1, got {self.shape}")
        if self.dtype not in ("f32", "f64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    @property
    def numel(self) -> int:
        return math.prod(self.shape)

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float32 if self.dtype == "f32" else torch.float64


# --------------------------------------------------------------------------
# Parameter store
# --------------------------------------------------------------------------


def _to_numpy(value: Any) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        return value.detach().cpu().numpy()
    return np.asarray(value)


class ParameterStore(Mapping[str, torch.Tensor]):
    """Ordered map of hierarchical names ("a/b/weight") to tensors.

    Iteration order is insertion order. Values are CPU tensors; numpy arrays
    are accepted on insertion and converted.
    """

    def __init__(self, items: Iterable[tuple[str, Any]] | Mapping[str, Any] = ()):
        self._data: OrderedDict[str, torch.Tensor] = OrderedDict()
        if isinstance(items, Mapping):
            items = items.items()
        for name, value in items:
            self[name] = value

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._data[name]

    def __setitem__(self, name: str, value: Any) -> None:
        if not name:
            raise ValueError("parameter names must be non-empty")
        if not isinstance(value, torch.Tensor):
            value = torch.from_numpy(np.ascontiguousarray(value))
        self._data[name] = value

    def __iter__(self) -> Iterator[str]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def __repr__(self) -> str:
        return f"ParameterStore({len(self)} entries, {self.numel()} elements)"

    def numel(self) -> int:
        return sum(v.numel() for v in self._data.values())

    def select(self, prefix: str, strip: bool = False) -> "ParameterStore":
        """Entries whose name starts with ``prefix`` (e.g. ``"encoder/"``)."""
        out = ParameterStore()
        for k, v in self._data.items():
            if k.startswith(prefix):
                out[k[len(prefix):] if strip else k] = v
        return out

    def map(self, fn: Callable[[torch.Tensor], torch.Tensor]) -> "ParameterStore":
        return ParameterStore((k, fn(v)) for k, v in self._data.items())

    def clone(self) -> "ParameterStore":
        return self.map(lambda v: v.detach().clone())

    # serialization -------------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<HI", FORMAT_VERSION, len(self._data)))
        for name, value in self._data.items():
            arr = _to_numpy(value)
            if arr.ndim < 1:
                raise ValueError(f"{name}: rank-0 tensors cannot be stored")
            if arr.ndim > 255:
                raise ValueError(f"{name}: rank too large")
            if 0 in arr.shape:
                raise ValueError(f"{name}: zero extent in shape {arr.shape}")
            key = arr.dtype.newbyteorder("<").str.lstrip("<|")
            if arr.dtype == np.bool_:
                arr, key = arr.astype(np.uint8), "u1"
            if key not in _TAG_OF:
                raise ValueError(f"{name}: unsupported dtype {arr.dtype}")
            tag = _TAG_OF[key]
            raw_name = name.encode("utf-8")
            buf.write(struct.pack("<H", len(raw_name)))
            buf.write(raw_name)
            buf.write(struct.pack("<BB", tag, arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[tag]).tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ParameterStore":
        if data[:4] != MAGIC:
            raise ValueError("not a parameter store file (bad magic)")
        version, count = struct.unpack_from("<HI", data, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported format version {version}")
        pos = 10
        store = cls()
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            tag, rank = struct.unpack_from("<BB", data, pos)
            pos += 2
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            dt = _DTYPE_TAGS[tag]
            nbytes = math.prod(shape) * dt.itemsize
            arr = np.frombuffer(data, dtype=dt, count=math.prod(shape), offset=pos)
            pos += nbytes
            store[name] = arr.reshape(shape).astype(dt.newbyteorder("="), copy=True)
        if pos != len(data):
            raise ValueError("trailing bytes after last entry")
        return store

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "ParameterStore":
        return cls.from_bytes(Path(path).read_bytes())

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    # nn.Module bridge ------------------------------------------------------

    @classmethod
    def from_module(cls, module: torch.nn.Module, prefix: str = "") -> "ParameterStore":
        return cls(
            (prefix + name.replace(".", "/"), p.detach().clone())
            for name, p in module.named_parameters()
        )

    def load_into(self, module: torch.nn.Module, prefix: str = "", strict: bool = True) -> list[str]:
        """Copy matching entries into ``module``; returns the names loaded."""
        loaded = []
        params = dict(module.named_parameters())
        for name, p in params.items():
            key = prefix + name.replace(".", "/")
            if key not in self._data:
                if strict:
                    raise KeyError(f"missing parameter {key!r}")
                continue
            value = self._data[key]
            if tuple(value.shape) != tuple(p.shape):
                raise ShapeError("load_into", f"{key}: stored {tuple(value.shape)} vs model {tuple(p.shape)}")
            with torch.no_grad():
                p.copy_(value.to(p.dtype))
            loaded.append(key)
        return loaded


def module_digest(module: torch.nn.Module, prefix: str = "") -> str:
    return ParameterStore.from_module(module, prefix).digest()


# --------------------------------------------------------------------------
# Counter-based RNG
# --------------------------------------------------------------------------


def _mix_seed(seed: int, tag: Any) -> int:
    h = hashlib.blake2b(f"{seed}:{tag}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


class RngStream:
    """Seeded stream of draws on a Philox counter generator.

    Every draw call, whatever its size, consumes exactly one counter slot:
    draw ``k`` reads from Philox block ``k << 128`` under key ``seed``. Two
    streams with the same seed yield identical values for identical call
    sequences, independently of what else the process does.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) % (1 << 64)
        self.counter = int(counter)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, counter={self.counter})"

    def _gen(self) -> np.random.Generator:
        bitgen = np.random.Philox(key=self.seed, counter=self.counter << 128)
        self.counter += 1
        return np.random.Generator(bitgen)

    def child(self, tag: Any) -> "RngStream":
        """Independent stream derived from (seed, tag); does not advance self."""
        return RngStream(_mix_seed(self.seed, tag))

    def uniform01(self, size=None):
        return self._gen().random(size)

    def normal01(self, size=None):
        return self._gen().standard_normal(size)

    def permutation(self, n: int) -> np.ndarray:
        if n < 1:
            raise ValueError(f"permutation needs n >= 1, got {n}")
        return self._gen().permutation(n)

    def bernoulli(self, p: float, size=None):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"bernoulli p must lie in [0, 1], got {p}")
        return self._gen().random(size) < p

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high)."""
        return self._gen().integers(low, high, size)

    def beta(self, a: float, b: float) -> float:
        return float(self._gen().beta(a, b))

    def torch_seed(self) -> int:
        return int(self.integers(0, 2**62))


def draw(rng: RngStream, kind: str, **kw):
    """Dispatch by kind name: uniform01, normal01, permutation, bernoulli."""
    fns = {
        "uniform01": rng.uniform01,
        "normal01": rng.normal01,
        "permutation": rng.permutation,
        "bernoulli": rng.bernoulli,
    }
    if kind not in fns:
        raise ValueError(f"unknown draw kind {kind!r}")
    return fns[kind](**kw)


# --------------------------------------------------------------------------
# Forward/backward and gradient checking
# --------------------------------------------------------------------------


class _PrimitiveTracker(TorchFunctionMode):
    """Remembers the most recent torch function so failures can name it."""

    def __init__(self):
        super().__init__()
        self.last = "<none>"

    def __torch_function__(self, func, types, args=(), kwargs=None):
        name = getattr(func, "__name__", None) or str(func)
        self.last = name
        try:
            return func(*args, **(kwargs or {}))
        except RuntimeError as exc:
            msg = str(exc)
            if "shape" in msg or "size" in msg or "dimension" in msg:
                raise ShapeError(name, msg) from exc
            raise


Program = Callable[[Any, ParameterStore], Any]


def _split_loss(result) -> tuple[torch.Tensor, Any]:
    if isinstance(result, tuple):
        loss, outputs = result[0], result[1:] if len(result) > 2 else result[1]
    else:
        loss, outputs = result, None
    if not isinstance(loss, torch.Tensor) or loss.numel() != 1 or loss.dim() > 1:
        shape = tuple(loss.shape) if isinstance(loss, torch.Tensor) else type(loss).__name__
        raise ValueError(f"program must return a scalar loss, got shape {shape}")
    return loss.reshape(()), outputs


def forward_backward(program: Program, inputs: Any, params: ParameterStore):
    """Evaluate ``program(inputs, params)`` and differentiate its loss.

    ``program`` returns a scalar loss, or ``(loss, outputs)``. Returns
    ``(outputs, grads)`` where ``grads`` is keyed like ``params``; parameters
    the loss does not reach get zero tensors.
    """
    live = ParameterStore((k, v.detach().clone().requires_grad_(True)) for k, v in params.items())
    with _PrimitiveTracker():
        loss, outputs = _split_loss(program(inputs, live))
    tensors = list(live.values())
    if loss.requires_grad and tensors:
        grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    else:
        grads = [None] * len(tensors)
    out = ParameterStore()
    for (name, p), g in zip(live.items(), grads):
        out[name] = torch.zeros_like(p.detach()) if g is None else g.detach()
    if outputs is None:
        outputs = loss.detach()
    return outputs, out


GRAD_CHECK_MAX_ELEMENTS = 20_000


def grad_check(program: Program, inputs: Any, params: ParameterStore, epsilon: float = 1e-5) -> float:
    """Max relative error between autodiff and central-difference gradients.

    Per element: |a - c| / max(|a|, |c|, 1e-12). Requires f64 parameters and
    a deterministic program (checked by evaluating the base point twice).
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    for name, v in params.items():
        if v.dtype != torch.float64:
            raise TypeError(f"{name}: grad_check needs float64 parameters, got {v.dtype}")
    if params.numel() > GRAD_CHECK_MAX_ELEMENTS:
        raise ValueError(f"{params.numel()} parameter elements exceeds cap {GRAD_CHECK_MAX_ELEMENTS}")

    def loss_at(store: ParameterStore) -> float:
        with torch.no_grad():
            loss, _ = _split_loss(program(inputs, store))
        return float(loss)

    base = params.clone()
    if loss_at(base) != loss_at(base):
        raise NonDeterministicProgram("program output differs between identical evaluations (dropout active?)")
    _, analytic = forward_backward(program, inputs, params)

    worst = 0.0
    for name in base:
        flat = base[name].view(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + epsilon
            up = loss_at(base)
            flat[i] = orig - epsilon
            down = loss_at(base)
            flat[i] = orig
            c = (up - down) / (2 * epsilon)
            a = a_flat[i].item()
            err = abs(a - c) / max(abs(a), abs(c), 1e-12)
            worst = max(worst, err)
    return worst


class _Applied(torch.nn.Module):
    def __init__(self, inner: torch.nn.Module, fn):
        super().__init__()
        self.inner = inner
        self.fn = fn

    def forward(self, inputs):
        return self.fn(self.inner, inputs)


def module_program(module: torch.nn.Module, fn: Callable[[torch.nn.Module, Any], Any]) -> Program:
    """Adapt ``fn(module, inputs)`` into a program over a ParameterStore.

    Store names are the module's parameter names with "/" separators
    (as produced by ``ParameterStore.from_module``).
    """
    from torch.func import functional_call

    wrapped = _Applied(module, fn)

    def program(inputs, params: ParameterStore):
        mapping = {"inner." + k.replace("/", "."): v for k, v in params.items()}
        return functional_call(wrapped, mapping, (inputs,), strict=False)

    return program
