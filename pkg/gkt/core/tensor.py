"""Dense float64 tensors with a define-by-run reverse-mode tape.

Ops are plain functions over :class:`Tensor` values. When a :class:`Tape` is
active (``with Tape() as tape:``) every op whose inputs require gradients is
appended to it; ``tape.gradient(root, sources)`` then walks the record in
strict reverse creation order. Gradients live on the tape, never on the
tensors, so several threads can each run their own tape over shared
parameters.

Complex values follow the conjugate convention: for a real loss L the
gradient carried for a complex value z is dL/dRe(z) + i dL/dIm(z).
"""
from __future__ import annotations

import contextvars
import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from gkt.config.constants import LAYER_NORM_EPS
from gkt.core.cost_meter import record_buffer, record_macs
from gkt.errors import ConfigError, DimensionError, NumericalError, UnsupportedSizeError

logger = logging.getLogger(__name__)

GradFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_ids = itertools.count()
_ACTIVE_TAPE: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "gkt_active_tape", default=None
)


class Tensor:
    """Immutable-by-convention n-d array of float64 (or complex128) values."""

    __array_ufunc__ = None  # ndarray <op> Tensor defers to the Tensor operators

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None) -> None:
        arr = np.array(data.data if isinstance(data, Tensor) else data)
        dtype = np.complex128 if np.iscomplexobj(arr) else np.float64
        self.data = np.ascontiguousarray(arr, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.id = next(_ids)

    @staticmethod
    def _wrap(data: np.ndarray, requires_grad: bool) -> "Tensor":
        cls = ComplexTensor if np.iscomplexobj(data) else Tensor
        obj = cls.__new__(cls)
        obj.data = data
        obj.requires_grad = requires_grad
        obj.name = None
        obj.id = next(_ids)
        return obj

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.data)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return self.data.reshape(-1)[0].item()

    def __array__(self, dtype=None, copy=None) -> np.ndarray:
        return self.data if dtype is None else self.data.astype(dtype)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"{type(self).__name__}(shape={self.shape}{flag})"

    # -- operators -----------------------------------------------------
    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        return div(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def __rmatmul__(self, other) -> "Tensor":
        return matmul(other, self)

    def __getitem__(self, index) -> "Tensor":
        return getitem(self, index)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)


class ComplexTensor(Tensor):
    """Tensor of complex128 values, produced by FFTs and spectral weights."""

    def real(self) -> Tensor:
        return real(self)

    @classmethod
    def from_pair(cls, pair: Tensor) -> "ComplexTensor":
        return complex_from_pair(pair)


class Parameter(Tensor):
    """Trainable leaf; the optimizer replaces ``data`` in place of mutating it."""

    def __init__(self, data, name: Optional[str] = None) -> None:
        super().__init__(data, requires_grad=True, name=name)


@dataclass(frozen=True)
class Node:
    op: str
    output: Tensor
    parents: Tuple[Tensor, ...]
    backward: GradFn


class Tape:
    """Append-only record of differentiable ops, single writer."""

    def __init__(self) -> None:
        self.nodes: List[Node] = []
        self._token: Optional[contextvars.Token] = None

    def __enter__(self) -> "Tape":
        if self._token is not None:
            raise RuntimeError("Tape is already recording")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc_info) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, output: Tensor, parents: Tuple[Tensor, ...], backward: GradFn) -> None:
        self.nodes.append(Node(op, output, parents, backward))

    def gradient(self, root: Tensor, sources: Sequence[Tensor]) -> List[np.ndarray]:
        """Gradients of the scalar ``root`` with respect to each source."""
        if root.size != 1 or root.is_complex:
            raise DimensionError(f"gradient root must be a real scalar, got {root!r}")
        keep = {s.id for s in sources}
        grads: Dict[int, np.ndarray] = {root.id: np.ones_like(root.data)}
        for node in reversed(self.nodes):
            out_id = node.output.id
            g = grads.get(out_id) if out_id in keep else grads.pop(out_id, None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if not parent.is_complex and np.iscomplexobj(pg):
                    pg = pg.real
                if pg.shape != parent.shape:
                    raise DimensionError(
                        f"{node.op} backward produced shape {pg.shape} for parent {parent.shape}"
                    )
                acc = grads.get(parent.id)
                grads[parent.id] = pg if acc is None else acc + pg
        return [grads.get(s.id, np.zeros_like(s.data)) for s in sources]


# -- helpers -----------------------------------------------------------

def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _finish(op: str, data: np.ndarray, parents: Tuple[Tensor, ...], backward: GradFn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"{op} produced non-finite values")
    record_buffer(data.shape, data.nbytes)
    requires_grad = any(p.requires_grad for p in parents)
    out = Tensor._wrap(np.ascontiguousarray(data), requires_grad)
    if requires_grad:
        tape = _ACTIVE_TAPE.get()
        if tape is not None:
            tape.record(op, out, parents, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


# -- elementwise -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add: cannot broadcast {a.shape} and {b.shape}") from exc
    return _finish("add", data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise DimensionError(f"sub: cannot broadcast {a.shape} and {b.shape}") from exc
    return _finish("sub", data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"mul: cannot broadcast {a.shape} and {b.shape}") from exc

    def backward(g):
        return (_unbroadcast(g * np.conj(b.data), a.shape),
                _unbroadcast(g * np.conj(a.data), b.shape))

    return _finish("mul", data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if np.any(b.data == 0):
        raise NumericalError("div: division by zero")
    data = a.data / b.data

    def backward(g):
        ga = g / np.conj(b.data)
        gb = -g * np.conj(a.data / (b.data * b.data))
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _finish("div", data, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _finish("neg", -a.data, (a,), lambda g: (-g,))


def silu(x: Tensor) -> Tensor:
    sig = expit(x.data)
    return _finish("silu", x.data * sig, (x,), lambda g: (g * (sig + x.data * sig * (1.0 - sig)),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _finish("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def activation(name: str) -> Callable[[Tensor], Tensor]:
    try:
        return {"silu": silu, "relu": relu}[name]
    except KeyError as exc:
        raise ConfigError(f"Unknown activation {name!r}") from exc


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when ``rate`` is 0 or no generator is given."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate {rate} outside [0, 1)")
    if rate == 0.0 or rng is None:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _finish("dropout", x.data * mask, (x,), lambda g: (g * mask,))


# -- linear algebra ----------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul batch extents differ: {a.shape} @ {b.shape}") from exc
    record_macs(data.size * a.shape[-1])

    def backward(g):
        ga = np.matmul(g, np.conj(np.swapaxes(b.data, -1, -2)))
        gb = np.matmul(np.conj(np.swapaxes(a.data, -1, -2)), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _finish("matmul", data, (a, b), backward)


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permute axes; by default swap the last two."""
    if axes is None:
        if a.ndim < 2:
            raise DimensionError(f"transpose needs at least 2 axes, got {a.shape}")
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _finish("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} into {tuple(shape)}") from exc
    return _finish("reshape", data, (a,), lambda g: (g.reshape(a.shape),))


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(p is Ellipsis or p is None or isinstance(p, (int, np.integer, slice)) for p in parts)


def getitem(a: Tensor, index) -> Tensor:
    data = np.array(a.data[index])
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros(a.shape, dtype=np.result_type(a.data, g))
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _finish("getitem", data, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _finish("concat", data, tensors, backward)


def pad(a: Tensor, widths: Sequence[Tuple[int, int]]) -> Tensor:
    """Zero padding with per-axis (before, after) widths."""
    widths = tuple(tuple(w) for w in widths)
    if len(widths) != a.ndim:
        raise DimensionError(f"pad widths {widths} do not match rank {a.ndim}")
    crop = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return _finish("pad", np.pad(a.data, widths), (a,), lambda g: (g[crop],))


def roll(a: Tensor, shift: int, axis: int) -> Tensor:
    return _finish("roll", np.roll(a.data, shift, axis=axis), (a,),
                   lambda g: (np.roll(g, -shift, axis=axis),))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _finish("sum", np.asarray(data), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- normalization -----------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)
    record_macs(x.size, label="softmax")
    return _finish("softmax", y, (x,),
                   lambda g: (y * (g - np.sum(g * y, axis=axis, keepdims=True)),))


def softmax_rows(x: Tensor) -> Tensor:
    return softmax(x, axis=-1)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then apply the affine map.

    A zero-variance row with ``eps == 0`` normalizes to zeros, so the
    output is the bias row.
    """
    if eps < 0:
        raise ConfigError(f"layer_norm eps must be non-negative, got {eps}")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match width {d}")
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    denom = var + eps
    safe = np.where(denom > 0, denom, 1.0)
    inv = np.where(denom > 0, 1.0 / np.sqrt(safe), 0.0)
    xhat = centered * inv
    data = xhat * gain.data + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        gx_hat = g * gain.data
        gx = (inv / d) * (
            d * gx_hat
            - gx_hat.sum(axis=-1, keepdims=True)
            - xhat * np.sum(gx_hat * xhat, axis=-1, keepdims=True)
        )
        return gx, np.sum(g * xhat, axis=lead), np.sum(g, axis=lead)

    return _finish("layer_norm", data, (x, gain, bias), backward)


# -- spectral ----------------------------------------------------------

def fft(x: Tensor, axis: int = -1, inverse: bool = False) -> ComplexTensor:
    """Unnormalized DFT along one axis (``inverse`` carries the 1/n)."""
    n = x.shape[axis]
    if not _is_power_of_two(n):
        raise UnsupportedSizeError(f"FFT length {n} is not a power of two")
    if inverse:
        data = np.fft.ifft(x.data, axis=axis)
        backward = lambda g: (np.fft.fft(g, axis=axis) / n,)  # noqa: E731
    else:
        data = np.fft.fft(x.data, axis=axis)
        backward = lambda g: (np.fft.ifft(g, axis=axis) * n,)  # noqa: E731
    return _finish("ifft" if inverse else "fft", data, (x,), backward)


def fft_1d(x: Tensor, inverse: bool = False) -> ComplexTensor:
    return fft(x, axis=-1, inverse=inverse)


def real(z: Tensor) -> Tensor:
    return _finish("real", np.real(z.data).copy(), (z,), lambda g: (g.astype(np.complex128),))


def complex_from_pair(pair: Tensor) -> ComplexTensor:
    """Interpret a real (..., 2) tensor as complex values re + i*im."""
    if pair.shape[-1] != 2 or pair.is_complex:
        raise DimensionError(f"expected a real (..., 2) tensor, got {pair!r}")
    data = pair.data[..., 0] + 1j * pair.data[..., 1]
    return _finish("complex", data, (pair,), lambda g: (np.stack([g.real, g.imag], axis=-1),))


# -- convolution -------------------------------------------------------

def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """3x3 cross-correlation with zero padding 1 on a (c_in, H, W) field."""
    if x.ndim != 3 or kernel.ndim != 4 or kernel.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d expects (c,H,W) and (c_out,c_in,3,3), got {x.shape}, {kernel.shape}")
    c_out, c_in = kernel.shape[:2]
    if x.shape[0] != c_in:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape[0]}, kernel {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv2d bias shape {bias.shape} != ({c_out},)")
    height, width = x.shape[1:]
    padded = np.pad(x.data, ((0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(padded, (3, 3), axis=(1, 2))
    data = np.einsum("ihwab,oiab->ohw", windows, kernel.data, optimize=True)
    if bias is not None:
        data = data + bias.data[:, None, None]
    record_macs(c_out * c_in * 9 * height * width)

    def backward(g):
        g_kernel = np.einsum("ihwab,ohw->oiab", windows, g, optimize=True)
        g_padded = np.zeros_like(padded)
        for a in range(3):
            for b in range(3):
                g_padded[:, a:a + height, b:b + width] += np.einsum(
                    "oi,ohw->ihw", kernel.data[:, :, a, b], g, optimize=True
                )
        grads = (g_padded[:, 1:-1, 1:-1], g_kernel)
        if bias is not None:
            grads = grads + (g.sum(axis=(1, 2)),)
        return grads

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _finish("conv2d", data, parents, backward)


def zeros(shape: Sequence[int], dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(tuple(shape), dtype=dtype))


__all__ = [
    "Tensor",
    "ComplexTensor",
    "Parameter",
    "Tape",
    "Node",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "silu",
    "relu",
    "activation",
    "dropout",
    "matmul",
    "transpose",
    "reshape",
    "getitem",
    "concat",
    "pad",
    "roll",
    "sum_",
    "mean",
    "softmax",
    "softmax_rows",
    "layer_norm",
    "fft",
    "fft_1d",
    "real",
    "complex_from_pair",
    "conv2d",
    "zeros",
]
