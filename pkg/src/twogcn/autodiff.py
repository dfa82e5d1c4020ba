"""Dense tensors with taped reverse-mode differentiation.

Values live in numpy arrays; every differentiable operation records a
vector-Jacobian closure on the active Tape. The op set is exactly what the
network needs: elementwise arithmetic, broadcast-aware matmul, reshaping,
reductions, temporal (K x 1) convolution and max-pooling, batch
normalization, the usual activations, and cross-entropy over logits.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


class AutodiffError(Exception):
    pass


class ShapeMismatch(AutodiffError):
    pass


class NoTape(AutodiffError):
    pass


class NonFiniteDetected(AutodiffError):
    pass


class CheckpointError(AutodiffError):
    pass


_TAPES: list["Tape"] = []
_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle per-op NaN/Inf detection (slow; for debugging only)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = enabled


class Tape:
    """Recording scope; holds nodes in execution order for reverse traversal."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out, inputs, vjp):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


class Tensor:
    __slots__ = ("data", "requires_grad", "tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.tape: Tape | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A trainable tensor: carries a persistent gradient buffer and a name."""

    __slots__ = ("grad", "name", "decay")

    def __init__(self, data, name: str = "", decay: bool = True):
        super().__init__(np.asarray(data))
        self.requires_grad = True
        self.grad = np.zeros_like(self.data)
        self.name = name
        self.decay = decay

    def zero_grad(self):
        self.grad[...] = 0


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _record(out_data: np.ndarray, inputs: tuple[Tensor, ...], make_vjp) -> Tensor:
    """Wrap an op result; register its reverse rule if recording is active."""
    if _DEBUG_CHECKS and not np.all(np.isfinite(out_data)):
        raise NonFiniteDetected("op produced non-finite values")
    out = Tensor(out_data)
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        needs = tuple(t.requires_grad for t in inputs)
        tape.nodes.append(_Node(out, inputs, make_vjp(needs)))
        out.tape = tape
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(parameter) into every reachable Parameter's grad."""
    if loss.tape is None:
        raise NoTape("loss was not recorded on a tape")
    if loss.data.size != 1:
        raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(loss.tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            if isinstance(t, Parameter):
                t.grad += gi.reshape(t.grad.shape)
            else:
                key = id(t)
                grads[key] = grads[key] + gi if key in grads else gi


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the shape of its source operand."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = a.data + b.data

    def make_vjp(needs):
        def vjp(g):
            return (_unbroadcast(g, a.shape) if needs[0] else None,
                    _unbroadcast(g, b.shape) if needs[1] else None)
        return vjp

    return _record(out, (a, b), make_vjp)


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = a.data - b.data

    def make_vjp(needs):
        def vjp(g):
            return (_unbroadcast(g, a.shape) if needs[0] else None,
                    _unbroadcast(-g, b.shape) if needs[1] else None)
        return vjp

    return _record(out, (a, b), make_vjp)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def make_vjp(needs):
        return lambda g: (-g,)

    return _record(-a.data, (a,), make_vjp)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = a.data * b.data

    def make_vjp(needs):
        def vjp(g):
            return (_unbroadcast(g * b.data, a.shape) if needs[0] else None,
                    _unbroadcast(g * a.data, b.shape) if needs[1] else None)
        return vjp

    return _record(out, (a, b), make_vjp)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def make_vjp(needs):
        def vjp(g):
            ga = gb = None
            if needs[0]:
                ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
            if needs[1]:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
            return ga, gb
        return vjp

    return _record(out, (a, b), make_vjp)


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def make_vjp(needs):
        return lambda g: (np.transpose(g, inverse),)

    return _record(np.transpose(a.data, axes), (a,), make_vjp)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    original = a.shape

    def make_vjp(needs):
        return lambda g: (g.reshape(original),)

    return _record(a.data.reshape(shape), (a,), make_vjp)


def concat(tensors, axis: int) -> Tensor:
    tensors = tuple(_as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + sizes)

    def make_vjp(needs):
        def vjp(g):
            pieces = []
            for i in range(len(tensors)):
                if not needs[i]:
                    pieces.append(None)
                    continue
                index = [slice(None)] * g.ndim
                index[axis] = slice(bounds[i], bounds[i + 1])
                pieces.append(g[tuple(index)])
            return pieces
        return vjp

    return _record(out, tensors, make_vjp)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    a = _as_tensor(a)
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def make_vjp(needs):
        def vjp(g):
            full = np.zeros(a.shape, dtype=g.dtype)
            full[index] = g
            return (full,)
        return vjp

    return _record(a.data[index].copy(), (a,), make_vjp)


def _restore_axes(g, axis, keepdims, shape):
    if keepdims or axis is None:
        return np.broadcast_to(g.reshape([1] * len(shape)) if axis is None and not keepdims else g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    expanded = list(g.shape)
    for ax in sorted(a % len(shape) for a in axes):
        expanded.insert(ax, 1)
    return np.broadcast_to(g.reshape(expanded), shape)


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)

    def make_vjp(needs):
        return lambda g: (_restore_axes(g, axis, keepdims, a.shape).copy(),)

    return _record(a.data.sum(axis=axis, keepdims=keepdims), (a,), make_vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in ((axis,) if isinstance(axis, int) else axis)])

    def make_vjp(needs):
        return lambda g: (_restore_axes(g, axis, keepdims, a.shape) / count,)

    return _record(a.data.mean(axis=axis, keepdims=keepdims), (a,), make_vjp)


def amax(a, axis: int, keepdims: bool = False) -> Tensor:
    """Max reduction over one axis; ties route the gradient to the first hit."""
    a = _as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)

    def make_vjp(needs):
        def vjp(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            full = np.zeros(a.shape, dtype=g.dtype)
            np.put_along_axis(full, np.expand_dims(idx, axis), g, axis=axis)
            return (full,)
        return vjp

    result = out if keepdims else np.squeeze(out, axis=axis)
    return _record(result, (a,), make_vjp)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def make_vjp(needs):
        return lambda g: (g * mask,)

    return _record(a.data * mask, (a,), make_vjp)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-a.data))

    def make_vjp(needs):
        return lambda g: (g * s * (1.0 - s),)

    return _record(s, (a,), make_vjp)


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def make_vjp(needs):
        def vjp(g):
            inner = (g * s).sum(axis=axis, keepdims=True)
            return ((g - inner) * s,)
        return vjp

    return _record(s, (a,), make_vjp)


def cross_entropy_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy between logit rows [B, K] and integer labels [B]."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch(f"logits {logits.shape} vs labels {labels.shape}")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    batch = np.arange(z.shape[0])
    losses = lse - z[batch, labels]
    out = np.asarray(losses.mean(), dtype=z.dtype)

    def make_vjp(needs):
        def vjp(g):
            probs = np.exp(z - zmax)
            probs /= probs.sum(axis=1, keepdims=True)
            probs[batch, labels] -= 1.0
            return (probs * (g / z.shape[0]),)
        return vjp

    return _record(out, (logits,), make_vjp)


def _pad_time(x: np.ndarray, padding: int, value: float = 0.0) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (0, 0)),
                  constant_values=value)


def conv_out_length(t: int, kernel: int, stride: int, dilation: int, padding: int) -> int:
    return (t + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def same_padding(kernel: int, dilation: int = 1) -> int:
    return (kernel - 1) * dilation // 2


def temporal_conv(x, weight, bias=None, stride: int = 1, dilation: int = 1,
                  padding: int = 0) -> Tensor:
    """2-d convolution specialized to K x 1 temporal kernels.

    ``x`` is [B, C_in, T, V], ``weight`` is [C_out, C_in, K]; the joint axis
    is never mixed.
    """
    x = _as_tensor(x)
    weight = _as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 3:
        raise ShapeMismatch(f"conv expects x[B,C,T,V], w[O,C,K]; got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"conv channel mismatch: x {x.shape} vs w {weight.shape}")
    b_, c_in, t, v = x.shape
    c_out, _, kernel = weight.shape
    t_out = conv_out_length(t, kernel, stride, dilation, padding)
    if t_out < 1:
        raise ShapeMismatch(f"conv output length {t_out} for T={t}, k={kernel}")
    x_pad = _pad_time(x.data, padding)

    def tap(k):
        stop = k * dilation + stride * (t_out - 1) + 1
        return x_pad[:, :, k * dilation:stop:stride, :]

    out = np.zeros((b_, c_out, t_out, v), dtype=x.data.dtype)
    for k in range(kernel):
        xs = tap(k).reshape(b_, c_in, t_out * v)
        out += np.matmul(weight.data[:, :, k], xs).reshape(b_, c_out, t_out, v)
    inputs = (x, weight) if bias is None else (x, weight, _as_tensor(bias))
    if bias is not None:
        out += inputs[2].data.reshape(1, c_out, 1, 1)

    def make_vjp(needs):
        def vjp(g):
            g2 = g.reshape(b_, c_out, t_out * v)
            gx = gw = gb = None
            if needs[0]:
                gx_pad = np.zeros_like(x_pad)
                for k in range(kernel):
                    gxs = np.matmul(weight.data[:, :, k].T, g2).reshape(b_, c_in, t_out, v)
                    stop = k * dilation + stride * (t_out - 1) + 1
                    gx_pad[:, :, k * dilation:stop:stride, :] += gxs
                gx = gx_pad[:, :, padding:padding + t, :] if padding else gx_pad
            if needs[1]:
                gw = np.empty_like(weight.data)
                for k in range(kernel):
                    xs = tap(k).reshape(b_, c_in, t_out * v)
                    gw[:, :, k] = np.tensordot(g2, xs, axes=([0, 2], [0, 2]))
            if bias is not None and needs[2]:
                gb = g.sum(axis=(0, 2, 3))
            grads = [gx, gw]
            if bias is not None:
                grads.append(gb)
            return grads
        return vjp

    return _record(out, inputs, make_vjp)


def temporal_maxpool(x, kernel: int = 3, stride: int = 1, padding: int = 1) -> Tensor:
    """Max-pool along the frame axis of [B, C, T, V]."""
    x = _as_tensor(x)
    b_, c_, t, v = x.shape
    t_out = conv_out_length(t, kernel, stride, 1, padding)
    x_pad = _pad_time(x.data, padding, value=-np.inf)
    windows = np.stack([
        x_pad[:, :, k:k + stride * (t_out - 1) + 1:stride, :] for k in range(kernel)
    ])
    arg = np.argmax(windows, axis=0)
    out = np.take_along_axis(windows, arg[None], axis=0)[0]

    def make_vjp(needs):
        def vjp(g):
            gx_pad = np.zeros_like(x_pad)
            for k in range(kernel):
                stop = k + stride * (t_out - 1) + 1
                gx_pad[:, :, k:stop:stride, :] += g * (arg == k)
            gx = gx_pad[:, :, padding:padding + t, :] if padding else gx_pad
            return (gx,)
        return vjp

    return _record(out, (x,), make_vjp)


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over [B, C, T, V].

    Training mode normalizes with batch statistics and updates the running
    buffers in place; eval mode is the affine map with frozen statistics.
    """
    x = _as_tensor(x)
    gamma, beta = _as_tensor(gamma), _as_tensor(beta)
    if x.ndim != 4:
        raise ShapeMismatch(f"batch_norm expects [B,C,T,V], got {x.shape}")
    axes = (0, 2, 3)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    n = x.data.size // x.shape[1]

    def make_vjp(needs):
        def vjp(g):
            gx = ggamma = gbeta = None
            if needs[1]:
                ggamma = (g * xhat).sum(axis=axes)
            if needs[2]:
                gbeta = g.sum(axis=axes)
            if needs[0]:
                dxhat = g * gamma.data[None, :, None, None]
                if training:
                    term = (dxhat - dxhat.mean(axis=axes, keepdims=True)
                            - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True) / n)
                    gx = term * inv_std[None, :, None, None]
                else:
                    gx = dxhat * inv_std[None, :, None, None]
            return gx, ggamma, gbeta
        return vjp

    return _record(out, (x, gamma, beta), make_vjp)


@dataclass
class GradCheckReport:
    """Per-parameter max relative error of analytic vs central differences."""

    errors: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return all(e < self.tol for e in self.errors.values())

    def failures(self) -> dict[str, float]:
        return {k: v for k, v in self.errors.items() if v >= self.tol}

    def __str__(self):
        lines = [f"{'PASS' if e < self.tol else 'FAIL'}  {k}: {e:.3e}"
                 for k, e in self.errors.items()]
        return "\n".join(lines)


def grad_check(fn, params: list[Parameter], h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare taped gradients of ``fn()`` against central finite differences.

    ``fn`` must be deterministic and stateless between calls (batch norm in
    eval mode, no sampling).
    """
    for p in params:
        p.zero_grad()
    with Tape():
        loss = fn()
    backward(loss)
    analytic = {id(p): p.grad.copy() for p in params}

    errors: dict[str, float] = {}
    for i, p in enumerate(params):
        name = p.name or f"param{i}"
        worst = 0.0
        flat = p.data.reshape(-1)
        ana = analytic[id(p)].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = float(fn().data)
            flat[j] = orig - h
            down = float(fn().data)
            flat[j] = orig
            fd = (up - down) / (2.0 * h)
            err = abs(ana[j] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
        errors[name] = worst
    return GradCheckReport(errors=errors, tol=tol)


CKPT_MAGIC = b"2PCK"
CKPT_VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    """Serialize named float arrays to the little-endian checkpoint format."""
    chunks = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, order="C")  # ascontiguousarray would promote 0-d
        if arr.dtype not in _DTYPE_CODES:
            arr = arr.astype(np.float32)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BI", _DTYPE_CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def load_arrays(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != CKPT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            code, rank = struct.unpack_from("<BI", blob, pos)
            pos += 5
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            dtype = _CODE_DTYPES[code]
            nbytes = int(np.prod(shape)) * dtype.itemsize if rank else dtype.itemsize
            arr = np.frombuffer(blob[pos:pos + nbytes], dtype=dtype).reshape(shape).copy()
            pos += nbytes
            out[name] = arr
    except (struct.error, KeyError, ValueError) as err:
        raise CheckpointError(f"corrupt checkpoint: {err}") from None
    return out
