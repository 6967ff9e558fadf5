"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op builds a fresh tape node when any operand requires gradients; the
tape is rebuilt each step and released by ``backward``. CPU-only, float64
everywhere: the scale is small enough that gradient-check precision beats
speed. Logs are clamped at 1e-12 so probability maps can underflow to exact
zero without poisoning a loss.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LOG_EPS = 1e-12


class Tensor:
    """A dense n-d float64 array with an optional gradient slot.

    Non-leaf tensors remember their parents and a backward closure until
    ``backward`` releases the graph. Leaves created with ``requires_grad``
    accumulate into ``grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar; populates leaf grads, frees the tape."""
        if self.data.size != 1:
            raise ValueError(
                f"backward: expected a scalar loss, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
        # Release the tape: nodes are single-use.
        for node in topo:
            node._parents = ()
            node._backward = None

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis=axis)

    def mean(self, axis=None):
        return tmean(self, axis=axis)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(
            f"{op}: shapes {a.shape} and {b.shape} are not compatible"
        ) from None


# -- elementwise ops -------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; operands may broadcast."""
    _check_broadcast("mul", a, b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("div", a, b)
    out_data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    out_data = a.data * s

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * s)

    return _make(out_data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0.0))

    return _make(out_data, (a,), backward)


def log(a: Tensor) -> Tensor:
    """Natural log of max(x, 1e-12); the clamp region has zero gradient."""
    clamped = np.maximum(a.data, LOG_EPS)
    out_data = np.log(clamped)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > LOG_EPS) / clamped)

    return _make(out_data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_data)

    return _make(out_data, (a,), backward)


# -- reductions ------------------------------------------------------------


def tsum(a: Tensor, axis=None) -> Tensor:
    out_data = a.data.sum(axis=axis)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).astype(np.float64))
        else:
            g_exp = np.expand_dims(g, axis=axis)
            a._accumulate(np.broadcast_to(g_exp, a.shape).astype(np.float64))

    return _make(out_data, (a,), backward)


def tmean(a: Tensor, axis=None) -> Tensor:
    out_data = a.data.mean(axis=axis)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = 1
        for ax in axes:
            n *= a.shape[ax]

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g / n, a.shape).astype(np.float64))
        else:
            g_exp = np.expand_dims(g / n, axis=axis)
            a._accumulate(np.broadcast_to(g_exp, a.shape).astype(np.float64))

    return _make(out_data, (a,), backward)


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of two same-shape tensors (sum of elementwise product)."""
    if a.shape != b.shape:
        raise ValueError(f"dot: shapes {a.shape} and {b.shape} differ")
    return tsum(mul(a, b))


def l2_norm(a: Tensor) -> Tensor:
    """Euclidean norm of the whole tensor. Zero-norm inputs cannot be
    differentiated and raise during backward."""
    norm = float(np.sqrt(np.sum(a.data * a.data)))
    out_data = np.asarray(norm)

    def backward(g):
        if a.requires_grad:
            if norm == 0.0:
                raise ValueError("l2_norm: gradient undefined at the zero vector")
            a._accumulate(g * a.data / norm)

    return _make(out_data, (a,), backward)


# -- linear algebra --------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(
            f"matmul: expected 2-d operands, got {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(out_data, (a, b), backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """2-d convolution, stride 1, zero padding to preserve H and W.

    x: (B, H, W, Cin), w: (kh, kw, Cin, Cout) with odd kh/kw, b: (Cout,).
    Implemented as im2col + matmul so the whole batch is one BLAS call.
    """
    if x.data.ndim != 4:
        raise ValueError(f"conv2d: expected input (B,H,W,Cin), got {x.shape}")
    if w.data.ndim != 4:
        raise ValueError(f"conv2d: expected weight (kh,kw,Cin,Cout), got {w.shape}")
    kh, kw, cin, cout = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d: kernel must be odd, got ({kh},{kw})")
    if x.shape[3] != cin:
        raise ValueError(
            f"conv2d: input channels {x.shape} do not match weight {w.shape}"
        )
    if b.shape != (cout,):
        raise ValueError(f"conv2d: bias {b.shape} does not match weight {w.shape}")
    bsz, h, wid, _ = x.shape
    ph, pw = kh // 2, kw // 2

    if kh == 1 and kw == 1:
        cols = x.data.reshape(bsz * h * wid, cin)
    else:
        xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
        cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
            bsz * h * wid, kh * kw * cin
        )
    wmat = w.data.reshape(kh * kw * cin, cout)
    out_data = (cols @ wmat + b.data).reshape(bsz, h, wid, cout)

    def backward(g):
        gmat = g.reshape(bsz * h * wid, cout)
        if w.requires_grad:
            w._accumulate((cols.T @ gmat).reshape(kh, kw, cin, cout))
        if b.requires_grad:
            b._accumulate(gmat.sum(axis=0))
        if x.requires_grad:
            dcols = (gmat @ wmat.T).reshape(bsz, h, wid, kh, kw, cin)
            if kh == 1 and kw == 1:
                x._accumulate(dcols.reshape(bsz, h, wid, cin))
            else:
                dxp = np.zeros((bsz, h + 2 * ph, wid + 2 * pw, cin))
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, i : i + h, j : j + wid, :] += dcols[:, :, :, i, j, :]
                x._accumulate(dxp[:, ph : ph + h, pw : pw + wid, :])

    return _make(out_data, (x, w, b), backward)


def softmax(a: Tensor) -> Tensor:
    """Channelwise softmax over the last axis, shift-stabilized."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if a.requires_grad:
            a._accumulate(p * (g - (g * p).sum(axis=-1, keepdims=True)))

    return _make(p, (a,), backward)


# -- gradient checking -----------------------------------------------------


def finite_diff_check(f, x: Tensor, step: float = 1e-5) -> float:
    """Max relative error between analytic grad of ``f(x)`` and central
    differences: max_i |analytic_i - numeric_i| / max(1, |analytic_i|).

    ``f`` must be a deterministic scalar-valued function of ``x``. Raises on
    non-finite function values.
    """
    if step <= 0:
        raise ValueError(f"finite_diff_check: step must be positive, got {step}")
    x.requires_grad = True
    x.zero_grad()
    loss = f(x)
    if not np.all(np.isfinite(loss.data)):
        raise FloatingPointError("finite_diff_check: non-finite loss value")
    loss.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x).item()
        flat[i] = orig - step
        lo = f(x).item()
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError(
                "finite_diff_check: non-finite intermediate at coordinate %d" % i
            )
        numeric = (hi - lo) / (2.0 * step)
        a = analytic.reshape(-1)[i]
        err = abs(a - numeric) / max(1.0, abs(a))
        worst = max(worst, err)
    return worst
