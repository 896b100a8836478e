"""Differentiable primitives for the network graphs.

Signatures follow the unbatched forms (conv over ``[C,H,W]``, linear over
``[N]``); every op additionally accepts one leading batch axis, which is how
the training loop pushes whole mini-batches through a single numpy call.

Conventions fixed here: ReLU subgradient at 0 is 0; max-pool ties break to
the first element in window scan order; softmax subtracts the row max before
exponentiating. These keep forward and backward passes deterministic.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DimensionError, Tensor


def _batched(x: np.ndarray, rank: int):
    """Promote to `rank`+1 dims with a batch axis; report whether we added it."""
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise DimensionError("op", "rank", f"{rank} or {rank + 1}", x.ndim)


def _debatch(y: np.ndarray, added: bool) -> np.ndarray:
    return y[0] if added else y


# ---------------------------------------------------------------------------
# convolution / pooling


def _conv_patches(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # (N,C,H',W') -> (N,C,H,W,kh,kw) view, no copy
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """3x3 convolution, zero padding 1, stride 1: [C,H,W] -> [K,H,W]."""
    xd, added = _batched(x.data, 3)
    K, C, kh, kw = w.data.shape
    if (kh, kw) != (3, 3):
        raise DimensionError("conv2d", "kernel", (3, 3), (kh, kw))
    if xd.shape[1] != C:
        raise DimensionError("conv2d", "channels", C, xd.shape[1])
    if b.data.shape != (K,):
        raise DimensionError("conv2d", "bias", (K,), b.data.shape)

    xp = np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1)))
    patches = _conv_patches(xp, 3, 3)
    yd = np.tensordot(patches, w.data, axes=([1, 4, 5], [1, 2, 3]))
    yd = np.ascontiguousarray(yd.transpose(0, 3, 1, 2)) + b.data[None, :, None, None]

    out = Tensor(_debatch(yd, added), (x, w, b))

    def backward(grad):
        g = _batched(grad, 3)[0]
        b.accumulate_grad(g.sum(axis=(0, 2, 3)))
        # recompute patches (views are cheap; caching them would be ~GBs)
        xp2 = np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1)))
        p2 = _conv_patches(xp2, 3, 3)
        gw = np.tensordot(g, p2, axes=([0, 2, 3], [0, 2, 3]))
        w.accumulate_grad(gw)
        # dL/dx: full correlation of grad with channel-transposed, flipped kernels
        wf = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # (C,K,3,3)
        gp = np.pad(g, ((0, 0), (0, 0), (1, 1), (1, 1)))
        gpatches = _conv_patches(gp, 3, 3)
        gx = np.tensordot(gpatches, wf, axes=([1, 4, 5], [1, 2, 3]))
        x.accumulate_grad(_debatch(np.ascontiguousarray(gx.transpose(0, 3, 1, 2)), added))

    out._backward = backward
    return out


def conv1x1(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-pixel linear map across channels: [C,H,W] -> [K,H,W]."""
    xd, added = _batched(x.data, 3)
    K, C, kh, kw = w.data.shape
    if (kh, kw) != (1, 1):
        raise DimensionError("conv1x1", "kernel", (1, 1), (kh, kw))
    if xd.shape[1] != C:
        raise DimensionError("conv1x1", "channels", C, xd.shape[1])

    wm = w.data[:, :, 0, 0]  # (K,C)
    yd = np.einsum("kc,nchw->nkhw", wm, xd) + b.data[None, :, None, None]
    out = Tensor(_debatch(yd, added), (x, w, b))

    def backward(grad):
        g = _batched(grad, 3)[0]
        b.accumulate_grad(g.sum(axis=(0, 2, 3)))
        gw = np.einsum("nkhw,nchw->kc", g, xd)
        w.accumulate_grad(gw[:, :, None, None])
        gx = np.einsum("kc,nkhw->nchw", wm, g)
        x.accumulate_grad(_debatch(gx, added))

    out._backward = backward
    return out


def maxpool2(x: Tensor) -> Tensor:
    """2x2 non-overlapping max pool; gradient goes to the first max per window."""
    xd, added = _batched(x.data, 3)
    N, C, H, W = xd.shape
    if H % 2:
        raise DimensionError("maxpool2", "height", "even", H)
    if W % 2:
        raise DimensionError("maxpool2", "width", "even", W)
    H2, W2 = H // 2, W // 2
    win = xd.reshape(N, C, H2, 2, W2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = win.reshape(N, C, H2, W2, 4)
    idx = flat.argmax(axis=-1)  # argmax returns first max: the tie rule
    yd = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    out = Tensor(_debatch(yd, added), (x,))

    def backward(grad):
        g = _batched(grad, 3)[0]
        g4 = np.zeros((N, C, H2, W2, 4))
        np.put_along_axis(g4, idx[..., None], g[..., None], axis=-1)
        gx = g4.reshape(N, C, H2, W2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H, W)
        x.accumulate_grad(_debatch(gx, added))

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# dense / elementwise


def linear(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    """w @ x + b over the last axis: [N] -> [M] (or [B,N] -> [B,M])."""
    xd, added = _batched(x.data, 1)
    M, N = w.data.shape
    if xd.shape[1] != N:
        raise DimensionError("linear", "in_features", N, xd.shape[1])
    yd = xd @ w.data.T
    if b is not None:
        if b.data.shape != (M,):
            raise DimensionError("linear", "bias", (M,), b.data.shape)
        yd = yd + b.data
    out = Tensor(_debatch(yd, added), (x, w, b) if b is not None else (x, w))

    def backward(grad):
        g = _batched(grad, 1)[0]
        if b is not None:
            b.accumulate_grad(g.sum(axis=0))
        w.accumulate_grad(g.T @ xd)
        x.accumulate_grad(_debatch(g @ w.data, added))

    out._backward = backward
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0  # subgradient at exactly 0 is 0
    # maximum (not where) so a NaN passes through instead of silently
    # becoming 0; divergence diagnostics depend on that
    out = Tensor(np.maximum(x.data, 0.0), (x,))
    out._backward = lambda grad: x.accumulate_grad(grad * mask)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise DimensionError("add", "shape", a.data.shape, b.data.shape)
    out = Tensor(a.data + b.data, (a, b))

    def backward(grad):
        a.accumulate_grad(grad)
        b.accumulate_grad(grad)

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise DimensionError("mul", "shape", a.data.shape, b.data.shape)
    out = Tensor(a.data * b.data, (a, b))

    def backward(grad):
        a.accumulate_grad(grad * b.data)
        b.accumulate_grad(grad * a.data)

    out._backward = backward
    return out


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # branch on sign to avoid exp overflow
    yd = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))),
                  np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))))
    out = Tensor(yd, (x,))
    out._backward = lambda grad: x.accumulate_grad(grad * yd * (1.0 - yd))
    return out


def tanh(x: Tensor) -> Tensor:
    yd = np.tanh(x.data)
    out = Tensor(yd, (x,))
    out._backward = lambda grad: x.accumulate_grad(grad * (1.0 - yd * yd))
    return out


def reshape(x: Tensor, shape: tuple) -> Tensor:
    out = Tensor(x.data.reshape(shape), (x,))
    out._backward = lambda grad: x.accumulate_grad(grad.reshape(x.data.shape))
    return out


def flatten(x: Tensor) -> Tensor:
    """[C,H,W] -> [C*H*W], or [N,...] -> [N, prod]."""
    if x.data.ndim <= 1:
        return reshape(x, x.data.shape)
    # heuristically keep a batch axis only for rank-2/4 inputs coming from
    # batched linear/conv chains; rank-3 is an unbatched feature map
    if x.data.ndim == 3:
        return reshape(x, (x.data.size,))
    return reshape(x, (x.data.shape[0], -1))


def softmax(x: Tensor) -> Tensor:
    """Exp-normalize over the last axis with max subtraction."""
    xd = x.data
    shifted = xd - xd.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p, (x,))

    def backward(grad):
        dot = (grad * p).sum(axis=-1, keepdims=True)
        x.accumulate_grad(p * (grad - dot))

    out._backward = backward
    return out


def nll_loss(probs: Tensor, target) -> Tensor:
    """-log probs[target]; with a batch axis, the mean over samples.

    Composed with softmax the overall backward is (p - onehot), which is what
    training uses. Probabilities are floored at 1e-300 so log stays finite.
    """
    pd, added = _batched(probs.data, 1)
    tgt = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if tgt.shape[0] != pd.shape[0]:
        raise DimensionError("nll_loss", "batch", pd.shape[0], tgt.shape[0])
    B = pd.shape[0]
    picked = np.maximum(pd[np.arange(B), tgt], 1e-300)
    out = Tensor(-np.log(picked).mean(), (probs,))

    def backward(grad):
        g = np.zeros_like(pd)
        g[np.arange(B), tgt] = -float(grad) / (picked * B)
        probs.accumulate_grad(_debatch(g, added))

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# structural


def concat(parts: list, axis: int) -> Tensor:
    """Lay parts out along `axis` in argument order; backward splits by offset."""
    if not parts:
        raise DimensionError("concat", "parts", ">=1", 0)
    datas = [p.data for p in parts]
    ref = datas[0].shape
    for d in datas[1:]:
        for ax in range(len(ref)):
            if ax != axis % len(ref) and d.shape[ax] != ref[ax]:
                raise DimensionError("concat", ax, ref[ax], d.shape[ax])
    out = Tensor(np.concatenate(datas, axis=axis), tuple(parts))
    sizes = [d.shape[axis] for d in datas]

    def backward(grad):
        offset = 0
        for p, s in zip(parts, sizes):
            sl = [slice(None)] * grad.ndim
            sl[axis] = slice(offset, offset + s)
            p.accumulate_grad(grad[tuple(sl)])
            offset += s

    out._backward = backward
    return out


def split(x: Tensor, sizes: list, axis: int) -> list:
    """Inverse of concat: cut `x` into consecutive chunks of the given sizes."""
    total = sum(sizes)
    if x.data.shape[axis] != total:
        raise DimensionError("split", axis, total, x.data.shape[axis])
    outs = []
    offset = 0
    for s in sizes:
        sl = [slice(None)] * x.data.ndim
        sl[axis] = slice(offset, offset + s)
        piece = Tensor(x.data[tuple(sl)].copy(), (x,))

        def backward(grad, sl=tuple(sl)):
            g = np.zeros_like(x.data)
            g[sl] = grad
            x.accumulate_grad(g)

        piece._backward = backward
        outs.append(piece)
        offset += s
    return outs


def narrow(x: Tensor, start: int, length: int) -> Tensor:
    """Slice [start, start+length) along the last axis."""
    sl = (Ellipsis, slice(start, start + length))
    out = Tensor(x.data[sl].copy(), (x,))

    def backward(grad):
        g = np.zeros_like(x.data)
        g[sl] = grad
        x.accumulate_grad(g)

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# recurrence


class LstmState:
    """Hidden/cell pair carried across time steps."""

    __slots__ = ("h", "c")

    def __init__(self, h: Tensor, c: Tensor):
        if h.data.shape != c.data.shape:
            raise DimensionError("LstmState", "shape", h.data.shape, c.data.shape)
        self.h = h
        self.c = c

    @classmethod
    def zeros(cls, hidden: int, batch: int | None = None) -> "LstmState":
        shape = (hidden,) if batch is None else (batch, hidden)
        return cls(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))


def lstm_step(x: Tensor, state: LstmState, w_ih: Tensor, w_hh: Tensor, b: Tensor) -> LstmState:
    """One LSTM step. Gate packing along rows of w_ih/w_hh/b is [i, f, g, o].

    i,f,o are sigmoid gates, g is tanh; c' = f*c + i*g, h' = o*tanh(c').
    Built from primitive ops, so chaining steps yields exact backprop
    through time for free.
    """
    hidden = state.h.data.shape[-1]
    if w_ih.data.shape[0] != 4 * hidden:
        raise DimensionError("lstm_step", "gate_rows", 4 * hidden, w_ih.data.shape[0])
    if x.data.shape[-1] != w_ih.data.shape[1]:
        raise DimensionError("lstm_step", "input_width", w_ih.data.shape[1], x.data.shape[-1])
    gates = add(linear(x, w_ih, b), linear(state.h, w_hh, None))
    i = sigmoid(narrow(gates, 0, hidden))
    f = sigmoid(narrow(gates, hidden, hidden))
    g = tanh(narrow(gates, 2 * hidden, hidden))
    o = sigmoid(narrow(gates, 3 * hidden, hidden))
    c_new = add(mul(f, state.c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return LstmState(h_new, c_new)
