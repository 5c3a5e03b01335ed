"""Minimal reverse-mode automatic differentiation over numpy arrays.

Tensors hold float64 data unless they are created from float32 arrays, in
which case ops keep single precision end to end (used to speed up training).

Each op returns a new :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to one gradient per parent. :func:`backward` sorts
the graph topologically and visits every node once in reverse order.

Only the operations needed by the CRNN frame classifier and the MIL losses are
provided. Tensors are laid out ``(batch, time, freq, channels)`` for the
convolutional part and ``(batch, time, features)`` afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ContractError, ShapeError

BCE_CLAMP = 1e-7


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "op", "name", "grad")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op="leaf", name=None):
        data = np.asarray(data)
        self.data = data if data.dtype == np.float32 else data.astype(np.float64, copy=False)
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.name = name
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(op={self.op}, shape={self.data.shape})"

    def numpy(self) -> np.ndarray:
        return self.data

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward_fn, op)
    return Tensor(data, op=op)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _colsum(a2):
    # BLAS matvec; far faster than a.sum(axis=0) for tall, narrow arrays
    return np.ones(a2.shape[0], dtype=a2.dtype) @ a2


def _broadcast_check(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def matmul(a, b) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., n, k) and a 2-D ``b`` of shape (k, m)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.data.ndim != 2 or a.data.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def relu(x) -> Tensor:
    x = as_tensor(x)
    # np.maximum keeps NaN visible so a bad input surfaces as a non-finite loss
    pos = x.data > 0
    return _make(np.maximum(x.data, 0), (x,), lambda g: (g * pos,), "relu")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(v):
    return expit(v)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from None
    return _make(y, (x,), lambda g: (g.reshape(old),), "reshape")


def concat_last_axis(tensors) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    lead = {t.shape[:-1] for t in tensors}
    if len(lead) != 1:
        raise ShapeError(f"concat_last_axis: leading shapes differ {[t.shape for t in tensors]}")
    sizes = np.cumsum([t.shape[-1] for t in tensors])[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=-1), tuple(tensors),
                 lambda g: tuple(np.split(g, sizes, axis=-1)), "concat")


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def mean_all(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    return _make(np.array(x.data.mean()), (x,), lambda g: (np.full(x.shape, g / n),), "mean")


# ---------------------------------------------------------------------------
# network layers


def conv2d_same(x, w, b) -> Tensor:
    """2-D convolution with zero 'same' padding on time and frequency.

    x: (B, T, F, Cin), w: (kh, kw, Cin, Cout) with odd kernel sizes, b: (Cout,).
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[3] != w.shape[2] or b.shape != (w.shape[3],):
        raise ShapeError(f"conv2d_same: incompatible shapes x={x.shape} w={w.shape} b={b.shape}")
    kh, kw, cin, cout = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d_same: kernel {kh}x{kw} must have odd sizes")
    B, T, F, _ = x.shape
    ph, pw = kh // 2, kw // 2
    Tp, Fp = T + 2 * ph, F + 2 * pw
    # Channel-first and flattened over the padded grid, each kernel tap (i, j)
    # is a fixed column offset, so im2col is kh*kw contiguous slice copies.
    # Positions that land in the padding are computed and then dropped.
    xpT = np.ascontiguousarray(np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0))).reshape(-1, cin).T)
    N = xpT.shape[1]
    offsets = [i * Fp + j for i in range(kh) for j in range(kw)]
    L = N - offsets[-1]
    K = kh * kw * cin
    # a trailing row of ones lets the matmul add the bias as well
    cols = np.empty((K + 1, L), dtype=x.data.dtype)
    for k, off in enumerate(offsets):
        cols[k * cin:(k + 1) * cin] = xpT[:, off:off + L]
    cols[K] = 1
    wmat = w.data.reshape(K, cout)
    acc = np.empty((N, cout), dtype=x.data.dtype)
    acc[L:] = 0
    np.matmul(cols.T, np.vstack([wmat, b.data]), out=acc[:L])
    out = np.empty((B, T, F, cout), dtype=x.data.dtype)
    np.copyto(out, acc.reshape(B, Tp, Fp, cout)[:, :T, :F])

    def backward(g):
        gacc = np.zeros((B, Tp, Fp, cout), dtype=g.dtype)
        gacc[:, :T, :F] = g
        gacc = gacc.reshape(N, cout)[:L]
        gw = (cols[:K] @ gacc).reshape(w.shape)
        gb = _colsum(g.reshape(-1, cout))
        if not x.requires_grad:
            return None, gw, gb
        gcols = wmat @ gacc.T
        gxpT = np.zeros_like(xpT)
        for k, off in enumerate(offsets):
            gxpT[:, off:off + L] += gcols[k * cin:(k + 1) * cin]
        gx = gxpT.T.reshape(B, Tp, Fp, cin)[:, ph:ph + T, pw:pw + F]
        return np.ascontiguousarray(gx), gw, gb

    return _make(out, (x, w, b), backward, "conv2d")


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.99, eps=1e-3,
               mask=None) -> Tensor:
    """Per-channel batch normalisation over (batch, time, freq).

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` (numpy arrays) are updated in place with
    ``running = momentum * running + (1 - momentum) * batch``. ``mask`` of
    shape (B, T) excludes padded frames from the statistics.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    C = x.shape[-1]
    if x.data.ndim != 4 or gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batch_norm: incompatible shapes x={x.shape} gamma={gamma.shape} beta={beta.shape}")
    B, T, F, _ = x.shape
    dt = x.data.dtype
    # Elementwise work runs on a (B*T, F*C) view with per-channel vectors tiled
    # F times: numpy broadcasts a long row much faster than a short one.
    xw = x.data.reshape(B * T, F * C)

    def tile(v):
        return np.tile(np.asarray(v, dtype=dt), F)

    def chan_sum(a):
        return _colsum(a).reshape(F, C).sum(0)

    def chan_dot(a, b):
        return np.einsum("ij,ij->j", a, b).reshape(F, C).sum(0)

    if not training:
        s = 1.0 / np.sqrt(running_var + eps)
        xhat = xw - tile(running_mean)
        xhat *= tile(s)
        out = xhat * tile(gamma.data)
        out += tile(beta.data)

        def backward(g):
            gw = g.reshape(B * T, F * C)
            return (gw * tile(gamma.data * s)).reshape(x.shape), chan_dot(gw, xhat), chan_sum(gw)

        return _make(out.reshape(x.shape), (x, gamma, beta), backward, "batch_norm")

    if mask is None:
        w = None
        n = B * T * F
        mu = chan_sum(xw) / n
        diff = xw - tile(mu)
        var = chan_dot(diff, diff) / n
    else:
        w = np.asarray(mask, dtype=dt).reshape(B * T, 1)
        n = w.sum() * F
        mu = chan_sum(w * xw) / n
        diff = xw - tile(mu)
        var = chan_dot(w * diff, diff) / n
    s = 1.0 / np.sqrt(var + eps)
    xhat = diff
    xhat *= tile(s)
    out = xhat * tile(gamma.data)
    out += tile(beta.data)
    running_mean *= momentum
    running_mean += (1.0 - momentum) * mu
    running_var *= momentum
    running_var += (1.0 - momentum) * var

    def backward(g):
        gw = g.reshape(B * T, F * C)
        gsum = chan_sum(gw)
        gxsum = chan_dot(gw, xhat)
        # gx = gamma * s * (g - w * (gsum + xhat * gxsum) / n)
        inner = xhat * tile(gxsum / n)
        inner += tile(gsum / n)
        if w is not None:
            inner *= w
        gx = np.subtract(gw, inner, out=inner)
        gx *= tile(gamma.data * s)
        return gx.reshape(x.shape), gxsum, gsum

    return _make(out.reshape(x.shape), (x, gamma, beta), backward, "batch_norm")


def max_pool_freq(x, k: int) -> Tensor:
    """Non-overlapping 1 x k max pooling along the frequency axis of (B, T, F, C)."""
    x = as_tensor(x)
    B, T, F, C = x.shape
    if F % k:
        raise ShapeError(f"max_pool_freq: frequency size {F} not divisible by pool {k}")
    blocks = x.data.reshape(B, T, F // k, k, C)
    # a running maximum over the k strided slices beats ndarray.max(axis=3) by ~5x
    out = blocks[:, :, :, 0].copy()
    for i in range(1, k):
        np.maximum(out, blocks[:, :, :, i], out=out)

    def backward(g):
        hit = blocks == out[:, :, :, None, :]
        if np.count_nonzero(hit) != out.size:
            # ties: route the gradient to the first maximal element only
            hit = np.zeros_like(hit)
            np.put_along_axis(hit, blocks.argmax(axis=3)[:, :, :, None, :], True, axis=3)
        # repeat-then-mask avoids a slow broadcast multiply with a bool cast
        gx = np.repeat(g[:, :, :, None, :], k, axis=3)
        np.multiply(gx, hit, out=gx)
        return (gx.reshape(B, T, F, C),)

    return _make(out, (x,), backward, "max_pool_freq")


def dense(x, w, b) -> Tensor:
    return add(matmul(x, w), b)


def _gru_core(xp, U, mask):
    """Run stacked GRU recurrences forward in time.

    xp: (S, B, T, 3H) input projections (bias included), U: (S, H, 3H),
    mask: (S, B, T) or None. Returns outputs (S, B, T, H) and the per-step
    cache needed for backpropagation through time.
    """
    S, B, T, H3 = xp.shape
    H = H3 // 3
    Uzr, Un = np.ascontiguousarray(U[:, :, :2 * H]), np.ascontiguousarray(U[:, :, 2 * H:])
    hs = np.zeros((T + 1, S, B, H), dtype=xp.dtype)
    zrs = np.empty((T, S, B, 2 * H), dtype=xp.dtype)
    ns = np.empty((T, S, B, H), dtype=xp.dtype)
    xpt = np.ascontiguousarray(xp.transpose(2, 0, 1, 3))
    for t in range(T):
        hp, zr, n, hn = hs[t], zrs[t], ns[t], hs[t + 1]
        np.matmul(hp, Uzr, out=zr)
        zr += xpt[t, :, :, :2 * H]
        expit(zr, out=zr)
        z, r = zr[..., :H], zr[..., H:]
        np.matmul(r * hp, Un, out=n)
        n += xpt[t, :, :, 2 * H:]
        np.tanh(n, out=n)
        # h = n + z * (h_prev - n)
        np.subtract(hp, n, out=hn)
        hn *= z
        hn += n
        if mask is not None:
            hn -= hp
            hn *= mask[:, :, t, None]
            hn += hp
    zs, rs = zrs[..., :H], zrs[..., H:]
    return hs, (zs, rs, ns)


def _gru_core_backward(gout, hs, cache, U, mask):
    zs, rs, ns = cache
    T, S, B, H = zs.shape
    Uzr_T = np.ascontiguousarray(U[:, :, :2 * H].transpose(0, 2, 1))
    Un_T = np.ascontiguousarray(U[:, :, 2 * H:].transpose(0, 2, 1))
    hp_all = hs[:-1]
    # gate derivative factors do not depend on the incoming gradient, so
    # they are formed for all steps at once and the loop stays short
    dz_coef = (hp_all - ns) * zs * (1.0 - zs)
    dn_coef = (1.0 - zs) * (1.0 - ns * ns)
    dr_coef = hp_all * rs * (1.0 - rs)
    dxp = np.empty((T, S, B, 3 * H), dtype=zs.dtype)
    dU = np.empty_like(U)
    dh = np.zeros((S, B, H), dtype=zs.dtype)
    for t in range(T - 1, -1, -1):
        dhn = dh + gout[t]
        if mask is not None:
            m = mask[:, :, t, None]
            carry = (1.0 - m) * dhn
            dhn *= m
        dx = dxp[t]
        dan = np.multiply(dhn, dn_coef[t], out=dx[..., 2 * H:])
        drh = dan @ Un_T
        np.multiply(dhn, dz_coef[t], out=dx[..., :H])
        np.multiply(drh, dr_coef[t], out=dx[..., H:2 * H])
        dh = dhn * zs[t]
        dh += drh * rs[t]
        dh += dx[..., :2 * H] @ Uzr_T
        if mask is not None:
            dh += carry

    def outer_sum(a, b):
        # sum over (t, b) of a^T b per direction; a batched matmul beats einsum here
        k = b.shape[-1]
        return a.transpose(1, 3, 0, 2).reshape(S, H, -1) @ b.transpose(1, 0, 2, 3).reshape(S, -1, k)

    dU[:, :, :2 * H] = outer_sum(hp_all, dxp[..., :2 * H])
    dU[:, :, 2 * H:] = outer_sum(rs * hp_all, dxp[..., 2 * H:])
    return dxp.transpose(1, 2, 0, 3), dU


def _stacked_gru(x, dirs, mask):
    """Shared implementation for uni- and bidirectional GRUs.

    dirs: list of (W, U, b, reverse). Output features of all directions are
    concatenated along the last axis in the given order.
    """
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise ShapeError(f"gru: expected (B, T, D) input, got {x.shape}")
    B, T, D = x.shape
    H = dirs[0][1].shape[0]
    for W, U, b, _ in dirs:
        if W.shape != (D, 3 * H) or U.shape != (H, 3 * H) or b.shape != (3 * H,):
            raise ShapeError(f"gru: weights W={W.shape} U={U.shape} b={b.shape} do not match input {x.shape}, H={H}")
    S = len(dirs)
    rev = [d[3] for d in dirs]
    xs = np.stack([x.data[:, ::-1] if r else x.data for r in rev])  # S,B,T,D
    Wst = np.stack([d[0].data for d in dirs])
    Ust = np.stack([d[1].data for d in dirs])
    bst = np.stack([d[2].data for d in dirs])
    xp = xs @ Wst[:, None] + bst[:, None, None, :]
    m = None
    if mask is not None:
        mk = np.asarray(mask, dtype=x.data.dtype)
        m = np.stack([mk[:, ::-1] if r else mk for r in rev])
    hs, cache = _gru_core(xp, Ust, m)
    outs = hs[1:].transpose(1, 2, 0, 3)  # S,B,T,H
    outs = [o[:, ::-1] if r else o for o, r in zip(outs, rev)]
    y = np.concatenate(outs, axis=-1)

    def backward(g):
        gs = [g[..., s * H:(s + 1) * H] for s in range(S)]
        gs = np.stack([gi[:, ::-1] if r else gi for gi, r in zip(gs, rev)])  # S,B,T,H
        dxp, dU = _gru_core_backward(gs.transpose(2, 0, 1, 3), hs, cache, Ust, m)
        gx = np.zeros((B, T, D), dtype=x.data.dtype)
        grads = []
        for s in range(S):
            d = dxp[s]
            gxs = d @ Wst[s].T
            gx += gxs[:, ::-1] if rev[s] else gxs
            gW = xs[s].reshape(-1, D).T @ d.reshape(-1, 3 * H)
            grads += [gW, dU[s], d.reshape(-1, 3 * H).sum(0)]
        return (gx, *grads)

    parents = [x]
    for W, U, b, _ in dirs:
        parents += [W, U, b]
    return _make(y, tuple(parents), backward, "gru")


def gru(x, W, U, b, mask=None, reverse=False) -> Tensor:
    """Single-direction GRU over (B, T, D) input; returns (B, T, H).

    Gates are packed ``[update | reset | candidate]`` along the last axis of
    ``W`` (D, 3H), ``U`` (H, 3H) and ``b`` (3H,). With update gate z, reset gate
    r and candidate n, ``h_t = (1 - z) * n + z * h_{t-1}``, starting from zero.
    Where ``mask`` is 0 the state is carried through unchanged.
    """
    W, U, b = as_tensor(W), as_tensor(U), as_tensor(b)
    return _stacked_gru(x, [(W, U, b, reverse)], mask)


def bigru(x, forward_weights, backward_weights, mask=None) -> Tensor:
    """Bidirectional GRU; output is ``[forward | backward]`` of shape (B, T, 2H)."""
    fw = [as_tensor(t) for t in forward_weights]
    bw = [as_tensor(t) for t in backward_weights]
    return _stacked_gru(x, [(*fw, False), (*bw, True)], mask)


# ---------------------------------------------------------------------------
# reductions over time and loss primitives


def _time_mask(x, mask):
    if mask is None:
        return None
    m = np.asarray(mask, dtype=bool)
    if m.shape != x.shape:
        raise ShapeError(f"mask shape {m.shape} does not match {x.shape}")
    if not m.any(axis=-1).all():
        raise ContractError("every bag needs at least one unmasked frame")
    return m


def _reduce_extreme(x, mask, largest):
    x = as_tensor(x)
    m = _time_mask(x, mask)
    v = x.data
    if m is not None:
        v = np.where(m, v, -np.inf if largest else np.inf)
    idx = (v.argmax if largest else v.argmin)(axis=-1)[..., None]
    out = np.take_along_axis(x.data, idx, axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, g[..., None], axis=-1)
        return (gx,)

    return _make(out, (x,), backward, "reduce_max" if largest else "reduce_min")


def reduce_max(x, mask=None) -> Tensor:
    """Max over the last (time) axis; ties resolve to the lowest index."""
    return _reduce_extreme(x, mask, True)


def reduce_min(x, mask=None) -> Tensor:
    return _reduce_extreme(x, mask, False)


def reduce_mean(x, mask=None) -> Tensor:
    x = as_tensor(x)
    m = _time_mask(x, mask)
    w = np.ones_like(x.data) if m is None else m.astype(x.data.dtype)
    cnt = w.sum(axis=-1)
    out = (x.data * w).sum(axis=-1) / cnt
    return _make(out, (x,), lambda g: (g[..., None] * w / cnt[..., None],), "reduce_mean")


def binary_cross_entropy(p, y) -> Tensor:
    """Elementwise ``-(y ln p + (1 - y) ln(1 - p))`` with p clamped to [1e-7, 1 - 1e-7].

    The gradient is evaluated at the clamped probability and passed straight
    through, so saturated predictions still receive a finite, non-zero signal.
    """
    p = as_tensor(p)
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=p.data.dtype)
    _broadcast_check(p, Tensor(y), "binary_cross_entropy")
    pc = np.clip(p.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    out = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    out = np.broadcast_to(out, np.broadcast_shapes(p.shape, y.shape)).copy()

    def backward(g):
        return (_unbroadcast(g * (pc - y) / (pc * (1.0 - pc)), p.shape),)

    return _make(out, (p,), backward, "bce")


def squared_error(p, y) -> Tensor:
    p = as_tensor(p)
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=p.data.dtype)
    _broadcast_check(p, Tensor(y), "squared_error")
    d = p.data - y
    return _make(d * d, (p,), lambda g: (_unbroadcast(2.0 * g * d, p.shape),), "squared_error")


# ---------------------------------------------------------------------------
# graph traversal


@dataclass
class Graph:
    """Nodes reachable from an output, in topological order (inputs first)."""

    nodes: list

    @classmethod
    def trace(cls, output: Tensor) -> "Graph":
        order, seen = [], set()
        stack = [(output, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)


def backward(loss: Tensor, wrt=None):
    """Reverse-mode gradients of a scalar ``loss``.

    Leaf tensors reached by the graph get their ``.grad`` set. If ``wrt`` is a
    list or dict of tensors, gradients are returned in the same structure
    (zeros for tensors the loss does not depend on).
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = Graph.trace(loss)
    for node in graph.nodes:
        if not node.parents:
            node.grad = None
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else np.asarray(pg, dtype=parent.data.dtype)
    if wrt is None:
        return None
    if isinstance(wrt, dict):
        return {k: _grad_or_zeros(t) for k, t in wrt.items()}
    return [_grad_or_zeros(t) for t in wrt]


def _grad_or_zeros(t):
    return t.grad if t.grad is not None else np.zeros_like(t.data)
