"""Forward and backward kernels for the CNN-BLSTM layers.

Image tensors are laid out ``[..., W, H, C]`` (width first, so that each
column becomes one timestep); sequences are ``[..., T, F]``. Any number of
leading batch axes is accepted.

Every forward function returns ``(output, cache)`` and the matching
``*_backward(cache, grad_out)`` returns the input gradient, plus a dict of
parameter gradients for parameterized layers.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError

LEAKY_SLOPE = 0.01
GATES = ("input", "forget", "cell", "output")


class ConvParams(NamedTuple):
    kernel: np.ndarray  # [3, 3, C_in, C_out], axes (dw, dh, c_in, c_out)
    bias: np.ndarray  # [C_out]


class LstmParams(NamedTuple):
    w_input: np.ndarray  # [4U, I], gate blocks ordered as GATES
    w_recurrent: np.ndarray  # [4U, U]
    bias: np.ndarray  # [4U]


class DenseParams(NamedTuple):
    weight: np.ndarray  # [K, F]
    bias: np.ndarray  # [K]


def _check_cache(cache, kind):
    if not isinstance(cache, tuple) or not cache or cache[0] != kind:
        raise ValueError(f"cache does not come from a {kind} forward call")


# --- convolution ----------------------------------------------------------

def conv2d(p: ConvParams, x: np.ndarray):
    """3x3 stride-1 cross-correlation with zero 'same' padding, plus bias."""
    kernel, bias = p
    if kernel.shape[:2] != (3, 3):
        raise ShapeError(f"kernel must be 3x3, got {kernel.shape[:2]}")
    c_in, c_out = kernel.shape[2:]
    if x.shape[-1] != c_in:
        raise ShapeError(f"input has {x.shape[-1]} channels, kernel expects {c_in}")
    lead, (w, h) = x.shape[:-3], x.shape[-3:-1]
    pad = [(0, 0)] * len(lead) + [(1, 1), (1, 1), (0, 0)]
    xp = np.pad(x, pad)
    # [..., W, H, C, 3, 3] -> rows of (c, dw, dh)
    cols = sliding_window_view(xp, (3, 3), axis=(-3, -2)).reshape(-1, c_in * 9)
    kmat = kernel.transpose(2, 0, 1, 3).reshape(c_in * 9, c_out)
    y = (cols @ kmat + bias).reshape(*lead, w, h, c_out)
    return y, ("conv2d", cols, kmat, x.shape)


def conv2d_backward(cache, dy: np.ndarray):
    _check_cache(cache, "conv2d")
    _, cols, kmat, xshape = cache
    c_in, c_out = xshape[-1], kmat.shape[1]
    lead, (w, h) = xshape[:-3], xshape[-3:-1]
    dyf = dy.reshape(-1, c_out)
    dkernel = (cols.T @ dyf).reshape(c_in, 3, 3, c_out).transpose(1, 2, 0, 3)
    dbias = dyf.sum(axis=0)
    dcols = (dyf @ kmat.T).reshape(*lead, w, h, c_in, 3, 3)
    dxp = np.zeros((*lead, w + 2, h + 2, c_in), dtype=dy.dtype)
    for i in range(3):
        for j in range(3):
            dxp[..., i:i + w, j:j + h, :] += dcols[..., i, j]
    dx = dxp[..., 1:-1, 1:-1, :]
    return dx, {"kernel": dkernel, "bias": dbias}


# --- pooling and activation -----------------------------------------------

def maxpool2x2(x: np.ndarray):
    """Non-overlapping 2x2 max pooling; an odd trailing row/column is dropped.

    The cache records the winning position of each block (first maximum in
    row-major block order) so the backward pass routes gradient to it alone.
    """
    w, h, c = x.shape[-3:]
    if w < 2 or h < 2:
        raise ShapeError(f"pooling needs W, H >= 2, got {w}x{h}")
    lead = x.shape[:-3]
    w2, h2 = w // 2, h // 2
    blocks = x[..., :2 * w2, :2 * h2, :].reshape(*lead, w2, 2, h2, 2, c)
    nl = len(lead)
    order = tuple(range(nl)) + (nl, nl + 2, nl + 4, nl + 1, nl + 3)
    blocks = blocks.transpose(order).reshape(*lead, w2, h2, c, 4)
    arg = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return y, ("maxpool", arg, x.shape)


def maxpool2x2_backward(cache, dy: np.ndarray):
    _check_cache(cache, "maxpool")
    _, arg, xshape = cache
    lead = xshape[:-3]
    w, h, c = xshape[-3:]
    w2, h2 = w // 2, h // 2
    routed = (np.arange(4) == arg[..., None]) * dy[..., None]
    nl = len(lead)
    routed = routed.reshape(*lead, w2, h2, c, 2, 2)
    inv = tuple(range(nl)) + (nl, nl + 3, nl + 1, nl + 4, nl + 2)
    routed = routed.transpose(inv).reshape(*lead, 2 * w2, 2 * h2, c)
    dx = np.zeros(xshape, dtype=dy.dtype)
    dx[..., :2 * w2, :2 * h2, :] = routed
    return dx


def leaky_relu(x: np.ndarray, slope: float = LEAKY_SLOPE):
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must lie in (0, 1), got {slope}")
    pos = x >= 0
    return np.where(pos, x, slope * x), ("leaky_relu", pos, slope)


def leaky_relu_backward(cache, dy: np.ndarray):
    _check_cache(cache, "leaky_relu")
    _, pos, slope = cache
    return np.where(pos, dy, slope * dy)


# --- reshaping --------------------------------------------------------------

def collapse_columns(x: np.ndarray) -> np.ndarray:
    """[..., W, H, D] -> [..., W, H*D]; feature index is ``h * D + d``."""
    w, h, d = x.shape[-3:]
    return x.reshape(*x.shape[:-3], w, h * d)


def expand_columns(seq: np.ndarray, height: int, depth: int) -> np.ndarray:
    """Inverse of :func:`collapse_columns`."""
    if seq.shape[-1] != height * depth:
        raise ShapeError(f"feature extent {seq.shape[-1]} != {height}*{depth}")
    return seq.reshape(*seq.shape[:-1], height, depth)


# --- recurrent ---------------------------------------------------------------

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def reverse_sequence(x: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Reverse the first ``lengths[b]`` steps of each batch row of ``x[B, T, ...]``.

    Steps past a row's length stay where they are, so padding never leaks
    into the valid part of a reversed sequence.
    """
    t = x.shape[1]
    steps = np.arange(t)[None, :]
    lens = np.asarray(lengths)[:, None]
    idx = np.where(steps < lens, lens - 1 - steps, steps)
    idx = idx.reshape(idx.shape + (1,) * (x.ndim - 2))
    return np.take_along_axis(x, idx, axis=1)


def _as_batch(seq, lengths):
    single = seq.ndim == 2
    if single:
        seq = seq[None]
    if seq.ndim != 3:
        raise ShapeError(f"sequence must be [T, F] or [B, T, F], got {seq.shape}")
    b, t = seq.shape[:2]
    if t < 1:
        raise ShapeError("sequence needs at least one timestep")
    if lengths is None:
        lengths = np.full(b, t, dtype=np.int64)
    else:
        lengths = np.asarray(lengths, dtype=np.int64)
        if lengths.shape != (b,) or lengths.min() < 1 or lengths.max() > t:
            raise ShapeError(f"bad lengths {lengths} for batch of shape {seq.shape}")
    return seq, lengths, single


def lstm_forward(p: LstmParams, seq: np.ndarray, reverse: bool = False, lengths=None):
    """Peephole-free LSTM with zero initial state.

    ``seq`` is [T, I] or [B, T, I]; ``lengths`` gives per-row valid steps.
    With ``reverse=True`` each row is processed from its last valid step
    backwards and the output is re-reversed to input order.
    """
    w_in, w_rec, bias = p
    seq, lengths, single = _as_batch(seq, lengths)
    u = w_rec.shape[1]
    if w_in.shape != (4 * u, seq.shape[-1]) or w_rec.shape != (4 * u, u) or bias.shape != (4 * u,):
        raise ShapeError("LSTM parameter shapes do not match input/units")
    b, t, _ = seq.shape
    x = reverse_sequence(seq, lengths) if reverse else seq
    xz = x @ w_in.T + bias
    dt = xz.dtype
    acts = np.empty((t, 4, b, u), dtype=dt)  # i, f, g, o
    cells = np.empty((t + 1, b, u), dtype=dt)
    hs = np.empty((t + 1, b, u), dtype=dt)
    tanh_c = np.empty((t, b, u), dtype=dt)
    cells[0] = 0.0
    hs[0] = 0.0
    for k in range(t):
        z = xz[:, k] + hs[k] @ w_rec.T
        i = _sigmoid(z[:, :u])
        f = _sigmoid(z[:, u:2 * u])
        g = np.tanh(z[:, 2 * u:3 * u])
        o = _sigmoid(z[:, 3 * u:])
        cells[k + 1] = f * cells[k] + i * g
        tanh_c[k] = np.tanh(cells[k + 1])
        hs[k + 1] = o * tanh_c[k]
        acts[k, 0], acts[k, 1], acts[k, 2], acts[k, 3] = i, f, g, o
    out = hs[1:].transpose(1, 0, 2)
    if reverse:
        out = reverse_sequence(out, lengths)
    cache = ("lstm", x, acts, cells, hs, tanh_c, w_in, w_rec, reverse, lengths, single)
    return (out[0] if single else out), cache


def lstm_backward(cache, dout: np.ndarray):
    _check_cache(cache, "lstm")
    _, x, acts, cells, hs, tanh_c, w_in, w_rec, reverse, lengths, single = cache
    if single:
        dout = dout[None]
    if reverse:
        dout = reverse_sequence(dout, lengths)
    t, _, b, u = acts.shape
    dz_all = np.empty((b, t, 4 * u), dtype=dout.dtype)
    dw_rec = np.zeros_like(w_rec)
    dh_next = np.zeros((b, u), dtype=dout.dtype)
    dc_next = np.zeros((b, u), dtype=dout.dtype)
    for k in range(t - 1, -1, -1):
        i, f, g, o = acts[k]
        dh = dout[:, k] + dh_next
        tc = tanh_c[k]
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * cells[k] * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            dh * tc * o * (1.0 - o),
        ], axis=1)
        dz_all[:, k] = dz
        dw_rec += dz.T @ hs[k]
        dh_next = dz @ w_rec
        dc_next = dc * f
    flat = dz_all.reshape(-1, 4 * u)
    dw_in = flat.T @ x.reshape(-1, x.shape[-1])
    dbias = flat.sum(axis=0)
    dx = dz_all @ w_in
    if reverse:
        dx = reverse_sequence(dx, lengths)
    grads = {"w_input": dw_in, "w_recurrent": dw_rec, "bias": dbias}
    return (dx[0] if single else dx), grads


def blstm(fwd: LstmParams, bwd: LstmParams, seq: np.ndarray, lengths=None):
    """Bidirectional LSTM; per-step output is [forward | backward]."""
    yf, cf = lstm_forward(fwd, seq, reverse=False, lengths=lengths)
    yb, cb = lstm_forward(bwd, seq, reverse=True, lengths=lengths)
    u = fwd.w_recurrent.shape[1]
    return np.concatenate([yf, yb], axis=-1), ("blstm", cf, cb, u)


def blstm_backward(cache, dout: np.ndarray):
    _check_cache(cache, "blstm")
    _, cf, cb, u = cache
    dxf, gf = lstm_backward(cf, dout[..., :u])
    dxb, gb = lstm_backward(cb, dout[..., u:])
    return dxf + dxb, {"fwd": gf, "bwd": gb}


# --- regularization and output ---------------------------------------------

def dropout(x: np.ndarray, rate: float, train: bool, rng: np.random.Generator | None = None):
    """Inverted dropout; identity outside training or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, ("dropout", None)
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    keep = rng.random(x.shape) >= rate
    scale = keep.astype(x.dtype) / (1.0 - rate)
    return x * scale, ("dropout", scale)


def dropout_backward(cache, dy: np.ndarray):
    _check_cache(cache, "dropout")
    scale = cache[1]
    return dy if scale is None else dy * scale


def dense(p: DenseParams, seq: np.ndarray):
    weight, bias = p
    if seq.shape[-1] != weight.shape[1]:
        raise ShapeError(f"dense expects {weight.shape[1]} features, got {seq.shape[-1]}")
    return seq @ weight.T + bias, ("dense", seq, weight)


def dense_backward(cache, dy: np.ndarray):
    _check_cache(cache, "dense")
    _, seq, weight = cache
    k = weight.shape[0]
    dyf = dy.reshape(-1, k)
    dweight = dyf.T @ seq.reshape(-1, seq.shape[-1])
    return dy @ weight, {"weight": dweight, "bias": dyf.sum(axis=0)}


_BACKWARD = {
    "conv2d": conv2d_backward,
    "maxpool": maxpool2x2_backward,
    "leaky_relu": leaky_relu_backward,
    "lstm": lstm_backward,
    "blstm": blstm_backward,
    "dropout": dropout_backward,
    "dense": dense_backward,
}


def layer_backward(cache, upstream: np.ndarray):
    """Dispatch to the backward kernel matching ``cache``.

    Returns ``(input_grad, param_grads)``; ``param_grads`` is an empty dict for
    parameter-free layers.
    """
    if cache is None:
        raise ValueError("missing forward cache")
    if not isinstance(cache, tuple) or not cache or cache[0] not in _BACKWARD:
        raise ValueError("unrecognized forward cache")
    out = _BACKWARD[cache[0]](cache, upstream)
    return out if isinstance(out, tuple) else (out, {})
