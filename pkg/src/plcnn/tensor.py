"""Dense 4-D tensor type and hand-derived forward/backward layer kernels.

Everything is float32 end to end. Each public kernel takes and returns
:class:`Tensor` values; the underscore-prefixed array functions are the same
math on raw ndarrays and exist so the graph module can keep forward caches
(im2col columns, batch-norm statistics) on its tape instead of recomputing
them during the backward pass.

Convolution is cross-correlation (no kernel flip). Max-pooling is 2x2,
stride 2, no padding, first-index tie rule.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, InputError

DTYPE = np.float32


class Tensor:
    """A (N, C, H, W) float32 array with an optional gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data, grad=None):
        arr = np.ascontiguousarray(data, dtype=DTYPE)
        if arr.ndim != 4:
            raise ConfigurationError(
                "Tensor must be 4-D (N, C, H, W), got shape %s" % (arr.shape,))
        if min(arr.shape) < 1:
            raise ConfigurationError("Tensor dims must be positive, got %s" % (arr.shape,))
        self.data = arr
        self.grad = None
        if grad is not None:
            g = np.ascontiguousarray(grad, dtype=DTYPE)
            if g.shape != arr.shape:
                raise ConfigurationError(
                    "grad shape %s does not match data shape %s" % (g.shape, arr.shape))
            self.grad = g

    @property
    def dims(self):
        return self.data.shape

    @classmethod
    def zeros(cls, dims):
        return cls(np.zeros(dims, DTYPE))

    def ensure_grad(self):
        """Allocate (or zero) the gradient buffer and return it."""
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)
        return self.grad

    def __repr__(self):
        return "Tensor(dims=%s)" % (self.dims,)


@dataclass
class ConvParams:
    """Weight, bias and geometry of one convolution."""

    weight: Tensor                      # (C_out, C_in, k, k), k in {1, 3}
    bias: np.ndarray                    # (C_out,)
    stride: int = 1
    padding: int = None                 # None -> (k - 1) // 2, "same" at stride 1

    def __post_init__(self):
        co, ci, kh, kw = self.weight.dims
        if kh != kw or kh not in (1, 3):
            raise ConfigurationError(
                "conv kernel must be square 1x1 or 3x3, got %dx%d" % (kh, kw))
        self.bias = np.ascontiguousarray(self.bias, dtype=DTYPE)
        if self.bias.shape != (co,):
            raise ConfigurationError(
                "bias shape %s does not match %d output channels" % (self.bias.shape, co))
        if self.stride < 1:
            raise ConfigurationError("stride must be positive, got %d" % self.stride)
        if self.padding is None:
            self.padding = (kh - 1) // 2
        if self.padding < 0:
            raise ConfigurationError("padding must be non-negative, got %d" % self.padding)

    @property
    def kernel(self):
        return self.weight.dims[2]


@dataclass
class BatchNormParams:
    """Affine parameters, running statistics and mode of one batch norm."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1
    mode: str = "training"              # "training" | "inference"

    def __post_init__(self):
        self.gamma = np.ascontiguousarray(self.gamma, dtype=DTYPE)
        self.beta = np.ascontiguousarray(self.beta, dtype=DTYPE)
        self.running_mean = np.ascontiguousarray(self.running_mean, dtype=DTYPE)
        self.running_var = np.ascontiguousarray(self.running_var, dtype=DTYPE)
        c = self.gamma.shape[0]
        for name in ("beta", "running_mean", "running_var"):
            if getattr(self, name).shape != (c,):
                raise ConfigurationError("%s must have shape (%d,)" % (name, c))
        if self.eps <= 0:
            raise ConfigurationError("eps must be positive, got %g" % self.eps)
        if not 0.0 < self.momentum < 1.0:
            raise ConfigurationError("momentum must be in (0, 1), got %g" % self.momentum)
        if self.mode not in ("training", "inference"):
            raise ConfigurationError("mode must be 'training' or 'inference', got %r" % self.mode)
        if np.any(self.running_var < 0):
            raise ConfigurationError("running_var entries must be non-negative")

    @classmethod
    def fresh(cls, channels, **kw):
        """Identity-initialized parameters: gamma 1, beta 0, mean 0, var 1."""
        return cls(np.ones(channels, DTYPE), np.zeros(channels, DTYPE),
                   np.zeros(channels, DTYPE), np.ones(channels, DTYPE), **kw)


# ---------------------------------------------------------------------------
# convolution


def _conv_out_hw(h, w, k, stride, pad):
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    return ho, wo


def _im2col(x, k, stride, pad):
    """Gather receptive fields into a (C*k*k, N*Ho*Wo) matrix.

    The channel-major row layout is several times cheaper to build than the
    (N*Ho*Wo, C*k*k) transpose because each (c, i, j) row copies contiguous
    runs of the padded input.
    """
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    if stride > 1:
        win = win[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * ho * wo)
    return cols, xp.shape, ho, wo


def _conv_fwd(x, w, b, stride, pad):
    """Forward convolution; returns (y, cache) with cache reused by _conv_bwd."""
    n = x.shape[0]
    co, ci, k, _ = w.shape
    cols, xp_shape, ho, wo = _im2col(x, k, stride, pad)
    out = w.reshape(co, -1) @ cols
    out += b[:, None]
    y = np.ascontiguousarray(out.reshape(co, n, ho, wo).transpose(1, 0, 2, 3))
    return y, (cols, xp_shape)


def _conv_bwd(w, grad_out, cache, stride, pad):
    """Gradients (grad_x, grad_w, grad_b) for _conv_fwd."""
    cols, xp_shape = cache
    n, co, ho, wo = grad_out.shape
    ci, k = w.shape[1], w.shape[2]
    g2 = grad_out.transpose(1, 0, 2, 3).reshape(co, -1)
    grad_w = (g2 @ cols.T).reshape(w.shape)
    grad_b = g2.sum(axis=1)
    dcols = w.reshape(co, -1).T @ g2
    dc = dcols.reshape(ci, k, k, n, ho, wo)
    dxp = np.zeros(xp_shape, DTYPE)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                dc[:, i, j].transpose(1, 0, 2, 3)
    grad_x = dxp[:, :, pad:-pad, pad:-pad] if pad else dxp
    return np.ascontiguousarray(grad_x), grad_w, grad_b


def conv2d_forward(x: Tensor, p: ConvParams) -> Tensor:
    """Cross-correlate x with p.weight, add bias."""
    n, c, h, w = x.dims
    co, ci, k, _ = p.weight.dims
    if c != ci:
        raise ConfigurationError(
            "conv2d: input %s has %d channels but weight %s expects %d"
            % (x.dims, c, p.weight.dims, ci))
    ho, wo = _conv_out_hw(h, w, k, p.stride, p.padding)
    if ho < 1 or wo < 1:
        raise ConfigurationError(
            "conv2d: output dims %dx%d are not positive for input %s, kernel %d, "
            "stride %d, padding %d" % (ho, wo, x.dims, k, p.stride, p.padding))
    y, _ = _conv_fwd(x.data, p.weight.data, p.bias, p.stride, p.padding)
    return Tensor(y)


def conv2d_backward(x: Tensor, p: ConvParams, grad_out: Tensor):
    """Gradients of a sum-weighted loss w.r.t. conv input, weight and bias."""
    n, c, h, w = x.dims
    co, ci, k, _ = p.weight.dims
    if c != ci:
        raise ConfigurationError(
            "conv2d: input %s has %d channels but weight %s expects %d"
            % (x.dims, c, p.weight.dims, ci))
    ho, wo = _conv_out_hw(h, w, k, p.stride, p.padding)
    if grad_out.dims != (n, co, ho, wo):
        raise ConfigurationError(
            "conv2d_backward: grad_out dims %s do not match output dims %s"
            % (grad_out.dims, (n, co, ho, wo)))
    cols, xp_shape, _, _ = _im2col(x.data, k, p.stride, p.padding)
    gx, gw, gb = _conv_bwd(p.weight.data, grad_out.data, (cols, xp_shape),
                           p.stride, p.padding)
    return Tensor(gx), Tensor(gw), gb


# ---------------------------------------------------------------------------
# batch normalization


def _bn_train_fwd(x, bn):
    """Training-mode batch norm. Updates bn's running statistics in place."""
    n, c, h, w = x.shape
    m = n * h * w
    if m == 1:
        raise InputError(
            "batchnorm: cannot compute batch statistics over a single value "
            "(N*H*W = 1); increase batch size or spatial dims")
    mu = x.mean(axis=(0, 2, 3))
    xc = x - mu.reshape(1, c, 1, 1)
    var = np.mean(xc * xc, axis=(0, 2, 3))
    inv = 1.0 / np.sqrt(var + bn.eps)
    xhat = xc * inv.reshape(1, c, 1, 1)
    y = bn.gamma.reshape(1, c, 1, 1) * xhat + bn.beta.reshape(1, c, 1, 1)
    # running stats keep the unbiased variance, normalization uses the biased one
    bn.running_mean[:] = (1.0 - bn.momentum) * bn.running_mean + bn.momentum * mu
    bn.running_var[:] = (1.0 - bn.momentum) * bn.running_var \
        + bn.momentum * (var * (m / (m - 1.0)))
    return y, (xhat, inv, bn.gamma)


def _bn_bwd(grad_out, cache):
    """Training-mode gradients (grad_x, grad_gamma, grad_beta)."""
    xhat, inv, gamma = cache
    n, c, h, w = grad_out.shape
    m = n * h * w
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    coef = (gamma * inv / m).reshape(1, c, 1, 1)
    grad_x = coef * (m * grad_out - grad_beta.reshape(1, c, 1, 1)
                     - xhat * grad_gamma.reshape(1, c, 1, 1))
    return grad_x, grad_gamma, grad_beta


def _bn_eval_fwd(x, bn):
    """Inference-mode batch norm: a fixed per-channel affine map."""
    c = x.shape[1]
    inv = 1.0 / np.sqrt(bn.running_var + bn.eps)
    scale = bn.gamma * inv
    shift = bn.beta - bn.running_mean * scale
    y = x * scale.reshape(1, c, 1, 1) + shift.reshape(1, c, 1, 1)
    return y, (scale,)


def _bn_eval_bwd(grad_out, cache):
    (scale,) = cache
    return grad_out * scale.reshape(1, -1, 1, 1)


def batchnorm_forward(x: Tensor, p: BatchNormParams) -> Tensor:
    """Standardize per channel (batch stats in training, running stats in
    inference), then scale by gamma and shift by beta."""
    if x.dims[1] != p.gamma.shape[0]:
        raise ConfigurationError(
            "batchnorm: input %s has %d channels but gamma has %d"
            % (x.dims, x.dims[1], p.gamma.shape[0]))
    if p.mode == "training":
        y, _ = _bn_train_fwd(x.data, p)
    else:
        y, _ = _bn_eval_fwd(x.data, p)
    return Tensor(y)


def batchnorm_backward(x: Tensor, p: BatchNormParams, grad_out: Tensor):
    """Gradients (grad_x, grad_gamma, grad_beta). Pure: running statistics
    are not touched, training mode recomputes batch stats from x."""
    if x.dims != grad_out.dims:
        raise ConfigurationError(
            "batchnorm_backward: grad_out dims %s do not match input dims %s"
            % (grad_out.dims, x.dims))
    c = x.dims[1]
    if p.mode == "training":
        xd = x.data
        m = xd.shape[0] * xd.shape[2] * xd.shape[3]
        if m == 1:
            raise InputError("batchnorm: N*H*W = 1 has degenerate batch statistics")
        mu = xd.mean(axis=(0, 2, 3))
        xc = xd - mu.reshape(1, c, 1, 1)
        var = np.mean(xc * xc, axis=(0, 2, 3))
        inv = 1.0 / np.sqrt(var + p.eps)
        xhat = xc * inv.reshape(1, c, 1, 1)
        gx, gg, gb = _bn_bwd(grad_out.data, (xhat, inv, p.gamma))
    else:
        inv = 1.0 / np.sqrt(p.running_var + p.eps)
        xhat = (x.data - p.running_mean.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
        gb = grad_out.data.sum(axis=(0, 2, 3))
        gg = (grad_out.data * xhat).sum(axis=(0, 2, 3))
        gx = grad_out.data * (p.gamma * inv).reshape(1, c, 1, 1)
    return Tensor(gx), gg, gb


# ---------------------------------------------------------------------------
# relu


def relu(x: Tensor) -> Tensor:
    return Tensor(np.maximum(x.data, 0.0))


def relu_backward(x: Tensor, grad_out: Tensor) -> Tensor:
    if x.dims != grad_out.dims:
        raise ConfigurationError(
            "relu_backward: grad_out dims %s do not match input dims %s"
            % (grad_out.dims, x.dims))
    return Tensor(grad_out.data * (x.data > 0))


def _relu_bwd(x, grad_out):
    return grad_out * (x > 0)


# ---------------------------------------------------------------------------
# max pooling


def _pool_fwd(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ConfigurationError(
            "maxpool2 needs even H and W (2x2 windows, stride 2); got %dx%d. "
            "Align the input size so every stage halves cleanly." % (h, w))
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5) \
        .reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=4)            # first max wins on ties
    y = np.take_along_axis(win, idx[..., None], axis=4)[..., 0]
    return np.ascontiguousarray(y), idx


def _pool_bwd(idx, grad_out):
    n, c, ho, wo = grad_out.shape
    gwin = np.zeros((n, c, ho, wo, 4), DTYPE)
    np.put_along_axis(gwin, idx[..., None], grad_out[..., None], axis=4)
    gx = gwin.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5) \
        .reshape(n, c, 2 * ho, 2 * wo)
    return np.ascontiguousarray(gx)


def maxpool2(x: Tensor):
    """2x2/stride-2 max pool. Returns (output, indices); indices hold the
    row-major position (0..3) of each window's winner."""
    y, idx = _pool_fwd(x.data)
    return Tensor(y), idx


def maxpool2_backward(idx, grad_out: Tensor) -> Tensor:
    """Route grad_out entries back to the recorded winners."""
    if idx.shape != grad_out.dims:
        raise ConfigurationError(
            "maxpool2_backward: indices shape %s does not match grad_out dims %s"
            % (idx.shape, grad_out.dims))
    return Tensor(_pool_bwd(idx, grad_out.data))


# ---------------------------------------------------------------------------
# channel concatenation


def concat_channels(xs) -> Tensor:
    """Concatenate along the channel axis, in the order given."""
    if not xs:
        raise ConfigurationError("concat_channels needs at least one input")
    n, _, h, w = xs[0].dims
    for i, t in enumerate(xs[1:], start=1):
        ni, _, hi, wi = t.dims
        if (ni, hi, wi) != (n, h, w):
            raise ConfigurationError(
                "concat_channels: input 0 has dims %s but input %d has dims %s"
                % (xs[0].dims, i, t.dims))
    return Tensor(np.concatenate([t.data for t in xs], axis=1))


def concat_backward(grad_out: Tensor, channels):
    """Split grad_out back into per-input gradients by channel counts."""
    if sum(channels) != grad_out.dims[1]:
        raise ConfigurationError(
            "concat_backward: channel counts %s sum to %d, grad_out has %d channels"
            % (list(channels), sum(channels), grad_out.dims[1]))
    offsets = np.cumsum(channels)[:-1]
    return [Tensor(part) for part in np.split(grad_out.data, offsets, axis=1)]


def _split_channels(grad, channels):
    return np.split(grad, np.cumsum(channels)[:-1], axis=1)


# ---------------------------------------------------------------------------
# fully connected head


def linear_forward(x: Tensor, weight, bias):
    """Flatten each sample and apply logits = W x + b.

    Returns a (N, C_classes) float32 array; logits leave 4-D tensor land.
    """
    n = x.dims[0]
    d = x.data.size // n
    weight = np.ascontiguousarray(weight, dtype=DTYPE)
    if weight.ndim != 2 or weight.shape[1] != d:
        raise ConfigurationError(
            "linear: flattened input length %d does not match weight %s"
            % (d, weight.shape))
    return x.data.reshape(n, d) @ weight.T + bias


def linear_backward(x: Tensor, weight, grad_logits):
    """Gradients (grad_x, grad_w, grad_b) of the fully connected layer."""
    n = x.dims[0]
    d = x.data.size // n
    weight = np.ascontiguousarray(weight, dtype=DTYPE)
    if weight.ndim != 2 or weight.shape[1] != d:
        raise ConfigurationError(
            "linear: flattened input length %d does not match weight %s"
            % (d, weight.shape))
    if grad_logits.shape != (n, weight.shape[0]):
        raise ConfigurationError(
            "linear_backward: grad_logits shape %s does not match (%d, %d)"
            % (grad_logits.shape, n, weight.shape[0]))
    x2 = x.data.reshape(n, d)
    grad_w = grad_logits.T @ x2
    grad_b = grad_logits.sum(axis=0)
    grad_x = (grad_logits @ weight).reshape(x.dims)
    return Tensor(grad_x), grad_w, grad_b


def _linear_fwd(x4, weight, bias):
    n = x4.shape[0]
    x2 = x4.reshape(n, -1)
    return x2 @ weight.T + bias, x2


def _linear_bwd(x2, weight, grad_logits):
    grad_w = grad_logits.T @ x2
    grad_b = grad_logits.sum(axis=0)
    grad_x2 = grad_logits @ weight
    return grad_x2, grad_w, grad_b


# ---------------------------------------------------------------------------
# elementwise sum (skip connections)


def add(x: Tensor, y: Tensor) -> Tensor:
    if x.dims != y.dims:
        raise ConfigurationError(
            "add: dims %s and %s do not match" % (x.dims, y.dims))
    return Tensor(x.data + y.data)


def add_backward(grad_out: Tensor):
    """The sum routes the upstream gradient to both addends unchanged."""
    return grad_out, grad_out
