"""Layers with explicit forward/backward passes, float64 throughout.

Every layer caches what its backward pass needs during ``forward``; calling
``backward`` accumulates parameter gradients and returns the input gradient.
Inputs to the convolutional layers are batched ``(N, C, H, W)`` arrays.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Parameter:
    __slots__ = ("name", "data", "grad", "velocity")

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self.velocity = np.zeros_like(self.data)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Module:
    training = True

    def parameters(self) -> list[Parameter]:
        return []

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state that must be saved with the weights."""
        return {}

    def train(self, mode: bool = True):
        self.training = mode
        for child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def children(self) -> list["Module"]:
        return []

    def __call__(self, x):
        return self.forward(x)


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------


def _conv_out(size, k, stride, padding, dilation):
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _im2col(x, k, stride, padding, dilation):
    """(N, C, H, W) -> columns of shape (C * k * k, N * Ho * Wo)."""
    n, c, h, w = x.shape
    ho = _conv_out(h, k, stride, padding, dilation)
    wo = _conv_out(w, k, stride, padding, dilation)
    if ho < 1 or wo < 1:
        raise ValueError("kernel does not fit the padded input")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    span = dilation * (k - 1) + 1
    win = sliding_window_view(xp, (span, span), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride, ::dilation, ::dilation]
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * ho * wo), ho, wo


def _conv_forward(x, weight, bias, stride, padding, dilation):
    n, cin = x.shape[:2]
    cout, wcin, k, k2 = weight.shape
    if wcin != cin or k != k2:
        raise ValueError(f"weight {weight.shape} does not match input {x.shape}")
    cols, ho, wo = _im2col(x, k, stride, padding, dilation)
    out = weight.reshape(cout, -1) @ cols
    out += bias[:, None]
    out = np.ascontiguousarray(out.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3))
    return out, cols


def conv2d_forward(x, weight, bias, stride=1, padding=0, dilation=1):
    """Cross-correlation of ``x`` (N, Cin, H, W) or (Cin, H, W) with ``weight`` (Cout, Cin, k, k)."""
    squeeze = x.ndim == 3
    out, _ = _conv_forward(x[None] if squeeze else x, weight, bias, stride, padding, dilation)
    return out[0] if squeeze else out


def conv2d_backward(dout, x, weight, stride=1, padding=0, dilation=1, cols=None):
    """Returns ``(dx, dweight, dbias)`` for :func:`conv2d_forward`.

    ``cols`` may carry the im2col matrix saved by the forward pass.
    """
    squeeze = x.ndim == 3
    if squeeze:
        x, dout = x[None], dout[None]
    n, cin, h, w = x.shape
    cout, _, k, _ = weight.shape
    ho, wo = dout.shape[2], dout.shape[3]
    if cols is None:
        cols, ho, wo = _im2col(x, k, stride, padding, dilation)
    g = dout.transpose(1, 0, 2, 3).reshape(cout, -1)
    dweight = (g @ cols.T).reshape(weight.shape)
    dbias = g.sum(axis=1)
    full_pad = dilation * (k - 1) - padding
    if stride == 1 and full_pad >= 0:
        # stride-1 input gradient = convolution of dout with the flipped, transposed kernel
        flipped = np.ascontiguousarray(weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        dx, _ = _conv_forward(dout, flipped, np.zeros(cin), 1, full_pad, dilation)
        return (dx[0] if squeeze else dx), dweight, dbias
    dcols = (weight.reshape(cout, -1).T @ g).reshape(cin, k, k, n, ho, wo)
    dxp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding))
    for i in range(k):
        for j in range(k):
            r0, c0 = i * dilation, j * dilation
            dxp[:, :, r0 : r0 + stride * (ho - 1) + 1 : stride, c0 : c0 + stride * (wo - 1) + 1 : stride] += (
                dcols[:, i, j].transpose(1, 0, 2, 3)
            )
    dx = dxp[:, :, padding : padding + h, padding : padding + w]
    dx = dx[0] if squeeze else np.ascontiguousarray(dx)
    return dx, dweight, dbias


class Conv2d(Module):
    def __init__(self, name, in_ch, out_ch, kernel, rng, stride=1, padding=0, dilation=1):
        fan_in, fan_out = in_ch * kernel * kernel, out_ch * kernel * kernel
        self.weight = Parameter(
            f"{name}.weight", glorot_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in, fan_out)
        )
        self.bias = Parameter(f"{name}.bias", np.zeros(out_ch))
        self.stride, self.padding, self.dilation = stride, padding, dilation
        self._x = self._cols = None

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x):
        self._x = x
        out, self._cols = _conv_forward(
            x, self.weight.data, self.bias.data, self.stride, self.padding, self.dilation
        )
        return out

    def backward(self, dout):
        dx, dw, db = conv2d_backward(
            dout, self._x, self.weight.data, self.stride, self.padding, self.dilation, self._cols
        )
        self.weight.grad += dw
        self.bias.grad += db
        return dx


def conv_transpose2d_forward(x, weight, bias):
    """Non-overlapping transposed convolution, stride equal to the kernel size.

    ``x`` is (N, Cin, H, W), ``weight`` (Cin, Cout, k, k); output (N, Cout, kH, kW).
    """
    n, cin, h, w = x.shape
    wcin, cout, k, _ = weight.shape
    if wcin != cin:
        raise ValueError(f"weight {weight.shape} does not match input {x.shape}")
    out = np.empty((n, cout, h * k, w * k))
    for a in range(k):
        for b in range(k):
            out[:, :, a::k, b::k] = np.einsum("nchw,cd->ndhw", x, weight[:, :, a, b], optimize=True)
    out += bias[None, :, None, None]
    return out


def conv_transpose2d_backward(dout, x, weight):
    k = weight.shape[2]
    dx = np.zeros_like(x)
    dweight = np.empty_like(weight)
    for a in range(k):
        for b in range(k):
            g = dout[:, :, a::k, b::k]
            dx += np.einsum("ndhw,cd->nchw", g, weight[:, :, a, b], optimize=True)
            dweight[:, :, a, b] = np.einsum("nchw,ndhw->cd", x, g, optimize=True)
    return dx, dweight, dout.sum(axis=(0, 2, 3))


class ConvTranspose2d(Module):
    def __init__(self, name, in_ch, out_ch, kernel, rng):
        fan_in, fan_out = in_ch * kernel * kernel, out_ch * kernel * kernel
        self.weight = Parameter(
            f"{name}.weight", glorot_uniform(rng, (in_ch, out_ch, kernel, kernel), fan_in, fan_out)
        )
        self.bias = Parameter(f"{name}.bias", np.zeros(out_ch))
        self._x = None

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x):
        self._x = x
        return conv_transpose2d_forward(x, self.weight.data, self.bias.data)

    def backward(self, dout):
        dx, dw, db = conv_transpose2d_backward(dout, self._x, self.weight.data)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


# ---------------------------------------------------------------------------
# Dense layers and activations
# ---------------------------------------------------------------------------


class Linear(Module):
    def __init__(self, name, in_features, out_features, rng):
        self.weight = Parameter(
            f"{name}.weight",
            glorot_uniform(rng, (out_features, in_features), in_features, out_features),
        )
        self.bias = Parameter(f"{name}.bias", np.zeros(out_features))
        self._x = None

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x):
        if x.shape[-1] != self.weight.shape[1]:
            raise ValueError(f"expected {self.weight.shape[1]} input features, got {x.shape[-1]}")
        self._x = x
        return x @ self.weight.data.T + self.bias.data

    def backward(self, dout):
        self.weight.grad += dout.T @ self._x
        self.bias.grad += dout.sum(axis=0)
        return dout @ self.weight.data


class ReLU(Module):
    def __init__(self):
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dout):
        return np.where(self._mask, dout, 0.0)


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e))


class Sigmoid(Module):
    def __init__(self):
        self._y = None

    def forward(self, x):
        self._y = sigmoid(x)
        return self._y

    def backward(self, dout):
        return dout * self._y * (1 - self._y)


class BatchNorm1d(Module):
    """Batch normalization over the first axis of ``(N, F)`` inputs.

    With ``normalize_with="running"`` the training-mode forward pass still
    updates the running statistics from each batch but normalizes with the
    running estimates, exactly as in inference mode. Batches whose rows all
    come from one image share most of their content, and normalizing them by
    their own statistics strips the very information a regressor needs.
    """

    def __init__(self, name, features, momentum=0.1, eps=1e-5, normalize_with="batch"):
        if normalize_with not in ("batch", "running"):
            raise ValueError("normalize_with must be 'batch' or 'running'")
        self.normalize_with = normalize_with
        self.name = name
        self.gamma = Parameter(f"{name}.weight", np.ones(features))
        self.beta = Parameter(f"{name}.bias", np.zeros(features))
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)
        self.momentum, self.eps = momentum, eps
        self.num_batches = 0
        self._cache = None

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {
            f"{self.name}.running_mean": self.running_mean,
            f"{self.name}.running_var": self.running_var,
        }

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.gamma.shape[0]:
            raise ValueError(f"expected (N, {self.gamma.shape[0]}) input, got {x.shape}")
        batch_stats = self.training and self.normalize_with == "batch"
        if self.training and self.num_batches == 0 and self.normalize_with == "running":
            # seed the estimates with the first batch instead of (0, 1)
            self.running_mean[...] = x.mean(axis=0)
            self.running_var[...] = x.var(axis=0)
        if not batch_stats:
            # estimates accumulated before this batch
            mean, var = self.running_mean.copy(), self.running_var.copy()
        if self.training:
            if x.shape[0] < 2:
                raise ValueError("batch normalization needs at least 2 samples in training mode")
            n = x.shape[0]
            b_mean, b_var = x.mean(axis=0), x.var(axis=0)
            self.num_batches += 1
            self.running_mean *= 1 - self.momentum
            self.running_mean += self.momentum * b_mean
            self.running_var *= 1 - self.momentum
            self.running_var += self.momentum * b_var * n / (n - 1)
            if batch_stats:
                mean, var = b_mean, b_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, batch_stats)
        return self.gamma.data * xhat + self.beta.data

    def backward(self, dout):
        xhat, inv_std, batch_stats = self._cache
        self.gamma.grad += (dout * xhat).sum(axis=0)
        self.beta.grad += dout.sum(axis=0)
        dxhat = dout * self.gamma.data
        if not batch_stats:
            return dxhat * inv_std
        n = dout.shape[0]
        return (inv_std / n) * (
            n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
        )


class InstanceNorm2d(Module):
    """Per-image, per-channel normalization of ``(N, C, H, W)`` maps over space.

    Statistics come from the map being normalized, so training and inference
    compute the same function; a learned per-channel scale and shift follow.
    """

    def __init__(self, name, channels, eps=1e-5):
        self.gamma = Parameter(f"{name}.weight", np.ones(channels))
        self.beta = Parameter(f"{name}.bias", np.zeros(channels))
        self.eps = eps
        self._cache = None

    def parameters(self):
        return [self.gamma, self.beta]

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.gamma.shape[0]:
            raise ValueError(f"expected (N, {self.gamma.shape[0]}, H, W) input, got {x.shape}")
        if x.shape[2] * x.shape[3] < 2:
            raise ValueError("instance normalization needs at least 2 spatial positions")
        mean = x.mean(axis=(2, 3), keepdims=True)
        inv_std = 1.0 / np.sqrt(x.var(axis=(2, 3), keepdims=True) + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std)
        return self.gamma.data[:, None, None] * xhat + self.beta.data[:, None, None]

    def backward(self, dout):
        xhat, inv_std = self._cache
        self.gamma.grad += (dout * xhat).sum(axis=(0, 2, 3))
        self.beta.grad += dout.sum(axis=(0, 2, 3))
        dxhat = dout * self.gamma.data[:, None, None]
        m = xhat.shape[2] * xhat.shape[3]
        return (inv_std / m) * (
            m * dxhat
            - dxhat.sum(axis=(2, 3), keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=(2, 3), keepdims=True)
        )


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def children(self):
        return self.layers

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def buffers(self):
        out = {}
        for layer in self.layers:
            out.update(layer.buffers())
        return out

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout
