"""Differentiable layers with explicit forward/backward passes.

Layers are stateless descriptors; activations needed by the backward pass
travel in per-call cache objects, so inference on a fixed parameter set is
safe across threads. Batch-statistics layers are the one exception: their
running statistics live in the model's ``state`` dict and are updated in
place during training-mode forwards (single writer by contract).
"""

import numpy as np


def _he_std(fan_in):
    return np.sqrt(2.0 / fan_in)


def _glorot_std(fan_in, fan_out):
    return np.sqrt(2.0 / (fan_in + fan_out))


class Layer:
    """Base layer; subclasses override the four hooks below."""

    def __init__(self, name):
        self.name = name

    def param_specs(self, in_shape):
        """Return (out_shape, [(param_name, shape, init_kind)])."""
        return in_shape, []

    def state_specs(self, in_shape):
        return []

    def forward(self, x, params, state, mode):
        raise NotImplementedError

    def backward(self, dy, cache, params):
        raise NotImplementedError

    def config(self):
        return {"kind": type(self).__name__, "name": self.name}


def _im2col(xp, k, H, W):
    """View of all k*k patches of a padded batch: (N, C, k, k, H, W)."""
    N, C = xp.shape[:2]
    s = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (N, C, k, k, H, W), (s[0], s[1], s[2], s[3], s[2], s[3]))


class Conv2d(Layer):
    """3x3/5x5 'same' convolution, stride 1."""

    def __init__(self, name, out_channels, kernel=3):
        super().__init__(name)
        self.out_channels = out_channels
        self.kernel = kernel
        self.pad = kernel // 2

    def param_specs(self, in_shape):
        c, h, w = in_shape
        k = self.kernel
        out_shape = (self.out_channels, h, w)
        return out_shape, [
            ("w", (self.out_channels, c, k, k), ("he", c * k * k)),
            ("b", (self.out_channels,), ("zeros", None)),
        ]

    def forward(self, x, params, state, mode):
        N, C, H, W = x.shape
        k, p = self.kernel, self.pad
        w = params[f"{self.name}.w"].reshape(self.out_channels, -1)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        cols = _im2col(xp, k, H, W).reshape(N, C * k * k, H * W)
        out = np.matmul(w, cols).reshape(N, self.out_channels, H, W)
        out += params[f"{self.name}.b"][None, :, None, None]
        return out, (xp, x.shape)

    def backward(self, dy, cache, params):
        xp, x_shape = cache
        N, C, H, W = x_shape
        k, p = self.kernel, self.pad
        w = params[f"{self.name}.w"].reshape(self.out_channels, -1)
        dout = dy.reshape(N, self.out_channels, H * W)
        cols = _im2col(xp, k, H, W).reshape(N, C * k * k, H * W)

        dw = np.matmul(dout, cols.transpose(0, 2, 1)).sum(axis=0)
        db = dout.sum(axis=(0, 2))
        dcols = np.matmul(w.T, dout).reshape(N, C, k, k, H, W)
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + H, j:j + W] += dcols[:, :, i, j]
        dx = dxp[:, :, p:p + H, p:p + W] if p else dxp
        return dx, {f"{self.name}.w": dw.reshape(params[f"{self.name}.w"].shape),
                    f"{self.name}.b": db}

    def config(self):
        return {**super().config(), "out_channels": self.out_channels, "kernel": self.kernel}


class Dense(Layer):
    def __init__(self, name, out_features, final=False):
        super().__init__(name)
        self.out_features = out_features
        self.final = final

    def param_specs(self, in_shape):
        (d,) = in_shape
        init = ("head", (d, self.out_features)) if self.final else ("he", d)
        return (self.out_features,), [
            ("w", (d, self.out_features), init),
            ("b", (self.out_features,), ("zeros", None)),
        ]

    def forward(self, x, params, state, mode):
        y = x @ params[f"{self.name}.w"] + params[f"{self.name}.b"]
        return y, x

    def backward(self, dy, cache, params):
        x = cache
        dw = x.T @ dy
        db = dy.sum(axis=0)
        dx = dy @ params[f"{self.name}.w"].T
        return dx, {f"{self.name}.w": dw, f"{self.name}.b": db}

    def config(self):
        return {**super().config(), "out_features": self.out_features, "final": self.final}


class Relu(Layer):
    def forward(self, x, params, state, mode):
        mask = x > 0
        return np.where(mask, x, 0), mask

    def backward(self, dy, cache, params):
        return np.where(cache, dy, 0), {}


class Tanh(Layer):
    def forward(self, x, params, state, mode):
        y = np.tanh(x)
        return y, y

    def backward(self, dy, cache, params):
        return dy * (1.0 - cache * cache), {}


class Softplus(Layer):
    def forward(self, x, params, state, mode):
        y = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
        sig = 1.0 / (1.0 + np.exp(-x))
        return y, sig

    def backward(self, dy, cache, params):
        return dy * cache, {}


class Pool2x2(Layer):
    """2x2 stride-2 pooling; kind 'max' routes to the first maximum, 'avg' is smooth."""

    def __init__(self, name, kind="max"):
        super().__init__(name)
        self.kind = kind

    def param_specs(self, in_shape):
        c, h, w = in_shape
        if h % 2 or w % 2:
            raise ValueError(f"Pool2x2 requires even spatial dims, got {in_shape}")
        return (c, h // 2, w // 2), []

    def _windows(self, x):
        N, C, H, W = x.shape
        return (x.reshape(N, C, H // 2, 2, W // 2, 2)
                 .transpose(0, 1, 2, 4, 3, 5)
                 .reshape(N, C, H // 2, W // 2, 4))

    def forward(self, x, params, state, mode):
        win = self._windows(x)
        if self.kind == "avg":
            return win.mean(axis=-1), x.shape
        idx = win.argmax(axis=-1)
        y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        return y, (x.shape, idx)

    def backward(self, dy, cache, params):
        if self.kind == "avg":
            x_shape = cache
            dwin = np.broadcast_to(dy[..., None] * 0.25, dy.shape + (4,))
        else:
            x_shape, idx = cache
            dwin = np.zeros(dy.shape + (4,), dtype=dy.dtype)
            np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
        N, C, H, W = x_shape
        dx = (dwin.reshape(N, C, H // 2, W // 2, 2, 2)
                  .transpose(0, 1, 2, 4, 3, 5)
                  .reshape(N, C, H, W))
        return np.ascontiguousarray(dx), {}

    def config(self):
        return {**super().config(), "kind": self.kind}


class BatchNorm2d(Layer):
    """Per-channel normalization; batch statistics in training mode, running
    statistics at inference."""

    eps = 1e-5
    momentum = 0.1

    def state_specs(self, in_shape):
        c = in_shape[0]
        return [("running_mean", (c,), 0.0), ("running_var", (c,), 1.0)]

    def param_specs(self, in_shape):
        c = in_shape[0]
        return in_shape, [
            ("gamma", (c,), ("ones", None)),
            ("beta", (c,), ("zeros", None)),
        ]

    def forward(self, x, params, state, mode):
        gamma = params[f"{self.name}.gamma"][None, :, None, None]
        beta = params[f"{self.name}.beta"][None, :, None, None]
        if mode == "train":
            mu = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            rm = state[f"{self.name}.running_mean"]
            rv = state[f"{self.name}.running_var"]
            rm *= 1.0 - self.momentum
            rm += self.momentum * mu
            rv *= 1.0 - self.momentum
            rv += self.momentum * var
        else:
            mu = state[f"{self.name}.running_mean"]
            var = state[f"{self.name}.running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu[None, :, None, None]) * inv_std[None, :, None, None]
        y = gamma * xhat + beta
        return y, (xhat, inv_std, mode)

    def backward(self, dy, cache, params):
        xhat, inv_std, mode = cache
        gamma = params[f"{self.name}.gamma"]
        dgamma = (dy * xhat).sum(axis=(0, 2, 3))
        dbeta = dy.sum(axis=(0, 2, 3))
        dxhat = dy * gamma[None, :, None, None]
        if mode == "train":
            m = dy.shape[0] * dy.shape[2] * dy.shape[3]
            # standard batch-coupled gradient
            dx = (inv_std[None, :, None, None] / m) * (
                m * dxhat
                - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
        else:
            dx = dxhat * inv_std[None, :, None, None]
        return dx, {f"{self.name}.gamma": dgamma, f"{self.name}.beta": dbeta}


class BatchNorm1d(Layer):
    """Per-feature normalization for dense stacks; same statistics contract
    as the 2-D variant."""

    eps = 1e-5
    momentum = 0.1

    def state_specs(self, in_shape):
        (f,) = in_shape
        return [("running_mean", (f,), 0.0), ("running_var", (f,), 1.0)]

    def param_specs(self, in_shape):
        (f,) = in_shape
        return in_shape, [
            ("gamma", (f,), ("ones", None)),
            ("beta", (f,), ("zeros", None)),
        ]

    def forward(self, x, params, state, mode):
        gamma = params[f"{self.name}.gamma"]
        beta = params[f"{self.name}.beta"]
        if mode == "train":
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            rm = state[f"{self.name}.running_mean"]
            rv = state[f"{self.name}.running_var"]
            rm *= 1.0 - self.momentum
            rm += self.momentum * mu
            rv *= 1.0 - self.momentum
            rv += self.momentum * var
        else:
            mu = state[f"{self.name}.running_mean"]
            var = state[f"{self.name}.running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv_std
        return gamma * xhat + beta, (xhat, inv_std, mode)

    def backward(self, dy, cache, params):
        xhat, inv_std, mode = cache
        gamma = params[f"{self.name}.gamma"]
        dgamma = (dy * xhat).sum(axis=0)
        dbeta = dy.sum(axis=0)
        dxhat = dy * gamma
        if mode == "train":
            m = dy.shape[0]
            dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=0)
                                  - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv_std
        return dx, {f"{self.name}.gamma": dgamma, f"{self.name}.beta": dbeta}


class GlobalAvgPool(Layer):
    def param_specs(self, in_shape):
        return (in_shape[0],), []

    def forward(self, x, params, state, mode):
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, dy, cache, params):
        N, C, H, W = cache
        dx = np.broadcast_to(dy[:, :, None, None] / (H * W), cache)
        return np.ascontiguousarray(dx), {}


class Flatten(Layer):
    def param_specs(self, in_shape):
        return (int(np.prod(in_shape)),), []

    def forward(self, x, params, state, mode):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache, params):
        return dy.reshape(cache), {}


def init_params(layers, input_shape, seed, dtype):
    """Allocate parameters and state for a layer stack, deterministically."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params, state = {}, {}
    shape = tuple(input_shape)
    for layer in layers:
        shape, specs = layer.param_specs(shape)
        for pname, pshape, (kind, arg) in specs:
            full = f"{layer.name}.{pname}"
            if kind == "zeros":
                params[full] = np.zeros(pshape, dtype=dtype)
            elif kind == "ones":
                params[full] = np.ones(pshape, dtype=dtype)
            elif kind == "he":
                params[full] = rng.normal(0.0, _he_std(arg), pshape).astype(dtype)
            elif kind == "glorot":
                params[full] = rng.normal(0.0, _glorot_std(*arg), pshape).astype(dtype)
            elif kind == "head":
                # small head keeps the initial predictive distribution near uniform
                params[full] = rng.normal(0.0, 0.1 * _glorot_std(*arg), pshape).astype(dtype)
            else:
                raise ValueError(f"unknown init kind {kind}")
        for sname, sshape, fill in layer.state_specs(shape):
            state[f"{layer.name}.{sname}"] = np.full(sshape, fill, dtype=dtype)
    return params, state, shape
