"""Numpy layers with explicit forward/backward passes.

Each layer caches what its backward pass needs during ``forward`` and fills
``grads`` (same keys as ``params``) in ``backward``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ArchitectureError


class Layer:
    kind = "layer"

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, training: bool, mask=None):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def config(self) -> dict:
        return {"kind": self.kind, "name": self.name}

    def astype(self, dtype) -> None:
        for d in (self.params, self.buffers):
            for k in d:
                d[k] = d[k].astype(dtype)


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int, gain: float = np.sqrt(2.0)):
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Layer):
    kind = "linear"

    def __init__(self, name, n_in, n_out, rng=None, zero_init=False, gain=np.sqrt(2.0)):
        super().__init__(name)
        self.n_in, self.n_out = n_in, n_out
        if zero_init or rng is None:
            w = np.zeros((n_in, n_out))
        else:
            w = fan_in_uniform(rng, (n_in, n_out), n_in, gain)
        self.params = {"W": w, "b": np.zeros(n_out)}

    def forward(self, x, training, mask=None):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ArchitectureError(f"{self.name}: expected (N, {self.n_in}) input, got {x.shape}")
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy):
        self.grads = {"W": self._x.T @ dy, "b": dy.sum(axis=0)}
        return dy @ self.params["W"].T

    def config(self):
        return {**super().config(), "n_in": self.n_in, "n_out": self.n_out}


class Conv2d(Layer):
    """Stride-1 square convolution with zero padding (NCHW)."""

    kind = "conv2d"

    def __init__(self, name, c_in, c_out, k=3, pad=1, rng=None):
        super().__init__(name)
        self.c_in, self.c_out, self.k, self.pad = c_in, c_out, k, pad
        fan_in = c_in * k * k
        w = np.zeros((c_out, c_in, k, k)) if rng is None else fan_in_uniform(rng, (c_out, c_in, k, k), fan_in)
        self.params = {"W": w, "b": np.zeros(c_out)}

    def forward(self, x, training, mask=None):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ArchitectureError(f"{self.name}: expected (N, {self.c_in}, H, W) input, got {x.shape}")
        n, _, h, w = x.shape
        p, k = self.pad, self.k
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (k, k), axis=(2, 3))  # N, C, Ho, Wo, k, k
        ho, wo = win.shape[2], win.shape[3]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, self.c_in * k * k)
        out = cols @ self.params["W"].reshape(self.c_out, -1).T + self.params["b"]
        self._cache = (x.shape, cols, ho, wo)
        return out.reshape(n, ho, wo, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, dy):
        shape, cols, ho, wo = self._cache
        n, c, h, w = shape
        k, p = self.k, self.pad
        dy2 = dy.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        self.grads = {
            "W": (dy2.T @ cols).reshape(self.params["W"].shape),
            "b": dy2.sum(axis=0),
        }
        dcols = (dy2 @ self.params["W"].reshape(self.c_out, -1)).reshape(n, ho, wo, c, k, k)
        dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + ho, j:j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, p:p + h, p:p + w]

    def config(self):
        return {**super().config(), "c_in": self.c_in, "c_out": self.c_out, "k": self.k, "pad": self.pad}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training, mask=None):
        self._pos = x > 0
        return np.where(self._pos, x, 0.0)

    def backward(self, dy):
        return np.where(self._pos, dy, 0.0)


class MaxPool2(Layer):
    kind = "maxpool2"

    def forward(self, x, training, mask=None):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ArchitectureError(f"{self.name}: spatial size {h}x{w} is not even")
        blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        arg = blocks.argmax(axis=-1)
        self._cache = (x.shape, arg)
        return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        (n, c, h, w), arg = self._cache
        blocks = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
        np.put_along_axis(blocks, arg[..., None], dy[..., None], axis=-1)
        return blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


class GlobalAvgPool(Layer):
    kind = "gap"

    def forward(self, x, training, mask=None):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        n, c, h, w = self._shape
        return np.broadcast_to(dy[:, :, None, None] / (h * w), self._shape).copy()


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, name, shape):
        super().__init__(name)
        self.shape = tuple(shape)

    def forward(self, x, training, mask=None):
        self._in = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dy):
        return dy.reshape(self._in)

    def config(self):
        return {**super().config(), "shape": list(self.shape)}


def _group_stats(x):
    mu = x.mean(axis=0)
    var = ((x - mu) ** 2).mean(axis=0)
    return mu, var


class DARBatchNorm(Layer):
    """Batch normalization with distribution-aware routing.

    In training mode natural rows (mask False) and Universum rows (mask True)
    are normalized with their own batch statistics and share gamma/beta; only
    natural statistics feed the running averages. A side with a single row
    borrows the other side's statistics. With an all-False mask this is plain
    batch normalization. Works on (N, F) and per-channel on (N, C, H, W).
    """

    kind = "darbn"

    def __init__(self, name, num_features, momentum=0.9, eps=1e-5):
        super().__init__(name)
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.params = {"gamma": np.ones(num_features), "beta": np.zeros(num_features)}
        self.buffers = {"running_mean": np.zeros(num_features), "running_var": np.ones(num_features)}

    def config(self):
        return {**super().config(), "num_features": self.num_features, "momentum": self.momentum, "eps": self.eps}

    def _to_rows(self, x, mask):
        if x.ndim == 4:
            n, c, h, w = x.shape
            rows = x.transpose(0, 2, 3, 1).reshape(-1, c)
            return rows, np.repeat(mask, h * w), h * w
        return x, mask, 1

    def _from_rows(self, rows, shape):
        if len(shape) == 4:
            n, c, h, w = shape
            return rows.reshape(n, h, w, c).transpose(0, 3, 1, 2)
        return rows

    def forward(self, x, training, mask=None):
        if x.shape[1] != self.num_features:
            raise ArchitectureError(f"{self.name}: expected {self.num_features} features, got {x.shape}")
        n = x.shape[0]
        mask = np.zeros(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if mask.shape[0] != n:
            raise ArchitectureError(f"{self.name}: mask length {mask.shape[0]} != batch {n}")
        rows, rmask, per = self._to_rows(x, mask)
        gamma, beta = self.params["gamma"], self.params["beta"]
        self._shape = x.shape
        if not training:
            s = np.sqrt(self.buffers["running_var"] + self.eps)
            xhat = (rows - self.buffers["running_mean"]) / s
            self._cache = ("eval", xhat, s)
            return self._from_rows(gamma * xhat + beta, x.shape)

        n_uni = int(mask.sum())
        n_nat = n - n_uni
        groups = []  # (row selector, selector of the rows providing statistics)
        nat, uni = ~rmask, rmask
        if n_uni == 0 or n_nat == 0:
            groups.append((slice(None), slice(None)))
        else:
            nat_src = nat if n_nat >= 2 else uni
            uni_src = uni if n_uni >= 2 else nat
            if n_nat < 2 and n_uni < 2:
                nat_src = uni_src = slice(None)
            groups.append((nat, nat_src))
            groups.append((uni, uni_src))

        out = np.empty_like(rows)
        xhat = np.empty_like(rows)
        cache = []
        for sel, src in groups:
            mu, var = _group_stats(rows[src])
            s = np.sqrt(var + self.eps)
            xhat[sel] = (rows[sel] - mu) / s
            out[sel] = gamma * xhat[sel] + beta
            cache.append((sel, src, mu, s))
        self._cache = (rows, xhat, cache)

        if n_nat >= 2:
            nat_rows = rows[nat] if n_uni else rows
            mu, var = _group_stats(nat_rows)
            m = nat_rows.shape[0]
            unbiased = var * m / (m - 1)
            mom = self.momentum
            self.buffers["running_mean"] = mom * self.buffers["running_mean"] + (1 - mom) * mu
            self.buffers["running_var"] = mom * self.buffers["running_var"] + (1 - mom) * unbiased
        return self._from_rows(out, x.shape)

    def backward(self, dy):
        rows, xhat, cache = self._cache
        drows, _, _ = self._to_rows(dy, np.zeros(dy.shape[0], dtype=bool))
        gamma = self.params["gamma"]
        self.grads = {"gamma": (drows * xhat).sum(axis=0), "beta": drows.sum(axis=0)}
        if isinstance(rows, str):
            # evaluation mode: a fixed affine map
            return self._from_rows(drows * gamma / cache, self._shape)
        dx = np.zeros_like(rows)
        for sel, src, mu, s in cache:
            g = drows[sel] * gamma
            xs = rows[src]
            m = xs.shape[0]
            dvar = -0.5 * (g * (rows[sel] - mu)).sum(axis=0) / s**3
            dmu = -g.sum(axis=0) / s
            dx[sel] += g / s
            dx[src] += dmu / m + dvar * 2.0 * (xs - mu) / m
        return self._from_rows(dx, self._shape)
