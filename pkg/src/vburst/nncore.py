"""Neural-network primitives on plain numpy arrays.

Layout is channels-last throughout: feature maps are (N, H, W, C),
vector batches are (N, F).  Every forward pass runs in the dtype of
its parameters, so a model built in float64 computes in float64; the
finite-difference gradient checks rely on that.

Convolutions lower to matrix multiplication over im2col patch
matrices.  A full batch's patch matrix can dwarf the activations
(hundreds of samples times kh*kw*C columns), so it is materialized in
bounded sample chunks; _COL_BUDGET_BYTES caps each chunk.

Each layer caches exactly what its backward pass needs and releases
the cache once used, keeping peak memory near the live activations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vburst.errors import DataError

_COL_BUDGET_BYTES = 128 * 2**20

LAYER_KINDS = (
    "conv2d",
    "batchnorm",
    "relu",
    "spatial_dropout",
    "dropout",
    "maxpool2d",
    "global_maxpool",
    "dense",
    "softmax",
    "concat",
)

_finite_checks = False


def set_finite_checks(enabled: bool) -> None:
    """Toggle per-node non-finite detection in graph execution (debug aid)."""
    global _finite_checks
    _finite_checks = bool(enabled)


def finite_checks_enabled() -> bool:
    return _finite_checks


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int = 0
    kernel: tuple = ()
    pool: tuple = ()
    units: int = 0
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if not (0.0 <= self.rate < 1.0):
            raise ValueError("drop rate must be in [0, 1)")
        if self.kind == "conv2d" and (self.filters <= 0 or len(self.kernel) != 2):
            raise ValueError("conv2d needs filters > 0 and a 2-D kernel")
        if self.kind == "maxpool2d" and len(self.pool) != 2:
            raise ValueError("maxpool2d needs a 2-D pool size")
        if self.kind == "dense" and self.units <= 0:
            raise ValueError("dense needs units > 0")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "conv2d":
            d["filters"] = self.filters
            d["kernel"] = list(self.kernel)
        elif self.kind == "maxpool2d":
            d["pool"] = list(self.pool)
        elif self.kind == "dense":
            d["units"] = self.units
        elif self.kind in ("spatial_dropout", "dropout"):
            d["rate"] = self.rate
        return d

    @staticmethod
    def from_dict(d: dict) -> "LayerSpec":
        return LayerSpec(
            kind=d["kind"],
            filters=int(d.get("filters", 0)),
            kernel=tuple(d.get("kernel", ())),
            pool=tuple(d.get("pool", ())),
            units=int(d.get("units", 0)),
            rate=float(d.get("rate", 0.0)),
        )


def glorot_uniform(shape, fan_in: int, fan_out: int, rng, dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Base layer: params/grads are dicts keyed by param_names order."""

    param_names: tuple = ()
    state_names: tuple = ()  # non-trainable persistent arrays (BN running stats)

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x, mode="infer", rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(n, Hp, Wp, C) -> (n*oh*ow, kh*kw*C) patch rows, (kh, kw, C) order."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    n, oh, ow, c = win.shape[:4]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * oh * ow, kh * kw * c)


class Conv2D(Layer):
    """Stride-1 cross-correlation with "same" zero padding."""

    param_names = ("w", "b")

    def __init__(self, kernel, c_in, c_out, rng, dtype=np.float32):
        super().__init__()
        kh, kw = kernel
        self.kernel = (kh, kw)
        self.c_in = c_in
        self.c_out = c_out
        # total padding kh-1, smaller half first (stride-1 "same")
        self.pad_h = ((kh - 1) // 2, kh - 1 - (kh - 1) // 2)
        self.pad_w = ((kw - 1) // 2, kw - 1 - (kw - 1) // 2)
        self.params["w"] = glorot_uniform(
            (kh, kw, c_in, c_out), kh * kw * c_in, kh * kw * c_out, rng, dtype
        )
        self.params["b"] = np.zeros(c_out, dtype=dtype)
        self.need_input_grad = True
        self._x = None

    def _chunk(self, h, w, k_area, c, itemsize):
        per_sample = h * w * k_area * c * itemsize
        return max(1, _COL_BUDGET_BYTES // max(1, per_sample))

    def forward(self, x, mode="infer", rng=None):
        if x.ndim != 4 or x.shape[3] != self.c_in:
            raise ValueError(f"conv2d expected (N,H,W,{self.c_in}), got {x.shape}")
        if mode == "train":
            self._x = x
        n, h, w, _ = x.shape
        kh, kw = self.kernel
        xp = np.pad(x, ((0, 0), self.pad_h, self.pad_w, (0, 0)))
        w2 = self.params["w"].reshape(kh * kw * self.c_in, self.c_out)
        out = np.empty((n, h, w, self.c_out), dtype=x.dtype)
        step = self._chunk(h, w, kh * kw, self.c_in, x.itemsize)
        for i in range(0, n, step):
            cols = _im2col(xp[i : i + step], kh, kw)
            out[i : i + step] = (cols @ w2 + self.params["b"]).reshape(-1, h, w, self.c_out)
        return out

    def backward(self, dout):
        x, self._x = self._x, None
        n, h, w, _ = x.shape
        kh, kw = self.kernel
        xp = np.pad(x, ((0, 0), self.pad_h, self.pad_w, (0, 0)))
        dw2 = np.zeros((kh * kw * self.c_in, self.c_out), dtype=x.dtype)
        step = self._chunk(h, w, kh * kw, self.c_in, x.itemsize)
        for i in range(0, n, step):
            cols = _im2col(xp[i : i + step], kh, kw)
            dw2 += cols.T @ dout[i : i + step].reshape(-1, self.c_out)
        self.grads["w"] = dw2.reshape(self.params["w"].shape)
        self.grads["b"] = dout.sum(axis=(0, 1, 2))
        if not self.need_input_grad:
            return None
        # full correlation with the flipped kernel, in/out channels swapped
        wf = self.params["w"][::-1, ::-1].transpose(0, 1, 3, 2)
        wf2 = wf.reshape(kh * kw * self.c_out, self.c_in)
        dp = np.pad(dout, ((0, 0), self.pad_h[::-1], self.pad_w[::-1], (0, 0)))
        dx = np.empty_like(x)
        step = self._chunk(h, w, kh * kw, self.c_out, x.itemsize)
        for i in range(0, n, step):
            cols = _im2col(dp[i : i + step], kh, kw)
            dx[i : i + step] = (cols @ wf2).reshape(-1, h, w, self.c_in)
        return dx


class BatchNorm(Layer):
    """Normalizes over all non-channel axes; channels are the last axis."""

    param_names = ("gamma", "beta")
    state_names = ("running_mean", "running_var")

    def __init__(self, channels, dtype=np.float32, momentum=0.99, eps=1e-3):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.params["running_mean"] = np.zeros(channels, dtype=dtype)
        self.params["running_var"] = np.ones(channels, dtype=dtype)
        self._cache = None

    def forward(self, x, mode="infer", rng=None):
        if x.shape[-1] != self.channels:
            raise ValueError(f"batchnorm expected {self.channels} channels, got {x.shape}")
        gamma, beta = self.params["gamma"], self.params["beta"]
        rm, rv = self.params["running_mean"], self.params["running_var"]
        if mode == "train":
            x2 = x.reshape(-1, self.channels)
            m = x2.shape[0]
            if m == 0:
                raise DataError("batchnorm: empty batch in train mode")
            mu = x2.mean(axis=0)
            xhat = x2 - mu
            var = np.einsum("ij,ij->j", xhat, xhat) / m  # biased, matching the running update
            istd = 1.0 / np.sqrt(var + self.eps)
            xhat *= istd
            rm *= self.momentum
            rm += (1.0 - self.momentum) * mu
            rv *= self.momentum
            rv += (1.0 - self.momentum) * var
            self._cache = (xhat, istd, m)
            out = xhat * gamma
            out += beta
            return out.reshape(x.shape)
        scale = gamma / np.sqrt(rv + self.eps)
        out = x * scale
        out += beta - rm * scale
        return out

    def backward(self, dout):
        xhat, istd, m = self._cache
        self._cache = None
        d2 = dout.reshape(-1, xhat.shape[1])
        dbeta = d2.sum(axis=0)
        dgamma = np.einsum("ij,ij->j", d2, xhat)
        self.grads["gamma"] = dgamma
        self.grads["beta"] = dbeta
        # dx = (gamma*istd/m) * (m*dout - dbeta - xhat*dgamma)
        gi = self.params["gamma"] * istd
        dx = d2 * gi
        dx += xhat * (-gi * dgamma / m)
        dx -= gi * dbeta / m
        return dx.reshape(dout.shape)


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x, mode="infer", rng=None):
        if mode == "train":
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dout):
        mask, self._mask = self._mask, None
        return dout * mask


class SpatialDropout(Layer):
    """Zeroes whole channels per sample; survivors scaled by 1/(1-rate)."""

    def __init__(self, rate):
        super().__init__()
        self.rate = rate
        self._mask = None

    def forward(self, x, mode="infer", rng=None):
        if mode != "train" or self.rate == 0.0:
            return x
        keep = rng.random((x.shape[0], 1, 1, x.shape[3])) >= self.rate
        self._mask = keep.astype(x.dtype) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, dout):
        if self._mask is None:
            return dout
        mask, self._mask = self._mask, None
        return dout * mask


class Dropout(Layer):
    """Element-wise dropout for vector batches."""

    def __init__(self, rate):
        super().__init__()
        self.rate = rate
        self._mask = None

    def forward(self, x, mode="infer", rng=None):
        if mode != "train" or self.rate == 0.0:
            return x
        keep = rng.random(x.shape) >= self.rate
        self._mask = keep.astype(x.dtype) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, dout):
        if self._mask is None:
            return dout
        mask, self._mask = self._mask, None
        return dout * mask


class MaxPool2D(Layer):
    """Stride = pool size, "same" semantics: edge windows may be partial."""

    def __init__(self, pool):
        super().__init__()
        self.pool = tuple(pool)
        self._cache = None

    def forward(self, x, mode="infer", rng=None):
        n, h, w, c = x.shape
        ph, pw = self.pool
        oh, ow = -(-h // ph), -(-w // pw)
        xp = x
        if oh * ph != h or ow * pw != w:
            xp = np.pad(
                x,
                ((0, 0), (0, oh * ph - h), (0, ow * pw - w), (0, 0)),
                constant_values=-np.inf,
            )
        # running max over the ph*pw strided window slices; strict > keeps the
        # first occurrence in row-major window order on ties
        out = xp[:, 0::ph, 0::pw, :].copy()
        if mode != "train":
            for i in range(ph):
                for j in range(pw):
                    if i or j:
                        np.maximum(out, xp[:, i::ph, j::pw, :], out=out)
            return out
        idx = np.zeros(out.shape, dtype=np.int16)
        for i in range(ph):
            for j in range(pw):
                if i or j:
                    s = xp[:, i::ph, j::pw, :]
                    better = s > out
                    np.copyto(out, s, where=better)
                    np.copyto(idx, np.int16(i * pw + j), where=better)
        self._cache = (idx, (h, w))
        return out

    def backward(self, dout):
        (idx, (h, w)), self._cache = self._cache, None
        n, oh, ow, c = dout.shape
        ph, pw = self.pool
        dxp = np.zeros((n, oh * ph, ow * pw, c), dtype=dout.dtype)
        for i in range(ph):
            for j in range(pw):
                np.copyto(dxp[:, i::ph, j::pw, :], dout, where=(idx == i * pw + j))
        return dxp[:, :h, :w, :]


class GlobalMaxPool(Layer):
    def __init__(self):
        super().__init__()
        self._cache = None

    def forward(self, x, mode="infer", rng=None):
        n, h, w, c = x.shape
        r = x.reshape(n, h * w, c)
        idx = r.argmax(axis=1)
        out = np.take_along_axis(r, idx[:, None, :], axis=1)[:, 0, :]
        if mode == "train":
            self._cache = (idx.astype(np.int32), (h, w))
        return out

    def backward(self, dout):
        (idx, (h, w)), self._cache = self._cache, None
        n, c = dout.shape
        dr = np.zeros((n, h * w, c), dtype=dout.dtype)
        np.put_along_axis(dr, idx.astype(np.intp)[:, None, :], dout[:, None, :], axis=1)
        return dr.reshape(n, h, w, c)


class Dense(Layer):
    param_names = ("w", "b")

    def __init__(self, n_in, units, rng, dtype=np.float32):
        super().__init__()
        self.n_in = n_in
        self.units = units
        self.params["w"] = glorot_uniform((n_in, units), n_in, units, rng, dtype)
        self.params["b"] = np.zeros(units, dtype=dtype)
        self._x = None

    def forward(self, x, mode="infer", rng=None):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"dense expected (N,{self.n_in}), got {x.shape}")
        if mode == "train":
            self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dout):
        x, self._x = self._x, None
        self.grads["w"] = x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["w"].T


class Softmax(Layer):
    def __init__(self):
        super().__init__()
        self._probs = None

    def forward(self, x, mode="infer", rng=None):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        self._probs = p
        return p

    def backward(self, dout):
        p, self._probs = self._probs, None
        return p * (dout - (dout * p).sum(axis=1, keepdims=True))


class Concat(Layer):
    """Concatenates along channels; the only multi-input layer."""

    def __init__(self):
        super().__init__()
        self._sizes = None

    def forward(self, xs, mode="infer", rng=None):
        self._sizes = [a.shape[-1] for a in xs]
        return np.concatenate(xs, axis=-1)

    def backward(self, dout):
        sizes, self._sizes = self._sizes, None
        return np.split(dout, np.cumsum(sizes)[:-1], axis=-1)


def infer_shape(spec: LayerSpec, in_shapes: list) -> tuple:
    """Per-sample output shape of one layer given its input shapes."""
    s = in_shapes[0]
    if spec.kind == "conv2d":
        return (s[0], s[1], spec.filters)
    if spec.kind == "maxpool2d":
        ph, pw = spec.pool
        return (-(-s[0] // ph), -(-s[1] // pw), s[2])
    if spec.kind == "global_maxpool":
        return (s[2],)
    if spec.kind == "dense":
        return (spec.units,)
    if spec.kind == "concat":
        leading = {tuple(sh[:-1]) for sh in in_shapes}
        if len(leading) != 1:
            raise ValueError(f"concat inputs disagree on spatial dims: {in_shapes}")
        return tuple(s[:-1]) + (sum(sh[-1] for sh in in_shapes),)
    return tuple(s)  # batchnorm, relu, dropouts, softmax preserve shape


def make_layer(spec: LayerSpec, in_shapes: list, rng, dtype=np.float32) -> Layer:
    s = in_shapes[0]
    if spec.kind == "conv2d":
        return Conv2D(spec.kernel, s[2], spec.filters, rng, dtype)
    if spec.kind == "batchnorm":
        return BatchNorm(s[-1], dtype)
    if spec.kind == "relu":
        return ReLU()
    if spec.kind == "spatial_dropout":
        return SpatialDropout(spec.rate)
    if spec.kind == "dropout":
        return Dropout(spec.rate)
    if spec.kind == "maxpool2d":
        return MaxPool2D(spec.pool)
    if spec.kind == "global_maxpool":
        return GlobalMaxPool()
    if spec.kind == "dense":
        return Dense(s[0], spec.units, rng, dtype)
    if spec.kind == "softmax":
        return Softmax()
    if spec.kind == "concat":
        return Concat()
    raise ValueError(f"unknown layer kind {spec.kind!r}")


def categorical_crossentropy(probs: np.ndarray, targets: np.ndarray) -> float:
    """Mean negative log-likelihood; probs clamped away from {0,1}."""
    p = np.clip(probs.astype(np.float64), 1e-7, 1.0 - 1e-7)
    return float(-np.sum(targets * np.log(p)) / probs.shape[0])


def softmax_ce_grad(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Gradient of the mean CE loss w.r.t. the softmax's input logits."""
    return (probs - targets) / probs.shape[0]


class Adam:
    """Adam with bias correction; updates parameters in place."""

    def __init__(self, params: list, lr: float, beta1=0.9, beta2=0.999, eps=1e-7):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads: list) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameter list")
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
