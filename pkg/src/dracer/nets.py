"""Neural networks from scratch: dense and convolutional layers with exact
hand-derived backward passes.

Two architectures are built here. The image network stacks three strided
convolutions (8@5x5/2, 16@3x3/2, 16@3x3/2, each with a rectifier) and two
fully connected layers. The feature network is two hidden layers of 64 units.
Policy and value networks are fully separate instances.

Production arithmetic is float32; float64 mode exists for finite-difference
gradient verification. Dropout uses inverted scaling and applies only in
train mode, only after fully connected hidden layers.

The convolution forward/backward are the hot kernels in image mode: a direct
scalar-loop build (numba-compiled when enabled) and an im2col numpy build are
selected in _accel.
"""

from __future__ import annotations

import numpy as np

from dracer._accel import USE_NUMBA, njit
from dracer.errors import CheckpointError

__all__ = [
    "Param",
    "Dense",
    "Conv2d",
    "ReLU",
    "Flatten",
    "Dropout",
    "Sequential",
    "PolicyValueNets",
    "softmax",
]


class Param:
    """A named parameter array with its gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)


# ---------------------------------------------------------------------------
# Convolution kernels
# ---------------------------------------------------------------------------


def _conv2d_fwd_loop(x, w, b, stride):
    n_im, c_in, h, wd = x.shape
    f_out, _, kh, kw = w.shape
    oh = (h - kh) // stride + 1
    ow = (wd - kw) // stride + 1
    out = np.empty((n_im, f_out, oh, ow), dtype=x.dtype)
    for n in range(n_im):
        for f in range(f_out):
            for p in range(oh):
                for q in range(ow):
                    acc = b[f]
                    for c in range(c_in):
                        for i in range(kh):
                            for j in range(kw):
                                acc += x[n, c, p * stride + i, q * stride + j] * w[f, c, i, j]
                    out[n, f, p, q] = acc
    return out


def _conv2d_bwd_loop(x, w, dout, stride):
    n_im, c_in, h, wd = x.shape
    f_out, _, kh, kw = w.shape
    oh, ow = dout.shape[2], dout.shape[3]
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    db = np.zeros(f_out, dtype=x.dtype)
    for n in range(n_im):
        for f in range(f_out):
            for p in range(oh):
                for q in range(ow):
                    g = dout[n, f, p, q]
                    db[f] += g
                    for c in range(c_in):
                        for i in range(kh):
                            for j in range(kw):
                                dw[f, c, i, j] += g * x[n, c, p * stride + i, q * stride + j]
                                dx[n, c, p * stride + i, q * stride + j] += g * w[f, c, i, j]
    return dx, dw, db


def _im2col(x, kh, kw, stride):
    n, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(n, c * kh * kw, oh * ow), oh, ow


def _conv2d_fwd_numpy(x, w, b, stride):
    f_out, c, kh, kw = w.shape
    cols, oh, ow = _im2col(x, kh, kw, stride)
    wmat = w.reshape(f_out, c * kh * kw)
    out = np.einsum("fk,nkp->nfp", wmat, cols) + b[None, :, None]
    return out.reshape(x.shape[0], f_out, oh, ow)


def _conv2d_bwd_numpy(x, w, dout, stride):
    n, c, h, wd = x.shape
    f_out, _, kh, kw = w.shape
    oh, ow = dout.shape[2], dout.shape[3]
    cols, _, _ = _im2col(x, kh, kw, stride)
    dflat = dout.reshape(n, f_out, oh * ow)
    dw = np.einsum("nfp,nkp->fk", dflat, cols).reshape(w.shape)
    db = dflat.sum(axis=(0, 2))
    wmat = w.reshape(f_out, c * kh * kw)
    dcols = np.einsum("fk,nfp->nkp", wmat, dflat).reshape(n, c, kh, kw, oh, ow)
    dx = np.zeros_like(x)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dcols[:, :, i, j]
    return dx, dw, db.astype(x.dtype)


if USE_NUMBA:
    _conv2d_fwd = njit(_conv2d_fwd_loop)
    _conv2d_bwd = njit(_conv2d_bwd_loop)
else:
    _conv2d_fwd = _conv2d_fwd_numpy
    _conv2d_bwd = _conv2d_bwd_numpy


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class Dense:
    def __init__(self, in_dim: int, out_dim: int, rng, dtype=np.float32, gain: float = 1.0,
                 name: str = "dense"):
        scale = gain * np.sqrt(2.0 / in_dim)
        w = (rng.standard_normal((in_dim, out_dim)) * scale).astype(dtype)
        self.w = Param(f"{name}/W", w)
        self.b = Param(f"{name}/b", np.zeros(out_dim, dtype=dtype))
        self._x = None

    def forward(self, x, train=False, rng=None):
        self._x = x
        return x @ self.w.value + self.b.value

    def backward(self, dout):
        self.w.grad += self._x.T @ dout
        self.b.grad += dout.sum(axis=0)
        return dout @ self.w.value.T

    def params(self):
        return [self.w, self.b]


class Conv2d:
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int, rng,
                 dtype=np.float32, name: str = "conv"):
        fan_in = in_ch * kernel * kernel
        w = (rng.standard_normal((out_ch, in_ch, kernel, kernel)) * np.sqrt(2.0 / fan_in)).astype(dtype)
        self.w = Param(f"{name}/W", w)
        self.b = Param(f"{name}/b", np.zeros(out_ch, dtype=dtype))
        self.stride = stride
        self._x = None

    def forward(self, x, train=False, rng=None):
        self._x = x
        return _conv2d_fwd(x, self.w.value, self.b.value, self.stride)

    def backward(self, dout):
        dx, dw, db = _conv2d_bwd(self._x, self.w.value, dout, self.stride)
        self.w.grad += dw
        self.b.grad += db
        return dx

    def params(self):
        return [self.w, self.b]


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x, train=False, rng=None):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask

    def params(self):
        return []


class Flatten:
    def __init__(self):
        self._shape = None

    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)

    def params(self):
        return []


class Dropout:
    """Inverted dropout: active only in train mode, identity otherwise."""

    def __init__(self, p: float):
        self.p = p
        self._mask = None

    def forward(self, x, train=False, rng=None):
        if not train or self.p == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("train-mode dropout requires a random generator")
        keep = 1.0 - self.p
        self._mask = ((rng.random(x.shape) < keep) / keep).astype(x.dtype)
        return x * self._mask

    def backward(self, dout):
        if self._mask is None:
            return dout
        return dout * self._mask

    def params(self):
        return []


class Sequential:
    def __init__(self, layers: list):
        self.layers = layers

    def forward(self, x, train=False, rng=None):
        for layer in self.layers:
            x = layer.forward(x, train=train, rng=rng)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def params(self) -> list:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def zero_grads(self):
        for p in self.params():
            p.grad[...] = 0.0


# ---------------------------------------------------------------------------
# Network factories
# ---------------------------------------------------------------------------


def _feature_stack(in_dim, out_dim, hidden, dropout_p, rng, dtype, head_gain, prefix):
    return Sequential([
        Dense(in_dim, hidden, rng, dtype, name=f"{prefix}/fc0"),
        ReLU(),
        Dropout(dropout_p),
        Dense(hidden, hidden, rng, dtype, name=f"{prefix}/fc1"),
        ReLU(),
        Dropout(dropout_p),
        Dense(hidden, out_dim, rng, dtype, gain=head_gain, name=f"{prefix}/head"),
    ])


def _image_stack(image_hw, out_dim, hidden, dropout_p, rng, dtype, head_gain, prefix):
    h, w = image_hw
    layers = [
        Conv2d(1, 8, 5, 2, rng, dtype, name=f"{prefix}/conv0"),
        ReLU(),
        Conv2d(8, 16, 3, 2, rng, dtype, name=f"{prefix}/conv1"),
        ReLU(),
        Conv2d(16, 16, 3, 2, rng, dtype, name=f"{prefix}/conv2"),
        ReLU(),
        Flatten(),
    ]
    for kernel, stride in ((5, 2), (3, 2), (3, 2)):
        h = (h - kernel) // stride + 1
        w = (w - kernel) // stride + 1
    if h < 1 or w < 1:
        raise ValueError(f"image {image_hw} too small for the convolution stack")
    flat = 16 * h * w
    layers += [
        Dense(flat, hidden, rng, dtype, name=f"{prefix}/fc0"),
        ReLU(),
        Dropout(dropout_p),
        Dense(hidden, out_dim, rng, dtype, gain=head_gain, name=f"{prefix}/head"),
    ]
    return Sequential(layers)


class PolicyValueNets:
    """Separate policy and value networks over one observation format.

    ``spec`` captures everything needed to rebuild the same architecture when
    loading a checkpoint: mode, input size, action count, hidden width,
    dropout rate, and dtype.
    """

    POLICY_HEAD_GAIN = 0.01  # near-uniform initial policy, near-zero initial value

    def __init__(self, policy: Sequential, value: Sequential, spec: dict):
        self.policy = policy
        self.value = value
        self.spec = dict(spec)

    @staticmethod
    def create(obs_mode: str, action_count: int, seed: int, *, feature_dim: int = 8,
               image_hw: tuple = (120, 160), hidden: int = 64, dropout_p: float = 0.0,
               dtype=np.float32) -> "PolicyValueNets":
        rng = np.random.default_rng(seed)
        gain = PolicyValueNets.POLICY_HEAD_GAIN
        if obs_mode == "features":
            policy = _feature_stack(feature_dim, action_count, hidden, dropout_p, rng, dtype, gain, "policy")
            value = _feature_stack(feature_dim, 1, hidden, dropout_p, rng, dtype, gain, "value")
        elif obs_mode == "image":
            policy = _image_stack(image_hw, action_count, hidden, dropout_p, rng, dtype, gain, "policy")
            value = _image_stack(image_hw, 1, hidden, dropout_p, rng, dtype, gain, "value")
        else:
            raise ValueError(f"unknown observation mode {obs_mode!r}")
        spec = {
            "obs_mode": obs_mode,
            "action_count": action_count,
            "feature_dim": feature_dim,
            "image_hw": list(image_hw),
            "hidden": hidden,
            "dropout_p": dropout_p,
            "dtype": np.dtype(dtype).name,
        }
        return PolicyValueNets(policy, value, spec)

    def params(self) -> list:
        return self.policy.params() + self.value.params()

    def zero_grads(self):
        self.policy.zero_grads()
        self.value.zero_grads()

    def state_dict(self) -> dict:
        return {p.name: p.value for p in self.params()}

    def load_state_dict(self, state: dict):
        own = {p.name: p for p in self.params()}
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise CheckpointError(f"parameter set mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, param in own.items():
            arr = np.asarray(state[name], dtype=param.value.dtype)
            if arr.shape != param.value.shape:
                raise CheckpointError(
                    f"shape mismatch for {name}: checkpoint {arr.shape} vs net {param.value.shape}"
                )
            param.value[...] = arr

    @staticmethod
    def from_spec(spec: dict) -> "PolicyValueNets":
        return PolicyValueNets.create(
            spec["obs_mode"],
            int(spec["action_count"]),
            seed=0,  # weights are overwritten by the caller right after
            feature_dim=int(spec.get("feature_dim", 8)),
            image_hw=tuple(spec.get("image_hw", (120, 160))),
            hidden=int(spec.get("hidden", 64)),
            dropout_p=float(spec.get("dropout_p", 0.0)),
            dtype=np.dtype(spec.get("dtype", "float32")),
        )


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
