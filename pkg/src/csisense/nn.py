"""Sequential-topology neural net substrate: layers with analytic backprop,
Adam, finite-difference gradient verification, and a binary model container.

Parameters are float32; loss-style reductions accumulate in float64. For
gradient checking the whole network is cast to float64 first.
"""

import json

import numpy as np

from . import kernels
from .errors import DataFormatError, ShapeError, StateError, TruncatedFileError


def glorot_uniform(rng, shape, fan_in, fan_out, dtype=np.float32):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Forward caches whatever backward needs; backward returns the input
    gradient and fills the layer's parameter gradients."""

    def params(self):
        return []

    def grads(self):
        return []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def descriptor(self):
        raise NotImplementedError

    def astype(self, dtype):
        clone = _cast_layer_params(layer_from_descriptor(self.descriptor()), dtype)
        for dst, src in zip(clone.params(), self.params()):
            dst[...] = src
        return clone


def _cast_layer_params(layer, dtype):
    for name in ("w", "b"):
        if hasattr(layer, name):
            setattr(layer, name, getattr(layer, name).astype(dtype))
    if hasattr(layer, "layers"):
        layer.layers = [_cast_layer_params(l, dtype) for l in layer.layers]
    return layer


class Dense(Layer):
    def __init__(self, n_in, n_out, rng=None, dtype=np.float32):
        self.n_in = n_in
        self.n_out = n_out
        if rng is None:
            self.w = np.zeros((n_out, n_in), dtype=dtype)
        else:
            self.w = glorot_uniform(rng, (n_out, n_in), n_in, n_out, dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self.dw = None
        self.db = None
        self._x = None

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.dw, self.db]

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"dense({self.n_in}->{self.n_out}) got input {x.shape}")
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, dout):
        if self._x is None:
            raise StateError("dense backward before forward")
        self.dw = dout.T @ self._x
        self.db = dout.sum(axis=0, dtype=np.float64).astype(dout.dtype)
        return dout @ self.w

    def descriptor(self):
        return {"type": "dense", "n_in": self.n_in, "n_out": self.n_out}


class Conv2d(Layer):
    """3x3 kernels, stride 1, zero same-padding; spatial dims are preserved."""

    def __init__(self, in_ch, out_ch, rng=None, dtype=np.float32):
        self.in_ch = in_ch
        self.out_ch = out_ch
        if rng is None:
            self.w = np.zeros((out_ch, in_ch, 3, 3), dtype=dtype)
        else:
            self.w = glorot_uniform(
                rng, (out_ch, in_ch, 3, 3), in_ch * 9, out_ch * 9, dtype
            )
        self.b = np.zeros(out_ch, dtype=dtype)
        self.dw = None
        self.db = None
        self._x = None

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.dw, self.db]

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeError(
                f"conv({self.in_ch}->{self.out_ch}) got input {x.shape}"
            )
        x = np.ascontiguousarray(x)
        self._x = x
        return kernels.conv2d_forward(x, self.w, self.b)

    def backward(self, dout):
        if self._x is None:
            raise StateError("conv backward before forward")
        dx, self.dw, self.db = kernels.conv2d_backward(
            self._x, self.w, np.ascontiguousarray(dout)
        )
        return dx

    def descriptor(self):
        return {"type": "conv2d", "in_ch": self.in_ch, "out_ch": self.out_ch}


class LeakyRelu(Layer):
    def __init__(self, slope=0.1):
        self.slope = slope
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, self.slope * x)

    def backward(self, dout):
        if self._mask is None:
            raise StateError("leaky_relu backward before forward")
        return np.where(self._mask, dout, self.slope * dout)

    def descriptor(self):
        return {"type": "leaky_relu", "slope": self.slope}


class Sigmoid(Layer):
    def __init__(self):
        self._y = None

    def forward(self, x):
        # split by sign to avoid exp overflow
        pos = x >= 0
        z = np.exp(np.where(pos, -x, x))
        self._y = np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)
        return self._y

    def backward(self, dout):
        if self._y is None:
            raise StateError("sigmoid backward before forward")
        return dout * self._y * (1.0 - self._y)

    def descriptor(self):
        return {"type": "sigmoid"}


class Flatten(Layer):
    def __init__(self):
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        if self._shape is None:
            raise StateError("flatten backward before forward")
        return dout.reshape(self._shape)

    def descriptor(self):
        return {"type": "flatten"}


class Reshape(Layer):
    def __init__(self, shape):
        self.shape = tuple(shape)
        self._in_shape = None

    def forward(self, x):
        self._in_shape = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dout):
        if self._in_shape is None:
            raise StateError("reshape backward before forward")
        return dout.reshape(self._in_shape)

    def descriptor(self):
        return {"type": "reshape", "shape": list(self.shape)}


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads()]

    def descriptors(self):
        return [layer.descriptor() for layer in self.layers]

    def state(self):
        return [p.copy() for p in self.params()]

    def load_state(self, arrays):
        own = self.params()
        if len(own) != len(arrays):
            raise ShapeError(f"state has {len(arrays)} arrays, model {len(own)}")
        for dst, src in zip(own, arrays):
            dst[...] = src

    def astype(self, dtype):
        clone = sequential_from_descriptors(self.descriptors())
        for i, layer in enumerate(clone.layers):
            clone.layers[i] = _cast_layer_params(layer, dtype)
        for dst, src in zip(clone.params(), self.params()):
            dst[...] = src
        return clone


LAYER_REGISTRY = {}


def register_layer(name, factory):
    LAYER_REGISTRY[name] = factory


def layer_from_descriptor(desc):
    d = dict(desc)
    kind = d.pop("type")
    if kind == "dense":
        return Dense(d["n_in"], d["n_out"])
    if kind == "conv2d":
        return Conv2d(d["in_ch"], d["out_ch"])
    if kind == "leaky_relu":
        return LeakyRelu(d["slope"])
    if kind == "sigmoid":
        return Sigmoid()
    if kind == "flatten":
        return Flatten()
    if kind == "reshape":
        return Reshape(d["shape"])
    if kind in LAYER_REGISTRY:
        return LAYER_REGISTRY[kind](**d)
    raise DataFormatError(f"unknown layer type {kind!r}")


def sequential_from_descriptors(descs):
    return Sequential([layer_from_descriptor(d) for d in descs])


class Adam:
    """Bias-corrected Adam updating parameter arrays in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads):
        if len(grads) != len(self.params):
            raise ShapeError("gradient list does not match parameter list")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def grad_check(net, x, loss_fn, rng, n_coords=120, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    The network is cast to float64; loss_fn(pred) must return (loss, dpred).
    """
    net64 = net.astype(np.float64)
    x = x.astype(np.float64)
    _, dpred = loss_fn(net64.forward(x))
    net64.backward(dpred)
    params = net64.params()
    grads = net64.grads()
    sizes = np.array([p.size for p in params])
    bounds = np.cumsum(sizes)
    total = int(bounds[-1])
    coords = rng.choice(total, size=min(n_coords, total), replace=False)
    worst = 0.0
    for c in coords:
        pi = int(np.searchsorted(bounds, c, side="right"))
        off = int(c - (bounds[pi] - sizes[pi]))
        p = params[pi]
        orig = p.flat[off]
        p.flat[off] = orig + eps
        lp = loss_fn(net64.forward(x))[0]
        p.flat[off] = orig - eps
        lm = loss_fn(net64.forward(x))[0]
        p.flat[off] = orig
        numeric = (lp - lm) / (2.0 * eps)
        analytic = grads[pi].flat[off]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# model container
#
# magic "S2NN" | u16 version | u32 header_len | JSON header | array payloads
# (little-endian, C-order, in header table order)
# ---------------------------------------------------------------------------

_MAGIC = b"S2NN"
_VERSION = 1


def save_container(path, kind, meta, arrays):
    table = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        table.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape)})
        blobs.append(le.tobytes())
    header = json.dumps(
        {"kind": kind, "meta": meta, "arrays": table}, sort_keys=True
    ).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(np.uint16(_VERSION).tobytes())
        f.write(np.uint32(len(header)).tobytes())
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_container(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _MAGIC:
        raise DataFormatError(f"bad magic {blob[:4]!r}, expected {_MAGIC!r}", offset=0)
    version = int(np.frombuffer(blob, "<u2", 1, offset=4)[0])
    if version != _VERSION:
        raise DataFormatError(f"unsupported container version {version}", offset=4)
    hlen = int(np.frombuffer(blob, "<u4", 1, offset=6)[0])
    try:
        header = json.loads(blob[10 : 10 + hlen])
    except ValueError as e:
        raise DataFormatError(f"corrupt container header: {e}", offset=10)
    arrays = {}
    off = 10 + hlen
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * dt.itemsize
        if off + nbytes > len(blob):
            raise TruncatedFileError(
                f"array {entry['name']!r} extends past end of file", offset=len(blob)
            )
        arr = np.frombuffer(blob, dt, count, offset=off).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(dt.newbyteorder("="))
        off += nbytes
    return header["kind"], header["meta"], arrays


def save_model(path, model: Sequential, meta=None, optimizer: Adam | None = None):
    arrays = {}
    for i, p in enumerate(model.params()):
        arrays[f"p{i}"] = p
    full_meta = {"descriptors": model.descriptors(), "extra": meta or {}}
    if optimizer is not None:
        full_meta["adam"] = {
            "t": optimizer.t,
            "lr": optimizer.lr,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
        }
        for i, (m, v) in enumerate(zip(optimizer.m, optimizer.v)):
            arrays[f"m{i}"] = m
            arrays[f"v{i}"] = v
    save_container(path, "sequential", full_meta, arrays)


def load_model(path):
    kind, meta, arrays = load_container(path)
    if kind != "sequential":
        raise DataFormatError(f"expected a sequential model, found {kind!r}")
    model = sequential_from_descriptors(meta["descriptors"])
    model.load_state([arrays[f"p{i}"] for i in range(len(model.params()))])
    optimizer = None
    if "adam" in meta:
        a = meta["adam"]
        optimizer = Adam(
            model.params(), lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"]
        )
        optimizer.t = a["t"]
        optimizer.m = [arrays[f"m{i}"] for i in range(len(model.params()))]
        optimizer.v = [arrays[f"v{i}"] for i in range(len(model.params()))]
    return model, meta["extra"], optimizer
