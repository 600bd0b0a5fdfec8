"""Dense numeric core: activations, layer norm, parameter registry, gradient checking.

Everything downstream works on contiguous row-major numpy arrays. Float64 is
the default so finite-difference gradient checks can be run at tight
tolerances; call ``set_default_dtype(np.float32)`` to trade precision for
speed.
"""

import struct

import numpy as np

DTYPE = np.float64

TENSOR_MAGIC = b"TKT1"


def set_default_dtype(dtype):
    """Set the scalar type used for newly created parameters and buffers."""
    global DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError("default dtype must be float32 or float64, got %s" % dtype)
    DTYPE = dtype.type


def sigmoid(x):
    # Split by sign so neither branch exponentiates a large positive value.
    x = np.asarray(x)
    out = np.empty_like(x, dtype=DTYPE)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x):
    return np.tanh(x)


def softmax(logits):
    """Numerically stable softmax over the last axis.

    Raises ValueError on NaN input; the output of each row sums to 1.
    """
    logits = np.asarray(logits)
    if np.isnan(logits).any():
        raise ValueError("softmax: NaN in logits")
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=-1, keepdims=True)


def softmax_inplace(buf):
    """Softmax over the last axis written back into ``buf``.

    Used on the packed logits lattice so the posterior takes the storage of
    the logits and no second lattice-sized tensor exists.
    """
    if np.isnan(buf).any():
        raise ValueError("softmax: NaN in logits")
    buf -= np.max(buf, axis=-1, keepdims=True)
    np.exp(buf, out=buf)
    buf /= np.sum(buf, axis=-1, keepdims=True)
    return buf


def matvec(w, v):
    """Matrix-vector product with an explicit shape contract."""
    w = np.asarray(w)
    v = np.asarray(v)
    if w.ndim != 2 or v.ndim != 1 or w.shape[1] != v.shape[0]:
        raise ValueError(f"matvec: incompatible shapes {w.shape} x {v.shape}")
    return w @ v


def matmul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    return a @ b


class LayerNormParams:
    """Adaptive gain/bias pair plus a variance floor for one normalized vector."""

    def __init__(self, gain, bias, epsilon=1e-5):
        self.gain = np.asarray(gain, dtype=DTYPE)
        self.bias = np.asarray(bias, dtype=DTYPE)
        if self.gain.shape != self.bias.shape:
            raise ValueError("layer norm gain and bias must have equal length")
        if epsilon < 0:
            raise ValueError("layer norm epsilon must be >= 0")
        self.epsilon = float(epsilon)


def layer_norm(v, p):
    """Standardize ``v`` with population statistics, then scale and shift.

    (v - mean) / sqrt(popvar + eps) * gain + bias.  Population variance
    (1/D normalizer), epsilon inside the sqrt.
    """
    v = np.asarray(v)
    if v.shape != p.gain.shape:
        raise ValueError(f"layer_norm: input dim {v.shape} != param dim {p.gain.shape}")
    mu = v.mean()
    centered = v - mu
    sigma = np.sqrt(centered.dot(centered) / v.size + p.epsilon)
    return centered / sigma * p.gain + p.bias


def layer_norm_fwd(v, gain, bias, epsilon):
    """Forward pass returning (output, cache) for the hand-written backward."""
    mu = v.mean()
    centered = v - mu
    inv_sigma = 1.0 / np.sqrt(centered.dot(centered) / v.size + epsilon)
    vhat = centered * inv_sigma
    return vhat * gain + bias, (vhat, inv_sigma)


def layer_norm_bwd(d_out, gain, cache):
    """Backward of layer_norm_fwd.

    Returns (d_v, d_gain, d_bias). Uses the standard standardization
    gradient with population (1/D) statistics.
    """
    vhat, inv_sigma = cache
    d_gain = d_out * vhat
    d_bias = d_out
    d_vhat = d_out * gain
    n = vhat.size
    d_v = inv_sigma * (d_vhat - d_vhat.mean() - vhat * (d_vhat * vhat).sum() / n)
    return d_v, d_gain, d_bias


class Param:
    """A named tensor with a same-shaped gradient buffer."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name, value):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)


class ParamRegistry:
    """Flat map of unique parameter names to Param handles.

    Single-writer gradient accumulation: cells add into ``param.grad``
    during backward passes; the optimizer and grad_check read the whole
    registry through iteration.
    """

    def __init__(self):
        self._params = {}

    def add(self, name, value):
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        p = Param(name, value)
        self._params[name] = p
        return p

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def zero_grad(self):
        for p in self._params.values():
            p.grad[...] = 0.0

    def num_scalars(self):
        return sum(p.value.size for p in self._params.values())

    def grad_global_norm(self):
        total = 0.0
        for p in self._params.values():
            total += float((p.grad * p.grad).sum())
        return float(np.sqrt(total))

    def clip_grad_norm(self, max_norm):
        norm = self.grad_global_norm()
        if norm > max_norm:
            scale = max_norm / norm
            for p in self._params.values():
                p.grad *= scale
        return norm

    def state_items(self):
        """(name, value) pairs in insertion order, for serialization."""
        return [(name, p.value) for name, p in self._params.items()]


def grad_check(loss_fn, registry, step=1e-6):
    """Compare analytic gradients against central finite differences.

    ``loss_fn()`` must return a scalar loss computed from the registry's
    current values and accumulate the analytic gradients into the registry.
    Returns the max over all parameter scalars of
    |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValueError(f"grad_check step {step} outside [1e-7, 1e-3]")
    registry.zero_grad()
    base = float(loss_fn())
    if not np.isfinite(base):
        raise ValueError("grad_check: loss is not finite")
    analytic = {p.name: p.grad.copy() for p in registry}

    worst = 0.0
    for p in registry:
        flat = p.value.reshape(-1)
        a = analytic[p.name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(loss_fn())
            flat[i] = orig - step
            down = float(loss_fn())
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            rel = abs(a[i] - numeric) / (abs(a[i]) + abs(numeric) + 1e-12)
            worst = max(worst, rel)
    return worst


class AllocationMeter:
    """Counts live large buffers by tag, for the memory-accounting checks.

    Code that allocates (or retires) a lattice-sized buffer reports it here;
    tests read peak-live counts and bytes. This is bookkeeping, not a memory
    profiler: only the tagged allocations the contracts care about are
    recorded.
    """

    def __init__(self):
        self.live_count = {}
        self.live_bytes = {}
        self.peak_count = {}
        self.peak_bytes = {}
        self.total_bytes = {}

    def grab(self, tag, nbytes):
        self.live_count[tag] = self.live_count.get(tag, 0) + 1
        self.live_bytes[tag] = self.live_bytes.get(tag, 0) + int(nbytes)
        self.total_bytes[tag] = self.total_bytes.get(tag, 0) + int(nbytes)
        self.peak_count[tag] = max(self.peak_count.get(tag, 0), self.live_count[tag])
        self.peak_bytes[tag] = max(self.peak_bytes.get(tag, 0), self.live_bytes[tag])

    def drop(self, tag, nbytes):
        self.live_count[tag] = self.live_count.get(tag, 0) - 1
        self.live_bytes[tag] = self.live_bytes.get(tag, 0) - int(nbytes)


def write_tensor(f, arr):
    """Write one array in the toolkit's binary tensor format.

    Little-endian: magic "TKT1", u32 rank, u64 per-dim sizes, f64 payload.
    """
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    f.write(TENSOR_MAGIC)
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack("<%dQ" % arr.ndim, *arr.shape))
    f.write(arr.tobytes())


def read_tensor(f):
    magic = f.read(4)
    if magic != TENSOR_MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}, expected {TENSOR_MAGIC!r}")
    (rank,) = struct.unpack("<I", f.read(4))
    shape = struct.unpack("<%dQ" % rank, f.read(8 * rank)) if rank else ()
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(f.read(8 * count), dtype="<f8", count=count)
    return data.reshape(shape).astype(np.float64)


def save_tensor(path, arr):
    with open(path, "wb") as f:
        write_tensor(f, arr)


def load_tensor(path):
    with open(path, "rb") as f:
        return read_tensor(f)
