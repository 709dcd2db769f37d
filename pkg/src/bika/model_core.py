"""Integer-only threshold-sum network: layers, forward passes, and the model file format.

Every connection holds a polarity and a 16-bit threshold; its contribution to a
neuron is exactly +1 or -1.  A neuron output is the plain integer sum of its
contributions, optionally clamped to the 8-bit accumulator range [-128, 127].
Inference uses only comparisons and additions; an instrumentation counter
(`count_ops`) tracks operation classes so tests can assert the multiply-free
property.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"BIKA"
FORMAT_VERSION = 1

SAT_LO, SAT_HI = -128, 127
THR_MIN, THR_MAX = -32768, 32767
ALWAYS_FIRE = THR_MIN  # polarity +1, a >= -32768 always holds for i16 activations
NEVER_FIRE = THR_MAX   # polarity +1, a >= 32767 never holds for 8-bit activations

KIND_LINEAR, KIND_CONV2D, KIND_MAXPOOL = 0, 1, 2


class ShapeMismatchError(ValueError):
    pass


class ModelFormatError(ValueError):
    """Malformed model file; carries the byte offset of the failure."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ModelVersionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# op counting

@dataclass
class OpCounters:
    comparisons: int = 0
    additions: int = 0
    multiplications: int = 0

    def add(self, comparisons=0, additions=0, multiplications=0):
        self.comparisons += comparisons
        self.additions += additions
        self.multiplications += multiplications


_ACTIVE_COUNTERS: list[OpCounters] = []


class count_ops:
    """Context manager collecting op counts from forward passes inside it."""

    def __enter__(self) -> OpCounters:
        self.counters = OpCounters()
        _ACTIVE_COUNTERS.append(self.counters)
        return self.counters

    def __exit__(self, *exc):
        _ACTIVE_COUNTERS.remove(self.counters)
        return False


def _record(comparisons=0, additions=0, multiplications=0):
    for c in _ACTIVE_COUNTERS:
        c.add(comparisons, additions, multiplications)


# ---------------------------------------------------------------------------
# layers

@dataclass(frozen=True)
class ThresholdConnection:
    polarity: int  # +1 or -1
    threshold: int  # i16

    def __post_init__(self):
        if self.polarity not in (1, -1):
            raise ValueError("polarity must be +1 or -1")
        if not (THR_MIN <= self.threshold <= THR_MAX):
            raise ValueError("threshold outside 16-bit range")


@dataclass(frozen=True)
class ThresholdLayer:
    """Dense threshold layer.

    linear: polarities/thresholds shaped (out_features, in_features).
    conv2d: shaped (out_ch, in_ch, 3, 3); stride 1, zero padding 1, with a
    per-element threshold shared across spatial positions.
    """

    kind: str  # "linear" | "conv2d"
    polarities: np.ndarray  # int8, values +1/-1
    thresholds: np.ndarray  # int16
    saturate: bool = True

    def __post_init__(self):
        if self.kind not in ("linear", "conv2d"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        pol = np.asarray(self.polarities, dtype=np.int8)
        thr = np.asarray(self.thresholds, dtype=np.int16)
        if pol.shape != thr.shape:
            raise ShapeMismatchError("polarity/threshold shape mismatch")
        expected_ndim = 2 if self.kind == "linear" else 4
        if pol.ndim != expected_ndim:
            raise ShapeMismatchError(f"{self.kind} connections must be {expected_ndim}-d")
        if self.kind == "conv2d" and pol.shape[2:] != (3, 3):
            raise ShapeMismatchError("conv2d kernel must be 3x3")
        if not np.all(np.abs(pol) == 1):
            raise ValueError("polarities must be +1 or -1")
        pol.setflags(write=False)
        thr.setflags(write=False)
        object.__setattr__(self, "polarities", pol)
        object.__setattr__(self, "thresholds", thr)

    @property
    def out_features(self) -> int:
        return self.polarities.shape[0]

    @property
    def in_features(self) -> int:
        return self.polarities.shape[1]

    @property
    def fan_in(self) -> int:
        """Connections summed per output element."""
        if self.kind == "linear":
            return self.in_features
        return self.in_features * 9


@dataclass(frozen=True)
class MaxPool2x2:
    """2x2 max pooling, stride 2, no padding."""


@dataclass(frozen=True)
class BikaModel:
    layers: tuple
    arch_name: str = "custom"
    input_spec: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))


# ---------------------------------------------------------------------------
# forward

def connection_activate(c: ThresholdConnection, a: int) -> int:
    _record(comparisons=1)
    if c.polarity == 1:
        return 1 if a >= c.threshold else -1
    return 1 if a <= c.threshold else -1


def neuron_forward(connections, inputs, saturate: bool) -> int:
    if len(connections) != len(inputs):
        raise ShapeMismatchError(
            f"{len(connections)} connections vs {len(inputs)} inputs"
        )
    if len(connections) == 0:
        raise ShapeMismatchError("neuron needs at least one connection")
    total = sum(connection_activate(c, a) for c, a in zip(connections, inputs))
    _record(additions=len(connections) - 1)
    if saturate:
        total = min(max(total, SAT_LO), SAT_HI)
    return total


def _activation_sum(x2d: np.ndarray, pol: np.ndarray, thr: np.ndarray) -> np.ndarray:
    """Sum of +-1 contributions for batched rows against (M, K) connections.

    x2d: (B, K) int16.  Returns (B, M) int32.  Chunked over the batch to bound
    the (B, M, K) intermediate.
    """
    B, K = x2d.shape
    M = pol.shape[0]
    out = np.empty((B, M), dtype=np.int32)
    chunk = max(1, (1 << 22) // max(1, M * K))
    pos = pol == 1
    for lo in range(0, B, chunk):
        xb = x2d[lo:lo + chunk, None, :]  # (b, 1, K)
        fired = np.where(pos[None, :, :], xb >= thr[None, :, :], xb <= thr[None, :, :])
        # contribution is +1 where fired, -1 otherwise: 2*count(fired) - K
        out[lo:lo + chunk] = 2 * np.count_nonzero(fired, axis=2).astype(np.int32) - K
    _record(comparisons=B * M * K, additions=B * M * (K - 1))
    return out


def _saturate(acc: np.ndarray) -> np.ndarray:
    return np.clip(acc, SAT_LO, SAT_HI)


def _im2col(x: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (B*H*W, C*9) patches for a 3x3/stride-1/pad-1 conv."""
    B, C, H, W = x.shape
    padded = np.zeros((B, C, H + 2, W + 2), dtype=x.dtype)
    padded[:, :, 1:-1, 1:-1] = x
    cols = np.empty((B, C, 3, 3, H, W), dtype=x.dtype)
    for kh in range(3):
        for kw in range(3):
            cols[:, :, kh, kw] = padded[:, :, kh:kh + H, kw:kw + W]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(B * H * W, C * 9)


def layer_forward(layer: ThresholdLayer, x: np.ndarray) -> np.ndarray:
    """Apply a threshold layer to a batch; returns int16 activations."""
    x = np.asarray(x, dtype=np.int16)
    if layer.kind == "linear":
        batched = x.ndim == 2
        x2d = x if batched else x.reshape(1, -1)
        if x2d.shape[1] != layer.in_features:
            raise ShapeMismatchError(
                f"expected {layer.in_features} inputs, got {x2d.shape[1]}"
            )
        acc = _activation_sum(
            x2d, layer.polarities, layer.thresholds
        )
        if layer.saturate:
            acc = _saturate(acc)
        out = acc.astype(np.int16)
        return out if batched else out[0]

    # conv2d
    batched = x.ndim == 4
    x4d = x if batched else x.reshape((1,) + x.shape)
    if x4d.ndim != 4 or x4d.shape[1] != layer.in_features:
        raise ShapeMismatchError(
            f"expected (B, {layer.in_features}, H, W) input, got {x4d.shape}"
        )
    B, _, H, W = x4d.shape
    patches = _im2col(x4d)
    M = layer.out_features
    acc = _activation_sum(
        patches,
        layer.polarities.reshape(M, -1),
        layer.thresholds.reshape(M, -1),
    )
    if layer.saturate:
        acc = _saturate(acc)
    out = acc.reshape(B, H, W, M).transpose(0, 3, 1, 2).astype(np.int16)
    return out if batched else out[0]


def maxpool_forward(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.int16)
    batched = x.ndim == 4
    x4d = x if batched else x.reshape((1,) + x.shape)
    B, C, H, W = x4d.shape
    if H % 2 or W % 2:
        raise ShapeMismatchError(f"spatial dims must be even, got {H}x{W}")
    windows = x4d.reshape(B, C, H // 2, 2, W // 2, 2)
    out = windows.max(axis=(3, 5))
    _record(comparisons=B * C * (H // 2) * (W // 2) * 3)
    return out if batched else out[0]


def model_forward(m: BikaModel, x: np.ndarray) -> np.ndarray:
    out = np.asarray(x, dtype=np.int16)
    for i, layer in enumerate(m.layers):
        if isinstance(layer, MaxPool2x2):
            out = maxpool_forward(out)
            continue
        if layer.kind == "linear":
            # flatten conv activations before the first dense layer
            if out.ndim == 4:
                out = out.reshape(out.shape[0], -1)
            elif out.ndim == 3:
                out = out.reshape(-1)
        out = layer_forward(layer, out)
    return out


def classify(m: BikaModel, x: np.ndarray) -> np.ndarray:
    """Argmax over class scores; ties resolve to the lowest class index."""
    scores = model_forward(m, x)
    return np.argmax(scores, axis=-1)


# ---------------------------------------------------------------------------
# architecture presets

ARCH_PRESETS = {
    "tfc": {"input": (784,), "linear": [64, 32, 10]},
    "sfc": {"input": (784,), "linear": [256, 256, 256, 10]},
    "lfc": {"input": (784,), "linear": [1024, 1024, 1024, 10]},
    "cnv": {
        "input": (3, 32, 32),
        "blocks": [
            ("conv", 64), ("conv", 64), ("pool",),
            ("conv", 128), ("conv", 128), ("pool",),
            ("conv", 256), ("conv", 256), ("pool",),
            ("linear", 512), ("linear", 512), ("linear", 10),
        ],
    },
}


def arch_layer_dims(arch_name: str) -> list[tuple]:
    """Expand a preset into concrete ('linear', in, out) / ('conv2d', in, out) /
    ('maxpool',) entries."""
    if arch_name not in ARCH_PRESETS:
        raise ValueError(f"unknown arch {arch_name!r}; presets: {sorted(ARCH_PRESETS)}")
    preset = ARCH_PRESETS[arch_name]
    dims: list[tuple] = []
    if "linear" in preset:
        prev = preset["input"][0]
        for width in preset["linear"]:
            dims.append(("linear", prev, width))
            prev = width
        return dims
    channels, h, w = preset["input"]
    prev = channels
    spatial = h
    for entry in preset["blocks"]:
        if entry[0] == "conv":
            dims.append(("conv2d", prev, entry[1]))
            prev = entry[1]
        elif entry[0] == "pool":
            dims.append(("maxpool",))
            spatial //= 2
        else:  # linear tail: flatten at the first dense layer
            flat = prev * spatial * spatial if dims and dims[-1][0] != "linear" else prev
            dims.append(("linear", flat, entry[1]))
            prev = entry[1]
    return dims


def input_spec_for(arch_name: str) -> dict:
    if arch_name in ARCH_PRESETS:
        shape = ARCH_PRESETS[arch_name]["input"]
        return {"shape": list(shape), "min": 0, "max": 255}
    return {}


def random_model(arch_name: str, seed: int, saturate: bool = True) -> BikaModel:
    """Seeded random connections, thresholds drawn inside the activation range."""
    rng = np.random.default_rng(seed)
    layers = []
    for entry in arch_layer_dims(arch_name):
        if entry[0] == "maxpool":
            layers.append(MaxPool2x2())
            continue
        kind, fan_in, fan_out = entry
        shape = (fan_out, fan_in) if kind == "linear" else (fan_out, fan_in, 3, 3)
        pol = rng.choice(np.array([-1, 1], dtype=np.int8), size=shape)
        thr = rng.integers(-64, 65, size=shape, dtype=np.int16)
        layers.append(ThresholdLayer(kind, pol, thr, saturate=saturate))
    return BikaModel(tuple(layers), arch_name, input_spec_for(arch_name))


# ---------------------------------------------------------------------------
# serialization

def _pack_layer(layer) -> bytes:
    if isinstance(layer, MaxPool2x2):
        return struct.pack("<B", KIND_MAXPOOL)
    kind_code = KIND_LINEAR if layer.kind == "linear" else KIND_CONV2D
    header = struct.pack(
        "<BIIB", kind_code, layer.in_features, layer.out_features, int(layer.saturate)
    )
    flat_pol = (layer.polarities.reshape(-1) == 1).astype(np.uint8)
    bitmap = np.packbits(flat_pol).tobytes()
    thresholds = layer.thresholds.reshape(-1).astype("<i2").tobytes()
    return header + bitmap + thresholds


def save_model(m: BikaModel, path) -> None:
    path = Path(path)
    arch = m.arch_name.encode("utf-8")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<H", FORMAT_VERSION)
    blob += struct.pack("<H", len(arch)) + arch
    blob += struct.pack("<H", len(m.layers))
    for layer in m.layers:
        blob += _pack_layer(layer)
    path.write_bytes(bytes(blob))
    sidecar = {
        "arch": m.arch_name,
        "format_version": FORMAT_VERSION,
        "input_spec": m.input_spec,
        "layers": [
            {"kind": "maxpool", "window": 2} if isinstance(l, MaxPool2x2) else {
                "kind": l.kind,
                "in": l.in_features,
                "out": l.out_features,
                "saturate": l.saturate,
            }
            for l in m.layers
        ],
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError(
                f"truncated file: wanted {n} bytes, {len(self.data) - self.pos} left",
                self.pos,
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_model(path) -> BikaModel:
    data = Path(path).read_bytes()
    r = _Reader(data)
    magic = r.take(4)
    if magic != MAGIC:
        raise ModelVersionError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = r.unpack("<H")
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"unsupported format version {version}")
    (arch_len,) = r.unpack("<H")
    arch_name = r.take(arch_len).decode("utf-8")
    (layer_count,) = r.unpack("<H")
    layers: list = []
    for _ in range(layer_count):
        (kind_code,) = r.unpack("<B")
        if kind_code == KIND_MAXPOOL:
            layers.append(MaxPool2x2())
            continue
        if kind_code not in (KIND_LINEAR, KIND_CONV2D):
            raise ModelFormatError(f"unknown layer kind {kind_code}", r.pos - 1)
        in_dim, out_dim, sat = r.unpack("<IIB")
        if kind_code == KIND_LINEAR:
            shape = (out_dim, in_dim)
        else:
            shape = (out_dim, in_dim, 3, 3)
        n_conn = int(np.prod(shape))
        bitmap = np.frombuffer(r.take((n_conn + 7) // 8), dtype=np.uint8)
        bits = np.unpackbits(bitmap)[:n_conn]
        pol = np.where(bits == 1, 1, -1).astype(np.int8).reshape(shape)
        thr = np.frombuffer(r.take(2 * n_conn), dtype="<i2").astype(np.int16).reshape(shape)
        kind = "linear" if kind_code == KIND_LINEAR else "conv2d"
        layers.append(ThresholdLayer(kind, pol, thr, saturate=bool(sat)))
    if r.pos != len(data):
        raise ModelFormatError(f"{len(data) - r.pos} trailing bytes", r.pos)
    return BikaModel(tuple(layers), arch_name, input_spec_for(arch_name))
