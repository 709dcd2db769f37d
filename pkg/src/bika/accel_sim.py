"""Cycle-level model of an R x C output-stationary systolic array.

Three processing-element variants share one dataflow:

- comparison-accumulator (threshold-sum): one comparison + one accumulate per
  cycle, no activation phase;
- XNOR + popcount (binarized): 8 sign bits per cycle, then a one-threshold
  activation phase after drain;
- 8-bit multiply-accumulate (quantized): one MAC per cycle, then 256 serial
  threshold comparisons per drained output.

A layer runs in ceil(B/R) * ceil(M/C) passes.  Per-pass timing is produced by
a discrete-event engine (per-PE operand schedules, drain events, activation
events); the closed-form contract

    cycles_per_pass = K_eff + (R-1) + (C-1) + C + act_phase

is its analytic counterpart and is what tests cross-check against.  Functional
outputs are computed with the same datapath semantics and must match the
scalar reference forward bit-exactly.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import model_core
from .model_core import BikaModel, MaxPool2x2, ThresholdLayer


class PEKind(str, Enum):
    BIKA_CAC = "bika"
    BNN_XNOR_POPCOUNT = "bnn"
    QNN_MAC = "qnn"


DEFAULT_CLOCK_MHZ = {
    PEKind.BIKA_CAC: 300.0,
    PEKind.BNN_XNOR_POPCOUNT: 300.0,
    PEKind.QNN_MAC: 250.0,
}

QNN_ACT_LEVELS = 256  # 2^8 serial threshold comparisons per output
BNN_SIMD = 8


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class ArrayConfig:
    rows: int = 8
    cols: int = 8
    pe_kind: PEKind = PEKind.BIKA_CAC
    clock_mhz: float | None = None

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("array dims must be >= 1")
        object.__setattr__(self, "pe_kind", PEKind(self.pe_kind))
        if self.clock_mhz is None:
            object.__setattr__(self, "clock_mhz", DEFAULT_CLOCK_MHZ[self.pe_kind])


@dataclass
class OpCounts:
    comparisons: int = 0
    additions: int = 0
    multiplications: int = 0
    xnor_bit_ops: int = 0
    threshold_loads: int = 0

    def merge(self, other):
        self.comparisons += other.comparisons
        self.additions += other.additions
        self.multiplications += other.multiplications
        self.xnor_bit_ops += other.xnor_bit_ops
        self.threshold_loads += other.threshold_loads


@dataclass
class SimReport:
    total_cycles: int
    per_layer_cycles: list[int]
    op_counters: OpCounts
    clock_mhz: float
    functional_output: np.ndarray | None = None

    @property
    def latency_us(self) -> float:
        return self.total_cycles / self.clock_mhz

    def to_dict(self) -> dict:
        return {
            "total_cycles": self.total_cycles,
            "per_layer_cycles": self.per_layer_cycles,
            "latency_us": self.latency_us,
            "clock_mhz": self.clock_mhz,
            "op_counters": vars(self.op_counters),
        }


# ---------------------------------------------------------------------------
# cycle timing

def act_phase_cycles(pe_kind: PEKind, cols: int) -> int:
    if pe_kind is PEKind.BIKA_CAC:
        return 0
    if pe_kind is PEKind.BNN_XNOR_POPCOUNT:
        return cols + 1  # threshold load + one comparison per drained column
    return cols + QNN_ACT_LEVELS  # threshold load + serial comparisons


def effective_depth(pe_kind: PEKind, k: int) -> int:
    if pe_kind is PEKind.BNN_XNOR_POPCOUNT:
        return (k + BNN_SIMD - 1) // BNN_SIMD
    return k


def closed_form_layer_cycles(pe_kind: PEKind, k: int, m: int, b: int,
                             rows: int, cols: int) -> int:
    """The declared dataflow contract for one matmul-shaped layer."""
    passes = math.ceil(b / rows) * math.ceil(m / cols)
    k_eff = effective_depth(pe_kind, k)
    per_pass = k_eff + (rows - 1) + (cols - 1) + cols + act_phase_cycles(pe_kind, cols)
    return passes * per_pass


def event_driven_pass_cycles(pe_kind: PEKind, k_eff: int, rows: int, cols: int) -> int:
    """Count one pass by discrete-event simulation.

    Each PE (i, j) receives its first operand at cycle i + j (wavefront skew)
    and consumes one per cycle; compute ends when the last PE finishes.  Drain
    then shifts one column per cycle; the activation phase follows as its own
    event sequence.
    """
    events: list[int] = []
    for i in range(rows):
        for j in range(cols):
            first = i + j
            last = first + k_eff - 1
            heapq.heappush(events, last)
    compute_end = 0
    while events:
        compute_end = heapq.heappop(events)
    t = compute_end + 1  # first drain cycle starts after the last accumulate
    for _ in range(cols):  # one column shifted out per cycle
        t += 1
    if pe_kind is PEKind.BNN_XNOR_POPCOUNT:
        t += 1  # threshold load
        for _ in range(cols):  # one comparison per drained column
            t += 1
    elif pe_kind is PEKind.QNN_MAC:
        for _ in range(cols):  # per-column threshold load
            t += 1
        for _ in range(QNN_ACT_LEVELS):  # serial comparisons
            t += 1
    return t


def event_driven_layer_cycles(pe_kind: PEKind, k: int, m: int, b: int,
                              rows: int, cols: int) -> int:
    passes = math.ceil(b / rows) * math.ceil(m / cols)
    k_eff = effective_depth(pe_kind, k)
    return passes * event_driven_pass_cycles(pe_kind, k_eff, rows, cols)


# ---------------------------------------------------------------------------
# synthetic baseline workloads

@dataclass(frozen=True)
class BaselineLayer:
    """One matmul-shaped layer of a BNN or QNN workload.

    BNN: weights in {-1, +1}, one binarizing threshold per output.
    QNN: int8 weights, 256 ascending activation thresholds per output.
    """

    kind: str  # "linear" | "conv2d"
    weights: np.ndarray
    act_thresholds: np.ndarray

    @property
    def out_features(self) -> int:
        return self.weights.shape[0]

    @property
    def in_features(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class BaselineWorkload:
    kind: PEKind
    layers: tuple
    arch_name: str = "custom"


def make_baseline_workload(pe_kind: PEKind, arch_name: str, seed: int) -> BaselineWorkload:
    """Seeded random parameters with dims mirroring the named architecture."""
    pe_kind = PEKind(pe_kind)
    if pe_kind is PEKind.BIKA_CAC:
        raise ValueError("use model_core.random_model for threshold-sum workloads")
    rng = np.random.default_rng(seed)
    layers = []
    for entry in model_core.arch_layer_dims(arch_name):
        if entry[0] == "maxpool":
            layers.append(MaxPool2x2())
            continue
        kind, fan_in, fan_out = entry
        shape = (fan_out, fan_in) if kind == "linear" else (fan_out, fan_in, 3, 3)
        k = fan_in if kind == "linear" else fan_in * 9
        if pe_kind is PEKind.BNN_XNOR_POPCOUNT:
            w = rng.choice(np.array([-1, 1], dtype=np.int8), size=shape)
            thr = rng.integers(-k // 2 - 1, k // 2 + 1, size=(fan_out, 1)).astype(np.int32)
        else:
            w = rng.integers(-128, 128, size=shape, dtype=np.int64).astype(np.int8)
            centers = rng.integers(-(1 << 12), 1 << 12, size=(fan_out, 1))
            steps = np.arange(QNN_ACT_LEVELS)[None, :] * rng.integers(
                1, 64, size=(fan_out, 1)
            )
            thr = (centers - (QNN_ACT_LEVELS // 2) + steps).astype(np.int64)
        layers.append(BaselineLayer(kind, w, thr))
    return BaselineWorkload(pe_kind, tuple(layers), arch_name)


# ---------------------------------------------------------------------------
# scalar reference forwards for the baselines

def bnn_layer_reference(layer: BaselineLayer, x: np.ndarray) -> np.ndarray:
    """x: (B, K) in {-1, +1}; returns (B, M) in {-1, +1}."""
    w = layer.weights.reshape(layer.out_features, -1).astype(np.int64)
    acc = x.astype(np.int64) @ w.T
    return np.where(acc >= layer.act_thresholds.T, 1, -1).astype(np.int8)


def qnn_layer_reference(layer: BaselineLayer, x: np.ndarray) -> np.ndarray:
    """x: (B, K) int8; returns (B, M) int8 via serial threshold quantization.

    The output code is the count of thresholds the accumulator reaches, offset
    to the signed 8-bit range.
    """
    w = layer.weights.reshape(layer.out_features, -1).astype(np.int64)
    acc = x.astype(np.int64) @ w.T  # (B, M)
    counts = (acc[:, :, None] >= layer.act_thresholds[None, :, :]).sum(axis=2)
    return (counts - QNN_ACT_LEVELS // 2).astype(np.int8)


# ---------------------------------------------------------------------------
# simulation

def _as_matmul(layer, x: np.ndarray, pe_kind: PEKind):
    """Lower a layer + batch to (rows, K) operands and per-output parameters."""
    if isinstance(layer, ThresholdLayer) or isinstance(layer, BaselineLayer):
        if layer.kind == "conv2d":
            x4d = x if x.ndim == 4 else x.reshape((1,) + x.shape)
            cols = model_core._im2col(x4d.astype(np.int16))
            return cols, x4d.shape
        x2d = x if x.ndim == 2 else x.reshape(1, -1)
        return x2d, None
    raise SimulationError(f"unsupported layer type {type(layer).__name__}")


def _tile_output_bika(layer: ThresholdLayer, rows_x: np.ndarray) -> np.ndarray:
    m = layer.out_features
    pol = layer.polarities.reshape(m, -1)
    thr = layer.thresholds.reshape(m, -1)
    acc = model_core._activation_sum(rows_x.astype(np.int16), pol, thr)
    if layer.saturate:
        acc = model_core._saturate(acc)  # clamp during drain, zero cycles
    return acc.astype(np.int16)


def simulate_layer(cfg: ArrayConfig, layer, batch: np.ndarray) -> SimReport:
    """Run one layer on the array; output must equal the reference forward."""
    batch = np.asarray(batch)
    if batch.size == 0:
        raise SimulationError("empty batch")
    pe = cfg.pe_kind
    if isinstance(layer, ThresholdLayer) and pe is not PEKind.BIKA_CAC:
        raise SimulationError(f"{pe.value} array cannot run threshold-sum layers")
    if isinstance(layer, BaselineLayer) and pe is PEKind.BIKA_CAC:
        raise SimulationError("threshold-sum array cannot run baseline layers")

    rows_x, conv_shape = _as_matmul(layer, batch, pe)
    B, K = rows_x.shape
    M = layer.out_features

    cycles = event_driven_layer_cycles(pe, K, M, B, cfg.rows, cfg.cols)
    passes = math.ceil(B / cfg.rows) * math.ceil(M / cfg.cols)

    ops = OpCounts()
    if pe is PEKind.BIKA_CAC:
        out2d = _tile_output_bika(layer, rows_x)
        ops.comparisons = B * M * K
        ops.additions = B * M * K
    elif pe is PEKind.BNN_XNOR_POPCOUNT:
        out2d = bnn_layer_reference(layer, rows_x)
        groups = effective_depth(pe, K)
        ops.xnor_bit_ops = B * M * groups * BNN_SIMD
        ops.additions = B * M * groups
        ops.comparisons = B * M  # one binarizing threshold per output
        ops.threshold_loads = passes
    else:
        out2d = qnn_layer_reference(layer, rows_x)
        ops.multiplications = B * M * K
        ops.additions = B * M * K
        ops.comparisons = B * M * QNN_ACT_LEVELS
        ops.threshold_loads = passes

    if conv_shape is not None:
        nb, _, h, w = conv_shape
        out = out2d.reshape(nb, h, w, M).transpose(0, 3, 1, 2)
    else:
        out = out2d
    return SimReport(cycles, [cycles], ops, cfg.clock_mhz, out)


def simulate_model(cfg: ArrayConfig, model_or_workload, batch: np.ndarray) -> SimReport:
    batch = np.asarray(batch)
    if batch.size == 0:
        raise SimulationError("empty input")
    if isinstance(model_or_workload, BikaModel):
        layers = model_or_workload.layers
        if cfg.pe_kind is not PEKind.BIKA_CAC:
            raise SimulationError("threshold-sum model requires the comparison array")
    else:
        layers = model_or_workload.layers
        if cfg.pe_kind is PEKind.BIKA_CAC:
            raise SimulationError("baseline workload requires a bnn or qnn array")

    per_layer = []
    ops = OpCounts()
    out = batch
    for layer in layers:
        if isinstance(layer, MaxPool2x2):
            out = _maxpool_like(out, cfg.pe_kind)
            n_out = out.size
            per_layer.append(n_out)  # one output element per cycle on the side unit
            ops.comparisons += n_out * 3
            continue
        if layer.kind == "linear" and out.ndim == 4:
            out = out.reshape(out.shape[0], -1)
        elif layer.kind == "linear" and out.ndim == 3:
            out = out.reshape(1, -1)
        rep = simulate_layer(cfg, layer, out)
        per_layer.append(rep.total_cycles)
        ops.merge(rep.op_counters)
        out = rep.functional_output
    return SimReport(sum(per_layer), per_layer, ops, cfg.clock_mhz, out)


def _maxpool_like(x: np.ndarray, pe_kind: PEKind) -> np.ndarray:
    x4d = x if x.ndim == 4 else x.reshape((1,) + x.shape)
    b, c, h, w = x4d.shape
    out = x4d.reshape(b, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))
    return out if x.ndim == 4 else out[0]


# ---------------------------------------------------------------------------
# engine comparison

def reference_forward(model_or_workload, batch: np.ndarray) -> np.ndarray:
    """Scalar/vector reference forward, independent of the array simulation."""
    if isinstance(model_or_workload, BikaModel):
        return model_core.model_forward(model_or_workload, batch)
    out = np.asarray(batch)
    ref = bnn_layer_reference if model_or_workload.kind is PEKind.BNN_XNOR_POPCOUNT \
        else qnn_layer_reference
    for layer in model_or_workload.layers:
        if isinstance(layer, MaxPool2x2):
            out = _maxpool_like(out, model_or_workload.kind)
            continue
        if layer.kind == "conv2d":
            x4d = out if out.ndim == 4 else out.reshape((1,) + out.shape)
            cols = model_core._im2col(x4d.astype(np.int16))
            flat = ref(layer, cols)
            m = layer.out_features
            nb, _, h, w = x4d.shape
            out = flat.reshape(nb, h, w, m).transpose(0, 3, 1, 2)
            if np.asarray(batch).ndim != 4 and out.shape[0] == 1:
                out = out[0]
        else:
            x2d = out if out.ndim == 2 else out.reshape(1, -1)
            out2 = ref(layer, x2d)
            out = out2 if out.ndim == 2 else out2[0]
    return out


def random_input_for(pe_kind: PEKind, arch_name: str, seed: int,
                     batch: int = 1) -> np.ndarray:
    rng = np.random.default_rng(seed)
    shape = tuple(model_core.ARCH_PRESETS[arch_name]["input"])
    pe_kind = PEKind(pe_kind)
    if pe_kind is PEKind.BIKA_CAC:
        return rng.integers(0, 256, size=(batch,) + shape).astype(np.int16)
    if pe_kind is PEKind.BNN_XNOR_POPCOUNT:
        return rng.choice(np.array([-1, 1], dtype=np.int8), size=(batch,) + shape)
    return rng.integers(-128, 128, size=(batch,) + shape).astype(np.int8)


def compare_engines(arch_name: str, seed: int, rows: int = 8, cols: int = 8,
                    batch: int = 1) -> dict:
    """Run all three engines on identically-shaped workloads and tabulate."""
    results = {}
    for pe in (PEKind.BIKA_CAC, PEKind.BNN_XNOR_POPCOUNT, PEKind.QNN_MAC):
        cfg = ArrayConfig(rows, cols, pe)
        if pe is PEKind.BIKA_CAC:
            work = model_core.random_model(arch_name, seed)
        else:
            work = make_baseline_workload(pe, arch_name, seed)
        x = random_input_for(pe, arch_name, seed + 1, batch)
        rep = simulate_model(cfg, work, x)
        results[pe.value] = {
            "cycles": rep.total_cycles,
            "per_layer_cycles": rep.per_layer_cycles,
            "clock_mhz": rep.clock_mhz,
            "latency_us": rep.latency_us,
            "op_counters": vars(rep.op_counters),
        }
    bika, qnn = results["bika"], results["qnn"]
    results["ratios"] = {
        "qnn_over_bika_cycles": qnn["cycles"] / bika["cycles"],
        "qnn_over_bika_latency": qnn["latency_us"] / bika["latency_us"],
        "bika_over_bnn_cycles": bika["cycles"] / results["bnn"]["cycles"],
    }
    return results


def comparison_csv(table: dict) -> str:
    lines = ["engine,cycles,clock_mhz,latency_us,multiplications,comparisons"]
    for engine in ("bika", "bnn", "qnn"):
        row = table[engine]
        ops = row["op_counters"]
        lines.append(
            f"{engine},{row['cycles']},{row['clock_mhz']},{row['latency_us']!r},"
            f"{ops['multiplications']},{ops['comparisons']}"
        )
    return "\n".join(lines) + "\n"


def workload_from_json(doc: dict):
    """Workload spec {kind, arch, seed} -> simulatable object."""
    kind = PEKind(doc["kind"])
    arch = doc["arch"]
    seed = int(doc.get("seed", 0))
    if kind is PEKind.BIKA_CAC:
        return model_core.random_model(arch, seed)
    return make_baseline_workload(kind, arch, seed)
