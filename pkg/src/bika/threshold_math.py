"""Piecewise-constant functions and their decomposition into weighted binary thresholds.

A discrete nonlinear function over half-open slots [s_i, s_{i+1}) is rewritten
as a sum of weighted threshold activations alpha_i * Thres_i(x), where
Thres_i(x) is +1 for x >= s_i and -1 otherwise.  The weights have a closed
form: alpha_0 = (O_0 + O_{t-1}) / 2 and alpha_i = (O_i - O_{i-1}) / 2.
Rounding the weights to integers and duplicating each threshold |alpha_i|
times yields a mixed set of m unit thresholds whose sum is an integer in
[-m, m].  All types here are immutable and all operations pure.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Sequence


class DomainError(ValueError):
    """Input lies outside the half-open domain [s_0, s_t)."""


class DegenerateWeightError(ValueError):
    """A weight of zero has no well-defined threshold."""


class DegenerateQuantizationError(ValueError):
    """All weights rounded to zero; the mixed set would be empty."""


@dataclass(frozen=True)
class PiecewiseConstantFn:
    """Discrete function: outputs[i] on boundaries[i] <= x < boundaries[i+1]."""

    boundaries: tuple[float, ...]
    outputs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "boundaries", tuple(float(b) for b in self.boundaries))
        object.__setattr__(self, "outputs", tuple(float(o) for o in self.outputs))
        if len(self.outputs) < 1:
            raise ValueError("need at least one slot")
        if len(self.boundaries) != len(self.outputs) + 1:
            raise ValueError("boundaries length must be outputs length + 1")
        if any(a >= b for a, b in zip(self.boundaries, self.boundaries[1:])):
            raise ValueError("boundaries must be strictly increasing")

    @property
    def num_slots(self) -> int:
        return len(self.outputs)


@dataclass(frozen=True)
class WeightedThreshold:
    """alpha * Thres(x): +alpha if x >= threshold else -alpha."""

    alpha: float
    threshold: float

    def __post_init__(self):
        if not math.isfinite(self.threshold):
            raise ValueError("threshold must be finite")


@dataclass(frozen=True)
class WeightedThresholdSet:
    items: tuple[WeightedThreshold, ...]

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))


@dataclass(frozen=True)
class MixedItem:
    threshold: float
    polarity: int  # +1 or -1

    def __post_init__(self):
        if self.polarity not in (1, -1):
            raise ValueError("polarity must be +1 or -1")


@dataclass(frozen=True)
class MixedThresholdSet:
    """m duplicated unit thresholds; evaluation is an integer in [-m, m] with m's parity."""

    m: int
    items: tuple[MixedItem, ...]

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        if self.m < 1:
            raise ValueError("m must be a positive integer")
        if len(self.items) != self.m:
            raise ValueError("item count must equal m")


@dataclass(frozen=True)
class AffineSignParams:
    """Parameters of Sign(w*x + beta)."""

    w: float
    beta: float


def eval_piecewise(f: PiecewiseConstantFn, x: float) -> float:
    """Look up the slot output for x; raises DomainError outside [s_0, s_t)."""
    if not (f.boundaries[0] <= x < f.boundaries[-1]):
        raise DomainError(f"x={x} outside domain [{f.boundaries[0]}, {f.boundaries[-1]})")
    i = bisect.bisect_right(f.boundaries, x) - 1
    return f.outputs[i]


def eval_weighted_threshold(wt: WeightedThreshold, x: float) -> float:
    return wt.alpha if x >= wt.threshold else -wt.alpha


def decompose(f: PiecewiseConstantFn) -> WeightedThresholdSet:
    """Closed-form threshold weights reproducing f exactly on every slot.

    Thresholds are the left slot ends s_0 .. s_{t-1}.
    """
    out = f.outputs
    t = f.num_slots
    alphas = [(out[0] + out[t - 1]) / 2.0]
    alphas.extend((out[i] - out[i - 1]) / 2.0 for i in range(1, t))
    return WeightedThresholdSet(
        tuple(WeightedThreshold(a, s) for a, s in zip(alphas, f.boundaries[:t]))
    )


def reconstruct(wts: WeightedThresholdSet, x: float) -> float:
    return sum(eval_weighted_threshold(wt, x) for wt in wts.items)


def _round_half_away(v: float) -> int:
    # builtin round() is banker's; ties must go away from zero
    return math.floor(v + 0.5) if v >= 0 else math.ceil(v - 0.5)


def quantize_mix(wts: WeightedThresholdSet) -> MixedThresholdSet:
    """Round weights to integers and duplicate each threshold |alpha| times.

    A weight rounding to q emits |q| copies of its threshold with polarity
    sign(q); m is the total copy count.  Raises if every weight rounds to 0.
    """
    items: list[MixedItem] = []
    for wt in wts.items:
        q = _round_half_away(wt.alpha)
        if q == 0:
            continue
        pol = 1 if q > 0 else -1
        items.extend(MixedItem(wt.threshold, pol) for _ in range(abs(q)))
    if not items:
        raise DegenerateQuantizationError("all weights rounded to zero (m = 0)")
    return MixedThresholdSet(len(items), tuple(items))


def reconstruct_mixed(ms: MixedThresholdSet, x: float) -> int:
    """Sum of unit threshold activations; polarity -1 flips the contribution."""
    total = 0
    for it in ms.items:
        fire = 1 if x >= it.threshold else -1
        total += it.polarity * fire
    return total


def affine_to_threshold(p: AffineSignParams) -> MixedItem:
    """Convert Sign(w*x + beta) to a threshold at -beta/w.

    w > 0: output +1 iff x >= threshold (polarity +1).
    w < 0: output +1 iff x <= threshold (polarity -1).
    """
    if p.w == 0:
        raise DegenerateWeightError("w = 0 has no threshold")
    thr = -p.beta / p.w
    if not math.isfinite(thr):
        raise DegenerateWeightError("non-finite threshold")
    return MixedItem(thr, 1 if p.w > 0 else -1)


def decomposition_report(f: PiecewiseConstantFn) -> dict:
    """Decompose, quantize, and measure the worst per-slot quantization error.

    Probes every slot midpoint and every left boundary.  Used by the CLI.
    """
    wts = decompose(f)
    mixed = quantize_mix(wts)
    max_err = 0.0
    for i in range(f.num_slots):
        lo, hi = f.boundaries[i], f.boundaries[i + 1]
        for x in (lo, (lo + hi) / 2.0):
            max_err = max(max_err, abs(reconstruct_mixed(mixed, x) - f.outputs[i]))
    return {
        "alphas": [wt.alpha for wt in wts.items],
        "thresholds": [wt.threshold for wt in wts.items],
        "m": mixed.m,
        "max_abs_error": max_err,
    }


def sample_piecewise(fn, lo: float, hi: float, t: int) -> PiecewiseConstantFn:
    """Sample a scalar callable into t equal slots over [lo, hi), using midpoints."""
    if t < 1:
        raise ValueError("t must be >= 1")
    step = (hi - lo) / t
    bounds = tuple(lo + i * step for i in range(t + 1))
    outs = tuple(fn(lo + (i + 0.5) * step) for i in range(t))
    return PiecewiseConstantFn(bounds, outs)
