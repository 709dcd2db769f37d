"""Training with real-valued shadow parameters and a straight-through estimator.

Each connection carries its own weight and bias; the forward pass sums
Sign(W_ij * a_j + b_ij) over the inputs of a neuron.  Sign's backward pass is
replaced by the hard-tanh derivative (1 inside [-1, 1], 0 outside).  After
training, every connection is exported to an integer threshold that reproduces
Sign(w*a + b) exactly for all integer activations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import model_core
from .datasets_io import Dataset
from .model_core import (
    ALWAYS_FIRE,
    NEVER_FIRE,
    BikaModel,
    MaxPool2x2,
    ThresholdLayer,
    arch_layer_dims,
    input_spec_for,
)


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; the run is reported as failed."""


class ExportError(ValueError):
    pass


# ---------------------------------------------------------------------------
# surrogate-gradient primitives

def sign_ste_forward(z: float) -> int:
    return 1 if z >= 0 else -1


def sign_ste_backward(z: float, upstream: float) -> float:
    return upstream if abs(z) <= 1.0 else 0.0


class _SignSTE(torch.autograd.Function):
    @staticmethod
    def forward(ctx, z):
        ctx.save_for_backward(z)
        return torch.where(z >= 0, 1.0, -1.0)

    @staticmethod
    def backward(ctx, grad_out):
        (z,) = ctx.saved_tensors
        return grad_out * (z.abs() <= 1.0)


class _Saturate(torch.autograd.Function):
    """Clamp to [-128, 127] with clipped-identity gradient."""

    @staticmethod
    def forward(ctx, o):
        ctx.save_for_backward(o)
        return o.clamp(model_core.SAT_LO, model_core.SAT_HI)

    @staticmethod
    def backward(ctx, grad_out):
        (o,) = ctx.saved_tensors
        inside = (o >= model_core.SAT_LO) & (o <= model_core.SAT_HI)
        return grad_out * inside


sign_ste = _SignSTE.apply
saturate_ste = _Saturate.apply


# ---------------------------------------------------------------------------
# shadow layers

class ShadowLinear(torch.nn.Module):
    """Dense layer with per-connection weight and bias, threshold-sum forward."""

    def __init__(self, in_features, out_features, saturate=True, input_scale=128.0):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.saturate = saturate
        # weights sized to the integer activation range so w*a starts inside
        # the hard-tanh window; biases split Sign at a=0 so layer sums start
        # near zero instead of pinned at the saturation rail
        bound = 1.0 / input_scale
        self.weight = torch.nn.Parameter(
            torch.empty(out_features, in_features).uniform_(-bound, bound)
        )
        self.bias = torch.nn.Parameter(
            torch.empty(out_features, in_features).uniform_(-1.0, 1.0)
        )

    def forward(self, x, surrogate=False):
        z = self.weight.unsqueeze(0) * x.unsqueeze(1) + self.bias.unsqueeze(0)
        act = torch.clamp(z, -1.0, 1.0) if surrogate else sign_ste(z)
        o = act.sum(dim=2)
        return saturate_ste(o) if self.saturate else o


class ShadowConv2d(torch.nn.Module):
    """3x3/stride-1/pad-1 conv with a bias per weight element, shared spatially."""

    def __init__(self, in_channels, out_channels, saturate=True, input_scale=128.0):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.saturate = saturate
        bound = 1.0 / input_scale
        self.weight = torch.nn.Parameter(
            torch.empty(out_channels, in_channels, 3, 3).uniform_(-bound, bound)
        )
        self.bias = torch.nn.Parameter(
            torch.empty(out_channels, in_channels, 3, 3).uniform_(-1.0, 1.0)
        )

    def forward(self, x, surrogate=False):
        B, C, H, W = x.shape
        K = C * 9
        patches = F.unfold(x, kernel_size=3, padding=1)  # (B, K, H*W)
        w = self.weight.reshape(self.out_channels, K)
        b = self.bias.reshape(self.out_channels, K)
        z = w[None, :, :, None] * patches[:, None, :, :] + b[None, :, :, None]
        act = torch.clamp(z, -1.0, 1.0) if surrogate else sign_ste(z)
        o = act.sum(dim=2).reshape(B, self.out_channels, H, W)
        return saturate_ste(o) if self.saturate else o


class ShadowModel(torch.nn.Module):
    def __init__(self, arch_name, saturate=True):
        super().__init__()
        self.arch_name = arch_name
        self.stages = torch.nn.ModuleList()
        self.stage_kinds: list[str] = []
        scale = 255.0  # raw pixel range for the first layer, i8 range after
        for entry in arch_layer_dims(arch_name):
            if entry[0] == "maxpool":
                self.stages.append(torch.nn.MaxPool2d(2))
                self.stage_kinds.append("maxpool")
                continue
            if entry[0] == "linear":
                self.stages.append(ShadowLinear(entry[1], entry[2], saturate, scale))
                self.stage_kinds.append("linear")
            else:
                self.stages.append(ShadowConv2d(entry[1], entry[2], saturate, scale))
                self.stage_kinds.append("conv2d")
            scale = 128.0

    def forward(self, x, surrogate=False):
        out = x
        for stage, kind in zip(self.stages, self.stage_kinds):
            if kind == "maxpool":
                out = stage(out)
            else:
                if kind == "linear" and out.dim() > 2:
                    out = out.flatten(1)
                out = stage(out, surrogate=surrogate)
        return out


def shadow_forward(layer, x, surrogate=False):
    """Functional wrapper over a shadow layer's forward pass."""
    return layer(x, surrogate=surrogate)


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 256
    learning_rates: tuple[float, float, float] = (1e-3, 5e-4, 1e-4)
    seed: int = 0
    saturate_in_training: bool = True
    optimizer: str = "adam"
    temperature: float = 0.25

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if any(lr <= 0 for lr in self.learning_rates):
            raise ValueError("learning rates must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def stage_lr(self, epoch: int) -> float:
        """Three equal stages over the epoch budget (0-based epoch index)."""
        third = self.epochs / 3.0
        if epoch < third:
            return self.learning_rates[0]
        if epoch < 2 * third:
            return self.learning_rates[1]
        return self.learning_rates[2]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    wall_time_s: float = 0.0
    final_test_acc: float | None = None

    def to_dict(self) -> dict:
        return {
            "epochs": [vars(e) for e in self.epochs],
            "wall_time_s": self.wall_time_s,
            "final_test_acc": self.final_test_acc,
        }

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,train_acc,val_acc"]
        lines += [
            f"{e.epoch},{e.train_loss!r},{e.train_acc!r},{e.val_acc!r}"
            for e in self.epochs
        ]
        return "\n".join(lines) + "\n"


def _dataset_tensors(d: Dataset, flatten: bool):
    x = torch.from_numpy(d.images.copy()).to(torch.float32)
    if flatten:
        x = x.flatten(1)
    y = torch.from_numpy(d.labels.copy())
    return x, y


@torch.no_grad()
def _accuracy(model, x, y, batch_size=1024) -> float:
    correct = 0
    for lo in range(0, x.shape[0], batch_size):
        scores = model(x[lo:lo + batch_size])
        correct += (scores.argmax(dim=1) == y[lo:lo + batch_size]).sum().item()
    return correct / x.shape[0]


def train(arch_name: str, train_data: Dataset, val_data: Dataset,
          cfg: TrainConfig, log=None):
    """Minibatch SGD/Adam on softmax cross-entropy over temperature-scaled sums.

    Deterministic for a given seed: fixed init, fixed shuffle order, fixed
    single-threaded reduction.
    """
    if len(train_data) == 0:
        raise ValueError("empty training dataset")
    torch.manual_seed(cfg.seed)
    torch.set_num_threads(1)
    model = ShadowModel(arch_name, saturate=cfg.saturate_in_training)
    flatten = model.stage_kinds[0] == "linear"
    x_train, y_train = _dataset_tensors(train_data, flatten)
    x_val, y_val = _dataset_tensors(val_data, flatten) if len(val_data) else (None, None)

    if cfg.optimizer == "adam":
        opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rates[0])
    else:
        opt = torch.optim.SGD(model.parameters(), lr=cfg.learning_rates[0])

    shuffler = torch.Generator().manual_seed(cfg.seed)
    report = TrainReport()
    n = x_train.shape[0]
    t0 = time.monotonic()
    for epoch in range(cfg.epochs):
        lr = cfg.stage_lr(epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        perm = torch.randperm(n, generator=shuffler)
        total_loss = 0.0
        total_correct = 0
        model.train()
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            opt.zero_grad()
            scores = model(xb)
            loss = F.cross_entropy(cfg.temperature * scores, yb)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
            total_loss += loss.item() * xb.shape[0]
            total_correct += (scores.argmax(dim=1) == yb).sum().item()
        model.eval()
        val_acc = _accuracy(model, x_val, y_val) if x_val is not None else float("nan")
        rec = EpochRecord(epoch, total_loss / n, total_correct / n, val_acc)
        report.epochs.append(rec)
        if log:
            log(f"epoch {epoch}: loss={rec.train_loss:.4f} "
                f"train_acc={rec.train_acc:.4f} val_acc={rec.val_acc:.4f} lr={lr:g}")
    report.wall_time_s = time.monotonic() - t0
    return model, report


def evaluate(model: ShadowModel, data: Dataset) -> float:
    flatten = model.stage_kinds[0] == "linear"
    x, y = _dataset_tensors(data, flatten)
    model.eval()
    return _accuracy(model, x, y)


# ---------------------------------------------------------------------------
# export to integer thresholds

def _export_connections(w: np.ndarray, b: np.ndarray):
    """Integer thresholds equivalent to Sign(w*a + b) on integer activations.

    w > 0: fire when a >= ceil(-b/w).  w < 0: fire when a <= floor(-b/w).
    w == 0 collapses to Sign(b): always-fire for b >= 0, never-fire otherwise.
    Thresholds falling outside i16 are clamped to the matching sentinel.
    """
    if not (np.isfinite(w).all() and np.isfinite(b).all()):
        raise ExportError("non-finite shadow parameter")
    pol = np.where(w >= 0, 1, -1).astype(np.int8)
    ratio = np.divide(-b, w, out=np.zeros_like(b, dtype=np.float64),
                      where=w != 0)
    thr = np.where(w > 0, np.ceil(ratio), np.floor(ratio))
    # ceil/floor of the float ratio can be one off when -b/w sits within a ulp
    # of an integer; nudge T until it agrees with the w*a+b >= 0 comparison
    # (the semantics being exported) at the boundary integers
    for _ in range(2):
        fires_at = w * thr + b >= 0
        pos = w > 0
        neg = w < 0
        below = w * (thr - 1) + b >= 0
        above = w * (thr + 1) + b >= 0
        thr = np.where(pos & below, thr - 1, thr)
        thr = np.where(pos & ~fires_at & ~below, thr + 1, thr)
        thr = np.where(neg & above, thr + 1, thr)
        thr = np.where(neg & ~fires_at & ~above, thr - 1, thr)
    thr = np.clip(thr, model_core.THR_MIN, model_core.THR_MAX)
    thr = thr.astype(np.int16)
    # degenerate weights: encode Sign(b) inside the ordinary comparator
    zero = w == 0
    pol = np.where(zero, 1, pol).astype(np.int8)
    thr = np.where(zero, np.where(b >= 0, ALWAYS_FIRE, NEVER_FIRE), thr).astype(np.int16)
    return pol, thr


def export(shadow: ShadowModel) -> BikaModel:
    layers = []
    for stage, kind in zip(shadow.stages, shadow.stage_kinds):
        if kind == "maxpool":
            layers.append(MaxPool2x2())
            continue
        w = stage.weight.detach().numpy().astype(np.float64)
        b = stage.bias.detach().numpy().astype(np.float64)
        pol, thr = _export_connections(w, b)
        layers.append(ThresholdLayer(kind, pol, thr, saturate=stage.saturate))
    return BikaModel(tuple(layers), shadow.arch_name, input_spec_for(shadow.arch_name))


def verify_export(shadow: ShadowModel, exported: BikaModel,
                  a_range=(-256, 256)) -> int:
    """Exhaustively check every connection over integer activations.

    Returns the number of connections checked; raises ExportError on the first
    mismatch between Sign(w*a + b) and the integer threshold activation.
    """
    a = np.arange(a_range[0], a_range[1], dtype=np.float64)
    checked = 0
    threshold_layers = [l for l in exported.layers if isinstance(l, ThresholdLayer)]
    shadow_stages = [s for s, k in zip(shadow.stages, shadow.stage_kinds)
                     if k != "maxpool"]
    for stage, layer in zip(shadow_stages, threshold_layers):
        w = stage.weight.detach().numpy().reshape(-1).astype(np.float64)
        b = stage.bias.detach().numpy().reshape(-1).astype(np.float64)
        pol = layer.polarities.reshape(-1).astype(np.int64)
        thr = layer.thresholds.reshape(-1).astype(np.int64)
        ref = np.where(w[:, None] * a[None, :] + b[:, None] >= 0, 1, -1)
        ai = a.astype(np.int64)
        got = np.where(
            pol[:, None] == 1,
            np.where(ai[None, :] >= thr[:, None], 1, -1),
            np.where(ai[None, :] <= thr[:, None], 1, -1),
        )
        bad = np.nonzero((ref != got).any(axis=1))[0]
        if bad.size:
            i = int(bad[0])
            raise ExportError(
                f"connection {i}: w={w[i]}, b={b[i]} not matched by "
                f"polarity={pol[i]}, T={thr[i]}"
            )
        checked += w.size
    return checked
