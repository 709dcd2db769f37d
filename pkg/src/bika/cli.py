"""Command-line entry point: train, export, eval, decompose, sim, compare.

Exit codes: 0 ok, 2 config error, 3 data error, 4 training divergence,
5 export-equivalence failure, 6 malformed model file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, accel_sim, datasets_io, model_core, threshold_math, trainer

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_EQUIVALENCE = 5
EXIT_MALFORMED = 6


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, command: str, config: dict, seed,
                    inputs: list[Path], outputs: list[Path], started: str):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "tool_version": __version__,
        "input_digests": {str(p): _sha256(p) for p in inputs if p.is_file()},
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "outputs": [str(p) for p in outputs],
    }
    path = out_dir / f"manifest-{command}.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _load_config_file(args) -> dict:
    if not args.config:
        return {}
    path = Path(args.config)
    if not path.is_file():
        raise CliError(f"config file not found: {path}", EXIT_CONFIG)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise CliError(f"bad config file: {e}", EXIT_CONFIG)


def _resolve(args, file_cfg: dict, key: str, default=None):
    # flags win over the config file; the config file wins over defaults
    val = getattr(args, key, None)
    if val is not None:
        return val
    return file_cfg.get(key, default)


def _load_mnist_dir(mnist_dir, split: str):
    if mnist_dir is None:
        raise CliError("--mnist DIR is required for this command", EXIT_CONFIG)
    paths = datasets_io.find_mnist(mnist_dir)
    if paths is None:
        raise CliError(f"MNIST files not found under {mnist_dir}", EXIT_DATA)
    try:
        if split == "train":
            return datasets_io.load_mnist_idx(
                paths["train_images"], paths["train_labels"], "train"
            )
        return datasets_io.load_mnist_idx(
            paths["test_images"], paths["test_labels"], "test"
        )
    except (datasets_io.DatasetFormatError, OSError) as e:
        raise CliError(f"failed to load MNIST: {e}", EXIT_DATA)


def _parse_lr(text: str) -> tuple[float, float, float]:
    parts = [p for p in text.split(",") if p]
    if len(parts) != 3:
        raise CliError("--lr expects three comma-separated values", EXIT_CONFIG)
    return tuple(float(p) for p in parts)


def _parse_array(text: str) -> tuple[int, int]:
    try:
        r, c = text.lower().split("x")
        return int(r), int(c)
    except ValueError:
        raise CliError("--array expects RxC, e.g. 8x8", EXIT_CONFIG)


# ---------------------------------------------------------------------------
# commands

def cmd_train(args) -> int:
    file_cfg = _load_config_file(args)
    arch = _resolve(args, file_cfg, "arch")
    if arch not in model_core.ARCH_PRESETS:
        raise CliError(
            f"unknown arch {arch!r}; presets: {sorted(model_core.ARCH_PRESETS)}",
            EXIT_CONFIG,
        )
    out_dir = Path(_resolve(args, file_cfg, "out", "runs/train"))
    out_dir.mkdir(parents=True, exist_ok=True)
    started = _now()

    seed = int(_resolve(args, file_cfg, "seed", 0))
    lr = _resolve(args, file_cfg, "lr", "1e-3,5e-4,1e-4")
    cfg = trainer.TrainConfig(
        epochs=int(_resolve(args, file_cfg, "epochs", 50)),
        batch_size=int(_resolve(args, file_cfg, "batch", 256)),
        learning_rates=_parse_lr(lr) if isinstance(lr, str) else tuple(lr),
        seed=seed,
        saturate_in_training=not args.no_saturate,
    )

    mnist_dir = _resolve(args, file_cfg, "mnist")
    train_full = _load_mnist_dir(mnist_dir, "train")
    test_ds = _load_mnist_dir(mnist_dir, "test")
    train_ds, val_ds = datasets_io.split_train_val(train_full, 1 / 6, seed)

    try:
        shadow, report = trainer.train(
            arch, train_ds, val_ds, cfg, log=lambda s: print(s, flush=True)
        )
    except trainer.TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    report.final_test_acc = trainer.evaluate(shadow, test_ds)
    print(f"final test accuracy: {report.final_test_acc:.4f}")

    import torch

    ckpt_path = out_dir / f"{arch}-shadow.pt"
    torch.save(
        {"arch": arch, "saturate": cfg.saturate_in_training,
         "state_dict": shadow.state_dict()},
        ckpt_path,
    )
    report_json = out_dir / "train_report.json"
    report_json.write_text(json.dumps(report.to_dict(), indent=2))
    report_csv = out_dir / "train_report.csv"
    report_csv.write_text(report.to_csv())
    mnist_paths = list(datasets_io.find_mnist(mnist_dir).values())
    _write_manifest(out_dir, "train", vars(cfg) | {"arch": arch}, seed,
                    mnist_paths, [ckpt_path, report_json, report_csv], started)
    return 0


def _load_checkpoint(path: Path):
    import torch

    if not path.is_file():
        raise CliError(f"checkpoint not found: {path}", EXIT_CONFIG)
    ckpt = torch.load(path, weights_only=True)
    shadow = trainer.ShadowModel(ckpt["arch"], saturate=ckpt["saturate"])
    shadow.load_state_dict(ckpt["state_dict"])
    return shadow


def cmd_export(args) -> int:
    started = _now()
    ckpt_path = Path(args.checkpoint)
    shadow = _load_checkpoint(ckpt_path)
    out_dir = Path(args.out or "runs/export")
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        model = trainer.export(shadow)
        n = trainer.verify_export(shadow, model)
    except trainer.ExportError as e:
        print(f"equivalence: FAIL ({e})", file=sys.stderr)
        return EXIT_EQUIVALENCE
    print(f"equivalence: PASS ({n} connections)")
    model_path = out_dir / f"{shadow.arch_name}.bika"
    model_core.save_model(model, model_path)
    _write_manifest(out_dir, "export", {"checkpoint": str(ckpt_path)}, None,
                    [ckpt_path], [model_path], started)
    return 0


def cmd_eval(args) -> int:
    started = _now()
    model_path = Path(args.model)
    if not model_path.is_file():
        raise CliError(f"model not found: {model_path}", EXIT_CONFIG)
    try:
        model = model_core.load_model(model_path)
    except (model_core.ModelFormatError, model_core.ModelVersionError) as e:
        print(f"malformed model: {e}", file=sys.stderr)
        return EXIT_MALFORMED
    test_ds = _load_mnist_dir(args.mnist, "test")
    x = test_ds.images.astype(np.int16)
    if model.layers and isinstance(model.layers[0], model_core.ThresholdLayer) \
            and model.layers[0].kind == "linear":
        x = x.reshape(len(test_ds), -1)
    pred = model_core.classify(model, x)
    acc = float((pred == test_ds.labels).mean())
    print(f"accuracy: {acc:.4f}")
    out_dir = Path(args.out or "runs/eval")
    out_dir.mkdir(parents=True, exist_ok=True)
    result = out_dir / "eval.json"
    result.write_text(json.dumps({"model": str(model_path), "accuracy": acc}, indent=2))
    _write_manifest(out_dir, "eval", {"model": str(model_path)}, None,
                    [model_path], [result], started)
    return 0


def cmd_decompose(args) -> int:
    in_path = Path(args.infile)
    if not in_path.is_file():
        raise CliError(f"input not found: {in_path}", EXIT_CONFIG)
    try:
        doc = json.loads(in_path.read_text())
        f = threshold_math.PiecewiseConstantFn(
            tuple(doc["boundaries"]), tuple(doc["outputs"])
        )
    except (json.JSONDecodeError, KeyError, ValueError, TypeError) as e:
        raise CliError(f"bad input function: {e}", EXIT_DATA)
    try:
        report = threshold_math.decomposition_report(f)
    except threshold_math.DegenerateQuantizationError as e:
        raise CliError(str(e), EXIT_DATA)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def _sim_target(args):
    if args.model:
        path = Path(args.model)
        if not path.is_file():
            raise CliError(f"model not found: {path}", EXIT_CONFIG)
        try:
            return model_core.load_model(path), path
        except (model_core.ModelFormatError, model_core.ModelVersionError) as e:
            print(f"malformed model: {e}", file=sys.stderr)
            raise CliError(str(e), EXIT_MALFORMED)
    if args.workload:
        path = Path(args.workload)
        if not path.is_file():
            raise CliError(f"workload not found: {path}", EXIT_CONFIG)
        try:
            return accel_sim.workload_from_json(json.loads(path.read_text())), path
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            raise CliError(f"bad workload: {e}", EXIT_DATA)
    raise CliError("sim needs --model or --workload", EXIT_CONFIG)


def cmd_sim(args) -> int:
    started = _now()
    target, in_path = _sim_target(args)
    rows, cols = _parse_array(args.array)
    if isinstance(target, model_core.BikaModel):
        engine = accel_sim.PEKind.BIKA_CAC
        arch = target.arch_name
    else:
        engine = target.kind
        arch = target.arch_name
    if args.engine:
        engine = accel_sim.PEKind(args.engine)
    cfg = accel_sim.ArrayConfig(rows, cols, engine)
    x = accel_sim.random_input_for(engine, arch, args.seed, args.batch)
    try:
        rep = accel_sim.simulate_model(cfg, target, x)
    except accel_sim.SimulationError as e:
        raise CliError(str(e), EXIT_CONFIG)
    out_dir = Path(args.out or "runs/sim")
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = rep.to_dict() | {"engine": engine.value, "arch": arch, "seed": args.seed}
    (out_dir / "sim_report.json").write_text(json.dumps(doc, indent=2))
    print(json.dumps(doc, indent=2))
    _write_manifest(out_dir, "sim", {"array": args.array, "engine": engine.value},
                    args.seed, [in_path], [out_dir / "sim_report.json"], started)
    return 0


def cmd_compare(args) -> int:
    started = _now()
    if args.arch not in ("tfc", "sfc", "lfc"):
        raise CliError("compare supports --arch tfc|sfc|lfc", EXIT_CONFIG)
    rows, cols = _parse_array(args.array)
    table = accel_sim.compare_engines(args.arch, args.seed, rows, cols)
    out_dir = Path(args.out or "runs/compare")
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "compare.json"
    csv_path = out_dir / "compare.csv"
    json_path.write_text(json.dumps(table, indent=2))
    csv_path.write_text(accel_sim.comparison_csv(table))
    print(accel_sim.comparison_csv(table), end="")
    _write_manifest(out_dir, "compare", {"arch": args.arch, "array": args.array},
                    args.seed, [], [json_path, csv_path], started)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bika")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a shadow model")
    t.add_argument("--arch", choices=sorted(model_core.ARCH_PRESETS))
    t.add_argument("--mnist", help="directory with the four MNIST IDX files")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", help="three comma-separated stage learning rates")
    t.add_argument("--seed", type=int)
    t.add_argument("--no-saturate", action="store_true")
    t.add_argument("--config", help="JSON config file; flags win on conflict")
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("export", help="convert a shadow checkpoint to a .bika model")
    e.add_argument("checkpoint")
    e.add_argument("--out")
    e.set_defaults(func=cmd_export)

    v = sub.add_parser("eval", help="integer-inference test accuracy")
    v.add_argument("--model", required=True)
    v.add_argument("--mnist")
    v.add_argument("--out")
    v.set_defaults(func=cmd_eval)

    d = sub.add_parser("decompose", help="threshold decomposition of a JSON function")
    d.add_argument("--in", dest="infile", required=True)
    d.add_argument("--out")
    d.set_defaults(func=cmd_decompose)

    s = sub.add_parser("sim", help="simulate one model/workload on the array")
    s.add_argument("--model")
    s.add_argument("--workload")
    s.add_argument("--engine", choices=["bika", "bnn", "qnn"])
    s.add_argument("--array", default="8x8")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--batch", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sim)

    c = sub.add_parser("compare", help="run all three engines on one architecture")
    c.add_argument("--arch", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--array", default="8x8")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
