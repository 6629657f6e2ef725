"""Command line entry point: ``spconvot <command> ...``.

Exit status is 0 on success and 2 when inputs fail validation.
"""

from __future__ import annotations

import json
import logging
import re
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np
from threadpoolctl import threadpool_limits

from .data.io import FormatError, read_depth, read_hpcs, read_label_image, read_split, write_dataset, write_hpcs
from .data.sequence import ActionSample
from .data.synthetic import CLASSES, make_split
from .engine.checkpoint import CheckpointError
from .engine.tensor import set_precision
from .geometry import CameraIntrinsics
from .harness import TrainConfig, benchmark, evaluate, load_model, predict_logits, train
from .model import ActionNet, ModelConfig, ensemble_predict, search_lambda
from .preprocess import FrameInput, PreprocessConfig, build_sequences
from .sparse.layers import ConfigError

VALIDATION_ERRORS = (ConfigError, FormatError, CheckpointError, ValueError, FileNotFoundError)


def _load_config(path: str | None, preset: str) -> ModelConfig:
    if path:
        return ModelConfig.load(path)
    return ModelConfig.desk() if preset == "desk" else ModelConfig()


def common(fn):
    fn = click.option("--threads", type=int, default=1, show_default=True, help="BLAS thread count")(fn)
    fn = click.option("--precision", type=click.Choice(["32", "64"]), default="32", show_default=True)(fn)
    fn = click.option("--seed", type=int, default=0, show_default=True)(fn)
    return fn


def _setup(precision: str, threads: int) -> None:
    set_precision(int(precision))
    threadpool_limits(threads)


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose: bool):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")


@main.command()
@click.argument("out", type=click.Path(file_okay=False))
@click.option("--train", "n_train", type=int, default=200, show_default=True)
@click.option("--val", "n_val", type=int, default=50, show_default=True)
@click.option("--test", "n_test", type=int, default=100, show_default=True)
@click.option("--points", type=int, default=512, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def synth(out, n_train, n_val, n_test, points, seed):
    """Generate the synthetic five-class dataset as HPCS files."""
    splits = {name: make_split(n, seed * 3 + k, points)
              for k, (name, n) in enumerate((("train", n_train), ("val", n_val), ("test", n_test)))}
    write_dataset(out, splits)
    click.echo(f"wrote {sum(map(len, splits.values()))} sequences to {out}")


def _frame_files(folder: Path, prefix: str) -> dict[int, Path]:
    found = {}
    for p in folder.iterdir():
        m = re.fullmatch(rf"{prefix}_(\d+)\.(png|dmap)", p.name)
        if m:
            found[int(m.group(1))] = p
    return found


@main.command()
@click.argument("frames", type=click.Path(exists=True, file_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--f", "focal", type=float, required=True, help="focal length in pixels")
@click.option("--cx", type=float, required=True)
@click.option("--cy", type=float, required=True)
@click.option("--prune", type=click.Choice(["metric", "percentile", "none"]), default="metric", show_default=True)
@click.option("--points", type=int, default=512, show_default=True)
@click.option("--normals", is_flag=True)
@click.option("--windows", type=int, default=1, show_default=True)
def preprocess(frames, out, focal, cx, cy, prune, points, normals, windows):
    """Turn depth_NNNN + inst_NNNN (+ parts_NNNN, ir_NNNN) images into one HPCS file."""
    folder = Path(frames)
    depth, inst = _frame_files(folder, "depth"), _frame_files(folder, "inst")
    parts, ir = _frame_files(folder, "parts"), _frame_files(folder, "ir")
    ids = sorted(set(depth) & set(inst))
    if not ids:
        raise click.UsageError("no matching depth_NNNN / inst_NNNN pairs")
    stream = (FrameInput(read_depth(depth[i]), read_label_image(inst[i]),
                         read_label_image(parts[i]) if i in parts else None,
                         read_label_image(ir[i]).astype(float) if i in ir else None) for i in ids)
    cfg = PreprocessConfig(prune=prune, num_points=points, normals=normals, windows=windows)
    people = build_sequences(stream, CameraIntrinsics(focal, cx, cy), cfg)
    if not people:
        raise ValueError("no person survived preprocessing")
    write_hpcs(out, people)
    click.echo(f"{len(people)} people, {[len(p) for p in people]} frames -> {out}")


@main.command("train")
@click.argument("data", type=click.Path(exists=True, file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--preset", type=click.Choice(["full", "desk"]), default="desk", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default="model.spht", show_default=True)
@click.option("--epochs", type=int, default=30, show_default=True)
@click.option("--batch-size", type=int, default=16, show_default=True)
@click.option("--time-budget", type=float, default=None, help="seconds")
@click.option("--metrics", type=click.Path(dir_okay=False), default=None, help="JSON log of per-epoch metrics")
@common
def train_cmd(data, config_path, preset, out, epochs, batch_size, time_budget, metrics, seed, precision, threads):
    """Train on DATA/train, select on DATA/val."""
    _setup(precision, threads)
    cfg = _load_config(config_path, preset)
    model = ActionNet(cfg, seed)
    tcfg = TrainConfig(epochs=epochs, batch_size=batch_size, seed=seed, time_budget=time_budget)
    result = train(model, read_split(data, "train"), read_split(data, "val"), tcfg, out)
    Path(out).with_suffix(".cfg").write_text(cfg.to_text())
    log = {"train": asdict(tcfg), "history": [asdict(h) for h in result.history],
           "best_epoch": result.best_epoch, "best_val_accuracy": result.best_val_accuracy}
    if metrics:
        Path(metrics).write_text(json.dumps(log, indent=2))
    click.echo(f"best val accuracy {result.best_val_accuracy:.3f} at epoch {result.best_epoch}; saved {out}")


def _model_from(checkpoint: str, config_path: str | None, preset: str) -> ActionNet:
    cfg_file = Path(checkpoint).with_suffix(".cfg")
    if config_path is None and cfg_file.exists():
        config_path = str(cfg_file)
    return load_model(_load_config(config_path, preset), checkpoint)


@main.command("eval")
@click.argument("data", type=click.Path(exists=True, file_okay=False))
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--split", default="test", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--preset", type=click.Choice(["full", "desk"]), default="desk", show_default=True)
@common
def eval_cmd(data, checkpoint, split, config_path, preset, seed, precision, threads):
    """Top-1 accuracy and per-class F1 on one split."""
    _setup(precision, threads)
    model = _model_from(checkpoint, config_path, preset)
    click.echo(json.dumps(evaluate(model, read_split(data, split)), indent=2))


@main.command()
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.argument("files", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--preset", type=click.Choice(["full", "desk"]), default="desk", show_default=True)
@common
def infer(checkpoint, files, config_path, preset, seed, precision, threads):
    """Predicted class of each HPCS file."""
    _setup(precision, threads)
    model = _model_from(checkpoint, config_path, preset)
    samples = [ActionSample(read_hpcs(f), -1) for f in files]
    logits = predict_logits(model, samples)
    names = CLASSES if model.cfg.num_classes == len(CLASSES) else None
    for f, row in zip(files, logits):
        k = int(np.argmax(row))
        click.echo(f"{f}\t{k}\t{names[k] if names else ''}".rstrip())


@main.command()
@click.argument("data", type=click.Path(exists=True, file_okay=False))
@click.argument("checkpoint_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("checkpoint_b", type=click.Path(exists=True, dir_okay=False))
@click.option("--step", type=float, default=0.05, show_default=True)
@common
def ensemble(data, checkpoint_a, checkpoint_b, step, seed, precision, threads):
    """Pick convex weights on DATA/val, then report DATA/test accuracy."""
    _setup(precision, threads)
    a, b = _model_from(checkpoint_a, None, "desk"), _model_from(checkpoint_b, None, "desk")
    val, test = read_split(data, "val"), read_split(data, "test")
    lam = search_lambda(predict_logits(a, val), predict_logits(b, val), [s.label for s in val], step)
    pred = ensemble_predict(predict_logits(a, test), predict_logits(b, test), *lam)
    acc = float(np.mean(pred == np.array([s.label for s in test])))
    click.echo(json.dumps({"lambda": lam, "test_accuracy": acc}))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--preset", type=click.Choice(["full", "desk"]), default="desk", show_default=True)
@click.option("--points", default="512,1024,2048", show_default=True)
@click.option("--persons", default="1,2", show_default=True)
@click.option("--repeats", type=int, default=3, show_default=True)
@common
def bench(config_path, preset, points, persons, repeats, seed, precision, threads):
    """Forward-only sequences per second, batch size 1, geometry only."""
    _setup(precision, threads)
    cfg = _load_config(config_path, preset)
    rows = benchmark(cfg, tuple(int(v) for v in points.split(",")), tuple(int(v) for v in persons.split(",")),
                     repeats, seed=seed)
    click.echo("points\tpersons\tseq/s")
    for r in rows:
        click.echo(f"{r['points']}\t{r['persons']}\t{r['seq_per_s']:.2f}")


def run(argv=None) -> int:
    try:
        main.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        return 1
    except click.ClickException as exc:
        exc.show()
        return 2
    except VALIDATION_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(run())
