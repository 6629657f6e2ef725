"""Reusable experiment protocols behind ``scripts/`` and the acceptance tests."""

from __future__ import annotations

import time
from dataclasses import asdict

import numpy as np

from .data.synthetic import make_split
from .engine.tensor import no_grad, precision
from .harness import TrainConfig, evaluate, train
from .model import ActionNet, Batch, ModelConfig

# dense output shape of every traced layer, in units of (B, T, N, G, C, Cl)
LAYER_SHAPES = {
    "input": lambda B, T, N, G, C, Cl: (B, T, N, 2 * C),
    "voxel": lambda B, T, N, G, C, Cl: (B, T, G, G, G, 2 * C),
    "conv1": lambda B, T, N, G, C, Cl: (B, T, G, G, G, 64),
    "pool1": lambda B, T, N, G, C, Cl: (B, T // 2, G // 2, G // 2, G // 2, 64),
    "conv2": lambda B, T, N, G, C, Cl: (B, T // 2, G // 2, G // 2, G // 2, 128),
    "mstcn": lambda B, T, N, G, C, Cl: (B, T // 2, G // 2, G // 2, G // 2, 128),
    "pool2": lambda B, T, N, G, C, Cl: (B, T // 4, G // 4, G // 4, G // 4, 128),
    "bottleneck1": lambda B, T, N, G, C, Cl: (B, T // 4, G // 4, G // 4, G // 4, 256),
    "bottleneck2": lambda B, T, N, G, C, Cl: (B, T // 4, G // 4, G // 4, G // 4, 1024),
    "global_pool": lambda B, T, N, G, C, Cl: (B, 1024),
    "head": lambda B, T, N, G, C, Cl: (B, Cl),
}


def shape_trace(resolution: int = 64, num_classes: int = 5, frames: int = 32, points: int = 512, seed: int = 0):
    """(observed, expected) layer shapes of the full-width network on one random person."""
    cfg = ModelConfig(resolution=resolution, num_classes=num_classes, frames=frames, num_points=points)
    rng = np.random.default_rng(seed)
    batch = Batch(rng.uniform(0, 1, size=(1, frames, points, 3)), [0])
    trace = []
    with no_grad():
        ActionNet(cfg, seed).eval()(batch, trace)
    expected = [(name, LAYER_SHAPES[name](1, frames, points, resolution, 3, num_classes)) for name, _ in trace]
    return trace, expected


def desk_learning(seed: int = 0, epochs: int = 30, batch_size: int = 16, time_budget: float = 20 * 60,
                  sizes=(200, 50, 100), bits: int = 32, log=print) -> dict:
    """Train the desk preset on fresh synthetic splits and report test accuracy.

    Training stops at the epoch limit, when the wall-clock budget is spent,
    or once validation accuracy is perfect (the kept checkpoint could not
    change after that).
    """
    t0 = time.perf_counter()
    train_set, val_set, test_set = (make_split(n, seed * 3 + k) for k, n in enumerate(sizes))
    gen_seconds = time.perf_counter() - t0
    with precision(bits):
        model = ActionNet(ModelConfig.desk(), seed)
        tcfg = TrainConfig(epochs=epochs, batch_size=batch_size, seed=seed, time_budget=time_budget,
                           target_val_accuracy=1.0)
        t1 = time.perf_counter()
        result = train(model, train_set, val_set, tcfg)
        train_seconds = time.perf_counter() - t1
        for h in result.history:
            log(f"epoch {h.epoch}: loss {h.train_loss:.4f} train {h.train_accuracy:.3f} "
                f"val {h.val_accuracy:.3f} ({h.seconds:.0f}s)")
        report = evaluate(model, test_set)
    return {"test_accuracy": report["accuracy"], "per_class_f1": report["per_class_f1"],
            "epochs_run": len(result.history), "best_epoch": result.best_epoch,
            "train_seconds": train_seconds, "generation_seconds": gen_seconds,
            "history": [asdict(h) for h in result.history]}
