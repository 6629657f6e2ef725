"""Frame sampling, batching, training, evaluation and throughput measurement."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data.sequence import ActionSample, PersonSequence
from .engine import functional as F
from .engine.checkpoint import load_checkpoint, save_checkpoint
from .engine.optim import AdamW, lr_schedule
from .engine.tensor import Tape, get_dtype, no_grad
from .geometry import augment, minmax_normalize_sequence
from .model import ActionNet, Batch, ModelConfig

log = logging.getLogger(__name__)


def sample_frames(total: int, target: int = 32, mode: str = "eval", rng: np.random.Generator | None = None) -> np.ndarray:
    """Indices of ``target`` frames out of ``total``.

    The clip is cut into ``target`` equal intervals; training draws one
    frame uniformly from each, evaluation takes each interval's midpoint.
    Shorter clips therefore repeat frames.
    """
    if total < 1 or target < 1:
        raise ValueError(f"need total and target >= 1, got {total}, {target}")
    edges = np.arange(target + 1) * (total / target)
    lo, hi = edges[:-1], edges[1:]
    if mode == "train":
        if rng is None:
            raise ValueError("training-mode sampling needs an rng")
        pos = lo + rng.random(target) * (hi - lo)
    elif mode == "eval":
        pos = (lo + hi) / 2
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return np.minimum(np.floor(pos).astype(np.int64), total - 1)


def fix_point_count(frame: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Row indices giving exactly ``n`` points: a random subset, or all rows plus random repeats."""
    m = frame.shape[0]
    if m == 0:
        raise ValueError("cannot sample points from an empty frame")
    if m >= n:
        return np.sort(rng.choice(m, n, replace=False)) if m > n else np.arange(n)
    return np.concatenate([np.arange(m), rng.integers(0, m, n - m)])


def prepare_person(person: PersonSequence, cfg: ModelConfig, mode: str, rng: np.random.Generator):
    """(T, N, C) points in the unit cube and (T, N) part labels (or None)."""
    person = person.select(sample_frames(len(person), cfg.frames, mode, rng))
    if mode == "train":
        person = augment(person, rng)
    person = minmax_normalize_sequence(person)
    pts = np.empty((cfg.frames, cfg.num_points, person.num_channels))
    parts = np.zeros((cfg.frames, cfg.num_points), dtype=np.int64) if person.parts is not None else None
    for t, f in enumerate(person.frames):
        rows = fix_point_count(f, cfg.num_points, rng)
        pts[t] = f[rows]
        if parts is not None:
            parts[t] = person.parts[t][rows]
    return pts[..., : cfg.in_channels], parts


def collate(samples: list[ActionSample], cfg: ModelConfig, mode: str, rng: np.random.Generator) -> Batch:
    pts, parts, owner = [], [], []
    for s_idx, sample in enumerate(samples):
        for person in sample.people:
            p, lab = prepare_person(person, cfg, mode, rng)
            pts.append(p)
            parts.append(lab)
            owner.append(s_idx)
    part_arr = np.stack(parts) if cfg.use_parts else None
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return Batch(np.stack(pts), np.array(owner), part_arr, labels, len(samples))


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    lr_min: float = 1e-8
    weight_decay: float = 1e-5
    seed: int = 0
    time_budget: float | None = None  # seconds; stop after the epoch that crosses it
    target_val_accuracy: float | None = None  # stop early once validation reaches it


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    train_accuracy: float
    val_accuracy: float
    seconds: float


@dataclass
class TrainResult:
    history: list[EpochLog] = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float = -1.0
    checkpoint: Path | None = None


class NonFiniteLoss(RuntimeError):
    pass


def classification_report(pred, labels, num_classes: int) -> dict:
    """Top-1 accuracy, per-class F1 and their macro mean."""
    pred, labels = np.asarray(pred), np.asarray(labels)
    f1 = []
    for c in range(num_classes):
        tp = int(np.sum((pred == c) & (labels == c)))
        fp = int(np.sum((pred == c) & (labels != c)))
        fn = int(np.sum((pred != c) & (labels == c)))
        f1.append(2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0)
    acc = float(np.mean(pred == labels)) if labels.size else 0.0
    return {"accuracy": acc, "per_class_f1": f1, "macro_f1": float(np.mean(f1))}


def predict_logits(model: ActionNet, samples: list[ActionSample], batch_size: int = 16) -> np.ndarray:
    """Eval-mode logits, (len(samples), classes)."""
    model.eval()
    rng = np.random.default_rng(0)  # only used if a frame needs point repeats
    out = []
    with no_grad():
        for i in range(0, len(samples), batch_size):
            batch = collate(samples[i: i + batch_size], model.cfg, "eval", rng)
            out.append(model(batch).data)
    return np.concatenate(out) if out else np.zeros((0, model.cfg.num_classes))


def evaluate(model: ActionNet, samples: list[ActionSample], batch_size: int = 16) -> dict:
    logits = predict_logits(model, samples, batch_size)
    labels = np.array([s.label for s in samples])
    return classification_report(logits.argmax(axis=1), labels, model.cfg.num_classes)


def train(model: ActionNet, train_set: list[ActionSample], val_set: list[ActionSample], tcfg: TrainConfig,
          checkpoint: str | Path | None = None) -> TrainResult:
    """AdamW with a linear learning-rate decay; keeps the best validation checkpoint."""
    rng = np.random.default_rng(tcfg.seed)
    opt = AdamW(model.parameters(), lr=tcfg.lr, weight_decay=tcfg.weight_decay)
    result = TrainResult(checkpoint=Path(checkpoint) if checkpoint else None)
    best_state = None
    start = time.perf_counter()
    for epoch in range(tcfg.epochs):
        t0 = time.perf_counter()
        lr = lr_schedule(epoch, tcfg.epochs, tcfg.lr, tcfg.lr_min)
        opt.set_lr(lr)
        model.train()
        order = rng.permutation(len(train_set))
        losses, correct = [], 0
        for i in range(0, len(order), tcfg.batch_size):
            chunk = [train_set[j] for j in order[i: i + tcfg.batch_size]]
            batch = collate(chunk, model.cfg, "train", rng)
            with Tape() as tape:
                logits = model(batch)
                loss = F.cross_entropy(logits, batch.labels)
                if not math.isfinite(float(loss.data)):
                    raise NonFiniteLoss(f"loss {float(loss.data)} at epoch {epoch}, step {i // tcfg.batch_size}; "
                                        f"logit range [{logits.data.min()}, {logits.data.max()}]")
                opt.zero_grad()
                tape.backward(loss)
            opt.step()
            losses.append(float(loss.data) * len(chunk))
            correct += int(np.sum(logits.data.argmax(axis=1) == batch.labels))
        val = evaluate(model, val_set, tcfg.batch_size) if val_set else {"accuracy": 0.0}
        entry = EpochLog(epoch, lr, sum(losses) / len(train_set), correct / len(train_set), val["accuracy"],
                         time.perf_counter() - t0)
        result.history.append(entry)
        log.info("epoch %d lr %.2e loss %.4f train %.3f val %.3f (%.1fs)", epoch, lr, entry.train_loss,
                 entry.train_accuracy, entry.val_accuracy, entry.seconds)
        if entry.val_accuracy > result.best_val_accuracy:
            result.best_val_accuracy, result.best_epoch = entry.val_accuracy, epoch
            best_state = model.state_dict()
            if result.checkpoint is not None:
                save_checkpoint(result.checkpoint, best_state)
        if tcfg.target_val_accuracy is not None and entry.val_accuracy >= tcfg.target_val_accuracy:
            break
        if tcfg.time_budget is not None and time.perf_counter() - start >= tcfg.time_budget:
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    return result


def load_model(cfg: ModelConfig, path) -> ActionNet:
    model = ActionNet(cfg)
    model.load_state_dict(load_checkpoint(path))
    return model.eval()


def synthetic_benchmark_batch(cfg: ModelConfig, points: int, persons: int, seed: int = 0) -> Batch:
    """One geometry-only sequence of ``persons`` random blobs with ``points`` points per frame."""
    rng = np.random.default_rng(seed)
    pts = rng.normal(0.5, 0.15, size=(persons, cfg.frames, points, 3)).clip(0, 1)
    return Batch(pts, np.zeros(persons, dtype=np.int64))


def benchmark(cfg: ModelConfig, points=(512, 1024, 2048), persons=(1, 2), repeats: int = 3,
              warmup: int = 1, seed: int = 0) -> list[dict]:
    """Forward-only sequences per second at batch size 1, best of ``repeats``."""
    rows = []
    for n in points:
        for p in persons:
            c = ModelConfig(**{**asdict(cfg), "num_points": n, "in_channels": 3, "use_parts": False})
            model = ActionNet(c, seed).eval()
            batch = synthetic_benchmark_batch(c, n, p, seed)
            times = []
            with no_grad():
                for r in range(warmup + repeats):
                    t0 = time.perf_counter()
                    model(batch)
                    if r >= warmup:
                        times.append(time.perf_counter() - t0)
            rows.append({"points": n, "persons": p, "seq_per_s": 1.0 / min(times),
                         "spread": (max(times) - min(times)) / min(times), "dtype": str(get_dtype())})
    return rows
