"""SGD training loop with a cyclic schedule and fast adversarial training.

Fast adversarial training perturbs each batch with a uniformly random
start inside the L-inf budget, takes one signed-gradient step of size
alpha, re-clamps to the budget and the [0, 1] image box, and runs the
optimizer step on the perturbed batch.

Determinism: the shuffle stream and the perturbation stream are separate
generators derived from the seed, so a zero budget reproduces standard
training bit for bit, and any fixed seed reproduces checkpoints bit for
bit.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .network import loss, predict_from_output

__all__ = [
    "OptimizerState",
    "FatConfig",
    "TrainConfig",
    "TrainingDiverged",
    "sgd_step",
    "cyclic_lr",
    "fat_batch",
    "fat_epoch",
    "run_epoch",
    "train",
    "evaluate",
    "dome_param_snapshot",
    "write_history_csv",
    "HISTORY_COLUMNS",
]

HISTORY_COLUMNS = ["epoch", "lr", "train_loss", "train_acc", "test_acc", "mu", "sigma", "pi"]


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class OptimizerState:
    lr_max: float
    momentum: float = 0.9
    nesterov: bool = False
    weight_decay: float = 0.0
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0.0:
            raise ValueError(f"weight decay must be >= 0, got {self.weight_decay}")


@dataclass
class FatConfig:
    epsilon: float = 8.0 / 255.0
    alpha: float = 10.0 / 255.0
    epochs: int = 5

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0 and self.epsilon != 0.0:
            raise ValueError(f"epsilon must be in (0, 1] (or 0 to disable), got {self.epsilon}")
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 128
    seed: int = 0
    fat: FatConfig = None
    shuffle: bool = True


def sgd_step(state, params, grads, lr):
    """One momentum-SGD update: v <- m v + g + wd p, then p <- p - lr step.

    With Nesterov the step is m v + g + wd p instead of v. Parameters
    flagged decay=False (the DOME-family mu/sigma/pi) skip weight decay
    and are clamped to their validity floor after the update.
    """
    keys = {p.key for p in params}
    extra = set(grads) - keys
    if extra:
        raise ValueError(f"gradients for unknown parameters: {sorted(extra)}")
    for p in params:
        if p.key not in grads:
            raise ValueError(f"missing gradient for parameter {p.key}")
        g = np.asarray(grads[p.key], dtype=np.float64)
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.value.shape} for {p.key}")
        if p.decay and state.weight_decay:
            g = g + state.weight_decay * p.value
        v = state.velocity.get(p.key)
        v = g.copy() if v is None else state.momentum * v + g
        state.velocity[p.key] = v
        step = state.momentum * v + g if state.nesterov else v
        p.value[...] = p.value - lr * step
        if p.clamp_min is not None:
            p.value[...] = np.maximum(p.value, p.clamp_min)


def cyclic_lr(step, total_steps, lr_max):
    """One-triangle schedule: linear 0 -> lr_max over the first half, back to 0."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    half = total_steps / 2.0
    if step <= half:
        return lr_max * (step / half) if half else lr_max
    return lr_max * ((total_steps - step) / (total_steps - half))


def fat_batch(net, xb, yb, fat, rng):
    """Produce the adversarially perturbed batch for one FAT step."""
    delta = rng.uniform(-fat.epsilon, fat.epsilon, size=xb.shape)
    out, _, cache = net.forward(xb + delta)
    _, dout = loss(net.loss_kind, out, yb)
    _, dx = net.backward(cache, dout)
    delta = np.clip(delta + fat.alpha * np.sign(dx), -fat.epsilon, fat.epsilon)
    return np.clip(xb + delta, 0.0, 1.0)


def run_epoch(net, x, y, opt, batch_size=128, fat=None, lr_fn=None,
              data_rng=None, attack_rng=None):
    """One pass over the data; returns (mean loss, accuracy on trained batches).

    ``lr_fn`` maps the 1-based step index within the epoch to a learning
    rate (constant opt.lr_max when omitted). With ``fat`` set, each batch
    is perturbed before the optimizer step.
    """
    order = data_rng.permutation(len(x)) if data_rng is not None else np.arange(len(x))
    lr_fn = lr_fn or (lambda i: opt.lr_max)
    total_loss = 0.0
    correct = 0
    n_batches = 0
    for i, start in enumerate(range(0, len(x), batch_size), start=1):
        idx = order[start : start + batch_size]
        xb, yb = x[idx], y[idx]
        if fat is not None:
            xb = fat_batch(net, xb, yb, fat, attack_rng)
        out, _, cache = net.forward(xb)
        value, dout = loss(net.loss_kind, out, yb)
        if not math.isfinite(value):
            raise TrainingDiverged(f"loss became {value} at batch {i}")
        grads, _ = net.backward(cache, dout)
        sgd_step(opt, net.parameters(), grads, lr_fn(i))
        net.mark_updated()
        total_loss += value
        correct += int(np.sum(predict_from_output(out) == yb))
        n_batches += 1
    return total_loss / n_batches, correct / len(x)


def fat_epoch(net, x, y, fat, opt, batch_size=128, lr_fn=None, data_rng=None, attack_rng=None):
    """One fast-adversarial-training epoch; see run_epoch."""
    if attack_rng is None:
        attack_rng = np.random.default_rng(0)
    return run_epoch(net, x, y, opt, batch_size=batch_size, fat=fat, lr_fn=lr_fn,
                     data_rng=data_rng, attack_rng=attack_rng)


def evaluate(net, x, y, batch_size=256):
    correct = 0
    for start in range(0, len(x), batch_size):
        correct += int(np.sum(net.predict(x[start : start + batch_size]) == y[start : start + batch_size]))
    return correct / len(x)


def dome_param_snapshot(net):
    """(mu, sigma, pi) floats of the last DOME-family layer, or Nones."""
    mu = sigma = pi = None
    for layer in net.layers:
        p = getattr(layer, "p", None)
        if p is not None and hasattr(p, "mu"):
            mu, sigma = float(p.mu), float(p.sigma)
            pi = float(p.pi) if hasattr(p, "pi") else None
    return mu, sigma, pi


def train(net, data, opt, cfg):
    """Train ``net`` on a Dataset; returns the per-epoch history rows.

    The learning rate follows one cyclic triangle across all epochs.
    Divergence (non-finite loss) raises TrainingDiverged. Two runs with
    the same seed produce bit-identical parameters.
    """
    x_train, y_train, x_test, y_test = data
    steps_per_epoch = math.ceil(len(x_train) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    data_rng = np.random.default_rng([cfg.seed, 0]) if cfg.shuffle else None
    attack_rng = np.random.default_rng([cfg.seed, 1])
    history = []
    for epoch in range(1, cfg.epochs + 1):
        base = (epoch - 1) * steps_per_epoch
        lr_fn = lambda i: cyclic_lr(base + i, total_steps, opt.lr_max)
        train_loss, train_acc = run_epoch(
            net, x_train, y_train, opt, batch_size=cfg.batch_size, fat=cfg.fat,
            lr_fn=lr_fn, data_rng=data_rng, attack_rng=attack_rng,
        )
        mu, sigma, pi = dome_param_snapshot(net)
        history.append({
            "epoch": epoch,
            "lr": cyclic_lr(base + steps_per_epoch, total_steps, opt.lr_max),
            "train_loss": train_loss,
            "train_acc": train_acc,
            "test_acc": evaluate(net, x_test, y_test),
            "mu": mu,
            "sigma": sigma,
            "pi": pi,
        })
    return history


def write_history_csv(history, path):
    """Emit the training history as RFC-4180 CSV (CRLF, quoted where needed)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow([
                "" if row.get(col) is None else repr(row[col]) if isinstance(row[col], float) else row[col]
                for col in HISTORY_COLUMNS
            ])
