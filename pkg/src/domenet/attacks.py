"""FGSM and PGD evasion attacks with adaptive loss surrogates.

For networks with the multi-class DOME head, three surrogate losses are
available besides the training loss: the normalized head probabilities
fed directly to softmax cross-entropy (no log applied), and the two
surrogate logit maps (negative squared anchor distances, and anchor dot
products). ``adaptive_eval`` runs PGD under all of them and reports
per-variant and union adversarial accuracy.

Adversarial accuracy convention: the model's accuracy on attacked
versions of all evaluated examples, so an example the model already
misclassifies counts as an attack success.
"""

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .activations import (
    dome_logit2,
    mdome_kappa,
    mdome_normalize,
    mdome_normalize_backward,
)
from .network import loss, predict_from_output
from .tensor import contract

__all__ = [
    "ConfigError",
    "AttackConfig",
    "AttackReport",
    "VARIANTS",
    "fgsm",
    "pgd",
    "adaptive_eval",
    "write_attack_csv",
    "ATTACK_CSV_COLUMNS",
]

VARIANTS = ("training_loss", "probs_as_logits", "logit1", "logit2")
ATTACK_CSV_COLUMNS = ["example_id", "variant", "success", "final_prediction", "linf"]


class ConfigError(ValueError):
    """An attack or experiment configuration is invalid for the given model."""


@dataclass
class AttackConfig:
    kind: str = "pgd"
    epsilon: float = 8.0 / 255.0
    step: float = 2.0 / 255.0
    iterations: int = 50
    restarts: int = 10
    loss_variant: str = "training_loss"
    random_init: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("pgd", "fgsm"):
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        if self.loss_variant not in VARIANTS:
            raise ConfigError(f"unknown loss variant {self.loss_variant!r}")
        if self.iterations < 1 or self.restarts < 1:
            raise ConfigError("iterations and restarts must be >= 1")
        if self.epsilon <= 0.0 or self.step <= 0.0:
            raise ConfigError("epsilon and step must be > 0")


def _grad_and_pred(net, x, y, variant):
    """Input gradient of the surrogate loss, plus model predictions at x."""
    if variant == "training_loss":
        out, _, cache = net.forward(x)
        _, dout = loss(net.loss_kind, out, y)
        _, dx = net.backward(cache, dout)
        return dx, predict_from_output(out)
    head = net.head_index
    if head is None:
        raise ConfigError(f"loss variant {variant!r} requires an mdome head")
    p = net.layers[head].p
    if variant == "probs_as_logits":
        out, _, cache = net.forward(x)
        probs = mdome_normalize(out)
        _, dprobs = loss("ce_softmax", probs, y)
        dout = mdome_normalize_backward(out, dprobs)
        _, dx = net.backward(cache, dout)
        return dx, predict_from_output(out)
    # logit1/logit2 replace the head entirely; run up to its input
    hid, _, cache = net.forward(x, stop=head)
    kappa = mdome_kappa(hid, p)
    if variant == "logit1":
        _, dz = loss("ce_softmax", kappa, y)
        diff = hid[:, None, :] - p.mu * p.refs.vertices[None]
        dhid = np.einsum("bn,bnk->bk", dz, -2.0 * diff / (p.sigma * p.sigma))
    else:
        z = dome_logit2(hid, p)
        _, dz = loss("ce_softmax", z, y)
        dhid = contract(dz, p.mu * p.refs.vertices)
    _, dx = net.backward(cache, dhid)
    # the head scores are monotone in kappa, so argmax(kappa) is the model's choice
    return dx, np.argmax(kappa, axis=-1)


def fgsm(net, x, y, epsilon, loss_variant="training_loss"):
    """Single signed-gradient step of size epsilon, kept in the ball and box."""
    x = np.asarray(x, dtype=np.float64)
    g, _ = _grad_and_pred(net, x, y, loss_variant)
    x_adv = x + epsilon * np.sign(g)
    return np.clip(np.clip(x_adv, x - epsilon, x + epsilon), 0.0, 1.0)


def pgd(net, x, y, cfg):
    """Projected gradient descent with random restarts.

    Per restart: a uniform start inside the epsilon ball (box-projected),
    then ``iterations`` signed steps of size ``step``, re-projected onto
    ball and box each time. Success per example means the model's
    prediction differs from the label at any visited iterate; the first
    successful iterate is kept, otherwise the last one. Restart r draws
    from a generator seeded by (seed, r), so adding restarts only grows
    the success set.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    n = len(x)
    best = x.copy()
    success = np.zeros(n, dtype=bool)
    for r in range(cfg.restarts):
        rng = np.random.default_rng([cfg.seed, r])
        if cfg.random_init:
            delta = rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape)
        else:
            delta = np.zeros_like(x)
        delta = np.clip(x + delta, 0.0, 1.0) - x
        active = ~success
        if not active.any():
            break
        for _ in range(cfg.iterations):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            xa = x[idx] + delta[idx]
            g, preds = _grad_and_pred(net, xa, y[idx], cfg.loss_variant)
            hit = preds != y[idx]
            best[idx[hit]] = xa[hit]
            success[idx[hit]] = True
            active[idx[hit]] = False
            live = idx[~hit]
            if live.size == 0:
                break
            d = np.clip(delta[live] + cfg.step * np.sign(g[~hit]), -cfg.epsilon, cfg.epsilon)
            delta[live] = np.clip(x[live] + d, 0.0, 1.0) - x[live]
        idx = np.flatnonzero(active)
        if idx.size:
            xa = x[idx] + delta[idx]
            best[idx] = xa
            hit = net.predict(xa) != y[idx]
            success[idx[hit]] = True
            active[idx[hit]] = False
    return best, success


@dataclass
class AttackReport:
    """Per-variant and union attack outcomes over one example set."""

    labels: np.ndarray
    success: dict = field(default_factory=dict)  # variant -> bool array
    predictions: dict = field(default_factory=dict)
    linf: dict = field(default_factory=dict)

    @property
    def variants(self):
        return list(self.success)

    @property
    def union_success(self):
        out = np.zeros(len(self.labels), dtype=bool)
        for s in self.success.values():
            out |= s
        return out

    def adversarial_accuracy(self, variant=None):
        s = self.union_success if variant is None else self.success[variant]
        return 1.0 - float(np.mean(s))

    def accuracy_summary(self):
        out = {v: self.adversarial_accuracy(v) for v in self.success}
        out["union"] = self.adversarial_accuracy()
        return out


def adaptive_eval(net, x, y, cfg, variants=VARIANTS):
    """Run PGD under each surrogate loss and the training loss; union the successes."""
    if net.head_index is None:
        raise ConfigError("adaptive evaluation requires an mdome head")
    x = np.asarray(x, dtype=np.float64)
    report = AttackReport(labels=np.asarray(y))
    for variant in variants:
        x_adv, success = pgd(net, x, y, replace(cfg, loss_variant=variant))
        report.success[variant] = success
        report.predictions[variant] = net.predict(x_adv)
        report.linf[variant] = np.max(np.abs(x_adv - x).reshape(len(x), -1), axis=1)
    return report


def write_attack_csv(report, path):
    """Emit per-example attack outcomes as RFC-4180 CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(ATTACK_CSV_COLUMNS)
        for variant in report.success:
            preds = report.predictions[variant]
            linf = report.linf[variant]
            for i, s in enumerate(report.success[variant]):
                writer.writerow([i, variant, int(s), int(preds[i]), repr(float(linf[i]))])
