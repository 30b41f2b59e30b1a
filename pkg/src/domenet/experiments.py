"""Declarative experiment runner: config files, artifacts, comparisons.

Configs are flat ``key = value`` text files (``#`` comments, fractions
like ``8/255`` allowed for float keys). A run writes into its output
directory: ``checkpoint.dome``, ``history.csv``, ``attacks.csv`` (when
an attack is configured), ``embeddings.csv``, ``stats.json``, figure
SVGs, and the resolved ``config.cfg`` for provenance. Reruns with the
same seed reproduce ``stats.json`` byte for byte.
"""

import csv
import dataclasses
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import figures
from .activations import dome_forward, pdome_forward
from .analysis import compactness_report, distance_distributions, kde_likelihood, write_embedding_csv
from .attacks import (
    VARIANTS,
    AttackConfig,
    AttackReport,
    ConfigError,
    adaptive_eval,
    fgsm,
    pgd,
    write_attack_csv,
)
from .data import TASK_CLASSES, Dataset, load_image_dataset, make_blobs, relabel
from .network import (
    HEAD_LOSSES,
    DomeActivation,
    PdomeActivation,
    build_network,
    load_checkpoint,
    predict_from_output,
    save_checkpoint,
)
from .training import (
    FatConfig,
    OptimizerState,
    TrainConfig,
    dome_param_snapshot,
    evaluate,
    train,
    write_history_csv,
)

__all__ = [
    "ExperimentConfig",
    "parse_config_text",
    "load_config",
    "builtin_config_names",
    "run_experiment",
    "rerun_attack",
    "rerun_analysis",
    "compare",
    "COMPARE_COLUMNS",
]

IMAGE_DATASETS = ("mnist", "fashion-mnist")
ARCH_FOR_DATASET = {
    "blobs": ("mlp",),
    "mnist": ("lenet-2d", "smallcnn"),
    "fashion-mnist": ("lenet-2d", "smallcnn"),
}

COMPARE_COLUMNS = [
    "run", "benign_accuracy", "adv_training_loss", "adv_probs_as_logits",
    "adv_logit1", "adv_logit2", "adv_union", "jsd_bits", "bbox_diagonal",
]


@dataclass
class ExperimentConfig:
    dataset: str = "blobs"
    task: str = "full10"
    architecture: str = "mlp"
    head: str = "softmax"
    hidden_activation: str = "relu"
    loss: str = ""
    lr: float = 0.1
    weight_decay: float = 0.0005
    momentum: float = 0.9
    nesterov: bool = False
    epochs: int = 5
    batch_size: int = 128
    seed: int = 0
    train_limit: int = 0
    test_limit: int = 0
    fat: bool = False
    epsilon: float = 8.0 / 255.0
    alpha: float = 10.0 / 255.0
    attack: str = "none"
    attack_iterations: int = 20
    attack_restarts: int = 2
    attack_step: float = 2.0 / 255.0
    attack_variants: str = "training_loss"
    attack_limit: int = 1000
    blobs_classes: int = 3
    blobs_per_class: int = 300
    blobs_spread: float = 0.04
    head_bias: bool = False
    out_dir: str = "runs/experiment"
    data_dir: str = ""

    def n_classes(self):
        if self.dataset == "blobs":
            return self.blobs_classes
        return TASK_CLASSES[self.task]

    def variants(self):
        if self.attack_variants == "adaptive":
            return list(VARIANTS)
        return [v.strip() for v in self.attack_variants.split(",") if v.strip()]

    def validate(self):
        """Reject invalid combinations before any compute."""
        if self.dataset not in ARCH_FOR_DATASET:
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.dataset != "blobs" and self.task not in TASK_CLASSES:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.architecture not in ARCH_FOR_DATASET[self.dataset]:
            raise ConfigError(
                f"architecture {self.architecture!r} does not apply to dataset {self.dataset!r}"
            )
        if self.head not in HEAD_LOSSES:
            raise ConfigError(f"unknown head {self.head!r}")
        if self.loss and self.loss != HEAD_LOSSES[self.head]:
            raise ConfigError(f"head {self.head!r} trains with {HEAD_LOSSES[self.head]}, not {self.loss!r}")
        if self.head in ("sigmoid", "dome") and self.n_classes() != 2:
            raise ConfigError(f"head {self.head!r} is binary but the task has {self.n_classes()} classes")
        if self.hidden_activation not in ("relu", "pdome"):
            raise ConfigError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.attack not in ("none", "fgsm", "pgd"):
            raise ConfigError(f"unknown attack {self.attack!r}")
        if self.attack != "none":
            bad = [v for v in self.variants() if v not in VARIANTS]
            if bad:
                raise ConfigError(f"unknown attack variants {bad}")
            if self.head != "mdome" and self.variants() != ["training_loss"]:
                raise ConfigError("surrogate attack variants require the mdome head")
        return self


_BOOL_VALUES = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _coerce(name, raw, target_type):
    if target_type is bool:
        try:
            return _BOOL_VALUES[raw.lower()]
        except KeyError:
            raise ConfigError(f"{name}: expected a boolean, got {raw!r}") from None
    if target_type is int:
        return int(raw)
    if target_type is float:
        if "/" in raw:
            num, den = raw.split("/", 1)
            return float(num) / float(den)
        return float(raw)
    return raw


def parse_config_text(text):
    """Flat key = value lines; '#' starts a comment; blank lines ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def builtin_config_names():
    pkg = resources.files("domenet") / "configs"
    return sorted(p.name[: -len(".cfg")] for p in pkg.iterdir() if p.name.endswith(".cfg"))


def _config_text(path_or_name):
    p = Path(path_or_name)
    if p.exists():
        return p.read_text()
    builtin = resources.files("domenet") / "configs" / f"{path_or_name}.cfg"
    if builtin.is_file():
        return builtin.read_text()
    raise ConfigError(
        f"config {path_or_name!r} is neither a file nor a builtin "
        f"(builtins: {', '.join(builtin_config_names())})"
    )


def load_config(path_or_name, overrides=None):
    """Build a validated ExperimentConfig from a file or builtin name."""
    raw = parse_config_text(_config_text(path_or_name))
    raw.update(overrides or {})
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for key, value in raw.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, str):
            value = _coerce(key, value, type(fields[key].default))
        values[key] = value
    return ExperimentConfig(**values).validate()


def config_to_text(cfg):
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(ExperimentConfig)]
    return "\n".join(lines) + "\n"


def _load_data(cfg):
    if cfg.dataset == "blobs":
        x_train, y_train = make_blobs(cfg.blobs_classes, cfg.blobs_per_class,
                                      cfg.blobs_spread, seed=[cfg.seed, 0])
        x_test, y_test = make_blobs(cfg.blobs_classes, max(cfg.blobs_per_class // 3, 20),
                                    cfg.blobs_spread, seed=[cfg.seed, 1])
        return Dataset(x_train, y_train, x_test, y_test), (x_train.shape[1],)
    data = load_image_dataset(cfg.dataset, cfg.data_dir or None,
                              train_limit=cfg.train_limit, test_limit=cfg.test_limit)
    return Dataset(data.x_train, relabel(data.y_train, cfg.task),
                   data.x_test, relabel(data.y_test, cfg.task)), data.x_train.shape[1:]


def _attack_stage(net, data, cfg):
    """Run the configured attack over the leading test examples."""
    limit = cfg.attack_limit or len(data.x_test)
    x, y = data.x_test[:limit], data.y_test[:limit]
    acfg = AttackConfig(
        kind=cfg.attack, epsilon=cfg.epsilon, step=cfg.attack_step,
        iterations=cfg.attack_iterations, restarts=cfg.attack_restarts,
        seed=cfg.seed,
    )
    if cfg.attack == "fgsm":
        report = AttackReport(labels=y)
        for variant in cfg.variants():
            x_adv = fgsm(net, x, y, cfg.epsilon, loss_variant=variant)
            preds = net.predict(x_adv)
            report.success[variant] = preds != y
            report.predictions[variant] = preds
            report.linf[variant] = np.max(np.abs(x_adv - x).reshape(len(x), -1), axis=1)
        return report
    variants = cfg.variants()
    if net.head_index is not None and len(variants) > 1:
        return adaptive_eval(net, x, y, acfg, variants=variants)
    report = AttackReport(labels=y)
    for variant in variants:
        x_adv, success = pgd(net, x, y, dataclasses.replace(acfg, loss_variant=variant))
        report.success[variant] = success
        report.predictions[variant] = net.predict(x_adv)
        report.linf[variant] = np.max(np.abs(x_adv - x).reshape(len(x), -1), axis=1)
    return report


def _embeddings(net, x, batch_size=256):
    chunks = []
    outs = []
    for start in range(0, len(x), batch_size):
        out, emb, _ = net.forward(x[start : start + batch_size])
        chunks.append(emb)
        outs.append(out)
    return np.concatenate(chunks), predict_from_output(np.concatenate(outs))


def _analysis_stage(net, data, cfg, out):
    emb, preds = _embeddings(net, data.x_test)
    likelihood = kde_likelihood(emb, data.y_test)
    write_embedding_csv(emb, data.y_test, preds, likelihood, out / "embeddings.csv")
    report = compactness_report(emb, data.y_test, seed=cfg.seed)
    stats = distance_distributions(emb, data.y_test, seed=cfg.seed)
    title = f"{cfg.dataset}/{cfg.head} embedding space"
    figures.embedding_scatter(emb, data.y_test, likelihood, out / "embeddings.svg", title=title)
    figures.distance_histograms(stats.intra, stats.inter, stats.jsd_bits, out / "distances.svg")
    for layer in reversed(net.layers):
        if isinstance(layer, DomeActivation):
            figures.activation_curve(lambda v: dome_forward(v, layer.p), out / "activation.svg",
                                     title="learned output activation")
            break
        if isinstance(layer, PdomeActivation):
            figures.activation_curve(lambda v: pdome_forward(v, layer.p), out / "activation.svg",
                                     title="learned hidden activation")
            break
    return report


def _merge_stats(out, updates):
    path = out / "stats.json"
    stats = json.loads(path.read_text()) if path.exists() else {}
    stats.update(updates)
    path.write_text(json.dumps(stats, sort_keys=True, indent=2) + "\n")
    return stats


def run_experiment(cfg, verbose=False):
    """Train, attack, and analyze per the config; returns the artifact directory."""
    cfg.validate()
    say = print if verbose else (lambda *a, **k: None)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    data, input_shape = _load_data(cfg)
    net = build_network(cfg.architecture, cfg.head, cfg.n_classes(),
                        input_shape=input_shape, hidden_activation=cfg.hidden_activation,
                        seed=cfg.seed, head_bias=cfg.head_bias)
    opt = OptimizerState(lr_max=cfg.lr, momentum=cfg.momentum,
                         nesterov=cfg.nesterov, weight_decay=cfg.weight_decay)
    fat = FatConfig(epsilon=cfg.epsilon, alpha=cfg.alpha, epochs=cfg.epochs) if cfg.fat else None
    tcfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, seed=cfg.seed, fat=fat)

    say(f"training {cfg.architecture}/{cfg.head} on {cfg.dataset} "
        f"({len(data.x_train)} train / {len(data.x_test)} test, {cfg.epochs} epochs)")
    history = train(net, data, opt, tcfg)
    write_history_csv(history, out / "history.csv")
    save_checkpoint(net, out / "checkpoint.dome")
    say(f"  final test accuracy {history[-1]['test_acc']:.4f}")

    mu, sigma, pi = dome_param_snapshot(net)
    stats = {
        "dataset": cfg.dataset, "task": cfg.task, "architecture": cfg.architecture,
        "head": cfg.head, "hidden_activation": cfg.hidden_activation, "seed": cfg.seed,
        "fat": cfg.fat, "benign_accuracy": evaluate(net, data.x_test, data.y_test),
        "mu": mu, "sigma": sigma, "pi": pi,
        "attack": None, "adversarial_accuracy": None,
    }

    if cfg.attack != "none":
        say(f"attacking with {cfg.attack} ({cfg.attack_iterations} iters, "
            f"{cfg.attack_restarts} restarts, variants: {', '.join(cfg.variants())})")
        report = _attack_stage(net, data, cfg)
        write_attack_csv(report, out / "attacks.csv")
        stats["attack"] = {
            "kind": cfg.attack, "epsilon": cfg.epsilon, "step": cfg.attack_step,
            "iterations": cfg.attack_iterations, "restarts": cfg.attack_restarts,
            "examples": int(len(report.labels)),
        }
        stats["adversarial_accuracy"] = report.accuracy_summary()
        say(f"  adversarial accuracy {stats['adversarial_accuracy']}")

    say("analyzing embeddings")
    stats.update(_analysis_stage(net, data, cfg, out))
    _merge_stats(out, stats)
    (out / "config.cfg").write_text(config_to_text(cfg))
    say(f"artifacts in {out}")
    return out


def _load_run(run_dir):
    run = Path(run_dir)
    cfg_path = run / "config.cfg"
    ckpt = run / "checkpoint.dome"
    missing = [str(p) for p in (cfg_path, ckpt) if not p.exists()]
    if missing:
        raise FileNotFoundError(f"run {run} is missing artifacts: {', '.join(missing)}")
    cfg = load_config(cfg_path)
    return run, cfg, load_checkpoint(ckpt)


def rerun_attack(run_dir, verbose=False):
    """Re-execute the attack stage of a finished run from its saved artifacts."""
    run, cfg, net = _load_run(run_dir)
    if cfg.attack == "none":
        raise ConfigError(f"run {run} configures no attack")
    data, _ = _load_data(cfg)
    report = _attack_stage(net, data, cfg)
    write_attack_csv(report, run / "attacks.csv")
    stats = _merge_stats(run, {"adversarial_accuracy": report.accuracy_summary()})
    if verbose:
        print(json.dumps(stats["adversarial_accuracy"], sort_keys=True))
    return report


def rerun_analysis(run_dir, verbose=False):
    """Re-execute the embedding analysis stage of a finished run."""
    run, cfg, net = _load_run(run_dir)
    data, _ = _load_data(cfg)
    updates = _analysis_stage(net, data, cfg, run)
    updates["benign_accuracy"] = evaluate(net, data.x_test, data.y_test)
    stats = _merge_stats(run, updates)
    if verbose:
        print(f"jsd_bits = {stats['jsd_bits']}, diagonal = {stats['bbox_diagonal']}")
    return stats


def _compare_row(name, stats):
    adv = stats.get("adversarial_accuracy") or {}
    return {
        "run": name,
        "benign_accuracy": stats.get("benign_accuracy"),
        "adv_training_loss": adv.get("training_loss"),
        "adv_probs_as_logits": adv.get("probs_as_logits"),
        "adv_logit1": adv.get("logit1"),
        "adv_logit2": adv.get("logit2"),
        "adv_union": adv.get("union"),
        "jsd_bits": stats.get("jsd_bits"),
        "bbox_diagonal": stats.get("bbox_diagonal"),
    }


def compare(run_a, run_b, out_path=None):
    """Side-by-side metric table for two runs (plus a b-minus-a delta row)."""
    rows = []
    loaded = []
    for run in (run_a, run_b):
        path = Path(run) / "stats.json"
        if not path.exists():
            raise FileNotFoundError(f"missing artifacts: {path}")
        loaded.append(json.loads(path.read_text()))
    rows.append(_compare_row(str(run_a), loaded[0]))
    rows.append(_compare_row(str(run_b), loaded[1]))
    delta = {"run": "delta"}
    for col in COMPARE_COLUMNS[1:]:
        a, b = rows[0][col], rows[1][col]
        delta[col] = None if a is None or b is None else b - a
    rows.append(delta)
    if out_path:
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(COMPARE_COLUMNS)
            for row in rows:
                writer.writerow(["" if row[c] is None else row[c] for c in COMPARE_COLUMNS])
    return rows
