"""Command-line entry point.

Verbs: ``train`` (full experiment from a config), ``attack`` and
``analyze`` (re-run one stage of a finished run directory), ``compare``
(side-by-side metrics of two runs), ``demo-blobs`` (fast end-to-end
demo on synthetic clusters), and ``list-configs``.
"""

import argparse
import json
import sys
from pathlib import Path

from .experiments import (
    builtin_config_names,
    compare,
    load_config,
    rerun_analysis,
    rerun_attack,
    run_experiment,
)

__all__ = ["main"]


def _overrides(args):
    out = {}
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    if getattr(args, "out", None):
        out["out_dir"] = args.out
    if getattr(args, "data", None):
        out["data_dir"] = args.data
    return out


def _add_common(p, config_required=True, config_default=None):
    p.add_argument("--config", required=config_required, default=config_default,
                   help="config file path or builtin config name")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--data", help="dataset root (else $DOMENET_DATA or ./data)")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="domenet",
        description="train, attack, and analyze compactness-inducing activation models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("train", help="run a full experiment from a config"))

    attack_p = sub.add_parser("attack", help="re-run the attack stage of a finished run")
    attack_p.add_argument("--out", required=True, help="run directory")
    attack_p.add_argument("--data", help="dataset root")

    analyze_p = sub.add_parser("analyze", help="re-run the analysis stage of a finished run")
    analyze_p.add_argument("--out", required=True, help="run directory")
    analyze_p.add_argument("--data", help="dataset root")

    compare_p = sub.add_parser("compare", help="tabulate two runs side by side")
    compare_p.add_argument("run_a")
    compare_p.add_argument("run_b")
    compare_p.add_argument("--out", help="write the comparison CSV here")

    _add_common(sub.add_parser("demo-blobs", help="fast synthetic-data demo"),
                config_required=False, config_default="demo-blobs")

    sub.add_parser("list-configs", help="list builtin config names")

    args = parser.parse_args(argv)

    if args.command == "list-configs":
        for name in builtin_config_names():
            print(name)
        return 0

    if args.command == "compare":
        out_path = args.out or "comparison.csv"
        rows = compare(args.run_a, args.run_b, out_path=out_path)
        for row in rows:
            print(json.dumps(row, sort_keys=True))
        print(f"wrote {out_path}")
        return 0

    if args.command in ("train", "demo-blobs"):
        cfg = load_config(args.config, overrides=_overrides(args))
        run_dir = run_experiment(cfg, verbose=True)
        stats = json.loads((Path(run_dir) / "stats.json").read_text())
        print(f"benign accuracy {stats['benign_accuracy']:.4f}, "
              f"jsd {stats['jsd_bits']:.4f} bits, diagonal {stats['bbox_diagonal']:.4f}")
        return 0

    if args.command == "attack":
        report = rerun_attack(args.out, verbose=True)
        print(f"union adversarial accuracy {report.adversarial_accuracy():.4f}")
        return 0

    if args.command == "analyze":
        rerun_analysis(args.out, verbose=True)
        return 0

    parser.error(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
