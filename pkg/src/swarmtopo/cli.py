"""Command-line entry point: ``swarmtopo <subcommand> [options]``.

Every option can also come from a JSON file passed with ``--config``; flags
given on the command line win over the file. The dataset root defaults to
``$SWARMTOPO_DATA``.

Exit codes: 0 success, 1 partial failure (some sequences or checks failed),
2 invalid invocation or unmet precondition.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline as pl
from . import simulate as sim
from .model import ModelConfig, TrainConfig, TrainingDiverged
from .store import StoreError

log = logging.getLogger("swarmtopo")

DEFAULTS = {
    "generate": {"model": "dorsogna1k", "n": 500, "points": 200, "steps": 1000, "dt": 0.01, "stride": 10,
                 "window": None, "random_window": None, "seed": 0, "beta": 0.5, "n_splits": 5,
                 "train_fraction": 0.8, "rates": [0.2, 0.5, 0.8]},
    "precompute": {"max_dim": 1, "workers": 1, "threshold": None},
    "vectorize-fit": {"splits": None, "seed": 0, "n_elements": 20, "sample_size": 50_000},
    "train": {"variant": "v1", "splits": None, "rates": None, "epochs": 150, "lr": 1e-3,
              "weight_decay": 1e-3, "batch_size": 64, "lambda_reg": 1.0, "seed": 0, "model": {}},
    "evaluate": {"variants": ["v1", "baseline"], "crocker": False, "splits": None, "on": "test",
                 "allow_train_eval": False},
    "stability-suite": {"split": 0, "trials": 10_000, "pairs": 1000, "chain_pairs": 200, "seed": 0},
}


class UsageError(Exception):
    pass


def _ints(text):
    return [int(x) for x in text.split(",") if x]


def _floats(text):
    return [float(x) for x in text.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    p = argparse.ArgumentParser(prog="swarmtopo", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="progress logging")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, help_text, data=True):
        c = sub.add_parser(name, help=help_text, argument_default=S)
        c.add_argument("--config", help="JSON file with option values")
        if data:
            c.add_argument("--data", help="dataset root (default: $SWARMTOPO_DATA)")
        return c

    g = command("generate", "simulate a dataset of point-cloud sequences", data=False)
    g.add_argument("--model", choices=sim.MODELS)
    g.add_argument("--n", type=int, help="number of sequences")
    g.add_argument("--points", type=int, help="initial number of points")
    g.add_argument("--steps", type=int)
    g.add_argument("--dt", type=float)
    g.add_argument("--stride", type=int, help="steps between observations")
    g.add_argument("--window", type=_ints, help="START,LENGTH sub-window of the run")
    g.add_argument("--random-window", type=int, metavar="LENGTH", help="random sub-window per sequence")
    g.add_argument("--seed", type=int)
    g.add_argument("--beta", type=float, help="birth/death acceptance level")
    g.add_argument("--out", help="output root (default: $SWARMTOPO_DATA)")

    c = command("precompute", "persistence diagrams of every observation")
    c.add_argument("--max-dim", type=int, choices=(0, 1, 2))
    c.add_argument("--workers", type=int)
    c.add_argument("--threshold", type=float, help="Rips threshold (default: enclosing radius)")

    v = command("vectorize-fit", "fit structure elements per split and vectorize all diagrams")
    v.add_argument("--splits", type=_ints)
    v.add_argument("--seed", type=int)
    v.add_argument("--n-elements", type=int)
    v.add_argument("--sample-size", type=int)

    t = command("train", "train the dynamic model or the static baseline")
    t.add_argument("--variant", choices=pl.VARIANTS)
    t.add_argument("--splits", type=_ints)
    t.add_argument("--rates", type=_floats)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--weight-decay", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lambda-reg", type=float)
    t.add_argument("--seed", type=int)

    e = command("evaluate", "score stored checkpoints and write reports")
    e.add_argument("--variants", type=lambda s: s.split(","))
    e.add_argument("--crocker", action="store_true", help="also fit and score the crocker baseline")
    e.add_argument("--splits", type=_ints)
    e.add_argument("--on", choices=("test", "train"))
    e.add_argument("--allow-train-eval", action="store_true")

    s = command("stability-suite", "empirical stability checks on one split")
    s.add_argument("--split", type=int)
    s.add_argument("--trials", type=int)
    s.add_argument("--pairs", type=int)
    s.add_argument("--chain-pairs", type=int)
    s.add_argument("--seed", type=int)
    return p


def resolve(command: str, given: dict) -> dict:
    """Defaults, then the ``--config`` file, then explicit flags."""
    opts = dict(DEFAULTS[command])
    path = given.pop("config", None)
    if path:
        try:
            with open(path) as fh:
                file_opts = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}")
        if not isinstance(file_opts, dict):
            raise UsageError(f"config {path} must hold a JSON object")
        file_opts = {k.replace("-", "_"): val for k, val in file_opts.items()}
        unknown = set(file_opts) - set(opts) - {"data", "out"}
        if unknown:
            raise UsageError(f"unknown option(s) in {path}: {', '.join(sorted(unknown))}")
        opts.update(file_opts)
    opts.update(given)
    return opts


def run(command: str, o: dict) -> int:
    say = log.info
    if command == "generate":
        out = pl.data_root(o.get("out") or o.get("data"))
        if o["window"] is not None and len(o["window"]) != 2:
            raise UsageError("--window takes START,LENGTH")
        m = pl.cmd_generate(out, o["model"], o["n"], n_points=o["points"], steps=o["steps"], dt=o["dt"],
                            stride=o["stride"], window=o["window"], random_window=o["random_window"],
                            seed=o["seed"], beta=o["beta"], n_splits=o["n_splits"],
                            train_fraction=o["train_fraction"], rates=o["rates"], log=say)
        print(f"wrote {m['n_sequences']} {m['model']} sequences to {out}")
        return 0
    root = pl.data_root(o.get("data"))
    if command == "precompute":
        res = pl.cmd_precompute(root, o["max_dim"], workers=o["workers"], threshold=o["threshold"], log=say)
        print(f"computed {res['computed']}, skipped {res['skipped']}, failed {len(res['failed'])}")
        for i, err in sorted(res["failed"].items()):
            print(f"  sequence {i}: {err}", file=sys.stderr)
        return 1 if res["failed"] else 0
    if command == "vectorize-fit":
        fps = pl.cmd_vectorize_fit(root, o["splits"], seed=o["seed"], n_elements=o["n_elements"],
                                   sample_size=o["sample_size"], log=say)
        for s, fp in fps.items():
            print(f"split {s}: {fp}")
        return 0
    if command == "train":
        tc = TrainConfig(epochs=o["epochs"], lr=o["lr"], weight_decay=o["weight_decay"],
                         batch_size=o["batch_size"], lambda_reg=o["lambda_reg"], seed=o["seed"])
        overrides = dict(o["model"])
        bad = set(overrides) - set(ModelConfig.__dataclass_fields__)
        if bad:
            raise UsageError(f"unknown model option(s): {', '.join(sorted(bad))}")
        try:
            scores = pl.cmd_train(root, o["variant"], o["splits"], o["rates"], model_overrides=overrides,
                                  train_config=tc, log=say)
        except TrainingDiverged as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        for s in scores:
            print(f"{s.model} split {s.split} rate {s.rate:.2f}: VE {s.ve:.4f} SMAPE {s.smape:.4f}")
        return 0
    if command == "evaluate":
        ds_scores = pl.cmd_evaluate(root, o["variants"], crocker=o["crocker"], splits=o["splits"], on=o["on"],
                                    allow_train_eval=o["allow_train_eval"], log=say)
        print((root / "reports" / "summary.txt").read_text(), end="")
        return 0 if ds_scores else 1
    if command == "stability-suite":
        rep = pl.cmd_stability_suite(root, o["split"], trials=o["trials"], pairs=o["pairs"],
                                     chain_pairs=o["chain_pairs"], seed=o["seed"], log=say)
        for k, r in rep["dims"].items():
            print(f"H{k}: K={r['K']:.4g} held-out max ratio {r['heldout_max_ratio']:.4g} "
                  f"violations {r['violations']}/{r['pairs']}")
        for k, r in rep["chain"].items():
            print(f"H{k} vs point clouds: max ratio {r['max_ratio']:.4g} violations {r['violations']}/{r['pairs']}")
        return 1 if rep["violations"] else 0
    raise UsageError(f"unknown command {command}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    given = vars(args)
    command = given.pop("command")
    logging.basicConfig(level=logging.INFO if given.pop("verbose") else logging.WARNING,
                        format="%(message)s")
    try:
        return run(command, resolve(command, given))
    except (UsageError, StoreError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
