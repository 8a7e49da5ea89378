"""Command-line entry point: ``eldrop {train,eval,gap,verify,sweep-lambda}``.

Every file written here carries the resolved configuration and seed: the
model file in its metadata trailer, CSV files as ``#`` comment lines, and
JSON reports under a ``"config"`` key.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config
from .data import load_idx, split, synth_gaussians
from .errors import EldropError
from .inference import InferenceConfig, error_rate, gap_statistics
from .network import Network, load_network, save_network
from .theory import check_layered_bound
from .trainer import train
from .verify import run_verification

MODEL_FILE = "model.eldn"
LOG_FILE = "train_log.csv"


class UsageError(EldropError):
    pass


def load_data(cfg: ExperimentConfig):
    """``(train, validation, test)`` datasets described by ``cfg.data``."""
    d = cfg.data
    if d.source == "synth":
        full = synth_gaussians(d.k, d.d, d.n_per_class, d.separation, d.data_seed)
        train_set, val_set = split(full, d.holdout, d.data_seed)
        test_set = synth_gaussians(d.k, d.d, d.test_per_class, d.separation, d.data_seed + 1)
        return train_set, val_set, test_set
    for name in ("train_images", "train_labels"):
        if not getattr(d, name):
            raise UsageError(f"[data] {name} is required for source = idx")
    for name in ("train_images", "train_labels", "test_images", "test_labels"):
        value = getattr(d, name)
        if value and not Path(value).is_file():
            raise UsageError(f"dataset file not found: {value}")
    full = load_idx(d.train_images, d.train_labels)
    train_set, val_set = split(full, d.holdout, d.data_seed)
    if d.test_images and d.test_labels:
        test_set = load_idx(d.test_images, d.test_labels, k=full.k)
    else:
        test_set = val_set
    return train_set, val_set, test_set


def build_network(cfg: ExperimentConfig, input_dim: int, k: int) -> Network:
    arch = cfg.architecture
    return Network.build(arch.sizes(input_dim, k), arch.activations(), arch.keep_probs(), seed=cfg.seed)


def _write_json(path: Path, payload: dict, cfg: ExperimentConfig) -> None:
    payload = dict(payload)
    payload["seed"] = cfg.seed
    payload["config"] = cfg.to_text()
    path.write_text(json.dumps(payload, indent=2) + "\n")


def _load_model(args, out: Path):
    path = Path(args.model) if args.model else out / MODEL_FILE
    if not path.is_file():
        raise UsageError(f"model file not found: {path} (run `train` first or pass --model)")
    return load_network(path)


def cmd_train(cfg: ExperimentConfig, args, out: Path) -> int:
    train_set, val_set, test_set = load_data(cfg)
    net = build_network(cfg, train_set.dim, train_set.k)
    trained, trainlog = train(net, train_set, val_set, cfg.train)
    save_network(trained, out / MODEL_FILE, metadata=cfg.to_text())
    trainlog.to_csv(out / LOG_FILE, comments=cfg.to_text())
    err = error_rate(trained, test_set)
    last = trainlog.records[-1] if trainlog.records else None
    print(f"trained {cfg.train.epochs} epochs; test error (standard) {err:.2f}%"
          + (f"; final loss {last.total:.4f}" if last else ""))
    print(f"wrote {out / MODEL_FILE} and {out / LOG_FILE}")
    return 0


def cmd_eval(cfg: ExperimentConfig, args, out: Path) -> int:
    net = _load_model(args, out)
    _, _, test_set = load_data(cfg)
    std = error_rate(net, test_set, InferenceConfig("standard"))
    mc_cfg = InferenceConfig("monte_carlo", cfg.inference.mc_samples, cfg.seed)
    mc = error_rate(net, test_set, mc_cfg)
    print(f"standard inference error: {std:.2f}%")
    print(f"monte carlo inference error (m={mc_cfg.mc_samples}): {mc:.2f}%")
    _write_json(out / "eval.json", {"standard_error": std, "mc_error": mc, "mc_samples": mc_cfg.mc_samples}, cfg)
    return 0


def cmd_gap(cfg: ExperimentConfig, args, out: Path) -> int:
    net = _load_model(args, out)
    _, _, test_set = load_data(cfg)
    X = test_set.inputs[: cfg.gap.examples]
    g = cfg.gap
    report = check_layered_bound(net, X, mc_samples=g.mc_samples, seed=cfg.seed, path=g.path,
                                 gap_mc_samples=cfg.inference.mc_samples, inner_samples=g.inner_samples)
    payload = report.to_dict()
    _write_json(out / "gap_report.json", payload, cfg)
    print(f"measured gap {report.delta_mean:.5f} +/- {report.delta_stderr:.5f}; "
          f"layered bound {report.layered_bound:.5f} ({report.regime}); within bound: {report.passed}")
    return 0


def cmd_verify(cfg: ExperimentConfig, args, out: Path) -> int:
    results = run_verification(cfg.verify.nets, cfg.verify.examples, cfg.seed)
    summary = {}
    for r in results:
        ok, total = summary.get(r.name, (0, 0))
        summary[r.name] = (ok + int(r.passed), total + 1)
    for name, (ok, total) in summary.items():
        status = "PASS" if ok == total else "FAIL"
        print(f"{status} {name}: {ok}/{total}")
    failed = [dataclasses.asdict(r) for r in results if not r.passed]
    _write_json(out / "verify.json", {"summary": {k: list(v) for k, v in summary.items()}, "failures": failed}, cfg)
    return 0 if not failed else 1


SWEEP_FIELDS = ("lam", "test_error", "mc_test_error", "delta_hat", "delta_hat_stderr", "val_error")


def cmd_sweep(cfg: ExperimentConfig, args, out: Path) -> int:
    train_set, val_set, test_set = load_data(cfg)
    rows = []
    for lam in cfg.lambdas:
        tcfg = dataclasses.replace(cfg.train, lam=lam)
        net, trainlog = train(build_network(cfg, train_set.dim, train_set.k), train_set, val_set, tcfg)
        gap = gap_statistics(net, test_set.inputs, cfg.inference.mc_samples, cfg.seed)
        mc_cfg = InferenceConfig("monte_carlo", cfg.inference.mc_samples, cfg.seed)
        row = {
            "lam": lam,
            "test_error": error_rate(net, test_set),
            "mc_test_error": error_rate(net, test_set, mc_cfg),
            "delta_hat": gap.value,
            "delta_hat_stderr": gap.stderr,
            "val_error": trainlog.records[-1].val_error if trainlog.records else None,
        }
        rows.append(row)
        print(f"lam={lam:g} test error {row['test_error']:.2f}% (mc {row['mc_test_error']:.2f}%) delta_hat {gap.value:.5f}")
    path = out / "sweep.csv"
    with open(path, "w", newline="") as fh:
        for line in cfg.to_text().splitlines():
            fh.write(f"# {line}\n")
        writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if v is None else repr(v) for k, v in row.items()})
    print(f"wrote {path}")
    return 0


COMMANDS = {
    "train": (cmd_train, "train a network and write the model and per-epoch log"),
    "eval": (cmd_eval, "error rates under standard and Monte-Carlo inference"),
    "gap": (cmd_gap, "measure the inference gap and its layered bound"),
    "verify": (cmd_verify, "check the theory instruments on small enumerable networks"),
    "sweep-lambda": (cmd_sweep, "train across a list of penalty weights"),
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eldrop", description="Dropout training with an expectation-linearization penalty.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="experiment config file (defaults are used when omitted)")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--out", help="output directory (overrides [experiment] out)")
        if name in ("eval", "gap"):
            p.add_argument("--model", help=f"model file (default: <out>/{MODEL_FILE})")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.out:
            cfg = dataclasses.replace(cfg, out=args.out)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command][0](cfg, args, out)
    except (EldropError, OSError) as exc:
        print(f"eldrop {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
