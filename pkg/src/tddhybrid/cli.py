"""Command-line entry point.

Every subcommand reads one JSON config (system and training keys in a
flat object), writes its results as CSV into --out and records a
manifest.json with the config hash, seed and source revision.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import subprocess
import sys
from pathlib import Path

import numpy as np

from .channel import generate_dataset
from .config import RunSpec, SystemConfig, config_hash, load_run
from .evaluation import SCHEMES, evaluate_scheme, mean_and_std, sum_rates, weighted_round_sim
from .rng import Stream, make_rng
from .sudnn import ModelError, SuDnnModel
from .training import load_checkpoint, save_checkpoint, train, write_history

log = logging.getLogger("tddhybrid")

RESULT_COLUMNS = ["scheme", "axis", "value", "trial", "sum_rate", "sum_rate_std"]
SWEEP_AXES = ("L", "L_a", "SNR_DL", "SNR_UL", "L_p", "K", "Q")
INT_AXES = {"L", "L_a", "L_p", "K", "Q"}


class CliError(Exception):
    pass


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def parse_sweep(text: str) -> tuple[str, list]:
    """AXIS=lo:hi:step with hi inclusive."""
    try:
        axis, rng_text = text.split("=", 1)
        lo, hi, step = (float(x) for x in rng_text.split(":"))
    except ValueError as exc:
        raise CliError(f"bad --sweep {text!r}; expected AXIS=lo:hi:step") from exc
    if axis not in SWEEP_AXES:
        raise CliError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    if step <= 0 or hi < lo:
        raise CliError(f"bad --sweep range {rng_text!r}")
    values = list(np.arange(lo, hi + step / 2, step))
    if axis in INT_AXES:
        return axis, [int(round(v)) for v in values]
    return axis, [float(v) for v in values]


def apply_axis(config: SystemConfig, axis: str, value) -> SystemConfig:
    if axis == "L":
        if value > config.L_a:
            return config.with_pilots(config.L_a, value - config.L_a)
        return config.with_pilots(value - 1, 1)
    if axis == "L_a":
        return config.with_pilots(value, config.L - value)
    if axis == "SNR_UL":
        return config.with_snr(snr_ul_db=value)
    if axis == "SNR_DL":
        return config.with_snr(snr_dl_db=value)
    return config.replace(**{axis: value})


class ModelSource:
    """Loads --model once, or trains one model per (L_a, N_RF) on demand."""

    def __init__(self, run: RunSpec, path: str | None, seed: int):
        self.run = run
        self.seed = seed
        self.loaded = load_checkpoint(path) if path else None
        self.cache: dict[tuple, SuDnnModel] = {}

    def get(self, config: SystemConfig) -> SuDnnModel:
        if self.loaded is not None:
            m = self.loaded
            if (m.L_a, m.M, m.N_c) != (config.L_a, config.M, config.N_c):
                raise ModelError(
                    f"checkpoint has L_a={m.L_a}, M={m.M}, N_c={m.N_c}; scenario needs "
                    f"L_a={config.L_a}, M={config.M}, N_c={config.N_c}")
            return m
        key = (config.L_a,)
        if key not in self.cache:
            base = self.run.system.with_pilots(config.L_a, config.L - config.L_a)
            log.info("training a model for L_a=%d", config.L_a)
            self.cache[key] = train(base, self.run.train, seed=self.seed).model
        return self.cache[key]


def write_rows(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def rate_rows(scheme: str, axis: str, value, rates: np.ndarray) -> list[dict]:
    rows = [{"scheme": scheme, "axis": axis, "value": value, "trial": t,
             "sum_rate": float(r), "sum_rate_std": ""} for t, r in enumerate(rates)]
    mean, std = mean_and_std(rates)
    rows.append({"scheme": scheme, "axis": axis, "value": value, "trial": "mean",
                 "sum_rate": mean, "sum_rate_std": std})
    return rows


def write_manifest(out: Path, args: argparse.Namespace, run: RunSpec, seed: int,
                   **extra) -> None:
    manifest = {
        "command": args.command,
        "argv": args.argv,
        "config_hash": config_hash(run.system, run.train),
        "config": {**run.system.to_dict(), **run.train.to_dict()},
        "seed": seed,
        "git_describe": git_describe(),
        **extra,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# -- subcommands -------------------------------------------------------------

def cmd_gen_channels(args, run: RunSpec, seed: int, out: Path) -> dict:
    H = generate_dataset(run.system, args.trials, out / "channels.bin", seed)
    gains = np.mean(np.abs(H) ** 2, axis=(1, 2, 3))
    write_rows(out / "results.csv", [{"sample": i, "mean_gain": float(g)}
                                     for i, g in enumerate(gains)], ["sample", "mean_gain"])
    return {"outputs": ["channels.bin", "results.csv"], "count": args.trials}


def cmd_train(args, run: RunSpec, seed: int, out: Path) -> dict:
    result = train(run.system, run.train, seed=seed)
    save_checkpoint(out / "checkpoint", result.model)
    write_history(out / "results.csv", result.history)
    return {"outputs": ["checkpoint", "results.csv"], "best_epoch": result.best_epoch,
            "best_val_loss": result.best_val_loss, "initial_val_loss": result.initial_val_loss,
            "adam_betas": [run.train.adam_beta1, run.train.adam_beta2]}


def _evaluate_points(args, run: RunSpec, seed: int, models: ModelSource,
                     axis: str, values: list, scheme: str) -> list[dict]:
    rows = []
    for value in values:
        cfg = run.system.replace(seed=seed) if axis == "" else apply_axis(run.system, axis, value)
        model = models.get(cfg) if scheme == "proposed" else None
        reports = evaluate_scheme(cfg, scheme, args.trials, seed, model, args.method)
        rows += rate_rows(scheme, axis, value, sum_rates(reports))
    return rows


def cmd_evaluate(args, run: RunSpec, seed: int, out: Path) -> dict:
    axis, values = parse_sweep(args.sweep) if args.sweep else ("", [""])
    models = ModelSource(run, args.model, seed)
    rows = _evaluate_points(args, run, seed, models, axis, values, args.scheme)
    write_rows(out / "results.csv", rows, RESULT_COLUMNS)
    return {"outputs": ["results.csv"], "scheme": args.scheme, "trials": args.trials,
            "sweep": args.sweep, "method": args.method}


def cmd_sweep_pilots(args, run: RunSpec, seed: int, out: Path) -> dict:
    L = run.system.L
    values = list(range(L - 1, 0, -1))
    models = ModelSource(run, None, seed)
    rows = _evaluate_points(args, run, seed, models, "L_a", values, "proposed")
    write_rows(out / "results.csv", rows, RESULT_COLUMNS)
    means = {r["value"]: r["sum_rate"] for r in rows if r["trial"] == "mean"}
    best = max(means, key=means.get)
    return {"outputs": ["results.csv"], "trials": args.trials, "best_L_a": best,
            "best_L_d": L - best, "method": args.method}


def cmd_quantize_eval(args, run: RunSpec, seed: int, out: Path) -> dict:
    axis, values = parse_sweep(args.sweep) if args.sweep else ("Q", [0, 8, 4, 2])
    if axis != "Q":
        raise CliError("quantize-eval only sweeps Q")
    models = ModelSource(run, args.model, seed)
    rows = _evaluate_points(args, run, seed, models, "Q", values, "proposed")
    write_rows(out / "results.csv", rows, RESULT_COLUMNS)
    return {"outputs": ["results.csv"], "trials": args.trials, "method": args.method}


def cmd_fairness(args, run: RunSpec, seed: int, out: Path) -> dict:
    config = run.system
    model = ModelSource(run, args.model, seed).get(config) if args.scheme == "proposed" else None
    res = weighted_round_sim(config, args.population, args.trials,
                             make_rng(seed, Stream.SCHEDULE), model, args.scheme,
                             args.method)
    counts = np.bincount(res.users.ravel(), minlength=args.population)
    rows = [{"user": u, "average_rate": float(res.average[u]), "scheduled": int(counts[u])}
            for u in range(args.population)]
    write_rows(out / "results.csv", rows, ["user", "average_rate", "scheduled"])
    write_rows(out / "cdf.csv", [{"average_rate": float(x), "cdf": float(y)}
                                 for x, y in zip(res.cdf_x, res.cdf_y)],
               ["average_rate", "cdf"])
    return {"outputs": ["results.csv", "cdf.csv"], "scheme": args.scheme,
            "rounds": args.trials, "population": args.population, "method": args.method}


COMMANDS = {
    "gen-channels": cmd_gen_channels,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep-pilots": cmd_sweep_pilots,
    "fairness": cmd_fairness,
    "quantize-eval": cmd_quantize_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tddhybrid", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_text, trials=500, scheme=False, sweep=False, model=False, method="zf"):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--trials", type=int, default=trials)
        p.add_argument("--method", choices=("zf", "wmmse"), default=method,
                       help="digital precoder")
        if scheme:
            p.add_argument("--scheme", choices=SCHEMES, default="proposed")
        if sweep:
            p.add_argument("--sweep", default=None, metavar="AXIS=lo:hi:step")
        if model:
            p.add_argument("--model", default=None, help="checkpoint directory")
        return p

    add("gen-channels", "generate a channel dataset", trials=1000)
    add("train", "train the single-user network")
    add("evaluate", "sum rate of one scheme, optionally swept", scheme=True, sweep=True,
        model=True)
    add("sweep-pilots", "evaluate every (L_a, L_d) split of L")
    fair = add("fairness", "weighted-sum-rate scheduling simulation", trials=1000,
               scheme=True, model=True, method="wmmse")
    fair.add_argument("--population", type=int, default=8)
    add("quantize-eval", "rates with finite-resolution phase shifters", sweep=True,
        model=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.trials < 1:
            raise CliError("--trials must be >= 1")
        run = load_run(args.config)
        seed = run.system.seed if args.seed is None else args.seed
        run = RunSpec(run.system.replace(seed=seed), run.train)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        extra = COMMANDS[args.command](args, run, seed, out)
        write_manifest(out, args, run, seed, **extra)
    except Exception as exc:  # report, do not trace back
        print(f"tddhybrid {args.command}: error: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
