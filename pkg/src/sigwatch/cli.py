"""Command-line harness wiring the library into reproducible experiments.

Every subcommand reads one flat JSON config (all keys optional, defaults
embedded here), writes CSV/JSON artifacts into an output directory, and
finishes with a report.json listing each emitted file with its content
hash. Outputs are a pure function of the config, so reruns produce
byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import detector, ewc, nn, seq, synth, zerobias

DEFAULT_CONFIG: dict = {
    "seed": 0,
    # dataset
    "n_known": 8,
    "n_abnormal": 16,
    "bursts_per_emitter": 200,
    "snr_db": 25.0,
    # network / training
    "hidden": [128, 64],
    "epochs": 60,
    "learning_rate": 0.05,
    "batch_size": 64,
    "l2": 0.0,
    # detector
    "cutoff_quantile": 1.0,
    # sequential detection sweep
    "sweep_tprs": [0.6, 0.7, 0.8, 0.9, 0.99],
    "sweep_fpr": 0.4,
    "sweep_cusum_h": [2.0, 5.0, 10.0, 20.0],
    "sweep_ewma_L": [3.0, 3.5, 4.0],
    "ewma_lambda": 0.15,
    "sweep_window_lengths": [50, 100, 200, 300],
    "window_threshold": 0.7,
    "change_point": 500,
    "n_trials": 10000,
    "max_len": None,
    # incremental learning
    "inc_task2_classes": 4,
    "inc_epochs": 30,
    "inc_learning_rate": 0.02,
    "inc_batch_size": 32,
    "lambda1": 5.0,
    # coverage
    "coverage_samples": 100000,
}


class CliError(RuntimeError):
    pass


def load_config(path: str | None) -> dict:
    config = dict(DEFAULT_CONFIG)
    if path is not None:
        with open(path) as fh:
            user = json.load(fh)
        unknown = set(user) - set(DEFAULT_CONFIG)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        config.update(user)
    return config


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Workspace:
    """Tracks files written by one subcommand so failures clean up."""

    def __init__(self, out_dir: str):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []
        self.timings: dict[str, float] = {}

    def path(self, name: str) -> Path:
        p = self.out / name
        self.files.append(p)
        return p

    def discard_partial(self) -> None:
        for p in self.files:
            if p.exists():
                p.unlink()

    def write_report(self, command: str, config: dict, metrics: dict) -> Path:
        report = {
            "command": command,
            "config": config,
            "metrics": metrics,
            "files": {p.name: _sha256(p) for p in self.files if p.exists()},
            "timings_s": {k: round(v, 3) for k, v in self.timings.items()},
        }
        p = self.out / "report.json"
        with open(p, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
        return p


def _timed(ws: Workspace, name: str):
    class _Timer:
        def __enter__(self):
            self.start = time.perf_counter()
            return self

        def __exit__(self, *exc):
            ws.timings[name] = time.perf_counter() - self.start
            return False

    return _Timer()


def _dataset(config: dict) -> synth.Dataset:
    return synth.make_dataset(
        n_known=config["n_known"],
        n_abnormal=config["n_abnormal"],
        bursts_per_emitter=config["bursts_per_emitter"],
        seed=config["seed"],
        snr_db=config["snr_db"],
    )


def _train_both_heads(config: dict, dataset: synth.Dataset):
    x_train, y_train = dataset.train_arrays()
    x_test, y_test = dataset.test_arrays()
    cfg = nn.TrainConfig(
        learning_rate=config["learning_rate"],
        epochs=config["epochs"],
        batch_size=config["batch_size"],
        l2=config["l2"],
        seed=config["seed"],
    )
    results = {}
    for head in ("dense", "zero_bias"):
        net = nn.build_network(
            synth.FEATURE_DIM,
            tuple(config["hidden"]),
            config["n_known"],
            head=head,
            seed=config["seed"],
        )
        history = nn.train(net, x_train, y_train, cfg)
        results[head] = {
            "net": net,
            "history": history,
            "train_accuracy": nn.accuracy(net, x_train, y_train),
            "test_accuracy": nn.accuracy(net, x_test, y_test),
        }
    return results


def cmd_train(config: dict, ws: Workspace) -> dict:
    with _timed(ws, "dataset"):
        dataset = _dataset(config)
    with _timed(ws, "train"):
        results = _train_both_heads(config, dataset)

    nn.save_model(results["dense"]["net"], ws.path("model_regular.json"))
    nn.save_model(results["zero_bias"]["net"], ws.path("model_zerobias.json"))

    import csv as _csv

    with open(ws.path("history.csv"), "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["head", "epoch", "loss", "accuracy"])
        for head, res in results.items():
            for row in res["history"]:
                writer.writerow([head, row["epoch"], repr(row["loss"]), repr(row["accuracy"])])

    metrics = {
        head: {
            "train_accuracy": res["train_accuracy"],
            "test_accuracy": res["test_accuracy"],
        }
        for head, res in results.items()
    }
    metrics["accuracy_gap"] = abs(
        results["dense"]["test_accuracy"] - results["zero_bias"]["test_accuracy"]
    )
    return metrics


def cmd_convert(config: dict, ws: Workspace, model_path: str) -> dict:
    net, _ = nn.load_model(model_path)
    if not isinstance(net.head, zerobias.ZeroBiasHead):
        raise CliError("convert requires a zero-bias model (train emits model_zerobias.json)")
    with _timed(ws, "dataset"):
        dataset = _dataset(config)
    x_train, y_train = dataset.train_arrays()
    x_test, _ = dataset.test_arrays()
    x_abn, _ = dataset.abnormal_arrays()

    with _timed(ws, "profile"):
        profile = detector.build_profile(net, x_train, y_train, quantile=config["cutoff_quantile"])
    detector.save_profile(profile, ws.path("profile.json"))

    det = detector.BinaryDetector(net, profile)
    with _timed(ws, "rates"):
        fpr, tpr, fnr = detector.estimate_rates(det, x_test, x_abn)
    train_acc = nn.accuracy(net, x_train, y_train)
    predicted = detector.predict_rates_from_accuracy(train_acc)

    metrics = {
        "train_accuracy": train_acc,
        "measured": {"fpr": fpr, "tpr": tpr, "fnr": fnr},
        "predicted_from_accuracy": {"fpr": predicted.fpr, "tpr": predicted.tpr},
    }
    with open(ws.path("rates.json"), "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
    return metrics


def cmd_simulate(config: dict, ws: Workspace) -> dict:
    with _timed(ws, "sweep"):
        rows = seq.sweep(
            tprs=config["sweep_tprs"],
            fpr=config["sweep_fpr"],
            cusum_hs=config["sweep_cusum_h"],
            ewma_Ls=config["sweep_ewma_L"],
            window_lengths=config["sweep_window_lengths"],
            change_point=config["change_point"],
            n_trials=config["n_trials"],
            max_len=config["max_len"],
            seed=config["seed"],
            ewma_lambda=config["ewma_lambda"],
            window_threshold=config["window_threshold"],
        )
    seq.write_sweep_csv(rows, ws.path("sweep.csv"))
    return {"rows": len(rows), "grid_points": len(config["sweep_tprs"])}


def cmd_incremental(config: dict, ws: Workspace) -> dict:
    if config["inc_task2_classes"] > config["n_abnormal"]:
        raise CliError("inc_task2_classes cannot exceed n_abnormal")
    with _timed(ws, "dataset"):
        dataset = _dataset(config)
    with _timed(ws, "task1_train"):
        results = _train_both_heads(config, dataset)

    n_known = config["n_known"]
    task2_ids = frozenset(range(n_known, n_known + config["inc_task2_classes"]))
    x2, y2 = dataset.arrays(classes=task2_ids)
    x1_val, y1_val = dataset.test_arrays()

    import csv as _csv

    weights_fh = open(ws.path("weights.csv"), "w", newline="")
    weights_writer = _csv.writer(weights_fh)
    weights_writer.writerow(
        ["head", "strategy", "stabilized", "epoch", "fisher_loss", "weight_mean", "weight_min"]
    )
    summary = {}
    try:
        with _timed(ws, "incremental"):
            for head, res in results.items():
                for strategy in ewc.Strategy:
                    for stabilized in (True, False):
                        cfg = ewc.IncrementalConfig(
                            strategy=strategy,
                            lambda1=config["lambda1"],
                            epochs=config["inc_epochs"],
                            learning_rate=config["inc_learning_rate"],
                            batch_size=config["inc_batch_size"],
                            stabilize=stabilized,
                            seed=config["seed"],
                        )
                        _, history = ewc.incremental_train(
                            res["net"], x2, y2, x1_val, y1_val, cfg
                        )
                        tag = f"{head}_{strategy.value}_{'stab' if stabilized else 'raw'}"
                        ewc.write_history_csv(
                            [(strategy, h) for h in history],
                            ws.path(f"history_{tag}.csv"),
                        )
                        for h in history:
                            weights_writer.writerow(
                                [
                                    head,
                                    strategy.value,
                                    int(stabilized),
                                    h.epoch,
                                    repr(h.fisher_loss),
                                    repr(h.weight_mean),
                                    repr(h.weight_min),
                                ]
                            )
                        summary[tag] = {
                            "final_task1_acc": history[-1].task1_acc,
                            "final_task2_acc": history[-1].task2_acc,
                        }
    finally:
        weights_fh.close()
    return {"runs": len(summary), "summary": summary}


def cmd_coverage(config: dict, ws: Workspace, models_dir: str) -> dict:
    models_dir = Path(models_dir)
    metrics = {}
    import csv as _csv

    with open(ws.path("coverage.csv"), "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["head", "class", "fraction"])
        for head, filename in (("regular", "model_regular.json"), ("zero_bias", "model_zerobias.json")):
            net, _ = nn.load_model(models_dir / filename)
            with _timed(ws, f"coverage_{head}"):
                fractions = zerobias.coverage_ratio(
                    net.head, config["coverage_samples"], seed=config["seed"]
                )
            for cls, frac in enumerate(fractions):
                writer.writerow([head, cls, repr(float(frac))])
            metrics[head] = {
                "fractions": [float(f) for f in fractions],
                "variance": float(np.var(fractions)),
            }
    metrics["zero_bias_variance_leq_regular"] = (
        metrics["zero_bias"]["variance"] <= metrics["regular"]["variance"]
    )
    return metrics


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sigwatch",
        description="Synthetic RF surveillance experiments: training, detector conversion, "
        "sequential detection simulation, incremental learning, coverage analysis.",
    )
    parser.add_argument("--print-config", action="store_true", help="print default config and exit")
    sub = parser.add_subparsers(dest="command")
    for name, description in (
        ("train", "train regular and zero-bias classifiers on the synthetic workload"),
        ("convert", "build a cut-off detector from a trained zero-bias model"),
        ("simulate", "sweep sequential detectors over the rate grid"),
        ("incremental", "run every incremental-learning strategy for both head types"),
        ("coverage", "measure per-class hypersphere coverage of trained models"),
    ):
        p = sub.add_parser(name, help=description)
        p.add_argument("--config", default=None, help="flat JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--print-config", action="store_true", help="print default config and exit")
        if name == "convert":
            p.add_argument("--model", required=True, help="zero-bias model JSON")
        if name == "coverage":
            p.add_argument("--models-dir", required=True, help="directory with train outputs")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "print_config", False):
        print(json.dumps(DEFAULT_CONFIG, indent=2, sort_keys=True))
        return 0
    if args.command is None:
        parser.print_help()
        return 2

    ws = None
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config["seed"] = args.seed
        ws = Workspace(args.out)
        started = time.perf_counter()
        if args.command == "train":
            metrics = cmd_train(config, ws)
        elif args.command == "convert":
            metrics = cmd_convert(config, ws, args.model)
        elif args.command == "simulate":
            metrics = cmd_simulate(config, ws)
        elif args.command == "incremental":
            metrics = cmd_incremental(config, ws)
        elif args.command == "coverage":
            metrics = cmd_coverage(config, ws, args.models_dir)
        else:  # pragma: no cover
            raise CliError(f"unknown command {args.command!r}")
        ws.timings["total"] = time.perf_counter() - started
        report_path = ws.write_report(args.command, config, metrics)
        print(f"{args.command}: ok, report at {report_path}")
        return 0
    except Exception as exc:
        if ws is not None:
            ws.discard_partial()
        print(f"{args.command or 'sigwatch'}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
