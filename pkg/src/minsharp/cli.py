"""Command-line entry point.

Subcommands:
    train       fit a network, write a checkpoint plus a metrics CSV
    sharpness   evaluate minimum sharpness (optionally NS) of a checkpoint
    verify      run the numerical verification suite
    bench       time the exact trace against the brute-force oracle
    experiment  randomized-label generalization-gap study

Outputs are CSV/JSON with the resolved configuration embedded; report
commands also render a PNG figure next to the delimited output.  Exit
codes: 0 success, 1 usage error, 2 numerical-check failure, 3 I/O
error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import checks, report
from .baseline_ns import NsConfig, normalized_sharpness
from .data import (
    Dataset,
    IdxFormatError,
    corrupt_labels,
    load_idx_dataset,
    synthetic_blobs,
)
from .hessian import (
    KNOWN_BUG_HOOKS,
    diag_exact,
    inject_bug,
    oracle_kron_trace,
    trace_exact,
)
from .linalg import SALT_CORRUPT, SALT_DATA, SALT_INIT, Rng
from .network import (
    CheckpointError,
    SgdConfig,
    TrainingDivergedError,
    load_checkpoint,
    random_mlp,
    save_checkpoint,
    train,
    accuracy,
)
from .sharpness import Alpha, alpha_transform, minimum_sharpness_of

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_IO = 3


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# Desk-scale defaults keep runs laptop-sized; --paper-scale restores the
# full recipe (3000 epochs, full MNIST split, the 0.0..1.0 ratio grid,
# ten benchmark trials).
DESK = {
    "dims": [784, 128, 128, 10],
    "epochs": 200,
    "lr": 0.1,
    "batch_size": 1024,
    "momentum": 0.9,
    "weight_decay": 1e-5,
    "n_train": 2000,
    "n_test": 1000,
    "ratios": [0.0, 0.25, 0.5, 0.75, 1.0],
    "seeds": 3,
    "bench_n_list": [10, 100],
    "trials": 1,
}

PAPER = {
    "epochs": 3000,
    "n_train": 60000,
    "n_test": 10000,
    "ratios": [round(0.1 * i, 1) for i in range(11)],
    "bench_n_list": [10, 100, 1000],
    "trials": 10,
}

SYNTHETIC = {
    "dims": [16, 64, 64, 4],
    "epochs": 150,
    "batch_size": 128,
    "n_train": 512,
    "n_test": 512,
    "input_dim": 16,
    "num_classes": 4,
    "separation": 3.0,
}


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated integers, got {text!r}")


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated numbers, got {text!r}")


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(doc, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return doc


def _resolve(args, file_cfg: dict, key: str, default):
    """Flag value if given, else config-file value, else default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in file_cfg:
        return file_cfg[key]
    return default


def _out_stem(path) -> str:
    stem, _ = os.path.splitext(str(path))
    return stem


def _require_readable(path, what: str):
    if path is None:
        raise UsageError(f"missing {what}; pass the corresponding flag")
    if not os.path.exists(path):
        raise FileNotFoundError(f"{what} not found: {path}")


def _load_mnist_subset(images, labels, n: int, seed: int) -> Dataset:
    _require_readable(images, "image data path")
    _require_readable(labels, "label data path")
    full = load_idx_dataset(images, labels)
    if n >= len(full):
        return full
    order = Rng(seed).split(SALT_DATA).permutation(len(full))
    return full.subset(order[:n])


def _synthetic_pair(cfg: dict, seed: int) -> tuple[Dataset, Dataset]:
    """Train/test blobs drawn from the same cluster means."""
    n_train, n_test = cfg["n_train"], cfg["n_test"]
    blob = synthetic_blobs(
        n_train + n_test,
        cfg["input_dim"],
        cfg["num_classes"],
        cfg["separation"],
        Rng(seed).split(SALT_DATA),
    )
    idx = np.arange(len(blob))
    return blob.subset(idx[:n_train]), blob.subset(idx[n_train:])


def _add_common(p, *flags):
    if "config" in flags:
        p.add_argument("--config", metavar="PATH.json",
                       help="JSON config file; flags override its values")
    if "data" in flags:
        p.add_argument("--data-images", metavar="PATH", help="IDX image file")
        p.add_argument("--data-labels", metavar="PATH", help="IDX label file")
        p.add_argument("--synthetic", action="store_true", default=None,
                       help="use the built-in Gaussian-blob dataset")
    if "test-data" in flags:
        p.add_argument("--test-images", metavar="PATH")
        p.add_argument("--test-labels", metavar="PATH")
    if "sgd" in flags:
        p.add_argument("--dims", help="comma-separated layer widths")
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--momentum", type=float)
        p.add_argument("--weight-decay", type=float)
        p.add_argument("--n-train", type=int)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None,
                   help="sample-level parallelism (default: available cores)")
    if "paper-scale" in flags:
        p.add_argument("--paper-scale", action="store_true", default=None,
                       help="use the full-size experiment profile")
    p.add_argument("--out", metavar="PATH")


def build_parser() -> _Parser:
    parser = _Parser(prog="minsharp", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network and write a checkpoint")
    _add_common(p, "config", "data", "sgd", "paper-scale")
    p.add_argument("--separation", type=float, help="synthetic blob separation")

    p = sub.add_parser("sharpness", help="sharpness report for a checkpoint")
    _add_common(p, "config", "data")
    p.add_argument("--checkpoint", metavar="PATH.json")
    p.add_argument("--n-train", type=int, help="dataset subset size")
    p.add_argument("--with-ns", action="store_true", default=None,
                   help="also compute the normalized-sharpness baseline")
    p.add_argument("--apply-alpha", metavar="a1,..,aD",
                   help="rescale layer weights before evaluating (product 1)")
    p.add_argument("--separation", type=float)

    p = sub.add_parser("verify", help="run the numerical verification suite")
    _add_common(p, "config")
    p.add_argument("--seeds", type=int, default=None,
                   help="number of independent seeds (default 1)")
    p.add_argument("--inject-bug", choices=KNOWN_BUG_HOOKS,
                   help="enable a fault hook; the suite must then fail")

    p = sub.add_parser("bench", help="time exact traces against the oracle")
    _add_common(p, "config", "paper-scale")
    p.add_argument("--dims", help="benchmark architecture")
    p.add_argument("--n-list", help="comma-separated sample counts")
    p.add_argument("--trials", type=int)

    p = sub.add_parser("experiment", help="randomized-label gap experiment")
    _add_common(p, "config", "data", "test-data", "sgd", "paper-scale")
    p.add_argument("--n-test", type=int)
    p.add_argument("--ratios", help="comma-separated corruption ratios")
    p.add_argument("--seeds", type=int, help="seeds per ratio (default 3)")
    p.add_argument("--with-ns", action="store_true", default=None)
    p.add_argument("--corrupt-test", action="store_true", default=None,
                   help="also corrupt test labels (off by default)")
    p.add_argument("--separation", type=float)

    return parser


def _threads(args, file_cfg) -> int:
    return int(_resolve(args, file_cfg, "threads", os.cpu_count() or 1))


def _train_profile(args, file_cfg) -> dict:
    synthetic = bool(_resolve(args, file_cfg, "synthetic", False))
    paper = bool(_resolve(args, file_cfg, "paper_scale", False))
    base = dict(DESK)
    if synthetic:
        base.update(SYNTHETIC)
    if paper:
        base.update(PAPER)
    dims = _resolve(args, file_cfg, "dims", base["dims"])
    if isinstance(dims, str):
        dims = _parse_int_list(dims, "--dims")
    cfg = {
        "synthetic": synthetic,
        "paper_scale": paper,
        "dims": list(dims),
        "epochs": int(_resolve(args, file_cfg, "epochs", base["epochs"])),
        "lr": float(_resolve(args, file_cfg, "lr", base["lr"])),
        "batch_size": int(_resolve(args, file_cfg, "batch_size", base["batch_size"])),
        "momentum": float(_resolve(args, file_cfg, "momentum", base["momentum"])),
        "weight_decay": float(
            _resolve(args, file_cfg, "weight_decay", base["weight_decay"])
        ),
        "n_train": int(_resolve(args, file_cfg, "n_train", base["n_train"])),
        "n_test": int(_resolve(args, file_cfg, "n_test", base["n_test"])),
        "seed": int(_resolve(args, file_cfg, "seed", 0)),
        "input_dim": base.get("input_dim", 784),
        "num_classes": base.get("num_classes", 10),
        "separation": float(
            _resolve(args, file_cfg, "separation", base.get("separation", 3.0))
        ),
    }
    return cfg


def _sgd_config(cfg: dict, seed: int) -> SgdConfig:
    return SgdConfig(
        learning_rate=cfg["lr"],
        momentum=cfg["momentum"],
        weight_decay=cfg["weight_decay"],
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        seed=seed,
    )


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    cfg = _train_profile(args, file_cfg)
    out = args.out or _resolve(args, file_cfg, "out", "checkpoint.json")
    if cfg["synthetic"]:
        data, _ = _synthetic_pair(cfg, cfg["seed"])
    else:
        data = _load_mnist_subset(
            _resolve(args, file_cfg, "data_images", None),
            _resolve(args, file_cfg, "data_labels", None),
            cfg["n_train"],
            cfg["seed"],
        )
    if data.input_dim != cfg["dims"][0] or data.num_classes != cfg["dims"][-1]:
        raise UsageError(
            f"--dims {cfg['dims']} does not fit data with input_dim="
            f"{data.input_dim} and {data.num_classes} classes"
        )
    net = random_mlp(cfg["dims"], Rng(cfg["seed"]).split(SALT_INIT))
    result = train(net, data, _sgd_config(cfg, cfg["seed"]))
    meta = {
        "seed": cfg["seed"],
        "epochs": cfg["epochs"],
        "dataset_fingerprint": data.fingerprint(),
    }
    save_checkpoint(out, result.model, meta)
    stem = _out_stem(out)
    report.write_csv(
        f"{stem}.metrics.csv",
        ["epoch", "loss", "train_acc"],
        [(h.epoch, h.loss, h.accuracy) for h in result.history],
        cfg,
    )
    report.training_figure(result.history, f"{stem}.png")
    last = result.history[-1]
    print(
        f"trained {cfg['dims']} for {cfg['epochs']} epochs: "
        f"loss={last.loss:.6f} acc={last.accuracy:.4f}"
    )
    print(f"checkpoint: {out}")
    print(f"metrics:    {stem}.metrics.csv")
    print(f"figure:     {stem}.png")
    return EXIT_OK


def cmd_sharpness(args) -> int:
    file_cfg = _load_config_file(args.config)
    ckpt_path = _resolve(args, file_cfg, "checkpoint", None)
    _require_readable(ckpt_path, "checkpoint path")
    net, meta = load_checkpoint(ckpt_path)

    synthetic = bool(_resolve(args, file_cfg, "synthetic", False))
    seed = int(_resolve(args, file_cfg, "seed", 0))
    default_n = SYNTHETIC["n_train"] if synthetic else DESK["n_train"]
    n_train = int(_resolve(args, file_cfg, "n_train", default_n))
    cfg = {
        "checkpoint": str(ckpt_path),
        "synthetic": synthetic,
        "seed": seed,
        "n_train": n_train,
        "with_ns": bool(_resolve(args, file_cfg, "with_ns", False)),
        "apply_alpha": _resolve(args, file_cfg, "apply_alpha", None),
    }
    if synthetic:
        blob_cfg = dict(SYNTHETIC)
        blob_cfg["n_train"] = n_train
        blob_cfg["n_test"] = 1
        blob_cfg["input_dim"] = net.input_dim
        blob_cfg["num_classes"] = net.num_classes
        blob_cfg["separation"] = float(
            _resolve(args, file_cfg, "separation", SYNTHETIC["separation"])
        )
        data, _ = _synthetic_pair(blob_cfg, seed)
    else:
        data = _load_mnist_subset(
            _resolve(args, file_cfg, "data_images", None),
            _resolve(args, file_cfg, "data_labels", None),
            n_train,
            seed,
        )
    if data.input_dim != net.input_dim:
        raise UsageError(
            f"checkpoint expects input_dim={net.input_dim}, data has "
            f"{data.input_dim}"
        )
    if cfg["apply_alpha"]:
        factors = _parse_float_list(str(cfg["apply_alpha"]), "--apply-alpha")
        try:
            alpha = Alpha(factors)
        except ValueError as e:
            raise UsageError(str(e))
        net = alpha_transform(net, alpha)

    threads = _threads(args, file_cfg)
    ms_report = minimum_sharpness_of(net, data, threads=threads)
    payload = {"sharpness": ms_report.to_dict(), "checkpoint_meta": meta}
    if cfg["with_ns"]:
        diags = diag_exact(net, data, threads=threads)
        payload["normalized_sharpness"] = normalized_sharpness(
            net, diags, NsConfig()
        ).to_dict()
    if args.out:
        report.write_json(args.out, payload, cfg)
        print(f"report: {args.out}")
    else:
        doc = {"format_version": report.FORMAT_VERSION, "config": cfg}
        doc.update(payload)
        print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_verify(args) -> int:
    file_cfg = _load_config_file(args.config)
    base_seed = int(_resolve(args, file_cfg, "seed", 0))
    num_seeds = int(_resolve(args, file_cfg, "seeds", 1))
    results = []
    failures = 0
    for i in range(num_seeds):
        seed = base_seed + i
        print(f"seed {seed}:")
        if args.inject_bug:
            with inject_bug(args.inject_bug):
                seed_results = checks.run_all(seed)
        else:
            seed_results = checks.run_all(seed)
        for res in seed_results:
            print("  " + res.line())
            results.append((seed, res))
            failures += 0 if res.passed else 1
    total = len(results)
    print(f"{total - failures}/{total} checks passed")
    if args.out:
        payload = {
            "results": [
                {
                    "seed": seed,
                    "name": r.name,
                    "passed": r.passed,
                    "max_deviation": r.max_deviation,
                    "tolerance": r.tolerance,
                    "detail": r.detail,
                }
                for seed, r in results
            ]
        }
        report.write_json(
            args.out, payload,
            {"seed": base_seed, "seeds": num_seeds, "inject_bug": args.inject_bug},
        )
    if failures:
        raise NumericalFailure(f"{failures} verification checks failed")
    return EXIT_OK


def cmd_bench(args) -> int:
    file_cfg = _load_config_file(args.config)
    paper = bool(_resolve(args, file_cfg, "paper_scale", False))
    base = dict(DESK)
    if paper:
        base.update(PAPER)
    dims = _resolve(args, file_cfg, "dims", [784, 20, 20, 10])
    if isinstance(dims, str):
        dims = _parse_int_list(dims, "--dims")
    n_list = _resolve(args, file_cfg, "n_list", base["bench_n_list"])
    if isinstance(n_list, str):
        n_list = _parse_int_list(n_list, "--n-list")
    trials = int(_resolve(args, file_cfg, "trials", base["trials"]))
    seed = int(_resolve(args, file_cfg, "seed", 0))
    threads = _threads(args, file_cfg)
    out = args.out or _resolve(args, file_cfg, "out", "bench.csv")
    cfg = {
        "dims": list(dims),
        "n_list": list(n_list),
        "trials": trials,
        "seed": seed,
        "threads": threads,
        "paper_scale": paper,
    }

    rng = Rng(seed)
    net = random_mlp(list(dims), rng.split(SALT_INIT))
    rows = []
    worst = 0.0
    for n in n_list:
        data_rng = Rng(seed).split(SALT_DATA).split(n)
        data = Dataset(
            data_rng.normal((n, dims[0])),
            data_rng.integers(0, dims[-1], size=n),
            dims[-1],
        )
        exact_times, oracle_times = [], []
        exact_value = oracle_value = None
        for _ in range(trials):
            t0 = time.perf_counter()
            exact_value = trace_exact(net, data, threads=threads).total()
            exact_times.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            oracle_value = oracle_kron_trace(net, data).total()
            oracle_times.append(time.perf_counter() - t0)
        dev = checks.rel_deviation(exact_value, oracle_value)
        worst = max(worst, dev)
        rows.append(
            ("exact", n, float(np.mean(exact_times)), float(np.std(exact_times)),
             exact_value)
        )
        rows.append(
            ("oracle", n, float(np.mean(oracle_times)), float(np.std(oracle_times)),
             oracle_value)
        )
        ratio = np.mean(oracle_times) / max(np.mean(exact_times), 1e-12)
        print(
            f"n={n}: exact {np.mean(exact_times):.4f}s, oracle "
            f"{np.mean(oracle_times):.4f}s (x{ratio:.0f}), trace_dev={dev:.2e}"
        )
    report.write_csv(
        out, ["method", "n", "mean_seconds", "std_seconds", "trace_value"], rows, cfg
    )
    report.bench_figure(rows, report.figure_path(out))
    print(f"results: {out}")
    print(f"figure:  {report.figure_path(out)}")
    if worst > 1e-10:
        raise NumericalFailure(
            f"oracle and exact traces disagree: rel dev {worst:.3e} > 1e-10"
        )
    return EXIT_OK


def cmd_experiment(args) -> int:
    file_cfg = _load_config_file(args.config)
    cfg = _train_profile(args, file_cfg)
    ratios = _resolve(args, file_cfg, "ratios", None)
    if ratios is None:
        ratios = PAPER["ratios"] if cfg["paper_scale"] else DESK["ratios"]
    if isinstance(ratios, str):
        ratios = _parse_float_list(ratios, "--ratios")
    for r in ratios:
        if not 0.0 <= r <= 1.0:
            raise UsageError(f"corruption ratios must be in [0, 1], got {r}")
    num_seeds = int(_resolve(args, file_cfg, "seeds", DESK["seeds"]))
    with_ns = bool(_resolve(args, file_cfg, "with_ns", False))
    corrupt_test = bool(_resolve(args, file_cfg, "corrupt_test", False))
    threads = _threads(args, file_cfg)
    out = args.out or _resolve(args, file_cfg, "out", "experiment.csv")
    cfg.update(
        {
            "ratios": [float(r) for r in ratios],
            "seeds": num_seeds,
            "with_ns": with_ns,
            "corrupt_test": corrupt_test,
            "threads": threads,
        }
    )

    if cfg["synthetic"]:
        train_data, test_data = _synthetic_pair(cfg, cfg["seed"])
    else:
        train_data = _load_mnist_subset(
            _resolve(args, file_cfg, "data_images", None),
            _resolve(args, file_cfg, "data_labels", None),
            cfg["n_train"],
            cfg["seed"],
        )
        test_data = _load_mnist_subset(
            _resolve(args, file_cfg, "test_images", None),
            _resolve(args, file_cfg, "test_labels", None),
            cfg["n_test"],
            cfg["seed"] + 1,
        )
    if train_data.input_dim != cfg["dims"][0] or train_data.num_classes != cfg["dims"][-1]:
        raise UsageError(
            f"--dims {cfg['dims']} does not fit data with input_dim="
            f"{train_data.input_dim} and {train_data.num_classes} classes"
        )

    rows = []
    for ratio in ratios:
        for s in range(num_seeds):
            seed = cfg["seed"] + s
            corrupted = corrupt_labels(
                train_data, ratio, Rng(seed).split(SALT_CORRUPT)
            )
            eval_test = test_data
            if corrupt_test:
                eval_test = corrupt_labels(
                    test_data, ratio, Rng(seed + 7919).split(SALT_CORRUPT)
                )
            net = random_mlp(cfg["dims"], Rng(seed).split(SALT_INIT))
            result = train(net, corrupted, _sgd_config(cfg, seed))
            train_acc = accuracy(result.model, corrupted)
            test_acc = accuracy(result.model, eval_test)
            gap = train_acc - test_acc
            ms_report = minimum_sharpness_of(result.model, corrupted, threads=threads)
            ns_value = None
            if with_ns:
                diags = diag_exact(result.model, corrupted, threads=threads)
                ns_value = normalized_sharpness(result.model, diags).total
            rows.append((ratio, seed, gap, ms_report.ms, ns_value, train_acc, test_acc))
            ns_text = "" if ns_value is None else f" ns={ns_value:.4g}"
            print(
                f"ratio={ratio:.2f} seed={seed}: gap={gap:.4f} "
                f"ms={ms_report.ms:.4g}{ns_text} "
                f"(train={train_acc:.4f}, test={test_acc:.4f})"
            )

    gaps = [r[2] for r in rows]
    ms_values = [r[3] for r in rows]
    pear = report.pearson(gaps, ms_values)
    spear = report.spearman(gaps, ms_values)
    report.write_csv(
        out,
        ["ratio", "seed", "gap", "ms", "ns", "train_acc", "test_acc"],
        rows,
        cfg,
    )
    report.experiment_figure(rows, report.figure_path(out))
    print(f"pearson(gap, ms)  = {pear:.4f}")
    print(f"spearman(gap, ms) = {spear:.4f}")
    print(f"results: {out}")
    print(f"figure:  {report.figure_path(out)}")
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "sharpness": cmd_sharpness,
    "verify": cmd_verify,
    "bench": cmd_bench,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, TrainingDivergedError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (IdxFormatError, CheckpointError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
