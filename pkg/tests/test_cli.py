import json

import numpy as np

from minsharp.cli import main
from minsharp.network import Mlp, save_checkpoint

TINY_TRAIN = [
    "train", "--synthetic", "--dims", "16,16,4", "--epochs", "4",
    "--n-train", "64", "--batch-size", "32", "--seed", "5",
]


def run(argv):
    return main([str(a) for a in argv])


def read_report(path):
    with open(path) as f:
        return json.load(f)


def test_train_writes_checkpoint_metrics_and_figure(tmp_path, capsys):
    out = tmp_path / "model.json"
    assert run(TINY_TRAIN + ["--out", out]) == 0
    assert out.exists()
    assert (tmp_path / "model.metrics.csv").exists()
    assert (tmp_path / "model.png").exists()
    lines = (tmp_path / "model.metrics.csv").read_text().splitlines()
    assert lines[0].startswith("# format_version:")
    assert lines[2] == "epoch,loss,train_acc"
    assert len(lines) == 3 + 4  # header lines plus one row per epoch


def test_train_same_seed_gives_identical_checkpoint_bytes(tmp_path):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    assert run(TINY_TRAIN + ["--out", a]) == 0
    assert run(TINY_TRAIN + ["--out", b]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_train_missing_data_path_names_it(tmp_path, capsys):
    rc = run(["train", "--data-images", tmp_path / "nope.idx",
              "--data-labels", tmp_path / "nope2.idx", "--out", tmp_path / "x.json"])
    assert rc == 3
    assert "nope.idx" in capsys.readouterr().err


def test_sharpness_reports_and_alpha_invariance(tmp_path):
    ckpt = tmp_path / "model.json"
    assert run(TINY_TRAIN + ["--out", ckpt]) == 0
    base_out = tmp_path / "base.json"
    moved_out = tmp_path / "moved.json"
    common = ["sharpness", "--checkpoint", ckpt, "--synthetic",
              "--n-train", "64", "--seed", "5"]
    assert run(common + ["--out", base_out]) == 0
    assert run(common + ["--apply-alpha", "2,0.5", "--out", moved_out]) == 0
    base = read_report(base_out)["sharpness"]
    moved = read_report(moved_out)["sharpness"]
    assert not base["degenerate"]
    assert abs(moved["ms"] - base["ms"]) <= 1e-8 * base["ms"]


def test_sharpness_with_ns(tmp_path):
    ckpt = tmp_path / "model.json"
    assert run(TINY_TRAIN + ["--out", ckpt]) == 0
    out = tmp_path / "report.json"
    assert run(["sharpness", "--checkpoint", ckpt, "--synthetic",
                "--n-train", "64", "--seed", "5", "--with-ns", "--out", out]) == 0
    doc = read_report(out)
    assert doc["normalized_sharpness"]["ns"] > 0
    assert doc["normalized_sharpness"]["converged"] is True


def test_sharpness_rejects_infeasible_alpha(tmp_path, capsys):
    ckpt = tmp_path / "model.json"
    assert run(TINY_TRAIN + ["--out", ckpt]) == 0
    rc = run(["sharpness", "--checkpoint", ckpt, "--synthetic",
              "--apply-alpha", "2,0.7"])
    assert rc == 1
    assert "multiply to 1" in capsys.readouterr().err


def test_sharpness_degenerate_checkpoint(tmp_path):
    dead = Mlp([16, 8, 4], [np.zeros((8, 16)), np.ones((4, 8))])
    ckpt = tmp_path / "dead.json"
    save_checkpoint(ckpt, dead, {})
    out = tmp_path / "report.json"
    assert run(["sharpness", "--checkpoint", ckpt, "--synthetic",
                "--n-train", "32", "--out", out]) == 0
    doc = read_report(out)["sharpness"]
    assert doc["degenerate"] is True
    assert doc["ms"] == 0
    assert doc["alpha_star"] is None


def test_sharpness_rejects_mismatched_data(tmp_path, capsys):
    from minsharp.data import serialize_idx_images, serialize_idx_labels

    images = tmp_path / "img.idx"
    labels = tmp_path / "lab.idx"
    images.write_bytes(serialize_idx_images(np.zeros((6, 4)), 2, 2))
    labels.write_bytes(serialize_idx_labels(np.zeros(6, dtype=np.int64)))
    net = Mlp([7, 10], [np.zeros((10, 7))])  # input_dim 7 vs data's 4
    ckpt = tmp_path / "model.json"
    save_checkpoint(ckpt, net, {})
    rc = run(["sharpness", "--checkpoint", ckpt,
              "--data-images", images, "--data-labels", labels])
    assert rc == 1
    assert "input_dim" in capsys.readouterr().err


def test_verify_passes_and_writes_report(tmp_path, capsys):
    out = tmp_path / "verify.json"
    assert run(["verify", "--seed", "3", "--out", out]) == 0
    text = capsys.readouterr().out
    assert "PASS" in text and "FAIL" not in text
    doc = read_report(out)
    assert all(r["passed"] for r in doc["results"])


def test_verify_fails_under_injected_bug(capsys):
    rc = run(["verify", "--inject-bug", "norm-unsquared"])
    assert rc == 2
    assert "FAIL" in capsys.readouterr().out


def test_bench_single_n_writes_csv_and_figure(tmp_path):
    out = tmp_path / "bench.csv"
    assert run(["bench", "--dims", "8,6,5", "--n-list", "10", "--out", out]) == 0
    lines = out.read_text().splitlines()
    assert lines[2] == "method,n,mean_seconds,std_seconds,trace_value"
    rows = lines[3:]
    assert len(rows) == 2  # one n, two methods
    assert {r.split(",")[0] for r in rows} == {"exact", "oracle"}
    exact = float(rows[0].split(",")[4])
    oracle = float(rows[1].split(",")[4])
    assert abs(exact - oracle) <= 1e-10 * abs(oracle)
    assert (tmp_path / "bench.png").exists()


def test_experiment_row_count_and_columns(tmp_path, capsys):
    out = tmp_path / "exp.csv"
    argv = [
        "experiment", "--synthetic", "--dims", "16,16,4", "--epochs", "3",
        "--n-train", "48", "--n-test", "48", "--batch-size", "24",
        "--ratios", "0,1", "--seeds", "2", "--seed", "1", "--out", out,
    ]
    assert run(argv) == 0
    lines = out.read_text().splitlines()
    assert lines[2] == "ratio,seed,gap,ms,ns,train_acc,test_acc"
    assert len(lines) == 3 + 2 * 2  # |ratios| x |seeds|
    assert (tmp_path / "exp.png").exists()
    assert "spearman(gap, ms)" in capsys.readouterr().out


def test_experiment_rerun_is_byte_identical(tmp_path):
    argv = [
        "experiment", "--synthetic", "--dims", "16,16,4", "--epochs", "3",
        "--n-train", "48", "--n-test", "48", "--batch-size", "24",
        "--ratios", "0,0.5", "--seeds", "1", "--seed", "2",
    ]
    out_a = tmp_path / "a.csv"
    out_b = tmp_path / "b.csv"
    assert run(argv + ["--out", out_a]) == 0
    assert run(argv + ["--out", out_b]) == 0
    assert out_a.read_bytes() == out_b.read_bytes()


def test_experiment_corrupt_test_flag(tmp_path):
    out = tmp_path / "exp.csv"
    argv = [
        "experiment", "--synthetic", "--dims", "16,16,4", "--epochs", "3",
        "--n-train", "48", "--n-test", "48", "--batch-size", "24",
        "--ratios", "1", "--seeds", "1", "--corrupt-test", "--out", out,
    ]
    assert run(argv) == 0
    assert len(out.read_text().splitlines()) == 3 + 1


def test_experiment_rejects_bad_ratio(tmp_path, capsys):
    rc = run(["experiment", "--synthetic", "--ratios", "0,2.0",
              "--out", tmp_path / "x.csv"])
    assert rc == 1


def test_unknown_flag_is_usage_error(capsys):
    assert run(["train", "--does-not-exist"]) == 1


def test_config_file_supplies_values_and_flags_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "synthetic": True, "dims": [16, 16, 4], "epochs": 3,
        "n_train": 48, "batch_size": 24, "seed": 9,
    }))
    out_a = tmp_path / "a.json"
    out_b = tmp_path / "b.json"
    assert run(["train", "--config", cfg, "--out", out_a]) == 0
    # flag overrides the file's epochs; metric rows differ
    assert run(["train", "--config", cfg, "--epochs", "5", "--out", out_b]) == 0
    rows_a = (tmp_path / "a.metrics.csv").read_text().splitlines()
    rows_b = (tmp_path / "b.metrics.csv").read_text().splitlines()
    assert len(rows_a) == 3 + 3
    assert len(rows_b) == 3 + 5
