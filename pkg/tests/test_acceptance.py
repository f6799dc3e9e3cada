"""Acceptance suite: one test per release criterion, each printing a
pass/fail line (run with `pytest tests/test_acceptance.py -v -s`)."""

import csv
import time

import numpy as np
import pytest

from lfrecog import angular, classify, cli, lightfield, protocol
from lfrecog.angular import LstmParams, LstmState, TrainConfig, cell_forward
from lfrecog.cli import make_backend
from lfrecog.descriptor import load_embedding_file, save_embedding_file
from lfrecog.numerics import BatchNormState
from lfrecog.selection import parse_topology, select_views, sequence_length

from test_angular import gradcheck_once, vanilla_lstm_step
from test_protocol import make_manifest


def report(num, name, ok=True):
    print(f"ACCEPTANCE {num:2d} [{'PASS' if ok else 'FAIL'}] {name}")


def test_01_gradient_correctness():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        worst = max(worst, gradcheck_once(seed, rel_tol=1e-4))
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"gradient check took {elapsed:.1f}s"
    report(1, f"BPTT vs finite differences, 20 seeds, worst rel err "
              f"{worst:.2e}, {elapsed:.1f}s")


def test_02_peephole_reduction():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(100):
        d, hid, t_len = 5, 4, 6
        p = LstmParams.init(d, hid, rng)
        # peepholes explicitly zero
        p.p_i[...] = 0.0
        p.p_f[...] = 0.0
        p.p_o[...] = 0.0
        h = np.zeros(hid)
        c = np.zeros(hid)
        for _ in range(t_len):
            x = rng.standard_normal(d)
            ref_h, ref_c = vanilla_lstm_step(x, h, c, p)
            state = cell_forward(x, LstmState(h, c), p)
            worst = max(worst, np.abs(state.h - ref_h).max(),
                        np.abs(state.c - ref_c).max())
            assert worst < 1e-12
            h, c = state.h, state.c
    report(2, f"zero-peephole forward matches vanilla LSTM, max dev {worst:.1e}")


def test_03_compactness_arithmetic():
    length = sequence_length(parse_topology("mid-hv-scan"), 15, 15)
    assert length * 256 == 7680
    report(3, f"mid-hv-scan: {length} cells x 256 hidden = {length * 256}")


def test_04_protocol_split_counts():
    manifest = make_manifest(100)
    p1 = protocol.split_protocol1(manifest)
    assert (len(p1.train), len(p1.validation), len(p1.test)) == (100, 200, 2000)
    p2 = protocol.split_protocol2(manifest)
    assert (len(p2.train), len(p2.validation), len(p2.test)) == (2000, 1000, 1000)
    report(4, "protocol 1 -> 100/200/2000, protocol 2 -> 2000/1000/1000")


def test_05_angular_information_benefit(paired_dataset):
    start = time.perf_counter()
    manifest = protocol.load_manifest(paired_dataset / "manifest.json")
    split = protocol.split_protocol2(manifest)
    topology = parse_topology("mid-hv-fuse")
    backend = make_backend("rand:64:32")
    class_index = manifest.subject_index()

    def branches_for(records):
        data = [protocol.record_branch_descriptions(r, topology, backend)
                for r in records]
        labels = [class_index[r.subject] for r in records]
        return data, labels

    train_data, train_labels = branches_for(split.train)
    test_data, test_labels = branches_for(split.test)
    center_idx = 9 // 2  # center view position inside the mid-row branch
    train_center = [d[0][center_idx] for d in train_data]
    test_center = [d[0][center_idx] for d in test_data]

    pipeline_accs, baseline_accs = [], []
    for seed in range(5):
        models = []
        for b in range(2):
            config = TrainConfig(hidden_dim=32, num_batches=3, epochs=40,
                                 learning_rate=1e-3, seed=seed * 10 + b)
            model, _ = angular.train(
                [d[b] for d in train_data], train_labels, len(class_index), config
            )
            models.append(model)
        fused = angular.MultiBranchModel(models)
        hits = sum(
            classify.predict(fused, branches)[0] == label
            for branches, label in zip(test_data, test_labels)
        )
        pipeline_accs.append(hits / len(test_labels))

        base = classify.train_softmax_baseline(
            train_center, train_labels, len(class_index), seed=seed
        )
        hits = sum(
            int(np.argmax(classify.baseline_scores(base, x))) == label
            for x, label in zip(test_center, test_labels)
        )
        baseline_accs.append(hits / len(test_labels))

    pipeline = float(np.mean(pipeline_accs))
    baseline = float(np.mean(baseline_accs))
    elapsed = time.perf_counter() - start
    assert elapsed < 600.0, f"angular-benefit experiment took {elapsed:.0f}s"
    assert pipeline - baseline >= 0.10, (
        f"pipeline {pipeline:.3f} vs baseline {baseline:.3f}"
    )
    report(5, f"fused LSTM rank-1 {pipeline:.3f} vs center-view baseline "
              f"{baseline:.3f} (margin {100 * (pipeline - baseline):.1f}pp, "
              f"{elapsed:.0f}s)")


def test_06_scan_order_laws():
    mask = lightfield.default_vignette_mask(15, 15)
    for m in (None, mask):
        (row,) = select_views(parse_topology("high-row"), 15, 15, m)
        (snake,) = select_views(parse_topology("high-snake"), 15, 15, m)
        assert sorted(row.positions) == sorted(snake.positions)
    (seq,) = select_views(parse_topology("high-snake"), 3, 3)
    assert seq.positions == [
        (0, 0), (0, 1), (0, 2), (1, 2), (1, 1), (1, 0), (2, 0), (2, 1), (2, 2)
    ]
    report(6, "row/snake multisets identical; 3x3 snake order exact")


def test_07_fusion_laws():
    rng = np.random.default_rng(7)
    a = rng.dirichlet(np.ones(5), size=10000)
    b = rng.dirichlet(np.ones(5), size=10000)
    for i in range(10000):
        ab = classify.fuse_sum(a[i], b[i])
        ba = classify.fuse_sum(b[i], a[i])
        assert np.array_equal(ab, ba)
        assert int(np.argmax(ab)) == int(np.argmax(ba))
    dist = rng.dirichlet(np.ones(6))
    assert np.abs(classify.average_scores([dist] * 9) - dist).max() < 1e-12
    scores = [rng.dirichlet(np.ones(4)) for _ in range(50)]
    labels = rng.integers(0, 4, 50)
    accs = [classify.rank_k(scores, labels, k) for k in range(1, 5)]
    assert all(x <= y for x, y in zip(accs, accs[1:]))
    report(7, "fuse_sum commutative (10k pairs); averaging idempotent; "
              "rank-k monotone")


def test_08_determinism(tiny_dataset, tmp_path):
    base = ["train", "--manifest", str(tiny_dataset / "manifest.json"),
            "--topology", "mid-h", "--backend", "rand:16:16",
            "--hidden", "8", "--epochs", "4", "--batches", "2",
            "--protocol", "2", "--seed", "11"]
    assert cli.main(base + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(base + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "model.lflm").read_bytes() == \
           (tmp_path / "b" / "model.lflm").read_bytes()

    eval_base = ["eval", "--manifest", str(tiny_dataset / "manifest.json"),
                 "--topology", "mid-h", "--backend", "rand:16:16",
                 "--protocol", "2", "--model", str(tmp_path / "a" / "model.lflm")]
    assert cli.main(eval_base + ["--workers", "1",
                                 "--out", str(tmp_path / "w1")]) == 0
    assert cli.main(eval_base + ["--workers", "8",
                                 "--out", str(tmp_path / "w8")]) == 0
    for name in ("predictions.csv", "task_table.csv", "rank_curve.csv"):
        assert (tmp_path / "w1" / name).read_bytes() == \
               (tmp_path / "w8" / name).read_bytes()
    report(8, "same-seed training byte-identical; workers 1 vs 8 identical CSVs")


def test_09_format_round_trips(tmp_path):
    # SA container
    spec = lightfield.SyntheticSceneSpec(
        subject_seed=3, base_pattern=1, disparity_px_per_view=0.5, noise_sigma=2.0
    )
    arr = lightfield.synth_lightfield(spec, 5, 5, 12, 12)
    lightfield.save_sa_container(arr, tmp_path / "c1")
    lightfield.save_sa_container(
        lightfield.load_sa_container(tmp_path / "c1"), tmp_path / "c2"
    )
    files1 = sorted(p.name for p in (tmp_path / "c1").iterdir())
    files2 = sorted(p.name for p in (tmp_path / "c2").iterdir())
    assert files1 == files2
    for name in files1:
        assert (tmp_path / "c1" / name).read_bytes() == \
               (tmp_path / "c2" / name).read_bytes()

    # embedding file
    rng = np.random.default_rng(9)
    records = [((f"img{i}", i % 3, i % 5), rng.standard_normal(7).astype(np.float32))
               for i in range(10)]
    save_embedding_file(tmp_path / "e1.lfem", records, 7)
    index, dim = load_embedding_file(tmp_path / "e1.lfem")
    save_embedding_file(tmp_path / "e2.lfem", list(index.items()), dim)
    assert (tmp_path / "e1.lfem").read_bytes() == (tmp_path / "e2.lfem").read_bytes()

    # model file
    rng = np.random.default_rng(10)
    seqs = [rng.standard_normal((3, 6)) for _ in range(6)]
    labels = [0, 1, 2, 0, 1, 2]
    model, _ = angular.train(
        seqs, labels, 3,
        TrainConfig(hidden_dim=4, num_batches=2, epochs=2, seed=0),
    )
    angular.save_model(tmp_path / "m1.lflm", model)
    angular.save_model(tmp_path / "m2.lflm", angular.load_model(tmp_path / "m1.lflm"))
    assert (tmp_path / "m1.lflm").read_bytes() == (tmp_path / "m2.lflm").read_bytes()
    report(9, "container, embedding, and model files round-trip byte-identically")


def test_10_sweep_shape(tiny_dataset, tmp_path):
    out = tmp_path / "sweep"
    assert cli.main([
        "sweep", "--manifest", str(tiny_dataset / "manifest.json"),
        "--topology", "mid-h", "--backend", "rand:16:16",
        "--protocol", "2", "--batches", "2",
        "--hidden-grid", "32,64,128,256,512",
        "--batches-grid", "2", "--epochs-grid", "2",
        "--out", str(out),
    ]) == 0
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5
    assert [r["hidden"] for r in rows] == ["32", "64", "128", "256", "512"]
    for row in rows:
        assert row["error"] == ""
        acc = float(row["val_rank1"])
        assert np.isfinite(acc) and 0.0 <= acc <= 1.0
    report(10, "sweep over 5 hidden sizes emits 5 rows with finite accuracies")
