"""End-to-end acceptance checks.

Each test prints one ``criterion N: PASS/FAIL`` line to the terminal, even
without ``-s``. The trend checks (5 and 6) share one set of training runs
and take most of the half hour this module needs on a single core.
"""
import csv
import math
import time
import zlib

import numpy as np
import pytest

from wsmil import autodiff as ad
from wsmil.audio import AudioClip, FeatureMatrix, extract_logmel
from wsmil.data import (
    Bag,
    FeatureCache,
    HalfAndHalfSampler,
    LabelMap,
    frames_from_annotation,
    load_strong_annotations,
    load_weak_manifest,
)
from wsmil.evaluate import frame_metrics
from wsmil.gradcheck import numerical_gradient, relative_error
from wsmil.losses import LOSS_KINDS, bag_loss, batch_loss
from wsmil.model import ModelConfig, forward_batch, init_params, predict
from wsmil.synth import SynthConfig, generate_corpus
from wsmil.train import TrainConfig, predict_batched, train

import oracles
from test_autodiff import CASES, check
from test_losses import _distinct_bag, _grad

# one loud and one faint burst per positive clip; a narrow model keeps 7 runs near 30 min
TREND_SYNTH = dict(burst_snr_db=(0.0, -10.0), burst_duration=(0.8, 1.0))
TREND_MODEL = ModelConfig(conv_channels=8, gru_units=8, dense_units=8)
TREND_EPOCHS = 300
TREND_BATCH = 40  # two batches per epoch: the GRU loop costs per batch, not per clip
TREND_SEEDS = (0, 1, 2)
TREND_BUDGET_S = 30 * 60


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def test_criterion_1_loss_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        o = rng.uniform(0, 1, int(rng.integers(1, 51)))
        Y = int(rng.integers(0, 2))
        for kind in LOSS_KINDS:
            worst = max(worst, abs(bag_loss(kind, o, Y).value - oracles.loss(kind, o, Y)))
    anchors = [
        (bag_loss("max_se", [0.2, 0.9, 0.1], 1).value, 0.005),
        (bag_loss("mmm", [1.0, 0.5, 0.0], 1).value, 0.231049),
        (bag_loss("mmm", [0.5, 0.5], 1).value, math.log(2.0)),
    ]
    anchor_err = max(abs(a - b) for a, b in anchors)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and anchor_err <= 1e-6 and elapsed < 5
    report(1, ok, f"max |loss - oracle| {worst:.1e}, anchor error {anchor_err:.1e}, {elapsed:.2f} s")


def _crnn_gradient_error():
    model = init_params(11, ModelConfig(conv_channels=3, gru_units=2, dense_units=3))
    x = np.random.default_rng(12).normal(size=(2, 10, 40))
    mask = np.ones((2, 10), bool)
    mask[1, 7:] = False
    buffers = {k: v.copy() for k, v in model.buffers.items()}

    def f():
        for k, v in buffers.items():
            model.buffers[k][...] = v
        return float(batch_loss("mmm", forward_batch(model, x, mask, training=True), [1, 0], mask).data)

    analytic = ad.backward(batch_loss("mmm", forward_batch(model, x, mask, training=True), [1, 0], mask),
                           list(model.params.values()))
    numeric = numerical_gradient(f, [t.data for t in model.params.values()])
    worst = 0.0
    for name, a, n in zip(model.params, analytic, numeric):
        if name.startswith("conv") and name.endswith(".bias"):
            # batch norm removes the per-channel mean, so both sides are ~0
            assert np.abs(a).max() < 1e-12 and np.abs(n).max() < 1e-9
            continue
        worst = max(worst, relative_error([a], [n]))
    return worst


def test_criterion_2_gradient_integrity(report):
    t0 = time.perf_counter()
    op_err = 0.0
    for name, (make, op) in sorted(CASES.items()):
        rng = np.random.default_rng(zlib.crc32(name.encode()))
        op_err = max(op_err, max(check(op, make(rng), rng) for _ in range(10)))
    loss_err = 0.0
    rng = np.random.default_rng(2)
    for kind in LOSS_KINDS:
        for _ in range(10):
            o = np.stack([_distinct_bag(rng, 8) for _ in range(3)])
            Y = rng.integers(0, 2, 3)
            t = ad.Tensor(o.copy(), requires_grad=True)
            (g,) = ad.backward(batch_loss(kind, t, Y), [t])
            (n,) = numerical_gradient(lambda: float(batch_loss(kind, o, Y).data), [o])
            loss_err = max(loss_err, relative_error([g], [n]))
    crnn_err = _crnn_gradient_error()
    elapsed = time.perf_counter() - t0
    ok = max(op_err, loss_err, crnn_err) <= 1e-4 and elapsed < 120
    report(2, ok, f"rel. error ops {op_err:.1e}, losses {loss_err:.1e}, CRNN {crnn_err:.1e}; {elapsed:.1f} s")


def test_criterion_3_shape_contract(report):
    model = init_params(0)
    rng = np.random.default_rng(3)
    bad = []
    for seconds in range(1, 11):
        L = seconds * 44100
        feats = extract_logmel(AudioClip(rng.normal(0, 0.05, L), 44100))
        T = 1 + (L - 1014) // 507
        n_out = len(predict(model, feats))
        if feats.frames.shape != (T, 40) or n_out != T:
            bad.append((seconds, feats.frames.shape, n_out))
    report(3, not bad, f"1-10 s clips, T = 1 + (L-1014)//507 (5 s -> 433); mismatches: {bad or 'none'}")


def test_criterion_4_gradient_sparsity(report):
    rng = np.random.default_rng(4)
    passed = 0
    for _ in range(100):
        o = _distinct_bag(rng, int(rng.integers(2, 51)))
        single = all(np.count_nonzero(_grad(k, o, 1)) == 1 for k in ("max_se", "max_bce"))
        spread = np.count_nonzero(_grad("mmm", o, 1)) >= 2
        passed += single and spread
    report(4, passed == 100, f"{passed}/100 bags: max-only losses touch 1 frame, mmm touches >= 2")


@pytest.fixture(scope="module")
def trend_runs(tmp_path_factory):
    """Train mmm and max_bce for every seed, plus fsl for the first, on one corpus."""
    t0 = time.perf_counter()
    root = tmp_path_factory.mktemp("trend")
    generate_corpus(root / "train", SynthConfig(40, 40, **TREND_SYNTH), seed=101)
    generate_corpus(root / "test", SynthConfig(20, 20, prefix="test", **TREND_SYNTH), seed=202)
    labels = LabelMap("tone", frozenset({"tone"}))

    def load(split):
        entries = load_weak_manifest(root / split / "manifest.csv")
        return FeatureCache(root / split / "features", audio_root=root / split).bags(entries, labels)

    train_bags, test_bags = load("train"), load("test")
    ann = load_strong_annotations(root / "test" / "strong.csv")
    truths = [frames_from_annotation(ann[b.id].events if b.id in ann else [], b.M, b.features.frame_hop_seconds)
              for b in test_bags]
    test_x = [b.features.frames for b in test_bags]
    positive = [b.Y == 1 for b in test_bags]

    def run(loss, seed):
        cfg = TrainConfig(loss=loss, epochs=TREND_EPOCHS, batch_size=TREND_BATCH, seed=seed,
                          eval_interval=TREND_EPOCHS, dtype="float32")
        res = train(train_bags, cfg, model_config=TREND_MODEL, validation=(test_x, truths))
        scores = predict_batched(res.model, test_x)
        active = float(np.mean([np.mean(s >= 0.5) for s, p in zip(scores, positive) if p]))
        return {"f1": res.history[-1].val.f1, "active": active}

    runs = {(loss, seed): run(loss, seed) for seed in TREND_SEEDS for loss in ("mmm", "max_bce")}
    trend_seconds = time.perf_counter() - t0
    runs[("fsl", TREND_SEEDS[0])] = run("fsl", TREND_SEEDS[0])
    truth_active = float(np.mean([t.mean() for t, p in zip(truths, positive) if p]))
    return runs, trend_seconds, truth_active


def test_criterion_5_trend(report, trend_runs):
    runs, seconds, _ = trend_runs
    wins, parts = 0, []
    for seed in TREND_SEEDS:
        mmm, mx = runs[("mmm", seed)]["f1"], runs[("max_bce", seed)]["f1"]
        ok = mmm >= mx and mmm >= 0.70
        wins += ok
        parts.append(f"seed {seed}: mmm {mmm:.3f} vs max_bce {mx:.3f}")
    ok = wins >= 2 and seconds <= TREND_BUDGET_S
    report(5, ok, f"{wins}/3 seeds hold ({'; '.join(parts)}); {seconds / 60:.1f} min")


def test_criterion_6_fsl_pathology(report, trend_runs):
    runs, _, truth = trend_runs
    seed = TREND_SEEDS[0]
    fsl, mmm = runs[("fsl", seed)]["active"], runs[("mmm", seed)]["active"]
    report(6, fsl >= mmm + 0.15,
           f"active share of positive clips: fsl {fsl:.2f}, mmm {mmm:.2f}, truth {truth:.2f}")


def test_criterion_7_hnh_sampler(report, tmp_path):
    manifest = tmp_path / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "path", "labels"])
        for i in range(687):
            w.writerow([f"r{i}", f"r{i}.wav", "bird" if i < 587 else ""])
    lm = LabelMap("bird", frozenset("*"))
    labels = np.array([lm.label(e.labels) for e in load_weak_manifest(manifest)])
    sampler = HalfAndHalfSampler(labels, batch_size=32, seed=7)
    positives = set(np.flatnonzero(labels == 1))
    balanced = covered = 0
    n_batches = 0
    for _ in range(100):
        batches = list(sampler.epoch())
        n_batches += len(batches)
        balanced += sum(int(labels[b].sum()) == 16 and len(b) == 32 for b in batches)
        covered += positives <= set(np.concatenate(batches))
    ok = balanced == n_batches and covered == 100
    report(7, ok, f"{balanced}/{n_batches} batches half/half, {covered}/100 epochs cover all 587 positives")


def test_criterion_8_determinism(report, tmp_path):
    rng = np.random.default_rng(8)
    bags = [Bag(FeatureMatrix(rng.normal(size=(30, 40)), 507 / 44100, f"b{i}"), i % 2, f"b{i}") for i in range(8)]
    cfg = TrainConfig(epochs=4, batch_size=4, seed=5, checkpoint_interval=2)
    mc = ModelConfig(conv_channels=3, gru_units=3, dense_units=3)
    for name in ("a", "b"):
        train(bags, cfg, model_config=mc, out_dir=tmp_path / name)
    same = [
        (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
        for rel in ("metrics.csv", "checkpoints/final.wsck", "checkpoints/epoch_00002.wsck")
    ]
    report(8, all(same), "metric log and checkpoints byte-identical across two runs" if all(same) else f"{same}")


def test_criterion_9_metric_oracle(report):
    rng = np.random.default_rng(9)
    exact = 0
    for i in range(1000):
        n = int(rng.integers(1, 6))
        pairs = [(rng.integers(0, 2, m), rng.integers(0, 2, m)) for m in rng.integers(1, 40, n)]
        rep = frame_metrics([p for p, _ in pairs], [t for _, t in pairs])
        tp, fp, fn, f1 = oracles.confusion_f1(pairs)
        exact += (rep.tp, rep.fp, rep.fn, rep.f1) == (tp, fp, fn, f1)
    empty = frame_metrics([np.zeros(10, int)], [np.zeros(10, int)])
    degenerate = empty.f1 == 0.0 and "no positives" in empty.flags
    report(9, exact == 1000 and degenerate, f"{exact}/1000 exact matches; all-negative F1 0 flagged: {degenerate}")
