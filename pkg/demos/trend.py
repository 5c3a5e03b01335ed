"""Train mmm, max_bce and fsl on one synthetic corpus and compare them.

Each positive clip holds a loud and a faint tone burst. The script reports
held-out frame F1 and the share of each positive clip scored as active. With
the defaults it runs in a few minutes on one core; pass --epochs 300 for the
acceptance-sized run.

    python demos/trend.py [--epochs 100] [--workdir /tmp/wsmil-trend]
"""
import argparse
from pathlib import Path

import numpy as np

from wsmil.data import FeatureCache, LabelMap, frames_from_annotation, load_strong_annotations, load_weak_manifest
from wsmil.model import ModelConfig
from wsmil.synth import SynthConfig, generate_corpus
from wsmil.train import TrainConfig, predict_batched, train

ap = argparse.ArgumentParser()
ap.add_argument("--epochs", type=int, default=100)
ap.add_argument("--workdir", default="/tmp/wsmil-trend")
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

root = Path(args.workdir)
synth = dict(burst_snr_db=(0.0, -10.0), burst_duration=(0.8, 1.0))
if not (root / "train" / "manifest.csv").exists():
    generate_corpus(root / "train", SynthConfig(40, 40, **synth), seed=1)
    generate_corpus(root / "test", SynthConfig(20, 20, prefix="test", **synth), seed=2)

labels = LabelMap("tone", frozenset({"tone"}))


def load(split):
    entries = load_weak_manifest(root / split / "manifest.csv")
    return FeatureCache(root / split / "features", audio_root=root / split).bags(entries, labels)


train_bags, test_bags = load("train"), load("test")
ann = load_strong_annotations(root / "test" / "strong.csv")
truths = [frames_from_annotation(ann[b.id].events if b.id in ann else [], b.M, b.features.frame_hop_seconds)
          for b in test_bags]
test_x = [b.features.frames for b in test_bags]
narrow = ModelConfig(conv_channels=8, gru_units=8, dense_units=8)

print(f"{'loss':<8} {'F1':>6} {'P':>6} {'R':>6}  active share of positive clips (truth {np.mean([t.mean() for t, b in zip(truths, test_bags) if b.Y]):.2f})")
for loss in ("mmm", "max_bce", "fsl"):
    cfg = TrainConfig(loss=loss, epochs=args.epochs, batch_size=40, seed=args.seed,
                      eval_interval=args.epochs, dtype="float32")
    res = train(train_bags, cfg, model_config=narrow, validation=(test_x, truths))
    scores = predict_batched(res.model, test_x)
    share = np.mean([np.mean(s >= 0.5) for s, b in zip(scores, test_bags) if b.Y])
    v = res.history[-1].val
    print(f"{loss:<8} {v.f1:6.3f} {v.precision:6.3f} {v.recall:6.3f}  {share:.2f}")
