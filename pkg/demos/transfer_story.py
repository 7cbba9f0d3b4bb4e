"""Pretrain on internet-style traffic, adapt to AGC traffic, compare with
training on the small AGC set alone.

Run with: python3 demos/transfer_story.py [out_dir]
A reduced corpus keeps this to a minute or two; the full seeded benchmark is
`flowsense benchmark --out DIR`.
"""

import sys
import tempfile
from dataclasses import replace
from pathlib import Path

from flowsense.benchmark import BenchmarkConfig, prepare_benchmark_data
from flowsense.detector import (
    DEFAULT_FREEZE, Hyper, ModelSpec, accuracy, build_model, finetune, train,
)
from flowsense.traffic_sim import DatasetConfig


def main(out_dir):
    cfg = BenchmarkConfig(seed=7, dataset=replace(DatasetConfig(), source_horizon=512.0, target_horizon=768.0),
                          max_source=1500)
    data, info = prepare_benchmark_data(cfg, Path(out_dir))
    print(f"source flows {info['source_balanced']} (balanced), target train {info['target_train']}, "
          f"target test {info['target_test']}")
    print(f"target test attack mix: {info['target_test_kinds']}")

    hyper = Hyper(epochs=10, finetune_epochs=8)
    spec = ModelSpec(arch="resnest", seed=11, hyper=hyper)

    model = build_model(spec, data["source"].schema_hash)
    train(model, data["source"], spec)
    before = accuracy(model, data["target_test"])
    finetune(model, data["target_train"], spec)
    after = accuracy(model, data["target_test"])
    print(f"pretrained only: target ACC {100 * before:.1f}%")
    print(f"after finetune (frozen {', '.join(DEFAULT_FREEZE['resnest'])}): target ACC {100 * after:.1f}%")

    alone = build_model(spec, data["source"].schema_hash)
    train(alone, data["target_train"], spec, epochs=hyper.finetune_epochs, stage="target_only")
    print(f"target-only, same {hyper.finetune_epochs} epochs: target ACC {100 * accuracy(alone, data['target_test']):.1f}%")


if __name__ == "__main__":
    if len(sys.argv) > 1:
        main(sys.argv[1])
    else:
        with tempfile.TemporaryDirectory() as d:
            main(d)
