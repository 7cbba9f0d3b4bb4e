"""The bundled seeded benchmark: source (internet) and target (AGC) corpora,
three architectures trained with pretrain -> finetune, plus a target-only
ResNeSt baseline with the same target epoch budget."""

from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .detector import ModelSpec, build_model, predict_dataset, pretrain_then_finetune, save_checkpoint, train
from .encoding import UnknownTokenWarning, fit_normalizer, load_schema, write_dataset
from .metrics import benchmark_report, report_row
from .pipeline import balanced_indices, encode_table, features_from_log, stratified_split
from .seeding import derive_seed, sha256_hex
from .traffic_sim import DatasetConfig, build_dataset

log = logging.getLogger(__name__)


@dataclass
class BenchmarkConfig:
    seed: int = 2024
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    target_train_fraction: float = 0.25
    max_source: int | None = 4000  # balanced source flows kept for pretraining
    archs: tuple = ("dnn", "cnn", "resnest")


def prepare_benchmark_data(cfg: BenchmarkConfig, out_dir: Path):
    """Corpora -> features -> balanced/split -> calibrated encodings."""
    ds_cfg = replace(cfg.dataset, out_dir=str(out_dir / "corpus"), seed=derive_seed(cfg.seed, "simulate"))
    corpus = build_dataset(ds_cfg)
    src = features_from_log(out_dir / "corpus" / ds_cfg.source_name)
    tgt = features_from_log(out_dir / "corpus" / ds_cfg.target_name)

    rng = np.random.default_rng(derive_seed(cfg.seed, "balance"))
    src_idx = balanced_indices(src.labels, rng, cfg.max_source)
    tgt_idx = balanced_indices(tgt.labels, rng)
    tr, te = stratified_split(tgt.labels[tgt_idx], cfg.target_train_fraction, rng)
    tgt_train, tgt_test = tgt_idx[tr], tgt_idx[te]

    schema = load_schema()
    src_vecs = [src.vectors[i] for i in src_idx]
    train_vecs = [tgt.vectors[i] for i in tgt_train]
    test_vecs = [tgt.vectors[i] for i in tgt_test]
    # calibration sees training rows of both domains, never the target test rows
    calib = fit_normalizer(src_vecs + train_vecs, schema)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnknownTokenWarning)
        data = {
            "source": encode_table(src_vecs, schema, calib),
            "target_train": encode_table(train_vecs, schema, calib),
            "target_test": encode_table(test_vecs, schema, calib),
        }
    calib.save(out_dir / "calibration.json")
    for name, ds in data.items():
        write_dataset(out_dir / f"{name}.fsds", ds, calib.hash)
    info = {
        "corpus_manifest": corpus,
        "flows": {"source": len(src), "target": len(tgt)},
        "source_balanced": int(len(src_idx)),
        "target_balanced": int(len(tgt_idx)),
        "target_train": int(len(tgt_train)),
        "target_test": int(len(tgt_test)),
        "target_test_kinds": dict(sorted(tgt.kinds(tgt_test).items())),
        "source_kinds": dict(sorted(src.kinds(src_idx).items())),
    }
    return data, info


def run_benchmark(out_dir, cfg: BenchmarkConfig | None = None) -> dict:
    """Run everything and write ``manifest.json``, ``report.csv`` and
    ``report.txt`` plus checkpoints under ``out_dir``. Returns the manifest."""
    cfg = cfg or BenchmarkConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    data, info = prepare_benchmark_data(cfg, out)
    timings = {"data": time.perf_counter() - t0}

    models = []
    for arch in cfg.archs:
        t = time.perf_counter()
        spec = ModelSpec(arch=arch, seed=derive_seed(cfg.seed, f"model:{arch}"))
        model, hist = pretrain_then_finetune(spec, data["source"], data["target_train"])
        save_checkpoint(model, out / f"{arch}.fsnt")
        hist.write_csv(out / f"{arch}.history.csv")
        models.append(model)
        timings[arch] = time.perf_counter() - t
        log.info("trained %s in %.1fs", arch, timings[arch])
    report = benchmark_report(models, data["target_test"])

    # target-only baseline: fresh ResNeSt, same number of target epochs
    t = time.perf_counter()
    spec = ModelSpec(arch="resnest", seed=derive_seed(cfg.seed, "model:resnest"))
    baseline = build_model(spec, data["target_train"].schema_hash)
    train(baseline, data["target_train"], spec, epochs=spec.hyper.finetune_epochs, stage="target_only")
    save_checkpoint(baseline, out / "resnest_target_only.fsnt")
    pred, _ = predict_dataset(baseline, data["target_test"])
    base_row = report_row("resnest_target_only", pred, data["target_test"].y)
    timings["resnest_target_only"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - t0

    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    rows = {r.arch: {"acc_pct": r.acc, "fpr_pct": r.fpr, "dr_pct": r.dr, "confusion": asdict(r.cm)}
            for r in report.rows}
    manifest = {
        "seed": cfg.seed,
        "config_hash": sha256_hex({"seed": cfg.seed, "dataset": cfg.dataset.hashable(),
                                   "target_train_fraction": cfg.target_train_fraction,
                                   "max_source": cfg.max_source, "archs": list(cfg.archs)}),
        "data": info,
        "results": rows,
        "transfer": {
            "resnest_finetuned_acc_pct": rows.get("resnest", {}).get("acc_pct"),
            "resnest_target_only_acc_pct": base_row.acc,
            "target_epochs": ModelSpec().hyper.finetune_epochs,
        },
        "timings_s": {k: round(v, 1) for k, v in timings.items()},
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


if __name__ == "__main__":
    import sys

    logging.basicConfig(level=logging.INFO, format="%(message)s")
    m = run_benchmark(sys.argv[1] if len(sys.argv) > 1 else "benchmark_run")
    print(json.dumps({k: m[k] for k in ("results", "transfer", "timings_s")}, indent=2))
