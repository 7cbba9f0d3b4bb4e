"""Command-line entry point: simulate -> features -> encode -> train ->
finetune -> evaluate -> detect, plus the bundled benchmark.

Options come from three places, later ones winning: built-in defaults, the
matching section of an INI ``--config`` file, then command-line flags. Keys in
the file are the flag names (dashes or underscores). A ``[run]`` section holds
the top-level ``seed``; any stage seed not given explicitly is derived from it
with ``derive_seed(seed, stage)``.

Exit codes: 0 ok, 1 usage, 2 data/format, 3 numeric failure. Failures print a
single JSON line ``flowsense-error {...}`` on stderr.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
import warnings
from collections import Counter
from dataclasses import fields, replace
from pathlib import Path

from . import __version__
from .detector import (ARCHS, CheckpointError, HomogeneityError, Hyper, ModelSpec, SchemaMismatch,
                       TrainingDiverged, build_model, finetune, load_checkpoint, predict, save_checkpoint,
                       train)
from .encoding import (Calibration, DatasetFormatError, SchemaError, UnknownTokenWarning, encode_vector,
                       fit_normalizer, load_schema, read_dataset, write_dataset)
from .flows import FeatureExtractor, iter_flows, read_features_csv, write_features_csv
from .kdd import read_kdd_csv
from .metrics import UndefinedMetric, benchmark_report
from .pipeline import encode_table
from .records import LogFormatError, iter_log
from .seeding import derive_seed, sha256_hex
from .traffic_sim import DatasetConfig, IntegrationDiverged, build_dataset

log = logging.getLogger("flowsense")

DEFAULT_SEED = 2024


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_list(text: str) -> tuple:
    return tuple(s.strip() for s in str(text).split(",") if s.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "yes", "true", "on"):
        return True
    if v in ("0", "no", "false", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


# (name, type, default, required, help); type "flag" is a boolean switch
_DATASET_OPTS = [
    (f.name, {"attack_kinds": _csv_list}.get(f.name, type(f.default)), None, False,
     f"corpus setting (default {f.default!r})")
    for f in fields(DatasetConfig) if f.name not in ("out_dir", "source_name", "target_name", "manifest_name")
]

OPTIONS = {
    "simulate": [("out", str, None, True, "output directory")] + _DATASET_OPTS,
    "features": [
        ("in", str, None, True, "packet log (JSONL), or KDD CSV with --input-format kdd"),
        ("schema", str, None, False, "schema JSON (default: bundled v1)"),
        ("out", str, None, True, "feature CSV to write"),
        ("input_format", str, "log", False, "log | kdd"),
    ],
    "encode": [
        ("in", str, None, True, "feature CSV"),
        ("schema", str, None, False, "schema JSON (default: bundled v1)"),
        ("calib", str, None, True, "calibration JSON (read, or written with --fit-calib)"),
        ("out", str, None, True, "FSDS dataset to write"),
        ("fit_calib", "flag", False, False, "fit the calibration on this CSV and save it"),
    ],
    "train": [
        ("arch", str, None, True, "|".join(ARCHS)),
        ("data", str, None, True, "FSDS training set"),
        ("seed", int, None, False, "model seed (default: derived from the run seed)"),
        ("out", str, None, True, "checkpoint to write; history goes to <out stem>.history.csv"),
        ("epochs", int, Hyper.epochs, False, "epochs"),
        ("lr", float, Hyper.lr, False, "learning rate"),
        ("batch_size", int, Hyper.batch_size, False, "mini-batch size"),
    ],
    "finetune": [
        ("ckpt", str, None, True, "pretrained checkpoint"),
        ("data", str, None, True, "FSDS target-domain training set"),
        ("freeze", str, "default", False, "default | none | all | comma-separated layer names"),
        ("out", str, None, True, "checkpoint to write"),
        ("seed", int, None, False, "shuffle seed (default: the checkpoint's train seed)"),
        ("epochs", int, Hyper.finetune_epochs, False, "epochs"),
        ("lr", float, Hyper.lr * Hyper.finetune_lr_scale, False, "learning rate"),
        ("batch_size", int, Hyper.batch_size, False, "mini-batch size"),
    ],
    "evaluate": [
        ("ckpts", _csv_list, None, True, "comma-separated checkpoints, one report row each"),
        ("data", str, None, True, "FSDS test set"),
        ("out", str, None, True, "report CSV"),
    ],
    "detect": [
        ("ckpt", str, None, True, "checkpoint"),
        ("in", str, None, True, "packet log (JSONL)"),
        ("schema", str, None, False, "schema JSON (default: bundled v1)"),
        ("calib", str, None, True, "calibration JSON"),
        ("out", str, None, True, "verdict JSONL to write"),
    ],
    "benchmark": [("out", str, None, True, "output directory")],
}


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", dest="sub_config", metavar="F", help="INI run config")
    p = _Parser(prog="flowsense", description="Flow-based anomaly detection for AGC traffic.")
    p.add_argument("--version", action="version", version=f"flowsense {__version__}")
    p.add_argument("--config", metavar="F", help="INI run config")
    p.add_argument("--seed", type=int, help=f"run seed all stage seeds derive from (default {DEFAULT_SEED})")
    p.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for cmd, opts in OPTIONS.items():
        sp = sub.add_parser(cmd, parents=[common], help=f"{cmd} stage")
        for name, typ, default, required, hlp in opts:
            flag = "--" + name.replace("_", "-")
            if typ == "flag":
                sp.add_argument(flag, dest=name, action="store_const", const=True, default=None, help=hlp)
            else:
                sp.add_argument(flag, dest=name, type=typ, default=None, help=hlp)
    return p


def _read_config(path) -> dict:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise UsageError(f"malformed config {path}: {exc}".replace("\n", " ")) from None
    out = {}
    for section in cp.sections():
        if section != "run" and section not in OPTIONS:
            raise UsageError(f"unknown config section [{section}]")
        known = {"seed"} if section == "run" else {o[0] for o in OPTIONS[section]}
        vals = {}
        for key, value in cp.items(section):
            k = key.replace("-", "_")
            if k not in known:
                raise UsageError(f"unknown config key {key!r} in [{section}]")
            vals[k] = value
        out[section] = vals
    return out


def _resolve(cmd: str, ns: argparse.Namespace, file_cfg: dict) -> dict:
    section = file_cfg.get(cmd, {})
    resolved = {}
    for name, typ, default, required, _ in OPTIONS[cmd]:
        value = getattr(ns, name)
        if value is None and name in section:
            raw = section[name]
            try:
                value = _bool(raw) if typ == "flag" else typ(raw)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"[{cmd}] {name}: {exc}") from None
        if value is None:
            value = default
        if value is None and required:
            raise UsageError(f"{cmd}: --{name.replace('_', '-')} is required")
        resolved[name] = value
    return resolved


# ---------------------------------------------------------------------------
# subcommands


def _schema(path):
    return load_schema(path) if path else load_schema()


def _features_meta(csv_path) -> Path:
    return Path(str(csv_path) + ".meta.json")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _warn_unknown(unknown: Counter):
    for (block, token), n in sorted(unknown.items()):
        log.warning("unknown %s token %r in %d rows mapped to the fallback", block, token, n)


def cmd_simulate(o, seed):
    changes = {k: v for k, v in o.items() if k != "out" and v is not None}
    changes.setdefault("seed", derive_seed(seed, "simulate"))
    cfg = replace(DatasetConfig(), out_dir=o["out"], **changes)
    log.info("dataset config: %s", json.dumps(cfg.hashable(), sort_keys=True))
    manifest = build_dataset(cfg)
    log.info("wrote %s: %s", o["out"], json.dumps(manifest["counts"], sort_keys=True))


def cmd_features(o, seed):
    schema = _schema(o["schema"])
    if o["input_format"] == "kdd":
        vectors = read_kdd_csv(o["in"])
    elif o["input_format"] == "log":
        ex = FeatureExtractor()
        vectors = (ex.push(flow) for flow in iter_flows(iter_log(o["in"])))
    else:
        raise UsageError(f"--input-format must be log or kdd, not {o['input_format']!r}")
    n = write_features_csv(o["out"], vectors)
    _write_json(_features_meta(o["out"]), {"count": n, "schema_hash": schema.hash})
    log.info("wrote %d feature rows to %s", n, o["out"])


def cmd_encode(o, seed):
    schema = _schema(o["schema"])
    meta = _features_meta(o["in"])
    if meta.exists():
        got = json.loads(meta.read_text(encoding="utf-8")).get("schema_hash")
        if got != schema.hash:
            raise SchemaError(f"{o['in']} was produced under schema {str(got)[:12]}, not {schema.hash[:12]}")
    if not o["fit_calib"] and not Path(o["calib"]).exists():
        raise UsageError(f"calibration {o['calib']} does not exist; pass --fit-calib on the training CSV")
    vectors = read_features_csv(o["in"])
    if not vectors:
        raise DatasetFormatError(f"{o['in']} has no feature rows")
    if o["fit_calib"]:
        calib = fit_normalizer(vectors, schema)
        calib.save(o["calib"])
        log.info("fitted calibration on %d rows -> %s", len(vectors), o["calib"])
    else:
        calib = Calibration.load(o["calib"])
    unknown = Counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnknownTokenWarning)
        ds = encode_table(vectors, schema, calib, unknown)
    _warn_unknown(unknown)
    write_dataset(o["out"], ds, calib.hash)
    log.info("encoded %d rows (%d anomalous) -> %s", len(ds), int(ds.y.sum()), o["out"])


def _hyper(o, **extra) -> Hyper:
    return replace(Hyper(), lr=o["lr"], batch_size=o["batch_size"], **extra)


def cmd_train(o, seed):
    arch = o["arch"]
    if arch not in ARCHS:
        raise UsageError(f"--arch must be one of {', '.join(ARCHS)}")
    model_seed = o["seed"] if o["seed"] is not None else derive_seed(seed, f"train:{arch}")
    log.info("model seed %d", model_seed)
    ds = read_dataset(o["data"])
    spec = ModelSpec(arch=arch, seed=model_seed, hyper=_hyper(o, epochs=o["epochs"]))
    model = build_model(spec, ds.schema_hash)
    hist = train(model, ds, spec)
    save_checkpoint(model, o["out"])
    hist.write_csv(Path(o["out"]).with_suffix(".history.csv"))
    log.info("trained %s for %d epochs: final loss %.6g, train acc %.4f -> %s",
             arch, o["epochs"], hist.loss[-1] if hist.loss else float("nan"),
             hist.train_acc[-1] if hist.train_acc else float("nan"), o["out"])


def cmd_finetune(o, seed):
    model = load_checkpoint(o["ckpt"])
    ds = read_dataset(o["data"])
    freeze_opt = o["freeze"]
    if freeze_opt == "default":
        freeze = None
    elif freeze_opt == "none":
        freeze = ()
    elif freeze_opt == "all":
        freeze = model.layer_names
    else:
        freeze = _csv_list(freeze_opt)
    shuffle_seed = o["seed"] if o["seed"] is not None else model.train_seed
    try:
        spec = ModelSpec(arch=model.arch, seed=shuffle_seed, hyper=_hyper(o), freeze=freeze)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    log.info("finetune seed %d, frozen layers %s", shuffle_seed, list(spec.freeze_layers))
    hist = finetune(model, ds, spec, epochs=o["epochs"], lr=o["lr"])
    save_checkpoint(model, o["out"])
    hist.write_csv(Path(o["out"]).with_suffix(".history.csv"))
    log.info("finetuned %s -> %s", model.arch, o["out"])


def cmd_evaluate(o, seed):
    ds = read_dataset(o["data"])
    models = [load_checkpoint(p, ds.schema_hash) for p in o["ckpts"]]
    report = benchmark_report(models, ds)
    Path(o["out"]).write_text(report.to_csv(), encoding="utf-8")
    sys.stdout.write(report.to_text())


def _verdict(flow, cls: int, prob: float) -> str:
    return json.dumps({
        "flow": {"src_ip": flow.initiator[0], "src_port": flow.initiator[1],
                 "dst_ip": flow.responder[0], "dst_port": flow.responder[1], "proto": flow.proto},
        "first_ts": flow.first_ts,
        "last_ts": flow.last_ts,
        "class": "anomalous" if cls == 1 else "normal",
        "probability": prob,
    }, sort_keys=True)


def cmd_detect(o, seed):
    schema = _schema(o["schema"])
    calib = Calibration.load(o["calib"])
    if calib.schema_hash != schema.hash:
        raise SchemaError("calibration was fitted under a different schema")
    model = load_checkpoint(o["ckpt"], schema.hash)
    ex = FeatureExtractor()
    unknown = Counter()
    n = flagged = 0
    with open(o["out"], "w", encoding="utf-8", newline="\n") as out, warnings.catch_warnings():
        warnings.simplefilter("ignore", UnknownTokenWarning)
        # verdicts are written as each flow closes
        for flow in iter_flows(iter_log(o["in"])):
            vec = encode_vector(ex.push(flow), schema, calib, unknown)
            cls, prob = predict(model, model.prepare(vec[None])[0])
            out.write(_verdict(flow, cls, prob) + "\n")
            out.flush()
            n += 1
            flagged += cls
    _warn_unknown(unknown)
    log.info("%d flows, %d flagged anomalous -> %s", n, flagged, o["out"])


def cmd_benchmark(o, seed):
    from .benchmark import BenchmarkConfig, run_benchmark

    m = run_benchmark(o["out"], BenchmarkConfig(seed=seed))
    sys.stdout.write(Path(o["out"], "report.txt").read_text(encoding="utf-8"))
    log.info("transfer %s; timings %s", json.dumps(m["transfer"], sort_keys=True),
             json.dumps(m["timings_s"], sort_keys=True))


COMMANDS = {
    "simulate": cmd_simulate, "features": cmd_features, "encode": cmd_encode, "train": cmd_train,
    "finetune": cmd_finetune, "evaluate": cmd_evaluate, "detect": cmd_detect, "benchmark": cmd_benchmark,
}

_DATA_ERRORS = (LogFormatError, DatasetFormatError, SchemaError, SchemaMismatch, HomogeneityError,
                CheckpointError, UndefinedMetric, OSError, json.JSONDecodeError, ValueError, KeyError)
_NUMERIC_ERRORS = (TrainingDiverged, IntegrationDiverged, FloatingPointError, ArithmeticError)


def _fail(code: int, kind: str, exc) -> int:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    sys.stderr.write("flowsense-error " + json.dumps(
        {"code": code, "kind": kind, "type": type(exc).__name__, "message": msg}) + "\n")
    return code


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
        logging.basicConfig(level=ns.log_level, stream=sys.stderr,
                            format="%(asctime)s %(levelname)s %(message)s", force=True)
        if ns.command is None:
            raise UsageError("missing subcommand; see flowsense --help")
        cfg_path = ns.sub_config or ns.config
        file_cfg = _read_config(cfg_path) if cfg_path else {}
        seed = ns.seed
        if seed is None:
            seed = int(file_cfg.get("run", {}).get("seed", DEFAULT_SEED))
        opts = _resolve(ns.command, ns, file_cfg)
        log.info("resolved config: %s", json.dumps(
            {"command": ns.command, "config_file": cfg_path, "seed": seed, "options": opts},
            sort_keys=True, default=list))
        log.info("config hash %s", sha256_hex({"command": ns.command, "seed": seed,
                                               "options": {k: list(v) if isinstance(v, tuple) else v
                                                           for k, v in opts.items()}})[:16])
        COMMANDS[ns.command](opts, seed)
        return 0
    except UsageError as exc:
        return _fail(1, "usage", exc)
    except _NUMERIC_ERRORS as exc:
        return _fail(3, "numeric", exc)
    except _DATA_ERRORS as exc:
        return _fail(2, "data", exc)


if __name__ == "__main__":
    sys.exit(main())
