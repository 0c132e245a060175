"""Command-line entry point.

Subcommands cover the whole pipeline: rir (one impulse response), synth
(labeled dataset), train, analyze (per-utterance estimates), eval (scored
report against a manifest), cluster (k-means + F1 on exported embeddings).

Conventions: declarative TOML configs with strict key checking; every run
writes an effective-config JSON capturing the resolved settings and seed;
relative paths inside a config resolve against the config file's directory.
Exit codes: 0 success, 2 user/config error, 3 numerical failure. The --seed
flag wins over the config value, which wins over the XANE_SEED variable.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from xane import __version__
from xane.audio import read_wav
from xane.data import load_dataset, make_xfea_loader, melfb_loader
from xane.errors import ConfigError, NumericsError, XaneError
from xane.evaluate import (classification_report, cluster_f1, kmeans,
                           measure_rtf, read_embeddings_csv,
                           regression_report, truth_from_labels,
                           write_embeddings_csv)
from xane.infer import infer_utterance
from xane.manifest import read_manifest
from xane.metrics import clarity, drr, edc, t60_from_edc
from xane.model import REGRESSION_TASKS, ModelConfig, build_model
from xane.nn import load_checkpoint, save_checkpoint
from xane.rir import RoomSpec, simulate_rir, save_rir
from xane.synth import CodecSpec, SynthConfig, build_dataset
from xane.train import TrainHyper, train

log = logging.getLogger("xane")

_SYNTH_KEYS = {"seed", "out_dir", "val_ratio", "clean_dirs", "noise_types",
               "noise_dirs", "counts", "codecs", "snr_range_db",
               "overlap_sir_range_db", "level_range_dbfs", "room_dims_min",
               "room_dims_max", "beta_ranges", "max_order", "pesq_csv"}
_TRAIN_KEYS = {"seed", "out_dir", "train_manifest", "val_manifest", "model",
               "hyper", "features"}
_HYPER_KEYS = {"epochs", "batch_size", "lr", "lr_factor", "lr_patience"}


def _load_toml(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}")


def _check_keys(raw: dict, allowed: set, context: str) -> None:
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown {context} keys: {', '.join(unknown)}")


def _resolve_seed(flag_seed: int | None, cfg_seed) -> int:
    if flag_seed is not None:
        return flag_seed
    if cfg_seed is not None:
        return int(cfg_seed)
    return int(os.environ.get("XANE_SEED", "0"))


def _resolve_path(path: str, base: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base, path)


def _write_effective_config(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _triple(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"expected three comma-separated numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def cmd_rir(args) -> int:
    spec = RoomSpec(dims=_triple(args.dims), beta=args.beta,
                    src=_triple(args.src), mic=_triple(args.mic),
                    max_order=args.max_order, length_s=args.length_s)
    rir = simulate_rir(spec)
    save_rir(rir, args.out)
    seed = _resolve_seed(args.seed, None)
    _write_effective_config(str(args.out) + ".config.json", {
        "command": "rir", "seed": seed, "dims": spec.dims, "beta": spec.beta,
        "src": spec.src, "mic": spec.mic, "max_order": spec.max_order,
        "length_s": spec.length_s, "out": str(args.out)})
    print(f"c50_db {clarity(rir, 50.0):g}")
    print(f"c5_db {clarity(rir, 5.0):g}")
    print(f"t60_ms {t60_from_edc(edc(rir)):g}")
    print(f"drr_db {drr(rir):g}")
    print(f"volume_m3 {spec.volume_m3:g}")
    print(f"beta {spec.beta:g}")
    return 0


def _synth_config(raw: dict, base: str, seed: int) -> SynthConfig:
    _check_keys(raw, _SYNTH_KEYS, "synth config")
    codecs = []
    for c in raw.get("codecs", []):
        _check_keys(c, {"codec_type", "bitrate_kbps", "external_command"}, "codec")
        br = c.get("bitrate_kbps")
        if isinstance(br, list):
            br = tuple(br)
        codecs.append(CodecSpec(codec_type=c["codec_type"], bitrate_kbps=br,
                                external_command=c.get("external_command")))
    kwargs = {}
    for rng_key in ("snr_range_db", "overlap_sir_range_db", "level_range_dbfs",
                    "room_dims_min", "room_dims_max"):
        if rng_key in raw:
            kwargs[rng_key] = tuple(raw[rng_key])
    if "beta_ranges" in raw:
        kwargs["beta_ranges"] = [tuple(r) for r in raw["beta_ranges"]]
    if "noise_types" in raw:
        kwargs["noise_types"] = list(raw["noise_types"])
    if "max_order" in raw:
        kwargs["max_order"] = int(raw["max_order"])
    if "val_ratio" in raw:
        kwargs["val_ratio"] = float(raw["val_ratio"])
    if "pesq_csv" in raw:
        kwargs["pesq_csv"] = _resolve_path(raw["pesq_csv"], base)
    return SynthConfig(
        clean_dirs=[_resolve_path(d, base) for d in raw.get("clean_dirs", [])],
        noise_dirs={t: _resolve_path(d, base)
                    for t, d in raw.get("noise_dirs", {}).items()},
        counts=dict(raw.get("counts", {})),
        codecs=codecs,
        rng_seed=seed,
        **kwargs)


def cmd_synth(args) -> int:
    raw = _load_toml(args.config)
    base = os.path.dirname(os.path.abspath(args.config))
    seed = _resolve_seed(args.seed, raw.get("seed"))
    out_dir = args.out_dir or raw.get("out_dir")
    if not out_dir:
        raise ConfigError("no output directory (set out_dir or pass --out-dir)")
    if not args.out_dir:
        out_dir = _resolve_path(out_dir, base)
    os.makedirs(out_dir, exist_ok=True)
    config = _synth_config(raw, base, seed)
    result = build_dataset(config, out_dir, threads=args.threads)
    _write_effective_config(os.path.join(out_dir, "effective_config.json"), {
        "command": "synth", "seed": seed, "out_dir": out_dir,
        "threads": args.threads, "config": dataclasses.asdict(config)})
    print(f"{result.n_utterances} utterances, {len(result.group_counts)} groups")
    print(f"train manifest: {result.train_manifest}")
    print(f"val manifest: {result.val_manifest}")
    return 0


def _read_index_csv(path: str) -> dict[str, str]:
    base = os.path.dirname(os.path.abspath(path))
    index = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                utt_id, _, rel = line.partition(",")
                if not rel:
                    raise ConfigError(f"bad index row in {path}: {line!r}")
                index[utt_id] = _resolve_path(rel, base)
    except FileNotFoundError:
        raise ConfigError(f"feature index not found: {path}")
    return index


def cmd_train(args) -> int:
    raw = _load_toml(args.config)
    _check_keys(raw, _TRAIN_KEYS, "train config")
    base = os.path.dirname(os.path.abspath(args.config))
    seed = _resolve_seed(args.seed, raw.get("seed"))
    out_dir = args.out_dir or raw.get("out_dir")
    if not out_dir:
        raise ConfigError("no output directory (set out_dir or pass --out-dir)")
    if not args.out_dir:
        out_dir = _resolve_path(out_dir, base)
    os.makedirs(out_dir, exist_ok=True)

    model_raw = dict(raw.get("model", {}))
    for key in ("conv_kernels", "conv_strides"):
        if key in model_raw:
            model_raw[key] = tuple(model_raw[key])
    try:
        cfg = ModelConfig(**model_raw)
    except TypeError as exc:
        raise ConfigError(f"bad [model] section: {exc}")
    hyper_raw = dict(raw.get("hyper", {}))
    _check_keys(hyper_raw, _HYPER_KEYS, "[hyper]")
    hyper = TrainHyper(seed=seed, **hyper_raw)

    for key in ("train_manifest", "val_manifest"):
        if key not in raw:
            raise ConfigError(f"train config needs {key}")
    train_entries = read_manifest(_resolve_path(raw["train_manifest"], base))
    val_entries = read_manifest(_resolve_path(raw["val_manifest"], base))

    if cfg.frontend == "imported":
        feats = raw.get("features", {})
        if "index_csv" not in feats:
            raise ConfigError("imported frontend needs [features] index_csv")
        loader = make_xfea_loader(
            _read_index_csv(_resolve_path(feats["index_csv"], base)))
    else:
        loader = melfb_loader

    log.info("loading %d train / %d val utterances",
             len(train_entries), len(val_entries))
    train_ds = load_dataset(train_entries, loader)
    val_ds = load_dataset(val_entries, loader)
    log.info("training on %d segments (%d validation)", len(train_ds), len(val_ds))

    ck, rows = train(train_ds, val_ds, cfg, hyper,
                     log_path=os.path.join(out_dir, "train_log.csv"))
    ck_path = os.path.join(out_dir, "checkpoint.xckp")
    save_checkpoint(ck, ck_path)
    with open(os.path.join(out_dir, "model.json"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_json() + "\n")
    _write_effective_config(os.path.join(out_dir, "effective_config.json"), {
        "command": "train", "seed": seed, "out_dir": out_dir,
        "train_manifest": raw["train_manifest"],
        "val_manifest": raw["val_manifest"],
        "model": json.loads(cfg.to_json()),
        "hyper": dataclasses.asdict(hyper)})
    print(f"trained {len(rows)} epochs; best val loss {ck.val_loss:.6f} "
          f"at epoch {ck.epoch}")
    print(f"checkpoint: {ck_path}")
    return 0


def _load_model(checkpoint_path: str, model_json_path: str | None, seed: int):
    if model_json_path is None:
        model_json_path = os.path.join(os.path.dirname(checkpoint_path),
                                       "model.json")
    try:
        with open(model_json_path, encoding="utf-8") as fh:
            cfg = ModelConfig.from_json(fh.read())
    except FileNotFoundError:
        raise ConfigError(f"model config not found: {model_json_path}")
    ck = load_checkpoint(checkpoint_path)
    model, _ = build_model(cfg, seed)
    model.load_state(ck.tensors)
    model.train(False)
    return model, ck


def _estimate_json(utt_id: str, est) -> str:
    payload = {"id": utt_id}
    payload.update({task: est.regression[task] for task in REGRESSION_TASKS})
    payload.update({"noise_type": est.noise_type, "codec_type": est.codec_type,
                    "overlap": est.overlap})
    return json.dumps(payload)


def cmd_analyze(args) -> int:
    model, ck = _load_model(args.checkpoint, args.model_config,
                            _resolve_seed(args.seed, None))
    ids, embeddings = [], []
    audio_s = proc_s = 0.0
    for path in args.wavs:
        try:
            w = read_wav(path)
            t0 = time.perf_counter()
            est = infer_utterance(model, w, ck.task_stats)
            proc_s += time.perf_counter() - t0
        except XaneError as exc:
            log.warning("skipping %s: %s", path, exc)
            continue
        audio_s += w.duration_s
        utt_id = os.path.splitext(os.path.basename(path))[0]
        ids.append(utt_id)
        embeddings.append(est.embedding)
        print(_estimate_json(utt_id, est))
    if args.embeddings and ids:
        write_embeddings_csv(args.embeddings, ids, np.stack(embeddings))
    if audio_s > 0.0:
        # single-pass wall-clock RTF
        print(f"RTF {proc_s / audio_s:.4f} over {audio_s:.1f} s "
              f"({len(ids)} utterances)")
    return 0


def cmd_eval(args) -> int:
    model, ck = _load_model(args.checkpoint, args.model_config,
                            _resolve_seed(args.seed, None))
    entries = read_manifest(args.manifest)
    if not entries:
        raise ConfigError(f"empty manifest: {args.manifest}")
    est_reg, est_cls, truth_reg, truth_cls = {}, {}, {}, {}
    rtf_waveforms = []
    for entry in entries:
        w = read_wav(entry.degraded)
        est = infer_utterance(model, w, ck.task_stats)
        est_reg[entry.id] = est.regression
        est_cls[entry.id] = {"noise_type": est.noise_type,
                             "codec_type": est.codec_type,
                             "overlap": est.overlap}
        truth_reg[entry.id] = truth_from_labels(entry.labels)
        truth_cls[entry.id] = {"noise_type": entry.labels.noise_type,
                               "codec_type": entry.labels.codec_type,
                               "overlap": entry.labels.overlap}
        if sum(x.duration_s for x in rtf_waveforms) < 12.0:
            rtf_waveforms.append(w)

    mae = regression_report(est_reg, truth_reg)
    f1 = classification_report(est_cls, truth_cls)
    rtf = None
    if sum(x.duration_s for x in rtf_waveforms) >= 10.0:
        rtf = measure_rtf(model, rtf_waveforms, ck.task_stats)

    print(f"{'task':<14} {'MAE':>10}")
    for task in REGRESSION_TASKS:
        val = "n/a" if mae[task] is None else f"{mae[task]:.4f}"
        print(f"{task:<14} {val:>10}")
    print(f"{'task':<14} {'F1 %':>10}")
    for task, score in f1.items():
        print(f"{task:<14} {score:>10.2f}")
    if rtf is not None:
        print(f"RTF {rtf:.4f}")

    report = {"n_utterances": len(entries), "regression_mae": mae,
              "classification_f1": f1, "rtf": rtf,
              "seed": _resolve_seed(args.seed, None)}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        print(json.dumps(report, sort_keys=True))
    return 0


def cmd_cluster(args) -> int:
    ids, x = read_embeddings_csv(args.embeddings)
    labels_by_id = {}
    with open(args.labels, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            utt_id, _, label = line.partition(",")
            labels_by_id[utt_id] = label
    missing = [u for u in ids if u not in labels_by_id]
    if missing:
        raise ConfigError(f"no label for utterances: {missing[:4]}")
    truth = [labels_by_id[u] for u in ids]
    result = kmeans(x, args.k, seed=_resolve_seed(args.seed, None),
                    restarts=args.restarts)
    score = cluster_f1(result.assignments, truth)
    print(json.dumps({"k": args.k, "n": len(ids),
                      "inertia": result.inertia, "f1_percent": score}))
    return 0


def main(argv: list[str] | None = None) -> int:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="rng seed (default: config value, then $XANE_SEED)")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads for data-parallel stages")
    common.add_argument("-v", "--verbose", action="count", default=0)

    ap = argparse.ArgumentParser(prog="xane", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rir", parents=[common],
                       help="simulate one room impulse response")
    p.add_argument("--dims", required=True, help="room size, e.g. 5,4,3")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--mic", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-order", type=int, default=None)
    p.add_argument("--length-s", type=float, default=None)
    p.set_defaults(func=cmd_rir)

    p = sub.add_parser("synth", parents=[common],
                       help="synthesize a labeled dataset")
    p.add_argument("config")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("config")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", parents=[common],
                       help="estimate acoustic parameters for wav files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--model-config", default=None)
    p.add_argument("--embeddings", default=None,
                   help="also write an id + 128-d embeddings CSV")
    p.add_argument("wavs", nargs="+")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("eval", parents=[common],
                       help="score a checkpoint against a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--model-config", default=None)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cluster", parents=[common],
                       help="k-means + F1 on an embeddings CSV")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--labels", required=True, help="CSV of id,label rows")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--restarts", type=int, default=10)
    p.set_defaults(func=cmd_cluster)

    args = ap.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericsError as exc:
        log.error("%s", exc)
        return 3
    except XaneError as exc:
        log.error("%s", exc)
        return 2
    except OSError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
