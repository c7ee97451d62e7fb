"""``mamkit`` command line: preprocess, pretrain, finetune, evaluate, inspect-mask.

Exit codes: 0 success, 1 runtime failure or diverged run, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, Optional, Sequence

from . import __version__
from .checkpoint import load_model, save_model
from .config import RunConfig
from .dataset import (
    INDEX_NAME,
    NoisePool,
    Split,
    Task,
    cache_name,
    entry_to_json,
    inject_noise,
    item_rng,
    load_cached_chunks,
    load_manifest,
    read_audio,
    read_index,
    window_audio,
)
from .dsp import extract, read_feature_cache, resample, write_feature_cache
from .errors import (
    ConfigError,
    DivergedRunError,
    ManifestRowError,
    ManifestSchemaError,
    MamkitError,
    TaskLabelError,
)
from .evaluation import MetricReport, format_table, summarize_runs
from .masking import mask_statistics
from .training import Standardizer, Technique, fit_standardizer, predict, pretrain, run_repetition

log = logging.getLogger("mamkit")

USAGE_ERRORS = (ConfigError, ManifestSchemaError, ManifestRowError, TaskLabelError)


class UsageError(Exception):
    pass


# -- preprocess ----------------------------------------------------------------


def _fingerprint(rc: RunConfig, inject: bool) -> str:
    keys = [k for k in rc.values if k.startswith(("dsp.", "preprocess.", "noise."))]
    parts = {k: str(rc[k]) for k in sorted(keys)}
    parts["inject"] = str(inject)
    parts["seed"] = str(rc["run.seed"])
    return json.dumps(parts, sort_keys=True)


def _source_signature(path: str) -> dict:
    st = os.stat(path)
    return {"size": st.st_size, "mtime_ns": st.st_mtime_ns}


def _process_entry(job) -> dict:
    row, entry, out_dir, rc_values, pool, fingerprint = job
    rc = RunConfig(rc_values)
    cfg = rc.dsp()
    record = {"row": row, "entry": entry_to_json(entry), "fingerprint": fingerprint, "frame_rate": cfg.frame_rate}
    try:
        record["source"] = _source_signature(entry.path)
        clip = resample(read_audio(entry.path), cfg.target_rate)
        if pool is not None:
            clip = inject_noise(clip, pool, item_rng(rc["run.seed"], row))
        windows = window_audio(clip, rc["preprocess.chunk_seconds"], rc["preprocess.step_seconds"])
        names = []
        for i, window in enumerate(windows):
            name = cache_name(entry.path, i)
            write_feature_cache(Path(out_dir) / name, extract(window, rc["preprocess.features"], cfg))
            names.append(name)
        record.update(status="ok", caches=names)
    except Exception as exc:  # recorded per file, see --strict
        record.update(status="error", error=f"{type(exc).__name__}: {exc}", caches=[])
    return record


def _up_to_date(old: Optional[dict], entry, fingerprint: str, out_dir: Path) -> bool:
    if not old or old.get("status") != "ok" or old.get("fingerprint") != fingerprint:
        return False
    if old.get("entry") != entry_to_json(entry):
        return False
    try:
        if old.get("source") != _source_signature(entry.path):
            return False
    except OSError:
        return False
    return all((out_dir / name).exists() for name in old.get("caches", []))


def cmd_preprocess(args, rc: RunConfig) -> int:
    out_dir = Path(args.out)
    entries = load_manifest(args.manifest)
    inject = rc["noise.inject"] == "on" or (rc["noise.inject"] == "auto" and rc["finetune.task"] is Task.RESPIRATORY)
    pool = None
    if inject:
        if not rc["noise.dir"]:
            raise ConfigError("noise injection enabled but noise.dir / --noise-dir is not set")
        pool = NoisePool.from_directory(rc["noise.dir"], rc.dsp().target_rate,
                                        max_gain=rc["noise.max_gain"], max_sources=rc["noise.max_sources"])
        if not pool.clips:
            raise ConfigError(f"noise pool {rc['noise.dir']} contains no .wav files")
    fingerprint = _fingerprint(rc, inject)
    previous = {r["entry"]["path"]: r for r in read_index(out_dir)}
    records: Dict[int, dict] = {}
    jobs = []
    for row, entry in enumerate(entries):
        old = previous.get(entry.path)
        if _up_to_date(old, entry, fingerprint, out_dir):
            records[row] = {**old, "row": row}
        else:
            jobs.append((row, entry, str(out_dir), dict(rc.values), pool, fingerprint))
    workers = rc["run.workers"]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            done = list(ex.map(_process_entry, jobs))
    else:
        done = [_process_entry(job) for job in jobs]
    for record in done:
        records[record["row"]] = record
    with open(out_dir / INDEX_NAME, "w", encoding="utf-8") as fh:
        for row in sorted(records):
            fh.write(json.dumps(records[row], sort_keys=True) + "\n")
    failed = [r for r in records.values() if r["status"] != "ok"]
    n_chunks = sum(len(r["caches"]) for r in records.values())
    print(json.dumps({"files": len(entries), "processed": len(done), "skipped": len(entries) - len(done),
                      "failed": len(failed), "chunks": n_chunks}))
    for r in failed:
        log.error("%s: %s", r["entry"]["path"], r["error"])
    return 1 if failed and args.strict else 0


# -- training commands ---------------------------------------------------------


def _load_chunks(cache: str, splits):
    chunks = load_cached_chunks(cache, splits)
    if not chunks:
        names = ", ".join(s.value for s in splits)
        raise ConfigError(f"no cached chunks for split(s) {names} in {cache}")
    return chunks


def _write_records(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def cmd_pretrain(args, rc: RunConfig) -> int:
    out = Path(args.out)
    pcfg = rc.pretrain()
    if pcfg.technique is Technique.BASELINE:
        raise ConfigError("technique 'baseline' means no pretraining; run finetune without --init")
    corpus = _load_chunks(args.cache, [Split.TRAIN, Split.TRAIN_EXTRA])
    held_out = load_cached_chunks(args.cache, [Split.VALIDATION]) or None
    mcfg = rc.model(input_dim=corpus[0].features.shape[1])
    result = pretrain(corpus, pcfg, mcfg, held_out=held_out)
    _write_records(out / "records.jsonl", [result.record])
    meta = {"seed": pcfg.seed, "epochs": pcfg.epochs, "technique": pcfg.technique.value,
            "phase": "pretrain", "feature_kind": corpus[0].features.kind.name.lower()}
    aux = result.standardizer.arrays()
    save_model(out / "last.mamc", result.state, mcfg, aux, **meta)
    save_model(out / "best.mamc", result.best_state, mcfg, aux, best_epoch=result.record.best_epoch, **meta)
    print(json.dumps({"initial_loss": result.record.step_losses[0], "final_loss": result.record.step_losses[-1],
                      "epochs": pcfg.epochs, "steps": len(result.record.step_losses)}))
    return 0


def _standardizer_from(aux) -> Optional[Standardizer]:
    if "standardizer.mean" in aux and "standardizer.std" in aux:
        return Standardizer.from_arrays(aux)
    return None


def cmd_finetune(args, rc: RunConfig) -> int:
    out = Path(args.out)
    fcfg = rc.finetune()
    task = fcfg.task
    train = _load_chunks(args.cache, task.train_splits)
    val = _load_chunks(args.cache, [Split.VALIDATION])
    test = _load_chunks(args.cache, [Split.TEST])
    mcfg = rc.model(input_dim=train[0].features.shape[1], n_classes=task.n_classes)
    init = None
    standardizer = None
    technique = "baseline"
    if args.init:
        state, stored_cfg, meta, aux = load_model(args.init)
        mcfg = dataclasses.replace(stored_cfg, n_classes=task.n_classes, dropout=mcfg.dropout)
        init = state
        standardizer = _standardizer_from(aux)
        technique = meta.get("technique", "unknown")
    standardizer = standardizer or fit_standardizer(train)
    records = []
    best = None
    last = None
    for r in range(fcfg.repetitions):
        outcome = run_repetition(r, train, val, test, init, fcfg, mcfg, standardizer)
        records.append(outcome.record)
        _write_records(out / "records.jsonl", records)
        rec = outcome.record
        score = (rec.val_metric[rec.best_epoch], -rec.val_loss[rec.best_epoch])
        if best is None or score > best[0]:
            best = (score, outcome.best_state, r)
        last = outcome.last_state
    meta = {"seed": fcfg.seed, "epochs": fcfg.epochs, "technique": technique, "task": task.value,
            "phase": "finetune", "feature_kind": train[0].features.kind.name.lower()}
    aux = standardizer.arrays()
    save_model(out / "best.mamc", best[1], mcfg, aux, repetition=best[2], **meta)
    save_model(out / "last.mamc", last, mcfg, aux, **meta)
    rows = []
    summary = {"task": task.value, "technique": technique, "repetitions": fcfg.repetitions}
    for level in ("chunk_accuracy", "file_accuracy"):
        stats = summarize_runs([rec.test_metric[level] for rec in records], level)
        summary[level] = stats
        rows.append({"task": task.value, "model": f"{meta['feature_kind']} transformer ({level.split('_')[0]})",
                     "technique": technique, **stats})
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    table = format_table(rows)
    (out / "report.txt").write_text(table + "\n")
    print(table)
    return 0


def cmd_evaluate(args, rc: RunConfig) -> int:
    state, mcfg, meta, aux = load_model(args.checkpoint)
    task = Task(args.task or meta.get("task") or rc["finetune.task"].value)
    if mcfg.n_classes != task.n_classes:
        raise ConfigError(f"checkpoint has {mcfg.n_classes} classes, task {task.value} needs {task.n_classes}")
    split = Split(args.split)
    chunks = _load_chunks(args.cache, [split])
    standardizer = _standardizer_from(aux)
    if standardizer is None:
        raise ConfigError(f"{args.checkpoint} carries no standardizer statistics")
    preds = predict(chunks, state, mcfg, standardizer, task)
    report = MetricReport.from_predictions(preds).to_dict()
    report.update(task=task.value, split=split.value, checkpoint=str(args.checkpoint),
                  n_chunks=len(preds), technique=meta.get("technique"))
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        (Path(args.out) / "report.json").write_text(text + "\n")
    print(text)
    return 0


def _first_cached_matrix(path: Path):
    if path.is_dir():
        for record in read_index(path):
            if record.get("status") == "ok" and record.get("caches"):
                return read_feature_cache(path / record["caches"][0])
        found = sorted(path.glob("*.mamf"))
        if not found:
            raise ConfigError(f"{path} contains no feature cache files")
        return read_feature_cache(found[0])
    return read_feature_cache(path)


def cmd_inspect_mask(args, rc: RunConfig) -> int:
    if args.trials < 100:
        raise UsageError("--trials must be at least 100")
    technique = Technique(args.technique)
    if technique is Technique.BASELINE:
        raise UsageError("inspect-mask needs an alteration technique, not baseline")
    features = _first_cached_matrix(Path(args.cache))
    stats = mask_statistics(features, technique.value, args.trials, rc["run.seed"], rc.masking())
    text = json.dumps(stats, indent=2, sort_keys=True)
    if args.out:
        (Path(args.out) / "mask_stats.json").write_text(text + "\n")
    print(text)
    return 0


# -- argument parsing ----------------------------------------------------------


def _shared(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=out_required, help="output / run directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mamkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mamkit {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="resample, window and extract features into a cache")
    _shared(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", choices=["mel", "mfcc"])
    p.add_argument("--task", choices=[t.value for t in Task], help="respiratory enables ward-noise injection")
    p.add_argument("--noise-dir")
    p.add_argument("--strict", action="store_true", help="exit 1 if any file failed")

    p = sub.add_parser("pretrain", help="masked acoustic model pretraining")
    _shared(p)
    p.add_argument("--cache", required=True)
    p.add_argument("--technique", choices=[t.value for t in Technique])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)

    p = sub.add_parser("finetune", help="supervised fine-tuning with repetitions")
    _shared(p)
    p.add_argument("--cache", required=True)
    p.add_argument("--task", choices=[t.value for t in Task])
    p.add_argument("--init", help="pretrained checkpoint; omit for baseline (random) initialisation")
    p.add_argument("--technique", choices=["baseline"], help="baseline = no --init")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--freeze-encoder", action="store_true")

    p = sub.add_parser("evaluate", help="score a checkpoint on a cached split")
    _shared(p, out_required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--task", choices=[t.value for t in Task])
    p.add_argument("--split", choices=[s.value for s in Split], default="test")

    p = sub.add_parser("inspect-mask", help="Monte-Carlo statistics of an alteration")
    _shared(p, out_required=False)
    p.add_argument("--cache", required=True, help="a .mamf file or a cache directory")
    p.add_argument("--technique", required=True, choices=[t.value for t in Technique if t is not Technique.BASELINE])
    p.add_argument("--trials", type=int, default=1000)
    return parser


def _overrides(args) -> Dict[str, str]:
    out: Dict[str, object] = {"run.seed": args.seed, "run.workers": args.workers}
    cmd = args.command
    section = "pretrain" if cmd == "pretrain" else "finetune"
    if cmd == "preprocess":
        out["preprocess.features"] = args.features
        out["finetune.task"] = args.task
        out["noise.dir"] = args.noise_dir
    if cmd in ("pretrain", "finetune"):
        out[f"{section}.epochs"] = args.epochs
        out[f"{section}.batch_size"] = args.batch_size
        out[f"{section}.learning_rate"] = args.lr
    if cmd == "pretrain":
        out["pretrain.technique"] = args.technique
    if cmd == "finetune":
        out["finetune.task"] = args.task
        out["finetune.repetitions"] = args.repetitions
        if args.freeze_encoder:
            out["finetune.freeze_encoder"] = "true"
    # named flags win over --set
    merged: Dict[str, object] = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        merged[key.strip()] = value.strip()
    merged.update({k: v for k, v in out.items() if v is not None})
    return merged


COMMANDS = {
    "preprocess": cmd_preprocess,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "inspect-mask": cmd_inspect_mask,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "finetune" and args.technique == "baseline" and args.init:
            raise UsageError("--technique baseline and --init are mutually exclusive")
        rc = RunConfig.resolve(args.config, _overrides(args))
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            rc.write_snapshot(Path(args.out) / "config.txt")
        return COMMANDS[args.command](args, rc)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mamkit: error: {exc}", file=sys.stderr)
        return 2
    except USAGE_ERRORS as exc:
        print(f"mamkit: config error: {exc}", file=sys.stderr)
        return 2
    except DivergedRunError as exc:
        print(f"mamkit: diverged: {exc}", file=sys.stderr)
        return 1
    except (MamkitError, OSError) as exc:
        print(f"mamkit: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
