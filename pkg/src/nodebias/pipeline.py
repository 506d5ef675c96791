"""Experiment stages: prepare -> train -> analyze -> plot (and DTMC export).

Each stage reads the previous stage's files from the output directory, so
any stage can be re-run on its own. Result files are deterministic; wall
clock timings go to ``timings.json`` only.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .analysis import build_report, compare_regimes, variance_table
from .config import ExperimentConfig
from .data import (
    Dataset,
    ZScoreNormalizer,
    load_csv,
    normalize_apply,
    normalize_fit,
    rank_features,
    split,
    synth_train_test,
    truncate_to_balance,
)
from .errors import ConfigError, DataError, NumericError, TrainingDivergedError
from .model import load_model, save_model, validate_model
from .perturb import ALL_NODES, NoiseSweep, SeedInput, export_dtmc, forward
from .plot import plot_reports
from .report import VARIANCE_HEADER, summary_dict, variance_rows, write_csv, write_json, write_report_tables
from .train import Run, RunSet, train_one

log = logging.getLogger(__name__)

LOCK_NAME = ".nodebias.lock"


@contextmanager
def locked(out: Path):
    """Refuse concurrent invocations against one output directory."""
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"{out} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _update_json(path: Path, key: str, value) -> None:
    doc = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
    doc[key] = value
    write_json(path, doc)


def _stage(out: Path, name: str, **fields):
    _update_json(out / "manifest.json", "tool_version", __version__)
    _update_json(out / "manifest.json", name, {"status": "running", **fields})


def _finish(out: Path, name: str, started: float, **fields):
    _update_json(out / "manifest.json", name, {"status": "complete", **fields})
    _update_json(out / "timings.json", name, round(time.perf_counter() - started, 3))


# -- prepare ----------------------------------------------------------------------

def load_source(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    src = cfg.dataset
    if src.kind == "synthetic":
        return synth_train_test(src.synthetic, src.test_head_count, src.test_tail_count)
    if src.kind == "csv":
        return split(load_csv(src.csv), cfg.split)
    train = load_csv(src.train_csv)
    test = load_csv(src.test_csv, class_names=train.class_names)
    if test.feature_names != train.feature_names:
        raise DataError("train and test CSV headers differ")
    return train, test


def source_fingerprint(train: Dataset, test: Dataset) -> str:
    return hashlib.sha256((train.fingerprint() + test.fingerprint()).encode()).hexdigest()


def cmd_prepare(cfg: ExperimentConfig, out: Path) -> dict:
    started = time.perf_counter()
    out.mkdir(parents=True, exist_ok=True)
    _stage(out, "prepare", config=cfg.echo())
    train, test = load_source(cfg)
    fingerprint = source_fingerprint(train, test)
    k = cfg.feature_select_k if cfg.feature_select_k is not None else train.n_features
    if k > train.n_features:
        raise DataError(f"feature_select_k={k} exceeds the {train.n_features} available features")
    selected = sorted(rank_features(train, k)) if train.n_classes == 2 else list(range(k))
    train, test = train.select_features(selected), test.select_features(selected)
    truncated = truncate_to_balance(train, cfg.truncation.seed)
    nz = normalize_fit(train)

    train.to_csv(out / "train.csv")
    test.to_csv(out / "test.csv")
    truncated.to_csv(out / "train_truncated.csv")
    write_json(out / "normalizer.json", {
        **nz.to_dict(train.feature_names),
        "class_names": list(train.class_names),
        "selected_columns": selected,
    })
    write_csv(out / "variance_table.csv", VARIANCE_HEADER,
              [*variance_rows("full", variance_table(train)),
               *variance_rows("truncated", variance_table(truncated))])
    info = {
        "config": cfg.echo(),
        "dataset_fingerprint": fingerprint,
        "selected_features": list(train.feature_names),
        "class_counts": {
            "train": train.class_counts().tolist(),
            "train_truncated": truncated.class_counts().tolist(),
            "test": test.class_counts().tolist(),
        },
    }
    _update_json(out / "manifest.json", "dataset_fingerprint", fingerprint)
    _finish(out, "prepare", started, **info)
    return info


@dataclass(frozen=True)
class Prepared:
    train: Dataset
    test: Dataset
    truncated: Dataset
    normalizer: ZScoreNormalizer

    @property
    def train_n(self) -> Dataset:
        return normalize_apply(self.normalizer, self.train)

    @property
    def test_n(self) -> Dataset:
        return normalize_apply(self.normalizer, self.test)

    @property
    def truncated_n(self) -> Dataset:
        return normalize_apply(self.normalizer, self.truncated)


def load_prepared(out: Path) -> Prepared:
    need = ["train.csv", "test.csv", "train_truncated.csv", "normalizer.json"]
    missing = [str(out / n) for n in need if not (out / n).exists()]
    if missing:
        raise DataError(f"prepared files missing (run 'prepare' first): {missing}")
    doc = json.loads((out / "normalizer.json").read_text(encoding="utf-8"))
    names = doc["class_names"]
    return Prepared(
        load_csv(out / "train.csv", class_names=names),
        load_csv(out / "test.csv", class_names=names),
        load_csv(out / "train_truncated.csv", class_names=names),
        ZScoreNormalizer.from_dict(doc),
    )


def _training_set(cfg: ExperimentConfig, prep: Prepared, regime: str, seed: int) -> Dataset:
    if regime == "full":
        return prep.train_n
    if cfg.truncation.per_network:
        return truncate_to_balance(prep.train_n, cfg.truncation.seed + seed)
    return prep.truncated_n


def _regime_fingerprint(cfg: ExperimentConfig, prep: Prepared, regime: str) -> str:
    if regime == "full" or cfg.truncation.per_network:
        return prep.train_n.fingerprint()
    return prep.truncated_n.fingerprint()


# -- train ------------------------------------------------------------------------

def cmd_train(cfg: ExperimentConfig, out: Path, seeds: Sequence[int] | None = None,
              regimes: Sequence[str] | None = None) -> list[str]:
    """Train and persist one model per (regime, seed).

    Returns descriptions of seeds whose training diverged; the remaining
    seeds are still trained and saved.
    """
    started = time.perf_counter()
    seeds = sorted(cfg.seeds if seeds is None else seeds)
    regimes = list(cfg.regimes if regimes is None else regimes)
    if not regimes:
        raise ConfigError("no regimes to train")
    _stage(out, "train", seeds=seeds, regimes=regimes)
    prep = load_prepared(out)
    test_n = prep.test_n
    failures, validation = [], {}
    for regime in regimes:
        model_dir = out / "models" / regime
        model_dir.mkdir(parents=True, exist_ok=True)
        summaries = {}
        for s in seeds:
            ds = _training_set(cfg, prep, regime, s)
            try:
                net = train_one(ds, replace(cfg.train, seed=s))
            except TrainingDivergedError as exc:
                log.error("regime %s seed %d: %s", regime, s, exc)
                failures.append(f"{regime}/seed_{s}: {exc}")
                continue
            save_model(net.with_meta(regime=regime), model_dir / f"seed_{s}.json")
            summaries[str(s)] = validate_model(net, test_n).to_dict()
        write_json(model_dir / "validation.json", summaries)
        validation[regime] = summaries
    _update_json(out / "manifest.json", "validation", validation)
    _finish(out, "train", started, seeds=seeds, regimes=regimes, failures=failures)
    return failures


def load_runset(cfg: ExperimentConfig, out: Path, prep: Prepared, regime: str,
                seeds: Sequence[int]) -> RunSet:
    paths = {s: out / "models" / regime / f"seed_{s}.json" for s in sorted(seeds)}
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise DataError(f"missing model files: {missing}")
    expected = _regime_fingerprint(cfg, prep, regime)
    runs = []
    for s, p in paths.items():
        net = load_model(p)
        if regime == "full" or not cfg.truncation.per_network:
            if net.meta.get("dataset_fingerprint") != expected:
                raise DataError(f"{p} was trained on different data; re-run 'train'")
        runs.append(Run(s, net))
    return RunSet(tuple(runs), expected, cfg.train, regime)


# -- analyze ----------------------------------------------------------------------

def cmd_analyze(cfg: ExperimentConfig, out: Path, seeds: Sequence[int] | None = None,
                regimes: Sequence[str] | None = None, workers: int = 1) -> dict:
    started = time.perf_counter()
    seeds = sorted(cfg.seeds if seeds is None else seeds)
    regimes = [r for r in ("full", "truncated") if r in (cfg.regimes if regimes is None else regimes)]
    if not regimes:
        raise ConfigError("no regimes to analyse")
    _stage(out, "analyze", seeds=seeds, regimes=regimes)
    prep = load_prepared(out)
    test_n = prep.test_n
    sw = cfg.sweep
    reports, validation = [], {}
    for regime in regimes:
        runset = load_runset(cfg, out, prep, regime, seeds)
        raw = prep.train if regime == "full" else prep.truncated
        reports.append(build_report(runset, test_n, sw.step, sw.max_level, sw.class_polarity,
                                    sw.node_polarities, sw.budget, sw.mc_samples, sw.mc_seed,
                                    raw_train=raw, workers=workers))
        validation[regime] = {str(r.seed): validate_model(r.network, test_n).to_dict()
                              for r in runset.runs}
    comparison = compare_regimes(*reports) if len(reports) == 2 else None
    write_report_tables(out, reports, test_n.feature_names, comparison)
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    fingerprints = {"dataset": manifest.get("dataset_fingerprint"),
                    "test": test_n.fingerprint(),
                    **{f"train_{r.regime}": r.dataset_fingerprint for r in reports}}
    summary = summary_dict(cfg.echo(), fingerprints, reports, comparison, validation,
                           test_n.feature_names)
    write_json(out / "summary.json", summary)
    _finish(out, "analyze", started, seeds=seeds, regimes=regimes)
    return summary


def cmd_plot(out: Path) -> list[Path]:
    started = time.perf_counter()
    paths = plot_reports(out)
    if (out / "manifest.json").exists():
        _finish(out, "plot", started, files=[p.name for p in paths])
    return paths


def cmd_export_dtmc(cfg: ExperimentConfig, out: Path, regime: str, network_seed: int,
                    seed_id: str, node: int | str, level: int, polarity: str) -> Path:
    """Export one (network, test seed, target, level) preservation experiment."""
    prep = load_prepared(out)
    test_n = prep.test_n
    runset = load_runset(cfg, out, prep, regime, [network_seed])
    net = runset.runs[0].network
    if seed_id not in test_n.ids:
        raise DataError(f"unknown test seed id {seed_id!r}")
    row = test_n.ids.index(seed_id)
    x = test_n.X[row]
    label = int(test_n.y[row])
    seed = SeedInput(seed_id, x, label, forward(net, x).label == label)
    if not seed.correctly_classified:
        raise DataError(f"test seed {seed_id!r} is misclassified by {regime}/seed_{network_seed}")
    if node != ALL_NODES and not 0 <= int(node) < net.input_dim:
        raise DataError(f"node index {node} outside 0..{net.input_dim - 1}")
    target = ALL_NODES if node == ALL_NODES else int(node)
    sweep = NoiseSweep(cfg.sweep.step, max(level, cfg.sweep.max_level), polarity, target)
    dest = out / "dtmc"
    dest.mkdir(exist_ok=True)
    tag = "all" if target == ALL_NODES else f"node{target}"
    path = dest / f"{regime}_seed{network_seed}_{seed_id}_{tag}_{polarity}_L{level}.prism"
    export_dtmc(net, seed, sweep, level, path, budget=cfg.sweep.budget)
    return path


def run_all(cfg: ExperimentConfig, out: Path, workers: int = 1) -> dict:
    cmd_prepare(cfg, out)
    failures = cmd_train(cfg, out)
    if failures:
        raise NumericError("training diverged: " + "; ".join(failures))
    summary = cmd_analyze(cfg, out, workers=workers)
    cmd_plot(out)
    return summary
