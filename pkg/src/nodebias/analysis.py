"""Aggregation of preservation counts into class curves, node curves and
bias scores, plus the per-class variance diagnostic and regime comparison."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .data import Dataset, class_stats
from .errors import ConfigError, DataError
from .model import Network
from .perturb import (
    ALL_NODES,
    DEFAULT_BUDGET,
    DEFAULT_MC_SAMPLES,
    NoiseSweep,
    PreservationCount,
    seed_inputs,
    sweep_all_nodes,
    sweep_nodes,
)
from .train import RunSet


@dataclass(frozen=True)
class SeedRecord:
    """Provenance of one per-seed ratio feeding a curve."""

    network_seed: int
    seed_id: str
    class_label: int
    level: int
    count: PreservationCount


@dataclass(frozen=True)
class CurvePoint:
    level: int
    magnitude: float
    ratio: tuple[Fraction | None, ...]
    seed_count: tuple[int, ...]
    network_ratio: tuple[tuple[Fraction | None, ...], ...]

    @property
    def probability(self) -> tuple[float | None, ...]:
        return tuple(None if r is None else float(r) for r in self.ratio)


@dataclass(frozen=True)
class SensitivityCurve:
    """Probability that classification survives noise, per class and level.

    ``ratio[c]`` at a point is the mean over networks of each network's
    mean per-seed ratio for class ``c``; networks without a correctly
    classified seed of that class are skipped, and a class with none at all
    is ``None`` (absent).
    """

    target: int | str
    polarity: str
    step: float
    class_names: tuple[str, ...]
    network_seeds: tuple[int, ...]
    points: tuple[CurvePoint, ...]
    records: tuple[SeedRecord, ...] = field(default=(), repr=False)

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(p.level for p in self.points)


def _mean(values):
    values = [v for v in values if v is not None]
    if not values:
        return None
    return sum(values, Fraction(0)) / len(values)


def aggregate_curve(target, polarity, step, class_names, network_seeds, max_level,
                    records: Sequence[SeedRecord]) -> SensitivityCurve:
    """Average within each network first, then across networks."""
    C = len(class_names)
    cells: dict[tuple[int, int, int], list[Fraction]] = {}
    for r in records:
        cells.setdefault((r.network_seed, r.class_label, r.level), []).append(r.count.ratio)
    points = []
    for t in range(1, max_level + 1):
        per_net = tuple(
            tuple(_mean(cells.get((s, c, t), [])) for c in range(C)) for s in network_seeds
        )
        ratio = tuple(_mean(row[c] for row in per_net) for c in range(C))
        seeds = tuple(sum(len(cells.get((s, c, t), [])) for s in network_seeds) for c in range(C))
        points.append(CurvePoint(t, t * step, ratio, seeds, per_net))
    records = tuple(sorted(records, key=lambda r: (r.network_seed, r.level, r.class_label, r.seed_id)))
    return SensitivityCurve(target, polarity, step, tuple(class_names), tuple(network_seeds),
                            tuple(points), records)


def _check_runset(runset: RunSet, test: Dataset):
    for run in runset.runs:
        if run.network.input_dim != test.n_features:
            raise DataError(
                f"network seed {run.seed} expects {run.network.input_dim} features, "
                f"test set has {test.n_features}"
            )


def _class_records(run_seed: int, net: Network, test: Dataset, sweep: NoiseSweep,
                   budget: int, samples: int, mc_seed: int) -> list[SeedRecord]:
    records = []
    for seed in seed_inputs(net, test):
        if not seed.correctly_classified:
            continue
        counts = sweep_all_nodes(net, seed, sweep, budget, samples, mc_seed)
        records.extend(SeedRecord(run_seed, seed.id, seed.class_label, t, pc)
                       for t, pc in enumerate(counts, start=1))
    return records


def _node_records(run_seed: int, net: Network, test: Dataset, step: float, max_level: int,
                  polarity: str) -> list[list[SeedRecord]]:
    records: list[list[SeedRecord]] = [[] for _ in range(test.n_features)]
    for seed in seed_inputs(net, test):
        if not seed.correctly_classified:
            continue
        per_node = sweep_nodes(net, seed, polarity, step, max_level)
        for i, counts in enumerate(per_node):
            records[i].extend(SeedRecord(run_seed, seed.id, seed.class_label, t, pc)
                              for t, pc in enumerate(counts, start=1))
    return records


def class_robustness_curve(runset: RunSet, test: Dataset, sweep: NoiseSweep,
                           budget: int = DEFAULT_BUDGET, samples: int = DEFAULT_MC_SAMPLES,
                           mc_seed: int = 0) -> SensitivityCurve:
    """All-node noise curve per class (robustness bias)."""
    if sweep.target != ALL_NODES:
        raise ConfigError("class robustness curves need an all-nodes sweep")
    _check_runset(runset, test)
    records = []
    for run in runset.runs:
        records.extend(_class_records(run.seed, run.network, test, sweep, budget, samples, mc_seed))
    return aggregate_curve(ALL_NODES, sweep.polarity, sweep.step, test.class_names,
                           runset.seeds, sweep.max_level, records)


def node_sensitivity_curves(runset: RunSet, test: Dataset, step: float, max_level: int,
                            polarity: str) -> list[SensitivityCurve]:
    """One single-node curve per input node."""
    if polarity not in ("positive", "negative"):
        raise ConfigError("node sensitivity polarity must be 'positive' or 'negative'")
    NoiseSweep(step, max_level, polarity)
    _check_runset(runset, test)
    records: list[list[SeedRecord]] = [[] for _ in range(test.n_features)]
    for run in runset.runs:
        for i, recs in enumerate(_node_records(run.seed, run.network, test, step, max_level,
                                               polarity)):
            records[i].extend(recs)
    return [aggregate_curve(i, polarity, step, test.class_names, runset.seeds, max_level, recs)
            for i, recs in enumerate(records)]


# -- bias scores ---------------------------------------------------------------

@dataclass(frozen=True)
class BiasScore:
    """Largest pairwise class gap of a curve over all levels.

    ``area`` is a secondary statistic: trapezoidal area under the per-level
    maximum gap, against noise magnitude.
    """

    target: int | str
    polarity: str
    exact: Fraction | None
    arg_level: int | None
    area: float | None

    @property
    def score(self) -> float | None:
        return None if self.exact is None else float(self.exact)


def _gap_scan(curve: SensitivityCurve):
    """Largest pairwise class gap per level (None when < 2 classes present)."""
    gaps = []
    for p in curve.points:
        present = [r for r in p.ratio if r is not None]
        gaps.append(max(present) - min(present) if len(present) >= 2 else None)
    return gaps


def bias_score(curve: SensitivityCurve) -> BiasScore:
    if len(curve.class_names) < 2:
        raise DataError("bias scores need at least two classes")
    gaps = _gap_scan(curve)
    best, arg = None, None
    for p, g in zip(curve.points, gaps):
        if g is not None and (best is None or g > best):
            best, arg = g, p.level
    area = None
    valid = [(p.magnitude, float(g)) for p, g in zip(curve.points, gaps) if g is not None]
    if valid:
        # trapezoid over magnitude, starting from zero gap at zero noise
        xs = [0.0] + [m for m, _ in valid]
        ys = [0.0] + [g for _, g in valid]
        area = float(sum((xs[k + 1] - xs[k]) * (ys[k + 1] + ys[k]) / 2 for k in range(len(xs) - 1)))
    return BiasScore(curve.target, curve.polarity, best, arg, area)


def bias_scores(curves: Sequence[SensitivityCurve]) -> list[BiasScore]:
    return [bias_score(c) for c in curves]


# -- variance diagnostic ---------------------------------------------------------

@dataclass(frozen=True)
class VarianceTable:
    """Unbiased variance per (node, class) with per-class extrema flagged."""

    feature_names: tuple[str, ...]
    class_names: tuple[str, ...]
    variance: np.ndarray  # [node, class]
    is_min: np.ndarray
    is_max: np.ndarray

    def rows(self):
        for i, name in enumerate(self.feature_names):
            for c, cname in enumerate(self.class_names):
                yield name, cname, float(self.variance[i, c]), bool(self.is_min[i, c]), bool(self.is_max[i, c])


def variance_table(train: Dataset) -> VarianceTable:
    """Per-class variance of raw training values; needs >= 2 rows in every class."""
    stats = class_stats(train)
    if (stats.count[:, 0] < 2).any():
        missing = [train.class_names[c] for c in range(train.n_classes) if stats.count[c, 0] < 2]
        raise DataError(f"variance table needs at least two rows of every class; short: {missing}")
    var = stats.variance.T.copy()
    is_min = var == var.min(axis=0, keepdims=True)
    is_max = var == var.max(axis=0, keepdims=True)
    return VarianceTable(train.feature_names, train.class_names, var, is_min, is_max)


# -- reports and regime comparison -------------------------------------------------

@dataclass(frozen=True)
class BiasReport:
    regime: str
    dataset_fingerprint: str
    test_fingerprint: str
    sweep: dict
    network_seeds: tuple[int, ...]
    class_curve: SensitivityCurve
    node_curves: tuple[SensitivityCurve, ...]
    scores: tuple[BiasScore, ...]
    variance: VarianceTable | None = None

    def curves(self) -> tuple[SensitivityCurve, ...]:
        return (self.class_curve, *self.node_curves)


def _network_task(args):
    run_seed, net, test, sweep, budget, samples, mc_seed, node_polarities = args
    class_recs = _class_records(run_seed, net, test, sweep, budget, samples, mc_seed)
    node_recs = [_node_records(run_seed, net, test, sweep.step, sweep.max_level, pol)
                 for pol in node_polarities]
    return class_recs, node_recs


def build_report(runset: RunSet, test: Dataset, step: float, max_level: int,
                 class_polarity: str = "symmetric", node_polarities=("negative", "positive"),
                 budget: int = DEFAULT_BUDGET, samples: int = DEFAULT_MC_SAMPLES,
                 mc_seed: int = 0, raw_train: Dataset | None = None,
                 workers: int = 1) -> BiasReport:
    """Class curve, node curves for each polarity and their bias scores.

    With ``workers > 1`` networks are analysed in separate processes; the
    result is identical to a serial run.
    """
    sweep = NoiseSweep(step, max_level, class_polarity, ALL_NODES)
    for pol in node_polarities:
        if pol not in ("positive", "negative"):
            raise ConfigError("node sensitivity polarity must be 'positive' or 'negative'")
    _check_runset(runset, test)
    tasks = [(run.seed, run.network, test, sweep, budget, samples, mc_seed, tuple(node_polarities))
             for run in runset.runs]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_network_task, tasks))
    else:
        results = [_network_task(t) for t in tasks]
    class_recs = [r for cr, _ in results for r in cr]
    class_curve = aggregate_curve(ALL_NODES, class_polarity, step, test.class_names,
                                  runset.seeds, max_level, class_recs)
    node_curves = []
    for k, pol in enumerate(node_polarities):
        for i in range(test.n_features):
            recs = [r for _, nr in results for r in nr[k][i]]
            node_curves.append(aggregate_curve(i, pol, step, test.class_names, runset.seeds,
                                               max_level, recs))
    curves = [class_curve, *node_curves]
    return BiasReport(
        regime=runset.regime,
        dataset_fingerprint=runset.dataset_fingerprint,
        test_fingerprint=test.fingerprint(),
        sweep={
            "step": step,
            "max_level": max_level,
            "class_polarity": class_polarity,
            "node_polarities": list(node_polarities),
            "budget": budget,
            "mc_samples": samples,
            "mc_seed": mc_seed,
        },
        network_seeds=runset.seeds,
        class_curve=class_curve,
        node_curves=tuple(node_curves),
        scores=tuple(bias_scores(curves)),
        variance=variance_table(raw_train) if raw_train is not None else None,
    )


@dataclass(frozen=True)
class CurveDelta:
    target: int | str
    polarity: str
    level: int
    delta: tuple[Fraction | None, ...]  # truncated minus full, per class
    lower_full: int | None
    lower_truncated: int | None

    @property
    def flipped(self) -> bool:
        return (self.lower_full is not None and self.lower_truncated is not None
                and self.lower_full != self.lower_truncated)


@dataclass(frozen=True)
class RegimeComparison:
    deltas: tuple[CurveDelta, ...]
    score_deltas: tuple[tuple[int | str, str, float | None], ...]

    @property
    def flags(self) -> tuple[CurveDelta, ...]:
        return tuple(d for d in self.deltas if d.flipped)


def _lowest_class(ratio) -> int | None:
    """Index of the strictly lowest class probability (None on ties/absence)."""
    if any(r is None for r in ratio):
        return None
    lo = min(ratio)
    which = [c for c, r in enumerate(ratio) if r == lo]
    return which[0] if len(which) == 1 else None


def compare_regimes(full: BiasReport, truncated: BiasReport) -> RegimeComparison:
    if full.sweep != truncated.sweep:
        raise ConfigError("reports were produced with different sweep settings")
    if full.test_fingerprint != truncated.test_fingerprint:
        raise ConfigError("reports were produced on different test sets")
    a_curves = {(c.target, c.polarity): c for c in full.curves()}
    b_curves = {(c.target, c.polarity): c for c in truncated.curves()}
    if a_curves.keys() != b_curves.keys():
        raise ConfigError("reports contain different curves")
    deltas = []
    for key, ca in a_curves.items():
        cb = b_curves[key]
        for pa, pb in zip(ca.points, cb.points):
            d = tuple(None if (ra is None or rb is None) else rb - ra
                      for ra, rb in zip(pa.ratio, pb.ratio))
            deltas.append(CurveDelta(key[0], key[1], pa.level, d,
                                     _lowest_class(pa.ratio), _lowest_class(pb.ratio)))
    score_deltas = []
    for sa, sb in zip(full.scores, truncated.scores):
        d = None if sa.score is None or sb.score is None else sb.score - sa.score
        score_deltas.append((sa.target, sa.polarity, d))
    return RegimeComparison(tuple(deltas), tuple(score_deltas))
