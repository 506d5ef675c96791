"""Machine-readable emission of reports: CSV tables and ``summary.json``.

Every probability is written next to its exact rational form
(``ratio_num``/``ratio_den``), and ``seed_counts.csv`` holds the integer
(preserved, total) pairs the rationals are averaged from.
"""

from __future__ import annotations

import csv
import io
import json
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .analysis import BiasReport, RegimeComparison, SensitivityCurve, VarianceTable

CURVE_HEADER = ["regime", "target", "feature", "polarity", "level", "magnitude", "class",
                "probability", "ratio_num", "ratio_den", "seed_count", "status"]
NETWORK_HEADER = ["regime", "network_seed", "target", "feature", "polarity", "level",
                  "magnitude", "class", "probability", "ratio_num", "ratio_den", "status"]
SEED_HEADER = ["regime", "network_seed", "target", "feature", "polarity", "level", "seed_id",
               "class", "preserved", "total", "method", "ci_low", "ci_high"]
SCORE_HEADER = ["regime", "target", "feature", "polarity", "score", "score_num", "score_den",
                "arg_level", "area"]
COMPARISON_HEADER = ["target", "feature", "polarity", "level", "class", "delta", "delta_num",
                     "delta_den", "lower_full", "lower_truncated", "flipped"]
VARIANCE_HEADER = ["regime", "node", "feature", "class", "variance", "is_min", "is_max"]


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def _frac(r: Fraction | None):
    return ("", "") if r is None else (str(r.numerator), str(r.denominator))


def _feature(curve_target, feature_names):
    return "" if curve_target == "all" else feature_names[curve_target]


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def read_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def curve_rows(regime: str, curve: SensitivityCurve, feature_names):
    feat = _feature(curve.target, feature_names)
    for p in curve.points:
        for c, cname in enumerate(curve.class_names):
            r = p.ratio[c]
            yield [regime, curve.target, feat, curve.polarity, p.level, repr(p.magnitude), cname,
                   _num(r), *_frac(r), p.seed_count[c], "ok" if r is not None else "absent"]


def network_rows(regime: str, curve: SensitivityCurve, feature_names):
    feat = _feature(curve.target, feature_names)
    for p in curve.points:
        for s, row in zip(curve.network_seeds, p.network_ratio):
            for c, cname in enumerate(curve.class_names):
                r = row[c]
                yield [regime, s, curve.target, feat, curve.polarity, p.level, repr(p.magnitude),
                       cname, _num(r), *_frac(r), "ok" if r is not None else "absent"]


def seed_rows(regime: str, curve: SensitivityCurve, feature_names):
    feat = _feature(curve.target, feature_names)
    for rec in curve.records:
        pc = rec.count
        lo, hi = pc.interval if pc.interval else (None, None)
        yield [regime, rec.network_seed, curve.target, feat, curve.polarity, rec.level,
               rec.seed_id, curve.class_names[rec.class_label], pc.preserved, pc.total,
               pc.method, _num(lo), _num(hi)]


def variance_rows(regime: str, table: VarianceTable):
    for i, name in enumerate(table.feature_names):
        for c, cname in enumerate(table.class_names):
            yield [regime, i + 1, name, cname, repr(float(table.variance[i, c])),
                   int(table.is_min[i, c]), int(table.is_max[i, c])]


def comparison_rows(cmp: RegimeComparison, class_names, feature_names):
    for d in cmp.deltas:
        feat = _feature(d.target, feature_names)
        for c, cname in enumerate(class_names):
            r = d.delta[c]
            yield [d.target, feat, d.polarity, d.level, cname, _num(r), *_frac(r),
                   "" if d.lower_full is None else class_names[d.lower_full],
                   "" if d.lower_truncated is None else class_names[d.lower_truncated],
                   int(d.flipped)]


def write_report_tables(out: Path, reports: Sequence[BiasReport], feature_names,
                        comparison: RegimeComparison | None) -> None:
    out = Path(out)
    write_csv(out / "robustness_bias.csv", CURVE_HEADER,
              [row for rep in reports for row in curve_rows(rep.regime, rep.class_curve, feature_names)])
    write_csv(out / "node_sensitivity.csv", CURVE_HEADER,
              [row for rep in reports for cv in rep.node_curves
               for row in curve_rows(rep.regime, cv, feature_names)])
    write_csv(out / "network_curves.csv", NETWORK_HEADER,
              [row for rep in reports for cv in rep.curves()
               for row in network_rows(rep.regime, cv, feature_names)])
    write_csv(out / "seed_counts.csv", SEED_HEADER,
              [row for rep in reports for cv in rep.curves()
               for row in seed_rows(rep.regime, cv, feature_names)])
    write_csv(out / "bias_scores.csv", SCORE_HEADER,
              [[rep.regime, s.target, _feature(s.target, feature_names), s.polarity,
                _num(s.exact), *_frac(s.exact), "" if s.arg_level is None else s.arg_level,
                _num(s.area)]
               for rep in reports for s in rep.scores])
    class_names = reports[0].class_curve.class_names
    write_csv(out / "comparison.csv", COMPARISON_HEADER,
              comparison_rows(comparison, class_names, feature_names) if comparison else [])


def _prob(r: Fraction | None):
    if r is None:
        return None
    return {"probability": float(r), "ratio": [r.numerator, r.denominator]}


def summary_dict(config_echo: dict, fingerprints: dict, reports: Sequence[BiasReport],
                 comparison: RegimeComparison | None, validation: dict, feature_names) -> dict:
    regimes = {}
    for rep in reports:
        names = rep.class_curve.class_names
        regimes[rep.regime] = {
            "training_fingerprint": rep.dataset_fingerprint,
            "network_seeds": list(rep.network_seeds),
            "validation": validation.get(rep.regime, {}),
            "class_curve": [
                {"level": p.level, "magnitude": p.magnitude,
                 "classes": {names[c]: _prob(p.ratio[c]) for c in range(len(names))},
                 "seed_count": {names[c]: p.seed_count[c] for c in range(len(names))}}
                for p in rep.class_curve.points
            ],
            "bias_scores": [
                {"target": s.target, "feature": _feature(s.target, feature_names),
                 "polarity": s.polarity, "score": _prob(s.exact), "arg_level": s.arg_level,
                 "area": s.area}
                for s in rep.scores
            ],
        }
        if rep.variance is not None:
            regimes[rep.regime]["variance_table"] = [
                {"feature": f, "class": c, "variance": v, "is_min": lo, "is_max": hi}
                for f, c, v, lo, hi in rep.variance.rows()
            ]
    doc = {
        "config": config_echo,
        "fingerprints": fingerprints,
        "sweep": dict(reports[0].sweep) if reports else {},
        "regimes": regimes,
    }
    if comparison is not None:
        names = reports[0].class_curve.class_names
        doc["comparison"] = {
            "flags": [
                {"target": d.target, "polarity": d.polarity, "level": d.level,
                 "lower_full": names[d.lower_full], "lower_truncated": names[d.lower_truncated]}
                for d in comparison.flags
            ],
            "score_deltas": [
                {"target": t, "polarity": pol, "delta": dlt}
                for t, pol, dlt in comparison.score_deltas
            ],
        }
    return doc


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
