"""Discretised noise grids and exact preservation probabilities.

Noise at level ``t`` shifts a node by ``j * step`` for an integer ``j`` with
``1 <= |j| <= t`` (sign filtered by polarity); zero is never an offset. A
perturbed coordinate is always computed as ``x[i] + (j * step)`` in float64.

Exact counts are obtained by branch-and-bound: interval bounds prove whole
boxes of the offset grid preserved (or changed), and only the undecided
boxes are enumerated through the forward pass. Certificates carry a safety
margin so they never disagree with plain enumeration.
"""

from __future__ import annotations

import hashlib
import itertools
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .errors import BudgetExceededError, ConfigError, DataError
from .model import Network, forward, predict_labels

POLARITIES = ("positive", "negative", "symmetric")
ALL_NODES = "all"
DEFAULT_BUDGET = 10**6
DEFAULT_MC_SAMPLES = 10_000
LEAF_SIZE = 4096
_CHUNK = 1 << 16


@dataclass(frozen=True)
class NoiseSweep:
    step: float = 0.05
    max_level: int = 10
    polarity: str = "symmetric"
    target: int | str = ALL_NODES

    def __post_init__(self):
        if not self.step > 0:
            raise ConfigError("noise step must be positive")
        if self.max_level < 1:
            raise ConfigError("max_level must be positive")
        if self.polarity not in POLARITIES:
            raise ConfigError(f"unknown polarity {self.polarity!r}")
        if self.target != ALL_NODES and not (isinstance(self.target, int) and self.target >= 0):
            raise ConfigError(f"target must be {ALL_NODES!r} or a node index")

    def multipliers(self, level: int) -> np.ndarray:
        if not 1 <= level <= self.max_level:
            raise ConfigError(f"level {level} outside 1..{self.max_level}")
        return multipliers(self.polarity, level)

    def grid_size(self, level: int, n_nodes: int = 1) -> int:
        k = len(self.multipliers(level))
        return k if self.target != ALL_NODES else k**n_nodes


def multipliers(polarity: str, level: int) -> np.ndarray:
    """Integer offset multipliers at ``level``, ascending."""
    pos = np.arange(1, level + 1)
    if polarity == "positive":
        return pos
    if polarity == "negative":
        return -pos[::-1]
    if polarity == "symmetric":
        return np.r_[-pos[::-1], pos]
    raise ConfigError(f"unknown polarity {polarity!r}")


def grid(sweep: NoiseSweep, level: int) -> tuple[float, ...]:
    """Offsets admitted at ``level``, ascending."""
    return tuple(int(j) * sweep.step for j in sweep.multipliers(level))


@dataclass(frozen=True)
class PreservationCount:
    preserved: int
    total: int
    method: str = "exact"
    interval: tuple[float, float] | None = None

    def __post_init__(self):
        if self.total < 1 or not 0 <= self.preserved <= self.total:
            raise ValueError(f"invalid count {self.preserved}/{self.total}")

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.preserved, self.total)

    @property
    def probability(self) -> float:
        return self.preserved / self.total


@dataclass(frozen=True, eq=False)
class SeedInput:
    id: str
    x: np.ndarray
    class_label: int
    correctly_classified: bool

    @classmethod
    def from_network(cls, net: Network, x, id: str = "x", class_label: int | None = None):
        """Seed centred at ``x``; its label defaults to the network's own."""
        x = np.array(x, dtype=np.float64)
        x.setflags(write=False)
        pred = forward(net, x).label
        label = pred if class_label is None else int(class_label)
        return cls(str(id), x, label, pred == label)


def seed_inputs(net: Network, ds) -> list[SeedInput]:
    """One seed per dataset row, flagged by whether ``net`` gets it right."""
    pred = predict_labels(net, ds.X)
    seeds = []
    for i, x, c, p in zip(ds.ids, ds.X, ds.y, pred):
        x = np.array(x)
        x.setflags(write=False)
        seeds.append(SeedInput(i, x, int(c), bool(p == c)))
    return seeds


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials < 1:
        raise ValueError("trials must be positive")
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * np.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    # the bounds are exactly 0 and 1 at the extremes; avoid rounding residue
    lo = 0.0 if successes == 0 else max(0.0, float(centre - half))
    hi = 1.0 if successes == trials else min(1.0, float(centre + half))
    return lo, hi


# -- exact counting engine ----------------------------------------------------

class _Bounder:
    """Interval bounds of (logit[label] - logit[k]) over an input box."""

    def __init__(self, net: Network, label: int):
        self.hidden = [(l.weights, np.abs(l.weights), l.bias) for l in net.layers[:-1]]
        last = net.layers[-1]
        others = [k for k in range(net.class_count) if k != label]
        D = last.weights[label] - last.weights[others]
        self.D, self.absD = D, np.abs(D)
        self.e = last.bias[label] - last.bias[others]

    def decide(self, lo: np.ndarray, hi: np.ndarray) -> int:
        """+1: label kept everywhere in the box, -1: label lost everywhere, 0: unknown."""
        c, r = 0.5 * (lo + hi), 0.5 * (hi - lo)
        for W, absW, b in self.hidden:
            mid, rad = W @ c + b, absW @ r
            l = np.maximum(mid - rad, 0.0)
            u = np.maximum(mid + rad, 0.0)
            c, r = 0.5 * (l + u), 0.5 * (u - l)
        mid = self.D @ c + self.e
        rad = self.absD @ r
        margin = 1e-9 * (1.0 + np.abs(mid) + rad)
        if np.all(mid - rad > margin):
            return 1
        if np.any(mid + rad < -margin):
            return -1
        return 0


def _label_of(net: Network, x) -> int:
    return int(predict_labels(net, np.asarray(x, dtype=np.float64)[None, :])[0])


def count_by_level(
    net: Network,
    x,
    dims: Sequence[int],
    polarity: str,
    step: float,
    max_level: int,
    label: int | None = None,
    prune: bool = True,
) -> np.ndarray:
    """Preserved-point counts over the joint grid of ``dims`` for every level.

    Entry ``t - 1`` counts the grid points of level ``t`` (all perturbed
    nodes within ``|j| <= t``) whose label equals ``label`` (default: the
    label of ``x``). Exact.
    """
    x = np.asarray(x, dtype=np.float64)
    dims = list(dims)
    if label is None:
        label = _label_of(net, x)
    J = multipliers(polarity, max_level)
    offs = J.astype(np.float64) * step
    absJ = np.abs(J)
    K = len(J)
    # within_le[t-1, k] = number of J[:k] with |j| <= t
    le = (absJ[None, :] <= np.arange(1, max_level + 1)[:, None]).astype(np.int64)
    within_le = np.concatenate([np.zeros((max_level, 1), np.int64), np.cumsum(le, axis=1)], axis=1)

    preserved = np.zeros(max_level, dtype=np.int64)
    m = len(dims)

    def enumerate_box(lo_idx, hi_idx):
        ranges = [np.arange(a, b) for a, b in zip(lo_idx, hi_idx)]
        grids = np.meshgrid(*ranges, indexing="ij")
        idx = np.stack([g.ravel() for g in grids], axis=1)
        for start in range(0, len(idx), _CHUNK):
            part = idx[start:start + _CHUNK]
            X = np.broadcast_to(x, (len(part), len(x))).copy()
            for col, d in enumerate(dims):
                X[:, d] = x[d] + offs[part[:, col]]
            keep = predict_labels(net, X) == label
            level = absJ[part[keep]].max(axis=1)
            hist = np.bincount(level, minlength=max_level + 1)[1:]
            preserved[:] += np.cumsum(hist)

    if not prune:
        enumerate_box([0] * m, [K] * m)
        return preserved

    bounder = _Bounder(net, label)
    w1 = np.abs(net.layers[0].weights[:, dims]).sum(axis=0)
    stack = [([0] * m, [K] * m)]
    while stack:
        lo_idx, hi_idx = stack.pop()
        size = int(np.prod([b - a for a, b in zip(lo_idx, hi_idx)]))
        lo, hi = x.copy(), x.copy()
        for col, d in enumerate(dims):
            lo[d] = x[d] + offs[lo_idx[col]]
            hi[d] = x[d] + offs[hi_idx[col] - 1]
        verdict = bounder.decide(lo, hi)
        if verdict == 1:
            per_dim = [within_le[:, b] - within_le[:, a] for a, b in zip(lo_idx, hi_idx)]
            preserved += np.prod(per_dim, axis=0)
            continue
        if verdict == -1:
            continue
        if size <= LEAF_SIZE:
            enumerate_box(lo_idx, hi_idx)
            continue
        widths = [(hi_idx[c] - lo_idx[c]) * w1[c] if hi_idx[c] - lo_idx[c] > 1 else -1.0
                  for c in range(m)]
        c = int(np.argmax(widths))
        midpoint = (lo_idx[c] + hi_idx[c]) // 2
        left_hi = list(hi_idx)
        left_hi[c] = midpoint
        right_lo = list(lo_idx)
        right_lo[c] = midpoint
        stack.append((right_lo, list(hi_idx)))
        stack.append((list(lo_idx), left_hi))
    return preserved


def grid_totals(n_dims: int, polarity: str, max_level: int) -> np.ndarray:
    return np.array([len(multipliers(polarity, t)) ** n_dims for t in range(1, max_level + 1)],
                    dtype=object)


def node_counts_by_level(net: Network, x, polarity: str, step: float, max_level: int,
                         label: int | None = None) -> np.ndarray:
    """Single-node preserved counts, shape ``(n_nodes, max_level)``."""
    x = np.asarray(x, dtype=np.float64)
    if label is None:
        label = _label_of(net, x)
    J = multipliers(polarity, max_level)
    offs = J.astype(np.float64) * step
    n, K = len(x), len(J)
    X = np.broadcast_to(x, (n, K, n)).copy()
    for i in range(n):
        X[i, :, i] = x[i] + offs
    keep = (predict_labels(net, X.reshape(n * K, n)) == label).reshape(n, K)
    absJ = np.abs(J)
    out = np.zeros((n, max_level), dtype=np.int64)
    for t in range(1, max_level + 1):
        out[:, t - 1] = (keep & (absJ <= t)).sum(axis=1)
    return out


def _mc_rng(mc_seed: int, seed_id: str, level: int) -> np.random.Generator:
    tag = int.from_bytes(hashlib.sha256(seed_id.encode()).digest()[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([mc_seed, tag, level]))


def monte_carlo_count(net: Network, x, dims, polarity, step, level, samples,
                      rng: np.random.Generator, label: int | None = None) -> PreservationCount:
    """Uniform independent draws per node from the level's offsets."""
    x = np.asarray(x, dtype=np.float64)
    if label is None:
        label = _label_of(net, x)
    offs = multipliers(polarity, level).astype(np.float64) * step
    dims = list(dims)
    hits = 0
    for start in range(0, samples, _CHUNK):
        size = min(_CHUNK, samples - start)
        pick = rng.integers(0, len(offs), size=(size, len(dims)))
        X = np.broadcast_to(x, (size, len(x))).copy()
        for col, d in enumerate(dims):
            X[:, d] = x[d] + offs[pick[:, col]]
        hits += int((predict_labels(net, X) == label).sum())
    return PreservationCount(hits, samples, "monte_carlo", wilson_interval(hits, samples))


# -- public operations --------------------------------------------------------

def _require_seed(net: Network, seed: SeedInput):
    if not seed.correctly_classified:
        raise DataError(f"seed {seed.id!r} is misclassified; only correct seeds are analysed")
    if len(seed.x) != net.input_dim:
        raise DataError(f"seed {seed.id!r} has {len(seed.x)} features, network expects {net.input_dim}")


def preserve_single_node(net: Network, seed: SeedInput, i: int, sweep: NoiseSweep,
                         level: int) -> PreservationCount:
    """Exact count of offsets on node ``i`` that keep the seed's label."""
    _require_seed(net, seed)
    if not 0 <= i < net.input_dim:
        raise DataError(f"node index {i} outside 0..{net.input_dim - 1}")
    total = len(sweep.multipliers(level))
    kept = count_by_level(net, seed.x, [i], sweep.polarity, sweep.step, level,
                          label=seed.class_label, prune=False)
    return PreservationCount(int(kept[-1]), total)


def preserve_all_nodes(net: Network, seed: SeedInput, sweep: NoiseSweep, level: int,
                       budget: int = DEFAULT_BUDGET, samples: int = DEFAULT_MC_SAMPLES,
                       mc_seed: int = 0) -> PreservationCount:
    """Count over the Cartesian product of per-node offsets.

    Exact when the joint grid has at most ``budget`` points, otherwise a
    seeded Monte-Carlo estimate with a Wilson 95% interval.
    """
    if budget < 1:
        raise ConfigError("budget must be at least 1")
    _require_seed(net, seed)
    sweep.multipliers(level)
    n = net.input_dim
    total = len(multipliers(sweep.polarity, level)) ** n
    if total <= budget:
        kept = count_by_level(net, seed.x, range(n), sweep.polarity, sweep.step, level,
                              label=seed.class_label)
        return PreservationCount(int(kept[-1]), total)
    return monte_carlo_count(net, seed.x, range(n), sweep.polarity, sweep.step, level, samples,
                             _mc_rng(mc_seed, seed.id, level), label=seed.class_label)


def sweep_all_nodes(net: Network, seed: SeedInput, sweep: NoiseSweep,
                    budget: int = DEFAULT_BUDGET, samples: int = DEFAULT_MC_SAMPLES,
                    mc_seed: int = 0) -> list[PreservationCount]:
    """``preserve_all_nodes`` for every level 1..max_level, sharing one
    enumeration across the exact levels."""
    if budget < 1:
        raise ConfigError("budget must be at least 1")
    _require_seed(net, seed)
    n = net.input_dim
    totals = grid_totals(n, sweep.polarity, sweep.max_level)
    exact_levels = [t for t in range(1, sweep.max_level + 1) if totals[t - 1] <= budget]
    out = []
    if exact_levels:
        top = exact_levels[-1]
        kept = count_by_level(net, seed.x, range(n), sweep.polarity, sweep.step, top,
                              label=seed.class_label)
        out = [PreservationCount(int(kept[t - 1]), int(totals[t - 1])) for t in exact_levels]
    for t in range(len(out) + 1, sweep.max_level + 1):
        out.append(monte_carlo_count(net, seed.x, range(n), sweep.polarity, sweep.step, t,
                                     samples, _mc_rng(mc_seed, seed.id, t),
                                     label=seed.class_label))
    return out


def sweep_nodes(net: Network, seed: SeedInput, polarity: str, step: float,
                max_level: int) -> list[list[PreservationCount]]:
    """Single-node counts for every node (outer list) and level (inner list)."""
    _require_seed(net, seed)
    kept = node_counts_by_level(net, seed.x, polarity, step, max_level, label=seed.class_label)
    return [[PreservationCount(int(kept[i, t - 1]), len(multipliers(polarity, t)))
             for t in range(1, max_level + 1)] for i in range(net.input_dim)]


def worst_case_robust(net: Network, seed: SeedInput, sweep: NoiseSweep, level: int,
                      budget: int = DEFAULT_BUDGET) -> bool:
    """True iff every grid point at ``level`` keeps the label. Never sampled."""
    _require_seed(net, seed)
    if sweep.target == ALL_NODES:
        dims = list(range(net.input_dim))
        total = len(sweep.multipliers(level)) ** len(dims)
        if total > budget:
            raise BudgetExceededError(
                f"exhaustive check infeasible: {total} grid points exceed budget {budget}"
            )
    else:
        dims = [sweep.target]
        total = len(sweep.multipliers(level))
    kept = count_by_level(net, seed.x, dims, sweep.polarity, sweep.step, level,
                          label=seed.class_label)
    return int(kept[-1]) == total


# -- DTMC export --------------------------------------------------------------

def _grid_outcomes(net: Network, seed: SeedInput, dims, polarity, step, level):
    J = multipliers(polarity, level)
    offs = J.astype(np.float64) * step
    x = seed.x
    combos = np.array(list(itertools.product(range(len(J)), repeat=len(dims))), dtype=np.int64)
    keep = np.zeros(len(combos), dtype=bool)
    for start in range(0, len(combos), _CHUNK):
        part = combos[start:start + _CHUNK]
        X = np.broadcast_to(x, (len(part), len(x))).copy()
        for col, d in enumerate(dims):
            X[:, d] = x[d] + offs[part[:, col]]
        keep[start:start + len(part)] = predict_labels(net, X) == seed.class_label
    return J[combos], keep


def export_dtmc(net: Network, seed: SeedInput, sweep: NoiseSweep, level: int, path,
                budget: int = DEFAULT_BUDGET) -> PreservationCount:
    """Write a PRISM DTMC tabulating this engine's outcome for every offset.

    State 0 picks one of K offsets uniformly; state i (1..K) moves to the
    absorbing state K+1 ("preserved") or K+2 ("changed"). A sibling
    ``.props`` file holds the reachability query. Returns the count the
    model encodes.
    """
    _require_seed(net, seed)
    dims = list(range(net.input_dim)) if sweep.target == ALL_NODES else [sweep.target]
    if any(not 0 <= d < net.input_dim for d in dims):
        raise DataError(f"node index {sweep.target} outside 0..{net.input_dim - 1}")
    K = len(sweep.multipliers(level)) ** len(dims)
    if K > budget:
        raise BudgetExceededError(
            f"exhaustive check infeasible: {K} grid points exceed budget {budget}"
        )
    js, keep = _grid_outcomes(net, seed, dims, sweep.polarity, sweep.step, level)
    yes, no = K + 1, K + 2
    target = ALL_NODES if sweep.target == ALL_NODES else f"node {sweep.target}"
    lines = [
        f"// preservation experiment: seed {seed.id}, class {seed.class_label}, target {target}",
        f"// polarity {sweep.polarity}, step {sweep.step!r}, level {level}, branches {K}",
        "// branch comments list the integer multipliers j of the offsets j*step",
        "dtmc",
        "",
        "module preservation",
        f"\ts : [0..{no}] init 0;",
        "\t[] s=0 -> " + " + ".join(f"1/{K} : (s'={i})" for i in range(1, K + 1)) + ";",
    ]
    for i, (j, k) in enumerate(zip(js, keep), start=1):
        lines.append(f"\t[] s={i} -> (s'={yes if k else no}); // j={tuple(int(v) for v in j)}")
    lines += [
        f"\t[] s={yes} -> (s'={yes});",
        f"\t[] s={no} -> (s'={no});",
        "endmodule",
        "",
        f'label "preserved" = s={yes};',
        f'label "changed" = s={no};',
        "",
    ]
    path = Path(path)
    path.write_text("\n".join(lines), encoding="utf-8")
    path.with_suffix(".props").write_text('P=? [ F "preserved" ]\n', encoding="utf-8")
    return PreservationCount(int(keep.sum()), K)


_CMD = re.compile(r"^\s*\[\]\s*s\s*=\s*(\d+)\s*->\s*(.+?);\s*(//.*)?$")
_TERM = re.compile(r"^\s*(\d+)\s*/\s*(\d+)\s*:\s*\(\s*s'\s*=\s*(\d+)\s*\)\s*$")
_DET = re.compile(r"^\s*\(\s*s'\s*=\s*(\d+)\s*\)\s*$")
_LABEL = re.compile(r'^\s*label\s+"preserved"\s*=\s*s\s*=\s*(\d+)\s*;')
_INIT = re.compile(r"init\s+(\d+)")


def parse_dtmc(path) -> Fraction:
    """Probability of eventually reaching ``"preserved"`` in an exported model."""
    transitions: dict[int, list[tuple[Fraction, int]]] = {}
    goal = None
    init = 0
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.lstrip().startswith("//"):
            continue
        if m := _LABEL.match(line):
            goal = int(m.group(1))
            continue
        if "init" in line and (m := _INIT.search(line)):
            init = int(m.group(1))
        m = _CMD.match(line)
        if not m:
            continue
        state, rhs = int(m.group(1)), m.group(2)
        branches = []
        for term in rhs.split("+"):
            if t := _TERM.match(term):
                branches.append((Fraction(int(t.group(1)), int(t.group(2))), int(t.group(3))))
            elif d := _DET.match(term):
                branches.append((Fraction(1), int(d.group(1))))
            else:
                raise DataError(f"{path}: cannot parse transition term {term!r}")
        if sum(p for p, _ in branches) != 1:
            raise DataError(f"{path}: probabilities out of state {state} do not sum to 1")
        transitions[state] = branches
    if goal is None:
        raise DataError(f'{path}: no "preserved" label')

    memo: dict[int, Fraction] = {}

    def reach(s: int, trail=()) -> Fraction:
        if s == goal:
            return Fraction(1)
        if s in memo:
            return memo[s]
        if s in trail:
            return Fraction(0)
        total = sum((p * reach(t, trail + (s,)) for p, t in transitions.get(s, []) if t != s),
                    Fraction(0))
        memo[s] = total
        return total

    return reach(init)
