"""Independent reference computations for the test suite.

Nothing here calls into the package's numeric code: the forward pass is
plain Python over nested lists, enumeration is itertools over integer
multipliers, statistics are written out longhand.
"""

import itertools
import math


def net_as_lists(net):
    """(weights, bias, activation) per layer as plain Python lists."""
    return [(l.weights.tolist(), l.bias.tolist(), l.activation) for l in net.layers]


def py_logits(layers, x):
    h = [float(v) for v in x]
    for weights, bias, act in layers:
        out = []
        for row, b in zip(weights, bias):
            s = b
            for w, v in zip(row, h):
                s += w * v
            out.append(max(s, 0.0) if act == "relu" else s)
        h = out
    return h


def py_label(layers, x):
    logits = py_logits(layers, x)
    best = 0
    for k in range(1, len(logits)):
        if logits[k] > logits[best]:
            best = k
    return best


def py_multipliers(polarity, level):
    js = []
    if polarity in ("negative", "symmetric"):
        js += list(range(-level, 0))
    if polarity in ("positive", "symmetric"):
        js += list(range(1, level + 1))
    return js


def brute_count(net, x, dims, polarity, step, level, label=None):
    """(preserved, total) by visiting every grid point."""
    layers = net_as_lists(net)
    x = [float(v) for v in x]
    if label is None:
        label = py_label(layers, x)
    js = py_multipliers(polarity, level)
    kept = total = 0
    for combo in itertools.product(js, repeat=len(dims)):
        z = list(x)
        for d, j in zip(dims, combo):
            z[d] = x[d] + j * step
        total += 1
        kept += py_label(layers, z) == label
    return kept, total


def two_pass_variance(values):
    n = len(values)
    if n < 2:
        return None
    mean = math.fsum(values) / n
    return math.fsum((v - mean) ** 2 for v in values) / (n - 1)


def welch_abs(a, b):
    va, vb = two_pass_variance(a), two_pass_variance(b)
    diff = abs(math.fsum(a) / len(a) - math.fsum(b) / len(b))
    spread = math.sqrt(va / len(a) + vb / len(b))
    if spread == 0:
        return math.inf if diff > 0 else 0.0
    return diff / spread


def max_gap_scan(per_level_probs):
    """per_level_probs: list over levels of lists over classes (None = absent)."""
    best, arg = None, None
    for level, probs in enumerate(per_level_probs, start=1):
        present = [p for p in probs if p is not None]
        for a in present:
            for b in present:
                g = abs(a - b)
                if best is None or g > best:
                    best, arg = g, level
    return best, arg
