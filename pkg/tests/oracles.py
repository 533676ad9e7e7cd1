"""Direct-formula reference statistics in pure Python (no numpy), used as test oracles."""

import math
import statistics


def pearson(x, y):
    pairs = [(a, b) for a, b in zip(x, y) if a is not None and b is not None]
    n = len(pairs)
    mx = math.fsum(a for a, _ in pairs) / n
    my = math.fsum(b for _, b in pairs) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in pairs)
    sxx = math.fsum((a - mx) ** 2 for a, _ in pairs)
    syy = math.fsum((b - my) ** 2 for _, b in pairs)
    return sxy / math.sqrt(sxx * syy)


def linreg_per_minute(t, y):
    pairs = [(a, b) for a, b in zip(t, y) if a is not None and b is not None]
    res = statistics.linear_regression([a for a, _ in pairs], [b for _, b in pairs])
    return res.slope * 60.0, res.intercept


def rolling_std(y, window):
    out = []
    for i in range(len(y) - window + 1):
        w = y[i:i + window]
        if any(v is None for v in w):
            out.append(None)
            continue
        m = math.fsum(w) / window
        out.append(math.sqrt(math.fsum((v - m) ** 2 for v in w) / (window - 1)))
    return out


def stabilization_index(y, window, eps=1e-9):
    rs = rolling_std(y, window)
    q = len(rs) // 4
    first = [v for v in rs[:q] if v is not None]
    last = [v for v in rs[-q:] if v is not None]
    early, late = statistics.fmean(first), statistics.fmean(last)
    if early < eps and late < eps:
        return 1.0
    return late / max(early, eps)
