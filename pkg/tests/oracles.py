"""Slow, loop-based reference implementations used only by the tests.

Everything here works on plain Python floats with math.fsum, one value at
a time, so the numerics share nothing with the library's vectorized /
compiled paths. Do not import anything from prunescope in this module.
"""

import math


def channel_values(data, channel):
    """All activations of one channel as (label-index aligned) lists.

    data: nested list (N, C, H, W); returns list of per-sample flat lists.
    """
    out = []
    for sample in data:
        vals = []
        for row in sample[channel]:
            for v in row:
                vals.append(float(v))
        out.append(vals)
    return out


def _mean(vals):
    return math.fsum(vals) / len(vals)


def _popvar(vals, mu):
    return math.fsum((v - mu) ** 2 for v in vals) / len(vals)


def binary_metric(metric, pos, neg, eps):
    """Binary discriminance of two activation pools (population variance)."""
    mp = _mean(pos)
    mn = _mean(neg)
    vp = _popvar(pos, mp) + eps
    vn = _popvar(neg, mn) + eps
    if metric == "sd":
        return 0.5 * (vp / vn + vn / vp) + 0.5 * (mp - mn) ** 2 / (vp + vn) - 1.0
    if metric == "abssnr":
        return abs(mp - mn) / (math.sqrt(vp) + math.sqrt(vn))
    if metric == "fdr":
        return (mp - mn) ** 2 / (vp + vn)
    if metric == "ttest":
        return abs(mp - mn) / math.sqrt(vp / len(pos) + vn / len(neg))
    raise ValueError(metric)


def generalized_metric(metric, data, labels, channel, num_classes, eps):
    """Average of the binary metric over the one-vs-rest class partitions."""
    per_sample = channel_values(data, channel)
    terms = []
    for c in range(num_classes):
        pos = []
        neg = []
        for lab, vals in zip(labels, per_sample):
            (pos if lab == c else neg).extend(vals)
        terms.append(binary_metric(metric, pos, neg, eps))
    return math.fsum(terms) / num_classes


def _rbf(a, b, sigma):
    d2 = math.fsum((x - y) ** 2 for x, y in zip(a, b))
    return math.exp(-d2 / (2.0 * sigma * sigma))


def mmd_metric(data, labels, channel, num_classes, sigma):
    """Class-averaged biased (V-statistic) MMD^2 on one channel's sample
    vectors, all pairs including self-pairs."""
    per_sample = channel_values(data, channel)
    terms = []
    for c in range(num_classes):
        pos = [v for lab, v in zip(labels, per_sample) if lab == c]
        neg = [v for lab, v in zip(labels, per_sample) if lab != c]
        np_, nn = len(pos), len(neg)
        spp = math.fsum(_rbf(a, b, sigma) for a in pos for b in pos)
        snn = math.fsum(_rbf(a, b, sigma) for a in neg for b in neg)
        spn = math.fsum(_rbf(a, b, sigma) for a in pos for b in neg)
        terms.append(spp / (np_ * np_) + snn / (nn * nn) - 2.0 * spn / (np_ * nn))
    return math.fsum(terms) / num_classes


def scatter_matrices(rows, labels):
    """Brute-force within/between scatter of (N, D) nested-list features."""
    n = len(rows)
    d = len(rows[0])
    classes = sorted(set(labels))
    grand = [_mean([r[j] for r in rows]) for j in range(d)]
    s_w = [[0.0] * d for _ in range(d)]
    s_b = [[0.0] * d for _ in range(d)]
    for c in classes:
        members = [r for r, lab in zip(rows, labels) if lab == c]
        mu = [_mean([r[j] for r in members]) for j in range(d)]
        for r in members:
            dev = [r[j] - mu[j] for j in range(d)]
            for i in range(d):
                for j in range(d):
                    s_w[i][j] += dev[i] * dev[j]
        gd = [mu[j] - grand[j] for j in range(d)]
        for i in range(d):
            for j in range(d):
                s_b[i][j] += len(members) * gd[i] * gd[j]
    return s_w, s_b


def total_scatter(rows):
    """Total centered scatter sum_i (x - mean)(x - mean)^T, by loops."""
    d = len(rows[0])
    grand = [_mean([r[j] for r in rows]) for j in range(d)]
    s_t = [[0.0] * d for _ in range(d)]
    for r in rows:
        dev = [r[j] - grand[j] for j in range(d)]
        for i in range(d):
            for j in range(d):
                s_t[i][j] += dev[i] * dev[j]
    return s_t


def solve_gauss(a, b):
    """Solve A X = B by Gaussian elimination with partial pivoting.

    a: (D, D) nested lists, b: (D, K) nested lists. Returns X as lists.
    """
    d = len(a)
    k = len(b[0])
    m = [list(map(float, a[i])) + list(map(float, b[i])) for i in range(d)]
    for col in range(d):
        piv = max(range(col, d), key=lambda r: abs(m[r][col]))
        if abs(m[piv][col]) == 0.0:
            raise ZeroDivisionError("singular matrix")
        m[col], m[piv] = m[piv], m[col]
        inv = 1.0 / m[col][col]
        for r in range(d):
            if r == col:
                continue
            f = m[r][col] * inv
            if f == 0.0:
                continue
            for j in range(col, d + k):
                m[r][j] -= f * m[col][j]
    return [[m[i][d + j] / m[i][i] for j in range(k)] for i in range(d)]


def di_metric(data, labels, channel, num_classes, rho):
    """Scatter-based discriminance: trace of (S_bar + rho I)^{-1} S_B on a
    channel's flattened sample vectors."""
    del num_classes  # classes come from the labels actually present
    rows = channel_values(data, channel)
    if len(set(labels)) < 2:
        return 0.0
    s_w, s_b = scatter_matrices(rows, labels)
    d = len(rows[0])
    a = [[s_w[i][j] + s_b[i][j] + (rho if i == j else 0.0) for j in range(d)] for i in range(d)]
    x = solve_gauss(a, s_b)
    return math.fsum(x[i][i] for i in range(d))


def log_softmax_row(row):
    m = max(row)
    lse = m + math.log(math.fsum(math.exp(v - m) for v in row))
    return [v - lse for v in row]


def kd_output_loss(teacher, student, temperature):
    """Temperature-scaled KL(teacher || student), averaged over rows and
    multiplied by T^2."""
    total = []
    for trow, srow in zip(teacher, student):
        lt = log_softmax_row([v / temperature for v in trow])
        ls = log_softmax_row([v / temperature for v in srow])
        total.append(math.fsum(math.exp(a) * (a - b) for a, b in zip(lt, ls)))
    return temperature * temperature * _mean(total)


def cross_entropy(logits, labels):
    rows = []
    for row, lab in zip(logits, labels):
        rows.append(-log_softmax_row(list(row))[lab])
    return _mean(rows)


def inter_loss(pt, ps):
    """Entrywise L1 gap between two (N, K) nested-list matrices."""
    return math.fsum(
        abs(a - b) for rt, rs in zip(pt, ps) for a, b in zip(rt, rs)
    )
