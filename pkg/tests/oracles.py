"""Independent straight-line oracles used to freeze expected test values.

Everything here works on plain (x1, y1, x2, y2) tuples and deliberately
shares no code with the package under test.
"""

import math

from fractions import Fraction


def tuple_iou(a, b):
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def raster_iou(a, b, scale=1):
    """Pixel-counting IoU for integer-coordinate boxes.

    Rasterizes both boxes onto a unit grid (optionally refined by ``scale``)
    and counts cells. Exact for integer boxes with scale=1.
    """
    ax1, ay1, ax2, ay2 = (int(round(v * scale)) for v in a)
    bx1, by1, bx2, by2 = (int(round(v * scale)) for v in b)
    x_lo = min(ax1, bx1)
    x_hi = max(ax2, bx2)
    y_lo = min(ay1, by1)
    y_hi = max(ay2, by2)
    inter = 0
    union = 0
    for x in range(x_lo, x_hi):
        for y in range(y_lo, y_hi):
            in_a = ax1 <= x < ax2 and ay1 <= y < ay2
            in_b = bx1 <= x < bx2 and by1 <= y < by2
            if in_a and in_b:
                inter += 1
            if in_a or in_b:
                union += 1
    return inter / union if union else 0.0


def tuple_center(b):
    return ((b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0)


def tuple_s(g, p):
    """Border-distance factor of p's center measured against g, with clamps."""
    cx, cy = tuple_center(p)
    wg = g[2] - g[0]
    hg = g[3] - g[1]
    l = abs(cx - g[0])
    r = abs(cx - g[2])
    t = abs(cy - g[1])
    b = abs(cy - g[3])
    fx = 1.0 - min(l, r) / (wg / 2.0)
    fy = 1.0 - min(t, b) / (hg / 2.0)
    fx = max(0.0, min(1.0, fx))
    fy = max(0.0, min(1.0, fy))
    return math.sqrt(fx * fy)


def tuple_cos(vertex, a, c):
    """Law-of-cosines cos of the angle at ``vertex`` toward points a and c."""
    d2 = lambda p, q: (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2
    ba = d2(vertex, a)
    bc = d2(vertex, c)
    ac = d2(a, c)
    if ba == 0 or bc == 0:
        return 1.0
    cos = (ba + bc - ac) / (2.0 * math.sqrt(ba) * math.sqrt(bc))
    return max(-1.0, min(1.0, cos))


def brute_force_couloss(gts, proposals, iou_threshold=0.5, eps=1e-6, mode="deduplicated"):
    """Straight-line evaluation of the force/work/loss pipeline.

    Returns (total, attractive_sum, repulsive_sum, triplets) where the sums
    are un-normalized and triplets is the list of (i, p, n) index triples.
    """
    # assignment: argmax IoU, threshold, center-inside filter
    assigned = {}
    for pi, p in enumerate(proposals):
        best_i, best_v = -1, -1.0
        for gi, g in enumerate(gts):
            v = tuple_iou(g, p)
            if v > best_v:
                best_i, best_v = gi, v
        if best_v > iou_threshold:
            g = gts[best_i]
            cx, cy = tuple_center(p)
            if g[0] <= cx <= g[2] and g[1] <= cy <= g[3]:
                assigned[pi] = best_i

    triplets = []
    for gi in range(len(gts)):
        positives = [pi for pi, t in assigned.items() if t == gi]
        negatives = [
            pi
            for pi, t in assigned.items()
            if t != gi and tuple_iou(gts[gi], proposals[pi]) > 0.0
        ]
        for pp in sorted(positives):
            for pn in sorted(negatives):
                triplets.append((gi, pp, pn))

    def w_att(gi, pp):
        v = tuple_iou(gts[gi], proposals[pp])
        fa = -math.log(max(v, eps))
        return max(0.0, fa * 1.0 * tuple_s(gts[gi], proposals[pp]))

    def w_rep(gi, pn):
        v = tuple_iou(gts[gi], proposals[pn])
        fr = -math.log(max(1.0 - v, eps))
        gj = assigned[pn]
        cos = tuple_cos(tuple_center(gts[gi]), tuple_center(proposals[pn]), tuple_center(gts[gj]))
        return max(0.0, fr * cos * tuple_s(gts[gi], proposals[pn]))

    if mode == "triplet-literal":
        att = sum(w_att(gi, pp) for gi, pp, _ in triplets)
        rep = sum(w_rep(gi, pn) for gi, _, pn in triplets)
    elif mode == "deduplicated":
        att = sum(w_att(gi, pp) for gi, pp in sorted({(t[0], t[1]) for t in triplets}))
        rep = sum(w_rep(gi, pn) for gi, pn in sorted({(t[0], t[2]) for t in triplets}))
    else:
        raise ValueError(mode)

    total = att / len(gts) + rep / len(gts)
    return total, att, rep, triplets


def central_difference_gradient(f, proposals, h):
    """Central finite differences of a scalar function of a proposal list.

    ``proposals`` is a list of 4-tuples; returns a list of 4-lists.
    """
    grads = []
    for pi in range(len(proposals)):
        row = []
        for ci in range(4):
            plus = [list(p) for p in proposals]
            minus = [list(p) for p in proposals]
            plus[pi][ci] += h
            minus[pi][ci] -= h
            fp = f([tuple(p) for p in plus])
            fm = f([tuple(p) for p in minus])
            row.append((fp - fm) / (2.0 * h))
        grads.append(row)
    return grads


def lamr_nine_point(curve_points, floor=1e-4):
    """Hand 9-point log-average miss rate.

    ``curve_points`` is an ordered list of (fppi, miss_rate) with fppi
    non-decreasing. At each of 9 reference FPPI values log-spaced over
    [1e-2, 1], takes the miss rate of the last point with fppi <= ref, or
    the highest miss rate on the curve when no such point exists.
    """
    refs = [10.0 ** e for e in [-2 + 0.25 * k for k in range(9)]]
    logs = []
    for ref in refs:
        mr = None
        for fppi, miss in curve_points:
            if fppi <= ref:
                mr = miss
        if mr is None:
            mr = max(m for _, m in curve_points)
        logs.append(math.log(max(mr, floor)))
    return math.exp(sum(logs) / len(logs))


def exact_fraction_iou(a, b):
    """IoU as an exact Fraction, for freezing rational expected values."""
    a = [Fraction(v) for v in a]
    b = [Fraction(v) for v in b]
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return Fraction(0)
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union
