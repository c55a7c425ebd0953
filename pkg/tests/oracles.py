"""Brute-force reference implementations used only by the tests.

These deliberately share no code with the package: pure Python loops, pixel
sets and exact fractions.
"""

import math
import sys
from fractions import Fraction

IGNORE = 255

sys.setrecursionlimit(20000)


def flood_fill_components(mask):
    """8-connected components by recursive flood fill; returns a list of pixel sets."""
    h, w = len(mask), len(mask[0])
    seen = [[False] * w for _ in range(h)]
    comps = []

    def fill(y, x, comp):
        if y < 0 or y >= h or x < 0 or x >= w or seen[y][x] or not mask[y][x]:
            return
        seen[y][x] = True
        comp.add((y, x))
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy or dx:
                    fill(y + dy, x + dx, comp)

    for y in range(h):
        for x in range(w):
            if mask[y][x] and not seen[y][x]:
                comp = set()
                fill(y, x, comp)
                comps.append(comp)
    return comps


def box_of(pixels):
    ys = [p[0] for p in pixels]
    xs = [p[1] for p in pixels]
    return (min(xs), min(ys), max(xs) + 1, max(ys) + 1)


def box_scores_loop(labels, conf, classes):
    """Detection scores by a literal double loop over each box; {(c, box): score}."""
    h, w = len(labels), len(labels[0])
    out = {}
    for c in classes:
        mask = [[labels[y][x] == c for x in range(w)] for y in range(h)]
        for comp in flood_fill_components(mask):
            x0, y0, x1, y1 = box_of(comp)
            total, count = 0.0, 0
            for y in range(y0, y1):
                for x in range(x0, x1):
                    if labels[y][x] == c:
                        total += conf[y][x][c]
                        count += 1
            out[(c, (x0, y0, x1, y1))] = total / count
    return out


def box_pixels(box):
    x0, y0, x1, y1 = box
    return {(y, x) for y in range(y0, y1) for x in range(x0, x1)}


def box_iou_pixels(a, b):
    pa, pb = box_pixels(a), box_pixels(b)
    return Fraction(len(pa & pb), len(pa | pb))


def seg_metrics_sets(gts, preds, C):
    """Per-class pixel sets over the whole list; returns exact fractions."""
    G = {c: set() for c in range(C)}
    P = {c: set() for c in range(C)}
    correct = total = 0
    for i, (g, p) in enumerate(zip(gts, preds)):
        for y in range(len(g)):
            for x in range(len(g[0])):
                if g[y][x] == IGNORE:
                    continue
                total += 1
                correct += g[y][x] == p[y][x]
                G[g[y][x]].add((i, y, x))
                P[p[y][x]].add((i, y, x))
    class_acc = {c: Fraction(len(G[c] & P[c]), len(G[c])) for c in range(C) if G[c]}
    iou = {c: Fraction(len(G[c] & P[c]), len(G[c] | P[c])) for c in range(C) if G[c] | P[c]}
    return {
        "pixel_acc": Fraction(correct, total),
        "class_acc": class_acc,
        "iou": iou,
        "mean_class_acc": sum(class_acc.values()) / len(class_acc),
        "mean_iou": sum(iou.values()) / len(iou),
    }


def ap_11point(dets, gts, thr=Fraction(1, 2)):
    """11-point AP by brute force.

    ``dets``: list of (image, order, score, box); ``gts``: {image: [box, ...]}.
    Returns None when there is no ground truth.
    """
    npos = sum(len(v) for v in gts.values())
    if npos == 0:
        return None
    ranked = sorted(dets, key=lambda d: (-d[2], d[0], d[1]))
    used = {i: [False] * len(b) for i, b in gts.items()}
    hits = []
    for img, _, _, box in ranked:
        best, best_iou = None, None
        for g, gbox in enumerate(gts.get(img, [])):
            if used[img][g]:
                continue
            iou = box_iou_pixels(box, gbox)
            if iou >= thr and (best_iou is None or iou > best_iou):
                best, best_iou = g, iou
        if best is not None:
            used[img][best] = True
        hits.append(best is not None)
    prec, rec = [], []
    tp = 0
    for k, hit in enumerate(hits, start=1):
        tp += hit
        prec.append(Fraction(tp, k))
        rec.append(Fraction(tp, npos))
    total = Fraction(0)
    for j in range(11):
        r = Fraction(j, 10)
        candidates = [p for p, rr in zip(prec, rec) if rr >= r]
        total += max(candidates) if candidates else 0
    return total / 11


def softmax_list(v):
    e = [math.exp(x) for x in v]
    s = sum(e)
    return [x / s for x in e]


def bilinear_formula(img, out_h, out_w):
    """Align-corners-false bilinear resize written out per output pixel."""
    h, w = len(img), len(img[0])

    def coord(i, n_in, n_out):
        s = (i + 0.5) * n_in / n_out - 0.5
        s = min(max(s, 0.0), n_in - 1)
        lo = int(math.floor(s))
        hi = min(lo + 1, n_in - 1)
        return lo, hi, s - lo

    out = []
    for i in range(out_h):
        y0, y1, fy = coord(i, h, out_h)
        row = []
        for j in range(out_w):
            x0, x1, fx = coord(j, w, out_w)
            row.append((1 - fy) * ((1 - fx) * img[y0][x0] + fx * img[y0][x1])
                       + fy * ((1 - fx) * img[y1][x0] + fx * img[y1][x1]))
        out.append(row)
    return out


def conv_direct(x, w, b, dilation):
    """Zero-padded 'same' cross-correlation by explicit loops; x is H x W x Cin nested lists."""
    H, W, Cin = len(x), len(x[0]), len(x[0][0])
    k, Cout = len(w), len(w[0][0][0])
    r = k // 2
    out = [[[b[o] for o in range(Cout)] for _ in range(W)] for _ in range(H)]
    for y in range(H):
        for xx in range(W):
            for dy in range(k):
                for dx in range(k):
                    sy = y + (dy - r) * dilation
                    sx = xx + (dx - r) * dilation
                    if 0 <= sy < H and 0 <= sx < W:
                        for ci in range(Cin):
                            v = x[sy][sx][ci]
                            if v:
                                for o in range(Cout):
                                    out[y][xx][o] += v * w[dy][dx][ci][o]
    return out
