"""Slow, direct-formula reference implementations used as test oracles.

Nothing here imports from the package under test.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def silhouette_direct(X, labels):
    """Per-sample silhouette by explicit loops over pairs."""
    X = np.asarray(X, dtype=float)
    labels = list(labels)
    ids = sorted(set(labels))
    n = len(labels)
    s = []
    for i in range(n):
        own = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not own:
            s.append(0.0)
            continue
        a = sum(math.dist(X[i], X[j]) for j in own) / len(own)
        b = math.inf
        for c in ids:
            if c == labels[i]:
                continue
            members = [j for j in range(n) if labels[j] == c]
            b = min(b, sum(math.dist(X[i], X[j]) for j in members) / len(members))
        m = max(a, b)
        s.append(0.0 if m == 0 else (b - a) / m)
    per_cluster = []
    for c in ids:
        vals = [s[i] for i in range(n) if labels[i] == c]
        per_cluster.append(sum(vals) / len(vals))
    return s, per_cluster, sum(per_cluster) / len(per_cluster), sum(s) / n


def davies_bouldin_direct(X, labels):
    X = np.asarray(X, dtype=float)
    ids = sorted(set(labels))
    cents, spread = {}, {}
    for c in ids:
        pts = [X[i] for i in range(len(labels)) if labels[i] == c]
        cents[c] = [sum(p[d] for p in pts) / len(pts) for d in range(X.shape[1])]
        spread[c] = sum(math.dist(p, cents[c]) for p in pts) / len(pts)
    total = 0.0
    for i in ids:
        worst = -math.inf
        for j in ids:
            if i == j:
                continue
            m = math.dist(cents[i], cents[j])
            r = math.inf if m == 0 else (spread[i] + spread[j]) / m
            worst = max(worst, r)
        total += worst
    return total / len(ids)


def partitions(n, k):
    """All labelings of n items into exactly k non-empty unlabeled blocks (canonical form)."""
    def rec(i, labels, used):
        if i == n:
            if used == k:
                yield tuple(labels)
            return
        if k - used > n - i:
            return
        for c in range(min(used + 1, k)):
            labels.append(c)
            yield from rec(i + 1, labels, max(used, c + 1))
            labels.pop()
    yield from rec(0, [], 0)


def optimal_inertia(X, k):
    X = np.asarray(X, dtype=float)
    best = math.inf
    for labels in partitions(len(X), k):
        lab = np.array(labels)
        inertia = 0.0
        for c in range(k):
            pts = X[lab == c]
            inertia += float(((pts - pts.mean(axis=0)) ** 2).sum())
        best = min(best, inertia)
    return best


def minimax_distances(d):
    """All-pairs minimax path distance by a Floyd-Warshall style relaxation."""
    m = np.array(d, dtype=float)
    n = m.shape[0]
    for k in range(n):
        m = np.minimum(m, np.maximum(m[:, k][:, None], m[k, :][None, :]))
    np.fill_diagonal(m, 0.0)
    return m


def single_linkage_bottleneck(d, block_a, block_b):
    """Smallest possible largest hop between two groups, via a union-find MST (Kruskal)."""
    d = np.asarray(d, dtype=float)
    n = d.shape[0]
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    edges = sorted((d[i, j], i, j) for i, j in itertools.combinations(range(n), 2))
    a0, b0 = block_a[0], block_b[0]
    for w, i, j in edges:
        parent[find(i)] = find(j)
        if find(a0) == find(b0):
            return w
    return math.inf


def hopkins_expected_uniform(trials, n, m, rng):
    """Monte-Carlo Hopkins on uniform unit-square data with a brute-force NN search."""
    scores = []
    for _ in range(trials):
        X = rng.uniform(size=(n, 2))
        idx = rng.choice(n, size=m, replace=False)
        syn = rng.uniform(X.min(0), X.max(0), size=(m, 2))
        u = [min(math.dist(p, q) for q in X) for p in syn]
        w = [min(math.dist(X[i], X[j]) for j in range(n) if j != i) for i in idx]
        scores.append(sum(u) / (sum(u) + sum(w)))
    return float(np.mean(scores))


def rect_overlap(a0, a1, b0, b1):
    return max(a0, b0) <= min(a1, b1)


def brute_force_active(num_bands, num_windows, W, boxes):
    """Tile active flags by checking every (tile, box) pair."""
    out = np.zeros(num_bands * num_windows, dtype=bool)
    for t in range(num_bands * num_windows):
        b, w = divmod(t, num_windows)
        for box in boxes:
            if rect_overlap(b * W, b * W + W - 1, box.bin_start, box.bin_end) and \
                    rect_overlap(w * W, w * W + W - 1, box.sweep_start, box.sweep_end):
                out[t] = True
                break
    return out


def confusion_direct(assignments, labels, occupied):
    tp = fp = fn = tn = 0
    for a, lab in zip(assignments, labels):
        if lab == "unknown":
            continue
        pred = a in occupied
        if pred and lab == "active":
            tp += 1
        elif pred:
            fp += 1
        elif lab == "active":
            fn += 1
        else:
            tn += 1
    return {"tp": tp, "fp": fp, "fn": fn, "tn": tn}
