"""Slow, obviously-correct reference implementations used by the tests."""

import itertools

import numpy as np


def brute_f1(scores, labels):
    """Best F1 over every "predict positive when score >= s" cut, plus the empty prediction."""
    scores, labels = list(scores), [bool(v) for v in labels]
    best = 0.0
    for cut in sorted(set(scores)) + [float("inf")]:
        tp = fp = fn = 0
        for s, y in zip(scores, labels):
            pred = s >= cut
            tp += pred and y
            fp += pred and not y
            fn += (not pred) and y
        denom = 2 * tp + fp + fn
        best = max(best, 2 * tp / denom if denom else 0.0)
    return best


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def loop_shd(pred, truth):
    n = len(pred)
    upper = lower = 0
    for i in range(n):
        for j in range(n):
            if bool(pred[i][j]) != bool(truth[i][j]):
                if j > i:
                    upper += 1
                elif j < i:
                    lower += 1
    return upper, lower


def sort_placement(table, higher_is_better):
    """Mean rank per row, ranks assigned by sorting each column and averaging tied positions."""
    table = np.asarray(table, dtype=float)
    n, k = table.shape
    ranks = np.zeros((n, k))
    for j in range(k):
        col = table[:, j] * (-1 if higher_is_better[j] else 1)
        order = sorted(range(n), key=lambda i: col[i])
        pos = 0
        while pos < n:
            end = pos
            while end + 1 < n and col[order[end + 1]] == col[order[pos]]:
                end += 1
            for q in range(pos, end + 1):
                ranks[order[q], j] = (pos + end) / 2 + 1
            pos = end + 1
    return ranks.mean(axis=1)


def best_permutation(f1_table):
    """Exhaustive assignment maximizing total F1 (rows: estimates, cols: truths)."""
    n = len(f1_table)
    return max(itertools.permutations(range(n)), key=lambda p: sum(f1_table[e][p[e]] for e in range(n)))


def cmlp_oracle(f, window):
    """Loop-based forecast for one (n_c, tau_in) window, oldest step first."""
    n_c, tau = window.shape
    out = np.zeros(n_c)
    for i in range(n_c):
        h = f.b1.data[i].copy()
        for u in range(h.size):
            for j in range(n_c):
                for t in range(tau):
                    h[u] += f.w1.data[i, u, j, t] * window[j, tau - 1 - t]
        h = np.maximum(h, 0.0)
        for w, b in f.layers:
            h = np.maximum(w.data[i] @ h + b.data[i], 0.0)
        out[i] = f.w_out.data[i] @ h + f.b_out.data[i]
    return out
