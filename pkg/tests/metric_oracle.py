"""Plain-loop metric definitions used as an oracle for the vectorised implementation."""

import math


def _sq(x):
    return x * x


def _dist(p, q):
    return math.sqrt(_sq(p[0] - q[0]) + _sq(p[1] - q[1]))


def _tangent(gt, t):
    n = len(gt)
    if t == 0:
        d = (gt[1][0] - gt[0][0], gt[1][1] - gt[0][1])
    elif t == n - 1:
        d = (gt[n - 1][0] - gt[n - 2][0], gt[n - 1][1] - gt[n - 2][1])
    else:
        d = ((gt[t + 1][0] - gt[t - 1][0]) / 2, (gt[t + 1][1] - gt[t - 1][1]) / 2)
    L = math.sqrt(_sq(d[0]) + _sq(d[1]))
    return d[0] / L, d[1] / L


def naive_agent_metrics(trajs, probs, gt):
    K, T = len(trajs), len(gt)
    out = {}
    for k in (1, 6):
        fde = [_dist(trajs[m][T - 1], gt[T - 1]) for m in range(k)]
        ade = [sum(_dist(trajs[m][t], gt[t]) for t in range(T)) / T for m in range(k)]
        if k == 1:
            best, p = 0, 1.0
        else:
            best = 0
            for m in range(k):
                if fde[m] < fde[best]:
                    best = m
            p = probs[best] / sum(probs[:k])
        out[f"minADE@{k}"] = min(ade)
        out[f"minFDE@{k}"] = fde[best]
        out[f"brierFDE@{k}"] = fde[best] + _sq(1 - p)
        out[f"MR@{k}"] = 1.0 if fde[best] > 2.0 else 0.0
        tx, ty = _tangent(gt, T - 1)
        ex, ey = trajs[best][T - 1][0] - gt[T - 1][0], trajs[best][T - 1][1] - gt[T - 1][1]
        along, cross = abs(ex * tx + ey * ty), abs(tx * ey - ty * ex)
        if k == 1:
            out["ATE@1"], out["CTE@1"] = along, cross
        else:
            out["brierATE@6"] = along + _sq(1 - p)
            out["brierCTE@6"] = cross + _sq(1 - p)
    return out
