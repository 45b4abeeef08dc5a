"""Independent reference implementations used as test oracles.

These are written from the formulas directly, in the most literal style
available (explicit series, subset enumeration, numpy reductions), and
share no code with the package.
"""

import itertools
import math

import numpy as np


def ssd(v_kmh):
    reaction = 0.278 * v_kmh * 2.5
    braking = 0.039 * v_kmh * v_kmh / 3.4
    return reaction + braking


def rho_fti_series(t, broadcasts, mu_fti, mu_on):
    # explicit geometric sum over broadcasts already aired
    aired = sorted(b for b in broadcasts if b <= t)
    total = 0.0
    for i in range(1, len(aired) + 1):
        total += mu_on * (1 - mu_on) ** (i - 1)
    return mu_fti * total


def p_fti(t, t_e, broadcasts, mu_fti, mu_on):
    d = rho_fti_series(t + t_e, broadcasts, mu_fti, mu_on) - rho_fti_series(t, broadcasts, mu_fti, mu_on)
    return min(1.0, max(0.0, d))


def p_fpi(distance, t, t_start, t_end, has_vms, t_fpi, range_, beta, mean_speed):
    if not has_vms or t < t_fpi:
        return 0.0
    if t < t_start:
        sep = t_start - t
    elif t > t_end:
        sep = t - t_end
    else:
        sep = 0.0
    ell = distance + mean_speed * sep
    return 1.0 / (1.0 + (ell / range_) ** beta)


def rho_os(t, t_os, mu_os, sigma):
    return 0.0 if t < t_os else mu_os * (1 - np.exp(-((t - t_os) ** 2) / (2 * sigma**2)))


def p_os(t, t_e, t_os, mu_os, sigma):
    d = float(rho_os(t + t_e, t_os, mu_os, sigma) - rho_os(t, t_os, mu_os, sigma))
    return min(1.0, max(0.0, d))


def p_ob(t_e, t_typ, threshold, xi):
    excess = t_e - t_typ - threshold
    return float(np.clip(xi * excess, 0.0, 1.0))


def p_aware(components):
    # inclusion-exclusion over all nonempty subsets
    total = 0.0
    idx = range(len(components))
    for k in range(1, len(components) + 1):
        for subset in itertools.combinations(idx, k):
            total += (-1) ** (k + 1) * math.prod(components[i] for i in subset)
    return total


def expected_gain(p, q):
    p, q = np.asarray(p, float), np.asarray(q, float)
    return float(1 - p @ q / (np.linalg.norm(p) * np.linalg.norm(q)))


def avoided_loss(p, q, w):
    p, q, w = (np.asarray(x, float) for x in (p, q, w))
    return float((p @ w - q @ w) / (q @ w))


def logistic(x):
    return float(1 / (1 + np.exp(-x)))


def reroute_probability(dp, dw, bg=2.5, bl=2.5, b0=-5.0):
    return logistic(bg * dp + bl * dw + b0)


# ---------------------------------------------------------------- curves


def lsi(c):
    c = np.asarray(c, float)
    return float(np.mean(np.diff(c) ** 2))


def fpd(c):
    c = np.asarray(c, float)
    return float(abs(c[-1] - c.min()) / c.min())


def cr(c, eps=0.05):
    c = list(map(float, c))
    final = c[-1]
    T = len(c) - 1
    tc = T
    # brute force: smallest t whose whole suffix is inside the band
    for t in range(len(c)):
        if all(abs(x - final) <= eps * abs(final) for x in c[t:]):
            tc = t
            break
    tc = max(tc, 1)
    if final < c[0]:
        return 1 / tc
    if final > c[0]:
        return -1 / tc
    return 0.0


def auc(c):
    c = np.asarray(c, float)
    return float(np.sum((c[:-1] + c[1:]) / 2))


def rauc(base, pert):
    return (auc(pert) - auc(base)) / auc(base)


def pdi(a, b):
    return (b - a) / a


# ---------------------------------------------------------------- paths


def all_simple_paths(successors, origin, dest):
    out = []

    def walk(path):
        e = path[-1]
        if e == dest:
            out.append(list(path))
            return
        for f in successors[e]:
            if f not in path:
                path.append(f)
                walk(path)
                path.pop()

    walk([origin])
    return out


def brute_shortest_cost(successors, costs, origin, dest):
    best = math.inf
    for p in all_simple_paths(successors, origin, dest):
        c = sum(costs[e] for e in p[:-1])
        best = min(best, c)
    return best
