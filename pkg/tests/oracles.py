"""Independent reference implementations used by the tests.

Everything here is deliberately naive: Python loops and exact rationals.
"""
import math
from fractions import Fraction

import numpy as np


def ticks_per(seconds, tick):
    # durations are snapped to the simplest rational multiple of the tick
    return Fraction(seconds / tick).limit_denominator(10**6)


def bin_of_delay(d, tick, bin_width, half_bins):
    """Bin index of an integer tick delay, or None when outside the layout."""
    k = math.floor(Fraction(int(d)) / ticks_per(bin_width, tick) + Fraction(1, 2))
    k += half_bins
    return k if 0 <= k <= 2 * half_bins else None


def brute_histogram(a, b, tick, bin_width, half_bins, exclude_self=False):
    """O(N^2) windowed pairwise histogram of ``b - a``.

    Differences are formed for every pair (vectorised per start tag), and each
    distinct delay is binned once with exact rational arithmetic.
    """
    counts = np.zeros(2 * half_bins + 1, dtype=np.int64)
    cache = {}
    # generous bound: anything beyond cannot fall in a bin
    reach = math.ceil((half_bins + 1) * ticks_per(bin_width, tick)) + 1
    b = np.asarray(b, dtype=np.int64)
    for i, t in enumerate(np.asarray(a, dtype=np.int64)):
        d = b - t
        if exclude_self:
            d = np.delete(d, i)
        d = d[np.abs(d) <= reach]
        vals, mult = np.unique(d, return_counts=True)
        for v, m in zip(vals.tolist(), mult.tolist()):
            if v not in cache:
                cache[v] = bin_of_delay(v, tick, bin_width, half_bins)
            k = cache[v]
            if k is not None:
                counts[k] += m
    return counts


def brute_coincidences(a, b, tick, window):
    """Number of ``a`` tags with some ``b`` tag at ``|t_b - t_a| * tick <= window / 2``."""
    half = ticks_per(window / 2, tick)
    n = 0
    b = np.asarray(b, dtype=np.int64)
    if len(b) == 0:
        return 0
    for t in np.asarray(a, dtype=np.int64):
        if Fraction(int(np.abs(b - t).min())) <= half:
            n += 1
    return n


def greedy_dead_time(ticks, dead_ticks):
    """Reference non-paralyzable filter."""
    keep = []
    last = None
    for t in ticks:
        if last is None or t - last > dead_ticks:
            keep.append(True)
            last = t
        else:
            keep.append(False)
    return np.array(keep, dtype=bool)


def ou_reference(times, theta, xi_re, xi_im, t0, a_re, a_im):
    """Sequential exact-discretisation OU recursion."""
    out = np.empty(len(times))
    prev = t0
    for k, t in enumerate(times):
        c = math.exp(-theta * (t - prev))
        s = math.sqrt((1 - c * c) / 2)
        a_re = c * a_re + s * xi_re[k]
        a_im = c * a_im + s * xi_im[k]
        out[k] = a_re * a_re + a_im * a_im
        prev = t
    return out, a_re, a_im
