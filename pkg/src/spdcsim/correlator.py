"""Coincidence counting and second-order correlation estimators.

Delays are always ``t_b - t_a``.  Bins have width ``bin_width``, are closed on
the left and open on the right, and bin ``k`` is centred on
``(k - K) * bin_width`` with ``K = ceil(max_lag / bin_width)``.  Bin membership
is decided in exact rational arithmetic on the tick grid, so the compiled and
numpy kernels and any brute-force check agree to the count.  Durations are
converted to tick units with :func:`tick_ratio`.
"""
import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.signal import fftconvolve

from . import kernels
from .errors import ConfigError, NormalizationError
from .tags import check_ticks

_MAX_DENOMINATOR = 10**6


class CorrelationMode(str, enum.Enum):
    START_STOP = "START_STOP"
    WINDOWED_PAIRWISE = "WINDOWED_PAIRWISE"


@dataclass(frozen=True)
class CorrelogramConfig:
    bin_width: float = 3e-9
    max_lag: float = 300e-9
    mode: CorrelationMode = CorrelationMode.START_STOP

    def __post_init__(self):
        object.__setattr__(self, "mode", CorrelationMode(self.mode))
        if not self.bin_width > 0:
            raise ConfigError(f"bin_width must be > 0, got {self.bin_width}")
        if not self.max_lag >= self.bin_width * (1 - 1e-9):
            raise ConfigError("max_lag must be at least one bin width")

    @property
    def half_bins(self):
        # guard against 30e-9 / 3e-9 == 10.000000000000002
        return int(math.ceil(self.max_lag / self.bin_width - 1e-9))

    @property
    def n_bins(self):
        return 2 * self.half_bins + 1

    @property
    def centers(self):
        return (np.arange(self.n_bins) - self.half_bins) * self.bin_width

    @property
    def edges(self):
        return (np.arange(self.n_bins + 1) - self.half_bins - 0.5) * self.bin_width

    def to_dict(self):
        return {"bin_width_s": self.bin_width, "max_lag_s": self.max_lag, "mode": self.mode.value}


def tick_ratio(seconds, tick):
    """``seconds / tick`` as the simplest rational within float resolution.

    3 ns / 0.5 ns is exactly 6 and 3 ns / 162 ps exactly 500/27, rather than
    the ratio of the two binary floating-point values.
    """
    return Fraction(seconds / tick).limit_denominator(_MAX_DENOMINATOR)


def lag_ticks(seconds, tick):
    """Largest tick count whose duration does not exceed ``seconds``."""
    return math.floor(tick_ratio(seconds, tick))


def bin_thresholds(cfg, tick):
    """Integer tick edges: ``edges[k]`` is the smallest delay in bin ``k``,
    ``edges[-1]`` the first delay past the last bin."""
    ratio = tick_ratio(cfg.bin_width, tick)
    K = cfg.half_bins
    return np.array([math.ceil(Fraction(2 * (k - K) - 1, 2) * ratio)
                     for k in range(cfg.n_bins + 1)], dtype=np.int64)


def bin_index(delays, edges):
    """Bin of each tick delay; -1 or ``len(edges) - 1`` when outside."""
    return np.searchsorted(edges, delays, side="right") - 1


def _histogram(delays, edges):
    k = bin_index(delays, edges)
    k = k[(k >= 0) & (k < len(edges) - 1)]
    return np.bincount(k, minlength=len(edges) - 1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class Correlogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    n_a: int
    n_b: int
    span: float
    config: CorrelogramConfig
    autocorrelation: bool = False

    @property
    def centers(self):
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    def mirrored(self):
        return Correlogram(self.bin_edges, self.counts[::-1].copy(), self.n_b, self.n_a,
                           self.span, self.config, self.autocorrelation)


@dataclass(frozen=True, eq=False)
class G2Curve:
    tau: np.ndarray
    g2: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray = None
    bin_width: float = None
    mode: CorrelationMode = CorrelationMode.WINDOWED_PAIRWISE
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.counts is None:
            object.__setattr__(self, "counts", np.zeros(len(self.tau), dtype=np.int64))
        object.__setattr__(self, "mode", CorrelationMode(self.mode))

    def __len__(self):
        return len(self.tau)

    def at_zero(self):
        k = int(np.argmin(np.abs(self.tau)))
        return self.g2[k], self.stderr[k]


def _resolve(backend):
    if backend is None:
        return kernels
    return kernels.get_backend(backend) if isinstance(backend, str) else backend


def cross_correlogram(a, b, cfg=None, backend=None):
    """Delay histogram of stream ``b`` relative to stream ``a``.

    Passing the same stream object twice gives the autocorrelation with
    self-pairs removed.
    """
    cfg = cfg or CorrelogramConfig()
    tick = check_ticks(a, b)
    auto = a is b
    edges = bin_thresholds(cfg, tick)
    if cfg.mode is CorrelationMode.WINDOWED_PAIRWISE:
        counts = _resolve(backend).windowed_histogram(a.tags, b.tags, edges, auto)
    else:
        counts = _start_stop(a.tags, b.tags, edges, auto)
    return Correlogram(cfg.edges, np.asarray(counts, dtype=np.int64), len(a), len(b),
                       max(a.span, b.span), cfg, auto)


def _start_stop(a, b, edges, auto):
    if len(a) == 0 or len(b) == 0:
        return np.zeros(len(edges) - 1, dtype=np.int64)
    if auto:
        # neighbours in stream order; equal timestamps count as subsequent
        d = np.concatenate([np.diff(a), -np.diff(a)])
    else:
        nxt = np.searchsorted(b, a, side="left")
        ok = nxt < len(b)
        prev = nxt - 1
        okp = prev >= 0
        d = np.concatenate([b[nxt[ok]] - a[ok], b[prev[okp]] - a[okp]])
    return _histogram(d, edges)


def normalize_g2(h):
    """Normalise so that uncorrelated streams give ``g2 = 1``.

    Empty bins get ``g2 = 0`` with the one-count upper bound as error.
    """
    if not h.span > 0:
        raise NormalizationError("correlogram span must be positive")
    if h.n_a == 0 or h.n_b == 0:
        raise NormalizationError("cannot normalise: one of the streams is empty")
    norm = h.n_a * h.n_b * h.config.bin_width / h.span
    counts = h.counts.astype(np.float64)
    return G2Curve(h.centers.copy(), counts / norm, np.sqrt(np.maximum(counts, 1.0)) / norm,
                   h.counts.copy(), h.config.bin_width, h.config.mode,
                   {"n_a": h.n_a, "n_b": h.n_b, "span_s": h.span})


def coincidences(a, b, window):
    """Number of ``a`` tags with at least one ``b`` tag within ``+-window/2``."""
    tick = check_ticks(a, b)
    if len(a) == 0 or len(b) == 0:
        return 0
    w = lag_ticks(window / 2, tick)
    first = np.searchsorted(b.tags, a.tags - w, side="left")
    hit = first < len(b)
    hit[hit] = b.tags[first[hit]] <= a.tags[hit] + w
    return int(hit.sum())


def _herald_offsets(idler, stream, h):
    """For each idler tag, offsets ``t_s - t_i`` of stream tags in ``[-h, h]``.

    Returns (idler index per offset, offset) flattened, plus per-idler counts.
    """
    lo = np.searchsorted(stream, idler - h, side="left")
    hi = np.searchsorted(stream, idler + h, side="right")
    n = hi - lo
    owner = np.repeat(np.arange(len(idler)), n)
    pos = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n) + np.repeat(lo, n)
    return owner, stream[pos] - idler[owner], n


def conditioned_g2(s1, s2, idler, herald_halfwidth=10e-9, cfg=None, with_surface=False):
    """Signal autocorrelation conditioned on an idler detection.

    Numerator: all (s1, s2) pairs with both tags within ``+-herald_halfwidth``
    of the same idler tag, histogrammed in ``t_s1 - t_s2``.  Denominator: the
    same histogram expected if s1 and s2 were independent given the herald,
    built from the measured herald-to-signal delay distributions (the
    empirical form of ``R^3 g_si(t_s1 - t_i) g_si(t_s2 - t_i)``).  Independent
    streams therefore give 1 in every bin.  Only bins that overlap
    ``[-2 * herald_halfwidth, 2 * herald_halfwidth]`` are returned, so every
    triple lands in a returned bin.
    """
    cfg = cfg or CorrelogramConfig(mode=CorrelationMode.WINDOWED_PAIRWISE)
    if not herald_halfwidth > 0:
        raise ConfigError("herald_halfwidth must be positive")
    if herald_halfwidth > cfg.max_lag:
        raise ConfigError("herald interval exceeds the correlogram max_lag")
    tick = check_ticks(s1, s2, idler)
    h = lag_ticks(herald_halfwidth, tick)
    edges = bin_thresholds(cfg, tick)
    nb = cfg.n_bins
    it = idler.tags

    own1, off1, n1 = _herald_offsets(it, s1.tags, h)
    own2, off2, n2 = _herald_offsets(it, s2.tags, h)

    # numerator: every (s1, s2) combination under the same herald
    pairs = n1 * n2
    numer = np.zeros(nb, dtype=np.int64)
    if pairs.sum():
        start1 = np.cumsum(n1) - n1
        start2 = np.cumsum(n2) - n2
        who = np.repeat(np.arange(len(it)), pairs)
        k = np.arange(pairs.sum()) - np.repeat(np.cumsum(pairs) - pairs, pairs)
        j1 = start1[who] + k // n2[who]
        j2 = start2[who] + k % n2[who]
        numer = _histogram(off1[j1] - off2[j2], edges)

    # denominator: C1 (*) reversed C2 over tick offsets, divided by herald count
    c1 = np.bincount(off1 + h, minlength=2 * h + 1).astype(np.float64)
    c2 = np.bincount(off2 + h, minlength=2 * h + 1).astype(np.float64)
    denom = np.zeros(nb)
    if len(it) and c1.any() and c2.any():
        cross = np.rint(fftconvolve(c1, c2[::-1])) / len(it)
        lags = np.arange(-2 * h, 2 * h + 1)
        k = bin_index(lags, edges)
        ok = (k >= 0) & (k < nb)
        denom = np.bincount(k[ok], weights=cross[ok], minlength=nb)

    centers = cfg.centers
    keep = np.abs(centers) - cfg.bin_width / 2 <= 2 * herald_halfwidth * (1 + 1e-12)
    numer, denom, centers = numer[keep], denom[keep], centers[keep]
    g2 = np.zeros(len(centers))
    err = np.zeros(len(centers))
    ok = denom > 0
    g2[ok] = numer[ok] / denom[ok]
    err[ok] = np.sqrt(np.maximum(numer[ok], 1)) / denom[ok]
    meta = {"heralds": int(len(it)), "heralded_s1": int(len(off1)),
            "heralded_s2": int(len(off2)), "triples": int(numer.sum()),
            "herald_halfwidth_s": herald_halfwidth, "expected": denom.tolist()}
    curve = G2Curve(centers, g2, err, numer, cfg.bin_width, cfg.mode, meta)
    if with_surface:
        return curve, _surface(off1, own1, off2, own2, h)
    return curve


def _surface(off1, own1, off2, own2, h):
    """Two-dimensional triple histogram over (t_s1 - t_i, t_s2 - t_i) in ticks."""
    surf = np.zeros((2 * h + 1, 2 * h + 1), dtype=np.int64)
    if len(off1) == 0 or len(off2) == 0:
        return surf
    order2 = np.argsort(own2, kind="stable")
    own2, off2 = own2[order2], off2[order2]
    lo = np.searchsorted(own2, own1, side="left")
    hi = np.searchsorted(own2, own1, side="right")
    for i in np.flatnonzero(hi > lo):
        np.add.at(surf, (off1[i] + h, off2[lo[i]:hi[i]] + h), 1)
    return surf
