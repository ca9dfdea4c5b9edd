"""Multi-step analyses shared by the command line and the acceptance suite."""
import math
from dataclasses import dataclass, replace

import numpy as np

from .correlator import (CorrelationMode, CorrelogramConfig, G2Curve, coincidences,
                         cross_correlogram, normalize_g2)
from .errors import NormalizationError, NumericalError
from .inference import fit_exponential, pump_conversion_fit
from .source import SIGNAL, simulate
from .tags import TagStream, check_ticks


def merge_signal(s1, s2):
    """Both beamsplitter outputs as one signal stream."""
    tick = check_ticks(s1, s2)
    tags = np.sort(np.concatenate([s1.tags, s2.tags]), kind="stable")
    return TagStream(SIGNAL, tags, tick, max(s1.span, s2.span))


def pair_efficiency(cfg):
    """Probability that both photons of a pair are detected (ignoring dead time)."""
    d = cfg.detectors
    eta_s = cfg.splitter_ratio * d["s1"].efficiency + (1 - cfg.splitter_ratio) * d["s2"].efficiency
    return d["idler"].efficiency * eta_s


def derived_seed(seed, index):
    return int(np.random.SeedSequence([int(seed), 0x9a3e, int(index)]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ScanPoint:
    power_mW: float
    pair_rate_hz: float
    coincidences: int
    coincidence_rate_hz: float
    coincidence_rate_stderr_hz: float
    g2_peak: float
    n_idler: int
    n_signal: int


def pump_scan(cfg, powers_mW, pairs_per_s_per_mW, window=30e-9, corr=None, backend=None):
    """Simulate one run per pump power and regress coincidence rate on power.

    The coincidence rate is divided by the pair detection efficiency and by
    the fraction of the two-sided exponential delay density captured by the
    window.  That fraction uses the decay rate fitted to the pooled
    correlogram of all runs, not the configured value.
    """
    corr = corr or CorrelogramConfig(mode=CorrelationMode.WINDOWED_PAIRWISE)
    points, counts, norm = [], None, 0.0
    for i, p in enumerate(powers_mW):
        run_cfg = replace(cfg.with_source(pair_rate=pairs_per_s_per_mW * p),
                          seed=derived_seed(cfg.seed, i))
        run = simulate(run_cfg, backend=backend)
        idler, sig = run["idler"], merge_signal(run["s1"], run["s2"])
        c = coincidences(idler, sig, window)
        h = cross_correlogram(idler, sig, corr, backend=backend)
        try:
            g = normalize_g2(h)
            g0 = float(g.at_zero()[0])
            norm += len(idler) * len(sig) * corr.bin_width / h.span
        except NormalizationError:
            g0 = float("nan")
        counts = h.counts if counts is None else counts + h.counts
        points.append(ScanPoint(float(p), pairs_per_s_per_mW * p, c, c / cfg.duration,
                                math.sqrt(c) / cfg.duration, g0, len(idler), len(sig)))
    if norm <= 0:
        raise NumericalError("no detections in any run; cannot estimate the pair bandwidth")
    pooled = G2Curve(corr.centers, counts / norm, np.sqrt(np.maximum(counts, 1)) / norm,
                     counts, corr.bin_width, corr.mode)
    shape = fit_exponential(pooled)
    frac = 1.0 - math.exp(-shape.decay_rate * window / 2)
    fit = pump_conversion_fit([(pt.power_mW, pt.coincidence_rate_hz) for pt in points],
                              eta_pair=pair_efficiency(cfg), window_fraction=frac)
    return points, fit, shape
