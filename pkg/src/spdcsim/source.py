"""Stochastic photon-pair sources and the detector imperfection stage.

Two generative models are provided:

``PAIR_POISSON``
    Pairs originate as a homogeneous Poisson process of rate ``R``.  The
    idler is emitted at the origination time, the signal after a two-sided
    exponential delay of density ``(gamma/2) exp(-gamma |d|)``.  The normalised
    signal-idler correlation is then ``1 + gamma/(2R) exp(-gamma |tau|)``.

``CLUSTERED_MULTIMODE``
    ``n_modes`` independent pair processes, each driven by the intensity of
    a unit-power complex Ornstein-Uhlenbeck field.  Signal autocorrelation
    is thermal, ``1 + exp(-gamma_auto |tau|) / n_modes``.

Times are generated on a circular interval ``[0, duration)`` so that every
pair member stays inside the observation window.
"""
import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import ConfigError
from .tags import TagStream, quantize

IDLER, SIGNAL1, SIGNAL2 = 0, 1, 2
# channel of the unsplit signal stream
SIGNAL = 3

# candidate over-sampling for the thinning step; P(|a|^2 > c) = exp(-c)
_THINNING_CEILING = 16.0
_CHUNK_EVENTS = 1 << 22


class SourceModel(str, enum.Enum):
    PAIR_POISSON = "PAIR_POISSON"
    CLUSTERED_MULTIMODE = "CLUSTERED_MULTIMODE"


@dataclass(frozen=True)
class SourceParams:
    pair_rate: float
    gamma: float
    n_modes: int = 1
    gamma_auto: float = None
    model: SourceModel = SourceModel.PAIR_POISSON

    def __post_init__(self):
        object.__setattr__(self, "model", SourceModel(self.model))
        if self.gamma_auto is None and self.gamma is not None and self.gamma > 0:
            object.__setattr__(self, "gamma_auto", self.gamma / 2)
        if not self.pair_rate >= 0:
            raise ConfigError(f"pair_rate must be >= 0, got {self.pair_rate}")
        if not (self.gamma is not None and self.gamma > 0):
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if not self.gamma_auto > 0:
            raise ConfigError(f"gamma_auto must be > 0, got {self.gamma_auto}")
        if int(self.n_modes) != self.n_modes or self.n_modes < 1:
            raise ConfigError(f"n_modes must be a positive integer, got {self.n_modes}")

    @property
    def bandwidth_hz(self):
        return self.gamma / (2 * math.pi)

    @classmethod
    def from_bandwidth(cls, bandwidth_hz, pair_rate, **kw):
        return cls(pair_rate=pair_rate, gamma=2 * math.pi * bandwidth_hz, **kw)


@dataclass(frozen=True)
class DetectorParams:
    """Defaults follow the APDs of the experiment: 7.5 % efficiency,
    about 10 us dead time, 162 ps timestamp resolution."""

    efficiency: float = 0.075
    dead_time: float = 10e-6
    dark_rate: float = 0.0
    tick: float = 162e-12

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ConfigError(f"efficiency must lie in [0, 1], got {self.efficiency}")
        if not self.dead_time >= 0:
            raise ConfigError(f"dead_time must be >= 0, got {self.dead_time}")
        if not self.dark_rate >= 0:
            raise ConfigError(f"dark_rate must be >= 0, got {self.dark_rate}")
        if not self.tick > 0:
            raise ConfigError(f"tick must be > 0, got {self.tick}")

    @classmethod
    def ideal(cls, tick=162e-12):
        return cls(efficiency=1.0, dead_time=0.0, dark_rate=0.0, tick=tick)


def _default_detectors():
    return {"idler": DetectorParams(), "s1": DetectorParams(), "s2": DetectorParams()}


@dataclass(frozen=True)
class SimConfig:
    duration: float
    seed: int
    source: SourceParams
    detectors: dict = field(default_factory=_default_detectors)
    splitter_ratio: float = 0.5
    ideal_tick: float = 1e-12

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigError(f"duration must be > 0, got {self.duration}")
        if not 0 <= self.splitter_ratio <= 1:
            raise ConfigError(f"splitter_ratio must lie in [0, 1], got {self.splitter_ratio}")
        if not self.ideal_tick > 0:
            raise ConfigError("ideal_tick must be > 0")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        missing = {"idler", "s1", "s2"} - set(self.detectors)
        if missing:
            raise ConfigError(f"detectors missing for channels {sorted(missing)}")

    def with_source(self, **changes):
        return replace(self, source=replace(self.source, **changes))


def _streams(rng_seq):
    return [np.random.default_rng(s) for s in rng_seq.spawn(4)]


def _laplace_delays(rng, gamma, n):
    return rng.laplace(0.0, 1.0 / gamma, n)


def _wrap_sorted(times, duration):
    times = np.mod(times, duration)
    times.sort()
    return times


def _as_stream(channel, times, cfg):
    tags = quantize(times, cfg.ideal_tick)
    tags.sort()
    return TagStream(channel, tags, cfg.ideal_tick, cfg.duration)


def simulate_pairs(cfg):
    """Ideal (pre-detection) signal and idler streams for ``PAIR_POISSON``."""
    src = cfg.source
    if src.model is not SourceModel.PAIR_POISSON:
        raise ConfigError("simulate_pairs requires model PAIR_POISSON")
    r_count, r_time, r_delay, _ = _streams(np.random.SeedSequence(cfg.seed))
    n = r_count.poisson(src.pair_rate * cfg.duration) if src.pair_rate > 0 else 0
    origin = np.sort(r_time.uniform(0.0, cfg.duration, n))
    signal = _wrap_sorted(origin + _laplace_delays(r_delay, src.gamma, n), cfg.duration)
    return _as_stream(SIGNAL, signal, cfg), _as_stream(IDLER, origin, cfg)


def _thermal_pair_times(rng, rate, theta, duration, backend):
    """Event times of a Poisson process with intensity ``rate |a(t)|^2``.

    Thinning of a homogeneous candidate process, generated in time chunks so
    memory stays bounded; the field state is carried across chunks.
    """
    ceiling = _THINNING_CEILING
    n_chunks = max(1, int(math.ceil(ceiling * rate * duration / _CHUNK_EVENTS)))
    edges = np.linspace(0.0, duration, n_chunks + 1)
    re, im = rng.standard_normal(2) * math.sqrt(0.5)
    t_prev = 0.0
    kept = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        n = rng.poisson(ceiling * rate * (hi - lo))
        cand = np.sort(rng.uniform(lo, hi, n))
        xi = rng.standard_normal((2, n))
        intensity, re, im = backend.ou_intensity(cand, theta, xi[0], xi[1], t_prev, re, im)
        if n:
            t_prev = cand[-1]
        kept.append(cand[rng.uniform(0.0, ceiling, n) < intensity])
    return np.concatenate(kept)


def simulate_clustered(cfg, backend=None):
    """Ideal signal and idler streams for ``CLUSTERED_MULTIMODE``.

    The thermal intensity modulates the signal emission times; the idler is
    displaced from its signal by the pair delay, so the signal keeps the full
    ``1 + 1/n`` bunching and the cross-correlation keeps the pair peak.
    """
    src = cfg.source
    if src.model is not SourceModel.CLUSTERED_MULTIMODE:
        raise ConfigError("simulate_clustered requires model CLUSTERED_MULTIMODE")
    backend = kernels.get_backend(backend) if isinstance(backend, str) else (backend or kernels)
    seq = np.random.SeedSequence(cfg.seed)
    mode_seq, delay_seq = seq.spawn(2)
    theta = src.gamma_auto / 2
    parts = []
    if src.pair_rate > 0:
        for child in mode_seq.spawn(src.n_modes):
            parts.append(_thermal_pair_times(np.random.default_rng(child),
                                             src.pair_rate / src.n_modes, theta,
                                             cfg.duration, backend))
    signal = np.sort(np.concatenate(parts)) if parts else np.zeros(0)
    delays = _laplace_delays(np.random.default_rng(delay_seq), src.gamma, len(signal))
    idler = _wrap_sorted(signal - delays, cfg.duration)
    return _as_stream(SIGNAL, signal, cfg), _as_stream(IDLER, idler, cfg)


def simulate_source(cfg, backend=None):
    if cfg.source.model is SourceModel.PAIR_POISSON:
        return simulate_pairs(cfg)
    return simulate_clustered(cfg, backend=backend)


def apply_detector(ideal, det, seed, channel_id=None, backend=None):
    """Thin by efficiency, add dark counts, quantise, enforce dead time."""
    backend = kernels.get_backend(backend) if isinstance(backend, str) else (backend or kernels)
    rng_thin, rng_dark = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)]
    times = ideal.times
    if det.efficiency < 1:
        times = times[rng_thin.random(len(times)) < det.efficiency]
    if det.dark_rate > 0:
        n_dark = rng_dark.poisson(det.dark_rate * ideal.span)
        times = np.concatenate([times, rng_dark.uniform(0.0, ideal.span, n_dark)])
    tags = quantize(times, det.tick)
    tags.sort(kind="stable")
    if det.dead_time > 0 and len(tags):
        tags = tags[backend.dead_time_mask(tags, det.dead_time / det.tick)]
    channel = ideal.channel_id if channel_id is None else channel_id
    return TagStream(channel, tags, det.tick, ideal.span)


def split_beam(signal, ratio, seed):
    """50:50 (or ``ratio``) beamsplitter: each tag goes to s1 with probability ``ratio``."""
    if not 0 <= ratio <= 1:
        raise ConfigError(f"splitter ratio must lie in [0, 1], got {ratio}")
    to_first = np.random.default_rng(seed).random(len(signal)) < ratio
    return (TagStream(SIGNAL1, signal.tags[to_first], signal.tick, signal.span),
            TagStream(SIGNAL2, signal.tags[~to_first], signal.tick, signal.span))


def simulate(cfg, backend=None):
    """Full chain: source, beamsplitter on the signal arm, three detectors.

    Returns a dict with keys ``idler``, ``s1``, ``s2`` (detected streams).
    """
    signal, idler = simulate_source(cfg, backend=backend)
    seeds = np.random.SeedSequence([cfg.seed, 0x5eed]).generate_state(4, dtype=np.uint64)
    s1, s2 = split_beam(signal, cfg.splitter_ratio, int(seeds[0]))
    return {
        "idler": apply_detector(idler, cfg.detectors["idler"], int(seeds[1]), IDLER, backend),
        "s1": apply_detector(s1, cfg.detectors["s1"], int(seeds[2]), SIGNAL1, backend),
        "s2": apply_detector(s2, cfg.detectors["s2"], int(seeds[3]), SIGNAL2, backend),
    }
