"""Time-tag streams: the common currency of simulator, correlator and files."""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, FormatError

EVENT_DTYPE = np.dtype([("channel", np.uint8), ("tick", np.int64)])


@dataclass(frozen=True, eq=False)
class TagStream:
    """Sorted integer timestamps (in ``tick`` seconds) recorded on one channel.

    ``span`` is the observation time in seconds; every tag lies in
    ``[0, span / tick]``.  The tag array is made read-only on construction.
    """

    channel_id: int
    tags: np.ndarray
    tick: float
    span: float

    def __post_init__(self):
        tags = np.array(self.tags, dtype=np.int64, copy=True)
        if tags.ndim != 1:
            raise ContractError("tags must be one-dimensional")
        if not self.tick > 0:
            raise ConfigError(f"tick must be positive, got {self.tick}")
        if not self.span >= 0:
            raise ConfigError(f"span must be non-negative, got {self.span}")
        if len(tags) and np.any(np.diff(tags) < 0):
            raise ContractError(f"tags on channel {self.channel_id} are not sorted")
        if len(tags) and (tags[0] < 0 or tags[-1] > self.span_ticks):
            raise ContractError(f"tags on channel {self.channel_id} fall outside [0, span]")
        tags.setflags(write=False)
        object.__setattr__(self, "tags", tags)

    def __len__(self):
        return len(self.tags)

    @property
    def span_ticks(self):
        return int(math.floor(self.span / self.tick + 0.5))

    @property
    def times(self):
        """Tag times in seconds (float64)."""
        return self.tags * self.tick

    @property
    def rate(self):
        return len(self.tags) / self.span if self.span > 0 else 0.0

    def with_channel(self, channel_id):
        return TagStream(channel_id, self.tags, self.tick, self.span)

    def __eq__(self, other):
        if not isinstance(other, TagStream):
            return NotImplemented
        return (self.channel_id == other.channel_id and same_tick(self.tick, other.tick)
                and self.span_ticks == other.span_ticks
                and np.array_equal(self.tags, other.tags))


def same_tick(t1, t2):
    return math.isclose(t1, t2, rel_tol=1e-9, abs_tol=0.0)


def check_ticks(*streams):
    """Raise :class:`FormatError` unless all streams share one tick."""
    ticks = [s.tick for s in streams]
    for t in ticks[1:]:
        if not same_tick(t, ticks[0]):
            raise FormatError(f"mismatched tick resolutions: {ticks}")
    return ticks[0]


def quantize(times, tick):
    """Round seconds to the nearest tick; exact halves go toward -inf."""
    return np.ceil(np.asarray(times, dtype=np.float64) / tick - 0.5).astype(np.int64)


def merge_streams(streams):
    """Merge streams into one time-ordered record array of (channel, tick).

    Equal timestamps are ordered by channel id.
    """
    streams = list(streams)
    if not streams:
        return np.zeros(0, dtype=EVENT_DTYPE)
    check_ticks(*streams)
    order = sorted(range(len(streams)), key=lambda i: streams[i].channel_id)
    ticks = np.concatenate([streams[i].tags for i in order])
    chans = np.concatenate([np.full(len(streams[i]), streams[i].channel_id, dtype=np.uint8)
                            for i in order])
    perm = np.argsort(ticks, kind="stable")
    out = np.empty(len(ticks), dtype=EVENT_DTYPE)
    out["channel"] = chans[perm]
    out["tick"] = ticks[perm]
    return out


def split_events(events, tick, span, channels=None):
    """Inverse of :func:`merge_streams`: one TagStream per channel."""
    if channels is None:
        channels = np.unique(events["channel"]).tolist()
    return {int(c): TagStream(int(c), events["tick"][events["channel"] == c], tick, span)
            for c in channels}
