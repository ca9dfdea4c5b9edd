"""File formats: time-tag files, curve tables, config documents, manifests.

Binary tag file layout (all little-endian)::

    offset  size  field
    0       8     magic  b"SPDCTAG1"
    8       2     version (uint16, currently 1)
    10      4     tick in picoseconds (uint32)
    14      2     channel count C (uint16)
    16      8     span in ticks (uint64)
    24      8     record count N (uint64)
    32      C     channel ids (uint8 each)
    32+C    9*N   records: channel (uint8), tick (uint64), time ordered

The CSV form carries the same header as ``# key=value`` comment lines
followed by a ``channel,tick`` table.
"""
import contextlib
import csv
import hashlib
import io
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np
import yaml

from .correlator import CorrelationMode, G2Curve
from .errors import ConfigError, ContractError, FormatError
from .source import DetectorParams, SimConfig, SourceModel, SourceParams
from .tags import TagStream, merge_streams, split_events

MAGIC = b"SPDCTAG1"
VERSION = 1
_HEADER = struct.Struct("<8sHIHQQ")
RECORD_DTYPE = np.dtype([("channel", "u1"), ("tick", "<u8")])
CSV_MAGIC = "# spdcsim-tags"


@dataclass(frozen=True)
class TagFileHeader:
    version: int
    tick_ps: int
    channels: tuple
    span_ticks: int
    n_records: int

    @property
    def tick(self):
        return self.tick_ps / 1e12

    @property
    def channel_count(self):
        return len(self.channels)

    @property
    def span(self):
        return self.span_ticks * self.tick


def _tick_ps(tick):
    ps = tick * 1e12
    r = int(round(ps))
    if r <= 0 or not math.isclose(ps, r, rel_tol=1e-9):
        raise FormatError(f"tick {tick} s is not an integer number of picoseconds")
    return r


def _header_for(streams):
    streams = list(streams)
    if not streams:
        raise FormatError("no streams to write")
    tick_ps = _tick_ps(streams[0].tick)
    for s in streams[1:]:
        if _tick_ps(s.tick) != tick_ps:
            raise FormatError("streams written to one file must share a tick")
    chans = tuple(sorted(int(s.channel_id) for s in streams))
    if len(set(chans)) != len(chans):
        raise FormatError("duplicate channel ids")
    span_ticks = max(s.span_ticks for s in streams)
    return TagFileHeader(VERSION, tick_ps, chans, span_ticks, sum(len(s) for s in streams))


# --------------------------------------------------------------------------
# atomic outputs


class OutputSet:
    """Collects output files under temporary names and publishes them only if
    the whole command succeeds, so a failure never leaves partial outputs."""

    def __init__(self, directory):
        self.directory = os.fspath(directory)
        self._pending = []

    def path(self, name):
        os.makedirs(self.directory, exist_ok=True)
        final = os.path.join(self.directory, name)
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", suffix=".part", dir=self.directory)
        os.close(fd)
        self._pending.append((tmp, final))
        return tmp

    def commit(self):
        mask = os.umask(0)
        os.umask(mask)
        for tmp, final in self._pending:
            os.chmod(tmp, 0o666 & ~mask)
            os.replace(tmp, final)
        done = [final for _, final in self._pending]
        self._pending = []
        return done

    def discard(self):
        for tmp, _ in self._pending:
            with contextlib.suppress(FileNotFoundError):
                os.remove(tmp)
        self._pending = []

    def final_names(self):
        return [final for _, final in self._pending]

    def temp_for(self, final):
        for tmp, f in self._pending:
            if f == final:
                return tmp
        raise KeyError(final)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.commit()
        else:
            self.discard()
        return False


# --------------------------------------------------------------------------
# tag files


def write_tags_binary(path, streams):
    if isinstance(streams, TagStream):
        streams = [streams]
    hdr = _header_for(streams)
    events = merge_streams(streams)
    rec = np.empty(len(events), dtype=RECORD_DTYPE)
    rec["channel"] = events["channel"]
    rec["tick"] = events["tick"]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, hdr.version, hdr.tick_ps, hdr.channel_count,
                              hdr.span_ticks, hdr.n_records))
        fh.write(bytes(hdr.channels))
        fh.write(rec.tobytes())
    return hdr


def read_header_binary(fh):
    raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise FormatError("file is shorter than the tag-file header")
    magic, version, tick_ps, nchan, span_ticks, n = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported tag-file version {version}")
    if tick_ps == 0:
        raise FormatError("header tick must be > 0")
    chans = fh.read(nchan)
    if len(chans) != nchan:
        raise FormatError("truncated channel table")
    return TagFileHeader(version, tick_ps, tuple(chans), span_ticks, n)


def read_tags_binary(path):
    """Returns ``(header, {channel_id: TagStream})``."""
    with open(path, "rb") as fh:
        hdr = read_header_binary(fh)
        payload = fh.read()
    if len(payload) != hdr.n_records * RECORD_DTYPE.itemsize:
        raise FormatError(f"{path}: header declares {hdr.n_records} records, payload holds "
                          f"{len(payload) / RECORD_DTYPE.itemsize:g}")
    rec = np.frombuffer(payload, dtype=RECORD_DTYPE)
    return hdr, _streams_from_records(hdr, rec["channel"], rec["tick"], path)


def _streams_from_records(hdr, channels, ticks, path):
    if len(ticks) and ticks.max() > np.iinfo(np.int64).max:
        raise FormatError(f"{path}: tick value overflows int64")
    unknown = set(np.unique(channels).tolist()) - set(hdr.channels)
    if unknown:
        raise FormatError(f"{path}: records on undeclared channels {sorted(unknown)}")
    ticks = ticks.astype(np.int64)
    if len(ticks) and np.any(np.diff(ticks) < 0):
        raise ContractError(f"{path}: records are not time ordered")
    events = np.empty(len(ticks), dtype=[("channel", np.uint8), ("tick", np.int64)])
    events["channel"], events["tick"] = channels, ticks
    return split_events(events, hdr.tick, hdr.span, hdr.channels)


def write_tags_csv(path, streams):
    if isinstance(streams, TagStream):
        streams = [streams]
    hdr = _header_for(streams)
    events = merge_streams(streams)
    with open(path, "w", newline="") as fh:
        fh.write(f"{CSV_MAGIC} v{hdr.version}\n")
        fh.write(f"# tick_ps={hdr.tick_ps}\n")
        fh.write(f"# span_ticks={hdr.span_ticks}\n")
        fh.write(f"# channels={','.join(map(str, hdr.channels))}\n")
        fh.write(f"# records={hdr.n_records}\n")
        fh.write("channel,tick\n")
        buf = io.StringIO()
        np.savetxt(buf, np.column_stack([events["channel"].astype(np.int64), events["tick"]]),
                   fmt="%d", delimiter=",")
        fh.write(buf.getvalue())
    return hdr


def read_tags_csv(path):
    meta = {}
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith(CSV_MAGIC):
            raise FormatError(f"{path}: not a tag CSV (missing '{CSV_MAGIC}' line)")
        try:
            version = int(first.split()[-1].lstrip("v"))
        except ValueError as exc:
            raise FormatError(f"{path}: bad version line") from exc
        line = fh.readline()
        while line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key.strip()] = val.strip()
            line = fh.readline()
        if line.strip() != "channel,tick":
            raise FormatError(f"{path}: expected 'channel,tick' column header")
        body = fh.read()
    try:
        hdr = TagFileHeader(version, int(meta["tick_ps"]),
                            tuple(int(c) for c in meta["channels"].split(",") if c),
                            int(meta["span_ticks"]), int(meta["records"]))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: incomplete header ({exc})") from exc
    if version != VERSION:
        raise FormatError(f"unsupported tag-file version {version}")
    if hdr.tick_ps <= 0:
        raise FormatError("header tick must be > 0")
    data = np.loadtxt(io.StringIO(body), delimiter=",", dtype=np.int64, ndmin=2) \
        if body.strip() else np.zeros((0, 2), dtype=np.int64)
    if len(data) != hdr.n_records:
        raise FormatError(f"{path}: header declares {hdr.n_records} records, found {len(data)}")
    if len(data) and (data[:, 0].min() < 0 or data[:, 0].max() > 255 or data[:, 1].min() < 0):
        raise FormatError(f"{path}: channel or tick out of range")
    return hdr, _streams_from_records(hdr, data[:, 0].astype(np.uint8),
                                      data[:, 1].astype(np.uint64), path)


def tag_format_of(path):
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext == ".csv":
        return "csv"
    if ext in (".bin", ".tags", ".dat"):
        return "bin"
    raise FormatError(f"cannot infer tag format from extension {ext!r}")


def read_tags(path):
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
    return read_tags_binary(path) if head == MAGIC else read_tags_csv(path)


def write_tags(path, streams, fmt=None):
    fmt = fmt or tag_format_of(path)
    return (write_tags_csv if fmt == "csv" else write_tags_binary)(path, streams)


def convert_tags(src, dst, fmt=None):
    """Lossless conversion between the binary and CSV tag formats."""
    _, streams = read_tags(src)
    return write_tags(dst, [streams[c] for c in sorted(streams)], fmt)


# --------------------------------------------------------------------------
# curves and JSON


def _fmt(x):
    return repr(float(x))


def write_curve_csv(path, curve):
    with open(path, "w", newline="") as fh:
        fh.write(f"# mode={curve.mode.value}\n")
        fh.write(f"# bin_width_s={_fmt(curve.bin_width) if curve.bin_width else ''}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau_s", "g2", "stderr", "counts"])
        for t, g, e, c in zip(curve.tau, curve.g2, curve.stderr, curve.counts):
            w.writerow([_fmt(t), _fmt(g), _fmt(e), int(c)])


def read_curve_csv(path):
    meta = {}
    rows = []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh]
    body = []
    for ln in lines:
        if ln.startswith("#"):
            key, _, val = ln[1:].strip().partition("=")
            meta[key.strip()] = val.strip()
        else:
            body.append(ln)
    reader = csv.reader(body)
    try:
        head = next(reader)
    except StopIteration as exc:
        raise FormatError(f"{path}: empty curve file") from exc
    cols = [h.strip() for h in head]
    for need in ("tau_s", "g2", "stderr"):
        if need not in cols:
            raise FormatError(f"{path}: missing column {need!r}")
    for r in reader:
        if r:
            rows.append(r)
    try:
        arr = {c: np.array([float(r[i]) for r in rows]) for i, c in enumerate(cols)}
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed row ({exc})") from exc
    counts = arr["counts"].astype(np.int64) if "counts" in arr else None
    try:
        mode = CorrelationMode(meta.get("mode", "WINDOWED_PAIRWISE"))
    except ValueError as exc:
        raise FormatError(f"{path}: unknown mode {meta.get('mode')!r}") from exc
    bw = float(meta["bin_width_s"]) if meta.get("bin_width_s") else None
    return G2Curve(arr["tau_s"], arr["g2"], arr["stderr"], counts, bw, mode)


def write_table_csv(path, columns, header_comments=()):
    """Columns: ordered mapping name -> sequence."""
    names = list(columns)
    n = len(next(iter(columns.values()))) if names else 0
    with open(path, "w", newline="") as fh:
        for c in header_comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([v[i] if isinstance(v[i], (int, np.integer, str)) else _fmt(v[i])
                        for v in columns.values()])


def read_table_csv(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(ln for ln in fh if not ln.startswith("#")) if r]
    if not rows:
        raise FormatError(f"{path}: empty table")
    head, body = rows[0], rows[1:]
    try:
        return {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(head)}
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed table ({exc})") from exc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def curve_document(curve, config_echo):
    return {"config": config_echo, "mode": curve.mode.value, "bin_width_s": curve.bin_width,
            "tau_s": curve.tau, "g2": curve.g2, "stderr": curve.stderr,
            "counts": curve.counts, "meta": curve.meta}


# --------------------------------------------------------------------------
# config documents


def _compose_with_marks(text, source):
    """Parse YAML and record the line number of every mapping key."""
    try:
        data = yaml.safe_load(text)
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: YAML syntax error: {exc}") from exc
    marks = {}

    def walk(n, path):
        if isinstance(n, yaml.MappingNode):
            for k, v in n.value:
                marks[path + (k.value,)] = k.start_mark.line + 1
                walk(v, path + (k.value,))
        elif isinstance(n, yaml.SequenceNode):
            for i, v in enumerate(n.value):
                walk(v, path + (i,))

    if node is not None:
        walk(node, ())
    return ({} if data is None else data), marks


class _Doc:
    """Typed access to a parsed config with ``file:line: field`` diagnostics."""

    def __init__(self, data, marks, source):
        self.data, self.marks, self.source = data, marks, source

    def where(self, path):
        line = None
        for i in range(len(path), 0, -1):
            line = self.marks.get(tuple(path[:i]))
            if line is not None:
                break
        loc = f"{self.source}:{line}" if line else self.source
        return f"{loc}: {'.'.join(map(str, path)) or '<root>'}"

    def fail(self, path, msg):
        raise ConfigError(f"{self.where(path)}: {msg}")

    def section(self, path, allowed):
        node = self.get(path, {})
        if node is None:
            node = {}
        if not isinstance(node, dict):
            self.fail(path, "expected a mapping")
        extra = set(node) - set(allowed)
        if extra:
            k = sorted(extra)[0]
            self.fail(tuple(path) + (k,), f"unknown field (allowed: {', '.join(sorted(allowed))})")
        return node

    def get(self, path, default=None):
        node = self.data
        for p in path:
            if not isinstance(node, dict) or p not in node:
                return default
            node = node[p]
        return node

    def number(self, path, default=None, required=False, integer=False):
        v = self.get(path)
        if v is None:
            if required:
                self.fail(path, "required field is missing")
            return default
        if isinstance(v, bool):
            self.fail(path, f"expected a number, got {v!r}")
        try:
            x = float(v)  # YAML 1.1 reads 1e5 as a string
        except (TypeError, ValueError):
            self.fail(path, f"expected a number, got {v!r}")
        if integer:
            if x != int(x):
                self.fail(path, f"expected an integer, got {v!r}")
            return int(v) if isinstance(v, int) else int(x)
        return x


_SIM_KEYS = {"duration_s", "seed", "source", "detectors", "splitter_ratio", "ideal_tick_s", "pump"}
_SRC_KEYS = {"model", "pair_rate_hz", "bandwidth_hz", "gamma_per_s", "n_modes",
             "gamma_auto_per_s"}
_DET_KEYS = {"efficiency", "dead_time_s", "dark_rate_hz", "tick_s"}
_PUMP_KEYS = {"pairs_per_s_per_mW", "coincidence_window_s"}


def _detector(doc, path, base):
    doc.section(path, _DET_KEYS)
    return DetectorParams(
        efficiency=doc.number(path + ("efficiency",), base.efficiency),
        dead_time=doc.number(path + ("dead_time_s",), base.dead_time),
        dark_rate=doc.number(path + ("dark_rate_hz",), base.dark_rate),
        tick=doc.number(path + ("tick_s",), base.tick))


def parse_sim_config(text, source="<config>"):
    """Build a SimConfig (plus the optional ``pump`` section) from YAML text."""
    data, marks = _compose_with_marks(text, source)
    doc = _Doc(data, marks, source)
    if not isinstance(data, dict):
        doc.fail((), "top level must be a mapping")
    doc.section((), _SIM_KEYS)
    doc.section(("source",), _SRC_KEYS)
    if "source" not in data:
        doc.fail(("source",), "required section is missing")
    model = doc.get(("source", "model"), "PAIR_POISSON")
    try:
        model = SourceModel(model)
    except ValueError:
        doc.fail(("source", "model"), f"unknown model {model!r}; "
                 f"use one of {[m.value for m in SourceModel]}")
    if doc.get(("source", "bandwidth_hz")) is not None and \
            doc.get(("source", "gamma_per_s")) is not None:
        doc.fail(("source", "gamma_per_s"), "give either bandwidth_hz or gamma_per_s, not both")
    gamma = doc.number(("source", "gamma_per_s"))
    if gamma is None:
        bw = doc.number(("source", "bandwidth_hz"), required=True)
        gamma = 2 * math.pi * bw
    dets = doc.section(("detectors",), {"default", "idler", "s1", "s2"})
    base = DetectorParams()
    try:
        src = SourceParams(pair_rate=doc.number(("source", "pair_rate_hz"), required=True),
                           gamma=gamma,
                           n_modes=doc.number(("source", "n_modes"), 1, integer=True),
                           gamma_auto=doc.number(("source", "gamma_auto_per_s")),
                           model=model)
        if "default" in dets:
            base = _detector(doc, ("detectors", "default"), base)
        detectors = {ch: _detector(doc, ("detectors", ch), base) if ch in dets else base
                     for ch in ("idler", "s1", "s2")}
        cfg = SimConfig(duration=doc.number(("duration_s",), required=True),
                        seed=doc.number(("seed",), required=True, integer=True),
                        source=src, detectors=detectors,
                        splitter_ratio=doc.number(("splitter_ratio",), 0.5),
                        ideal_tick=doc.number(("ideal_tick_s",), 1e-12))
    except ConfigError as exc:
        if str(exc).startswith(source):
            raise
        field = _guess_field(str(exc))
        raise ConfigError(f"{doc.where(field)}: {exc}") from exc
    doc.section(("pump",), _PUMP_KEYS)
    pump = {"pairs_per_s_per_mW": doc.number(("pump", "pairs_per_s_per_mW"), 1.3e7),
            "coincidence_window_s": doc.number(("pump", "coincidence_window_s"), 30e-9)}
    return cfg, pump


_FIELD_HINTS = {
    "pair_rate": ("source", "pair_rate_hz"), "gamma_auto": ("source", "gamma_auto_per_s"),
    "gamma": ("source", "gamma_per_s"), "n_modes": ("source", "n_modes"),
    "efficiency": ("detectors",), "dead_time": ("detectors",), "dark_rate": ("detectors",),
    "tick": ("detectors",), "duration": ("duration_s",), "seed": ("seed",),
    "splitter": ("splitter_ratio",), "ideal_tick": ("ideal_tick_s",),
}


def _guess_field(msg):
    for key in sorted(_FIELD_HINTS, key=len, reverse=True):
        if msg.startswith(key):
            return _FIELD_HINTS[key]
    return ()


def load_sim_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_sim_config(text, os.fspath(path))


def _det_dict(d):
    return {"efficiency": d.efficiency, "dead_time_s": d.dead_time,
            "dark_rate_hz": d.dark_rate, "tick_s": d.tick}


def sim_config_to_dict(cfg, pump=None):
    s = cfg.source
    out = {"duration_s": cfg.duration, "seed": int(cfg.seed),
           "source": {"model": s.model.value, "pair_rate_hz": s.pair_rate,
                      "gamma_per_s": s.gamma, "n_modes": int(s.n_modes),
                      "gamma_auto_per_s": s.gamma_auto},
           "detectors": {k: _det_dict(v) for k, v in sorted(cfg.detectors.items())},
           "splitter_ratio": cfg.splitter_ratio, "ideal_tick_s": cfg.ideal_tick}
    if pump:
        out["pump"] = dict(pump)
    return out


def dump_sim_config(cfg, pump=None):
    return yaml.safe_dump(sim_config_to_dict(cfg, pump), sort_keys=False)


# --------------------------------------------------------------------------
# manifests


def sha256_of(path, chunk=1 << 20):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(chunk), b""):
            h.update(block)
    return h.hexdigest()


def build_manifest(command, config_echo, seed, inputs, outputs, version, timing=None):
    """``outputs`` maps the published file name to the path holding its bytes."""
    doc = {
        "command": command,
        "tool_version": version,
        "seed": seed,
        "config": config_echo,
        "inputs": [{"path": os.path.basename(p), "sha256": sha256_of(p)} for p in inputs],
        "outputs": [{"path": name, "sha256": sha256_of(p)}
                    for name, p in sorted(outputs.items())],
    }
    if timing is not None:
        doc["timing_s"] = timing
    return doc
