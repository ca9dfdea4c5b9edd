"""Command-line front end: ``spdcsim <command> ...``.

Exit status: 0 success, 2 usage, 3 configuration error, 4 file format or
contract error, 5 numerical failure.  Outputs are staged under temporary
names and only published when the whole command succeeds.
"""
import argparse
import logging
import math
import os
import sys
import time

import numpy as np
import yaml

from . import __version__, kernels
from . import io as tio
from . import resonator as rz
from .correlator import (CorrelationMode, CorrelogramConfig, conditioned_g2, cross_correlogram,
                         normalize_g2)
from .errors import ConfigError, FormatError, NumericalError
from .inference import (DEFAULT_PAIR_EFFICIENCY, bandwidth_from_fit, effective_modes,
                        fit_exponential, pair_rate_from_peak)
from .pipeline import pump_scan
from .source import simulate

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_FORMAT, EXIT_NUMERICAL = 0, 2, 3, 4, 5

log = logging.getLogger("spdcsim")


def _configure_logging():
    level = os.environ.get("SPDCSIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


class _Run:
    """Bookkeeping shared by every command: staged outputs and the manifest."""

    def __init__(self, args, command, config_echo, seed=None, inputs=()):
        self.args = args
        self.command = command
        self.config = config_echo
        self.seed = seed
        self.inputs = list(inputs)
        self.out = tio.OutputSet(args.out)
        self.files = {}
        self.t0 = time.perf_counter()

    def path(self, name):
        p = self.out.path(name)
        self.files[name] = p
        return p

    def finish(self):
        timing = round(time.perf_counter() - self.t0, 6) if self.args.timing else None
        doc = tio.build_manifest(self.command, self.config, self.seed, self.inputs, self.files,
                                 __version__, timing)
        tio.write_json(self.out.path("manifest.json"), doc)
        return self.out.commit()


def _staged(fn):
    def run(args):
        job = fn(args)
        try:
            job.body()
            written = job.finish()
        except BaseException:
            job.out.discard()
            raise
        for p in written:
            log.info("wrote %s", p)
        return EXIT_OK
    return run


def _load_streams(path, channel=None):
    hdr, streams = tio.read_tags(path)
    if not streams:
        raise FormatError(f"{path}: file declares no channels")
    ch = min(streams) if channel is None else channel
    if ch not in streams:
        raise FormatError(f"{path}: channel {ch} not present (have {sorted(streams)})")
    return streams[ch]


def _corr_config(args, mode=None):
    return CorrelogramConfig(bin_width=args.bin_width, max_lag=args.max_lag,
                             mode=mode or args.mode)


# --------------------------------------------------------------------------
# commands


@_staged
def cmd_simulate(args):
    cfg, pump = tio.load_sim_config(args.config)
    job = _Run(args, "simulate", tio.sim_config_to_dict(cfg), int(cfg.seed), [args.config])
    job.config = {"sim": job.config, "format": args.format, "backend": kernels.BACKEND
                  if args.backend is None else args.backend}
    ext = "csv" if args.format == "csv" else "bin"

    def body():
        streams = simulate(cfg, backend=args.backend)
        for name in ("idler", "s1", "s2"):
            tio.write_tags(job.path(f"{name}.{ext}"), streams[name], args.format)
        with open(job.path("config.yaml"), "w") as fh:
            fh.write(tio.dump_sim_config(cfg, pump))

    job.body = body
    return job


@_staged
def cmd_correlate(args):
    mode = CorrelationMode(args.mode)
    cfg = _corr_config(args, mode)
    files = [args.a] + ([args.b] if args.b else [])
    job = _Run(args, "correlate", {"correlogram": cfg.to_dict(), "auto": args.b is None,
                                   "channel_a": args.channel_a, "channel_b": args.channel_b},
               inputs=files)

    def body():
        a = _load_streams(args.a, args.channel_a)
        b = a if args.b is None else _load_streams(args.b, args.channel_b)
        h = cross_correlogram(a, b, cfg, backend=args.backend)
        curve = normalize_g2(h)
        curve.meta.update({"channel_a": a.channel_id, "channel_b": b.channel_id,
                           "autocorrelation": h.autocorrelation})
        tio.write_curve_csv(job.path("g2.csv"), curve)
        tio.write_json(job.path("g2.json"), tio.curve_document(curve, job.config))

    job.body = body
    return job


@_staged
def cmd_herald(args):
    cfg = CorrelogramConfig(bin_width=args.bin_width, max_lag=max(args.max_lag, args.tau_h),
                            mode=CorrelationMode.WINDOWED_PAIRWISE)
    job = _Run(args, "herald", {"correlogram": cfg.to_dict(), "herald_halfwidth_s": args.tau_h},
               inputs=[args.idler, args.s1, args.s2])

    def body():
        i = _load_streams(args.idler)
        s1 = _load_streams(args.s1)
        s2 = _load_streams(args.s2)
        curve = conditioned_g2(s1, s2, i, herald_halfwidth=args.tau_h, cfg=cfg)
        if curve.meta["triples"] == 0:
            log.warning("no heralded triples: conditioned g2 is identically zero")
        tio.write_curve_csv(job.path("conditioned_g2.csv"), curve)
        tio.write_json(job.path("conditioned_g2.json"), tio.curve_document(curve, job.config))

    job.body = body
    return job


@_staged
def cmd_fit(args):
    exclude = {"auto": None, "yes": True, "no": False}[args.exclude_central]
    job = _Run(args, "fit", {"fix_baseline": args.fix_baseline, "exclude_central": args.exclude_central,
                             "eta_pair": args.eta_pair}, inputs=[args.curve])

    def body():
        curve = tio.read_curve_csv(args.curve)
        fit = fit_exponential(curve, fix_baseline=args.fix_baseline, exclude_central=exclude)
        try:
            n_eff = effective_modes(fit.peak)
        except NumericalError:
            n_eff = None
        report = {
            "config": job.config,
            "model": "g2(tau) = baseline + amplitude * exp(-decay_rate * |tau|)",
            "parameters": fit.to_dict(),
            "parameter_order": ["amplitude", "decay_rate_per_s", "baseline"],
            "derived": {
                "bandwidth_hz": bandwidth_from_fit(fit),
                "decay_time_s": fit.decay_time,
                "g2_peak": fit.peak,
                "g2_peak_stderr": fit.peak_stderr,
                "pair_rate_hz": pair_rate_from_peak(fit) / args.eta_pair,
                "n_modes_effective": n_eff,
            },
            "residuals": (curve.g2 - fit.model(curve.tau)) / np.where(curve.stderr > 0,
                                                                       curve.stderr, 1.0),
        }
        tio.write_json(job.path("fit.json"), report)
        modes = f", about {round(n_eff)} effective modes" if n_eff else ""
        print(f"bandwidth {bandwidth_from_fit(fit) / 1e6:.3f} MHz, "
              f"g2(0) {fit.peak:.4f} +- {fit.peak_stderr:.4f}{modes}")
        tio.write_table_csv(job.path("fit_curve.csv"),
                            {"tau_s": curve.tau, "g2": curve.g2, "model_g2": fit.model(curve.tau),
                             "stderr": curve.stderr})

    job.body = body
    return job


_DESIGN_KEYS = {"resonator", "wavelength_m", "pump_wavelength_m", "kappa", "gap_m"}
_RES_KEYS = {"radius_m", "absorption_per_m", "material", "prism", "polar_radius_m",
             "dispersion_file"}


def load_design(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read design file {path}: {exc.strerror}") from exc
    data, marks = tio._compose_with_marks(text, os.fspath(path))
    doc = tio._Doc(data, marks, os.fspath(path))
    if not isinstance(data, dict):
        doc.fail((), "top level must be a mapping")
    doc.section((), _DESIGN_KEYS)
    res = doc.section(("resonator",), _RES_KEYS)
    table = None
    if res.get("dispersion_file"):
        dfile = os.path.join(os.path.dirname(os.fspath(path)), res["dispersion_file"])
        table = rz.load_dispersion_table(dfile)
    table = table or rz.default_table()
    material = res.get("material", "LiNbO3_congruent")
    prism = res.get("prism", "diamond")
    for key, name in (("material", material), ("prism", prism)):
        if name not in table:
            doc.fail(("resonator", key), f"unknown material {name!r} (have {sorted(table)})")
    try:
        spec = rz.lithium_niobate_disk(
            radius=doc.number(("resonator", "radius_m"), 1.9e-3),
            absorption=doc.number(("resonator", "absorption_per_m"), 0.2),
            material=material, prism=prism, table=table,
            polar_radius=doc.number(("resonator", "polar_radius_m")))
    except (ConfigError, KeyError) as exc:
        doc.fail(("resonator",), str(exc))
    kappa = doc.get(("kappa",), "printed")
    if kappa not in ("printed", "alternate"):
        doc.fail(("kappa",), "must be 'printed' or 'alternate'")
    design = {"wavelength_m": doc.number(("wavelength_m",), 1064e-9),
              "pump_wavelength_m": doc.number(("pump_wavelength_m",), 532e-9),
              "gap_m": doc.number(("gap_m",), rz.DEFAULT_GAP), "kappa": kappa,
              "material": material, "prism": prism}
    return spec, design


@_staged
def cmd_design(args):
    spec, design = load_design(args.spec)
    echo = {"design": design, "radius_m": spec.radius, "absorption_per_m": spec.absorption,
            "gap_sweep_m": [args.gap_min, args.gap_max, args.gap_points],
            "radii_m": args.radii, "radius_gap_m": args.radius_gap,
            "temperature_span_C": args.temperature_span, "phase_match": not args.no_phase_match}
    job = _Run(args, "design", echo, inputs=[args.spec])

    def body():
        lam, kap, gap = design["wavelength_m"], design["kappa"], design["gap_m"]
        qa = rz.q_absorption(spec, lam)
        qc = rz.q_coupling(spec, rz.CouplingState(gap, lam), kappa=kap)
        q = rz.q_total([qa, qc])
        summary = {"config": echo, "q_budget": {
            "wavelength_m": lam, "gap_m": gap, "q_absorption": qa, "q_coupling": qc,
            "q_total": q, "bandwidth_hz": rz.bandwidth_of(q, rz.C_LIGHT / lam),
            "intrinsic_bandwidth_hz": rz.intrinsic_bandwidth(spec, lam)}}
        gaps, bw = rz.bandwidth_vs_gap(spec, lam, np.linspace(args.gap_min, args.gap_max,
                                                              args.gap_points), kappa=kap)
        tio.write_table_csv(job.path("bandwidth_vs_gap.csv"), {"d_m": gaps, "bandwidth_hz": bw})
        radii, bwr = rz.bandwidth_vs_radius(spec, lam, args.radii, gap=args.radius_gap, kappa=kap)
        tio.write_table_csv(job.path("bandwidth_vs_radius.csv"),
                            {"a_m": radii, "bandwidth_hz": bwr},
                            [f"gap_m={args.radius_gap!r}"])
        if not args.no_phase_match:
            tuned, pump, t_deg = rz.tune_to_pump(spec, design["pump_wavelength_m"])
            curve = rz.phase_match_curve(tuned, pump, t_deg - args.temperature_span,
                                         t_deg + args.temperature_span, gap=gap)
            tio.write_table_csv(job.path("phase_match.csv"), {
                "T_C": [c.temperature for c in curve],
                "lambda_s_m": [c.lambda_signal for c in curve],
                "lambda_i_m": [c.lambda_idler for c in curve],
                "residual_hz": [c.residual_hz for c in curve]})
            deg = rz.phase_match_solve(tuned, t_deg, pump, gap=gap)
            summary["phase_match"] = {
                "tuned_radius_m": tuned.radius, "pump_m": pump.m,
                "degeneracy_temperature_C": t_deg, "lambda_signal_m": deg.lambda_signal,
                "lambda_idler_m": deg.lambda_idler, "lambda_pump_m": deg.lambda_pump,
                "signal_mode_thermal_slope_hz_per_K": rz.thermal_slope(tuned, deg.signal_mode, t_deg),
                "pump_mode_thermal_slope_hz_per_K": rz.thermal_slope(tuned, pump, t_deg, rz.PUMP),
                "triplet_thermal_slope_hz_per_K": rz.triplet_thermal_slope(tuned, deg),
                "max_splitting_m": max(c.splitting for c in curve)}
        tio.write_json(job.path("design.json"), summary)

    job.body = body
    return job


@_staged
def cmd_pump_scan(args):
    cfg, pump = tio.load_sim_config(args.config)
    powers = [float(p) for p in args.powers]
    if len(powers) < 3 or any(not (p >= 0 and math.isfinite(p)) for p in powers):
        raise ConfigError("--powers needs at least three non-negative values (mW)")
    window = args.window if args.window is not None else pump["coincidence_window_s"]
    rate = pump["pairs_per_s_per_mW"]
    echo = {"sim": tio.sim_config_to_dict(cfg, pump), "powers_mW": powers,
            "coincidence_window_s": window}
    job = _Run(args, "pump-scan", echo, int(cfg.seed), [args.config])

    def body():
        points, fit, shape = pump_scan(cfg, powers, rate, window, backend=args.backend)
        cols = {k: [getattr(p, k) for p in points] for k in
                ("power_mW", "pair_rate_hz", "coincidences", "coincidence_rate_hz",
                 "coincidence_rate_stderr_hz", "g2_peak")}
        tio.write_table_csv(job.path("pump_scan.csv"), cols)
        tio.write_json(job.path("pump_fit.json"), {
            "config": echo, "fit": fit.to_dict(), "configured_pairs_per_s_per_mW": rate,
            "pair_decay_rate_per_s": shape.decay_rate,
            "intercept_sigma": fit.intercept / fit.intercept_stderr if fit.intercept_stderr
            else None})

    job.body = body
    return job


def cmd_convert(args):
    fmt = args.to or tio.tag_format_of(args.dst)
    out = tio.OutputSet(os.path.dirname(os.path.abspath(args.dst)))
    tmp = out.path(os.path.basename(args.dst))
    try:
        tio.convert_tags(args.src, tmp, fmt)
    except BaseException:
        out.discard()
        raise
    out.commit()
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _positive(text):
    try:
        x = float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc
    if not x > 0:
        raise argparse.ArgumentTypeError(f"must be > 0: {text!r}")
    return x


def build_parser():
    p = argparse.ArgumentParser(prog="spdcsim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        if out:
            sp.add_argument("-o", "--out", required=True, help="output directory")
            sp.add_argument("--timing", action="store_true",
                            help="record wall time in the manifest (breaks byte identity)")
        sp.add_argument("--backend", choices=["python", "cython"], default=None,
                        help="kernel implementation (default: compiled if available)")

    def binning(sp, max_lag=300e-9):
        sp.add_argument("--bin-width", type=_positive, default=3e-9, help="seconds (default 3 ns)")
        sp.add_argument("--max-lag", type=_positive, default=max_lag, help="seconds")

    s = sub.add_parser("simulate", help="simulate detected time tags from a config file")
    s.add_argument("config")
    s.add_argument("--format", choices=["bin", "csv"], default="bin")
    common(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("correlate", help="correlogram and normalised g2 of one or two tag files")
    s.add_argument("a", help="start-channel tag file")
    s.add_argument("b", nargs="?", help="stop-channel tag file (omit for autocorrelation)")
    s.add_argument("--mode", choices=[m.value for m in CorrelationMode],
                   default=CorrelationMode.START_STOP.value)
    s.add_argument("--channel-a", type=int, default=None)
    s.add_argument("--channel-b", type=int, default=None)
    binning(s)
    common(s)
    s.set_defaults(func=cmd_correlate)

    s = sub.add_parser("herald", help="idler-conditioned signal autocorrelation")
    s.add_argument("idler")
    s.add_argument("s1")
    s.add_argument("s2")
    s.add_argument("--tau-h", type=_positive, default=10e-9, help="heralding half-width, seconds")
    binning(s, max_lag=30e-9)
    common(s)
    s.set_defaults(func=cmd_herald)

    s = sub.add_parser("fit", help="fit baseline + amplitude * exp(-rate |tau|) to a g2 CSV")
    s.add_argument("curve")
    s.add_argument("--fix-baseline", type=float, default=None)
    s.add_argument("--exclude-central", choices=["auto", "yes", "no"], default="auto")
    s.add_argument("--eta-pair", type=_positive, default=1.0,
                   help="divide the peak-derived pair rate by this efficiency "
                        f"(detector pair efficiency is {DEFAULT_PAIR_EFFICIENCY:g})")
    common(s)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("design", help="Q budget, bandwidth and phase-matching curves")
    s.add_argument("spec", help="resonator design file (YAML)")
    s.add_argument("--gap-min", type=float, default=0.0)
    s.add_argument("--gap-max", type=_positive, default=300e-9)
    s.add_argument("--gap-points", type=int, default=61)
    s.add_argument("--radii", type=_positive, nargs="+", default=[0.5e-3, 1.0e-3, 1.9e-3, 3.0e-3])
    s.add_argument("--radius-gap", type=float, default=20e-9)
    s.add_argument("--temperature-span", type=_positive, default=3.0, help="kelvin either side")
    s.add_argument("--no-phase-match", action="store_true")
    common(s)
    s.set_defaults(func=cmd_design)

    s = sub.add_parser("pump-scan", help="coincidence rate versus pump power")
    s.add_argument("config")
    s.add_argument("--powers", nargs="+", required=True, help="pump powers in mW")
    s.add_argument("--window", type=_positive, default=None, help="coincidence window, seconds")
    common(s)
    s.set_defaults(func=cmd_pump_scan)

    s = sub.add_parser("convert", help="convert a tag file between binary and CSV")
    s.add_argument("src")
    s.add_argument("dst")
    s.add_argument("--to", choices=["bin", "csv"], default=None)
    s.set_defaults(func=cmd_convert)
    return p


def main(argv=None):
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config: %s", exc)
        return EXIT_CONFIG
    except FormatError as exc:
        log.error("format: %s", exc)
        return EXIT_FORMAT
    except NumericalError as exc:
        log.error("numerical: %s", exc)
        return EXIT_NUMERICAL
    except FileNotFoundError as exc:
        log.error("config: %s", exc)
        return EXIT_CONFIG
    except yaml.YAMLError as exc:
        log.error("config: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
