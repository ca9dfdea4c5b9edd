"""Whispering-gallery resonator calculators.

Q budget (absorption and prism coupling), bandwidth tuning curves, mode
frequencies from the large-m asymptotic expansion, and type-I phase
matching of a pump mode into signal/idler modes.

Units are SI throughout (metres, hertz, 1/m); temperatures in degrees C.
Sellmeier tables take wavelengths in micrometres internally.
"""
import functools
import math
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np
import yaml
from scipy.optimize import brentq
from scipy.special import ai_zeros

from .errors import ConfigError, DomainError, NoPhaseMatchError, SolverError

C_LIGHT = 299_792_458.0

#: linear electro-optic fine tuning: 150 MHz over 4 V
VOLTAGE_SLOPE_HZ_PER_V = 37.5e6
VOLTAGE_LIMIT_V = 10.0
DEFAULT_GAP = 100e-9

PUMP, PARAMETRIC = "pump", "parametric"


# --------------------------------------------------------------------------
# dispersion tables


@dataclass(frozen=True)
class IndexModel:
    """Refractive index ``n(wavelength_m, T_C)`` from a tabulated Sellmeier set."""

    material: str
    axis: str
    form: str
    coeffs: tuple
    wavelength_range_um: tuple
    temperature_range_C: tuple
    citation: str = ""

    def __call__(self, wavelength, temperature=24.5):
        lam = np.asarray(wavelength, dtype=np.float64) * 1e6
        T = np.asarray(temperature, dtype=np.float64)
        lo, hi = self.wavelength_range_um
        if np.any(lam < lo) or np.any(lam > hi):
            raise DomainError(f"{self.material}: wavelength outside [{lo}, {hi}] um")
        tlo, thi = self.temperature_range_C
        if np.any(T < tlo) or np.any(T > thi):
            raise DomainError(f"{self.material}: temperature outside [{tlo}, {thi}] C")
        c = dict(self.coeffs)
        l2 = lam * lam
        if self.form == "edwards_lawrence":
            F = (T - c["T0"]) * (T + c["T0"] + 546.0)
            n2 = (c["A1"] + (c["A2"] + c["B1"] * F) / (l2 - (c["A3"] + c["B2"] * F) ** 2)
                  + c["B3"] * F - c["A4"] * l2)
        elif self.form == "sellmeier3":
            n2 = 1.0 + sum(b * l2 / (l2 - cc) for b, cc in zip(c["B"], c["C"]))
        else:
            raise ConfigError(f"unknown dispersion form {self.form!r}")
        return np.sqrt(n2)


@dataclass(frozen=True)
class ConstantIndex:
    """Dispersionless test material."""

    n: float

    def __call__(self, wavelength, temperature=24.5):
        shape = np.broadcast_shapes(np.shape(wavelength), np.shape(temperature))
        return np.full(shape, float(self.n)) if shape else float(self.n)


def _freeze(d):
    return tuple((k, tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k != "form")


def load_dispersion_table(path=None):
    """Parse a dispersion file into ``{material: {axis: IndexModel, ...}}``."""
    if path is None:
        text = resources.files("spdcsim").joinpath("data/dispersion.yaml").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    doc = yaml.safe_load(text)
    out = {}
    for name, entry in doc.get("materials", {}).items():
        try:
            valid = entry["valid"]
            axes = {}
            for axis in ("ordinary", "extraordinary", "isotropic"):
                if axis in entry:
                    axes[axis] = IndexModel(name, axis, entry[axis]["form"], _freeze(entry[axis]),
                                            tuple(valid["wavelength_um"]),
                                            tuple(valid["temperature_C"]),
                                            entry.get("citation", "").strip())
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"dispersion entry {name!r} is malformed: {exc}") from exc
        axes["thermal_expansion"] = float(entry.get("thermal_expansion_per_K", 0.0))
        axes["reference_temperature"] = float(entry.get("reference_temperature_C", 24.5))
        out[name] = axes
    return out


@functools.lru_cache(maxsize=None)
def default_table():
    return load_dispersion_table()


# --------------------------------------------------------------------------
# resonator description


@dataclass(frozen=True)
class ResonatorSpec:
    """Disk resonator with prism coupling.

    ``index`` is seen by the parametric (signal/idler) modes, ``pump_index``
    by the orthogonally polarised pump; ``prism_index`` is the coupler.
    """

    radius: float
    absorption: float
    index: object
    prism_index: object
    pump_index: object = None
    polar_radius: float = None
    thermal_expansion: float = 0.0
    reference_temperature: float = 24.5

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigError(f"radius must be > 0, got {self.radius}")
        if not self.absorption > 0:
            raise ConfigError(f"absorption must be > 0, got {self.absorption}")
        if self.pump_index is None:
            object.__setattr__(self, "pump_index", self.index)
        if self.polar_radius is None:
            object.__setattr__(self, "polar_radius", self.radius)

    def radius_at(self, T):
        return self.radius * (1.0 + self.thermal_expansion * (T - self.reference_temperature))

    def polar_radius_at(self, T):
        return self.polar_radius * (1.0 + self.thermal_expansion * (T - self.reference_temperature))

    def index_for(self, polarization):
        return self.pump_index if polarization == PUMP else self.index

    def with_radius(self, radius):
        ratio = radius / self.radius
        return replace(self, radius=radius, polar_radius=self.polar_radius * ratio)


def lithium_niobate_disk(radius=1.9e-3, absorption=0.2, material="LiNbO3_congruent",
                         prism="diamond", table=None, polar_radius=None):
    """Type-I lithium niobate disk: extraordinary pump, ordinary signal/idler."""
    table = table or default_table()
    m, p = table[material], table[prism]
    return ResonatorSpec(radius=radius, absorption=absorption, index=m["ordinary"],
                         prism_index=p["isotropic"], pump_index=m["extraordinary"],
                         polar_radius=polar_radius, thermal_expansion=m["thermal_expansion"],
                         reference_temperature=m["reference_temperature"])


@dataclass(frozen=True)
class CouplingState:
    gap: float
    wavelength: float

    def __post_init__(self):
        if not self.gap >= 0:
            raise ConfigError(f"gap must be >= 0, got {self.gap}")
        if not self.wavelength > 0:
            raise ConfigError("wavelength must be > 0")


@dataclass(frozen=True, order=True)
class ModeIndex:
    """Azimuthal ``m``, radial ``q`` (1 = fundamental) and polar ``p`` (0 = equatorial)."""

    m: int
    q: int = 1
    p: int = 0

    def __post_init__(self):
        if np.any(np.asarray(self.m) < 1) or self.q < 1 or self.p < 0:
            raise ConfigError(f"invalid mode index {self}")


# --------------------------------------------------------------------------
# Q budget


def q_absorption(spec, wavelength, T=None):
    T = spec.reference_temperature if T is None else T
    n = spec.index(wavelength, T)
    return 2 * math.pi * n / (spec.absorption * wavelength)


def evanescent_constant(n_s, wavelength, variant="printed"):
    """Decay constant of the field in the gap.

    ``printed`` uses ``sqrt(k^2 (n^2 - 2))``; ``alternate`` the textbook
    ``k sqrt(n^2 - 1)``.  The choice only rescales the gap axis.
    """
    k = 2 * math.pi / wavelength
    if variant == "printed":
        if not n_s * n_s > 2:
            raise DomainError(f"n_s^2 = {n_s * n_s:.4g} <= 2: evanescent constant is not real")
        return math.sqrt(k * k * (n_s * n_s - 2))
    if variant == "alternate":
        return k * math.sqrt(n_s * n_s - 1)
    raise ConfigError(f"unknown evanescent-constant variant {variant!r}")


def q_coupling(spec, state, T=None, kappa="printed"):
    T = spec.reference_temperature if T is None else T
    lam, d = state.wavelength, state.gap
    n_s = float(spec.index(lam, T))
    n_c = float(spec.prism_index(lam, T))
    if not n_c > n_s:
        raise DomainError(f"prism index {n_c:.4f} <= resonator index {n_s:.4f}: no frustrated coupling")
    kap = evanescent_constant(n_s, lam, kappa)
    a = spec.radius_at(T)
    pref = (math.sqrt(2) * math.pi ** 2.5 * math.sqrt(n_s) * (n_s - 1)
            / math.sqrt(n_c * n_c - n_s * n_s))
    return pref * (a / lam) ** 1.5 * math.exp(2 * kap * d)


def q_total(qs):
    qs = [float(q) for q in qs]
    if not qs:
        raise ConfigError("q_total needs at least one Q factor")
    if any(not q > 0 for q in qs):
        raise DomainError("all Q factors must be positive")
    return 1.0 / math.fsum(1.0 / q for q in qs)


def bandwidth_of(Q, frequency):
    if not (Q > 0 and frequency > 0):
        raise DomainError("Q and frequency must be positive")
    return frequency / Q


def loaded_bandwidth(spec, wavelength, gap, T=None, kappa="printed"):
    q = q_total([q_absorption(spec, wavelength, T),
                 q_coupling(spec, CouplingState(gap, wavelength), T, kappa)])
    return bandwidth_of(q, C_LIGHT / wavelength)


def bandwidth_vs_gap(spec, wavelength, gaps, T=None, kappa="printed"):
    gaps = np.asarray(gaps, dtype=np.float64)
    return gaps, np.array([loaded_bandwidth(spec, wavelength, d, T, kappa) for d in gaps])


def bandwidth_vs_radius(spec, wavelength, radii, gap=20e-9, T=None, kappa="printed"):
    radii = np.asarray(radii, dtype=np.float64)
    return radii, np.array([loaded_bandwidth(spec.with_radius(a), wavelength, gap, T, kappa)
                            for a in radii])


def intrinsic_bandwidth(spec, wavelength, T=None):
    return bandwidth_of(q_absorption(spec, wavelength, T), C_LIGHT / wavelength)


# --------------------------------------------------------------------------
# mode frequencies


@functools.lru_cache(maxsize=64)
def airy_zero(q):
    """Magnitude of the q-th zero of Ai."""
    return float(-ai_zeros(q)[0][-1])


def _size_parameter(m, q, p, n, P, a, b, order):
    m = np.asarray(m, dtype=np.float64)
    if order == "leading":
        return m
    al = airy_zero(q)
    h = (m / 2.0) ** (1.0 / 3.0)
    geometric = (2 * p * (a - b) + a) / (2 * b)
    return m + al * h + geometric - P * n / np.sqrt(n * n - 1) + 0.15 * al * al / h


def wgm_frequency(spec, mode, T=None, polarization=PARAMETRIC, order="full",
                  tol_hz=1e3, max_iter=100):
    """Resonance frequency of ``mode``, solved self-consistently with dispersion.

    ``mode.m`` and ``T`` may be arrays (broadcast together; same q and p).
    ``order="leading"`` keeps only ``2 pi a n nu / c = m``.
    """
    T = spec.reference_temperature if T is None else T
    index = spec.index_for(polarization)
    T = np.asarray(T, dtype=np.float64)
    a, b = spec.radius_at(T), spec.polar_radius_at(T)
    m = np.asarray(mode.m)
    lam = 2 * math.pi * a * 2.2 / np.maximum(m, 1)
    nu = C_LIGHT / lam
    for _ in range(max_iter):
        n = np.asarray(index(C_LIGHT / nu, T), dtype=np.float64)
        P = 1.0 / (n * n) if polarization == PARAMETRIC else 1.0
        new = C_LIGHT * _size_parameter(m, mode.q, mode.p, n, P, a, b, order) / (2 * math.pi * a * n)
        done = np.all(np.abs(new - nu) < tol_hz)
        nu = new
        if done:
            return float(nu) if np.ndim(nu) == 0 else nu
    raise SolverError(f"mode frequency did not converge for {mode}")


def mode_number_near(spec, wavelength, T=None, polarization=PARAMETRIC, q=1, p=0):
    """Azimuthal number of the mode closest in frequency to ``wavelength``."""
    T = spec.reference_temperature if T is None else T
    n = float(spec.index_for(polarization)(wavelength, T))
    m0 = int(round(2 * math.pi * spec.radius_at(T) * n / wavelength))
    target = C_LIGHT / wavelength
    ms = np.arange(max(m0 - 400, 1), m0 + 50)
    nus = wgm_frequency(spec, ModeIndex(ms, q, p), T, polarization)
    return int(ms[np.argmin(np.abs(nus - target))])


def free_spectral_range(spec, mode, T=None, polarization=PARAMETRIC):
    nus = wgm_frequency(spec, ModeIndex(np.array([mode.m, mode.m + 1]), mode.q, mode.p),
                        T, polarization)
    return float(nus[1] - nus[0])


def thermal_slope(spec, mode, T=None, polarization=PARAMETRIC, step=1e-3):
    """d(nu)/dT of one resonance in Hz per kelvin (central difference)."""
    T = spec.reference_temperature if T is None else T
    hi = wgm_frequency(spec, mode, T + step / 2, polarization, tol_hz=1.0)
    lo = wgm_frequency(spec, mode, T - step / 2, polarization, tol_hz=1.0)
    return (hi - lo) / step


def triplet_thermal_slope(spec, match, step=1e-3):
    """Shift per kelvin of the emitted signal frequency with the triplet held
    fixed, ``d/dT (nu(m_s) - nu(m_i) + nu_p) / 2``; idler moves by the same
    amount in the same direction as the pump share."""
    def nu_s(T):
        fs = wgm_frequency(spec, match.signal_mode, T, tol_hz=1.0)
        fi = wgm_frequency(spec, match.idler_mode, T, tol_hz=1.0)
        return (fs - fi + wgm_frequency(spec, match.pump_mode, T, PUMP, tol_hz=1.0)) / 2
    T = match.temperature
    return (nu_s(T + step / 2) - nu_s(T - step / 2)) / step


def voltage_detune(volts, slope_hz_per_v=VOLTAGE_SLOPE_HZ_PER_V, limit_v=VOLTAGE_LIMIT_V):
    """Linear electro-optic fine tuning of the emitted frequency."""
    if abs(volts) > limit_v:
        raise DomainError(f"|V| = {abs(volts)} exceeds the linear-regime bound {limit_v} V")
    return slope_hz_per_v * volts


# --------------------------------------------------------------------------
# phase matching


@dataclass(frozen=True)
class PhaseMatch:
    temperature: float
    signal_mode: ModeIndex
    idler_mode: ModeIndex
    pump_mode: ModeIndex
    nu_signal: float
    nu_idler: float
    nu_pump: float
    residual_hz: float
    tolerance_hz: float

    @property
    def lambda_signal(self):
        return C_LIGHT / self.nu_signal

    @property
    def lambda_idler(self):
        return C_LIGHT / self.nu_idler

    @property
    def lambda_pump(self):
        return C_LIGHT / self.nu_pump

    @property
    def splitting(self):
        return abs(self.lambda_idler - self.lambda_signal)


def resonance_tolerance(spec, nu_signal, nu_idler, T, gap=DEFAULT_GAP, kappa="printed"):
    """One loaded linewidth of the signal plus one of the idler."""
    return (loaded_bandwidth(spec, C_LIGHT / nu_signal, gap, T, kappa)
            + loaded_bandwidth(spec, C_LIGHT / nu_idler, gap, T, kappa))


def _candidates(spec, pump, T, nu_p, max_offset, q_max, p_max):
    """Summed detuning for every allowed (m_s, q_s, p_s, q_i, p_i) split."""
    m_lo = (pump.m + 1) // 2
    k = np.arange(0, max_offset + 1)
    ms, mi = m_lo + k, pump.m - (m_lo + k)
    freqs = {}
    for q in range(1, q_max + 1):
        for p in range(0, p_max + 1):
            freqs[(q, p)] = (wgm_frequency(spec, ModeIndex(ms, q, p), T),
                             wgm_frequency(spec, ModeIndex(mi, q, p), T))
    for (qs, ps), (fs, _) in freqs.items():
        for (qi, pi), (_, fi) in freqs.items():
            yield qs, ps, qi, pi, ms, mi, fs, fi, fs + fi - nu_p


def phase_match_solve(spec, T, pump, tolerance_hz=None, max_offset=None, q_max=1,
                      include_polar=False, p_max=2, gap=DEFAULT_GAP):
    """Best signal/idler mode pair for ``pump`` at temperature ``T``.

    Azimuthal numbers are conserved exactly (``m_s + m_i = m_p``); energy is
    conserved exactly by splitting the summed resonance detuning equally
    between signal and idler.  Raises :class:`NoPhaseMatchError` when the
    smallest detuning exceeds the tolerance (default: one loaded linewidth
    each for signal and idler).
    """
    nu_p = wgm_frequency(spec, pump, T, PUMP)
    if max_offset is None:
        # allow signal/idler detuning up to ~35 % of the degenerate frequency
        fsr = free_spectral_range(spec, ModeIndex(pump.m // 2, 1, 0), T)
        max_offset = int(0.35 * nu_p / 2 / fsr)
    best = None
    for qs, ps, qi, pi, ms, mi, fs, fi, r in _candidates(
            spec, pump, T, nu_p, max_offset, q_max, p_max if include_polar else 0):
        j = int(np.argmin(np.abs(r)))
        if best is None or abs(r[j]) < abs(best[-1]):
            best = (ModeIndex(int(ms[j]), qs, ps), ModeIndex(int(mi[j]), qi, pi),
                    fs[j], fi[j], r[j])
    sig, idl, fs, fi, r = best
    nu_s = (fs - fi + nu_p) / 2
    nu_i = nu_p - nu_s
    tol = tolerance_hz if tolerance_hz is not None else resonance_tolerance(spec, nu_s, nu_i, T, gap)
    if abs(r) > tol:
        raise NoPhaseMatchError(
            f"no triplet within {tol:.3g} Hz at T = {T:.4f} C (best residual {r:.3g} Hz)")
    return PhaseMatch(T, sig, idl, pump, nu_s, nu_i, nu_p, float(r), float(tol))


def _split_residual(spec, pump, k, T):
    """``nu(m_s) + nu(m_i) - nu_p`` for the split ``m_s = ceil(m_p/2) + k``;
    ``k`` and ``T`` broadcast."""
    m_lo = (pump.m + 1) // 2
    k = np.asarray(k)
    fs = wgm_frequency(spec, ModeIndex(m_lo + k, pump.q, pump.p), T, tol_hz=1.0)
    fi = wgm_frequency(spec, ModeIndex(pump.m - m_lo - k, pump.q, pump.p), T, tol_hz=1.0)
    return fs + fi - wgm_frequency(spec, pump, T, PUMP, tol_hz=1.0)


def _scan_roots(fn, lo, hi, n=121):
    grid = np.linspace(lo, hi, n)
    vals = np.array([fn(t) for t in grid])
    roots = []
    for i in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0):
        if vals[i] == 0:
            roots.append(grid[i])
        elif vals[i + 1] != 0:
            roots.append(brentq(fn, grid[i], grid[i + 1], xtol=1e-9))
    return roots


def degeneracy_temperature(spec, pump, T_range=None):
    """Temperature at which ``2 nu(m_p / 2) = nu_p`` for an even pump number."""
    if pump.m % 2:
        raise ConfigError("degenerate operation needs an even pump azimuthal number")
    if T_range is None:
        T_range = spec.pump_index.temperature_range_C if hasattr(spec.pump_index,
                                                                 "temperature_range_C") else (0, 150)
    roots = _scan_roots(lambda t: _split_residual(spec, pump, 0, t), *T_range)
    if not roots:
        raise NoPhaseMatchError(f"no degenerate phase matching for {pump} in {T_range} C")
    return float(min(roots, key=lambda t: abs(t - spec.reference_temperature)))


def tune_to_pump(spec, pump_wavelength=532e-9, T_range=None, iterations=6):
    """Adjust the radius (by well under a micrometre) so that an even pump
    mode is resonant at ``pump_wavelength`` exactly at its degeneracy
    temperature.  Returns ``(spec, pump_mode, T_degenerate)``.
    """
    target = C_LIGHT / pump_wavelength
    T = spec.reference_temperature
    pump = None
    for _ in range(iterations):
        m = mode_number_near(spec, pump_wavelength, T, PUMP)
        m += m % 2
        if pump is not None and m == pump.m:
            break
        pump = ModeIndex(m)
        T = degeneracy_temperature(spec, pump, T_range)
    # radius and degeneracy temperature are nearly decoupled: alternate
    for _ in range(20):
        a0 = spec.radius

        def mismatch(a):
            return wgm_frequency(spec.with_radius(a), pump, T, PUMP, tol_hz=1.0) - target

        # pump mode is within one FSR of the target, so the radius moves by < 2/m
        span = 2.0 / pump.m
        spec = spec.with_radius(brentq(mismatch, a0 * (1 - span), a0 * (1 + span),
                                       xtol=a0 * 1e-15, rtol=1e-15))
        T_new = degeneracy_temperature(spec, pump, T_range)
        done = abs(T_new - T) < 1e-8
        T = T_new
        if done:
            return spec, pump, T
    raise SolverError("radius/temperature calibration did not converge")


def phase_match_curve(spec, pump, T_lo, T_hi, max_offset=None, gap=DEFAULT_GAP,
                      n_grid=31, xtol=1e-9):
    """Exactly triple-resonant (signal, idler) pairs with temperatures in
    ``[T_lo, T_hi]``, one per mode offset and crossing, sorted by temperature.

    Residuals are tabulated on a temperature grid for every offset at once;
    each sign change is then refined by a vectorised Illinois iteration.
    """
    if not T_hi > T_lo:
        raise ConfigError("T_hi must exceed T_lo")
    if max_offset is None:
        fsr = free_spectral_range(spec, ModeIndex(pump.m // 2, pump.q, pump.p), T_lo)
        nu_p = wgm_frequency(spec, pump, T_lo, PUMP)
        max_offset = int(0.35 * nu_p / 2 / fsr)
    ks = np.arange(max_offset + 1)
    grid = np.linspace(T_lo, T_hi, n_grid)
    r = _split_residual(spec, pump, ks[None, :], grid[:, None])
    gi, ki = np.nonzero(np.sign(r[:-1]) * np.sign(r[1:]) <= 0)
    exact_lo = r[gi, ki] == 0
    # avoid reporting a root sitting exactly on a grid node twice
    keep = ~((r[gi + 1, ki] == 0) & (gi + 1 < n_grid - 1))
    gi, ki, exact_lo = gi[keep], ki[keep], exact_lo[keep]
    k = ks[ki]
    a, b = grid[gi], grid[gi + 1]
    fa, fb = r[gi, ki], r[gi + 1, ki]
    for _ in range(200):
        live = (b - a > xtol) & (fa != 0) & (fb != 0)
        if not live.any():
            break
        c = np.where(live, (a * fb - b * fa) / np.where(fb - fa == 0, 1, fb - fa), a)
        c = np.clip(c, np.minimum(a, b), np.maximum(a, b))
        fc = np.where(live, _split_residual(spec, pump, k, c), 0.0)
        left = live & (np.sign(fc) == np.sign(fa))
        right = live & ~left
        # Illinois modification keeps both ends moving
        fb = np.where(left, fb / 2, fb)
        fa = np.where(right, fa / 2, fa)
        a, fa = np.where(left, c, a), np.where(left, fc, fa)
        b, fb = np.where(right, c, b), np.where(right, fc, fb)
    roots = np.where(exact_lo, grid[gi], np.where(np.abs(fa) <= np.abs(fb), a, b))
    m_lo = (pump.m + 1) // 2
    out = []
    for T, kk in zip(roots.tolist(), k.tolist()):
        ms, mi = m_lo + kk, pump.m - m_lo - kk
        fs = wgm_frequency(spec, ModeIndex(ms, pump.q, pump.p), T, tol_hz=1.0)
        fi = wgm_frequency(spec, ModeIndex(mi, pump.q, pump.p), T, tol_hz=1.0)
        nu_p = wgm_frequency(spec, pump, T, PUMP, tol_hz=1.0)
        nu_s = (fs - fi + nu_p) / 2
        out.append(PhaseMatch(T, ModeIndex(ms, pump.q, pump.p), ModeIndex(mi, pump.q, pump.p),
                              pump, nu_s, nu_p - nu_s, nu_p, fs + fi - nu_p,
                              resonance_tolerance(spec, nu_s, nu_p - nu_s, T, gap)))
    out.sort(key=lambda pm: (pm.temperature, pm.signal_mode.m))
    return out
