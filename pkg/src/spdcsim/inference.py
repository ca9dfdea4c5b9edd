"""Parameter extraction from correlation curves."""
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .correlator import CorrelationMode, G2Curve
from .errors import FitError, ModeNumberError, NoCorrelationError, RegressionError, ShapeError

#: pair detection efficiency of two APDs at 7.5 % each
DEFAULT_PAIR_EFFICIENCY = 0.075 ** 2

_MAX_EVALS = 2000


@dataclass(frozen=True)
class ExpFit:
    """``g2(tau) = baseline + amplitude * exp(-decay_rate * |tau|)``."""

    amplitude: float
    decay_rate: float
    baseline: float
    covariance: np.ndarray
    residual_norm: float
    chi2: float = float("nan")
    dof: int = 0
    converged: bool = True
    n_evals: int = 0

    @property
    def stderr(self):
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    @property
    def peak(self):
        return self.baseline + self.amplitude

    @property
    def peak_stderr(self):
        c = self.covariance
        return math.sqrt(max(c[0, 0] + c[2, 2] + 2 * c[0, 2], 0.0))

    @property
    def decay_time(self):
        return 1.0 / self.decay_rate

    def model(self, tau):
        return self.baseline + self.amplitude * np.exp(-self.decay_rate * np.abs(tau))

    def to_dict(self):
        return {
            "amplitude": self.amplitude,
            "decay_rate_per_s": self.decay_rate,
            "baseline": self.baseline,
            "covariance": np.asarray(self.covariance).tolist(),
            "stderr": self.stderr.tolist(),
            "residual_norm": self.residual_norm,
            "chi2": self.chi2,
            "dof": self.dof,
            "converged": self.converged,
            "n_evals": self.n_evals,
        }


@dataclass(frozen=True)
class SourceEstimate:
    bandwidth_hz: float
    pair_rate_hz: float
    n_modes_effective: float = float("nan")
    decay_ratio: float = float("nan")

    def to_dict(self):
        return {"bandwidth_hz": self.bandwidth_hz, "pair_rate_hz": self.pair_rate_hz,
                "n_modes_effective": self.n_modes_effective, "decay_ratio": self.decay_ratio}


def initial_guess(tau, g2):
    """Baseline from the outer quartile, amplitude from the peak, decay rate
    from a log-linear fit over the upper half of the peak."""
    atau = np.abs(tau)
    outer = atau >= np.quantile(atau, 0.75)
    baseline = float(np.median(g2[outer]))
    peak = float(np.max(g2))
    amp = peak - baseline
    if amp <= 0:
        return baseline, amp, float("nan")
    upper = g2 - baseline > amp / 2
    x, y = atau[upper], np.log(g2[upper] - baseline)
    slope = np.polyfit(x, y, 1)[0] if len(np.unique(x)) >= 2 else 0.0
    if slope < 0:
        rate = -slope
    else:
        # peak narrower than two bins: half-maximum at half the outer bin spacing
        width = np.diff(np.unique(atau))[:1]
        rate = math.log(2) / (width[0] / 2 if len(width) and width[0] > 0 else 1.0)
    return baseline, amp, rate


def fit_exponential(curve, fix_baseline=None, exclude_central=None):
    """Weighted least squares of ``B + A exp(-lambda |tau|)`` (weights 1/stderr^2).

    The central bin is dropped for start-stop curves unless ``exclude_central``
    says otherwise.
    """
    tau = np.asarray(curve.tau, dtype=np.float64)
    g2 = np.asarray(curve.g2, dtype=np.float64)
    err = np.asarray(curve.stderr, dtype=np.float64)
    if exclude_central is None:
        exclude_central = curve.mode is CorrelationMode.START_STOP
    use = np.isfinite(err) & (err > 0) & np.isfinite(g2)
    if exclude_central:
        use &= np.abs(tau) > 0.5 * (curve.bin_width or np.min(np.abs(tau[tau != 0])))
    if use.sum() < 8:
        raise FitError(f"need at least 8 usable bins, got {int(use.sum())}",
                       {"usable_bins": int(use.sum())})
    tau, g2, err = tau[use], g2[use], err[use]

    # work in units of the bin spacing and of the data scale
    t_unit = float(np.min(np.diff(np.unique(tau)))) if len(np.unique(tau)) > 1 else 1.0
    x = np.abs(tau) / t_unit
    y_unit = float(np.max(np.abs(g2))) or 1.0
    y, s = g2 / y_unit, err / y_unit

    b0, a0, r0 = initial_guess(tau, g2)
    if not (a0 > 0 and np.isfinite(r0)):
        raise ShapeError("curve has no positive peak above its baseline")
    fixed = fix_baseline is not None
    k0 = r0 * t_unit

    def unpack(p):
        if fixed:
            return fix_baseline / y_unit, p[0], math.exp(p[1])
        return p[0], p[1], math.exp(p[2])

    def resid(p):
        b, a, k = unpack(p)
        return (b + a * np.exp(-k * x) - y) / s

    p0 = [a0 / y_unit, math.log(k0)] if fixed else [b0 / y_unit, a0 / y_unit, math.log(k0)]
    sol = least_squares(resid, p0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                        max_nfev=_MAX_EVALS)
    diag = {"status": int(sol.status), "message": sol.message, "nfev": int(sol.nfev)}
    if sol.status <= 0 or not np.all(np.isfinite(sol.x)):
        raise FitError(f"fit did not converge: {sol.message}", diag)

    b, a, k = unpack(sol.x)
    # Jacobian of (B, A, lambda) in physical units
    e = np.exp(-k * x)
    cols = [np.ones_like(x) / s, e / s, -a * x * e / s]
    scale = [y_unit, y_unit, 1.0 / t_unit]
    if fixed:
        cols, scale = cols[1:], scale[1:]
    J = np.column_stack(cols)
    try:
        cov_u = np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError as exc:
        raise FitError("singular normal matrix", diag) from exc
    cov_u = cov_u * np.outer(scale, scale)
    cov = np.zeros((3, 3))
    if fixed:
        cov[1:, 1:] = cov_u
        cov = cov[[1, 2, 0]][:, [1, 2, 0]]
    else:
        cov = cov_u[[1, 2, 0]][:, [1, 2, 0]]
    amplitude, rate, baseline = a * y_unit, k / t_unit, b * y_unit
    if amplitude < 0:
        raise ShapeError(f"fitted amplitude is negative ({amplitude:.3g})")
    r = resid(sol.x)
    chi2 = float(r @ r)
    dof = len(x) - len(sol.x)
    return ExpFit(amplitude, rate, baseline, cov, float(math.sqrt(chi2)), chi2, dof,
                  True, int(sol.nfev))


def delay_bin_weights(decay_rate, bin_width, half_bins):
    """Probability mass of the two-sided exponential delay density
    ``(lambda/2) exp(-lambda |tau|)`` in each of ``2 * half_bins + 1`` bins."""
    # tail mass beyond each edge, so both wings are computed without cancellation
    tail = 0.5 * np.exp(-decay_rate * (np.arange(half_bins + 1) + 0.5) * bin_width)
    wing = tail[:-1] - tail[1:]
    return np.concatenate([wing[::-1], [1.0 - 2.0 * tail[0]], wing])


def fit_cross_with_pedestal(cross, auto, iterations=4, exclude_central=None):
    """Fit the signal-idler peak after removing the accidental pedestal.

    Signals from different pairs are bunched by the thermal intensity, and an
    idler sits one pair delay away from its own signal, so photons of
    unrelated pairs add ``(g2_ss - 1)`` convolved with the pair delay density
    to the cross curve.  That broad term drags a single-exponential fit
    toward slow decay when the pair peak is not much taller than 1/n.  The
    pedestal is built from the measured ``auto`` curve (same bins as
    ``cross``) and the current decay-rate estimate, and the fit is repeated.
    """
    tau = np.asarray(cross.tau)
    if len(auto.tau) != len(tau) or not np.allclose(auto.tau, tau, rtol=0, atol=1e-15):
        raise ShapeError("auto and cross curves must share their delay bins")
    fit = fit_exponential(cross, exclude_central=exclude_central)
    half = len(tau) // 2
    bw = cross.bin_width or float(np.min(np.diff(tau)))
    excess = np.asarray(auto.g2, dtype=np.float64) - 1.0
    var = np.asarray(auto.stderr, dtype=np.float64) ** 2
    for _ in range(iterations):
        w = delay_bin_weights(fit.decay_rate, bw, half)
        ped = np.convolve(excess, w, mode="same")
        ped_err = np.sqrt(np.convolve(var, w * w, mode="same"))
        cleaned = G2Curve(tau, cross.g2 - ped, np.hypot(cross.stderr, ped_err), cross.counts,
                          cross.bin_width, cross.mode, {"pedestal": ped})
        fit = fit_exponential(cleaned, exclude_central=exclude_central)
    return fit


def bandwidth_from_fit(fit):
    return fit.decay_rate / (2 * math.pi)


def pair_rate_from_peak(fit):
    """Invert ``1 + gamma/(2R) exp(-gamma |tau|)`` for the pair rate."""
    if not fit.amplitude > 0:
        raise NoCorrelationError("no correlation peak (amplitude <= 0)")
    return fit.decay_rate / (2 * fit.amplitude)


def effective_modes(g2_zero):
    if not g2_zero > 1:
        raise ModeNumberError(
            f"g2(0) = {g2_zero} is not super-Poissonian; mode number undefined")
    return 1.0 / (g2_zero - 1.0)


def estimate_source(cross_fit, auto_fit=None, efficiency_pair=1.0):
    """Combine a cross fit (and optionally an auto fit) into a SourceEstimate.

    ``efficiency_pair`` rescales the peak-derived pair rate: the peak height of
    a detected cross-correlation is unchanged by losses, so no correction is
    applied unless the caller wants one.
    """
    n_eff = ratio = float("nan")
    if auto_fit is not None:
        try:
            n_eff = effective_modes(auto_fit.peak)
        except ModeNumberError:
            n_eff = float("inf")
        ratio = auto_fit.decay_time / cross_fit.decay_time
    return SourceEstimate(bandwidth_from_fit(cross_fit),
                          pair_rate_from_peak(cross_fit) / efficiency_pair, n_eff, ratio)


@dataclass(frozen=True)
class PumpFit:
    slope: float
    intercept: float
    slope_stderr: float
    intercept_stderr: float
    inferred_pair_rate_per_mW: float
    eta_pair: float
    window_fraction: float = 1.0

    def to_dict(self):
        return dict(self.__dict__)


def pump_conversion_fit(points, eta_pair=DEFAULT_PAIR_EFFICIENCY, window_fraction=1.0):
    """Ordinary least-squares line through (pump power in mW, coincidence rate).

    The pair rate per mW is the slope divided by the pair detection
    efficiency and by the fraction of pair delays captured by the
    coincidence window.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise RegressionError("need at least three (power, rate) points")
    x, y = pts[:, 0], pts[:, 1]
    if len(np.unique(x)) < 2:
        raise RegressionError("pump powers are not distinct")
    X = np.column_stack([x, np.ones_like(x)])
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < 2:
        raise RegressionError("rank-deficient regression")
    slope, intercept = coef
    resid = y - X @ coef
    dof = len(x) - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(X.T @ X)
    return PumpFit(float(slope), float(intercept), float(math.sqrt(cov[0, 0])),
                   float(math.sqrt(cov[1, 1])), float(slope / (eta_pair * window_fraction)),
                   float(eta_pair), float(window_fraction))
