"""Synthetic photon-count spectra of the 5P -> 5D lines and line-shape fits.

The forward model assembles, per excitation channel (ground sublevel,
spherical component, excited sublevel), a line centered at the hyperfine
offset plus that channel's Stark shift, with the natural Lorentzian profile
convolved with the probe-pulse spectrum.  Counts are Poisson draws from
rate * dwell on the requested detuning grid; a fixed seed gives bit-identical
records.

Fits use damped Gauss-Newton on the 6-parameter two-component models
(two amplitudes, two centers, two widths) with Poisson weights 1/max(n, 1).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction

import numpy as np

from . import angular
from .angular import (HyperfineSublevel, Polarization, RB87_NUCLEAR_SPIN,
                      level_j, polarization_weights, transition_strength)
from .stark import FieldPoint, PolarizabilityPair, StarkCoefficient, transition_shift

__all__ = [
    "TransitionConfig",
    "SpectrumRecord",
    "LineModel",
    "LineFitResult",
    "PulseProfile",
    "pulse_spectrum",
    "load_pulse_profile",
    "lorentzian",
    "gaussian",
    "line_profile",
    "synthesize_spectrum",
    "fit_spectrum",
    "fit_scan_series",
    "track_line_centers",
    "fit_parabola",
    "published_config",
    "GROUND_STRETCHED",
]

GROUND_STRETCHED = HyperfineSublevel(Fraction(3, 2), RB87_NUCLEAR_SPIN, 3, 3,
                                     label="5P3/2")

_KERNEL_HALF_WIDTH_FWHM = 6.0  # kernel truncation, in pulse FWHM units


@dataclass(frozen=True)
class TransitionConfig:
    """Probe configuration driving the weighted line model.

    ground_populations maps 5P3/2 sublevels to populations (sum <= 1).
    polarization_split, when set to (circular, linear), imposes that intensity
    split on (q = helicity, q = 0); when None the split follows from the tilt
    angle via the exact spin-1 rotation weights.
    """

    ground_populations: dict
    probe_polarization: Polarization = Polarization.SIGMA_PLUS
    tilt_angle_deg: float = 11.0
    polarization_split: tuple | None = None
    excited_level: str = "5D5/2"
    hyperfine_splittings: dict = field(default_factory=lambda: {4: 0.0, 3: 100.0})
    natural_fwhm_mhz: float = 5.9
    pulse_duration_ns: float = 50.0
    dwell_time_s: float = 0.1
    peak_rate_cps: float = 2.0e4
    background_rate_cps: float = 100.0

    def __post_init__(self):
        if any(v < 0 for v in self.ground_populations.values()):
            raise ValueError("populations must be >= 0")
        if sum(self.ground_populations.values()) > 1.0 + 1e-9:
            raise ValueError("populations must sum to <= 1")
        if not 0.0 <= self.tilt_angle_deg < 90.0:
            raise ValueError("tilt angle must lie in [0, 90) degrees")
        for name in ("natural_fwhm_mhz", "pulse_duration_ns", "dwell_time_s",
                     "peak_rate_cps", "background_rate_cps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def published_config(excited_level="5D5/2",
                 polarization=Polarization.SIGMA_PLUS) -> TransitionConfig:
    """The published probe configuration: optically pumped stretched ground
    state, probe tilted 11 degrees with a 96%/4% circular/linear split."""
    offsets = {4: 0.0, 3: 100.0} if excited_level == "5D5/2" else {3: 0.0, 2: 100.0}
    return TransitionConfig(
        ground_populations={GROUND_STRETCHED: 1.0},
        probe_polarization=polarization,
        tilt_angle_deg=11.0,
        polarization_split=(0.96, 0.04),
        excited_level=excited_level,
        hyperfine_splittings=offsets,
    )


@dataclass(frozen=True)
class SpectrumRecord:
    """One frequency scan: strictly increasing detunings (MHz), counts per
    bin, and the dwell time per point.  Poisson draws give integer-valued
    counts; noiseless synthesis stores the expected (real) counts."""

    detunings: np.ndarray
    counts: np.ndarray
    dwell_time_s: float

    def __post_init__(self):
        det = np.asarray(self.detunings, dtype=float)
        cts = np.asarray(self.counts, dtype=float)
        object.__setattr__(self, "detunings", det)
        object.__setattr__(self, "counts", cts)
        if det.shape != cts.shape or det.ndim != 1:
            raise ValueError("detunings and counts must be 1-d and equal length")
        if len(det) > 1 and not np.all(np.diff(det) > 0):
            raise ValueError("detunings must be strictly increasing")
        if np.any(cts < 0):
            raise ValueError("counts must be >= 0")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["detuning_mhz", "counts", "dwell_s"])
            for d, c in zip(self.detunings, self.counts):
                writer.writerow([f"{d:.6g}", f"{c:.10g}", f"{self.dwell_time_s:.6g}"])

    @classmethod
    def from_csv(cls, path) -> "SpectrumRecord":
        det, cts, dwell = [], [], 0.1
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                det.append(float(row["detuning_mhz"]))
                cts.append(float(row["counts"]))
                dwell = float(row["dwell_s"])
        return cls(np.array(det), np.array(cts), dwell)


class PulseProfile:
    """Normalized probe-pulse power spectrum, callable at frequency (MHz).

    support_hint_mhz is the half-width beyond which the density is treated
    as negligible when building convolution kernels.
    """

    def __init__(self, density, description="", support_hint_mhz=120.0):
        self._density = density
        self.description = description
        self.support_hint_mhz = support_hint_mhz
        self._kernels = {}

    def __call__(self, f_mhz):
        return self._density(np.asarray(f_mhz, dtype=float))

    def kernel(self, step_mhz, half_width_mhz):
        """Discrete convolution kernel on the given step, unit discrete area."""
        key = (round(step_mhz, 12), round(half_width_mhz, 12))
        if key not in self._kernels:
            n = int(math.ceil(half_width_mhz / step_mhz))
            f = np.arange(-n, n + 1) * step_mhz
            k = np.clip(self._density(f), 0.0, None)
            total = k.sum()
            if total <= 0:
                raise ValueError("pulse profile has no weight on the kernel grid")
            self._kernels[key] = k / total
        return self._kernels[key]


def pulse_spectrum(duration_ns: float) -> PulseProfile:
    """Power spectrum of a rectangular pulse: unit-area sinc^2 of width
    ~0.886/tau FWHM (17.7 MHz for 50 ns)."""
    if duration_ns <= 0:
        raise ValueError("pulse duration must be > 0")
    tau_us = duration_ns * 1e-3  # MHz * us are conjugate

    def density(f):
        return tau_us * np.sinc(f * tau_us) ** 2  # np.sinc includes the pi

    hint = _KERNEL_HALF_WIDTH_FWHM * 0.8859 / tau_us
    return PulseProfile(density, f"rectangular {duration_ns:g} ns",
                        support_hint_mhz=hint)


def load_pulse_profile(path) -> PulseProfile:
    """Measured pulse spectrum from a two-column CSV 'freq_mhz,density'."""
    freqs, dens = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            freqs.append(float(row["freq_mhz"]))
            dens.append(float(row["density"]))
    freqs = np.array(freqs)
    dens = np.clip(np.array(dens), 0.0, None)
    if len(freqs) < 2 or np.any(np.diff(freqs) <= 0):
        raise ValueError("pulse profile needs increasing freq_mhz samples")
    area = np.trapezoid(dens, freqs)
    if area <= 0:
        raise ValueError("pulse profile must have positive area")
    dens = dens / area

    def density(f):
        return np.interp(f, freqs, dens, left=0.0, right=0.0)

    hint = float(max(abs(freqs[0]), abs(freqs[-1])))
    return PulseProfile(density, f"tabulated({path})", support_hint_mhz=hint)


def lorentzian(x, center, fwhm):
    """Unit-area Lorentzian; peak value 2/(pi*fwhm)."""
    if fwhm <= 0:
        raise ValueError("degenerate width")
    hw = 0.5 * fwhm
    x = np.asarray(x, dtype=float)
    return (hw / math.pi) / ((x - center) ** 2 + hw * hw)


def gaussian(x, center, fwhm):
    """Unit-area Gaussian parametrized by FWHM."""
    if fwhm <= 0:
        raise ValueError("degenerate width")
    sigma = fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * ((x - center) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))


class LineModel(Enum):
    GAUSS_SUM = "gauss_sum"
    LORENTZ_SUM = "lorentz_sum"
    LORENTZ_CONVOLVED = "lorentz_convolved"


DEFAULT_PULSE = pulse_spectrum(50.0)


def _two_component(x, params, shape):
    a1, a2, c1, c2, w1, w2 = params
    if w1 <= 0 or w2 <= 0:
        raise ValueError("degenerate width")
    peak1 = shape(np.array([0.0]), 0.0, w1)[0]
    peak2 = shape(np.array([0.0]), 0.0, w2)[0]
    return (a1 / peak1) * shape(x, c1, w1) + (a2 / peak2) * shape(x, c2, w2)


def _convolve_profile(x, base_fn, pulse):
    """base_fn evaluated on a padded uniform grid matched to x, convolved
    with the pulse kernel, and read back at x.  Uniform grids are used
    as-is (no interpolation); non-uniform detunings go through a 0.25 MHz
    working grid."""
    x = np.asarray(x, dtype=float)
    diffs = np.diff(x)
    uniform = len(x) > 1 and np.allclose(diffs, diffs[0], rtol=0, atol=1e-9)
    step = float(diffs[0]) if uniform else 0.25
    kern = pulse.kernel(step, pulse.support_hint_mhz)
    npad = (len(kern) - 1) // 2
    if uniform:
        grid = x[0] + step * (np.arange(len(x) + 2 * npad) - npad)
    else:
        grid = np.arange(x[0] - npad * step, x[-1] + (npad + 0.5) * step, step)
    conv = np.convolve(base_fn(grid), kern, mode="same")
    if uniform:
        return conv[npad:npad + len(x)]
    return np.interp(x, grid, conv)


def _convolved_eval(x, params, pulse):
    return _convolve_profile(x, lambda g: _two_component(g, params, lorentzian),
                             pulse)


def line_profile(model: LineModel, params, detuning_mhz, pulse: PulseProfile = None):
    """Evaluate the two-component profile at the given detunings.

    params = (amp1, amp2, center1, center2, fwhm1, fwhm2); amplitudes are the
    peak intensities of the unconvolved components.  Model LORENTZ_CONVOLVED
    convolves the Lorentzian pair with the probe-pulse spectrum (default:
    rectangular 50 ns).
    """
    params = [float(p) for p in params]
    if len(params) != 6:
        raise ValueError("exactly 6 parameters: 2 amplitudes, 2 centers, 2 widths")
    x = np.asarray(detuning_mhz, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    if model == LineModel.GAUSS_SUM:
        out = _two_component(x, params, gaussian)
    elif model == LineModel.LORENTZ_SUM:
        out = _two_component(x, params, lorentzian)
    elif model == LineModel.LORENTZ_CONVOLVED:
        out = _convolved_eval(x, params, pulse or DEFAULT_PULSE)
    else:
        raise ValueError(f"unknown line model {model!r}")
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class LineFitResult:
    """Best-fit two-component parameters, reported center-ascending."""

    model: LineModel
    amplitudes: tuple
    centers: tuple
    widths: tuple
    covariance: np.ndarray
    chi_square: float
    converged: bool

    @property
    def center_errors(self):
        d = np.sqrt(np.abs(np.diag(self.covariance)))
        return (d[2], d[3])


def _excitation_channels(config, field_point, ground_alpha, excited_alpha):
    """(probability, center_mhz, excited sublevel) per active channel."""
    weights = polarization_weights(config.tilt_angle_deg, config.probe_polarization,
                                   config.polarization_split)
    offsets = {Fraction(k): v for k, v in config.hyperfine_splittings.items()}
    je = level_j(config.excited_level)
    channels = []
    for g, pop in config.ground_populations.items():
        if pop == 0.0:
            continue
        i = g.i.as_fraction()
        for fe, offset in offsets.items():
            if not abs(je - i) <= fe <= je + i:
                continue
            for q, w in weights.items():
                if w == 0.0:
                    continue
                me = g.mf.as_fraction() + q
                if abs(me) > fe:
                    continue
                exc = HyperfineSublevel(je, i, fe, me, label=config.excited_level)
                s = transition_strength(g, exc, Polarization(q))
                if s == 0.0:
                    continue
                shift_mhz = transition_shift((ground_alpha, g), (excited_alpha, exc),
                                             field_point) / 1e6
                channels.append((pop * w * s, offset + shift_mhz, exc))
    return channels


def synthesize_spectrum(config: TransitionConfig, field_point: FieldPoint,
                        grid, ground_alpha: PolarizabilityPair,
                        excited_alpha: PolarizabilityPair, seed=None,
                        excited_level=None, pulse=None) -> SpectrumRecord:
    """Forward-model a photon-count scan over the detuning grid (MHz).

    The composite line shape is scaled so its maximum over the grid equals
    peak_rate_cps on top of background_rate_cps.  With an integer seed the
    counts are Poisson; with seed=None the expected counts are returned.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("detuning grid must be nonempty")
    if excited_level is not None and excited_level != config.excited_level:
        offsets = {4: 0.0, 3: 100.0} if excited_level == "5D5/2" else {3: 0.0, 2: 100.0}
        config = replace(config, excited_level=excited_level,
                         hyperfine_splittings=offsets)
    pulse = pulse or pulse_spectrum(config.pulse_duration_ns)
    channels = _excitation_channels(config, field_point, ground_alpha, excited_alpha)

    if channels:
        fwhm = config.natural_fwhm_mhz
        unit_peak = lorentzian(0.0, 0.0, fwhm)

        def base(g):
            out = np.zeros_like(g)
            for prob, center, _ in channels:
                out += (prob / unit_peak) * lorentzian(g, center, fwhm)
            return out

        signal = _convolve_profile(grid, base, pulse)
        peak = signal.max()
    else:
        signal = np.zeros_like(grid)
        peak = 0.0
    rate = np.full_like(grid, config.background_rate_cps)
    if peak > 0:
        rate += config.peak_rate_cps * signal / peak
    expected = rate * config.dwell_time_s
    if seed is None:
        counts = expected
    else:
        counts = np.random.default_rng(int(seed)).poisson(expected).astype(float)
    return SpectrumRecord(grid, counts, config.dwell_time_s)


def _default_initial_guess(x, y):
    """Two highest well-separated local maxima of the 5-point-smoothed
    spectrum; well-separated means at least 12% of the scan span, which
    keeps the second seed off the first line's flank and sidelobes."""
    if len(y) < 12:
        raise ValueError("need at least 12 points to seed the fit")
    kern = np.ones(5) / 5.0
    smooth = np.convolve(y, kern, mode="same")
    step = float(np.median(np.diff(x)))
    min_sep = max(8 * step, 0.12 * (x[-1] - x[0]))
    interior = smooth[1:-1]
    is_max = (interior >= smooth[:-2]) & (interior >= smooth[2:]) \
        & ((interior > smooth[:-2]) | (interior > smooth[2:]))
    candidates = np.where(is_max)[0] + 1
    if len(candidates) == 0:
        candidates = np.array([int(np.argmax(smooth))])
    order = candidates[np.argsort(smooth[candidates])[::-1]]
    i1 = int(order[0])
    i2 = None
    for idx in order[1:]:
        if abs(x[idx] - x[i1]) >= min_sep:
            i2 = int(idx)
            break
    if i2 is None:  # single visible line: seed the far end of the scan
        i2 = 0 if (x[i1] - x[0]) > (x[-1] - x[i1]) else len(x) - 1
    lo = min(float(y.min()), 0.0)
    w0 = max(4 * step, 10.0)
    return np.array([max(smooth[i1] - lo, 1.0), max(smooth[i2] - lo, 1.0),
                     x[i1], x[i2], w0, w0])


def fit_spectrum(record: SpectrumRecord, model: LineModel, initial_guess=None,
                 pulse: PulseProfile = None, max_iter=200) -> LineFitResult:
    """Weighted nonlinear least squares of the 6-parameter two-line model.

    Weights are 1/max(counts, 1) (Poisson variance).  Damped Gauss-Newton
    with central-difference Jacobian (relative step 1e-6); converged when the
    relative parameter change drops below 1e-8 within the iteration cap.
    Raises ValueError("unidentifiable model") when the normal matrix is
    singular at the starting point, e.g. for duplicate components.
    """
    x = record.detunings
    y = record.counts
    if len(x) < 12:
        raise ValueError("need at least 12 data points spanning both components")
    w = 1.0 / np.maximum(y, 1.0)
    theta = np.array(_default_initial_guess(x, y) if initial_guess is None
                     else [float(v) for v in initial_guess])

    def model_eval(p):
        return line_profile(model, p, x, pulse)

    def chisq(p):
        r = y - model_eval(p)
        return float(np.sum(w * r * r))

    def jacobian(p):
        J = np.empty((len(x), 6))
        for k in range(6):
            scale = max(abs(p[k]), 1.0)
            h = 1e-6 * scale
            up, dn = p.copy(), p.copy()
            up[k] += h
            dn[k] -= h
            if dn[k] <= 0 and k >= 4:  # keep widths positive in the stencil
                dn[k] = p[k]
                J[:, k] = (model_eval(up) - model_eval(dn)) / h
            else:
                J[:, k] = (model_eval(up) - model_eval(dn)) / (2 * h)
        return J

    span = float(x[-1] - x[0])
    lo_c, hi_c = float(x[0]), float(x[-1])
    step_floor = 2.0 * float(np.median(np.diff(x)))

    def project(p):
        # nonnegative line amplitudes, widths between twice the grid step
        # and twice the span, centers inside the scanned window (an
        # off-window spike is just a disguised sloped background); trial
        # steps are projected onto this box so a parameter pinned at a bound
        # cannot stall the rest
        q = p.copy()
        q[0] = max(q[0], 0.0)
        q[1] = max(q[1], 0.0)
        q[2] = min(max(q[2], lo_c), hi_c)
        q[3] = min(max(q[3], lo_c), hi_c)
        q[4] = min(max(q[4], step_floor), 2 * span)
        q[5] = min(max(q[5], step_floor), 2 * span)
        return q

    theta = project(theta)
    chi = chisq(theta)
    lam = 1e-3
    converged = False
    for it in range(max_iter):
        J = jacobian(theta)
        r = y - model_eval(theta)
        jw = J * w[:, None]
        normal = jw.T @ J
        grad = jw.T @ r
        if it == 0:
            # singular to machine precision (e.g. duplicate components);
            # merely ill-conditioned starts are left to the damping
            if not np.all(np.isfinite(normal)) or np.linalg.cond(normal) > 1e15:
                raise ValueError("unidentifiable model")
        # Marquardt scaling with a floored diagonal: a dead component must
        # not leave the damped system singular
        damp = np.maximum(np.diag(normal), 1e-10 * np.diag(normal).max() + 1e-300)
        stepped = False
        for _ in range(25):
            try:
                delta = np.linalg.solve(normal + lam * np.diag(damp), grad)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = project(theta + delta)
            moved = trial - theta
            chi_trial = chisq(trial)
            if chi_trial <= chi + 1e-12:
                rel = np.max(np.abs(moved) / np.maximum(np.abs(theta), 1.0))
                theta, chi = trial, chi_trial
                lam = max(lam / 3.0, 1e-12)
                stepped = True
                if rel < 1e-8:
                    converged = True
                break
            lam *= 10
        if converged or not stepped:
            break

    J = jacobian(theta)
    normal = (J * w[:, None]).T @ J
    try:
        cov = np.linalg.inv(normal)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(normal)

    if theta[2] > theta[3]:  # report components center-ascending
        perm = [1, 0, 3, 2, 5, 4]
        theta = theta[perm]
        cov = cov[np.ix_(perm, perm)]
    return LineFitResult(
        model=model,
        amplitudes=(theta[0], theta[1]),
        centers=(theta[2], theta[3]),
        widths=(theta[4], theta[5]),
        covariance=cov,
        chi_square=chi,
        converged=converged,
    )


def fit_scan_series(records, model: LineModel, seed_centers, pulse=None):
    """Fit a field-ordered sequence of scans with peak tracking.

    The first fit is seeded at the two given line centers (the configured
    hyperfine offsets) with data-driven amplitudes; every subsequent fit is
    seeded from the previous solution, which keeps weak components locked to
    their lines as the spectrum shifts with field.
    """
    c1, c2 = (float(c) for c in seed_centers)
    fits = []
    guess = None
    for rec in records:
        if guess is None:
            x, y = rec.detunings, rec.counts
            step = float(np.median(np.diff(x)))
            base = float(np.median(y))
            amps = []
            for c in (c1, c2):
                sel = np.abs(x - c) <= max(5 * step, 5.0)
                amps.append(max(float(y[sel].max()) - base, 1.0))
            guess = np.array([amps[0], amps[1], c1, c2, 15.0, 15.0])
        fit = fit_spectrum(rec, model, initial_guess=guess, pulse=pulse)
        guess = np.array([*fit.amplitudes, *fit.centers, *fit.widths])
        # a component fitted to zero amplitude would seed the next fit with
        # exactly degenerate Jacobian columns; keep a one-count floor
        guess[0] = max(guess[0], 1.0)
        guess[1] = max(guess[1], 1.0)
        fits.append(fit)
    return fits


def track_line_centers(fits, start_center):
    """Follow one line component through a field-ordered fit sequence.

    Starts from the component nearest start_center (the line's hyperfine
    offset at zero field) and then follows continuity: each scan contributes
    the component nearest the previously tracked center.  Components with
    negligible amplitude (under 2% of the stronger one) are skipped when an
    alternative exists, so a background-absorbing spare component is never
    mistaken for the line.  Returns [(center, center_error), ...].
    """
    target = float(start_center)
    out = []
    for fit in fits:
        amps = np.asarray(fit.amplitudes, dtype=float)
        centers = np.asarray(fit.centers, dtype=float)
        errors = fit.center_errors
        if amps.max() > 0:
            usable = np.where(amps >= 0.02 * amps.max())[0]
        else:
            usable = np.arange(len(centers))
        idx = int(usable[np.argmin(np.abs(centers[usable] - target))])
        out.append((float(centers[idx]), float(errors[idx])))
        target = float(centers[idx])
    return out


def fit_parabola(points) -> StarkCoefficient:
    """Weighted least squares of |shift| = p E^2 through the origin.

    points: iterable of (field kV/cm, frequency shift MHz, sigma MHz).
    Zero-field rows are accepted and carry no lever arm.  The sign of the
    shifts is discarded; p matches the magnitude convention of the quadratic
    sensitivity.
    """
    pts = [(float(e), float(df), float(s)) for e, df, s in points]
    if not pts:
        raise ValueError("no field lever arm")
    if all(s == 0.0 for _, _, s in pts):
        weights = [1.0] * len(pts)
    elif any(s <= 0.0 for e, _, s in pts if e != 0.0):
        raise ValueError("nonzero-field points need sigma > 0")
    else:
        weights = [1.0 / (s * s) if s > 0 else 0.0 for _, _, s in pts]
    s4 = sum(w * e**4 for (e, _, _), w in zip(pts, weights))
    if s4 == 0.0:
        raise ValueError("no field lever arm")
    s2 = sum(w * e**2 * abs(df) for (e, df, _), w in zip(pts, weights))
    p = s2 / s4
    if all(s == 0.0 for _, _, s in pts):
        sigma_p = 0.0
    else:
        sigma_p = math.sqrt(1.0 / s4)
    return StarkCoefficient(p, sigma_p)
