import math
from fractions import Fraction

import numpy as np
import pytest

from rb5d_stark.angular import HyperfineSublevel, Polarization
from rb5d_stark.spectra_fit import (GROUND_STRETCHED, LineModel, PulseProfile,
                                    SpectrumRecord, TransitionConfig,
                                    fit_parabola, fit_spectrum, gaussian,
                                    line_profile, lorentzian, published_config,
                                    pulse_spectrum, synthesize_spectrum,
                                    load_pulse_profile)
from rb5d_stark.stark import REFERENCE, FieldPoint, transition_shift

J52 = Fraction(5, 2)
I = Fraction(3, 2)

GROUND_ALPHA = REFERENCE.ground_5p32
D52_ALPHA = REFERENCE.measured_5d["5D5/2"]
D32_ALPHA = REFERENCE.measured_5d["5D3/2"]

DELTA_PULSE = PulseProfile(lambda f: np.where(np.abs(f) < 1e-9, 1.0, 0.0),
                           "delta", support_hint_mhz=1.0)


def grid(lo=-70.0, hi=180.0, step=0.75):
    return np.arange(lo, hi + 1e-9, step)


class TestPulseSpectrum:
    def test_fwhm_of_50ns_pulse(self):
        pulse = pulse_spectrum(50.0)
        f = np.linspace(0, 30, 30001)
        dens = pulse(f)
        half = dens[0] / 2
        fwhm = 2 * f[np.argmin(np.abs(dens[: 15000] - half))]
        assert fwhm == pytest.approx(0.8859 / 0.05, abs=0.05)

    def test_long_pulse_is_narrow(self):
        wide = pulse_spectrum(50.0)
        narrow = pulse_spectrum(5000.0)
        assert narrow(0.0) > 50 * wide(0.0)

    def test_unit_area(self):
        pulse = pulse_spectrum(50.0)
        f = np.linspace(-2000, 2000, 400001)
        area = np.trapezoid(pulse(f), f)
        assert area == pytest.approx(1.0, abs=2e-3)

    def test_invalid_duration(self):
        with pytest.raises(ValueError):
            pulse_spectrum(0.0)

    def test_tabulated_profile_round_trip(self, tmp_path):
        path = tmp_path / "pulse.csv"
        f = np.linspace(-60, 60, 241)
        orig = pulse_spectrum(50.0)
        dens = orig(f)
        with open(path, "w") as fh:
            fh.write("freq_mhz,density\n")
            for fi, di in zip(f, dens):
                fh.write(f"{fi},{di}\n")
        loaded = load_pulse_profile(path)
        # renormalized over the table span, so compare shapes not levels
        assert loaded(5.0) / loaded(0.0) == pytest.approx(
            orig(5.0) / orig(0.0), rel=1e-6)
        assert loaded(100.0) == 0.0


class TestLineProfile:
    def test_unit_area_lorentzian_peak(self):
        gamma = 12.0
        assert lorentzian(0.0, 0.0, gamma) == pytest.approx(2 / (math.pi * gamma),
                                                            rel=1e-12)

    def test_gaussian_half_max_at_half_fwhm(self):
        w = 14.0
        peak = gaussian(0.0, 0.0, w)
        assert gaussian(w / 2, 0.0, w) == pytest.approx(peak / 2, rel=1e-12)
        assert gaussian(-w / 2, 0.0, w) == pytest.approx(peak / 2, rel=1e-12)

    def test_amplitudes_are_peak_heights(self):
        params = (100.0, 40.0, -30.0, 60.0, 8.0, 8.0)
        x = np.array([-30.0, 60.0])
        for model in (LineModel.GAUSS_SUM, LineModel.LORENTZ_SUM):
            vals = line_profile(model, params, x)
            assert vals[0] == pytest.approx(100.0, rel=2e-2)
            assert vals[1] == pytest.approx(40.0, rel=2e-2)

    def test_convolved_with_delta_pulse_equals_lorentz_sum(self):
        params = (1500.0, 600.0, -10.0, 95.0, 18.0, 22.0)
        x = grid(-80, 160, 0.5)
        direct = line_profile(LineModel.LORENTZ_SUM, params, x)
        conv = line_profile(LineModel.LORENTZ_CONVOLVED, params, x,
                            pulse=DELTA_PULSE)
        assert np.max(np.abs(conv - direct) / np.max(direct)) < 1e-6

    def test_degenerate_width_rejected(self):
        with pytest.raises(ValueError, match="degenerate width"):
            line_profile(LineModel.LORENTZ_SUM,
                         (1.0, 1.0, 0.0, 50.0, -3.0, 10.0), 0.0)

    def test_convolution_broadens(self):
        params = (1000.0, 0.0, 0.0, 50.0, 5.9, 5.9)
        x = grid(-60, 60, 0.25)
        plain = line_profile(LineModel.LORENTZ_SUM, params, x)
        conv = line_profile(LineModel.LORENTZ_CONVOLVED, params, x)
        assert conv.max() < plain.max()


class TestSynthesizeSpectrum:
    def test_peak_counts_near_2000(self):
        config = published_config("5D5/2", Polarization.SIGMA_PLUS)
        rec = synthesize_spectrum(config, FieldPoint(0.0), grid(),
                                  GROUND_ALPHA, D52_ALPHA, seed=None)
        # max expected = (peak_rate + background) * dwell
        assert rec.counts.max() == pytest.approx(
            (config.peak_rate_cps + config.background_rate_cps) * 0.1, rel=1e-9)
        noisy = synthesize_spectrum(config, FieldPoint(0.0), grid(),
                                    GROUND_ALPHA, D52_ALPHA, seed=5)
        assert abs(noisy.counts.max() - 2010) < 6 * math.sqrt(2010)

    def test_zero_population_gives_background(self):
        config = TransitionConfig(ground_populations={GROUND_STRETCHED: 0.0},
                                  background_rate_cps=50.0)
        rec = synthesize_spectrum(config, FieldPoint(0.0), grid(),
                                  GROUND_ALPHA, D52_ALPHA, seed=None)
        assert np.allclose(rec.counts, 50.0 * 0.1)

    def test_seed_determinism(self):
        config = published_config("5D5/2", Polarization.SIGMA_PLUS)
        a = synthesize_spectrum(config, FieldPoint(0.0), grid(),
                                GROUND_ALPHA, D52_ALPHA, seed=42)
        b = synthesize_spectrum(config, FieldPoint(0.0), grid(),
                                GROUND_ALPHA, D52_ALPHA, seed=42)
        assert np.array_equal(a.counts, b.counts)
        c = synthesize_spectrum(config, FieldPoint(0.0), grid(),
                                GROUND_ALPHA, D52_ALPHA, seed=43)
        assert not np.array_equal(a.counts, c.counts)

    def test_field_moves_both_hyperfine_peaks(self):
        # sigma-: both components carry comparable weight, so each peak can
        # be tracked; each moves by its own weighted sensitivity
        config = published_config("5D5/2", Polarization.SIGMA_MINUS)
        field = FieldPoint.from_kv_per_cm(2.5)
        rec0 = synthesize_spectrum(config, FieldPoint(0.0), grid(step=0.25),
                                   GROUND_ALPHA, D52_ALPHA, seed=None)
        rec1 = synthesize_spectrum(config, field, grid(step=0.25),
                                   GROUND_ALPHA, D52_ALPHA, seed=None)
        x = rec0.detunings
        from rb5d_stark.angular import excitation_probabilities
        probs = excitation_probabilities(config)
        for f_line, offset in ((4, 0.0), (3, 100.0)):
            weights = {s: p for s, p in probs.items()
                       if s.f.as_fraction() == f_line}
            total = sum(weights.values())
            expect = sum(
                p * transition_shift((GROUND_ALPHA, GROUND_STRETCHED),
                                     (D52_ALPHA, s), field)
                for s, p in weights.items()) / total / 1e6
            sel = (x > offset - 40) & (x < offset + 40)
            peak0 = x[sel][np.argmax(rec0.counts[sel])]
            peak1 = x[sel][np.argmax(rec1.counts[sel])]
            assert peak0 == pytest.approx(offset, abs=0.3)
            assert peak1 - peak0 == pytest.approx(expect, abs=0.6)

    def test_empty_grid_rejected(self):
        config = published_config()
        with pytest.raises(ValueError):
            synthesize_spectrum(config, FieldPoint(0.0), [], GROUND_ALPHA,
                                D52_ALPHA)


class TestSpectrumRecord:
    def test_csv_round_trip(self, tmp_path):
        rec = SpectrumRecord(np.array([0.0, 1.0, 2.0]),
                             np.array([5.0, 7.0, 3.0]), 0.1)
        path = tmp_path / "spec.csv"
        rec.to_csv(path)
        back = SpectrumRecord.from_csv(path)
        assert np.allclose(back.detunings, rec.detunings)
        assert np.allclose(back.counts, rec.counts)
        assert back.dwell_time_s == 0.1

    def test_validation(self):
        with pytest.raises(ValueError):
            SpectrumRecord(np.array([0.0, 0.0]), np.array([1.0, 1.0]), 0.1)
        with pytest.raises(ValueError):
            SpectrumRecord(np.array([0.0, 1.0]), np.array([1.0, -1.0]), 0.1)


def _noiseless_record(params, model=LineModel.LORENTZ_SUM, step=0.6):
    x = grid(-80, 170, step)
    y = line_profile(model, params, x)
    return SpectrumRecord(x, y, 0.1)


class TestFitSpectrum:
    TRUTH = (1900.0, 700.0, -12.5, 96.0, 21.0, 19.0)

    def test_noiseless_recovery(self):
        rec = _noiseless_record(self.TRUTH)
        fit = fit_spectrum(rec, LineModel.LORENTZ_SUM)
        got = (*fit.amplitudes, *fit.centers, *fit.widths)
        expect = (self.TRUTH[0], self.TRUTH[1], self.TRUTH[2], self.TRUTH[3],
                  self.TRUTH[4], self.TRUTH[5])
        for g, e in zip(got, expect):
            assert g == pytest.approx(e, rel=1e-6)
        assert fit.converged

    def test_fit_synthesize_fit_fixed_point(self):
        rec = _noiseless_record(self.TRUTH)
        first = fit_spectrum(rec, LineModel.LORENTZ_SUM)
        params = (*first.amplitudes, *first.centers, *first.widths)
        rec2 = _noiseless_record(params)
        second = fit_spectrum(rec2, LineModel.LORENTZ_SUM)
        for a, b in zip(params, (*second.amplitudes, *second.centers,
                                 *second.widths)):
            assert b == pytest.approx(a, rel=1e-6)

    def test_monte_carlo_center_error(self):
        from rb5d_stark.spectra_fit import fit_scan_series
        config = published_config("5D5/2", Polarization.SIGMA_PLUS)
        centers = []
        for seed in range(50):
            rec = synthesize_spectrum(config, FieldPoint(0.0), grid(),
                                      GROUND_ALPHA, D52_ALPHA, seed=seed)
            fit = fit_scan_series([rec], LineModel.LORENTZ_CONVOLVED,
                                  seed_centers=(0.0, 100.0))[0]
            # track the dominant (F=4) component
            centers.append(fit.centers[int(np.argmax(fit.amplitudes))])
        std = float(np.std(centers))
        assert std < 0.3  # MHz, at the published count rate

    def test_duplicate_components_unidentifiable(self):
        rec = _noiseless_record(self.TRUTH)
        with pytest.raises(ValueError, match="unidentifiable model"):
            fit_spectrum(rec, LineModel.LORENTZ_SUM,
                         initial_guess=(500.0, 500.0, 10.0, 10.0, 15.0, 15.0))

    def test_shift_equivariance(self):
        config = published_config("5D5/2", Polarization.SIGMA_PLUS)
        rec = synthesize_spectrum(config, FieldPoint(0.0), grid(),
                                  GROUND_ALPHA, D52_ALPHA, seed=3)
        fit0 = fit_spectrum(rec, LineModel.LORENTZ_SUM)
        delta = 37.25
        shifted = SpectrumRecord(rec.detunings + delta, rec.counts, 0.1)
        fit1 = fit_spectrum(shifted, LineModel.LORENTZ_SUM)
        for c0, c1 in zip(fit0.centers, fit1.centers):
            assert c1 - c0 == pytest.approx(delta, abs=1e-6)
        for w0, w1 in zip(fit0.widths, fit1.widths):
            assert w1 == pytest.approx(w0, abs=1e-6)
        for a0, a1 in zip(fit0.amplitudes, fit1.amplitudes):
            assert a1 == pytest.approx(a0, rel=1e-6)

    def test_centers_reported_ascending(self):
        params = (700.0, 1900.0, 96.0, -12.5, 19.0, 21.0)
        rec = _noiseless_record(params)
        fit = fit_spectrum(rec, LineModel.LORENTZ_SUM)
        assert fit.centers[0] < fit.centers[1]

    def test_too_few_points(self):
        rec = SpectrumRecord(np.arange(8.0), np.ones(8), 0.1)
        with pytest.raises(ValueError):
            fit_spectrum(rec, LineModel.LORENTZ_SUM)

    def test_covariance_shape_and_symmetry(self):
        rec = _noiseless_record(self.TRUTH)
        fit = fit_spectrum(rec, LineModel.LORENTZ_SUM)
        assert fit.covariance.shape == (6, 6)
        assert np.allclose(fit.covariance, fit.covariance.T, rtol=1e-8)
        assert np.all(np.linalg.eigvalsh(fit.covariance) > -1e-12)


class TestWeightedCenter:
    def test_unresolved_sublevels_give_weighted_mean(self):
        # 5D5/2 F=3 under sigma-: (3,3) w 0.004 at P=0.55 and (3,2) w 0.032
        # at P=0; both inside one line component
        config = published_config("5D5/2", Polarization.SIGMA_MINUS)
        field = FieldPoint.from_kv_per_cm(2.5)
        s33 = HyperfineSublevel(J52, I, 3, 3)
        s32 = HyperfineSublevel(J52, I, 3, 2)
        sh33 = transition_shift((GROUND_ALPHA, GROUND_STRETCHED),
                                (D52_ALPHA, s33), field) / 1e6
        sh32 = transition_shift((GROUND_ALPHA, GROUND_STRETCHED),
                                (D52_ALPHA, s32), field) / 1e6
        expect = 100.0 + (0.004 * sh33 + 0.032 * sh32) / 0.036
        centers = []
        for seed in range(16):
            rec = synthesize_spectrum(config, field, grid(), GROUND_ALPHA,
                                      D52_ALPHA, seed=seed)
            fit = fit_spectrum(rec, LineModel.LORENTZ_CONVOLVED)
            idx = int(np.argmin([abs(c - expect) for c in fit.centers]))
            centers.append(fit.centers[idx])
        mean = float(np.mean(centers))
        stderr = float(np.std(centers) / math.sqrt(len(centers)))
        assert abs(mean - expect) < max(4 * stderr, 0.1)


class TestFitParabola:
    def test_exact_recovery(self):
        p_true = 2.014
        pts = [(e, p_true * e**2, 0.0) for e in (0.0, 1.5, 2.0, 2.5)]
        coeff = fit_parabola(pts)
        assert coeff.p == pytest.approx(p_true, rel=1e-14)
        assert coeff.sigma_p == 0.0

    def test_single_nonzero_point(self):
        coeff = fit_parabola([(2.0, 8.0, 0.1)])
        assert coeff.p == pytest.approx(2.0, rel=1e-12)
        assert coeff.sigma_p == pytest.approx(0.1 / 4.0, rel=1e-12)

    def test_all_zero_field_is_error(self):
        with pytest.raises(ValueError, match="no field lever arm"):
            fit_parabola([(0.0, 0.0, 0.1), (0.0, 0.1, 0.1)])

    def test_published_precision_gives_sigma_p_8e3(self):
        # per-point sigma chosen so sqrt(sum E^4 / sigma^2)^-1 = 0.008
        fields = (1.5, 2.0, 2.5)
        s4 = sum(e**4 for e in fields)
        sigma_pt = 0.008 * math.sqrt(s4)
        pts = [(e, 2.014 * e**2, sigma_pt) for e in fields]
        coeff = fit_parabola(pts)
        assert coeff.sigma_p == pytest.approx(0.008, rel=1e-12)
        # Monte Carlo scatter of the estimator matches its quoted sigma
        rng = np.random.default_rng(0)
        draws = []
        for _ in range(400):
            noisy = [(e, 2.014 * e**2 + rng.normal(0, sigma_pt), sigma_pt)
                     for e in fields]
            draws.append(fit_parabola(noisy).p)
        assert np.std(draws) == pytest.approx(0.008, rel=0.25)

    def test_negative_shifts_use_magnitude(self):
        pts = [(e, -2.0 * e**2, 0.0) for e in (1.0, 2.0)]
        assert fit_parabola(pts).p == pytest.approx(2.0, rel=1e-12)
