from fractions import Fraction

import pytest

from rb5d_stark.angular import HyperfineSublevel
from rb5d_stark.stark import (AU_TO_HZ_PER_VCM_SQ, REFERENCE, FieldPoint,
                              PolUnits, PolarizabilityPair, StarkCoefficient,
                              convert_units, level_shift, predicted_p,
                              transition_shift)

J32 = Fraction(3, 2)
J52 = Fraction(5, 2)
I = Fraction(3, 2)

GROUND = (REFERENCE.ground_5p32, HyperfineSublevel(J32, I, 3, 3))
D52_STRETCHED = HyperfineSublevel(J52, I, 4, 4)
D32_22 = HyperfineSublevel(J32, I, 2, 2)


class TestConvertUnits:
    def test_one_atomic_unit(self):
        assert convert_units(1.0, PolUnits.ATOMIC_UNITS,
                             PolUnits.HZ_PER_VCM_SQ) == 2.482e-4

    def test_zero(self):
        assert convert_units(0.0, PolUnits.ATOMIC_UNITS,
                             PolUnits.HZ_PER_VCM_SQ) == 0.0

    def test_windholz_scalar(self):
        # 859 * 2.482e-4 = 0.2132038
        got = convert_units(859.0, PolUnits.ATOMIC_UNITS,
                            PolUnits.HZ_PER_VCM_SQ)
        assert got == pytest.approx(0.21321, abs=1e-5)

    def test_idempotent_on_same_units(self):
        assert convert_units(42.0, PolUnits.ATOMIC_UNITS,
                             PolUnits.ATOMIC_UNITS) == 42.0

    def test_round_trip_identity(self):
        for value in (1.0, -163.0, 18600.0, 0.3127):
            back = convert_units(
                convert_units(value, PolUnits.ATOMIC_UNITS,
                              PolUnits.HZ_PER_VCM_SQ),
                PolUnits.HZ_PER_VCM_SQ, PolUnits.ATOMIC_UNITS)
            assert back == pytest.approx(value, rel=1e-12)

    def test_pair_conversion(self):
        pair = REFERENCE.measured_5d["5D5/2"].to(PolUnits.HZ_PER_VCM_SQ)
        assert pair.alpha_s == pytest.approx(18600 * AU_TO_HZ_PER_VCM_SQ)
        assert pair.units == PolUnits.HZ_PER_VCM_SQ


class TestLevelShift:
    def test_zero_field(self):
        assert level_shift(REFERENCE.measured_5d["5D5/2"], D52_STRETCHED,
                           FieldPoint(0.0)) == 0.0

    def test_measured_5d_stretched_value(self):
        # -(1/2)(18600 - 1440) * 2.482e-4 * (1e3)^2 Hz = -2.129556 MHz
        shift = level_shift(REFERENCE.measured_5d["5D5/2"], D52_STRETCHED,
                            FieldPoint.from_kv_per_cm(1.0))
        expect = -0.5 * (18600.0 - 1440.0) * AU_TO_HZ_PER_VCM_SQ * 1e6
        assert shift == pytest.approx(expect, rel=1e-12)
        assert shift == pytest.approx(-2.129556e6, rel=1e-6)

    def test_quadratic_scaling(self):
        pair = REFERENCE.measured_5d["5D3/2"]
        s1 = level_shift(pair, D32_22, FieldPoint.from_kv_per_cm(1.0))
        s2 = level_shift(pair, D32_22, FieldPoint.from_kv_per_cm(2.0))
        assert s2 == pytest.approx(4.0 * s1, rel=1e-12)

    def test_units_do_not_matter(self):
        pair = REFERENCE.measured_5d["5D5/2"]
        a = level_shift(pair, D52_STRETCHED, FieldPoint(1500.0))
        b = level_shift(pair.to(PolUnits.HZ_PER_VCM_SQ), D52_STRETCHED,
                        FieldPoint(1500.0))
        assert a == pytest.approx(b, rel=1e-12)


class TestTransitionShift:
    def test_identical_levels_cancel(self):
        pair = PolarizabilityPair(500.0, -20.0)
        state = D32_22
        assert transition_shift((pair, state), (pair, state),
                                FieldPoint(2000.0)) == 0.0

    def test_published_line_at_2p5_kv(self):
        # -2.043184 MHz/(kV/cm)^2 * 6.25 = -12.7699 MHz
        shift = transition_shift(GROUND,
                                 (REFERENCE.measured_5d["5D5/2"],
                                  D52_STRETCHED),
                                 FieldPoint.from_kv_per_cm(2.5))
        assert shift == pytest.approx(-12.770e6, rel=2e-4)
        assert shift < 0  # red shift for positive differential polarizability

    def test_equals_level_shift_difference(self):
        field = FieldPoint.from_kv_per_cm(1.7)
        for label, state in (("5D5/2", D52_STRETCHED), ("5D3/2", D32_22)):
            pair = REFERENCE.measured_5d[label]
            direct = transition_shift(GROUND, (pair, state), field)
            via_levels = (level_shift(pair, state, field)
                          - level_shift(*GROUND, field))
            assert direct == pytest.approx(via_levels, rel=1e-12)


class TestPredictedP:
    def test_d52_stretched_line(self):
        coeff = predicted_p(GROUND, (REFERENCE.measured_5d["5D5/2"],
                                     D52_STRETCHED))
        assert coeff.p == pytest.approx(2.0432, abs=5e-4)

    def test_d32_f2_line(self):
        coeff = predicted_p(GROUND, (REFERENCE.measured_5d["5D3/2"],
                                     D32_22))
        assert coeff.p == pytest.approx(2.197, abs=5e-4)

    def test_identical_levels_give_zero(self):
        assert predicted_p(GROUND, GROUND).p == 0.0

    def test_invariant_under_input_units(self):
        pair_hz = REFERENCE.measured_5d["5D5/2"].to(PolUnits.HZ_PER_VCM_SQ)
        ground_hz = (GROUND[0].to(PolUnits.HZ_PER_VCM_SQ), GROUND[1])
        a = predicted_p(GROUND, (REFERENCE.measured_5d["5D5/2"],
                                 D52_STRETCHED)).p
        b = predicted_p(ground_hz, (pair_hz, D52_STRETCHED)).p
        assert a == pytest.approx(b, rel=1e-12)


class TestReferenceData:
    def test_published_constants(self):
        assert REFERENCE.ground_5p32.alpha_s == 859.0
        assert REFERENCE.ground_5p32.alpha_t == -163.0
        assert REFERENCE.measured_5d["5D5/2"].alpha_t == -1440.0
        assert REFERENCE.measured_5d_sigma["5D3/2"] == (75.0, 30.0)
        assert REFERENCE.theory_5d["5D5/2"]["model_potential"].alpha_s \
            == 20670.0

    def test_export(self, tmp_path):
        path = tmp_path / "reference.json"
        REFERENCE.export(path)
        import json
        with open(path) as fh:
            data = json.load(fh)
        assert data["measured_5d"]["5D5/2"]["alpha_s"] == 18600.0
        assert data["ground_5p32"]["units"] == "atomic_units"


class TestValidation:
    def test_negative_field_rejected(self):
        with pytest.raises(ValueError):
            FieldPoint(-1.0)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            StarkCoefficient(2.0, -0.1)
