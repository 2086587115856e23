"""Static Stark-shift arithmetic for the Rb 5P3/2 -> 5D transitions.

A level with scalar polarizability alpha_S and tensor polarizability alpha_T
shifts by Delta E = -(1/2)(alpha_S + alpha_T P) Ez^2; expressed in Hz through
the unit conversion alpha[Hz (V/cm)^-2] = 2.482e-4 alpha[a0^3].  The
conversion constant is kept at exactly the four significant figures used in
the published-value arithmetic this package reproduces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from .angular import HyperfineSublevel, tensor_factor_P

__all__ = [
    "PolUnits",
    "AU_TO_HZ_PER_VCM_SQ",
    "PolarizabilityPair",
    "FieldPoint",
    "StarkCoefficient",
    "ReferenceData",
    "REFERENCE",
    "convert_units",
    "level_shift",
    "transition_shift",
    "predicted_p",
]

AU_TO_HZ_PER_VCM_SQ = 2.482e-4


class PolUnits(Enum):
    ATOMIC_UNITS = "atomic_units"
    HZ_PER_VCM_SQ = "hz_per_Vcm_sq"


def convert_units(value: float, current: PolUnits, target: PolUnits) -> float:
    """Rescale a polarizability between atomic units and Hz (V/cm)^-2."""
    if current == target:
        return value
    if current == PolUnits.ATOMIC_UNITS:
        return value * AU_TO_HZ_PER_VCM_SQ
    return value / AU_TO_HZ_PER_VCM_SQ


@dataclass(frozen=True)
class PolarizabilityPair:
    """Scalar and tensor polarizability of one fine-structure level."""

    alpha_s: float
    alpha_t: float
    units: PolUnits = PolUnits.ATOMIC_UNITS

    def to(self, target: PolUnits) -> "PolarizabilityPair":
        return PolarizabilityPair(
            convert_units(self.alpha_s, self.units, target),
            convert_units(self.alpha_t, self.units, target),
            target,
        )


@dataclass(frozen=True)
class FieldPoint:
    """Static electric field magnitude along the quantization axis, V/cm."""

    e_z_v_per_cm: float

    def __post_init__(self):
        if self.e_z_v_per_cm < 0:
            raise ValueError("field magnitude must be >= 0")

    @classmethod
    def from_kv_per_cm(cls, value: float) -> "FieldPoint":
        return cls(value * 1e3)

    @property
    def kv_per_cm(self) -> float:
        return self.e_z_v_per_cm / 1e3


@dataclass(frozen=True)
class StarkCoefficient:
    """Quadratic field sensitivity p and its one-sigma uncertainty,
    both in MHz (kV/cm)^-2."""

    p: float
    sigma_p: float = 0.0

    def __post_init__(self):
        if self.sigma_p < 0:
            raise ValueError("sigma_p must be >= 0")


def level_shift(pol: PolarizabilityPair, state: HyperfineSublevel,
                field: FieldPoint) -> float:
    """Stark shift of one sublevel in Hz: -(1/2)(alpha_S + alpha_T P) Ez^2."""
    pair = pol.to(PolUnits.HZ_PER_VCM_SQ)
    p_factor = tensor_factor_P(state)
    return -0.5 * (pair.alpha_s + pair.alpha_t * p_factor) * field.e_z_v_per_cm**2


def transition_shift(ground, excited, field: FieldPoint) -> float:
    """Shift of the transition frequency in Hz between two (pair, state) tuples.

    Equal to level_shift(excited) - level_shift(ground); negative (red) when
    the excited differential polarizability exceeds the ground one.
    """
    g_pair, g_state = ground
    e_pair, e_state = excited
    gp = g_pair.to(PolUnits.HZ_PER_VCM_SQ)
    ep = e_pair.to(PolUnits.HZ_PER_VCM_SQ)
    diff = (ep.alpha_s - gp.alpha_s
            + ep.alpha_t * tensor_factor_P(e_state)
            - gp.alpha_t * tensor_factor_P(g_state))
    return -0.5 * diff * field.e_z_v_per_cm**2


def predicted_p(ground, excited) -> StarkCoefficient:
    """Magnitude of the quadratic sensitivity, MHz (kV/cm)^-2.

    Defined as |Delta f(E)| / E^2; the signed shift remains available from
    transition_shift.
    """
    shift_hz = transition_shift(ground, excited, FieldPoint.from_kv_per_cm(1.0))
    return StarkCoefficient(abs(shift_hz) / 1e6)


@dataclass(frozen=True)
class ReferenceData:
    """Published polarizability values used as fixed inputs and comparisons.

    ground_5p32 is the measured 5P3/2 pair with uncertainties; theory_5d
    holds the two model calculations per 5D level; measured_5d the
    measured 5D values with one-sigma uncertainties.  All in atomic units.
    """

    ground_5p32: PolarizabilityPair
    ground_5p32_sigma: tuple
    theory_5d: dict
    measured_5d: dict
    measured_5d_sigma: dict

    def as_dict(self) -> dict:
        def pair(p):
            return {"alpha_s": p.alpha_s, "alpha_t": p.alpha_t, "units": p.units.value}

        return {
            "ground_5p32": pair(self.ground_5p32),
            "ground_5p32_sigma": list(self.ground_5p32_sigma),
            "theory_5d": {k: {src: pair(p) for src, p in v.items()}
                              for k, v in self.theory_5d.items()},
            "measured_5d": {k: pair(p) for k, p in self.measured_5d.items()},
            "measured_5d_sigma": {k: list(v) for k, v in
                                      self.measured_5d_sigma.items()},
        }

    def export(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


_AU = PolUnits.ATOMIC_UNITS

REFERENCE = ReferenceData(
    ground_5p32=PolarizabilityPair(859.0, -163.0, _AU),
    ground_5p32_sigma=(7.0, 3.0),
    theory_5d={
        "5D3/2": {
            "model_potential": PolarizabilityPair(21110.0, -2871.0, _AU),
            "perturbation_sum": PolarizabilityPair(16600.0, -1060.0, _AU),
        },
        "5D5/2": {
            "model_potential": PolarizabilityPair(20670.0, -3387.0, _AU),
            "perturbation_sum": PolarizabilityPair(16200.0, -909.0, _AU),
        },
    },
    measured_5d={
        "5D3/2": PolarizabilityPair(18400.0, -750.0, _AU),
        "5D5/2": PolarizabilityPair(18600.0, -1440.0, _AU),
    },
    measured_5d_sigma={
        "5D3/2": (75.0, 30.0),
        "5D5/2": (76.0, 60.0),
    },
)
