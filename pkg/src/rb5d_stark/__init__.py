"""Stark-spectroscopy toolkit for the Rb 5D scalar and tensor
polarizabilities: angular-momentum transition strengths, Stark-shift
arithmetic, synthetic photon-count spectra with line fitting, the linear
inversion to (alpha_S, alpha_T) with its error budget, optical-pumping
dynamics in a magnetic field, and the capacitor-field electrostatics."""

__version__ = "1.0.0"

from .angular import (HalfInteger, HyperfineSublevel, Polarization,
                      excitation_probabilities, tensor_factor_P,
                      transition_strength, wigner_3j, wigner_6j)
from .stark import (REFERENCE, FieldPoint, PolarizabilityPair, PolUnits,
                    StarkCoefficient, convert_units, level_shift,
                    predicted_p, transition_shift)
from .spectra_fit import (LineModel, SpectrumRecord, TransitionConfig,
                          fit_parabola, fit_spectrum, line_profile,
                          published_config, pulse_spectrum, synthesize_spectrum)
from .extraction import (PUBLISHED_BUDGET, ExtractionResult, MeasurementEquation,
                         UncertaintyBudget, build_equation,
                         propagate_to_alpha, quadrature_budget,
                         solve_polarizabilities)
from .pumping import (MagneticField, PumpDrive, PumpState, precess, pump_step,
                      rotate_to_field_basis, simulate_pumping)
from .field import CapacitorGeometry, FieldMap, solve_laplace, \
    tilt_sensitivity, uniformity

__all__ = [
    "HalfInteger", "HyperfineSublevel", "Polarization",
    "excitation_probabilities", "tensor_factor_P", "transition_strength",
    "wigner_3j", "wigner_6j",
    "REFERENCE", "FieldPoint", "PolarizabilityPair", "PolUnits",
    "StarkCoefficient", "convert_units", "level_shift", "predicted_p",
    "transition_shift",
    "LineModel", "SpectrumRecord", "TransitionConfig", "fit_parabola",
    "fit_spectrum", "line_profile", "published_config", "pulse_spectrum",
    "synthesize_spectrum",
    "PUBLISHED_BUDGET", "ExtractionResult", "MeasurementEquation",
    "UncertaintyBudget", "build_equation", "propagate_to_alpha",
    "quadrature_budget", "solve_polarizabilities",
    "MagneticField", "PumpDrive", "PumpState", "precess", "pump_step",
    "rotate_to_field_basis", "simulate_pumping",
    "CapacitorGeometry", "FieldMap", "solve_laplace", "tilt_sensitivity",
    "uniformity",
]
