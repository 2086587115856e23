"""Linear inversion from measured quadratic sensitivities p to the scalar and
tensor polarizabilities of each 5D level, with the systematic error budget.

Each fitted line contributes one equation

    2 p / k  +  alpha_S(g) + alpha_T(g) P_g  =  alpha_S(e) + alpha_T(e) <P>_w

with k the atomic-unit conversion and <P>_w the probability-weighted tensor
factor of the sublevels composing the line.  Two or more lines with distinct
<P>_w per fine-structure level determine (alpha_S, alpha_T) by weighted least
squares.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .angular import HyperfineSublevel, excitation_probabilities, tensor_factor_P
from .stark import (AU_TO_HZ_PER_VCM_SQ, PolUnits, PolarizabilityPair,
                    StarkCoefficient)

__all__ = [
    "MeasurementEquation",
    "UncertaintyBudget",
    "PUBLISHED_BUDGET",
    "LevelSolution",
    "ExtractionResult",
    "build_equation",
    "solve_polarizabilities",
    "quadrature_budget",
    "propagate_to_alpha",
    "equations_to_text",
    "equations_from_text",
]

# a.u. per MHz (kV/cm)^-2 through p = (k/2) alpha: d alpha / d p = 2 / k
_AU_PER_P = 2.0 / AU_TO_HZ_PER_VCM_SQ


@dataclass(frozen=True)
class MeasurementEquation:
    """One measured line: its p coefficient, the excited level it belongs to,
    the sublevel mixture composing the fitted line, and the ground state."""

    p: StarkCoefficient
    excited_level: str
    sublevel_weights: dict
    ground_alpha: PolarizabilityPair
    ground_state: HyperfineSublevel

    def __post_init__(self):
        total = sum(self.sublevel_weights.values())
        if total <= 0 or any(w < 0 for w in self.sublevel_weights.values()):
            raise ValueError("sublevel weights must be >= 0 with positive sum")

    @property
    def mean_tensor_factor(self) -> float:
        total = sum(self.sublevel_weights.values())
        return sum(w * tensor_factor_P(s)
                   for s, w in self.sublevel_weights.items()) / total

    def alpha_combination(self) -> float:
        """alpha_S(e) + alpha_T(e) <P>_w implied by this equation, a.u."""
        g = self.ground_alpha.to(PolUnits.ATOMIC_UNITS)
        ground_term = g.alpha_s + g.alpha_t * tensor_factor_P(self.ground_state)
        return _AU_PER_P * self.p.p + ground_term

    def alpha_combination_sigma(self) -> float:
        return _AU_PER_P * self.p.sigma_p


def build_equation(p: StarkCoefficient, excited_level: str, config, ground,
                   line_f, dominant_only=False) -> MeasurementEquation:
    """Assemble the equation for the line of hyperfine quantum number line_f.

    Sublevel weights are the normalized excitation probabilities of that
    manifold under the probe configuration; with dominant_only the single
    strongest sublevel carries all the weight.
    """
    ground_alpha, ground_state = ground
    if config.excited_level != excited_level:
        config = replace(config, excited_level=excited_level)
    probs = excitation_probabilities(config)
    want = Fraction(line_f)
    weights = {s: pr for s, pr in probs.items() if s.f.as_fraction() == want}
    total = sum(weights.values())
    if total <= 0:
        raise ValueError("line not excitable under config")
    if dominant_only:
        top = max(weights, key=weights.get)
        weights = {top: 1.0}
        total = 1.0
    weights = {s: w / total for s, w in weights.items()}
    return MeasurementEquation(p, excited_level, weights, ground_alpha, ground_state)


@dataclass(frozen=True)
class UncertaintyBudget:
    """Relative uncertainties (%) on the p coefficients, by named effect."""

    statistical: float = 0.0
    field_determination: float = 0.0
    residual_magnetic_field: float = 0.0
    line_shape_model: float = 0.0
    optical_pumping: float = 0.0
    probe_polarization: float = 0.0
    ac_stark: float = 0.0

    def __post_init__(self):
        if any(v < 0 for v in self.entries()):
            raise ValueError("budget entries must be >= 0")

    def entries(self):
        return (self.statistical, self.field_determination,
                self.residual_magnetic_field, self.line_shape_model,
                self.optical_pumping, self.probe_polarization, self.ac_stark)


PUBLISHED_BUDGET = UncertaintyBudget(
    statistical=0.2,
    field_determination=0.3,
    residual_magnetic_field=0.1,
    line_shape_model=0.03,
    optical_pumping=0.07,
    probe_polarization=0.1,
    ac_stark=0.1,
)


def quadrature_budget(budget: UncertaintyBudget) -> float:
    """Total relative uncertainty (%): root sum of squares of the entries."""
    entries = budget.entries()
    if any(not math.isfinite(v) for v in entries):
        raise ValueError("budget entries must be finite")
    return math.sqrt(sum(v * v for v in entries))


@dataclass(frozen=True)
class LevelSolution:
    """Solved polarizabilities of one level with statistical and final sigmas."""

    alpha: PolarizabilityPair
    sigma_statistical: tuple
    sigma_final: tuple
    condition_number: float
    residual_norm: float
    n_equations: int


@dataclass(frozen=True)
class ExtractionResult:
    levels: dict  # level tag -> LevelSolution

    def to_csv(self, path) -> None:
        """Table of alpha values and uncertainties, one row per component."""
        lines = ["polarizability,value_au,uncertainty_au"]
        for tag in sorted(self.levels):
            sol = self.levels[tag]
            lines.append(f"alpha_S({tag}),{sol.alpha.alpha_s:.6g},"
                         f"{sol.sigma_final[0]:.4g}")
            lines.append(f"alpha_T({tag}),{sol.alpha.alpha_t:.6g},"
                         f"{sol.sigma_final[1]:.4g}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


def solve_polarizabilities(equations) -> ExtractionResult:
    """Weighted least-squares solve of (alpha_S, alpha_T) per excited level.

    Requires, per level, at least two equations with distinct weighted tensor
    factors; otherwise the tensor component is unidentifiable.  Uncertainties
    here are statistical (from sigma_p); systematic propagation is applied by
    propagate_to_alpha.
    """
    groups = {}
    for eq in equations:
        groups.setdefault(eq.excited_level, []).append(eq)
    levels = {}
    for tag, eqs in groups.items():
        if len(eqs) < 2:
            raise ValueError(f"level {tag}: need >= 2 equations, got {len(eqs)}")
        pfac = np.array([eq.mean_tensor_factor for eq in eqs])
        if np.ptp(pfac) < 1e-12:
            raise ValueError(f"level {tag}: tensor component unidentifiable "
                             "(all equations share one weighted tensor factor)")
        b = np.array([eq.alpha_combination() for eq in eqs])
        sig = np.array([eq.alpha_combination_sigma() for eq in eqs])
        weights = np.ones_like(sig) if np.all(sig == 0) else 1.0 / sig**2
        a_mat = np.column_stack([np.ones_like(pfac), pfac])
        aw = a_mat * weights[:, None]
        normal = aw.T @ a_mat
        sol = np.linalg.solve(normal, aw.T @ b)
        cov = np.linalg.inv(normal)
        if np.all(sig == 0):
            stat = (0.0, 0.0)
        else:
            stat = (math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1]))
        resid = b - a_mat @ sol
        levels[tag] = LevelSolution(
            alpha=PolarizabilityPair(sol[0], sol[1], PolUnits.ATOMIC_UNITS),
            sigma_statistical=stat,
            sigma_final=stat,
            condition_number=float(np.linalg.cond(a_mat)),
            residual_norm=float(np.linalg.norm(resid)),
            n_equations=len(eqs),
        )
    return ExtractionResult(levels)


def propagate_to_alpha(result: ExtractionResult,
                       budget: UncertaintyBudget) -> ExtractionResult:
    """Map the total relative p-uncertainty onto the solved alphas.

    The budget total r (which includes the statistical row) sets the final
    uncertainties: alpha_S inherits the relative uncertainty of p, and the
    absolute scale r*|alpha_S| carries into alpha_T, whose relative
    uncertainty is therefore inflated by |alpha_S / alpha_T|.  A zero budget
    leaves the statistical (solve-covariance) uncertainties in place.
    """
    r = quadrature_budget(budget) / 100.0
    levels = {}
    for tag, sol in result.levels.items():
        if r == 0.0:
            final = sol.sigma_statistical
        else:
            scale = r * abs(sol.alpha.alpha_s)
            final = (scale, scale)
        levels[tag] = replace(sol, sigma_final=final)
    return ExtractionResult(levels)


def equations_to_text(equations, path) -> None:
    """One JSON record per line: level tag, p, sigma_p, weight list."""
    with open(path, "w", encoding="utf-8") as fh:
        for eq in equations:
            g = eq.ground_alpha.to(PolUnits.ATOMIC_UNITS)
            rec = {
                "excited_level": eq.excited_level,
                "p_mhz_per_kvcm_sq": eq.p.p,
                "sigma_p_mhz_per_kvcm_sq": eq.p.sigma_p,
                "weights": [
                    {"f": str(s.f), "mf": str(s.mf), "weight": w}
                    for s, w in sorted(eq.sublevel_weights.items(),
                                       key=lambda kv: -kv[1])
                ],
                "ground": {
                    "alpha_s_au": g.alpha_s, "alpha_t_au": g.alpha_t,
                    "j": str(eq.ground_state.j), "i": str(eq.ground_state.i),
                    "f": str(eq.ground_state.f), "mf": str(eq.ground_state.mf),
                },
            }
            fh.write(json.dumps(rec) + "\n")


def equations_from_text(path):
    """Inverse of equations_to_text."""
    from .angular import level_j

    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            g = rec["ground"]
            ground_state = HyperfineSublevel(Fraction(g["j"]), Fraction(g["i"]),
                                             Fraction(g["f"]), Fraction(g["mf"]))
            ground_alpha = PolarizabilityPair(g["alpha_s_au"], g["alpha_t_au"],
                                              PolUnits.ATOMIC_UNITS)
            je = level_j(rec["excited_level"])
            weights = {}
            for item in rec["weights"]:
                s = HyperfineSublevel(je, ground_state.i, Fraction(item["f"]),
                                      Fraction(item["mf"]),
                                      label=rec["excited_level"])
                weights[s] = item["weight"]
            out.append(MeasurementEquation(
                StarkCoefficient(rec["p_mhz_per_kvcm_sq"],
                                 rec["sigma_p_mhz_per_kvcm_sq"]),
                rec["excited_level"], weights, ground_alpha, ground_state))
    return out
