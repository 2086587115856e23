"""Angular-momentum layer: Wigner 3-j/6-j symbols, the tensor Stark factor,
and relative dipole transition strengths between hyperfine magnetic sublevels.

Wigner symbols are evaluated with exact integer/rational arithmetic (Racah sum
formulas over ``fractions.Fraction``) and a single final square root, so the
alternating-sign sums cannot lose precision by cancellation for any argument
up to 2j = 40.

Transition strengths use the standard hyperfine dipole factorization

    S = (2F_e+1)(2J_g+1)(2F_g+1) * {J_g J_e 1; F_e F_g I}^2
        * (F_g 1 F_e; m_g q -m_e)^2

with the reduced fine-structure matrix element set to 1.  Under this
normalization the total strength from any ground sublevel, summed over q and
all excited hyperfine sublevels of one fine-structure manifold, is exactly 1,
and the stretched sigma+ cycling channel 5P3/2(3,3) -> 5D5/2(4,4) evaluates
to exactly 2/3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction
from functools import lru_cache

__all__ = [
    "HalfInteger",
    "HyperfineSublevel",
    "Polarization",
    "RB87_NUCLEAR_SPIN",
    "wigner_3j",
    "wigner_6j",
    "tensor_factor_P",
    "transition_strength",
    "polarization_weights",
    "excitation_probabilities",
    "level_j",
]

RB87_NUCLEAR_SPIN = Fraction(3, 2)

_MAX_TWO_J = 40  # arguments above this are outside the supported range


@dataclass(frozen=True)
class HalfInteger:
    """An exact half-integer, stored as twice its value."""

    twice: int

    @classmethod
    def coerce(cls, value) -> "HalfInteger":
        if isinstance(value, HalfInteger):
            return value
        frac = Fraction(value).limit_denominator(2)
        if frac != Fraction(value):
            raise ValueError(f"{value!r} is not a half-integer")
        return cls(int(frac * 2))

    def as_fraction(self) -> Fraction:
        return Fraction(self.twice, 2)

    def __float__(self) -> float:
        return self.twice / 2.0

    def __str__(self) -> str:
        if self.twice % 2 == 0:
            return str(self.twice // 2)
        return f"{self.twice}/2"


def _half(value) -> Fraction:
    """Coerce to an exact half-integer Fraction (raises on anything else)."""
    return HalfInteger.coerce(value).as_fraction()


class Polarization(IntEnum):
    """Spherical polarization component q with respect to the quantization axis."""

    SIGMA_MINUS = -1
    PI = 0
    SIGMA_PLUS = +1

    @property
    def q(self) -> int:
        return int(self)


@dataclass(frozen=True)
class HyperfineSublevel:
    """One |J I F mF> state. Quantum numbers are exact half-integers."""

    j: HalfInteger
    i: HalfInteger
    f: HalfInteger
    mf: HalfInteger
    label: str = field(default="", compare=False)

    def __init__(self, j, i, f, mf, label=""):
        object.__setattr__(self, "j", HalfInteger.coerce(j))
        object.__setattr__(self, "i", HalfInteger.coerce(i))
        object.__setattr__(self, "f", HalfInteger.coerce(f))
        object.__setattr__(self, "mf", HalfInteger.coerce(mf))
        object.__setattr__(self, "label", label)
        jf, intf, ff, mff = (x.as_fraction() for x in (self.j, self.i, self.f, self.mf))
        if not abs(jf - intf) <= ff <= jf + intf:
            raise ValueError(f"F={ff} violates |J-I| <= F <= J+I for J={jf}, I={intf}")
        if abs(mff) > ff:
            raise ValueError(f"|mF|={mff} exceeds F={ff}")
        if (ff - mff).denominator != 1:
            raise ValueError(f"F-mF must be an integer (F={ff}, mF={mff})")

    def __repr__(self):
        tag = f" {self.label}" if self.label else ""
        return f"<{tag.strip() or 'state'} F={self.f} mF={self.mf} (J={self.j}, I={self.i})>"


_LEVEL_J = {"5S1/2": Fraction(1, 2), "5P3/2": Fraction(3, 2),
            "5D3/2": Fraction(3, 2), "5D5/2": Fraction(5, 2)}


def level_j(label: str) -> Fraction:
    """Electronic J for a level tag like '5D5/2' (trailing fraction is parsed)."""
    if label in _LEVEL_J:
        return _LEVEL_J[label]
    head, _, tail = label.rpartition("/")
    try:
        return Fraction(int(head[-1]), int(tail))
    except (ValueError, IndexError):
        raise ValueError(f"cannot parse electronic J from level tag {label!r}") from None


def _triangle_sq(a: Fraction, b: Fraction, c: Fraction):
    """Delta(a,b,c)^2 as an exact Fraction, or None if the triad is invalid."""
    if (a + b + c).denominator != 1:
        return None
    if a + b - c < 0 or a - b + c < 0 or -a + b + c < 0:
        return None
    f = math.factorial
    return Fraction(
        f(int(a + b - c)) * f(int(a - b + c)) * f(int(-a + b + c)),
        f(int(a + b + c + 1)),
    )


def _signed_sqrt(pref_sq: Fraction, ssum: Fraction, sign: int) -> float:
    """sign * sqrt(pref_sq * ssum^2), keeping the arithmetic exact until the root."""
    total = pref_sq * ssum * ssum
    s = sign * (1 if ssum > 0 else -1)
    return s * math.sqrt(float(total))


@lru_cache(maxsize=65536)
def _wigner_3j_twice(tj1, tj2, tj3, tm1, tm2, tm3) -> float:
    j1, j2, j3 = Fraction(tj1, 2), Fraction(tj2, 2), Fraction(tj3, 2)
    m1, m2, m3 = Fraction(tm1, 2), Fraction(tm2, 2), Fraction(tm3, 2)
    if m1 + m2 + m3 != 0:
        return 0.0
    for j, m in ((j1, m1), (j2, m2), (j3, m3)):
        if abs(m) > j or (j - m).denominator != 1:
            return 0.0
    tri = _triangle_sq(j1, j2, j3)
    if tri is None:
        return 0.0
    tmin = max(0, int(-(j3 - j2 + m1)), int(-(j3 - j1 - m2)))
    tmax = min(int(j1 + j2 - j3), int(j1 - m1), int(j2 + m2))
    if tmax < tmin:
        return 0.0
    f = math.factorial
    ssum = Fraction(0)
    for t in range(tmin, tmax + 1):
        den = (f(t) * f(int(j1 + j2 - j3) - t) * f(int(j1 - m1) - t)
               * f(int(j2 + m2) - t) * f(int(j3 - j2 + m1) + t)
               * f(int(j3 - j1 - m2) + t))
        ssum += Fraction((-1) ** t, den)
    if ssum == 0:
        return 0.0
    pref_sq = tri * (f(int(j1 + m1)) * f(int(j1 - m1)) * f(int(j2 + m2))
                     * f(int(j2 - m2)) * f(int(j3 + m3)) * f(int(j3 - m3)))
    return _signed_sqrt(pref_sq, ssum, (-1) ** int(j1 - j2 - m3))


def wigner_3j(j1, j2, j3, m1, m2, m3) -> float:
    """Wigner 3-j symbol.  Returns exactly 0 for any selection-rule violation."""
    args = [_half(x) for x in (j1, j2, j3, m1, m2, m3)]
    if any(j < 0 or 2 * j > _MAX_TWO_J for j in args[:3]):
        raise ValueError("3-j momenta must satisfy 0 <= j <= 20")
    return _wigner_3j_twice(*(int(2 * a) for a in args))


@lru_cache(maxsize=65536)
def _wigner_6j_twice(tj1, tj2, tj3, tj4, tj5, tj6) -> float:
    j1, j2, j3, j4, j5, j6 = (Fraction(t, 2) for t in (tj1, tj2, tj3, tj4, tj5, tj6))
    tris = [_triangle_sq(j1, j2, j3), _triangle_sq(j1, j5, j6),
            _triangle_sq(j4, j2, j6), _triangle_sq(j4, j5, j3)]
    if any(t is None for t in tris):
        return 0.0
    s1, s2 = j1 + j2 + j3, j1 + j5 + j6
    s3, s4 = j4 + j2 + j6, j4 + j5 + j3
    q1, q2, q3 = j1 + j2 + j4 + j5, j2 + j3 + j5 + j6, j3 + j1 + j6 + j4
    tmin, tmax = int(max(s1, s2, s3, s4)), int(min(q1, q2, q3))
    if tmax < tmin:
        return 0.0
    f = math.factorial
    ssum = Fraction(0)
    for t in range(tmin, tmax + 1):
        den = (f(t - int(s1)) * f(t - int(s2)) * f(t - int(s3)) * f(t - int(s4))
               * f(int(q1) - t) * f(int(q2) - t) * f(int(q3) - t))
        ssum += Fraction((-1) ** t * f(t + 1), den)
    if ssum == 0:
        return 0.0
    pref_sq = tris[0] * tris[1] * tris[2] * tris[3]
    return _signed_sqrt(pref_sq, ssum, 1)


def wigner_6j(j1, j2, j3, j4, j5, j6) -> float:
    """Wigner 6-j symbol {j1 j2 j3; j4 j5 j6}.  0 when any triad fails."""
    args = [_half(x) for x in (j1, j2, j3, j4, j5, j6)]
    if any(j < 0 or 2 * j > _MAX_TWO_J for j in args):
        raise ValueError("6-j momenta must satisfy 0 <= j <= 20")
    return _wigner_6j_twice(*(int(2 * a) for a in args))


def tensor_factor_P(state: HyperfineSublevel) -> float:
    """Geometric weight of the tensor polarizability for one sublevel.

    P = [3 mF^2 - F(F+1)] [3Q(Q-1) - 4F(F+1)J(J+1)]
        / [(2F+3)(2F+2)F(2F-1) J(2J-1)],   Q = F(F+1) + J(J+1) - I(I+1).

    Exactly 0 for J <= 1/2 (no tensor splitting) and for F <= 1/2, where the
    denominator is singular and no sublevel splitting exists.
    """
    j, i, f, mf = (x.as_fraction() for x in (state.j, state.i, state.f, state.mf))
    if j <= Fraction(1, 2) or f <= Fraction(1, 2):
        return 0.0
    q = f * (f + 1) + j * (j + 1) - i * (i + 1)
    num = (3 * mf * mf - f * (f + 1)) * (3 * q * (q - 1) - 4 * f * (f + 1) * j * (j + 1))
    den = (2 * f + 3) * (2 * f + 2) * f * (2 * f - 1) * j * (2 * j - 1)
    return float(Fraction(num, den))


def transition_strength(ground: HyperfineSublevel, excited: HyperfineSublevel,
                        pol: Polarization) -> float:
    """Relative |<F_g m_g|er|F_e m_e>|^2 with unit reduced matrix element.

    Nonzero only when m_e = m_g + q and the F_g(1)F_e and hyperfine triangle
    rules hold.  Summed over q and all excited sublevels of one fine-structure
    manifold the result is 1 for every ground sublevel.
    """
    if ground.i != excited.i:
        raise ValueError("ground and excited states must share the nuclear spin I")
    q = int(pol)
    jg, je = ground.j.as_fraction(), excited.j.as_fraction()
    fg, fe = ground.f.as_fraction(), excited.f.as_fraction()
    mg, me = ground.mf.as_fraction(), excited.mf.as_fraction()
    if me != mg + q:
        return 0.0
    i = ground.i.as_fraction()
    w6 = wigner_6j(jg, je, 1, fe, fg, i)
    w3 = wigner_3j(fg, 1, fe, mg, q, -me)
    return float((2 * fe + 1) * (2 * jg + 1) * (2 * fg + 1)) * w6 * w6 * w3 * w3


def polarization_weights(tilt_angle_deg: float, helicity: Polarization,
                         split=None) -> dict:
    """Intensity weights of the spherical components q = -1, 0, +1 along z.

    Circular light of the given helicity about a wave vector tilted by
    ``tilt_angle_deg`` from z decomposes with intensity weights
    cos^4(theta/2), sin^2(theta)/2, sin^4(theta/2) on (q = helicity, 0,
    -helicity).  If ``split = (circular, linear)`` is supplied, those two
    fractions are used directly instead (the remaining component gets 0);
    this is how a nominal 96%/4% split is imposed.
    """
    if helicity == Polarization.PI:
        raise ValueError("probe helicity must be sigma+ or sigma-")
    h = int(helicity)
    if split is not None:
        circ, lin = split
        return {h: float(circ), 0: float(lin), -h: 0.0}
    th = math.radians(tilt_angle_deg)
    return {
        h: math.cos(th / 2) ** 4,
        0: 0.5 * math.sin(th) ** 2,
        -h: math.sin(th / 2) ** 4,
    }


def _manifold_sublevels(je: Fraction, i: Fraction, label: str):
    fmin, fmax = abs(je - i), je + i
    f = fmin
    while f <= fmax:
        mf = -f
        while mf <= f:
            yield HyperfineSublevel(je, i, f, mf, label=label)
            mf += 1
        f += 1


def excitation_probabilities(config) -> dict:
    """Probability of exciting each reachable sublevel of the target 5D manifold.

    For every populated ground sublevel g and spherical component q,
    probability(e) accumulates population(g) * weight(q) * strength(g -> e).
    ``config`` is a spectra_fit.TransitionConfig (or anything exposing
    ground_populations, probe_polarization, tilt_angle_deg,
    polarization_split and excited_level).
    """
    pops = dict(config.ground_populations)
    if not pops:
        raise ValueError("no initial state")
    total_pop = sum(pops.values())
    if total_pop > 1.0 + 1e-9:
        raise ValueError(f"ground populations sum to {total_pop} > 1")
    if any(p < 0 for p in pops.values()):
        raise ValueError("ground populations must be >= 0")
    if not 0.0 <= config.tilt_angle_deg < 90.0:
        raise ValueError("tilt angle must lie in [0, 90) degrees")

    weights = polarization_weights(config.tilt_angle_deg, config.probe_polarization,
                                   getattr(config, "polarization_split", None))
    label = config.excited_level
    je = level_j(label)
    i = next(iter(pops)).i.as_fraction()
    out = {}
    for exc in _manifold_sublevels(je, i, label):
        prob = 0.0
        for g, pop in pops.items():
            if pop == 0.0:
                continue
            for q, w in weights.items():
                if w == 0.0:
                    continue
                prob += pop * w * transition_strength(g, exc, Polarization(q))
        if prob > 0.0:
            out[exc] = prob
    return out
