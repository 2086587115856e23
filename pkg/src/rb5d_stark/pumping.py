"""Optical pumping toward the stretched state interleaved with Larmor
precession about an arbitrarily oriented magnetic field.

The pump is modeled as classical rate equations on the magnetic-sublevel
populations: jump channels m -> m+1 with rates proportional to the sigma+
transition strengths of the cycling ladder, the overall scale calibrated so a
uniformly populated manifold reaches a 0.981 stretched fraction after 500 ns
at zero field.  Photon scattering during the pump also destroys Zeeman
coherences; that enters as a uniform dephasing of the density-matrix
off-diagonals at the same rate scale.  Precession is exact: rotation into the
field basis, Zeeman phases exp(-i 2 pi (mu_B g_F / h) m B t), rotation back.

simulate_pumping evolves the full density matrix (incoherent uniform start)
with Strang splitting and exact sub-propagators, so the only time-step error
is the O(dt^2) splitting term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .angular import HyperfineSublevel, Polarization, transition_strength

__all__ = [
    "MU_B_OVER_H_MHZ_PER_G",
    "lande_g_f",
    "wigner_d_matrix",
    "PumpState",
    "MagneticField",
    "PumpDrive",
    "PumpTrace",
    "rotate_to_field_basis",
    "precess",
    "pump_step",
    "simulate_pumping",
    "sweep_perpendicular_field",
    "calibrated_rate_scale",
    "ladder_rates",
]

MU_B_OVER_H_MHZ_PER_G = 1.3996245  # Bohr magneton over Planck constant

_CAL_TARGET = 0.981   # stretched fraction from uniform after the 500 ns pump
_CAL_PUMP_NS = 500.0


def lande_g_f(f, j, i, l, s=Fraction(1, 2)) -> float:
    """Hyperfine Lande factor from the electronic one (g_L = 1, g_S = 2,
    nuclear moment neglected)."""
    f, j, i, l, s = (Fraction(x) for x in (f, j, i, l, s))
    if j == 0 or f == 0:
        return 0.0
    g_j = 1 + Fraction(j * (j + 1) + s * (s + 1) - l * (l + 1), 2 * j * (j + 1))
    g_f = g_j * Fraction(f * (f + 1) + j * (j + 1) - i * (i + 1), 2 * f * (f + 1))
    return float(g_f)


# g_F of the pumped 5P3/2 (F=3) manifold; evaluates to 2/3
G_F_5P32_F3 = lande_g_f(3, Fraction(3, 2), Fraction(3, 2), 1)


def _ms(f) -> np.ndarray:
    f = Fraction(f)
    dim = int(2 * f + 1)
    return np.array([float(-f + k) for k in range(dim)])


@lru_cache(maxsize=256)
def _wigner_d_cached(tf: int, beta: float) -> np.ndarray:
    f = Fraction(tf, 2)
    dim = int(2 * f + 1)
    ms = [(-f + k) for k in range(dim)]
    fact = math.factorial
    d = np.zeros((dim, dim))
    cb, sb = math.cos(beta / 2.0), math.sin(beta / 2.0)
    for a, mp in enumerate(ms):
        for b, m in enumerate(ms):
            pref = math.sqrt(fact(int(f + mp)) * fact(int(f - mp))
                             * fact(int(f + m)) * fact(int(f - m)))
            smin = max(0, int(m - mp))
            smax = min(int(f + m), int(f - mp))
            tot = 0.0
            for k in range(smin, smax + 1):
                tot += ((-1) ** (int(mp - m) + k)
                        / (fact(int(f + m) - k) * fact(k)
                           * fact(int(mp - m) + k) * fact(int(f - mp) - k))
                        * cb ** int(2 * f + m - mp - 2 * k)
                        * sb ** int(mp - m + 2 * k))
            d[a, b] = pref * tot
    d.setflags(write=False)
    return d


def wigner_d_matrix(f, beta: float) -> np.ndarray:
    """Little-d rotation matrix d^f_{m',m}(beta) over m = -f..f."""
    return _wigner_d_cached(int(2 * Fraction(f)), float(beta))


@dataclass(frozen=True)
class MagneticField:
    """Static field of given magnitude (gauss) at angle alpha to the z axis."""

    b_gauss: float
    angle_rad: float = math.pi / 2

    def __post_init__(self):
        if self.b_gauss < 0:
            raise ValueError("field magnitude must be >= 0")
        if not 0.0 <= self.angle_rad <= math.pi:
            raise ValueError("field angle must lie in [0, pi]")

    def larmor_mhz(self, g_f: float) -> float:
        return g_f * MU_B_OVER_H_MHZ_PER_G * self.b_gauss


@dataclass(frozen=True)
class PumpState:
    """Complex amplitudes c_m over m = -F..F of one hyperfine manifold."""

    amplitudes: np.ndarray
    f: Fraction = Fraction(3)
    g_f: float = G_F_5P32_F3
    time_ns: float = 0.0

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "f", Fraction(self.f))
        dim = int(2 * self.f + 1)
        if amps.shape != (dim,):
            raise ValueError(f"need {dim} amplitudes for F={self.f}")
        if not np.all(np.isfinite(amps)):
            raise ValueError("amplitudes must be finite")
        if self.norm() > 1.0 + 1e-9:
            raise ValueError("total population exceeds 1")

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def populations(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @classmethod
    def uniform(cls, f=Fraction(3), g_f=G_F_5P32_F3) -> "PumpState":
        dim = int(2 * Fraction(f) + 1)
        return cls(np.full(dim, math.sqrt(1.0 / dim), dtype=complex), f, g_f)

    @classmethod
    def stretched(cls, f=Fraction(3), g_f=G_F_5P32_F3) -> "PumpState":
        dim = int(2 * Fraction(f) + 1)
        amps = np.zeros(dim, dtype=complex)
        amps[-1] = 1.0
        return cls(amps, f, g_f)


def rotate_to_field_basis(state: PumpState, field: MagneticField) -> PumpState:
    """Re-express the amplitudes in the basis quantized along the field.

    Equivalent to the spherical-harmonic overlap integrals between the two
    quantization frames: c_{m_B} = sum_m d^F_{m_B m}(-alpha) c_m.
    """
    d = wigner_d_matrix(state.f, -field.angle_rad)
    return PumpState(d @ state.amplitudes, state.f, state.g_f, state.time_ns)


def _precession_unitary(f, g_f, field: MagneticField, dt_ns: float) -> np.ndarray:
    phases = np.exp(-2j * math.pi * field.larmor_mhz(g_f) * 1e-3 * _ms(f) * dt_ns)
    if field.angle_rad == 0.0:
        return np.diag(phases)
    fwd = wigner_d_matrix(f, -field.angle_rad)
    return fwd.T @ np.diag(phases) @ fwd


def precess(state: PumpState, field: MagneticField, dt_ns: float) -> PumpState:
    """Free Larmor evolution for dt_ns: Zeeman phases in the field basis."""
    if dt_ns < 0:
        raise ValueError("dt must be >= 0")
    u = _precession_unitary(state.f, state.g_f, field, dt_ns)
    return PumpState(u @ state.amplitudes, state.f, state.g_f,
                     state.time_ns + dt_ns)


def ladder_rates(f=Fraction(3)) -> np.ndarray:
    """Relative sigma+ redistribution rates m -> m+1 on the cycling ladder.

    Proportional to the F -> F+1 sigma+ transition strengths; normalized so
    the strongest channel (from m = F-1) has rate 1.  The stretched state has
    no target and rate 0: it is dark to redistribution.
    """
    f = Fraction(f)
    i = Fraction(3, 2)
    jg = Fraction(3, 2)
    je = f + 1 - i  # smallest J_e admitting F_e = F+1 with this I
    dim = int(2 * f + 1)
    rates = np.zeros(dim)
    for k in range(dim - 1):
        m = -f + k
        g = HyperfineSublevel(jg, i, f, m)
        e = HyperfineSublevel(je, i, f + 1, m + 1)
        rates[k] = transition_strength(g, e, Polarization.SIGMA_PLUS)
    return rates / rates.max()


@dataclass(frozen=True)
class PumpDrive:
    """Sigma+ pump light: rate scale (None selects the calibrated scale),
    dephasing of Zeeman coherences in units of the rate scale, and an
    optional uniform leak out of the tracked manifold."""

    on: bool = True
    rate_scale_per_ns: float | None = None
    polarization: Polarization = Polarization.SIGMA_PLUS
    dephasing_factor: float = 1.0
    leak_rate_per_ns: float = 0.0

    def __post_init__(self):
        if self.rate_scale_per_ns is not None and self.rate_scale_per_ns < 0:
            raise ValueError("rate scale must be >= 0")
        if self.dephasing_factor < 0 or self.leak_rate_per_ns < 0:
            raise ValueError("dephasing and leak rates must be >= 0")
        if self.polarization != Polarization.SIGMA_PLUS:
            raise ValueError("only sigma+ pumping is modeled")

    def rate_scale(self, f=Fraction(3)) -> float:
        if self.rate_scale_per_ns is not None:
            return self.rate_scale_per_ns
        return calibrated_rate_scale(f)


def _series_expm(m: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling-and-squaring Taylor series."""
    norm = np.linalg.norm(m, 1)
    squarings = max(0, int(math.ceil(math.log2(max(norm, 1e-300) / 0.5))))
    t = m / (2.0 ** squarings)
    out = np.eye(m.shape[0], dtype=m.dtype)
    term = np.eye(m.shape[0], dtype=m.dtype)
    for k in range(1, 40):
        term = term @ t / k
        out = out + term
        if np.abs(term).max() < 1e-18:
            break
    for _ in range(squarings):
        out = out @ out
    return out


@lru_cache(maxsize=64)
def _population_propagator(tf: int, rate_scale: float, dt_ns: float) -> np.ndarray:
    """exp(A dt) of the population rate equations on the ladder."""
    f = Fraction(tf, 2)
    rates = rate_scale * ladder_rates(f)
    dim = len(rates)
    a = np.zeros((dim, dim))
    for k in range(dim - 1):
        a[k, k] -= rates[k]
        a[k + 1, k] += rates[k]
    return _series_expm(a * dt_ns)


def calibrated_rate_scale(f=Fraction(3)) -> float:
    """Rate scale making a uniform manifold reach the calibration target
    stretched fraction after the standard 500 ns pump at zero field."""
    return _calibrated_rate_scale_cached(int(2 * Fraction(f)))


@lru_cache(maxsize=8)
def _calibrated_rate_scale_cached(tf: int) -> float:
    f = Fraction(tf, 2)
    dim = int(2 * f + 1)
    uniform = np.full(dim, 1.0 / dim)

    def final_fraction(scale):
        prop = _population_propagator.__wrapped__(tf, scale, _CAL_PUMP_NS)
        return (prop @ uniform)[-1]

    lo, hi = 1e-6, 1.0
    while final_fraction(hi) < _CAL_TARGET:
        hi *= 2
        if hi > 1e6:
            raise RuntimeError("pump calibration failed to bracket")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if final_fraction(mid) < _CAL_TARGET:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def pump_step(state: PumpState, drive: PumpDrive, dt_ns: float) -> PumpState:
    """Advance the populations one rate-equation step toward the stretched
    state; amplitude phases are preserved.  Pure-state counterpart of the
    density-matrix step used by simulate_pumping."""
    if dt_ns <= 0:
        raise ValueError("dt must be > 0")
    if not drive.on:
        return PumpState(state.amplitudes, state.f, state.g_f,
                         state.time_ns + dt_ns)
    scale = drive.rate_scale(state.f)
    prop = _population_propagator(int(2 * state.f), scale, dt_ns)
    pops = prop @ state.populations()
    if drive.leak_rate_per_ns:
        pops = pops * math.exp(-drive.leak_rate_per_ns * dt_ns)
    mags = np.abs(state.amplitudes)
    phases = np.where(mags > 0, state.amplitudes / np.where(mags > 0, mags, 1.0), 1.0)
    amps = np.sqrt(np.clip(pops, 0.0, None)) * phases
    return PumpState(amps, state.f, state.g_f, state.time_ns + dt_ns)


def _pump_superop_step(rho, families, props):
    """Apply the exact pump propagator family-by-family along the diagonals."""
    out = np.empty_like(rho)
    for (rows, cols), prop in zip(families, props):
        out[rows, cols] = prop @ rho[rows, cols]
    return out


def _build_pump_propagators(dim, rates, gamma, leak, dt_ns):
    """Exact exp(L dt) of the jump-plus-dephasing Lindblad generator.

    The generator couples rho_{i,j} only to rho_{i-1,j-1}, so each diagonal
    family (fixed i-j) evolves under a small lower-bidiagonal matrix.
    """
    loss = 0.5 * (rates[:, None] + rates[None, :]) + leak
    loss = loss + gamma * (1.0 - np.eye(dim))
    amp = np.sqrt(np.outer(rates, rates))
    families, props = [], []
    for d in range(-(dim - 1), dim):
        rows = np.arange(max(0, d), dim + min(0, d))
        cols = rows - d
        n = len(rows)
        gen = np.zeros((n, n))
        for t in range(n):
            gen[t, t] = -loss[rows[t], cols[t]]
            if t > 0:
                gen[t, t - 1] = amp[rows[t] - 1, cols[t] - 1]
        families.append((rows, cols))
        props.append(_series_expm(gen * dt_ns))
    return families, props


@dataclass(frozen=True)
class PumpTrace:
    """Population time series of one simulation, sampled every dt."""

    times_ns: np.ndarray
    populations: np.ndarray  # (n_samples, 2F+1)
    total: np.ndarray
    f: Fraction
    pump_steps: int  # index of the last sample inside the pump window

    def stretched_fraction(self) -> np.ndarray:
        return self.populations[:, -1] / self.total

    @property
    def pump_end_fraction(self) -> float:
        return float(self.stretched_fraction()[self.pump_steps])

    @property
    def final_fraction(self) -> float:
        return float(self.stretched_fraction()[-1])

    def to_csv(self, path) -> None:
        dim = self.populations.shape[1]
        f = self.f
        headers = ["t_ns"] + [f"pop_m{'+' if (-f + k) >= 0 else ''}{-f + k}"
                              for k in range(dim)] + ["total"]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(str(h) for h in headers) + "\n")
            for i, t in enumerate(self.times_ns):
                row = [f"{t:.6g}"] + [f"{p:.8g}" for p in self.populations[i]]
                row.append(f"{self.total[i]:.8g}")
                fh.write(",".join(row) + "\n")


def simulate_pumping(field: MagneticField, pump_duration_ns=500.0,
                     free_duration_ns=100.0, dt_ns=1.0, drive: PumpDrive = None,
                     f=Fraction(3), g_f=None,
                     initial_populations=None) -> PumpTrace:
    """Split-step pump/precession evolution of the density matrix.

    The pump window applies, per dt, a symmetric (Strang) composition of the
    exact precession unitary and the exact pump Lindblad propagator; the free
    window is pure precession.  The initial state is the incoherent uniform
    mixture unless initial_populations is given (a diagonal density matrix).
    """
    if pump_duration_ns < 0 or free_duration_ns < 0:
        raise ValueError("durations must be >= 0")
    if dt_ns <= 0:
        raise ValueError("dt must be > 0")
    f = Fraction(f)
    dim = int(2 * f + 1)
    if g_f is None:
        g_f = G_F_5P32_F3 if f == 3 else lande_g_f(f, Fraction(3, 2),
                                                   Fraction(3, 2), 1)
    drive = drive or PumpDrive()
    n_pump = int(round(pump_duration_ns / dt_ns))
    n_free = int(round(free_duration_ns / dt_ns))
    if abs(n_pump * dt_ns - pump_duration_ns) > 1e-9 or \
            abs(n_free * dt_ns - free_duration_ns) > 1e-9:
        raise ValueError("dt must divide both durations")

    if initial_populations is None:
        rho = np.eye(dim, dtype=complex) / dim
    else:
        pops = np.asarray(initial_populations, dtype=float)
        if pops.shape != (dim,) or np.any(pops < 0) or pops.sum() > 1 + 1e-9:
            raise ValueError("bad initial populations")
        rho = np.diag(pops).astype(complex)

    scale = drive.rate_scale(f) if drive.on else 0.0
    rates = scale * ladder_rates(f)
    gamma = drive.dephasing_factor * scale
    families, props = _build_pump_propagators(dim, rates, gamma,
                                              drive.leak_rate_per_ns, dt_ns)
    u_half = _precession_unitary(f, g_f, field, 0.5 * dt_ns)
    u_full = _precession_unitary(f, g_f, field, dt_ns)

    n_tot = n_pump + n_free
    pops_out = np.empty((n_tot + 1, dim))
    total = np.empty(n_tot + 1)
    times = np.arange(n_tot + 1) * dt_ns

    def record(idx, r):
        p = np.real(np.diag(r))
        pops_out[idx] = p
        total[idx] = p.sum()

    record(0, rho)
    for step in range(n_pump):
        rho = u_half @ rho @ u_half.conj().T
        rho = _pump_superop_step(rho, families, props)
        rho = u_half @ rho @ u_half.conj().T
        record(step + 1, rho)
    for step in range(n_free):
        rho = u_full @ rho @ u_full.conj().T
        record(n_pump + step + 1, rho)
    return PumpTrace(times, pops_out, total, f, n_pump)


def sweep_perpendicular_field(b_values_gauss, sample="pump_end",
                              **sim_kwargs) -> list:
    """Stretched-state fraction vs perpendicular field magnitude.

    sample selects the reported fraction: 'pump_end' (the pumping efficiency,
    evaluated when the pump switches off) or 'final' (after the free window).
    """
    if len(b_values_gauss) == 0:
        raise ValueError("empty field sweep")
    out = []
    for b in b_values_gauss:
        trace = simulate_pumping(MagneticField(float(b), math.pi / 2),
                                 **sim_kwargs)
        frac = trace.pump_end_fraction if sample == "pump_end" else \
            trace.final_fraction
        out.append((float(b), frac))
    return out


def sweep_to_csv(sweep, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("B_gauss,final_stretched_fraction\n")
        for b, frac in sweep:
            fh.write(f"{b:.6g},{frac:.8g}\n")
