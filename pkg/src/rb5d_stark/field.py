"""Electrostatics of the meshed-plate capacitor: finite-difference Laplace
solve, central-field value, uniformity over the cloud volume, and tilt
sensitivity.

The meshes are modeled as solid equipotential rectangles (wire-scale field
structure decays within about one wire pitch and is irrelevant millimeters
away).  The outer boundary is a grounded box three gap-lengths from the
plates.  The solver is red-black successive over-relaxation on a grid whose
z spacing is snapped so both plate planes lie exactly on grid planes; with
the plates at +-V/2 the potential is odd in z and even in x and y, so the
untilted solve runs on one octant and is mirror-expanded afterwards.

A relative plate tilt is handled with fractional boundary arms
(Shortley-Weller stencils) on a full-x/z grid, so sub-grid plate offsets act
on the solution instead of being snapped away.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "CapacitorGeometry",
    "FieldMap",
    "solve_laplace",
    "uniformity",
    "tilt_sensitivity",
    "export_slice_csv",
]

ARCMIN = math.pi / (180.0 * 60.0)


@dataclass(frozen=True)
class CapacitorGeometry:
    """Plate capacitor: 2 cm x 3 cm plates, measured gap, optional tilt."""

    gap_mm: float = 9.88
    gap_sigma_mm: float = 0.03
    plate_x_mm: float = 20.0       # full extent along x
    plate_y_mm: float = 30.0       # full extent along y
    hole_diameter_mm: float = 10.0
    tilt_arcmin: float = 0.0
    voltage_v: float = 1000.0
    boundary_clearance_gaps: float = 3.0

    def __post_init__(self):
        if self.gap_mm <= 0:
            raise ValueError("gap must be > 0")
        if abs(self.tilt_arcmin) > 15.0 + 1e-9:
            raise ValueError("tilt exceeds the 15 arcminute bound")
        if self.hole_diameter_mm >= min(self.plate_x_mm, self.plate_y_mm):
            raise ValueError("hole must be smaller than the plate extent")
        if self.boundary_clearance_gaps <= 0:
            raise ValueError("boundary clearance must be > 0")

    @property
    def nominal_field_v_per_cm(self) -> float:
        return self.voltage_v / (self.gap_mm / 10.0)


@dataclass(frozen=True)
class FieldMap:
    """Solved potential on the full grid plus derived field magnitudes.

    Axes are in mm with the origin at the capacitor center; potential in
    volts.  The field magnitude lattice is computed lazily from central
    differences (V/cm).
    """

    x_mm: np.ndarray
    y_mm: np.ndarray
    z_mm: np.ndarray
    potential_v: np.ndarray
    residual: float
    sweeps: int
    geometry: CapacitorGeometry

    @property
    def spacing_mm(self) -> tuple:
        return (float(self.x_mm[1] - self.x_mm[0]),
                float(self.y_mm[1] - self.y_mm[0]),
                float(self.z_mm[1] - self.z_mm[0]))

    def _index(self, axis: np.ndarray, value: float) -> int:
        idx = int(round((value - axis[0]) / (axis[1] - axis[0])))
        if not 0 <= idx < len(axis):
            raise ValueError(f"coordinate {value} mm outside the solved lattice")
        return idx

    def field_magnitude(self, x=0.0, y=0.0, z=0.0) -> float:
        """|E| at a lattice point near (x, y, z), V/cm."""
        i = self._index(self.x_mm, x)
        j = self._index(self.y_mm, y)
        k = self._index(self.z_mm, z)
        hx, hy, hz = self.spacing_mm
        p = self.potential_v
        i0, i1 = max(i - 1, 0), min(i + 1, len(self.x_mm) - 1)
        j0, j1 = max(j - 1, 0), min(j + 1, len(self.y_mm) - 1)
        k0, k1 = max(k - 1, 0), min(k + 1, len(self.z_mm) - 1)
        ex = (p[i1, j, k] - p[i0, j, k]) / ((i1 - i0) * hx)
        ey = (p[i, j1, k] - p[i, j0, k]) / ((j1 - j0) * hy)
        ez = (p[i, j, k1] - p[i, j, k0]) / ((k1 - k0) * hz)
        return math.sqrt(ex * ex + ey * ey + ez * ez) * 10.0  # V/mm -> V/cm

    @property
    def central_field_v_per_cm(self) -> float:
        return self.field_magnitude(0.0, 0.0, 0.0)


def _octant_grid(geom: CapacitorGeometry, spacing_mm: float):
    half_gap = geom.gap_mm / 2.0
    hz = half_gap / round(half_gap / spacing_mm)
    clear = geom.boundary_clearance_gaps * geom.gap_mm
    nx = int(math.ceil((geom.plate_x_mm / 2.0 + clear) / spacing_mm))
    ny = int(math.ceil((geom.plate_y_mm / 2.0 + clear) / spacing_mm))
    nz = int(math.ceil((half_gap + clear) / hz))
    return hz, nx, ny, nz


def _sor_sweeps(phi, fixed_mask, coeffs, omega, tol, max_sweeps, scale):
    """Red-black SOR on the padded array; returns (residual, sweeps).

    phi has one ghost layer on each face.  Mirror faces are refreshed from
    the interior before each color; Dirichlet nodes never change.
    """
    cx, cy, cz, csum = coeffs
    free = ~fixed_mask
    core = (slice(1, -1),) * 3
    ii, jj, kk = np.meshgrid(*(np.arange(s - 2) for s in phi.shape),
                             indexing="ij", sparse=True)
    parity = (ii + jj + kk) % 2
    colors = [((parity == c) & free).astype(phi.dtype) for c in (0, 1)]

    def refresh_ghosts(p):
        p[0, :, :] = p[2, :, :]      # mirror at x = 0
        p[:, 0, :] = p[:, 2, :]      # mirror at y = 0
        # other faces stay at their Dirichlet zeros

    def stencil(p):
        return (cx * (p[2:, 1:-1, 1:-1] + p[:-2, 1:-1, 1:-1])
                + cy * (p[1:-1, 2:, 1:-1] + p[1:-1, :-2, 1:-1])
                + cz * (p[1:-1, 1:-1, 2:] + p[1:-1, 1:-1, :-2])) / csum

    residual = math.inf
    for sweep in range(1, max_sweeps + 1):
        for color in colors:
            refresh_ghosts(phi)
            upd = stencil(phi)
            phi[core] += omega * color * (upd - phi[core])
        if sweep % 25 == 0 or sweep == max_sweeps:
            refresh_ghosts(phi)
            residual = float(np.abs((stencil(phi) - phi[core]) * free).max()) / scale
            if residual < tol:
                return residual, sweep
    return residual, max_sweeps


def _solve_octant(geom: CapacitorGeometry, spacing_mm: float, tol: float,
                  max_sweeps: int, initial=None):
    hz, nx, ny, nz = _octant_grid(geom, spacing_mm)
    h = spacing_mm
    shape = (nx + 1, ny + 1, nz + 1)
    phi = np.zeros((nx + 3, ny + 3, nz + 3))  # ghost layer on each face
    fixed = np.zeros(shape, dtype=bool)
    # Dirichlet: grounded outer faces and the z = 0 antisymmetry plane
    fixed[-1, :, :] = True
    fixed[:, -1, :] = True
    fixed[:, :, -1] = True
    fixed[:, :, 0] = True
    # plate at +V/2 on its grid plane
    kp = round((geom.gap_mm / 2.0) / hz)
    ipx = int(round(geom.plate_x_mm / 2.0 / h))
    ipy = int(round(geom.plate_y_mm / 2.0 / h))
    core = (slice(1, -1),) * 3
    phi[core][: ipx + 1, : ipy + 1, kp] = geom.voltage_v / 2.0
    fixed[: ipx + 1, : ipy + 1, kp] = True

    if initial is not None:
        guess = initial(np.arange(nx + 1) * h, np.arange(ny + 1) * h,
                        np.arange(nz + 1) * hz)
        phi[core][~fixed] = guess[~fixed]

    cx = cy = 1.0 / h**2
    cz = 1.0 / hz**2
    csum = 2 * (cx + cy + cz)
    n_eff = max(nx, ny, nz)
    omega = 2.0 / (1.0 + math.sin(math.pi / n_eff))
    residual, sweeps = _sor_sweeps(phi, fixed, (cx, cy, cz, csum), omega, tol,
                                   max_sweeps, geom.voltage_v / 2.0)
    return phi[core], hz, residual, sweeps


def _mirror_expand(octant, hz, h, geom):
    """Full-domain potential from the octant: even in x and y, odd in z."""
    nx, ny, nz = (s - 1 for s in octant.shape)
    xpart = np.concatenate([octant[::-1], octant[1:]], axis=0)
    ypart = np.concatenate([xpart[:, ::-1], xpart[:, 1:]], axis=1)
    full = np.concatenate([-ypart[:, :, ::-1], ypart[:, :, 1:]], axis=2)
    x = np.arange(-nx, nx + 1) * h
    y = np.arange(-ny, ny + 1) * h
    z = np.arange(-nz, nz + 1) * hz
    return x, y, z, full


def solve_laplace(geometry: CapacitorGeometry, spacing_mm=0.25, tolerance=1e-8,
                  max_sweeps=20000) -> FieldMap:
    """Solve the capacitor potential to the requested relative residual.

    spacing_mm must be at most gap/20.  The z spacing snaps to an integer
    division of the half gap so the plates land on grid planes.  Untilted
    geometries run on one octant with a coarse-grid initial guess (nested
    iteration); tilted geometries use the Shortley-Weller path.
    """
    if spacing_mm > geometry.gap_mm / 20.0 + 1e-12:
        raise ValueError("spacing must satisfy spacing <= gap/20")
    if tolerance <= 0:
        raise ValueError("tolerance must be > 0")
    if geometry.tilt_arcmin != 0.0:
        return _solve_tilted(geometry, spacing_mm, tolerance, max_sweeps)

    t0 = time.time()
    initial = None
    if spacing_mm < 0.4:  # nested iteration: coarse solve seeds the fine grid
        coarse_spacing = geometry.gap_mm / 20.0
        coc, hzc, _, _ = _solve_octant(geometry, coarse_spacing, 1e-7,
                                       max_sweeps)
        xc = np.arange(coc.shape[0]) * coarse_spacing
        yc = np.arange(coc.shape[1]) * coarse_spacing
        zc = np.arange(coc.shape[2]) * hzc

        def initial(xf, yf, zf):
            # separable trilinear interpolation of the coarse solution
            out = _interp_axis(coc, xc, xf, axis=0)
            out = _interp_axis(out, yc, yf, axis=1)
            return _interp_axis(out, zc, zf, axis=2)

    octant, hz, residual, sweeps = _solve_octant(geometry, spacing_mm,
                                                 tolerance, max_sweeps, initial)
    if residual >= tolerance:
        raise RuntimeError(
            f"SOR did not reach tolerance {tolerance:g} within {max_sweeps} "
            f"sweeps (residual {residual:.3e})")
    x, y, z, full = _mirror_expand(octant, hz, spacing_mm, geometry)
    fmap = FieldMap(x, y, z, full, residual, sweeps, geometry)
    fmap.__dict__["solve_seconds"] = time.time() - t0
    return fmap


def _interp_axis(arr, old, new, axis):
    idx = np.clip(np.searchsorted(old, new) - 1, 0, len(old) - 2)
    frac = (new - old[idx]) / (old[idx + 1] - old[idx])
    frac = np.clip(frac, 0.0, 1.0)
    lo = np.take(arr, idx, axis=axis)
    hi = np.take(arr, idx + 1, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = len(new)
    w = frac.reshape(shape)
    return lo * (1 - w) + hi * w


def _solve_tilted(geom: CapacitorGeometry, spacing_mm, tol, max_sweeps):
    """Full-x/z, half-y solve with fractional z arms at the tilted top plate.

    The top plate is rotated by tilt about the y axis through its center; the
    central gap is held fixed.  Near-plate nodes use Shortley-Weller stencils
    so the plate surface acts at its true sub-grid height.
    """
    t0 = time.time()
    h = spacing_mm
    half_gap = geom.gap_mm / 2.0
    hz = half_gap / round(half_gap / h)
    clear = geom.boundary_clearance_gaps * geom.gap_mm
    nxh = int(math.ceil((geom.plate_x_mm / 2.0 + clear) / h))
    nyh = int(math.ceil((geom.plate_y_mm / 2.0 + clear) / h))
    nzh = int(math.ceil((half_gap + clear) / hz))
    x = np.arange(-nxh, nxh + 1) * h
    y = np.arange(0, nyh + 1) * h
    z = np.arange(-nzh, nzh + 1) * hz
    nx, ny, nz = len(x), len(y), len(z)
    tan_b = math.tan(geom.tilt_arcmin * ARCMIN)

    phi = np.zeros((nx + 2, ny + 2, nz + 2))
    core = (slice(1, -1),) * 3
    fixed = np.zeros((nx, ny, nz), dtype=bool)
    fixed[0, :, :] = fixed[-1, :, :] = True
    fixed[:, -1, :] = True
    fixed[:, :, 0] = fixed[:, :, -1] = True

    in_plate_x = np.abs(x) <= geom.plate_x_mm / 2.0 + 1e-9
    in_plate_y = y <= geom.plate_y_mm / 2.0 + 1e-9
    kz0 = nzh  # index of z = 0
    kbot = kz0 - round(half_gap / hz)
    phi_c = phi[core]
    # bottom plate: flat, on-grid
    phi_c[np.ix_(in_plate_x, in_plate_y, [kbot])] = -geom.voltage_v / 2.0
    fixed[np.ix_(in_plate_x, in_plate_y, [kbot])] = True

    # top plate surface z_s(x); nodes straddling it get fractional arms
    cz_up = np.full((nx, ny, nz), 1.0 / hz**2)
    cz_dn = np.full((nx, ny, nz), 1.0 / hz**2)
    up_val = np.full((nx, ny, nz), np.nan)  # plate potential override above
    dn_val = np.full((nx, ny, nz), np.nan)
    vtop = geom.voltage_v / 2.0
    for i in range(nx):
        if not in_plate_x[i]:
            continue
        zs = half_gap + x[i] * tan_b
        ks = int(math.floor((zs - z[0]) / hz))
        a_up = (zs - z[ks]) / hz      # node ks sits below the surface
        if a_up < 1e-6:
            fixed[i, in_plate_y, ks] = True
            phi_c[i, in_plate_y, ks] = vtop
            continue
        # node below: shortened up arm to the plate
        cz_up[i, in_plate_y, ks] = 2.0 / (a_up * (1.0 + a_up) * hz**2)
        cz_dn[i, in_plate_y, ks] = 2.0 / (1.0 * (1.0 + a_up) * hz**2)
        up_val[i, in_plate_y, ks] = vtop
        # node above: shortened down arm
        b_dn = 1.0 - a_up
        cz_dn[i, in_plate_y, ks + 1] = 2.0 / (b_dn * (1.0 + b_dn) * hz**2)
        cz_up[i, in_plate_y, ks + 1] = 2.0 / (1.0 * (1.0 + b_dn) * hz**2)
        dn_val[i, in_plate_y, ks + 1] = vtop

    cxy = 1.0 / h**2
    csum = 4 * cxy + cz_up + cz_dn
    free = ~fixed
    ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                             indexing="ij", sparse=True)
    colors = [(((ii + jj + kk) % 2 == c) & free).astype(float) for c in (0, 1)]
    have_up = ~np.isnan(up_val)
    have_dn = ~np.isnan(dn_val)
    up_fill = np.where(have_up, up_val, 0.0)
    dn_fill = np.where(have_dn, dn_val, 0.0)
    omega = 2.0 / (1.0 + math.sin(math.pi / max(nx, ny, nz)))
    scale = geom.voltage_v / 2.0

    def stencil(p):
        pc = p[core]
        up = np.where(have_up, up_fill, p[1:-1, 1:-1, 2:])
        dn = np.where(have_dn, dn_fill, p[1:-1, 1:-1, :-2])
        lat = cxy * (p[2:, 1:-1, 1:-1] + p[:-2, 1:-1, 1:-1]
                     + p[1:-1, 2:, 1:-1] + p[1:-1, :-2, 1:-1])
        return (lat + cz_up * up + cz_dn * dn) / csum

    residual = math.inf
    for sweep in range(1, max_sweeps + 1):
        for color in colors:
            phi[:, 0, :] = phi[:, 2, :]  # mirror at y = 0
            phi_c += omega * color * (stencil(phi) - phi_c)
        if sweep % 25 == 0:
            phi[:, 0, :] = phi[:, 2, :]
            residual = float(np.abs((stencil(phi) - phi_c) * free).max()) / scale
            if residual < tol:
                break
    if residual >= tol:
        raise RuntimeError(
            f"tilted SOR did not reach tolerance {tol:g} within {max_sweeps} "
            f"sweeps (residual {residual:.3e})")

    yfull = np.concatenate([-y[::-1], y[1:]])
    pot = np.concatenate([phi_c[:, ::-1, :], phi_c[:, 1:, :]], axis=1)
    fmap = FieldMap(x, yfull, z, pot, residual, sweep, geom)
    fmap.__dict__["solve_seconds"] = time.time() - t0
    return fmap


def uniformity(fmap: FieldMap, box_mm: float, box_z_mm=None) -> float:
    """Max relative deviation of |E| from the central value over a box.

    The box spans +-box_mm in x and y and +-box_z_mm (default box_mm) in z
    about the center.
    """
    if box_mm < 0:
        raise ValueError("box extent must be >= 0")
    box_z = box_mm if box_z_mm is None else box_z_mm
    hx, hy, hz = fmap.spacing_mm
    e0 = fmap.central_field_v_per_cm
    worst = 0.0
    for xi in np.arange(0.0, box_mm + 1e-9, hx):
        for yi in np.arange(0.0, box_mm + 1e-9, hy):
            for zi in np.arange(0.0, box_z + 1e-9, hz):
                for sx in ((1,) if xi == 0 else (1, -1)):
                    for sy in ((1,) if yi == 0 else (1, -1)):
                        for sz in ((1,) if zi == 0 else (1, -1)):
                            e = fmap.field_magnitude(sx * xi, sy * yi, sz * zi)
                            worst = max(worst, abs(e - e0) / e0)
    return worst


def tilt_sensitivity(geometry: CapacitorGeometry, tilt_arcmin: float,
                     spacing_mm=None, tolerance=1e-8) -> float:
    """Relative central-field change of the tilted vs untilted capacitor at
    fixed central gap.  Both solves run at the same (default: coarsest
    admissible) spacing so discretization errors cancel in the ratio."""
    if abs(tilt_arcmin) > 60.0:
        raise ValueError("tilt limited to +-60 arcminutes")
    if spacing_mm is None:
        spacing_mm = geometry.gap_mm / 20.0
    if tilt_arcmin == 0.0:
        return 0.0
    base = replace(geometry, tilt_arcmin=0.0)
    tilted = replace(geometry, tilt_arcmin=tilt_arcmin)
    # the untilted reference runs through the same Shortley-Weller path so
    # discretization differences cancel; tilt=0 there reduces to on-grid plates
    e_base = _solve_tilted(base, spacing_mm, tolerance, 20000).central_field_v_per_cm
    e_tilt = _solve_tilted(tilted, spacing_mm, tolerance, 20000).central_field_v_per_cm
    return (e_tilt - e_base) / e_base


def export_slice_csv(fmap: FieldMap, path, plane="xy", coordinate_mm=0.0,
                     box_mm=None) -> None:
    """Write one plane of |E| as CSV rows x_mm,y_mm,z_mm,E_V_per_cm."""
    hx, hy, hz = fmap.spacing_mm
    if box_mm is None:
        sel = {"x": fmap.x_mm, "y": fmap.y_mm, "z": fmap.z_mm}
    else:
        sel = {"x": fmap.x_mm[np.abs(fmap.x_mm) <= box_mm],
               "y": fmap.y_mm[np.abs(fmap.y_mm) <= box_mm],
               "z": fmap.z_mm[np.abs(fmap.z_mm) <= box_mm]}
    axes = {"xy": (sel["x"], sel["y"], [coordinate_mm]),
            "xz": (sel["x"], [coordinate_mm], sel["z"]),
            "yz": ([coordinate_mm], sel["y"], sel["z"])}[plane]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x_mm,y_mm,z_mm,E_V_per_cm\n")
        for xv in axes[0]:
            for yv in axes[1]:
                for zv in axes[2]:
                    # interior points only; gradient needs both neighbors
                    try:
                        e = fmap.field_magnitude(xv, yv, zv)
                    except ValueError:
                        continue
                    fh.write(f"{xv:.4g},{yv:.4g},{zv:.4g},{e:.6g}\n")
