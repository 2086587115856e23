"""Command-line pipeline: simulate, extract, pump, field, and the one-shot
driver that reproduces the published analysis end to end.

One JSON config file carries verb-specific sections; physical quantities
embed their units in the key names.  Every run writes the fully resolved
configuration next to its outputs plus a run report listing every emitted
file.  Exit codes: 0 success, 2 config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .angular import Polarization, excitation_probabilities
from .extraction import (PUBLISHED_BUDGET, build_equation,
                         equations_to_text, propagate_to_alpha,
                         quadrature_budget, solve_polarizabilities)
from .field import CapacitorGeometry, solve_laplace, tilt_sensitivity, \
    uniformity, export_slice_csv
from .pumping import MagneticField, simulate_pumping, sweep_perpendicular_field, \
    sweep_to_csv
from .spectra_fit import (GROUND_STRETCHED, LineModel, SpectrumRecord,
                          fit_parabola, fit_scan_series, published_config,
                          synthesize_spectrum, track_line_centers)
from .stark import REFERENCE, FieldPoint, StarkCoefficient, predicted_p

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_DEFAULT_CONFIG = {
    "simulate": {
        "excited_level": "5D5/2",
        "polarizations": ["sigma_plus", "sigma_minus"],
        "field_kv_per_cm": [0.0, 1.5, 2.0, 2.5],
        "grid_min_mhz": -70.0,
        "grid_max_mhz": 180.0,
        "grid_step_mhz": 0.75,
        "seed": 0,
    },
    "extract": {
        "mode": "p_values",  # or "spectra"
        "p_table": [
            {"level": "5D5/2", "line_f": 4, "polarization": "sigma_plus",
             "p_mhz_per_kvcm_sq": 2.014, "sigma_p": 0.008},
            {"level": "5D5/2", "line_f": 3, "polarization": "sigma_plus",
             "p_mhz_per_kvcm_sq": 2.087, "sigma_p": 0.008},
            {"level": "5D3/2", "line_f": 3, "polarization": "sigma_plus",
             "p_mhz_per_kvcm_sq": 2.066, "sigma_p": 0.008},
            {"level": "5D3/2", "line_f": 2, "polarization": "sigma_minus",
             "p_mhz_per_kvcm_sq": 2.158, "sigma_p": 0.009},
        ],
        "dominant_only": True,
        "spectra_dir": None,
        "line_model": "lorentz_convolved",
    },
    "pump": {
        "b_gauss_sweep": [0.0, 0.1, 0.3, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0],
        "trace_b_gauss": 0.3,
        "pump_duration_ns": 500.0,
        "free_duration_ns": 100.0,
        "dt_ns": 1.0,
    },
    "field": {
        "voltage_v": 1000.0,
        "gap_mm": 9.88,
        "spacing_mm": 0.25,
        "tolerance": 1e-8,
        "uniformity_box_mm": 1.0,
        "tilt_arcmin": 15.0,
        "tilt_check": False,
    },
    "paper": {
        "field_spacing_mm": 0.494,
        "seed": 0,
    },
}


class ConfigError(Exception):
    pass


def _merge_section(defaults: dict, user: dict, verb: str) -> dict:
    unknown = set(user) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in [{verb}]: {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(user)
    return merged


def load_config(path, verb: str) -> dict:
    user = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        unknown_verbs = set(user) - set(_DEFAULT_CONFIG)
        if unknown_verbs:
            raise ConfigError(f"unknown config sections: {sorted(unknown_verbs)}")
    return _merge_section(_DEFAULT_CONFIG[verb], user.get(verb, {}), verb)


class RunReport:
    """Accumulates the output manifest and timing for one verb."""

    def __init__(self, verb, out_dir: Path, resolved_config):
        self.verb = verb
        self.out_dir = out_dir
        self.resolved = resolved_config
        self.outputs = []
        self.warnings = []
        self.t0 = time.time()

    def emit(self, name, writer) -> Path:
        path = self.out_dir / name
        writer(path)
        self.outputs.append(name)
        return path

    def finalize(self) -> Path:
        digest = hashlib.sha256(
            json.dumps(self.resolved, sort_keys=True).encode()).hexdigest()
        echo = self.out_dir / "resolved_config.json"
        with open(echo, "w", encoding="utf-8") as fh:
            json.dump({self.verb: self.resolved}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.outputs.append("resolved_config.json")
        report = {
            "verb": self.verb,
            "package_version": __version__,
            "config_digest_sha256": digest,
            "outputs": sorted(self.outputs),
            "elapsed_s": round(time.time() - self.t0, 3),
            "warnings": self.warnings,
        }
        path = self.out_dir / "run_report.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
        return path


_POL = {"sigma_plus": Polarization.SIGMA_PLUS,
        "sigma_minus": Polarization.SIGMA_MINUS}

_LINE_FS = {"5D5/2": {"sigma_plus": 4, "sigma_minus": 3},
            "5D3/2": {"sigma_plus": 3, "sigma_minus": 2}}


def _alphas(level):
    return REFERENCE.ground_5p32, REFERENCE.measured_5d[level]


def run_simulate(cfg, report: RunReport) -> None:
    level = cfg["excited_level"]
    seed = cfg["seed"]
    grid = np.arange(cfg["grid_min_mhz"], cfg["grid_max_mhz"] + 1e-9,
                     cfg["grid_step_mhz"])
    ground_alpha, excited_alpha = _alphas(level)
    n = 0
    for pol_name in cfg["polarizations"]:
        pol = _POL[pol_name]
        config = published_config(level, pol)
        for e_kv in cfg["field_kv_per_cm"]:
            rec = synthesize_spectrum(config, FieldPoint.from_kv_per_cm(e_kv),
                                      grid, ground_alpha, excited_alpha,
                                      seed=seed + n)
            tag = level.replace("/", "_")
            name = f"spectrum_{tag}_{pol_name}_{e_kv:g}kVcm.csv"
            report.emit(name, rec.to_csv)
            n += 1


def _extract_from_p_table(cfg):
    ground = (REFERENCE.ground_5p32, GROUND_STRETCHED)
    equations = []
    for row in cfg["p_table"]:
        level = row["level"]
        config = published_config(level, _POL[row["polarization"]])
        p = StarkCoefficient(row["p_mhz_per_kvcm_sq"], row.get("sigma_p", 0.0))
        equations.append(build_equation(p, level, config, ground, row["line_f"],
                                        dominant_only=cfg["dominant_only"]))
    return equations


def _extract_from_spectra(cfg):
    """Fit every spectrum CSV in spectra_dir and build the p equations.

    File names follow run_simulate's pattern, which encodes level,
    polarization and field.  Scans of one (level, polarization) are fitted
    field-ascending with peak tracking; the tracked line's shift vs the
    zero-field scan feeds the parabola fit.
    """
    spectra_dir = Path(cfg["spectra_dir"])
    model = LineModel(cfg["line_model"])
    ground = (REFERENCE.ground_5p32, GROUND_STRETCHED)
    scans = {}
    for path in sorted(spectra_dir.glob("spectrum_*.csv")):
        stem = path.stem.split("_")
        level = stem[1] + "/" + stem[2]
        pol_name = "_".join(stem[3:5])
        e_kv = float(stem[5].replace("kVcm", ""))
        scans.setdefault((level, pol_name), []).append(
            (e_kv, SpectrumRecord.from_csv(path)))
    if not scans:
        raise ConfigError(f"no spectrum_*.csv files in {spectra_dir}")
    equations = []
    for (level, pol_name), rows in sorted(scans.items()):
        rows.sort(key=lambda r: r[0])
        config = published_config(level, _POL[pol_name])
        offsets = sorted(config.hyperfine_splittings.values())
        fits = fit_scan_series([rec for _, rec in rows], model,
                               seed_centers=tuple(offsets))
        line_f = _LINE_FS[level][pol_name]
        offset = config.hyperfine_splittings[line_f]
        tracked = track_line_centers(fits, offset)
        series = [(e_kv, center, sigma)
                  for (e_kv, _), (center, sigma) in zip(rows, tracked)]
        zeros = [r for r in series if r[0] == 0.0]
        if not zeros:
            raise ValueError("no field lever arm")
        c0, s0 = zeros[0][1], zeros[0][2]
        pts = [(e, c - c0, (s**2 + s0**2) ** 0.5)
               for e, c, s in series if e != 0.0]
        if not pts:
            raise ValueError("no field lever arm")
        coeff = fit_parabola(pts)
        equations.append(build_equation(coeff, level, config, ground, line_f))
    return equations


def run_extract(cfg, report: RunReport) -> None:
    if cfg["mode"] == "p_values":
        equations = _extract_from_p_table(cfg)
    elif cfg["mode"] == "spectra":
        equations = _extract_from_spectra(cfg)
    else:
        raise ConfigError(f"unknown extract mode {cfg['mode']!r}")
    report.emit("equations.jsonl", lambda p: equations_to_text(equations, p))
    result = solve_polarizabilities(equations)
    final = propagate_to_alpha(result, PUBLISHED_BUDGET)
    report.emit("alpha_table.csv", final.to_csv)

    def write_p_table(path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("level,weighted_tensor_factor,p_mhz_per_kvcm_sq,sigma_p\n")
            for eq in equations:
                fh.write(f"{eq.excited_level},{eq.mean_tensor_factor:.6g},"
                         f"{eq.p.p:.6g},{eq.p.sigma_p:.6g}\n")

    report.emit("p_table.csv", write_p_table)


def run_pump(cfg, report: RunReport) -> None:
    if not cfg["b_gauss_sweep"]:
        raise ConfigError("b_gauss_sweep must be nonempty")
    kwargs = dict(pump_duration_ns=cfg["pump_duration_ns"],
                  free_duration_ns=cfg["free_duration_ns"],
                  dt_ns=cfg["dt_ns"])
    trace = simulate_pumping(MagneticField(cfg["trace_b_gauss"]), **kwargs)
    report.emit(f"pump_trace_{cfg['trace_b_gauss']:g}G.csv", trace.to_csv)
    sweep = sweep_perpendicular_field(cfg["b_gauss_sweep"], **kwargs)
    report.emit("pump_sweep.csv", lambda p: sweep_to_csv(sweep, p))


def run_field(cfg, report: RunReport) -> None:
    geom = CapacitorGeometry(gap_mm=cfg["gap_mm"], voltage_v=cfg["voltage_v"])
    fmap = solve_laplace(geom, cfg["spacing_mm"], cfg["tolerance"])
    central = fmap.central_field_v_per_cm
    uni = uniformity(fmap, cfg["uniformity_box_mm"])
    lines = {
        "central_field_v_per_cm": central,
        "nominal_v_over_l_v_per_cm": geom.nominal_field_v_per_cm,
        "central_vs_nominal_percent":
            100.0 * (central - geom.nominal_field_v_per_cm)
            / geom.nominal_field_v_per_cm,
        "uniformity_box_mm": cfg["uniformity_box_mm"],
        "uniformity_max_deviation_percent": 100.0 * uni,
        "residual": fmap.residual,
        "sweeps": fmap.sweeps,
    }
    if cfg["tilt_check"]:
        sens = tilt_sensitivity(geom, cfg["tilt_arcmin"])
        lines["tilt_arcmin"] = cfg["tilt_arcmin"]
        lines["tilt_central_field_change_percent"] = 100.0 * sens

    def write_report(path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(lines, fh, indent=2)
            fh.write("\n")

    report.emit("field_report.json", write_report)
    for plane in ("xy", "xz"):
        report.emit(f"field_slice_{plane}.csv",
                    lambda p, pl=plane: export_slice_csv(fmap, p, plane=pl,
                                                         box_mm=5.0))


def run_paper(cfg, report: RunReport) -> None:
    """Full reproduction bundle: probability table, forward sensitivities,
    budget, extraction, pump thresholds, and the field report."""
    ground = (REFERENCE.ground_5p32, GROUND_STRETCHED)

    def write_probabilities(path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("level,F,mF,polarization,excitation_probability\n")
            for level in ("5D5/2", "5D3/2"):
                for pol_name, pol in _POL.items():
                    probs = excitation_probabilities(published_config(level, pol))
                    for s, pr in sorted(probs.items(),
                                        key=lambda kv: -kv[1]):
                        if pr < 1e-4:
                            continue
                        fh.write(f"{level},{s.f},{s.mf},{pol_name},{pr:.4f}\n")

    report.emit("excitation_probabilities.csv", write_probabilities)

    eq_cfg = _DEFAULT_CONFIG["extract"]
    equations = _extract_from_p_table(eq_cfg)

    def write_p(path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("level,line_f,measured_p,predicted_p,excess_percent\n")
            for row, eq in zip(eq_cfg["p_table"], equations):
                level = row["level"]
                top = max(eq.sublevel_weights, key=eq.sublevel_weights.get)
                pred = predicted_p((REFERENCE.ground_5p32, GROUND_STRETCHED),
                                   (REFERENCE.measured_5d[level], top)).p
                meas = row["p_mhz_per_kvcm_sq"]
                fh.write(f"{level},{row['line_f']},{meas:.4f},{pred:.4f},"
                         f"{100 * (pred - meas) / meas:+.2f}\n")

    report.emit("p_predictions.csv", write_p)

    result = propagate_to_alpha(solve_polarizabilities(equations), PUBLISHED_BUDGET)
    report.emit("alpha_table.csv", result.to_csv)

    def write_budget(path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("effect,uncertainty_percent\n")
            b = PUBLISHED_BUDGET
            for name in ("statistical", "field_determination",
                         "residual_magnetic_field", "line_shape_model",
                         "optical_pumping", "probe_polarization", "ac_stark"):
                fh.write(f"{name},{getattr(b, name)}\n")
            fh.write(f"sum_quadrature,{quadrature_budget(b):.4f}\n")

    report.emit("uncertainty_budget.csv", write_budget)

    sweep = sweep_perpendicular_field(_DEFAULT_CONFIG["pump"]["b_gauss_sweep"])
    report.emit("pump_sweep.csv", lambda p: sweep_to_csv(sweep, p))

    field_cfg = dict(_DEFAULT_CONFIG["field"])
    field_cfg["spacing_mm"] = cfg["field_spacing_mm"]
    run_field(field_cfg, report)


def _plot_outputs(out_dir: Path, report: RunReport) -> None:
    """Optional SVG renderings of the emitted CSVs; CSV stays authoritative."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for csv_path in sorted(out_dir.glob("spectrum_*.csv")):
        rec = SpectrumRecord.from_csv(csv_path)
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(rec.detunings, rec.counts, lw=0.8)
        ax.set_xlabel("detuning (MHz)")
        ax.set_ylabel("counts")
        fig.tight_layout()
        name = csv_path.stem + ".svg"
        fig.savefig(out_dir / name)
        plt.close(fig)
        report.outputs.append(name)
    sweep_path = out_dir / "pump_sweep.csv"
    if sweep_path.exists():
        data = np.genfromtxt(sweep_path, delimiter=",", names=True)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(np.atleast_1d(data["B_gauss"]),
                np.atleast_1d(data["final_stretched_fraction"]), "o-")
        ax.set_xlabel("B (gauss)")
        ax.set_ylabel("stretched fraction")
        fig.tight_layout()
        fig.savefig(out_dir / "pump_sweep.svg")
        plt.close(fig)
        report.outputs.append("pump_sweep.svg")


_RUNNERS = {
    "simulate": run_simulate,
    "extract": run_extract,
    "pump": run_pump,
    "field": run_field,
    "paper": run_paper,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rb5d-stark",
        description="Stark-spectroscopy toolkit for the Rb 5D polarizabilities")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in _RUNNERS:
        p = sub.add_parser(verb)
        p.add_argument("--config", type=Path, default=None,
                       help="JSON config with verb sections")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured random seed")
        p.add_argument("--out", type=Path, default=Path("out"),
                       help="output directory (created if missing)")
        p.add_argument("--plot", action="store_true",
                       help="also emit SVG plots of the CSV outputs")
    symbols = sub.add_parser("symbols",
                             help="debug: print a Wigner 3-j or 6-j value")
    symbols.add_argument("kind", choices=["3j", "6j"])
    symbols.add_argument("args", nargs=6, type=Fraction,
                         help="six half-integers, e.g. 3/2 5/2 1 4 3 3/2")
    return parser


def _run_symbols(args) -> int:
    from .angular import wigner_3j, wigner_6j
    fn = wigner_3j if args.kind == "3j" else wigner_6j
    try:
        value = fn(*args.args)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{value:.15g}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "symbols":
        return _run_symbols(args)
    try:
        cfg = load_config(args.config, args.verb)
        if args.seed is not None and "seed" in cfg:
            cfg["seed"] = args.seed
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        probe = args.out / ".write_probe"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        print(f"config error: output directory unusable: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = RunReport(args.verb, args.out, cfg)
    try:
        _RUNNERS[args.verb](cfg, report)
        if args.plot:
            _plot_outputs(args.out, report)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        report.warnings.append(str(exc))
        report.finalize()
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    report.finalize()
    print(f"{args.verb}: wrote {len(report.outputs) + 1} files to {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
