"""Batch command-line front end.

    peitsim <modes|profile|sweep|cool|thermo> (--config FILE | --preset NAME) [--out DIR] [--threads N]

Each run writes <command>.csv (plus auxiliary tables) and <command>.json into --out.
Exit codes: 0 success, 2 configuration error, 3 numerical-accuracy failure,
4 physics-regime violation.
"""

from __future__ import annotations

import argparse
import math
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cf
from . import cooling, io, modes, rates, thermometry
from .errors import (ConfigError, DimensionCapError, DomainError,
                     IntegrationAccuracyError, PoleError, RegimeViolation, SolverFailure,
                     SteadyStateAmbiguity, StructuralInstability)
from .units import mhz, to_mhz

EXIT_OK, EXIT_CONFIG, EXIT_ACCURACY, EXIT_REGIME = 0, 2, 3, 4
COMMANDS = ("modes", "profile", "sweep", "cool", "thermo")


@dataclass
class Bundle:
    """Tables keyed by file stem plus the JSON report."""

    tables: dict
    report: dict
    flags: dict = field(default_factory=dict)
    violation: str | None = None


# ---------------------------------------------------------------- modes

def cmd_modes(cfg: cf.ModesRun, threads: int = 1) -> Bundle:
    chain = cfg.chain.build()
    branches = modes.full_spectrum(chain)
    wz = chain.trap_frequencies[0]
    n = chain.ion_count
    cols = {"axis": [], "index": [], "label": [], "frequency_mhz": [], "ratio_to_axial": []}
    for j in range(n):
        cols[f"b_{j}"] = []
    if cfg.wavevector_per_um is not None:
        for j in range(n):
            cols[f"eta_{j}"] = []
    for ax, br in zip("zxy", branches):
        if cfg.wavevector_per_um is not None:
            br = br.with_lamb_dicke(cfg.wavevector_per_um["zxy".index(ax)], chain.mass)
        labels = br.labels()
        for k in range(br.frequencies.size):
            cols["axis"].append(ax)
            cols["index"].append(k)
            cols["label"].append(labels[k])
            cols["frequency_mhz"].append(to_mhz(br.frequencies[k]))
            cols["ratio_to_axial"].append(br.frequencies[k] / wz)
            for j in range(n):
                cols[f"b_{j}"].append(br.eigenvectors[j, k])
                if br.lamb_dicke is not None:
                    cols[f"eta_{j}"].append(br.lamb_dicke[j, k])
    eq = modes.equilibrium_positions(chain)
    report = {"equilibrium_positions_scaled": eq.positions, "residual_force": eq.residual_force,
              "newton_iterations": eq.iterations, "length_scale_m": chain.length_scale}
    return Bundle({"modes": cols}, report)


# ---------------------------------------------------------------- profile

def cmd_profile(cfg: cf.ProfileRun, threads: int = 1) -> Bundle:
    atom = cfg.atom.build()
    drive = cfg.driving.build()
    dac = rates.ac_stark_shift(drive).exact
    grid = cfg.grid.values_mhz()
    cols = {"probe_detuning_mhz": grid}
    tones = []
    for i, t in enumerate(cfg.tones):
        if t.detuning_mhz is not None:
            det = mhz(t.detuning_mhz)
        else:
            det = rates.optimal_probe_detuning(mhz(t.resonant_mode_mhz), dac, drive.detuning)
        tones.append((mhz(t.rabi_mhz), det))
        cols[f"scatter_tone{i}_per_us"] = cooling.absorption_profile(drive, atom, mhz(grid), mhz(t.rabi_mhz))
    # marker rows: each tone's carrier and its sidebands for every listed mode
    mk = {"tone": [], "kind": [], "mode_mhz": [], "probe_detuning_mhz": [], "scatter_per_us": []}
    for i, (rabi, det) in enumerate(tones):
        points = [("carrier", math.nan, det)]
        for f in cfg.sideband_modes_mhz:
            points += [("red", f, det + mhz(f)), ("blue", f, det - mhz(f))]
        for kind, f, d in points:
            val = cooling.absorption_profile(drive, atom, [d], rabi)[0]
            mk["tone"].append(i)
            mk["kind"].append(kind)
            mk["mode_mhz"].append(f)
            mk["probe_detuning_mhz"].append(to_mhz(d))
            mk["scatter_per_us"].append(val)
    first = cols["scatter_tone0_per_us"]
    report = {
        "driving_rabi_mhz": to_mhz(drive.rabi),
        "ac_stark_mhz": to_mhz(dac),
        "tone_detunings_mhz": [to_mhz(d) for _, d in tones],
        "peak_detuning_mhz": float(grid[int(np.argmax(first))]),
        "expected_peak_mhz": to_mhz(drive.detuning + dac),
    }
    return Bundle({"profile": cols, "markers": mk}, report,
                  {"marker_convention": "red sideband at carrier + w (probe photon supplies less energy)"})


# ---------------------------------------------------------------- sweep

def cmd_sweep(cfg: cf.SweepRun, threads: int = 1) -> Bundle:
    atom = cfg.atom.build()
    eta1 = cfg.eta_at_1mhz
    res = rates.sweep_mode_frequency(mhz(cfg.omega.values_mhz()), mhz(cfg.ac_stark_mhz),
                                     mhz(cfg.driving_detuning_mhz), mhz(cfg.probe_rabi_mhz), atom,
                                     lambda w: eta1 / math.sqrt(to_mhz(w)))
    cols = {
        "omega_mhz": to_mhz(res.omega),
        "eta": res.eta,
        "peit_probe_detuning_mhz": to_mhz(res.peit_detuning),
        "peit_n_ss": res.peit_n_ss,
        "peit_w_per_us": res.peit_w,
        "eit_n_ss": res.eit_n_ss,
        "eit_w_per_us": res.eit_w,
    }
    p = res.peit_n_ss[np.isfinite(res.peit_n_ss)]
    e = res.eit_n_ss[np.isfinite(res.eit_n_ss)]
    report = {
        "failed_points": [list(x) for x in res.errors],
        "peit_max_over_min": float(p.max() / p.min()) if p.size else math.nan,
        "eit_min_omega_mhz": float(cols["omega_mhz"][int(np.nanargmin(res.eit_n_ss))]) if e.size else math.nan,
    }
    return Bundle({"sweep": cols}, report, {"eta_rule": f"eta = {eta1} / sqrt(omega_mhz)",
                                            "eta_split": "eta_g = eta_r = eta/2"})


# ---------------------------------------------------------------- cool

def _cooling_config(cfg: cf.CoolRun) -> cooling.CoolingConfig:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", cooling.RegimeWarning)
        cc = cooling.CoolingConfig(cfg.driving.build(), tuple(p.build() for p in cfg.probes),
                                   cfg.atom.build(), mhz(cfg.mismatch_mhz))
    if not cc.regime_ok:
        raise RegimeViolation("probe-to-driving Rabi ratio above 0.3")
    return cc


def build_cool_model(cfg: cf.CoolRun, subset=None):
    cc = _cooling_config(cfg)
    m = cfg.model
    fock = dict(cfg.fock_dims)
    if m.kind == "single":
        return cooling.build_single_mode_model(cc, mhz(m.mode_mhz), m.eta_g, m.eta_r, fock.get("mode"),
                                               cfg.nbar0, m.fock_state, m.exact_displacement,
                                               tail=cfg.truncation_tail, max_dim=cfg.max_dim)
    if m.kind == "2d":
        return cooling.build_2d_model(cc, mhz(m.omega_z_mhz), mhz(m.omega_x_mhz), m.eta_gz, m.eta_gx,
                                      cfg.nbar0, tuple(subset or m.modes), fock, m.effective,
                                      max_dim=cfg.max_dim)
    chain = modes.ChainConfig.from_mhz(2, m.chain_trap_mhz)
    return cooling.build_two_ion_model(cc, modes.axial_modes(chain), (m.eta_com, m.eta_stretch), cfg.nbar0,
                                       tuple(subset or m.modes), fock, m.effective, max_dim=cfg.max_dim)


def _cool_once(cfg: cf.CoolRun, subset=None):
    model = build_cool_model(cfg, subset)
    w_est = model.meta["w_estimate"]
    if cfg.t_max_us is not None:
        t_max = cfg.t_max_us
    else:
        w = min(v for v in w_est.values())
        if not (np.isfinite(w) and w > 0):
            raise RegimeViolation("analytic estimate predicts no cooling; set t_max_us explicitly")
        t_max = cfg.t_max_cooling_times / w
    return cooling.simulate_cooling(model, t_max, cfg.samples)


def _fit_report(run):
    return {name: {"w_per_us": f.w, "n_ss": f.n_ss, "n0": f.n0, "residual_rms": f.residual_rms,
                   "t_start_us": f.t_start, "quality_ok": f.quality_ok}
            for name, f in run.fits.items()}


def cmd_cool(cfg: cf.CoolRun, threads: int = 1) -> Bundle:
    run = _cool_once(cfg)
    cols = {"time_us": run.times}
    for name, series in run.n.items():
        cols[f"n_{name}"] = series
    report = {
        "model": {k: v for k, v in run.description.items()},
        "fits": _fit_report(run),
        "truncation_tail": run.tail,
        "final_total_n": run.total_final,
        "engine": run.diagnostics,
    }
    if cfg.single_mode_reference and len(run.n) > 1:
        refs = {}
        names = list(run.n)
        with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
            outs = list(ex.map(lambda nm: _cool_once(cfg, [nm]), names))
        for nm, r in zip(names, outs):
            refs[nm] = {"fit": _fit_report(r)[nm], "rate_ratio": run.fits[nm].w / r.fits[nm].w,
                        "engine": r.diagnostics}
        report["single_mode_reference"] = refs
    try:
        cooling.check_cooling(run)
        violation = None
    except RegimeViolation as exc:
        violation = str(exc)
    report["regime_violation"] = violation
    return Bundle({"cool": cols}, report, {
        "recoil": "LD second-order jumps" if cfg.model.kind == "single" else "none (dressed model)",
        "initial_state": f"thermal nbar0={cfg.nbar0}" if getattr(cfg.model, "fock_state", None) is None
        else f"Fock {cfg.model.fock_state}",
        "mismatch_sign": "+eps on tone 0, -eps on tone 1, alternating",
    }, violation)


# ---------------------------------------------------------------- thermo

def _factor_jobs(cfg: cf.ThermoRun):
    chain = cfg.chain.build()
    branches = dict(zip("zxy", modes.full_spectrum(chain)))
    jobs = []
    for ax in cfg.branches:
        br = branches[ax].with_lamb_dicke(cfg.wavevector_per_um, chain.mass)
        idx = cfg.mode_indices if cfg.mode_indices is not None else range(br.frequencies.size)
        for k in idx:
            jobs.append((ax, k, thermometry.ThermometrySetup(br, k, mhz(cfg.rabi_mhz), 0.5, None,
                                                             cfg.observable, cfg.truncation_tail)))
    return jobs


def cmd_thermo(cfg: cf.ThermoRun, threads: int = 1) -> Bundle:
    tables, report = {}, {}
    if cfg.chain is not None:
        jobs = _factor_jobs(cfg)
        with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
            facs = list(ex.map(lambda j: thermometry.correction_factor(j[2], cfg.nbar_grid), jobs))
        cols = {"axis": [], "index": [], "label": [], "frequency_mhz": [], "factor": [],
                "uncertainty": [], "r_squared": []}
        for (ax, k, s), f in zip(jobs, facs):
            cols["axis"].append(ax)
            cols["index"].append(k)
            cols["label"].append(f.label)
            cols["frequency_mhz"].append(to_mhz(s.modes.frequencies[k]))
            cols["factor"].append(f.value)
            cols["uncertainty"].append(f.uncertainty)
            cols["r_squared"].append(f.r_squared)
        tables["thermo"] = cols
        report["asymmetry"] = {f"{ax}{k}": list(f.asymmetry) for (ax, k, _), f in zip(jobs, facs)}
        report["pi_times_us"] = {f"{ax}{k}": list(f.pi_times) for (ax, k, _), f in zip(jobs, facs)}
        report["engine"] = {"norm_drift": max(f.norm_drift for f in facs),
                            "thermal_weight_lost": max(f.weight_lost for f in facs)}
    factor = cfg.factor if cfg.factor is not None else 1.0
    amps = None
    if cfg.traces is not None:
        fits = {}
        for side in ("blue", "red"):
            t, y = io.read_trace(getattr(cfg.traces, f"{side}_csv"))
            fits[side] = thermometry.fit_rabi_trace(t, y)
        amps = {k: v.amplitude for k, v in fits.items()}
        report["trace_fits"] = {k: vars(v) for k, v in fits.items()}
    elif cfg.amplitudes is not None:
        amps = dict(cfg.amplitudes)
    if amps is not None:
        nbar = thermometry.asymmetry_estimate(amps["blue"], amps["red"], factor)
        report["estimate"] = {"amplitude_blue": amps["blue"], "amplitude_red": amps["red"],
                              "factor": factor, "nbar": nbar}
        tables["estimate"] = {"amplitude_blue": [amps["blue"]], "amplitude_red": [amps["red"]],
                              "factor": [factor], "nbar": [nbar]}
    if not tables:
        raise ConfigError("thermo needs a chain (factor table) or amplitudes/traces (estimate)")
    return Bundle(tables, report, {"observable": cfg.observable,
                                   "pi_time": "first local maximum of the thermal blue signal",
                                   "fit": "through origin", "nbar_grid": cfg.nbar_grid})


HANDLERS = {"modes": cmd_modes, "profile": cmd_profile, "sweep": cmd_sweep, "cool": cmd_cool,
            "thermo": cmd_thermo}


def run(command: str, cfg, out: Path, threads: int = 1) -> Bundle:
    bundle = HANDLERS[command](cfg, threads)
    out.mkdir(parents=True, exist_ok=True)
    for stem, cols in bundle.tables.items():
        io.write_csv(out / f"{stem}.csv", cols)
    io.write_metadata(out / f"{command}.json", command, cfg.model_dump(mode="json"), bundle.report,
                      bundle.flags)
    return bundle


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="peitsim", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        src = s.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", type=Path, help="YAML run configuration")
        src.add_argument("--preset", help="name of a bundled preset")
        s.add_argument("--out", type=Path, default=Path("peitsim-out"), help="output directory")
        s.add_argument("--threads", type=int, default=1, help="workers for independent sub-runs")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.config is not None:
            cfg = cf.load_config(args.config, args.command)
        else:
            cfg = cf.load_preset(args.preset, args.command)
        bundle = run(args.command, cfg, args.out, args.threads)
    except (ConfigError, DimensionCapError, DomainError, PoleError, StructuralInstability,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationAccuracyError, SolverFailure, SteadyStateAmbiguity) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_ACCURACY
    except RegimeViolation as exc:
        print(f"regime violation: {exc}", file=sys.stderr)
        return EXIT_REGIME
    for stem in bundle.tables:
        print(args.out / f"{stem}.csv")
    print(args.out / f"{args.command}.json")
    if bundle.violation:
        print(f"regime violation: {bundle.violation}", file=sys.stderr)
        return EXIT_REGIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
