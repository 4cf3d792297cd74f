"""Cooling models built on the Lindblad engine, trajectory fitting and absorption profiles."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm
from scipy.optimize import least_squares

from . import lindblad as lb
from .errors import FitQualityWarning, PoleError, RegimeViolation
from .modes import ModeStructure
from .rates import AtomParams, LaserTone, dressed_state, rates

G, E, R = 0, 1, 2       # three-level indices
P = 1                   # |+> in the dressed two-level basis
PROBE_TO_DRIVE_LIMIT = 0.3


class RegimeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CoolingConfig:
    """One driving tone, one or more probe tones; mismatch eps is added to probe l's
    detuning with sign +, -, +, ... along the tone list."""

    driving: LaserTone
    probes: tuple[LaserTone, ...]
    atom: AtomParams
    mismatch: float = 0.0

    def __post_init__(self):
        probes = tuple(self.probes)
        if not probes:
            raise ValueError("at least one probe tone is required")
        object.__setattr__(self, "probes", probes)
        if not self.regime_ok:
            warnings.warn("probe Rabi frequency exceeds 0.3 of the driving Rabi frequency", RegimeWarning,
                          stacklevel=2)

    @property
    def regime_ok(self) -> bool:
        if self.driving.rabi == 0:
            return False
        return all(p.rabi / self.driving.rabi <= PROBE_TO_DRIVE_LIMIT for p in self.probes)

    def probe_detunings(self) -> list[float]:
        return [p.detuning + (1 if l % 2 == 0 else -1) * self.mismatch for l, p in enumerate(self.probes)]


def _fock_dim(nbar, fock_dim, tail):
    return int(fock_dim) if fock_dim else lb.fock_truncation(nbar, tail)


def _motional_state(d, nbar=None, fock=None):
    if fock is not None:
        if not 0 <= fock < d:
            raise ValueError("Fock state outside the truncation")
        v = np.zeros(d)
        v[fock] = 1
        return np.diag(v).astype(complex), 0.0
    p, lost = lb.thermal_populations(nbar, d)
    return np.diag(p).astype(complex), lost


# ---------------------------------------------------------------- single mode, three levels

def build_single_mode_model(config: CoolingConfig, mode_freq, eta_g, eta_r, fock_dim=None, nbar0=1.0,
                            fock_state=None, exact_displacement=False, axis=0, tail=1e-4,
                            max_dim=lb.DENSITY_CAP) -> lb.QuantumModel:
    """|g>,|e>,|r> x Fock(w) in the frame where the detunings are static.

    Recoil: per decay branch j, jumps sqrt(gamma_j)|j><e| and sqrt(gamma_j alpha) eta_j |j><e| X.
    """
    if len(config.probes) != 1:
        raise ValueError("single-mode model takes exactly one probe tone")
    probe, drive, atom = config.probes[0], config.driving, config.atom
    dg = config.probe_detunings()[0]
    dgr = dg - drive.detuning
    d = _fock_dim(nbar0, fock_dim, tail)
    layout = lb.HilbertLayout((3, d), ("atom", "mode"))
    ops = lb.build_operators(layout)
    a = lb.Operators.local_destroy(d)
    x = (a + a.conj().T).toarray()
    eye = np.eye(d)
    if exact_displacement:
        kg = expm(1j * eta_g * probe.cos(axis) * x)
        kr = expm(1j * eta_r * drive.cos(axis) * x)
    else:
        kg = eye + 1j * eta_g * probe.cos(axis) * x
        kr = eye + 1j * eta_r * drive.cos(axis) * x

    def atom_op(i, j):
        m = np.zeros((3, 3))
        m[i, j] = 1
        return m

    h0 = (-dg * ops.projector(0, E) - dgr * ops.projector(0, R) + mode_freq * ops.number(1))
    v = (probe.rabi / 2 * ops.embed_many({0: atom_op(E, G), 1: kg})
         + drive.rabi / 2 * ops.embed_many({0: atom_op(E, R), 1: kr}))
    terms = [lb.OperatorTerm(h0), lb.OperatorTerm.oscillating(v, 0.0)]
    jumps = []
    for j, gj, ej in ((G, atom.gamma_g, eta_g), (R, atom.gamma_r, eta_r)):
        jumps.append((ops.transition(0, j, E), gj))
        jumps.append((ops.embed_many({0: atom_op(j, E), 1: x}), gj * atom.alpha * ej**2))
    atom_rho = np.zeros((3, 3), dtype=complex)
    atom_rho[G, G] = 1
    mot, lost = _motional_state(d, nbar0, fock_state)
    try:
        w_est = rates(mode_freq, LaserTone(probe.rabi, dg, probe.axis_projection), drive, atom,
                      eta_g, eta_r, axis).w
    except PoleError:
        w_est = math.nan
    meta = {
        "kind": "single-mode",
        "modes": {"mode": 1},
        "fock_dims": {"mode": d},
        "w_estimate": {"mode": w_est},
        "n0": {"mode": float(np.real(np.trace(mot @ np.diag(np.arange(d)))))},
        "thermal_weight_lost": {"mode": lost},
        "exact_displacement": bool(exact_displacement),
    }
    return lb.QuantumModel(layout, tuple(terms), tuple(jumps), np.kron(atom_rho, mot), max_dim, meta)


# ---------------------------------------------------------------- dressed multimode models

@dataclass(frozen=True)
class DressedMode:
    """A motional mode seen by the dressed-state model; eta holds eta_jk per ion."""

    name: str
    frequency: float
    eta: tuple[float, ...]
    nbar0: float = 2.0
    fock_dim: int | None = None


def build_dressed_model(config: CoolingConfig, modes: Sequence[DressedMode], ion_count: int = 1,
                        effective: bool = True, cutoff: float | None = None, tail: float = 1e-4,
                        max_dim: int = lb.DENSITY_CAP) -> lb.QuantumModel:
    """{|g>,|+>} per ion x Fock modes, interaction picture, first-order Lamb-Dicke.

    Probe l's projection onto mode k is probes[l].axis_projection[k] (a single value is
    shared by all modes). With effective=True only terms oscillating slower than cutoff
    (default: a quarter of the lowest mode frequency) are kept.
    """
    modes = list(modes)
    atom, drive = config.atom, config.driving
    ds = dressed_state(drive, atom.gamma)
    sphi = math.sin(ds.mixing_angle)
    dims = [_fock_dim(m.nbar0, m.fock_dim, tail) for m in modes]
    layout = lb.HilbertLayout((2,) * ion_count + tuple(dims),
                              tuple(f"ion{j}" for j in range(ion_count)) + tuple(m.name for m in modes))
    if layout.total_dim > max_dim:
        raise lb.DimensionCapError(f"total dimension {layout.total_dim} exceeds cap {max_dim}")
    ops = lb.build_operators(layout)
    if cutoff is None:
        cutoff = min(m.frequency for m in modes) / 4 if modes else math.inf
    raise_pg = np.array([[0, 0], [1, 0]], dtype=complex)   # |+><g|
    pieces = []     # (one-sided matrix, frequency)
    detunings = config.probe_detunings()
    for l, probe in enumerate(config.probes):
        nu = -(detunings[l] - drive.detuning) + ds.ac_stark
        half = probe.rabi * sphi / 2
        proj = probe.axis_projection
        for j in range(ion_count):
            sig = ops.embed(raise_pg, j)
            pieces.append((half * sig, nu))
            for k, m in enumerate(modes):
                c = proj[k] if len(proj) > 1 else proj[0]
                g = half * m.eta[j] * c
                if g == 0:
                    continue
                a = ops.destroy(ion_count + k)
                pieces.append((1j * g * (sig @ a), nu - m.frequency))
                pieces.append((1j * g * (sig @ a.conj().T), nu + m.frequency))
    kept, dropped = [], 0
    for mat, nu in pieces:
        if effective and abs(nu) > cutoff:
            dropped += 1
            continue
        kept.append((mat, nu))
    # merge pieces that share a frequency so static parts form one Hermitian term
    merged: dict[float, sp.csr_matrix] = {}
    for mat, nu in kept:
        merged[nu] = merged[nu] + mat if nu in merged else mat
    terms = tuple(lb.OperatorTerm.oscillating(mat, nu) for nu, mat in sorted(merged.items()))
    jumps = tuple((ops.embed(raise_pg.T.copy(), j), ds.effective_linewidth) for j in range(ion_count))
    rho = np.zeros((2, 2), dtype=complex)
    rho[0, 0] = 1
    factors = [rho] * ion_count
    lost = {}
    n0 = {}
    for m, d in zip(modes, dims):
        mot, lost[m.name] = _motional_state(d, m.nbar0)
        n0[m.name] = float(np.real(np.trace(mot @ np.diag(np.arange(d)))))
        factors.append(mot)
    init = factors[0]
    for f in factors[1:]:
        init = np.kron(init, f)
    meta = {
        "kind": "dressed",
        "effective": bool(effective),
        "cutoff": float(cutoff),
        "terms_dropped": dropped,
        "modes": {m.name: ion_count + k for k, m in enumerate(modes)},
        "fock_dims": {m.name: d for m, d in zip(modes, dims)},
        "w_estimate": _dressed_rate_estimates(config, modes, ion_count, ds),
        "n0": n0,
        "thermal_weight_lost": lost,
        "gamma_plus": ds.effective_linewidth,
        "omega_plus": [p.rabi * sphi for p in config.probes],
        "probe_detunings": detunings,
    }
    return lb.QuantumModel(layout, terms, jumps, init, max_dim, meta)


def _dressed_rate_estimates(config, modes, ion_count, ds):
    """Incoherent sum of red-sideband Lorentzian rates per mode."""
    gp = ds.effective_linewidth
    sphi = math.sin(ds.mixing_angle)
    out = {}
    for k, m in enumerate(modes):
        w = 0.0
        for l, probe in enumerate(config.probes):
            nu = -(config.probe_detunings()[l] - config.driving.detuning) + ds.ac_stark
            proj = probe.axis_projection
            c = proj[k] if len(proj) > 1 else proj[0]
            for j in range(ion_count):
                g = probe.rabi * sphi / 2 * m.eta[j] * c
                w += g**2 * gp / ((nu - m.frequency) ** 2 + gp**2 / 4)
        out[m.name] = w
    return out


def build_2d_model(config: CoolingConfig, omega_z, omega_x, eta_gz, eta_gx=None, nbar0=2.0,
                   modes=("z", "x"), fock_dims=None, effective=True, cutoff=None,
                   max_dim=lb.DENSITY_CAP) -> lb.QuantumModel:
    """Single ion, axial z and radial x modes, two probe tones.

    eta_gx defaults to eta_gz*sqrt(w_z/w_x) (same wavevector magnitude). `modes` selects a
    subset for single-mode reference runs.
    """
    if len(config.probes) != 2:
        raise ValueError("the 2D model takes two probe tones")
    if eta_gx is None:
        eta_gx = eta_gz * math.sqrt(omega_z / omega_x)
    fock_dims = fock_dims or {}
    table = {"z": (omega_z, eta_gz, 0), "x": (omega_x, eta_gx, 1)}
    chosen = []
    probes = []
    for name in modes:
        w, eta, _ = table[name]
        chosen.append(DressedMode(name, w, (eta,), nbar0, fock_dims.get(name)))
    for p in config.probes:
        proj = p.axis_projection
        if len(proj) > 1:
            proj = tuple(proj[table[n][2]] for n in modes)
        probes.append(LaserTone(p.rabi, p.detuning, proj))
    cfg = CoolingConfig(config.driving, tuple(probes), config.atom, config.mismatch)
    return build_dressed_model(cfg, chosen, 1, effective, cutoff, max_dim=max_dim)


def build_two_ion_model(config: CoolingConfig, axial: ModeStructure, eta_modes=(0.24, 0.18), nbar0=2.0,
                        modes=("com", "stretch"), fock_dims=None, effective=True, cutoff=None,
                        max_dim=lb.DENSITY_CAP) -> lb.QuantumModel:
    """Two ions, both axial modes, probes illuminating both ions; eta_jk = eta_mode * b_jk."""
    if axial.ion_count != 2:
        raise ValueError("two-ion model needs the N = 2 axial mode structure")
    fock_dims = fock_dims or {}
    names = ("com", "stretch")
    chosen = []
    for name in modes:
        k = names.index(name)
        eta = tuple(eta_modes[k] * axial.eigenvectors[:, k])
        chosen.append(DressedMode(name, float(axial.frequencies[k]), eta, nbar0, fock_dims.get(name)))
    probes = [LaserTone(p.rabi, p.detuning, (p.axis_projection[0],)) for p in config.probes]
    cfg = CoolingConfig(config.driving, tuple(probes), config.atom, config.mismatch)
    return build_dressed_model(cfg, chosen, 2, effective, cutoff, max_dim=max_dim)


# ---------------------------------------------------------------- fitting

@dataclass(frozen=True)
class ExpFit:
    n_ss: float
    w: float
    n0: float
    residual_rms: float
    t_start: float
    heating: bool
    quality_ok: bool


def fit_exponential(times, values, w_seed=None, t_start=None) -> ExpFit:
    """Least-squares fit of n_ss + (n0 - n_ss) exp(-W t) on times >= t_start."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t_start is None:
        t_start = t[0]
    sel = t >= t_start - 1e-12
    if sel.sum() < 4:
        sel = np.zeros_like(sel)
        sel[-max(4, t.size // 2):] = True
        t_start = float(t[sel][0])
    ts, ys = t[sel], y[sel]
    span = ts[-1] - ts[0]
    if not w_seed or not np.isfinite(w_seed) or w_seed == 0:
        w_seed = 1.0 / span if span > 0 else 1.0
    n_inf = ys[-1]

    def resid(p):
        return p[0] + p[1] * np.exp(-p[2] * ts) - ys

    def jac(p):
        e = np.exp(-p[2] * ts)
        return np.column_stack([np.ones_like(ts), e, -p[1] * ts * e])

    # a seed of the wrong sign can slide into the linear-growth limit, so try both
    sol = None
    for w0 in (w_seed, -w_seed):
        x0 = np.array([n_inf, (ys[0] - n_inf) * math.exp(min(w0 * ts[0], 700.0)), w0])
        if not np.isfinite(x0[1]):
            x0[1] = ys[0] - n_inf
        trial = least_squares(resid, x0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                              max_nfev=20000)
        if sol is None or trial.cost < sol.cost:
            sol = trial
    n_ss, b, w = sol.x
    rms = float(np.sqrt(np.mean(sol.fun**2)))
    # trend reversals larger than the residual noise indicate a poor model
    dy = np.diff(ys)
    trend = np.sign(ys[-1] - ys[0]) or 1.0
    reversal = float(np.max(np.maximum(-trend * dy, 0.0))) if dy.size else 0.0
    quality = bool(sol.success) and reversal <= max(3 * rms, 1e-3 * (np.ptp(ys) or 1.0))
    if not quality:
        warnings.warn(f"exponential fit quality: residual rms {rms:.3g}, trend reversal {reversal:.3g}",
                      FitQualityWarning, stacklevel=2)
    return ExpFit(float(n_ss), float(w), float(n_ss + b), rms, float(t_start), bool(w < 0), quality)


# ---------------------------------------------------------------- runs

@dataclass
class CoolingRun:
    description: dict
    times: np.ndarray
    n: dict
    fits: dict
    tail: dict
    diagnostics: dict = field(default_factory=dict)

    @property
    def total_final(self) -> float:
        return float(sum(v[-1] for v in self.n.values()))


def simulate_cooling(model: lb.QuantumModel, t_max, sample_count=201, dt=None, fit=True,
                     w_estimate: Mapping[str, float] | None = None) -> CoolingRun:
    """Evolve, record <n_k>(t) and the top-two-level tail of every mode, fit each mode."""
    meta = model.meta
    mode_factors = meta.get("modes", {})
    ops = lb.build_operators(model.layout)
    observables = {}
    for name, f in mode_factors.items():
        d = model.layout.factors[f]
        observables["n_" + name] = ops.number(f)
        top = np.zeros(d)
        top[-2:] = 1
        observables["tail_" + name] = ops.embed(sp.diags(top).astype(complex), f)
    times = np.linspace(0.0, float(t_max), int(sample_count))
    res = lb.evolve(model, times, observables, dt=dt)
    w_est = dict(meta.get("w_estimate", {}))
    w_est.update(w_estimate or {})
    n = {name: res.expectations["n_" + name] for name in mode_factors}
    tail = {name: float(np.max(res.expectations["tail_" + name])) for name in mode_factors}
    fits = {}
    if fit:
        for name, series in n.items():
            we = w_est.get(name)
            t0 = 0.5 / we if we and np.isfinite(we) and we > 0 else None
            if t0 is not None and t0 > 0.5 * times[-1]:
                t0 = 0.5 * times[-1]
            with warnings.catch_warnings():
                warnings.simplefilter("always", FitQualityWarning)
                fits[name] = fit_exponential(times, series, we, t0)
    desc = {k: v for k, v in meta.items()}
    return CoolingRun(desc, times, n, fits, tail, res.diagnostics)


def check_cooling(run: CoolingRun):
    """Raise RegimeViolation if any fitted mode heats."""
    bad = [name for name, f in run.fits.items() if f.heating]
    if bad:
        raise RegimeViolation(f"fitted W <= 0 for modes {bad}")


# ---------------------------------------------------------------- absorption

def internal_model(driving: LaserTone, atom: AtomParams, probe: LaserTone) -> lb.QuantumModel:
    layout = lb.HilbertLayout((3,), ("atom",))
    ops = lb.build_operators(layout)
    dgr = probe.detuning - driving.detuning
    h = (-probe.detuning * ops.projector(0, E) - dgr * ops.projector(0, R)
         + probe.rabi / 2 * (ops.transition(0, E, G) + ops.transition(0, G, E))
         + driving.rabi / 2 * (ops.transition(0, E, R) + ops.transition(0, R, E)))
    jumps = ((ops.transition(0, G, E), atom.gamma_g), (ops.transition(0, R, E), atom.gamma_r))
    rho = np.zeros((3, 3), dtype=complex)
    rho[G, G] = 1
    return lb.QuantumModel(layout, (lb.OperatorTerm(h),), jumps, rho)


def absorption_profile(driving: LaserTone, atom: AtomParams, detunings, probe_rabi) -> np.ndarray:
    """gamma * <e>_ss over probe detunings."""
    out = np.empty(len(detunings))
    for i, dg in enumerate(np.asarray(detunings, dtype=float)):
        rho = lb.steady_state(internal_model(driving, atom, LaserTone(probe_rabi, dg)))
        out[i] = atom.gamma * rho[E, E].real
    return out
