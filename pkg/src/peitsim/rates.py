"""Closed-form parallel-EIT cooling theory for a single motional mode.

Conventions: the probe couples |g>-|e> with (rabi, detuning) = (Omega_g, Delta_g),
the driving tone couples |r>-|e> with (Omega_r, Delta_r), Delta_gr = Delta_g - Delta_r.
All frequencies in rad/us.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import DomainError, PoleError


@dataclass(frozen=True)
class AtomParams:
    gamma: float
    gamma_g: float | None = None
    gamma_r: float | None = None
    alpha: float = 1.0 / 3.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        gg, gr = self.gamma_g, self.gamma_r
        if gg is None and gr is None:
            gg = gr = self.gamma / 2
        elif gg is None:
            gg = self.gamma - gr
        elif gr is None:
            gr = self.gamma - gg
        if gg < 0 or gr < 0 or abs(gg + gr - self.gamma) > 1e-12 * max(1.0, self.gamma):
            raise ValueError("branching rates must be non-negative and sum to gamma")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        object.__setattr__(self, "gamma_g", float(gg))
        object.__setattr__(self, "gamma_r", float(gr))


@dataclass(frozen=True)
class LaserTone:
    """rabi and detuning in rad/us; axis_projection holds cos(phi) per motional axis."""

    rabi: float
    detuning: float
    axis_projection: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.rabi < 0:
            raise ValueError("rabi must be non-negative")
        proj = tuple(float(c) for c in np.atleast_1d(self.axis_projection))
        if any(abs(c) > 1 for c in proj):
            raise ValueError("axis projections must lie in [-1, 1]")
        object.__setattr__(self, "axis_projection", proj)

    def cos(self, axis: int = 0) -> float:
        return self.axis_projection[axis]


@dataclass(frozen=True)
class DressedState:
    mixing_angle: float
    energies: tuple[float, float]
    ac_stark: float
    effective_linewidth: float

    @property
    def sin2(self) -> float:
        return math.sin(self.mixing_angle) ** 2


class StarkShift(NamedTuple):
    exact: float
    approx: float


@dataclass(frozen=True)
class RateReport:
    a_plus: float
    a_minus: float
    w: float
    n_ss: float
    divergent: bool
    per_pathway: dict = field(default_factory=dict, compare=False)


class ApproxLimits(NamedTuple):
    w_approx: float
    n_eit: float
    ratio: float
    n_st: float
    eta1: float
    eta2: float
    regime_ok: bool


class PhononTrajectory(NamedTuple):
    values: np.ndarray
    heating: bool


def ac_stark_shift(driving: LaserTone) -> StarkShift:
    om, dr = driving.rabi, driving.detuning
    exact = 0.5 * (math.hypot(om, dr) - abs(dr))
    if om == 0:
        approx = 0.0
    elif dr == 0:
        approx = math.nan
    else:
        approx = om**2 / (4 * abs(dr))
    return StarkShift(exact, approx)


def driving_rabi_for_shift(ac_stark: float, driving_detuning: float) -> float:
    """Inverse of the exact shift: Omega_r giving delta_ac at Delta_r."""
    if ac_stark < 0:
        raise DomainError("ac Stark shift must be non-negative")
    return math.sqrt(4 * ac_stark * (ac_stark + abs(driving_detuning)))


def dressed_state(driving: LaserTone, gamma: float = 0.0) -> DressedState:
    om, dr = driving.rabi, driving.detuning
    root = math.hypot(om, dr)
    phi = 0.5 * math.atan(om / dr) if dr != 0 else math.pi / 4
    e_plus = 0.5 * (-dr + root)
    e_minus = 0.5 * (-dr - root)
    return DressedState(phi, (e_plus, e_minus), ac_stark_shift(driving).exact,
                        gamma * math.sin(phi) ** 2)


def char_function(x, probe: LaserTone, driving: LaserTone, atom: AtomParams):
    dg = probe.detuning
    dgr = dg - driving.detuning
    return (dg + x) * (dgr + x) - driving.rabi**2 / 4 + 1j * (dgr + x) * atom.gamma / 2


def transition_amplitudes(mode_freq, probe, driving, atom, eta_g, eta_r, axis=0) -> dict:
    """Scattering amplitudes keyed 'Ts', 'T1+', 'T1-', ..., 'T3-'.

    '+' is the heating (blue) channel evaluated at f(-w), '-' the cooling one at f(+w).
    """
    w = mode_freq
    if not w > 0:
        raise DomainError("mode frequency must be positive")
    og, orr = probe.rabi, driving.rabi
    dgr = probe.detuning - driving.detuning
    cg, cr = probe.cos(axis), driving.cos(axis)
    f0 = char_function(0.0, probe, driving, atom)
    if f0 == 0:
        raise PoleError("f(0) = 0")
    amps = {"Ts": eta_g * og / 2 * dgr / f0}
    for sign, x in (("+", -w), ("-", w)):
        fx = char_function(x, probe, driving, atom)
        if fx == 0:
            raise PoleError(f"f({x}) = 0")
        amps["T1" + sign] = -1j * eta_g * cg * (og / 2) * (x + dgr) / fx
        amps["T2" + sign] = -1j * eta_r * cr * (orr * og / 4) * (orr / 2) / f0 * (x + dgr) / fx
        amps["T3" + sign] = 1j * eta_r * cr * (orr * og / 4) * dgr / f0 * (orr / 2) / fx
    return amps


def rates(mode_freq, probe, driving, atom, eta_g, eta_r, axis=0) -> RateReport:
    amps = transition_amplitudes(mode_freq, probe, driving, atom, eta_g, eta_r, axis)
    diff = atom.alpha * atom.gamma * abs(amps["Ts"]) ** 2

    def channel(sign):
        return diff + atom.gamma * abs(amps["T1" + sign] + amps["T2" + sign] + amps["T3" + sign]) ** 2

    a_plus, a_minus = channel("+"), channel("-")
    w = a_minus - a_plus
    divergent = not w > 0
    n_ss = a_plus / w if not divergent else math.inf
    return RateReport(a_plus, a_minus, w, n_ss, divergent, amps)


def optimal_probe_detuning(mode_freq, ac_stark, driving_detuning):
    """Delta_g satisfying Delta_gr - delta_ac = -w."""
    if ac_stark < 0:
        raise DomainError("ac Stark shift must be non-negative")
    return driving_detuning + ac_stark - mode_freq


def approximate_limits(mode_freq, probe, driving, atom, eta) -> ApproxLimits:
    w = mode_freq
    if w == 0:
        raise DomainError("mode frequency must be non-zero")
    dg = probe.detuning
    dac = ac_stark_shift(driving).exact
    sign = -1.0 if dg > 0 else 1.0
    ratio = 1 + 4 * atom.alpha * (1 + sign * dac / w) ** 2
    n_eit = atom.gamma**2 / (16 * dg**2) if dg != 0 else math.inf
    dgr = dg - driving.detuning
    regime_ok = abs(dg) >= 10 * max(abs(w), abs(dgr), dac)
    return ApproxLimits(eta**2 * probe.rabi**2 / atom.gamma, n_eit, ratio, ratio * n_eit,
                        abs(eta), abs(eta) * math.sqrt(ratio), regime_ok)


def _heating_term(delta, dac, w, gp):
    c = delta / w
    return c**2 / ((delta - dac) ** 2 + gp**2 / 4 * c**2)


def multi_tone_heating(mode_freq, tones: Sequence[LaserTone], dressed: DressedState,
                       atom: AtomParams, eta, driving_detuning: float | None = None):
    """Total and per-tone heating coefficients for several probe tones sharing one drive.

    driving_detuning defaults to the value implied by the dressed energies.
    """
    gp = dressed.effective_linewidth
    if not gp > 0:
        raise DomainError("effective linewidth must be positive")
    if driving_detuning is None:
        driving_detuning = -(dressed.energies[0] + dressed.energies[1])
    w, dac = mode_freq, dressed.ac_stark
    sphi = math.sin(dressed.mixing_angle)
    per = []
    for tone in tones:
        d = tone.detuning - driving_detuning
        op = tone.rabi * sphi
        t1 = atom.alpha * _heating_term(d, dac, w, gp)
        t2 = _heating_term(d - w, dac, w, gp)
        per.append(gp * eta**2 * (op / 2) ** 2 * (t1 + t2))
    return math.fsum(per), per


def phonon_trajectory(n0, report: RateReport, times) -> PhononTrajectory:
    t = np.asarray(times, dtype=float)
    w = report.w
    if w == 0:
        return PhononTrajectory(n0 + report.a_plus * t, True)
    n_ss = report.a_plus / w
    return PhononTrajectory(n_ss + (n0 - n_ss) * np.exp(-w * t), not w > 0)


def inverse_sqrt_eta(mode_freq) -> float:
    """eta = 0.29 / sqrt(w / 2pi[MHz])."""
    return 0.29 / math.sqrt(mode_freq / (2 * math.pi))


@dataclass(frozen=True)
class SweepResult:
    omega: np.ndarray
    eta: np.ndarray
    peit_n_ss: np.ndarray
    peit_w: np.ndarray
    eit_n_ss: np.ndarray
    eit_w: np.ndarray
    peit_detuning: np.ndarray
    errors: tuple = ()


def single_mode_tones(mode_freq, probe_rabi, probe_detuning, driving_rabi, driving_detuning):
    """Probe/drive pair with the probe along the axis and the drive against it (cos phi_g = 1, cos phi_r = -1)."""
    return (LaserTone(probe_rabi, probe_detuning, (1.0,)),
            LaserTone(driving_rabi, driving_detuning, (-1.0,)))


def sweep_mode_frequency(omega_grid, ac_stark, driving_detuning, probe_rabi, atom: AtomParams,
                         eta_rule: Callable[[float], float] = inverse_sqrt_eta) -> SweepResult:
    """Parallel-EIT (Delta_g from the optimal condition) vs EIT (Delta_g = Delta_r) over w.

    eta_g = eta_r = eta/2. Failing points are NaN and listed in errors.
    """
    grid = np.asarray(omega_grid, dtype=float)
    if grid.size == 0:
        raise DomainError("empty frequency grid")
    orr = driving_rabi_for_shift(ac_stark, driving_detuning)
    out = {k: np.full(grid.shape, np.nan) for k in ("eta", "pn", "pw", "en", "ew", "pd")}
    errs = []
    for i, w in enumerate(grid):
        try:
            eta = eta_rule(w)
            out["eta"][i] = eta
            dg = optimal_probe_detuning(w, ac_stark, driving_detuning)
            out["pd"][i] = dg
            for key, det in (("p", dg), ("e", driving_detuning)):
                probe, drive = single_mode_tones(w, probe_rabi, det, orr, driving_detuning)
                r = rates(w, probe, drive, atom, eta / 2, eta / 2)
                out[key + "n"][i] = r.n_ss if not r.divergent else np.nan
                out[key + "w"][i] = r.w
        except (PoleError, DomainError, ValueError) as exc:
            errs.append((i, float(w), str(exc)))
    return SweepResult(grid, out["eta"], out["pn"], out["pw"], out["en"], out["ew"], out["pd"],
                       tuple(errs))
