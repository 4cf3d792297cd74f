"""Sideband Rabi dynamics of N ions sharing one mode, and sideband-asymmetry thermometry."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from . import lindblad as lb
from .errors import AccuracyWarning, DomainError, FitQualityWarning
from .modes import ModeStructure

OBSERVABLES = ("any", "mean")
R2_THRESHOLD = 0.99


@dataclass(frozen=True)
class ThermometrySetup:
    """Global sideband probe of mode `mode_index`; eta_jk is read from modes.lamb_dicke.

    observable: "any" (at least one ion up) or "mean" (mean excited fraction).
    """

    modes: ModeStructure
    mode_index: int
    rabi: float
    nbar: float = 0.5
    fock_truncation: int | None = None
    observable: str = "any"
    tail: float = 1e-4

    def __post_init__(self):
        if self.modes.lamb_dicke is None:
            raise ValueError("mode structure carries no Lamb-Dicke factors")
        if not 0 <= self.mode_index < self.modes.frequencies.size:
            raise ValueError(f"mode_index {self.mode_index} out of range")
        if not self.rabi > 0:
            raise ValueError("rabi must be positive")
        if self.nbar < 0:
            raise ValueError("nbar must be non-negative")
        if self.observable not in OBSERVABLES:
            raise ValueError(f"observable must be one of {OBSERVABLES}")
        floor = lb.fock_truncation(self.nbar, self.tail)
        if self.fock_truncation is not None and self.fock_truncation < floor:
            raise ValueError(f"fock_truncation {self.fock_truncation} below required {floor}")

    @property
    def ion_count(self) -> int:
        return self.modes.ion_count

    @property
    def eta(self) -> np.ndarray:
        return np.asarray(self.modes.lamb_dicke[:, self.mode_index])

    @property
    def label(self) -> str:
        return self.modes.labels()[self.mode_index]

    def thermal_cutoff(self) -> int:
        """Number of Fock components kept in the thermal average."""
        return self.fock_truncation or lb.fock_truncation(self.nbar, self.tail)


@dataclass(frozen=True)
class SidebandSignal:
    times: np.ndarray
    p_up: np.ndarray
    per_ion: np.ndarray          # (N, T)
    sideband: str
    observable: str = "any"
    weight_lost: float = 0.0
    norm_drift: float = 0.0

    def __post_init__(self):
        lo, hi = float(np.min(self.p_up)), float(np.max(self.p_up))
        if lo < -1e-9 or hi > 1 + 1e-9:
            raise ValueError("probabilities outside [0, 1]")


@dataclass(frozen=True)
class CorrectionFactor:
    value: float
    uncertainty: float
    label: str
    nbar_grid: tuple[float, ...]
    asymmetry: tuple[float, ...] = ()
    pi_times: tuple[float, ...] = ()
    r_squared: float = 1.0
    linear_ok: bool = True
    observable: str = "any"
    norm_drift: float = 0.0
    weight_lost: float = 0.0


def _sideband_terms(setup: ThermometrySetup, sideband: str, d: int):
    n = setup.ion_count
    layout = lb.HilbertLayout((2,) * n + (d,), tuple(f"ion{j}" for j in range(n)) + ("mode",))
    ops = lb.build_operators(layout)
    a = ops.destroy(n)
    if sideband == "blue":
        mot = a.conj().T
    elif sideband == "red":
        mot = a
    else:
        raise ValueError("sideband must be 'blue' or 'red'")
    h = None
    for j, eta in enumerate(setup.eta):
        if eta == 0:
            continue
        up = ops.transition(j, 1, 0)       # |up><down| on ion j
        piece = 1j * setup.rabi / 2 * eta * (up @ mot)
        h = piece if h is None else h + piece
    if h is None:
        raise DomainError("mode does not couple to any ion")
    h = h + h.conj().T
    obs = {}
    for j in range(n):
        obs[f"ion{j}"] = ops.projector(j, 1)
    down = None
    for j in range(n):
        p = ops.projector(j, 0)
        down = p if down is None else down @ p
    obs["any"] = ops.identity() - down
    return layout, [lb.OperatorTerm(h, 0.0)], obs


def sideband_signal(setup: ThermometrySetup, sideband: str, t_grid, fock_n: int = 0) -> SidebandSignal:
    """Evolve |down...down, n> under the blue or red sideband Hamiltonian."""
    tg = np.asarray(t_grid, dtype=float)
    n_ions = setup.ion_count
    d = fock_n + n_ions + 1
    layout, terms, obs = _sideband_terms(setup, sideband, d)
    psi = np.zeros(layout.total_dim, dtype=complex)
    psi[np.ravel_multi_index((0,) * n_ions + (fock_n,), layout.factors)] = 1.0
    if tg[0] != 0:
        raise ValueError("t_grid must start at 0")
    res = lb.evolve_pure(terms, psi, tg, obs)
    per = np.array([res.expectations[f"ion{j}"] for j in range(n_ions)])
    p = res.expectations["any"] if setup.observable == "any" else per.mean(axis=0)
    return SidebandSignal(tg, np.clip(p, 0.0, 1.0), per, sideband, setup.observable, 0.0,
                          res.norm_drift)


def thermal_signal(setup: ThermometrySetup, sideband: str, t_grid) -> SidebandSignal:
    """Thermal average over Fock components, weights renormalized after truncation."""
    cut = setup.thermal_cutoff()
    p, lost = lb.thermal_populations(setup.nbar, cut)
    if lost > setup.tail:
        warnings.warn(f"thermal weight beyond truncation {lost:.2e} exceeds {setup.tail:.0e}",
                      AccuracyWarning, stacklevel=2)
    p = p / p.sum()
    tg = np.asarray(t_grid, dtype=float)
    total = np.zeros(tg.size)
    per = np.zeros((setup.ion_count, tg.size))
    drift = 0.0
    for n, w in enumerate(p):
        if w == 0 or (sideband == "red" and n == 0):
            continue
        s = sideband_signal(setup, sideband, tg, n)
        total += w * s.p_up
        per += w * s.per_ion
        drift = max(drift, s.norm_drift)
    return SidebandSignal(tg, np.clip(total, 0.0, 1.0), per, sideband, setup.observable, lost, drift)


def asymmetry_estimate(p_b, p_r, factor: float | CorrectionFactor = 1.0) -> float:
    """nbar = factor * p_r / (p_b - p_r)."""
    f = factor.value if isinstance(factor, CorrectionFactor) else float(factor)
    if p_r < 0:
        raise DomainError("p_r must be non-negative")
    if p_r == 0 and p_b > 0:
        return 0.0
    if not p_b > p_r:
        raise DomainError(f"saturated or invalid signal: p_b={p_b} <= p_r={p_r}")
    return f * p_r / (p_b - p_r)


def _single_ion_period(setup: ThermometrySetup) -> float:
    eta = float(np.max(np.abs(setup.eta)))
    return 2 * math.pi / (eta * setup.rabi)


def pi_time(setup: ThermometrySetup, samples: int = 400, span: float = 1.5) -> float:
    """First local maximum of the thermal blue signal, refined by a parabola through the peak."""
    period = _single_ion_period(setup)
    tg = np.linspace(0.0, span * period, samples)
    p = thermal_signal(setup, "blue", tg).p_up
    inner = np.flatnonzero((p[1:-1] >= p[:-2]) & (p[1:-1] > p[2:]))
    if inner.size == 0:
        raise DomainError("blue signal has no local maximum inside the window")
    i = inner[0] + 1
    y0, y1, y2 = p[i - 1], p[i], p[i + 1]
    den = y0 - 2 * y1 + y2
    shift = 0.5 * (y0 - y2) / den if den != 0 else 0.0
    return float(tg[i] + shift * (tg[1] - tg[0]))


def _probe_signals(setup: ThermometrySetup, t_probe: float | None = None):
    t = pi_time(setup) if t_probe is None else float(t_probe)
    tg = np.array([0.0, t])
    return thermal_signal(setup, "blue", tg), thermal_signal(setup, "red", tg), t


def probe_asymmetry(setup: ThermometrySetup, t_probe: float | None = None):
    """(p_b, p_r, t) at the blue pi-time (or at t_probe)."""
    b, r, t = _probe_signals(setup, t_probe)
    return float(b.p_up[-1]), float(r.p_up[-1]), t


def fit_through_origin(x, y):
    """Slope, its standard error and the uncentred R^2 of y = s*x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sxx = float(x @ x)
    if sxx == 0:
        raise DomainError("all abscissae are zero")
    s = float(x @ y) / sxx
    res = y - s * x
    dof = max(x.size - 1, 1)
    err = math.sqrt(float(res @ res) / dof / sxx)
    r2 = 1 - float(res @ res) / float(y @ y) if np.any(y) else 1.0
    return s, err, r2


def correction_factor(setup: ThermometrySetup, nbar_grid: Sequence[float]) -> CorrectionFactor:
    grid = tuple(float(v) for v in nbar_grid)
    if len(grid) < 5 or min(grid) > 0.1 or max(grid) < 1.0:
        raise DomainError("nbar grid must span [0.1, 1.0] with at least 5 points")
    asym, times = [], []
    drift = lost = 0.0
    for nb in grid:
        s = ThermometrySetup(setup.modes, setup.mode_index, setup.rabi, nb, None,
                             setup.observable, setup.tail)
        b, r, t = _probe_signals(s)
        asym.append(asymmetry_estimate(float(b.p_up[-1]), float(r.p_up[-1])))
        times.append(t)
        drift = max(drift, b.norm_drift, r.norm_drift)
        lost = max(lost, b.weight_lost)
    slope, err, r2 = fit_through_origin(asym, grid)
    ok = r2 >= R2_THRESHOLD
    if not ok:
        warnings.warn(f"correction-factor fit R^2 = {r2:.4f} below {R2_THRESHOLD}",
                      FitQualityWarning, stacklevel=2)
    return CorrectionFactor(slope, err, setup.label, grid, tuple(asym), tuple(times), r2, ok,
                            setup.observable, drift, lost)


# ---------------------------------------------------------------- measured traces

@dataclass(frozen=True)
class TraceFit:
    amplitude: float
    frequency: float
    decay_time: float
    offset: float
    residual_rms: float


def rabi_trace_model(t, amplitude, frequency, decay_time, offset):
    return offset + amplitude / 2 * (1 - np.exp(-t / decay_time) * np.cos(frequency * t))


def fit_rabi_trace(times, excitation, frequency_seed: float | None = None) -> TraceFit:
    """Damped Rabi fit offset + A/2 (1 - exp(-t/tau) cos(w t)); A is the oscillation amplitude."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(excitation, dtype=float)
    if t.size < 5 or t.shape != y.shape:
        raise ValueError("need at least 5 matching (time, excitation) samples")
    span = float(t[-1] - t[0])
    if frequency_seed is None:
        dt = float(np.median(np.diff(t)))
        spec = np.abs(np.fft.rfft(y - y.mean()))
        freqs = 2 * np.pi * np.fft.rfftfreq(t.size, dt)
        frequency_seed = float(freqs[1 + np.argmax(spec[1:])]) if spec.size > 1 else 2 * np.pi / span
    amp0 = float(np.max(y) - np.min(y))
    p0 = [amp0, frequency_seed, span, float(np.min(y))]

    def resid(p):
        return rabi_trace_model(t, *p) - y

    sol = least_squares(resid, p0, bounds=([-np.inf, 0, 1e-12 * span, -np.inf], np.inf),
                        x_scale="jac", xtol=1e-14, ftol=1e-14, gtol=1e-14)
    rms = float(np.sqrt(np.mean(sol.fun**2)))
    a, w, tau, c = sol.x
    return TraceFit(float(a), float(w), float(tau), float(c), rms)


def estimate_from_traces(blue: TraceFit, red: TraceFit, factor: float) -> float:
    return asymmetry_estimate(blue.amplitude, red.amplitude, factor)
