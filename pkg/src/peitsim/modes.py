"""Equilibrium structure and normal modes of a linear ion chain."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import constants as sc

from .errors import SolverFailure, StructuralInstability
from .units import CA40_MASS, HBAR

MAX_NEWTON_ITER = 200
FORCE_TOL = 1e-10


@dataclass(frozen=True)
class ChainConfig:
    """N identical ions; trap_frequencies = (w_z, w_x, w_y) in rad/us."""

    ion_count: int
    trap_frequencies: tuple[float, float, float]
    mass: float = CA40_MASS

    def __post_init__(self):
        if int(self.ion_count) != self.ion_count or self.ion_count < 1:
            raise ValueError(f"ion_count must be a positive integer, got {self.ion_count}")
        tf = tuple(float(w) for w in self.trap_frequencies)
        if len(tf) != 3 or min(tf) <= 0:
            raise ValueError(f"need three positive trap frequencies, got {self.trap_frequencies}")
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.ion_count > 1 and min(tf[1], tf[2]) <= tf[0]:
            raise ValueError("transverse trap frequencies must exceed the axial one for a linear chain")
        object.__setattr__(self, "trap_frequencies", tf)
        object.__setattr__(self, "ion_count", int(self.ion_count))

    @classmethod
    def from_mhz(cls, ion_count, freqs_mhz, mass=CA40_MASS):
        return cls(ion_count, tuple(2 * np.pi * float(f) for f in freqs_mhz), mass)

    @property
    def length_scale(self) -> float:
        """Coulomb length in metres."""
        wz = self.trap_frequencies[0] * 1e6
        return (sc.e**2 / (4 * np.pi * sc.epsilon_0 * self.mass * wz**2)) ** (1 / 3)


@dataclass(frozen=True)
class EquilibriumSolution:
    positions: np.ndarray
    residual_force: float
    iterations: int = 0


@dataclass(frozen=True)
class ModeStructure:
    """One branch of normal modes.

    eigenvectors[j, k] = b_jk (ion j, mode k); frequencies ascending.
    """

    axis: str
    frequencies: np.ndarray
    eigenvectors: np.ndarray
    lamb_dicke: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("frequencies", "eigenvectors", "lamb_dicke"):
            v = getattr(self, name)
            if v is not None:
                v = np.array(v, dtype=float)
                v.setflags(write=False)
                object.__setattr__(self, name, v)

    @property
    def ion_count(self) -> int:
        return self.eigenvectors.shape[0]

    def with_lamb_dicke(self, wavevector_projection, mass=CA40_MASS) -> "ModeStructure":
        eta = lamb_dicke_factors(self, wavevector_projection, mass)
        return ModeStructure(self.axis, self.frequencies, self.eigenvectors, eta)

    def labels(self) -> list[str]:
        return [mode_label(self.eigenvectors[:, k]) for k in range(self.eigenvectors.shape[1])]


def _forces(u):
    d = u[:, None] - u[None, :]
    np.fill_diagonal(d, np.inf)
    return -u + np.sum(np.sign(d) / d**2, axis=1)


def coupling_matrix(u) -> np.ndarray:
    """C_ij = -1/|u_i-u_j|^3 off-diagonal, C_ii = sum_j 1/|u_i-u_j|^3."""
    n = len(u)
    if n == 1:
        return np.zeros((1, 1))
    d = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(d, np.inf)
    c = -1.0 / d**3
    np.fill_diagonal(c, -c.sum(axis=1))
    return c


def equilibrium_positions(config: ChainConfig) -> EquilibriumSolution:
    """Damped Newton on the scaled potential sum u^2/2 + sum_{i<j} 1/|u_i-u_j|."""
    n = config.ion_count
    if n == 1:
        return EquilibriumSolution(np.zeros(1), 0.0, 0)
    spacing = 2.0 / n**0.56
    u = spacing * (np.arange(n) - (n - 1) / 2)
    f = _forces(u)
    res = np.max(np.abs(f))
    for it in range(1, MAX_NEWTON_ITER + 1):
        hess = np.eye(n) + 2 * coupling_matrix(u)
        step = np.linalg.solve(hess, f)
        lam = 1.0
        while lam > 1e-6:
            trial = u + lam * step
            if np.all(np.diff(trial) > 0):
                ft = _forces(trial)
                rt = np.max(np.abs(ft))
                if rt < res or rt <= FORCE_TOL:
                    break
            lam *= 0.5
        else:
            raise SolverFailure("line search stalled", residual=res)
        u, f, res = trial, ft, rt
        if res <= FORCE_TOL * 1e-2:
            break
    # enforce exact mirror symmetry; the symmetric point is the true minimum
    u = 0.5 * (u - u[::-1])
    res = float(np.max(np.abs(_forces(u))))
    if res > FORCE_TOL:
        raise SolverFailure(f"equilibrium did not converge in {MAX_NEWTON_ITER} iterations", residual=res)
    return EquilibriumSolution(u, res, it)


def _fix_signs(vecs):
    vecs = vecs.copy()
    for k in range(vecs.shape[1]):
        col = vecs[:, k]
        m = np.max(np.abs(col))
        j = np.flatnonzero(np.abs(col) >= m - 1e-9 * max(m, 1.0))[0]
        if col[j] < 0:
            vecs[:, k] = -col
    return vecs


def _eig_modes(hess, scale, axis):
    lam, vecs = np.linalg.eigh(hess)
    if lam[0] <= 0:
        raise StructuralInstability(f"{axis}-branch Hessian eigenvalue {lam[0]:.3g} <= 0")
    freqs = scale * np.sqrt(lam)
    vecs = _fix_signs(vecs)
    order = np.argsort(freqs, kind="stable")
    return ModeStructure(axis, freqs[order], vecs[:, order])


def axial_modes(config: ChainConfig) -> ModeStructure:
    u = equilibrium_positions(config).positions
    hess = np.eye(config.ion_count) + 2 * coupling_matrix(u)
    return _eig_modes(hess, config.trap_frequencies[0], "z")


def transverse_modes(config: ChainConfig) -> tuple[ModeStructure, ModeStructure]:
    """Both transverse branches (x, y), each computed independently."""
    u = equilibrium_positions(config).positions
    c = coupling_matrix(u)
    wz = config.trap_frequencies[0]
    out = []
    for axis, wt in zip("xy", config.trap_frequencies[1:]):
        beta = wt / wz
        out.append(_eig_modes(beta**2 * np.eye(config.ion_count) - c, wz, axis))
    return tuple(out)


def mode_lamb_dicke(wavevector, mode_freq, mass=CA40_MASS):
    """k*sqrt(hbar/(2 M w)); k in rad/um, w in rad/us."""
    k = np.asarray(wavevector, dtype=float) * 1e6
    w = np.asarray(mode_freq, dtype=float) * 1e6
    return k * np.sqrt(HBAR / (2 * mass * w))


def wavevector_for_eta(eta, mode_freq, mass=CA40_MASS) -> float:
    """Wavevector projection (rad/um) giving Lamb-Dicke parameter eta at mode_freq."""
    return float(eta / mode_lamb_dicke(1.0, mode_freq, mass))


def lamb_dicke_factors(modes: ModeStructure, wavevector_projection, mass=CA40_MASS) -> np.ndarray:
    """eta_jk = k sqrt(hbar/(2 M w_k)) b_jk."""
    if np.any(modes.frequencies <= 0):
        raise ValueError("mode frequencies must be positive")
    scale = mode_lamb_dicke(wavevector_projection, modes.frequencies, mass)
    return modes.eigenvectors * scale[None, :]


def mode_label(b) -> str:
    """COM / ZZ / Sym / Asym from the sign pattern and mirror parity of b."""
    b = np.asarray(b, dtype=float)
    n = len(b)
    tol = 1e-9
    s = np.sign(np.where(np.abs(b) < tol, 0.0, b))
    if n == 1 or np.all(s > 0) or np.all(s < 0):
        return "COM"
    if n == 2:
        return "stretch"
    nz = s[s != 0]
    if len(nz) == n and np.all(nz[1:] * nz[:-1] < 0):
        return "ZZ"
    if np.allclose(b, b[::-1], atol=1e-8):
        return "Sym"
    if np.allclose(b, -b[::-1], atol=1e-8):
        return "Asym"
    return "mixed"


def full_spectrum(config: ChainConfig) -> list[ModeStructure]:
    """Axial plus both transverse branches (3N modes)."""
    return [axial_modes(config), *transverse_modes(config)]
