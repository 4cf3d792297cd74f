"""Small open-quantum-system engine.

Density matrices are integrated with fixed-step RK4. The Hilbert space is split into
the connected components of the coupling graph (Hamiltonian terms plus L^dag L); when
every jump maps a component into a single component and the initial state has no
coherence between components, rho stays block diagonal and only the blocks are
propagated. Otherwise the whole space is one block. Static generators are propagated by
powers of the exact RK4 one-step map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import (DimensionCapError, IntegrationAccuracyError, SteadyStateAmbiguity)

DENSITY_CAP = 1024
PURE_CAP = 8192
STATIC_POWER_MAX = 3000   # largest vectorized dimension propagated by matrix powers
TRACE_FAIL = 1e-6


@dataclass(frozen=True)
class HilbertLayout:
    factors: tuple[int, ...]
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        f = tuple(int(d) for d in self.factors)
        if not f or min(f) < 1:
            raise ValueError("every factor must be >= 1")
        object.__setattr__(self, "factors", f)
        if self.labels is not None:
            if len(self.labels) != len(f):
                raise ValueError("one label per factor")
            object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def total_dim(self) -> int:
        return math.prod(self.factors)

    def index(self, label: str) -> int:
        if self.labels is None or label not in self.labels:
            raise KeyError(label)
        return self.labels.index(label)


def _csr(m):
    return sp.csr_matrix(m, dtype=complex)


@dataclass(frozen=True)
class OperatorTerm:
    """matrix*e^{i nu t} + h.c. for nu != 0; Hermitian static matrix for nu == 0."""

    matrix: sp.csr_matrix
    frequency: float = 0.0

    def __post_init__(self):
        m = _csr(self.matrix)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "frequency", float(self.frequency))
        if self.frequency == 0.0:
            d = m - m.conj().T
            if d.nnz and np.max(np.abs(d.data)) > 1e-12:
                raise ValueError("static Hamiltonian term must be Hermitian")

    @classmethod
    def oscillating(cls, matrix, frequency) -> "OperatorTerm":
        """One-sided term; collapses to the Hermitian M + M^dag when frequency is 0."""
        m = _csr(matrix)
        if frequency == 0:
            return cls(m + m.conj().T, 0.0)
        return cls(m, frequency)

    def at(self, t):
        if self.frequency == 0:
            return self.matrix
        c = np.exp(1j * self.frequency * t)
        return c * self.matrix + np.conj(c) * self.matrix.conj().T


class Operators:
    """Operator factory for a layout; all results are sparse total_dim x total_dim."""

    def __init__(self, layout: HilbertLayout):
        self.layout = layout

    def _check(self, i):
        if not 0 <= i < len(self.layout.factors):
            raise IndexError(f"factor index {i} out of range")
        return self.layout.factors[i]

    def identity(self):
        return sp.identity(self.layout.total_dim, dtype=complex, format="csr")

    def embed(self, op, i):
        d = self._check(i)
        op = _csr(op)
        if op.shape != (d, d):
            raise ValueError(f"operator shape {op.shape} does not match factor {i} of dim {d}")
        return self.embed_many({i: op})

    def embed_many(self, ops: Mapping[int, object]):
        out = None
        for j, d in enumerate(self.layout.factors):
            if j in ops:
                self._check(j)
                piece = _csr(ops[j])
            else:
                piece = sp.identity(d, dtype=complex, format="csr")
            out = piece if out is None else sp.kron(out, piece, format="csr")
        return out

    @staticmethod
    def local_destroy(d):
        return sp.diags(np.sqrt(np.arange(1, d, dtype=float)), 1, shape=(d, d), dtype=complex, format="csr")

    def destroy(self, i):
        return self.embed(self.local_destroy(self._check(i)), i)

    def create(self, i):
        return self.destroy(i).conj().T.tocsr()

    def number(self, i):
        d = self._check(i)
        return self.embed(sp.diags(np.arange(d, dtype=float), 0, dtype=complex), i)

    def transition(self, i, a, b):
        """|a><b| on factor i."""
        d = self._check(i)
        if not (0 <= a < d and 0 <= b < d):
            raise IndexError("level out of range")
        m = sp.csr_matrix(([1.0 + 0j], ([a], [b])), shape=(d, d))
        return self.embed(m, i)

    def projector(self, i, a):
        return self.transition(i, a, a)


def build_operators(layout: HilbertLayout) -> Operators:
    return Operators(layout)


def thermal_populations(nbar, d):
    """Truncated, renormalized thermal distribution and the discarded weight."""
    n = np.arange(d)
    if nbar == 0:
        p = (n == 0).astype(float)
        return p, 0.0
    p = nbar**n / (1 + nbar) ** (n + 1)
    lost = 1 - p.sum()
    return p / p.sum(), float(lost)


def fock_truncation(nbar, tail=1e-4, minimum=2):
    """d >= 4 nbar + 10, raised until the thermal weight of the top two levels is <= tail."""
    d = max(minimum, int(math.ceil(4 * nbar + 10)))
    while True:
        p, _ = thermal_populations(nbar, d)
        if p[-2:].sum() <= tail:
            return d
        d += 1


def _dense(m):
    return m.toarray() if sp.issparse(m) else np.asarray(m, dtype=complex)


@dataclass(frozen=True)
class QuantumModel:
    layout: HilbertLayout
    hamiltonian_terms: tuple[OperatorTerm, ...]
    jump_operators: tuple[tuple[sp.csr_matrix, float], ...]
    initial_state: np.ndarray
    max_dim: int = DENSITY_CAP
    meta: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        dim = self.layout.total_dim
        if dim > self.max_dim:
            raise DimensionCapError(f"total dimension {dim} exceeds cap {self.max_dim}")
        terms = tuple(self.hamiltonian_terms)
        for t in terms:
            if t.matrix.shape != (dim, dim):
                raise ValueError("Hamiltonian term shape mismatch")
        jumps = []
        for op, rate in self.jump_operators:
            if rate < 0:
                raise ValueError("jump rates must be non-negative")
            op = _csr(op)
            if op.shape != (dim, dim):
                raise ValueError("jump operator shape mismatch")
            jumps.append((op, float(rate)))
        rho = np.array(_dense(self.initial_state), dtype=complex)
        if rho.shape != (dim, dim):
            raise ValueError("initial state shape mismatch")
        if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
            raise ValueError("initial state not Hermitian")
        if abs(np.trace(rho) - 1) > 1e-12:
            raise ValueError("initial state trace differs from 1")
        off = rho - np.diag(np.diag(rho))
        low = np.diag(rho).real.min() if not np.any(off) else np.linalg.eigvalsh(rho).min()
        if low < -1e-10:
            raise ValueError("initial state not positive semidefinite")
        rho.setflags(write=False)
        object.__setattr__(self, "hamiltonian_terms", terms)
        object.__setattr__(self, "jump_operators", tuple(jumps))
        object.__setattr__(self, "initial_state", rho)
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def is_static(self) -> bool:
        return all(t.frequency == 0 for t in self.hamiltonian_terms)


def product_state(*factors):
    """Kronecker product of density matrices or state vectors (vectors become projectors)."""
    out = None
    for f in factors:
        f = np.asarray(f, dtype=complex)
        if f.ndim == 1:
            f = np.outer(f, f.conj())
        out = f if out is None else np.kron(out, f)
    return out


# ---------------------------------------------------------------- block structure

def _components(dim, mats):
    adj = sp.csr_matrix((dim, dim), dtype=float)
    for m in mats:
        a = abs(m).astype(float)
        adj = adj + a + a.T
    n, lab = connected_components(adj, directed=False)
    return n, lab


def _jump_maps(labels, jumps):
    """Per jump, dict source component -> destination component, or None if not a function."""
    maps = []
    for op, _ in jumps:
        coo = op.tocoo()
        keep = np.abs(coo.data) > 0
        m = {}
        for r, c in zip(coo.row[keep], coo.col[keep]):
            src, dst = labels[c], labels[r]
            if m.setdefault(src, dst) != dst:
                return None
        maps.append(m)
    return maps


def _bucket(m):
    # padding to a multiple of 4 keeps the batches few without inflating large blocks much
    return m if m <= 4 else -(-m // 4) * 4


class _Blocks:
    """Block decomposition. Blocks are zero-padded to a multiple of 4 and stacked so that
    blocks of equal padded size are advanced with batched matrix products."""

    def __init__(self, model: QuantumModel, sectors=True):
        dim = model.layout.total_dim
        rho0 = model.initial_state
        self.dim = dim
        terms = model.hamiltonian_terms
        jumps = [(op, r) for op, r in model.jump_operators if r > 0 and op.nnz]
        labels = np.zeros(dim, dtype=int)
        maps = [{0: 0} for _ in jumps]
        if sectors:
            mats = [t.matrix for t in terms] + [op.conj().T @ op for op, _ in jumps]
            ncomp, lab = _components(dim, mats)
            jm = _jump_maps(lab, jumps) if ncomp > 1 else None
            if jm is not None:
                i, j = np.nonzero(np.abs(rho0) > 1e-14)
                if np.all(lab[i] == lab[j]):
                    labels, maps = lab, jm
        # active components: initial support closed under jumps
        active = set(labels[np.flatnonzero(np.abs(np.diag(rho0)) > 0)].tolist())
        frontier = list(active)
        while frontier:
            c = frontier.pop()
            for m in maps:
                d = m.get(c)
                if d is not None and d not in active:
                    active.add(d)
                    frontier.append(d)
        comps = sorted(active)
        idx = [np.flatnonzero(labels == c) for c in comps]
        order = sorted(range(len(comps)), key=lambda k: (len(idx[k]), idx[k][0]))
        self.indices = [idx[k] for k in order]
        self.comp_ids = [comps[k] for k in order]
        pos_of_comp = {c: p for p, c in enumerate(self.comp_ids)}
        self.sectored = len(np.unique(labels)) > 1
        padded = len(self.indices) > 1
        sizes = [_bucket(len(ix)) if padded else len(ix) for ix in self.indices]
        self.groups = []      # list of member block positions per group
        self.gsize = []       # padded size per group
        self.where = {}
        for s in sorted(set(sizes)):
            members = [p for p in range(len(self.indices)) if sizes[p] == s]
            for gpos, p in enumerate(members):
                self.where[p] = (len(self.groups), gpos)
            self.groups.append(members)
            self.gsize.append(s)

        self.static = []
        self.osc = []       # per group: list of (nu, stack)
        ltl = [(r, (op.conj().T @ op).tocsr()) for op, r in jumps]
        for g, members in enumerate(self.groups):
            gen = self.stack(sp.csr_matrix((dim, dim), dtype=complex), g)
            osc = []
            for t in terms:
                s = self.stack(t.matrix, g)
                if not np.any(s):
                    continue
                if t.frequency == 0:
                    gen += s
                else:
                    osc.append((t.frequency, s, np.swapaxes(s, 1, 2).conj().copy()))
            for r, k in ltl:
                gen -= 0.5j * r * self.stack(k, g)
            self.static.append(gen)
            self.osc.append(osc)
        # jump transfers grouped by (src group, dst group)
        transfers = {}
        for (op, r), m in zip(jumps, maps):
            for p, c in enumerate(self.comp_ids):
                d = m.get(c)
                if d is None:
                    continue
                q = pos_of_comp[d]
                blk = math.sqrt(r) * op[self.indices[q]][:, self.indices[p]].toarray()
                if not np.any(blk):
                    continue
                sg, spos = self.where[p]
                dg, dpos = self.where[q]
                full = np.zeros((self.gsize[dg], self.gsize[sg]), dtype=complex)
                full[:blk.shape[0], :blk.shape[1]] = blk
                transfers.setdefault((sg, dg), []).append((spos, dpos, full))
        self.transfers = []
        for (sg, dg), items in sorted(transfers.items()):
            j = np.stack([i[2] for i in items])
            self.transfers.append((sg, dg, np.array([i[0] for i in items]), np.array([i[1] for i in items]),
                                   j, np.swapaxes(j, 1, 2).conj().copy()))
        self.static_model = all(not o for o in self.osc)

    def stack(self, mat, g, transpose=False):
        mat = _csr(mat)
        s = self.gsize[g]
        out = np.zeros((len(self.groups[g]), s, s), dtype=complex)
        for gpos, p in enumerate(self.groups[g]):
            ix = self.indices[p]
            blk = mat[ix][:, ix].toarray()
            out[gpos, :len(ix), :len(ix)] = blk.T if transpose else blk
        return out

    # -- state conversion
    def split(self, rho):
        out = []
        for g, members in enumerate(self.groups):
            s = self.gsize[g]
            st = np.zeros((len(members), s, s), dtype=complex)
            for gpos, p in enumerate(members):
                ix = self.indices[p]
                st[gpos, :len(ix), :len(ix)] = rho[np.ix_(ix, ix)]
            out.append(st)
        return out

    def join(self, blocks):
        rho = np.zeros((self.dim, self.dim), dtype=complex)
        for members, b in zip(self.groups, blocks):
            for gpos, p in enumerate(members):
                ix = self.indices[p]
                rho[np.ix_(ix, ix)] = b[gpos, :len(ix), :len(ix)]
        return rho

    def rhs(self, t, blocks):
        out = []
        for g, b in enumerate(blocks):
            gen = self.static[g]
            if self.osc[g]:
                gen = gen.copy()
                for nu, s, sh in self.osc[g]:
                    c = np.exp(1j * nu * t)
                    gen += c * s + np.conj(c) * sh
            y = gen @ b
            out.append(-1j * (y - np.swapaxes(y, 1, 2).conj()))
        for sg, dg, spos, dpos, j, jh in self.transfers:
            x = j @ blocks[sg][spos] @ jh
            np.add.at(out[dg], dpos, x)
        return out

    # -- scales for the step rule
    def scales(self):
        nu_max = max((abs(nu) for o in self.osc for nu, _, _ in o), default=0.0)
        spread = 0.0
        gam = 0.0
        for g in range(len(self.groups)):
            gen = self.static[g]
            h = 0.5 * (gen + np.swapaxes(gen, 1, 2).conj())
            k = 2j * (gen - h)        # sum rate L^dag L
            k = 0.5 * (k + np.swapaxes(k, 1, 2).conj())
            for gpos, p in enumerate(self.groups[g]):
                m = len(self.indices[p])
                ev = np.linalg.eigvalsh(h[gpos, :m, :m])
                osc_norm = sum(2 * np.linalg.norm(s[gpos], 2) for _, s, _ in self.osc[g])
                spread = max(spread, float(ev[-1] - ev[0]) + osc_norm)
                gam = max(gam, float(np.linalg.eigvalsh(k[gpos, :m, :m])[-1]))
        return nu_max, spread, gam

    def _flat(self):
        return [(g, gpos) for g, members in enumerate(self.groups) for gpos in range(len(members))]

    def vec_dim(self):
        return sum(self.gsize[g] ** 2 for g, _ in self._flat())

    def superoperator(self):
        """Dense generator on the row-major concatenation of block vectorizations."""
        flat = self._flat()
        sizes = [self.gsize[g] ** 2 for g, _ in flat]
        offs = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        n = int(offs[-1])
        lmat = np.zeros((n, n), dtype=complex)
        where = {gp: k for k, gp in enumerate(flat)}
        for k, (g, gpos) in enumerate(flat):
            gen = self.static[g][gpos]
            eye = np.eye(gen.shape[0])
            sl = slice(offs[k], offs[k + 1])
            lmat[sl, sl] = -1j * (np.kron(gen, eye) - np.kron(eye, gen.conj()))
        for sg, dg, spos, dpos, j, _ in self.transfers:
            for a, b, jj in zip(spos, dpos, j):
                ks, kd = where[(sg, a)], where[(dg, b)]
                lmat[offs[kd]:offs[kd + 1], offs[ks]:offs[ks + 1]] += np.kron(jj, jj.conj())
        return lmat, offs, flat

    def to_vec(self, blocks, flat):
        return np.concatenate([blocks[g][gpos].ravel() for g, gpos in flat])

    def from_vec(self, v, offs, flat):
        out = [np.empty_like(s, dtype=complex) for s in self.static]
        for k, (g, gpos) in enumerate(flat):
            m = self.gsize[g]
            out[g][gpos] = v[offs[k]:offs[k + 1]].reshape(m, m)
        return out


def _rk4_map(gen, h):
    """I + hL + (hL)^2/2 + (hL)^3/6 + (hL)^4/24, the exact RK4 step of a linear static system."""
    n = gen.shape[0]
    x = h * gen
    eye = np.eye(n, dtype=complex)
    t = eye + x / 4
    t = eye + (x / 3) @ t
    t = eye + (x / 2) @ t
    return eye + x @ t


class _PowerCache:
    """Powers of a step map by repeated squaring.

    If a conserved linear functional tau is given (the trace for density matrices), each
    product is corrected by a rank-one term so that tau @ M == tau holds to rounding;
    without it, rounding errors grow linearly with the step count.
    """

    def __init__(self, step_map, tau=None):
        self.tau = tau
        self.base = self._fix(step_map)
        self.cache = {}

    def _fix(self, m):
        if self.tau is not None:
            r = self.tau - self.tau @ m
            m = m + np.outer(self.tau, r) / (self.tau @ self.tau)
        return m

    def power(self, k):
        if k not in self.cache:
            result = None
            sq = self.base
            e = k
            while e:
                if e & 1:
                    result = sq if result is None else self._fix(result @ sq)
                e >>= 1
                if e:
                    sq = self._fix(sq @ sq)
            self.cache[k] = result
        return self.cache[k]


def _uniform(tg):
    d = np.diff(tg)
    return d.size > 0 and np.allclose(d, d[0], rtol=1e-9, atol=0)


def _step_counts(tg, dt_max, pow2=False):
    """Steps per sample interval; pow2 rounds counts up to powers of two (pure squaring)."""
    if len(tg) < 2:
        return np.zeros(0, dtype=int), np.zeros(0)
    uniform = _uniform(tg)
    d = np.full(len(tg) - 1, (tg[-1] - tg[0]) / (len(tg) - 1)) if uniform else np.diff(tg)
    k = np.maximum(1, np.ceil(d / dt_max - 1e-9)).astype(int)
    if pow2:
        k = 2 ** np.ceil(np.log2(k)).astype(int)
    return k, d / k


STEP_FRACTION = 1 / 160     # of the fastest period, for stepped density evolution
POWER_FRACTION = 1 / 320    # static propagation by powers, where extra steps are nearly free
PURE_FRACTION = 1 / 400     # state vectors: keeps the RK4 norm loss below ~1e-12 per step


def choose_step(nu_max, spread, gamma_max, fraction=1 / 20):
    """Largest dt with dt <= fraction*2pi/nu_max, fraction*2pi/spread and 0.05/gamma_max.

    The default fraction is the 1/20 ceiling; callers use finer fractions.
    """
    bounds = [math.inf]
    if nu_max > 0:
        bounds.append(fraction * 2 * math.pi / nu_max)
    if spread > 0:
        bounds.append(fraction * 2 * math.pi / spread)
    if gamma_max > 0:
        bounds.append(0.05 / gamma_max)
    return min(bounds)


@dataclass
class EvolutionResult:
    times: np.ndarray
    expectations: dict
    final_state: np.ndarray | None
    diagnostics: dict


def _block_observables(blocks: _Blocks, observables):
    return {name: [blocks.stack(op, g, transpose=True) for g in range(len(blocks.groups))]
            for name, op in observables.items()}


def _measure(obs_blocks, state):
    return {name: sum(complex(np.sum(o * s)) for o, s in zip(per, state)) for name, per in obs_blocks.items()}


def _hygiene(state):
    tr = sum(complex(np.trace(s, axis1=1, axis2=2).sum()) for s in state)
    herm = max(float(np.max(np.abs(s - np.swapaxes(s, 1, 2).conj()))) for s in state)
    mineig = min(float(np.min(np.linalg.eigvalsh(0.5 * (s + np.swapaxes(s, 1, 2).conj())))) for s in state)
    return tr, herm, mineig


def evolve(model: QuantumModel, t_grid, observables: Mapping[str, object] | None = None,
           dt: float | None = None, return_state: bool = False, sectors: bool = True,
           check_positivity: bool = True) -> EvolutionResult:
    """Integrate the master equation and sample expectation values on t_grid.

    The state at t_grid[0] is model.initial_state.
    """
    tg = np.asarray(t_grid, dtype=float)
    if tg.ndim != 1 or tg.size == 0 or np.any(np.diff(tg) <= 0):
        raise ValueError("t_grid must be a non-empty strictly ascending 1-D array")
    observables = dict(observables or {})
    blocks = _Blocks(model, sectors=sectors)
    nu_max, spread, gam = blocks.scales()
    vec_dim = blocks.vec_dim()
    use_power = blocks.static_model and vec_dim <= STATIC_POWER_MAX and tg.size > 1
    dt_rule = choose_step(nu_max, spread, gam, POWER_FRACTION if use_power else STEP_FRACTION)
    dt_max = dt if dt is not None else dt_rule
    if not math.isfinite(dt_max):
        dt_max = (tg[-1] - tg[0]) or 1.0
    ks, hs = _step_counts(tg, dt_max, pow2=use_power)

    obs_blocks = _block_observables(blocks, observables)
    state = blocks.split(model.initial_state)
    samples = {name: np.empty(tg.size, dtype=complex) for name in observables}
    trace_drift = herm = 0.0
    mineig = math.inf

    def record(i, st):
        nonlocal trace_drift, herm, mineig
        for name, v in _measure(obs_blocks, st).items():
            samples[name][i] = v
        tr, hm, me = _hygiene(st)
        trace_drift = max(trace_drift, abs(tr - 1))
        herm = max(herm, hm)
        if check_positivity:
            mineig = min(mineig, me)

    record(0, state)
    if use_power:
        lmat, offs, flat = blocks.superoperator()
        v = blocks.to_vec(state, flat)
        tau = blocks.to_vec([np.broadcast_to(np.eye(s.shape[1]), s.shape) for s in state], flat).real
        caches = {}
        for i in range(tg.size - 1):
            key = hs[i]
            if key not in caches:
                caches[key] = _PowerCache(_rk4_map(lmat, hs[i]), tau)
            v = caches[key].power(int(ks[i])) @ v
            state = blocks.from_vec(v, offs, flat)
            record(i + 1, state)
    else:
        for i in range(tg.size - 1):
            h = hs[i]
            t = tg[i]
            for _ in range(int(ks[i])):
                k1 = blocks.rhs(t, state)
                k2 = blocks.rhs(t + h / 2, [s + h / 2 * k for s, k in zip(state, k1)])
                k3 = blocks.rhs(t + h / 2, [s + h / 2 * k for s, k in zip(state, k2)])
                k4 = blocks.rhs(t + h, [s + h * k for s, k in zip(state, k3)])
                state = [s + h / 6 * (a + 2 * b + 2 * c + d) for s, a, b, c, d in zip(state, k1, k2, k3, k4)]
                t += h
            record(i + 1, state)
            if trace_drift > TRACE_FAIL:
                raise IntegrationAccuracyError(
                    f"trace drift {trace_drift:.2e} at t={tg[i + 1]:.6g}; reduce the step (dt={h:.3g})")
    if trace_drift > TRACE_FAIL:
        raise IntegrationAccuracyError(f"trace drift {trace_drift:.2e}; reduce the step")
    expectations = {}
    imag_max = 0.0
    for name, vals in samples.items():
        imag_max = max(imag_max, float(np.max(np.abs(vals.imag))) if vals.size else 0.0)
        expectations[name] = vals.real.copy()
    diag = {
        "dt": float(hs[0]) if hs.size else 0.0,
        "dt_rule": float(dt_rule),
        "steps": int(ks.sum()),
        "trace_drift": float(trace_drift),
        "hermiticity": float(herm),
        "min_eigenvalue": float(mineig) if check_positivity else None,
        "max_imag_expectation": imag_max,
        "blocks": len(blocks.indices),
        "largest_block": max(len(ix) for ix in blocks.indices),
        "padded_sizes": list(blocks.gsize),
        "sectored": bool(blocks.sectored),
        "propagator": "rk4-power" if use_power else "rk4-steps",
    }
    final = blocks.join(state) if return_state else None
    return EvolutionResult(tg, expectations, final, diag)


# ---------------------------------------------------------------- pure states

@dataclass
class PureEvolution:
    times: np.ndarray
    expectations: dict
    final_state: np.ndarray
    norm_drift: float
    diagnostics: dict


def evolve_pure(hamiltonian_terms: Sequence[OperatorTerm], initial_state, t_grid,
                observables: Mapping[str, object] | None = None, dt: float | None = None,
                max_dim: int = PURE_CAP, states: bool = False) -> PureEvolution:
    """Schrodinger evolution restricted to the components touched by the initial state.

    With states=True the full state vector at every grid time is kept in diagnostics["states"].
    """
    psi0 = np.asarray(initial_state, dtype=complex).ravel()
    dim = psi0.size
    if dim > max_dim:
        raise DimensionCapError(f"dimension {dim} exceeds pure-state cap {max_dim}")
    tg = np.asarray(t_grid, dtype=float)
    if tg.ndim != 1 or tg.size == 0 or np.any(np.diff(tg) <= 0):
        raise ValueError("t_grid must be a non-empty strictly ascending 1-D array")
    terms = list(hamiltonian_terms)
    for t in terms:
        if t.matrix.shape != (dim, dim):
            raise ValueError("Hamiltonian term shape mismatch")
    n0 = np.linalg.norm(psi0)
    if abs(n0 - 1) > 1e-12:
        raise ValueError("initial state must be normalized")
    if terms:
        _, lab = _components(dim, [t.matrix for t in terms])
    else:
        lab = np.arange(dim)
    touched = np.unique(lab[np.abs(psi0) > 0])
    idx = np.flatnonzero(np.isin(lab, touched))
    sub = np.ix_(idx, idx)
    static = np.zeros((idx.size, idx.size), dtype=complex)
    osc = []
    for t in terms:
        m = t.matrix[idx][:, idx].toarray()
        if not np.any(m):
            continue
        if t.frequency == 0:
            static += m
        else:
            osc.append((t.frequency, m))
    obs = {name: _csr(o)[idx][:, idx].toarray() for name, o in (observables or {}).items()}
    ev = np.linalg.eigvalsh(static) if idx.size else np.zeros(1)
    spread = float(ev[-1] - ev[0]) + sum(2 * np.linalg.norm(m, 2) for _, m in osc)
    # also bound the absolute phase rate: RK4 on a state vector sees eigenvalues, not differences
    spread = max(spread, float(np.max(np.abs(ev))) if ev.size else 0.0)
    nu_max = max((abs(nu) for nu, _ in osc), default=0.0)
    dt_rule = choose_step(nu_max, spread, 0.0, PURE_FRACTION)
    dt_max = dt if dt is not None else dt_rule
    if not math.isfinite(dt_max):
        dt_max = (tg[-1] - tg[0]) or 1.0
    ks, hs = _step_counts(tg, dt_max, pow2=not osc)
    psi = psi0[idx]
    vals = {name: np.empty(tg.size) for name in obs}
    kept = [] if states else None
    drift = 0.0

    def record(i, v):
        nonlocal drift
        for name, o in obs.items():
            vals[name][i] = float(np.real(np.vdot(v, o @ v)))
        drift = max(drift, abs(np.linalg.norm(v) - 1))
        if states:
            full = np.zeros(dim, dtype=complex)
            full[idx] = v
            kept.append(full)

    record(0, psi)
    if not osc:
        gen = -1j * static
        caches = {}
        for i in range(tg.size - 1):
            if hs[i] not in caches:
                caches[hs[i]] = _PowerCache(_rk4_map(gen, hs[i]))
            psi = caches[hs[i]].power(int(ks[i])) @ psi
            record(i + 1, psi)
    else:
        def f(t, v):
            h = static.copy()
            for nu, m in osc:
                c = np.exp(1j * nu * t)
                h += c * m + np.conj(c) * m.conj().T
            return -1j * (h @ v)
        for i in range(tg.size - 1):
            h, t = hs[i], tg[i]
            for _ in range(int(ks[i])):
                k1 = f(t, psi)
                k2 = f(t + h / 2, psi + h / 2 * k1)
                k3 = f(t + h / 2, psi + h / 2 * k2)
                k4 = f(t + h, psi + h * k3)
                psi = psi + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                t += h
            record(i + 1, psi)
    if drift > TRACE_FAIL:
        raise IntegrationAccuracyError(f"norm drift {drift:.2e}; reduce the step")
    final = np.zeros(dim, dtype=complex)
    final[idx] = psi
    diag = {"dt": float(hs[0]) if hs.size else 0.0, "steps": int(ks.sum()), "subspace_dim": int(idx.size)}
    if states:
        diag["states"] = np.array(kept)
    return PureEvolution(tg, vals, final, float(drift), diag)


# ---------------------------------------------------------------- steady state

STEADY_MAX_DIM = 64


def _generator(h, jumps):
    dim = h.shape[0]
    eye = np.eye(dim)
    lmat = -1j * (np.kron(h, eye) - np.kron(eye, h.conj()))
    for j, r in jumps:
        k = j.conj().T @ j
        lmat += r * (np.kron(j, j.conj()) - 0.5 * np.kron(k, eye) - 0.5 * np.kron(eye, k.conj()))
    return lmat


def _static_parts(model: QuantumModel):
    if not model.is_static:
        raise ValueError("steady state requires a static Hamiltonian")
    dim = model.layout.total_dim
    h = np.zeros((dim, dim), dtype=complex)
    for t in model.hamiltonian_terms:
        h += t.matrix.toarray()
    return h, [(op.toarray(), r) for op, r in model.jump_operators]


def liouvillian(model: QuantumModel) -> np.ndarray:
    """Dense row-major vectorized generator of a static model."""
    return _generator(*_static_parts(model))


def _reachable(h, jumps, rho0):
    """Basis states reachable from the support of rho0 through H (both ways) and jumps (forward)."""
    adj = (np.abs(h) > 0).astype(float)
    for j, r in jumps:
        if r > 0:
            adj += (np.abs(j) > 0).T          # edge col -> row
    start = np.flatnonzero(np.abs(np.diag(rho0)) > 0)
    seen = np.zeros(h.shape[0], dtype=bool)
    seen[start] = True
    stack = list(start)
    while stack:
        i = stack.pop()
        for k in np.flatnonzero(adj[i]):
            if not seen[k]:
                seen[k] = True
                stack.append(k)
    return np.flatnonzero(seen)


def steady_state(model: QuantumModel, null_tol: float = 1e-9) -> np.ndarray:
    """Unique unit-trace null vector of the generator on the part of the space reachable
    from the initial state."""
    dim = model.layout.total_dim
    if dim > STEADY_MAX_DIM:
        raise DimensionCapError(f"steady state limited to dimension {STEADY_MAX_DIM}")
    if not any(r > 0 and op.nnz for op, r in model.jump_operators):
        raise ValueError("steady state needs at least one jump with positive rate")
    h, jumps = _static_parts(model)
    idx = _reachable(h, jumps, model.initial_state)
    sub = np.ix_(idx, idx)
    lmat = _generator(h[sub], [(j[sub], r) for j, r in jumps])
    _, s, vh = np.linalg.svd(lmat)
    scale = max(s[0], 1.0)
    null = int(np.sum(s <= null_tol * scale))
    if null > 1:
        raise SteadyStateAmbiguity(f"steady-state manifold has dimension {null}")
    m = idx.size
    part = vh[-1].conj().reshape(m, m)
    part = part / np.trace(part)
    rho = np.zeros((dim, dim), dtype=complex)
    rho[sub] = 0.5 * (part + part.conj().T)
    return rho
