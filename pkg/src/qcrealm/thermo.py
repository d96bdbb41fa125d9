"""Quasiclassical coarse graining on a spin-1/2 chain.

Block-averaged energy and number densities, maximum-entropy (local Gibbs)
fits to them, coarse-grained entropy histories and lattice continuity checks.
Every operator in a model commutes with the total number N, so all heavy
linear algebra is done sector by sector in the N eigenbasis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .qcore import HBAR, MAX_DIM, DimensionError, QuantumState, as_state

FIT_TOL = 1e-8
FACE_TOL = 1e-9
MAX_ITER = 200
MAX_SITES = 12


class InfeasibleTargetError(ValueError):
    """Targets outside the set of achievable expectation values."""

    def __init__(self, message: str, nearest: np.ndarray):
        super().__init__(message)
        self.nearest = nearest


class FitNotConvergedError(RuntimeError):
    def __init__(self, message: str, last_theta: np.ndarray):
        super().__init__(message)
        self.last_theta = last_theta


# ----------------------------------------------------------------------------
# lattice model
# ----------------------------------------------------------------------------

def _occupations(n_sites: int) -> np.ndarray:
    """occ[x, i] = 1 if site i of basis state x is up (site 0 = most significant bit, up = bit 0)."""
    x = np.arange(2 ** n_sites)
    bits = (x[:, None] >> (n_sites - 1 - np.arange(n_sites))[None, :]) & 1
    return (1 - bits).astype(float)


def xxz_bond(n_sites: int, i: int, j: int, coupling: float, anisotropy: float) -> np.ndarray:
    """coupling * (SxSx + SySy + anisotropy SzSz) on sites i, j, as a dense real matrix."""
    dim = 2 ** n_sites
    occ = _occupations(n_sites)
    si, sj = occ[:, i] - 0.5, occ[:, j] - 0.5
    h = np.diag(coupling * anisotropy * si * sj)
    x = np.arange(dim)
    differ = occ[:, i] != occ[:, j]
    flipped = x ^ ((1 << (n_sites - 1 - i)) | (1 << (n_sites - 1 - j)))
    h[flipped[differ], x[differ]] += coupling / 2
    return h


@dataclass(frozen=True)
class Bond:
    sites: tuple[int, int]
    operator: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class LatticeModel:
    """Spin-1/2 chain with bond Hamiltonian terms and a contiguous block partition."""

    sites: int
    bonds: tuple
    blocks: tuple
    hbar: float = HBAR
    name: str = "chain"
    local_dim: int = 2

    def __post_init__(self):
        if not 1 <= self.sites <= MAX_SITES:
            raise DimensionError(f"chain length {self.sites} outside 1..{MAX_SITES}")
        if 2 ** self.sites > MAX_DIM:
            raise DimensionError("Hilbert space above dimension cap")
        blocks = tuple(tuple(int(s) for s in b) for b in self.blocks)
        flat = [s for b in blocks for s in b]
        if sorted(flat) != list(range(self.sites)):
            raise ValueError("blocks must partition the sites exactly")
        for b in blocks:
            if list(b) != list(range(b[0], b[0] + len(b))):
                raise ValueError("blocks must be contiguous runs of sites")
        object.__setattr__(self, "blocks", blocks)
        occ = _occupations(self.sites)
        h = sum((b.operator for b in self.bonds), np.zeros((2 ** self.sites,) * 2))
        object.__setattr__(self, "_occ", occ)
        object.__setattr__(self, "_h", h)
        n_tot = occ.sum(axis=1)
        sectors = tuple(np.flatnonzero(n_tot == k) for k in range(self.sites + 1))
        object.__setattr__(self, "_sectors", sectors)

    @property
    def dimension(self) -> int:
        return 2 ** self.sites

    @property
    def hamiltonian(self) -> np.ndarray:
        return self._h

    @property
    def number_diagonal(self) -> np.ndarray:
        return self._occ.sum(axis=1)

    @property
    def number(self) -> np.ndarray:
        return np.diag(self.number_diagonal)

    @property
    def conserved_ops(self) -> tuple[np.ndarray, np.ndarray]:
        return self._h, self.number

    @property
    def sectors(self) -> tuple:
        return self._sectors

    def block_of(self, site: int) -> int:
        for k, b in enumerate(self.blocks):
            if site in b:
                return k
        raise IndexError(site)

    def block_energy_op(self, k: int) -> np.ndarray:
        """h_V: bonds inside the block fully, bonds crossing its edge with weight 1/2."""
        out = np.zeros((self.dimension,) * 2)
        members = set(self.blocks[k])
        for b in self.bonds:
            w = 0.5 * ((b.sites[0] in members) + (b.sites[1] in members))
            if w:
                out += w * b.operator
        return out

    def block_number_diagonal(self, k: int) -> np.ndarray:
        return self._occ[:, list(self.blocks[k])].sum(axis=1)

    def commutator_residual(self) -> float:
        n = self.number_diagonal
        return float(np.max(np.abs(self._h * n[None, :] - n[:, None] * self._h)))

    def eigensystem(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues and eigenvectors of H, assembled from the N sectors."""
        cache = self.__dict__.get("_eig")
        if cache is None:
            vals = np.empty(self.dimension)
            vecs = np.zeros((self.dimension, self.dimension))
            for idx in self._sectors:
                w, v = np.linalg.eigh(self._h[np.ix_(idx, idx)])
                vals[idx] = w
                vecs[np.ix_(idx, idx)] = v
            cache = (vals, vecs)
            object.__setattr__(self, "_eig", cache)
        return cache


def equal_blocks(n_sites: int, n_blocks: int) -> tuple:
    if n_sites % n_blocks:
        raise ValueError("n_blocks must divide the chain length")
    size = n_sites // n_blocks
    return tuple(tuple(range(k * size, (k + 1) * size)) for k in range(n_blocks))


def xxz_chain(
    n_sites: int = 10,
    anisotropy: float = 0.5,
    coupling: float = 1.0,
    n_blocks: int = 5,
    next_nearest: float = 0.0,
    blocks: Optional[Sequence[Sequence[int]]] = None,
    hbar: float = HBAR,
) -> LatticeModel:
    """Open XXZ chain; ``next_nearest`` adds an XXZ coupling between sites i, i+2."""
    bonds = [Bond((i, i + 1), xxz_bond(n_sites, i, i + 1, coupling, anisotropy)) for i in range(n_sites - 1)]
    if next_nearest:
        bonds += [Bond((i, i + 2), xxz_bond(n_sites, i, i + 2, next_nearest, anisotropy)) for i in range(n_sites - 2)]
    return LatticeModel(
        n_sites, tuple(bonds), tuple(blocks) if blocks is not None else equal_blocks(n_sites, n_blocks), hbar,
        name=f"xxz(L={n_sites}, delta={anisotropy}, J2={next_nearest})",
    )


def lattice_presets() -> dict:
    return {
        "xxz": lambda: xxz_chain(10, 0.5, 1.0, 5),
        "xxz_nnn": lambda: xxz_chain(10, 0.5, 1.0, 5, next_nearest=0.5),
        "xx_small": lambda: xxz_chain(6, 0.0, 1.0, 3),
        "heisenberg_small": lambda: xxz_chain(8, 1.0, 1.0, 2),
    }


def basis_state(model: LatticeModel, ups: Sequence[int]) -> np.ndarray:
    """Product state with the listed sites up, all others down."""
    occ = np.zeros(model.sites)
    occ[list(ups)] = 1
    x = int(sum(int(1 - o) << (model.sites - 1 - i) for i, o in enumerate(occ)))
    v = np.zeros(model.dimension, dtype=complex)
    v[x] = 1.0
    return v


def domain_wall(model: LatticeModel) -> np.ndarray:
    return basis_state(model, range(model.sites // 2))


# ----------------------------------------------------------------------------
# densities and evolution
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ConservedDensityField:
    """Per-block energy and number densities. No momentum channel on a spin chain."""

    energy: np.ndarray
    number: np.ndarray
    block_sizes: tuple
    time: float = 0.0
    momentum: Optional[np.ndarray] = None

    @property
    def energy_totals(self) -> np.ndarray:
        return self.energy * np.asarray(self.block_sizes)

    @property
    def number_totals(self) -> np.ndarray:
        return self.number * np.asarray(self.block_sizes)


def _expect(op: np.ndarray, state: QuantumState) -> float:
    if state.is_pure:
        return float(np.vdot(state.data, op @ state.data).real)
    return float(np.sum(op * state.data.T).real)


def _expect_diag(diag: np.ndarray, state: QuantumState) -> float:
    if state.is_pure:
        return float(np.sum(diag * np.abs(state.data) ** 2))
    return float(np.sum(diag * np.diag(state.data).real))


def evolve(model: LatticeModel, state, t: float) -> QuantumState:
    """Exact evolution through the sector eigenbasis of H."""
    st = as_state(state)
    if t == 0:
        return st
    w, v = model.eigensystem()
    phase = np.exp(-1j * w * t / model.hbar)
    if st.is_pure:
        return QuantumState(v @ (phase * (v.T @ st.data)))
    r = v.T @ st.data @ v
    r = phase[:, None] * r * phase.conj()[None, :]
    out = v @ r @ v.T
    return QuantumState((out + out.conj().T) / 2)


def block_densities(model: LatticeModel, state, t: float = 0.0) -> ConservedDensityField:
    """Block densities of ``state`` evolved by time ``t`` under the model Hamiltonian."""
    st = evolve(model, state, t)
    sizes = tuple(len(b) for b in model.blocks)
    e = np.array([_expect(model.block_energy_op(k), st) for k in range(len(sizes))]) / sizes
    n = np.array([_expect_diag(model.block_number_diagonal(k), st) for k in range(len(sizes))]) / sizes
    return ConservedDensityField(e, n, sizes, float(t))


def global_gibbs(model: LatticeModel, beta: float, mu: float = 0.0) -> QuantumState:
    """exp(-beta (H - mu N)) / Z, evaluated in the log domain."""
    if not np.isfinite(beta) or not np.isfinite(mu):
        raise ValueError("beta and mu must be finite")
    w, v = model.eigensystem()
    k = -beta * (w - mu * model.number_diagonal @ (v ** 2))
    p = np.exp(k - logsumexp(k))
    rho = (v * p) @ v.T
    return QuantumState((rho + rho.T) / 2 + 0j)


# ----------------------------------------------------------------------------
# maximum-entropy fit
# ----------------------------------------------------------------------------

def _log_mean_weights(w: np.ndarray, p: np.ndarray) -> np.ndarray:
    """K_ab = (p_a - p_b)/(w_b - w_a), the Kubo-Mori kernel, with the equal-level limit p_a."""
    d = np.abs(w[:, None] - w[None, :])
    pmax = np.maximum(p[:, None], p[None, :])
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(d > 1e-12, -np.expm1(-d) / np.where(d > 0, d, 1.0), 1.0 - d / 2)
    return pmax * f


@dataclass
class _Reduced:
    ops: list  # ops[j][s]: reduced block of operator j in sector s
    dims: list


def _sector_blocks(ops_full: Sequence[np.ndarray], sectors) -> list:
    return [[o[np.ix_(idx, idx)] for idx in sectors] for o in ops_full]


def _face_reduce(blocks: list, targets: np.ndarray, tol: float):
    """Restrict to the face of the state space selected by boundary targets.

    Returns reduced blocks, the status of every operator and the sector bases.
    """
    m = len(blocks)
    n_sec = len(blocks[0])
    bases = [np.eye(b.shape[0]) for b in blocks[0]]
    status = ["free"] * m
    changed = True
    while changed:
        changed = False
        for j in range(m):
            if status[j] != "free":
                continue
            eigs = []
            for s in range(n_sec):
                if bases[s].shape[1] == 0:
                    eigs.append((np.empty(0), np.empty((0, 0))))
                    continue
                r = bases[s].T.conj() @ blocks[j][s] @ bases[s]
                eigs.append(np.linalg.eigh((r + r.conj().T) / 2))
            allw = np.concatenate([e[0] for e in eigs])
            lo, hi = float(allw.min()), float(allw.max())
            scale = tol * max(1.0, abs(lo), abs(hi))
            t = targets[j]
            if t < lo - scale or t > hi + scale:
                near = targets.copy()
                near[j] = min(max(t, lo), hi)
                raise InfeasibleTargetError(f"target {j} = {t!r} outside achievable range [{lo!r}, {hi!r}]", near)
            if hi - lo <= scale:
                status[j] = "redundant"
                continue
            side = "min" if abs(t - lo) <= scale else "max" if abs(t - hi) <= scale else None
            if side is None:
                continue
            ref = lo if side == "min" else hi
            for s in range(n_sec):
                w, v = eigs[s]
                keep = np.abs(w - ref) <= scale
                bases[s] = bases[s] @ v[:, keep] if w.size else bases[s]
            status[j] = "saturated_" + side
            changed = True
    red = [
        [bases[s].T.conj() @ blocks[j][s] @ bases[s] for s in range(n_sec)]
        for j in range(m)
    ]
    return red, status, bases


@dataclass(frozen=True)
class _DualEval:
    phi: float
    grad: np.ndarray
    hess: Optional[np.ndarray]
    expect: np.ndarray
    log_z: float
    entropy: float
    spectra: tuple


def _dual(red_free: list, theta: np.ndarray, targets: np.ndarray, hess: bool) -> _DualEval:
    n_sec = len(red_free[0]) if red_free else 0
    ws, vs = [], []
    for s in range(n_sec):
        d = red_free[0][s].shape[0]
        if d == 0:
            ws.append(np.empty(0))
            vs.append(np.empty((0, 0)))
            continue
        k = sum(th * red_free[j][s] for j, th in enumerate(theta))
        w, v = np.linalg.eigh((k + k.conj().T) / 2)
        ws.append(w)
        vs.append(v)
    allw = np.concatenate(ws)
    log_z = float(logsumexp(-allw))
    m = len(theta)
    expect = np.zeros(m)
    h = np.zeros((m, m)) if hess else None
    entropy = 0.0
    for s in range(n_sec):
        if ws[s].size == 0:
            continue
        p = np.exp(-ws[s] - log_z)
        nz = p > 0
        entropy -= float(np.sum(p[nz] * np.log(p[nz])))
        a = np.stack([vs[s].conj().T @ red_free[j][s] @ vs[s] for j in range(m)])
        diag = np.einsum("jaa->ja", a).real
        expect += diag @ p
        if hess:
            kern = _log_mean_weights(ws[s], p)
            h += np.einsum("jab,kab,ab->jk", a, a.conj(), kern).real
    if hess:
        h -= np.outer(expect, expect)
        h = (h + h.T) / 2
    phi = log_z + float(theta @ targets)
    return _DualEval(phi, targets - expect, h, expect, log_z, entropy, (tuple(ws), tuple(vs)))


@dataclass(frozen=True)
class MaxEntResult:
    theta: np.ndarray  # natural parameters; +-inf on saturated faces, 0 for redundant constraints
    status: tuple
    log_z: float
    entropy: float
    residual: float
    iterations: int
    phi_history: tuple
    fitted: np.ndarray


def maxent_solve(
    ops_full: Sequence[np.ndarray],
    targets: Sequence[float],
    sectors,
    tol: float = FIT_TOL,
    max_iter: int = MAX_ITER,
    face_tol: float = FACE_TOL,
    keep_state: bool = False,
):
    """Maximize -Tr(r log r) subject to Tr(r O_j) = t_j for operators commuting with the sector split.

    The dual Phi(theta) = log Tr exp(-sum theta_j O_j) + theta . t is minimized
    by damped Newton with the exact Kubo-Mori Hessian.
    """
    targets = np.asarray(targets, dtype=float)
    blocks = _sector_blocks(ops_full, sectors)
    red, status, bases = _face_reduce(blocks, targets, face_tol)
    free = [j for j, s in enumerate(status) if s == "free"]
    n_sec = len(sectors)
    if not free:
        # the face fixes everything; maximal mixing on it
        red_free = [[np.zeros((b.shape[1], b.shape[1])) for b in bases]]
        theta_f = np.zeros(1)
        t_f = np.zeros(1)
    else:
        red_free = [red[j] for j in free]
        theta_f = np.zeros(len(free))
        t_f = targets[free]
    ev = _dual(red_free, theta_f, t_f, True)
    history = [ev.phi]
    lam = 0.0
    it = 0
    while free and np.max(np.abs(ev.grad)) > tol:
        if it >= max_iter:
            raise FitNotConvergedError(f"Newton did not converge in {max_iter} iterations "
                                       f"(residual {np.max(np.abs(ev.grad)):.3e})", theta_f)
        it += 1
        h = ev.hess
        scale = max(float(np.max(np.diag(h))), 1e-300)
        while True:
            try:
                c = np.linalg.cholesky(h + lam * scale * np.eye(len(free)))
                break
            except np.linalg.LinAlgError:
                lam = max(10 * lam, 1e-12)
        # Newton direction for the dual: (H + lam) d = -grad
        step = -np.linalg.solve(c.T, np.linalg.solve(c, ev.grad))
        slope = float(ev.grad @ step)
        a = 1.0
        accepted = None
        while a > 1e-14:
            trial = _dual(red_free, theta_f + a * step, t_f, False)
            if np.isfinite(trial.phi) and trial.phi <= ev.phi + 1e-4 * a * slope + 1e-15 * abs(ev.phi):
                accepted = theta_f + a * step
                break
            a *= 0.5
        if accepted is None:
            if lam * scale > 1e12:
                raise FitNotConvergedError("line search failed", theta_f)
            lam = max(10 * lam, 1e-10)
            continue
        theta_f = accepted
        ev = _dual(red_free, theta_f, t_f, True)
        history.append(ev.phi)
        lam = lam / 10 if a == 1.0 else lam
        if np.max(np.abs(theta_f)) > 1e7:
            raise InfeasibleTargetError("multipliers diverge: targets lie outside the joint achievable set", _full_expect(red, ev, free, targets, status))
    # polish: undamped Newton steps while they still shrink the residual
    for _ in range(3 if free else 0):
        try:
            c = np.linalg.cholesky(ev.hess)
        except np.linalg.LinAlgError:
            break
        cand = theta_f - np.linalg.solve(c.T, np.linalg.solve(c, ev.grad))
        trial = _dual(red_free, cand, t_f, True)
        if not (np.max(np.abs(trial.grad)) < np.max(np.abs(ev.grad)) and trial.phi <= ev.phi + 1e-14 * max(1.0, abs(ev.phi))):
            break
        theta_f, ev = cand, trial
        history.append(ev.phi)
    theta = np.zeros(len(targets))
    for j, s in enumerate(status):
        if s == "saturated_min":
            theta[j] = np.inf
        elif s == "saturated_max":
            theta[j] = -np.inf
    if free:
        theta[free] = theta_f
    fitted = _full_expect(red, ev, free, targets, status)
    residual = float(np.max(np.abs(fitted - targets))) if len(targets) else 0.0
    out = MaxEntResult(theta, tuple(status), ev.log_z, ev.entropy, residual, it, tuple(history), fitted)
    if keep_state:
        ws, vs = ev.spectra
        parts = []
        for s in range(n_sec):
            if ws[s].size == 0:
                continue
            p = np.exp(-ws[s] - ev.log_z)
            u = bases[s] @ vs[s]
            parts.append((sectors[s], (u * p) @ u.conj().T))
        return out, parts
    return out


def _full_expect(red, ev: _DualEval, free, targets, status) -> np.ndarray:
    ws, vs = ev.spectra
    val = np.zeros(len(targets))
    for s in range(len(ws)):
        if ws[s].size == 0:
            continue
        p = np.exp(-ws[s] - ev.log_z)
        for j in range(len(targets)):
            a = vs[s].conj().T @ red[j][s] @ vs[s]
            val[j] += float(np.real(np.diag(a)) @ p)
    return val


@dataclass(frozen=True)
class LocalGibbsFit:
    """r = exp(-sum_y beta_y (h_y - mu_y n_y)) / Z.

    ``theta`` holds the natural parameters (beta_y, then -beta_y mu_y).
    Saturated constraints (targets on the boundary of the achievable set)
    carry infinite natural parameters; mu is nan where it is undefined.
    """

    beta: np.ndarray
    mu: np.ndarray
    theta: np.ndarray
    status: tuple
    log_z: float
    entropy: float
    residual: float
    iterations: int
    phi_history: tuple
    fitted: ConservedDensityField
    _parts: tuple = field(default=(), repr=False)
    _dim: int = 0

    def density_matrix(self) -> np.ndarray:
        rho = np.zeros((self._dim, self._dim), dtype=complex)
        for idx, blk in self._parts:
            rho[np.ix_(idx, idx)] = blk
        return rho

    @property
    def trace(self) -> float:
        return float(sum(np.trace(b).real for _, b in self._parts))


def _mu_from_theta(beta: np.ndarray, theta_n: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        mu = np.where(np.isfinite(beta) & (np.abs(beta) > 1e-14), -theta_n / np.where(beta == 0, 1, beta), np.nan)
    mu = np.where((beta == 0) & (theta_n == 0), 0.0, mu)
    return mu


def maxent_fit(model: LatticeModel, targets: ConservedDensityField, keep_state: bool = True, **kw) -> LocalGibbsFit:
    """Local-equilibrium state with the given block densities and maximal entropy."""
    nb = len(model.blocks)
    if len(targets.energy) != nb or len(targets.number) != nb:
        raise ValueError("targets must give one energy and one number density per block")
    ops = [model.block_energy_op(k) for k in range(nb)] + [np.diag(model.block_number_diagonal(k)) for k in range(nb)]
    t = np.concatenate([targets.energy_totals, targets.number_totals])
    res = maxent_solve(ops, t, model.sectors, keep_state=keep_state, **kw)
    parts = ()
    if keep_state:
        res, parts = res
    beta = res.theta[:nb]
    mu = _mu_from_theta(beta, res.theta[nb:])
    sizes = np.asarray(targets.block_sizes, dtype=float)
    fitted = ConservedDensityField(res.fitted[:nb] / sizes, res.fitted[nb:] / sizes, targets.block_sizes, targets.time)
    return LocalGibbsFit(beta, mu, res.theta, res.status, res.log_z, res.entropy, res.residual,
                         res.iterations, res.phi_history, fitted, tuple(parts), model.dimension)


def matched_gibbs(model: LatticeModel, energy: float, number: float) -> MaxEntResult:
    """Global Gibbs state with <H> = energy and <N> = number (beta = theta[0], mu = -theta[1]/beta)."""
    return maxent_solve([model.hamiltonian, model.number], [energy, number], model.sectors)


# ----------------------------------------------------------------------------
# entropy histories and continuity
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class EntropySample:
    time: float
    entropy: float
    von_neumann: float
    beta: np.ndarray
    mu: np.ndarray
    densities: ConservedDensityField
    residual: float


def _von_neumann(st: QuantumState) -> float:
    if st.is_pure:
        return 0.0
    w = np.linalg.eigvalsh(st.data)
    w = w[w > 1e-15]
    return float(-np.sum(w * np.log(w)))


def entropy_history(model: LatticeModel, initial_state, times: Sequence[float]) -> list[EntropySample]:
    """Coarse-grained entropy S(t) of the block densities along the exact evolution."""
    st0 = as_state(initial_state)
    s_vn = _von_neumann(st0)
    out = []
    for t in times:
        dens = block_densities(model, st0, float(t))
        fit = maxent_fit(model, dens, keep_state=False)
        out.append(EntropySample(float(t), fit.entropy, s_vn, fit.beta, fit.mu, dens, fit.residual))
    return out


def plateau(samples: Sequence[EntropySample]) -> float:
    """Mean entropy over the last quarter of the samples."""
    n = max(1, len(samples) // 4)
    return float(np.mean([s.entropy for s in samples[-n:]]))


def _bond_current(model: LatticeModel, bond: Bond, site: int, st: QuantumState) -> float:
    """Rate of change of n_site generated by one bond term, (i/hbar) <[h_b, n_site]>."""
    n = model._occ[:, site]
    comm = bond.operator * n[None, :] - n[:, None] * bond.operator
    return float((1j / model.hbar * _expect_complex(comm, st)).real)


def _expect_complex(op: np.ndarray, st: QuantumState) -> complex:
    if st.is_pure:
        return complex(np.vdot(st.data, op @ st.data))
    return complex(np.sum(op * st.data.T))


@dataclass(frozen=True)
class ContinuityReport:
    block: int
    dndt: float  # d<n_V>/dt from the full commutator
    inflow: float  # net current into the block through its boundary bonds
    residual: float


def number_rate(model: LatticeModel, state, sites: Sequence[int]) -> float:
    """d<n_V>/dt = (i/hbar) <[H, n_V]>."""
    st = as_state(state)
    n = model._occ[:, list(sites)].sum(axis=1)
    h = model.hamiltonian
    return float((1j / model.hbar * _expect_complex(h * n[None, :] - n[:, None] * h, st)).real)


def boundary_inflow(model: LatticeModel, state, sites: Sequence[int]) -> float:
    """Sum over bonds with exactly one end inside ``sites`` of the current into the inner end."""
    st = as_state(state)
    inside = set(sites)
    total = 0.0
    for b in model.bonds:
        a, c = b.sites
        if (a in inside) != (c in inside):
            total += _bond_current(model, b, a if a in inside else c, st)
    return total


def continuity_check(model: LatticeModel, state, block: int) -> ContinuityReport:
    sites = model.blocks[block]
    dndt = number_rate(model, state, sites)
    inflow = boundary_inflow(model, state, sites)
    return ContinuityReport(block, dndt, inflow, abs(dndt - inflow))


def single_excitation_packet(model: LatticeModel, center: float, width: float, k0: float) -> np.ndarray:
    """One up spin in a Gaussian wave packet over sites, all others down."""
    amps = np.exp(-((np.arange(model.sites) - center) ** 2) / (4 * width ** 2) + 1j * k0 * np.arange(model.sites))
    amps /= np.linalg.norm(amps)
    return sum(a * basis_state(model, [i]) for i, a in enumerate(amps))
