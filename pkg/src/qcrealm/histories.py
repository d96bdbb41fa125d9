"""Decoherent-histories engine.

Sets of histories are schedules of exhaustive, exclusive projector sets at
increasing times. Chain operators, branch vectors and the decoherence
functional ``D(a', a) = Tr(C_a' rho C_a^dagger)`` are computed densely.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Hashable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .qcore import (
    HBAR,
    TOL_HERM,
    QuantumState,
    as_state,
    check_square,
    is_hermitian,
    is_projector,
    ket,
    propagator as _propagator,
    tensor,
)

DEFAULT_EPSILON = 1e-8
# |D| below this is treated as an exact zero when normalising
_ZERO = 1e-13


class NotAProjectorError(ValueError):
    pass


class InconsistentProbabilityError(ArithmeticError):
    """A diagonal entry of D came out negative beyond round-off."""


@dataclass(frozen=True)
class ProjectorSet:
    projectors: tuple
    time: float
    label: str = ""

    def __post_init__(self):
        ps = tuple(check_square(p, "projector") for p in self.projectors)
        if not ps:
            raise ValueError("a projector set needs at least one projector")
        dim = ps[0].shape[0]
        if any(p.shape != (dim, dim) for p in ps):
            raise ValueError("projectors in a set must share one dimension")
        for p in ps:
            if not is_projector(p):
                raise NotAProjectorError(f"set {self.label!r}: operator is not an orthogonal projector")
        if not np.allclose(sum(ps), np.eye(dim), atol=TOL_HERM, rtol=0):
            raise ValueError(f"set {self.label!r} is not exhaustive (sum != I)")
        for i, j in itertools.combinations(range(len(ps)), 2):
            if not np.allclose(ps[i] @ ps[j], 0, atol=TOL_HERM, rtol=0):
                raise ValueError(f"set {self.label!r}: projectors {i} and {j} are not exclusive")
        object.__setattr__(self, "projectors", ps)
        object.__setattr__(self, "time", float(self.time))

    @property
    def dim(self) -> int:
        return self.projectors[0].shape[0]

    def __len__(self) -> int:
        return len(self.projectors)

    @classmethod
    def from_basis(cls, basis: np.ndarray, time: float, label: str = "", groups=None) -> "ProjectorSet":
        """Projectors onto the columns of a unitary ``basis``, optionally grouped."""
        basis = np.asarray(basis, dtype=complex)
        groups = groups if groups is not None else [[i] for i in range(basis.shape[1])]
        projs = []
        for g in groups:
            v = basis[:, list(g)]
            projs.append(v @ v.conj().T)
        return cls(tuple(projs), time, label)


@dataclass(frozen=True)
class ChainOperator:
    history_index: Hashable
    operator: np.ndarray


@dataclass(frozen=True)
class HistorySet:
    """Schedule of projector sets plus the dynamics and the initial state.

    ``propagator`` overrides ``exp(-i H t / hbar)`` when the evolution is not
    generated by a single time-independent Hamiltonian (e.g. impulsive
    measurement couplings).
    """

    schedule: tuple
    hamiltonian: np.ndarray
    initial_state: QuantumState
    hbar: float = HBAR
    propagator: Optional[Callable[[float], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        sched = tuple(self.schedule)
        h = check_square(self.hamiltonian, "Hamiltonian")
        if not is_hermitian(h):
            raise ValueError("Hamiltonian is not Hermitian")
        state = as_state(self.initial_state)
        dim = h.shape[0]
        if state.dim != dim:
            raise ValueError("initial state and Hamiltonian dimensions differ")
        for s in sched:
            if s.dim != dim:
                raise ValueError(f"projector set {s.label!r} lives on a different space")
        times = [s.time for s in sched]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"set times must be strictly increasing, got {times}")
        object.__setattr__(self, "schedule", sched)
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "initial_state", state)

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.schedule)

    def indices(self) -> list[tuple[int, ...]]:
        return list(itertools.product(*(range(n) for n in self.shape)))

    def unitary(self, t: float) -> np.ndarray:
        if self.propagator is not None:
            return np.asarray(self.propagator(t), dtype=complex)
        return _propagator(self.hamiltonian, t, self.hbar)

    @cached_property
    def _unitaries(self) -> tuple:
        return tuple(self.unitary(s.time) for s in self.schedule)

    def heisenberg(self, k: int, alpha: int) -> np.ndarray:
        u = self._unitaries[k]
        return u.conj().T @ self.schedule[k].projectors[alpha] @ u

    def apply_heisenberg(self, k: int, alpha: int, vecs: np.ndarray) -> np.ndarray:
        """P^k_alpha(t_k) applied to column vectors without forming it."""
        u = self._unitaries[k]
        return u.conj().T @ (self.schedule[k].projectors[alpha] @ (u @ vecs))

    @cached_property
    def _weighted_vectors(self) -> tuple[np.ndarray, np.ndarray]:
        """Columns ``v_k`` and weights ``l_k`` with rho = sum l_k |v_k><v_k|."""
        st = self.initial_state
        if st.is_pure:
            return np.ones(1), st.data.reshape(-1, 1)
        w, v = np.linalg.eigh(st.density_matrix())
        keep = w > 1e-15
        return w[keep], v[:, keep]


# ----------------------------------------------------------------------------
# single-history objects
# ----------------------------------------------------------------------------

def heisenberg_projector(p: np.ndarray, h: np.ndarray, t: float, hbar: float = HBAR) -> np.ndarray:
    """exp(+iHt) P exp(-iHt)."""
    p = check_square(p, "projector")
    if not is_projector(p):
        raise NotAProjectorError("input is not an orthogonal projector")
    u = _propagator(h, t, hbar)
    out = u.conj().T @ p @ u
    return (out + out.conj().T) / 2


def _check_index(hs: HistorySet, index: Sequence[int]) -> tuple[int, ...]:
    index = tuple(int(a) for a in index)
    if len(index) != len(hs.schedule):
        raise IndexError(f"history index {index} has wrong length for {len(hs.schedule)} sets")
    for a, n in zip(index, hs.shape):
        if not 0 <= a < n:
            raise IndexError(f"history index {index} out of range for shape {hs.shape}")
    return index


def chain_operator(hs: HistorySet, index: Sequence[int]) -> ChainOperator:
    """C_a = P^n_{a_n}(t_n) ... P^1_{a_1}(t_1), latest time leftmost."""
    index = _check_index(hs, index)
    c = np.eye(hs.dim, dtype=complex)
    for k, a in enumerate(index):
        c = hs.heisenberg(k, a) @ c
    return ChainOperator(index, c)


def branch_vector(hs: HistorySet, index: Sequence[int]) -> np.ndarray:
    if not hs.initial_state.is_pure:
        raise ValueError("branch vectors need a pure initial state; use decoherence_functional")
    index = _check_index(hs, index)
    v = hs.initial_state.data.reshape(-1, 1)
    for k, a in enumerate(index):
        v = hs.apply_heisenberg(k, a, v)
    return v[:, 0]


def _branch_stack(hs: HistorySet) -> tuple[list, np.ndarray, np.ndarray]:
    """Branch columns for every history; shape (n_hist, dim, rank)."""
    weights, v0 = hs._weighted_vectors
    layer = {(): v0}
    for k, n in enumerate(hs.shape):
        layer = {
            prefix + (a,): hs.apply_heisenberg(k, a, v)
            for prefix, v in layer.items()
            for a in range(n)
        }
    labels = sorted(layer)
    return labels, weights, np.stack([layer[lbl] for lbl in labels])


def branch_vectors(hs: HistorySet) -> tuple[list, np.ndarray]:
    """All branch vectors of a pure-state set, rows ordered like ``hs.indices()``."""
    if not hs.initial_state.is_pure:
        raise ValueError("branch vectors need a pure initial state")
    labels, _, stack = _branch_stack(hs)
    return labels, stack[:, :, 0]


# ----------------------------------------------------------------------------
# decoherence functional
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class DecoherenceMatrix:
    """D(a', a) indexed by ``labels``; row is a', column is a."""

    entries: np.ndarray
    labels: tuple
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        d = np.asarray(self.entries, dtype=complex)
        if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[0] != len(self.labels):
            raise ValueError("entries must be square and match the labels")
        diag = d.diagonal().real
        if np.any(diag < -1e-12):
            raise InconsistentProbabilityError(
                f"negative history probability {diag.min():.3e}; decoherence functional is inconsistent"
            )
        d.setflags(write=False)
        object.__setattr__(self, "entries", d)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def probabilities(self) -> np.ndarray:
        return np.clip(self.entries.diagonal().real, 0.0, None)

    def probability(self, label) -> float:
        return float(self.probabilities[self.labels.index(label)])

    def as_dict(self) -> dict:
        return dict(zip(self.labels, self.probabilities))

    def normalized(self) -> np.ndarray:
        """|D(a',a)| / sqrt(p(a') p(a)); 0/0 -> 0, x/0 -> inf."""
        mag = np.abs(self.entries)
        p = self.probabilities
        den = np.sqrt(np.outer(p, p))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(den > 0, mag / np.where(den > 0, den, 1.0), np.inf)
        out[mag <= _ZERO] = 0.0
        return out

    @property
    def max_offdiag(self) -> float:
        return check_decoherence(self, self.epsilon).max_normalized

    @property
    def hermiticity_residual(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T), initial=0.0))

    @property
    def total(self) -> complex:
        return complex(self.entries.sum())


@dataclass(frozen=True)
class DecoherenceReport:
    max_raw: float
    max_normalized: float
    decoherent: bool
    epsilon: float
    worst_pair: Optional[tuple]
    infinite_flagged: bool


def _functional_from_columns(cols: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # cols: (n_hist, dim, rank); D[a',a] = sum_k w_k <cols[a,:,k] | cols[a',:,k]>
    scaled = cols * np.sqrt(weights)[None, None, :]
    flat = scaled.transpose(0, 2, 1).reshape(cols.shape[0], -1)
    return flat @ flat.conj().T


def decoherence_functional(hs: HistorySet, epsilon: float = DEFAULT_EPSILON) -> DecoherenceMatrix:
    labels, weights, cols = _branch_stack(hs)
    return DecoherenceMatrix(_functional_from_columns(cols, weights), tuple(labels), epsilon)


def functional_from_chains(chains: Sequence[ChainOperator], state, epsilon: float = DEFAULT_EPSILON) -> DecoherenceMatrix:
    """D for an arbitrary list of class operators (e.g. after coarse graining)."""
    st = as_state(state)
    if st.is_pure:
        weights, v0 = np.ones(1), st.data.reshape(-1, 1)
    else:
        w, v = np.linalg.eigh(st.density_matrix())
        keep = w > 1e-15
        weights, v0 = w[keep], v[:, keep]
    cols = np.stack([c.operator @ v0 for c in chains])
    return DecoherenceMatrix(
        _functional_from_columns(cols, weights), tuple(c.history_index for c in chains), epsilon
    )


def check_decoherence(d: DecoherenceMatrix, epsilon: Optional[float] = None) -> DecoherenceReport:
    """Medium-decoherence verdict: |D(a',a)| <= eps * sqrt(p(a') p(a)) for a' != a."""
    eps = d.epsilon if epsilon is None else epsilon
    n = len(d.labels)
    if n < 2:
        return DecoherenceReport(0.0, 0.0, True, eps, None, False)
    off = ~np.eye(n, dtype=bool)
    raw = np.where(off, np.abs(d.entries), 0.0)
    norm = np.where(off, d.normalized(), 0.0)
    i, j = np.unravel_index(np.argmax(norm), norm.shape)
    worst = float(norm[i, j])
    pair = (d.labels[i], d.labels[j]) if worst > 0 else None
    return DecoherenceReport(
        max_raw=float(raw.max()),
        max_normalized=worst,
        decoherent=bool(worst <= eps),
        epsilon=eps,
        worst_pair=pair,
        infinite_flagged=bool(np.isinf(worst)),
    )


# ----------------------------------------------------------------------------
# coarse graining and sum rules
# ----------------------------------------------------------------------------

Partition = Union[Mapping[tuple, Hashable], Callable[[tuple], Hashable]]


def _classes(hs: HistorySet, partition: Partition) -> dict:
    fine = hs.indices()
    if callable(partition):
        mapping = {a: partition(a) for a in fine}
    else:
        mapping = {tuple(k): v for k, v in partition.items()}
        missing = [a for a in fine if a not in mapping]
        if missing:
            raise ValueError(f"partition is not exhaustive; missing e.g. {missing[0]}")
        extra = set(mapping) - set(fine)
        if extra:
            raise ValueError(f"partition names histories outside the set, e.g. {next(iter(extra))}")
    classes: dict = {}
    for a in fine:
        classes.setdefault(mapping[a], []).append(a)
    return classes


def coarse_grain(hs: HistorySet, partition: Partition) -> list[ChainOperator]:
    """Class operators C_bar = sum of the fine chain operators in each class."""
    classes = _classes(hs, partition)
    out = []
    for label in sorted(classes, key=repr):
        op = sum(chain_operator(hs, a).operator for a in classes[label])
        out.append(ChainOperator(label, op))
    return out


def coarse_grain_sets(hs: HistorySet, groupings: Sequence[Optional[Sequence[Sequence[int]]]]) -> HistorySet:
    """Coarse grain within each single-time set by summing projectors.

    ``groupings[k]`` lists groups of alternative indices at time k (``None``
    keeps the set as is); a single group covering everything drops the
    resolution at that time to the identity.
    """
    if len(groupings) != len(hs.schedule):
        raise ValueError("one grouping per projector set is required")
    sched = []
    for s, groups in zip(hs.schedule, groupings):
        if groups is None:
            sched.append(s)
            continue
        flat = sorted(a for g in groups for a in g)
        if flat != list(range(len(s))):
            raise ValueError(f"grouping for set {s.label!r} is not an exhaustive, exclusive partition")
        projs = tuple(sum(s.projectors[a] for a in g) for g in groups)
        sched.append(ProjectorSet(projs, s.time, s.label))
    return HistorySet(tuple(sched), hs.hamiltonian, hs.initial_state, hs.hbar, hs.propagator)


def sum_rule_residual(hs: HistorySet, partition: Partition) -> float:
    """max over coarse classes of |p(class) - sum of fine p|."""
    classes = _classes(hs, partition)
    fine = decoherence_functional(hs)
    p_fine = fine.as_dict()
    coarse = functional_from_chains(coarse_grain(hs, partition), hs.initial_state)
    return max(
        abs(coarse.probability(label) - sum(p_fine[a] for a in members))
        for label, members in classes.items()
    )


def interference_bound(d: DecoherenceMatrix, hs: HistorySet, partition: Partition) -> float:
    """Largest within-class sum of |D(a',a)|, a' != a: bounds the sum-rule residual."""
    classes = _classes(hs, partition)
    pos = {lbl: i for i, lbl in enumerate(d.labels)}
    worst = 0.0
    for members in classes.values():
        idx = [pos[a] for a in members]
        block = np.abs(d.entries[np.ix_(idx, idx)])
        worst = max(worst, float(block.sum() - np.trace(block)))
    return worst


# ----------------------------------------------------------------------------
# demonstration models
# ----------------------------------------------------------------------------

_PLUS = np.array([1, 1], dtype=complex) / np.sqrt(2)
_MINUS = np.array([1, -1], dtype=complex) / np.sqrt(2)


def build_two_slit(overlap: complex, t_slit: float = 1.0, t_screen: float = 2.0) -> HistorySet:
    """Slit qubit (x) record qubit with <r_0|r_1> = overlap.

    Histories: which slit at ``t_slit``, then the screen alternative (the
    slit qubit's +/- basis, where the two paths interfere) at ``t_screen``.
    """
    overlap = complex(overlap)
    if abs(overlap) > 1 + 1e-12:
        raise ValueError(f"record overlap must satisfy |overlap| <= 1, got {overlap}")
    r0 = ket(0, 2)
    r1 = np.array([overlap, np.sqrt(max(0.0, 1 - abs(overlap) ** 2))], dtype=complex)
    psi = (np.kron(ket(0, 2), r0) + np.kron(ket(1, 2), r1)) / np.sqrt(2)
    psi /= np.linalg.norm(psi)
    eye = np.eye(2)
    slit = ProjectorSet(
        (np.kron(np.diag([1, 0]), eye), np.kron(np.diag([0, 1]), eye)), t_slit, "slit"
    )
    screen = ProjectorSet(
        (np.kron(np.outer(_PLUS, _PLUS.conj()), eye), np.kron(np.outer(_MINUS, _MINUS.conj()), eye)),
        t_screen,
        "screen",
    )
    return HistorySet((slit, screen), np.zeros((4, 4)), QuantumState(psi))


DUST_EXACT_MAX = 10


def _dust_propagator(n: int, theta: float) -> Callable[[float], np.ndarray]:
    def u(t: float) -> np.ndarray:
        c, s = np.cos(theta * t), np.sin(theta * t)
        rot = np.array([[c, -s], [s, c]], dtype=complex)  # exp(-i theta t sigma_y)
        env = tensor(*([rot] * n), max_dim=2 ** n) if n else np.eye(1)
        left = np.diag([1.0, 0.0]).astype(complex)
        right = np.diag([0.0, 1.0]).astype(complex)
        return np.kron(left, np.eye(2 ** n)) + np.kron(right, env)

    return u


def build_dust_grain(n_scatter: int, per_scatter_overlap: float) -> HistorySet:
    """Grain position qubit (x) N environment qubits.

    During [0, 1] each environment qubit is rotated only if the grain is on
    the right, leaving the two positions correlated with environment states
    of overlap ``per_scatter_overlap`` per qubit. Histories: left/right at
    t=0, then the grain's +/- (interference) basis at t=1.
    """
    n = int(n_scatter)
    s = float(per_scatter_overlap)
    if n < 0:
        raise ValueError("number of scatterings must be non-negative")
    if not 0.0 <= s <= 1.0:
        raise ValueError("per-scatter overlap must lie in [0, 1]")
    if n > DUST_EXACT_MAX:
        raise ValueError(
            f"exact model capped at N={DUST_EXACT_MAX}; use dust_grain_branch_overlap for larger N"
        )
    theta = float(np.arccos(s))
    h = np.kron(np.diag([0.0, 1.0]), _sum_sigma_y(n) * theta) if n else np.zeros((2, 2))
    dim = 2 ** (n + 1)
    env0 = ket(0, 2 ** n)
    psi = np.kron(_PLUS, env0)
    env_eye = np.eye(2 ** n)
    position = ProjectorSet(
        (np.kron(np.diag([1, 0]), env_eye), np.kron(np.diag([0, 1]), env_eye)), 0.0, "position"
    )
    which = ProjectorSet(
        (
            np.kron(np.outer(_PLUS, _PLUS.conj()), env_eye),
            np.kron(np.outer(_MINUS, _MINUS.conj()), env_eye),
        ),
        1.0,
        "interference",
    )
    assert h.shape == (dim, dim)
    return HistorySet((position, which), h, QuantumState(psi), propagator=_dust_propagator(n, theta))


def _sum_sigma_y(n: int) -> np.ndarray:
    sy = np.array([[0, -1j], [1j, 0]])
    total = np.zeros((2 ** n, 2 ** n), dtype=complex)
    for k in range(n):
        total += np.kron(np.kron(np.eye(2 ** k), sy), np.eye(2 ** (n - k - 1)))
    return total


def dust_grain_branch_overlap(n_scatter: int, per_scatter_overlap: float) -> float:
    """Normalized interference between the left and right branches.

    Uses the product structure of the environment: each photon qubit is
    evolved on its own 2-dim space and the branch overlap is the product of
    single-qubit overlaps, so no 2^(N+1) vector is ever formed.
    """
    n = int(n_scatter)
    s = float(per_scatter_overlap)
    if n < 0 or not 0.0 <= s <= 1.0:
        raise ValueError("need N >= 0 and overlap in [0, 1]")
    theta = np.arccos(s)
    c, sn = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -sn], [sn, c]], dtype=complex)
    e0 = ket(0, 2)
    total = 1.0 + 0j
    for _ in range(n):
        total *= np.vdot(rot @ e0, e0)  # <e_R | e_L> for this photon
    return float(abs(total))


def random_unitary(rng: np.random.Generator, dim: int) -> np.ndarray:
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_history_set(
    rng: np.random.Generator,
    dim: Optional[int] = None,
    n_sets: Optional[int] = None,
    max_dim: int = 16,
    max_sets: int = 3,
    pure: Optional[bool] = None,
    max_alternatives: int = 4,
) -> HistorySet:
    """Random schedule: random bases grouped into 1..max_alternatives projectors."""
    dim = int(dim if dim is not None else rng.integers(2, max_dim + 1))
    n_sets = int(n_sets if n_sets is not None else rng.integers(1, max_sets + 1))
    pure = bool(rng.integers(0, 2)) if pure is None else pure
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    h = (g + g.conj().T) / 2
    times = np.cumsum(rng.uniform(0.1, 1.5, size=n_sets))
    sched = []
    for k in range(n_sets):
        basis = random_unitary(rng, dim)
        n_alt = int(rng.integers(1, min(max_alternatives, dim) + 1))
        cuts = np.sort(rng.choice(np.arange(1, dim), size=n_alt - 1, replace=False)) if n_alt > 1 else []
        groups = [list(g) for g in np.split(np.arange(dim), cuts)]
        sched.append(ProjectorSet.from_basis(basis, times[k], f"set{k}", groups))
    if pure:
        v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        state = QuantumState(v / np.linalg.norm(v))
    else:
        m = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        rho = m @ m.conj().T
        state = QuantumState(rho / np.trace(rho).real)
    return HistorySet(tuple(sched), h, state)


def random_commuting_history_set(
    rng: np.random.Generator,
    dim: Optional[int] = None,
    n_sets: Optional[int] = None,
    max_dim: int = 16,
    max_sets: int = 3,
    perturbation: float = 0.0,
    max_alternatives: int = 4,
) -> HistorySet:
    """Random set that decoheres by construction, optionally nudged off it.

    Every projector is a random grouping of energy eigenvectors, so all
    Heisenberg projectors commute and D is exactly diagonal. ``perturbation``
    rotates the bases of the later sets by exp(-i delta K) with ||K|| = 1,
    giving off-diagonals of order delta.
    """
    dim = int(dim if dim is not None else rng.integers(2, max_dim + 1))
    n_sets = int(n_sets if n_sets is not None else rng.integers(1, max_sets + 1))
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    h = (g + g.conj().T) / 2
    _, eig = np.linalg.eigh(h)
    times = np.cumsum(rng.uniform(0.1, 1.5, size=n_sets))
    sched = []
    for k in range(n_sets):
        basis = eig[:, rng.permutation(dim)]
        if k and perturbation:
            m = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
            gen = (m + m.conj().T) / 2
            gen /= np.linalg.norm(gen, 2)
            w, v = np.linalg.eigh(gen)
            basis = (v * np.exp(-1j * perturbation * w)) @ v.conj().T @ basis
        n_alt = int(rng.integers(1, min(max_alternatives, dim) + 1))
        cuts = np.sort(rng.choice(np.arange(1, dim), size=n_alt - 1, replace=False)) if n_alt > 1 else []
        groups = [list(c) for c in np.split(np.arange(dim), cuts)]
        sched.append(ProjectorSet.from_basis(basis, times[k], f"set{k}", groups))
    m = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = m @ m.conj().T
    return HistorySet(tuple(sched), h, QuantumState(rho / np.trace(rho).real))
