"""Ideal measurement models and the Copenhagen approximation.

A subsystem is coupled at instants t_1 < ... < t_n to one register per
measurement. Each coupling is a controlled shift that moves the register
out of its "ready" level into a level recording the outcome. Copenhagen
probabilities (projections on the subsystem alone) are compared with the
diagonal of the decoherence functional for the registrations of the closed
subsystem + registers system.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .histories import HistorySet, ProjectorSet, decoherence_functional
from .qcore import HBAR, MAX_DIM, DimensionError, QuantumState, check_square, is_hermitian, propagator, tensor


def _shift(dim: int, k: int) -> np.ndarray:
    return np.roll(np.eye(dim, dtype=complex), k, axis=0)  # |j> -> |j+k mod dim>


@dataclass(frozen=True)
class IdealMeasurementModel:
    """Subsystem state, free subsystem dynamics and a schedule of measured sets.

    ``disturbance`` (eta) rotates the subsystem right after each coupling by
    exp(-i theta G) with sin^2(theta) = eta, G mixing different outcomes of
    the set just measured. eta = 0 is the ideal measurement.
    ``ready_noise`` puts that much weight of each register's initial state
    uniformly on the non-ready levels.
    """

    subsystem_hamiltonian: np.ndarray
    psi: np.ndarray
    times: tuple = ()
    measured_sets: tuple = ()
    disturbance: float = 0.0
    ready_noise: float = 0.0
    register_levels: Optional[tuple] = None
    hbar: float = HBAR

    def __post_init__(self):
        h = check_square(self.subsystem_hamiltonian, "subsystem Hamiltonian")
        if not is_hermitian(h):
            raise ValueError("subsystem Hamiltonian is not Hermitian")
        psi = QuantumState(np.asarray(self.psi, dtype=complex)).data
        if psi.shape[0] != h.shape[0]:
            raise ValueError("subsystem state and Hamiltonian dimensions differ")
        times = tuple(float(t) for t in self.times)
        if len(times) != len(self.measured_sets):
            raise ValueError("need one measured set per measurement time")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("measurement times must be strictly increasing")
        sets = tuple(ProjectorSet(tuple(s), t, f"s{k}").projectors for k, (s, t) in enumerate(zip(self.measured_sets, times)))
        if not 0.0 <= self.disturbance <= 1.0:
            raise ValueError("disturbance eta must lie in [0, 1]")
        if not 0.0 <= self.ready_noise <= 1.0:
            raise ValueError("ready_noise must lie in [0, 1]")
        levels = self.register_levels
        if levels is None:
            levels = tuple(tuple(range(1, len(s) + 1)) for s in sets)
        levels = tuple(tuple(int(x) for x in lv) for lv in levels)
        for lv, s in zip(levels, sets):
            if sorted(lv) != list(range(1, len(s) + 1)):
                raise ValueError("register levels must be a permutation of 1..K for K outcomes")
        dim = h.shape[0] * int(np.prod([len(s) + 1 for s in sets]))
        if dim > MAX_DIM:
            raise DimensionError(f"joint dimension {dim} exceeds cap {MAX_DIM}")
        object.__setattr__(self, "subsystem_hamiltonian", h)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "measured_sets", sets)
        object.__setattr__(self, "register_levels", levels)

    @property
    def n_measurements(self) -> int:
        return len(self.times)

    @property
    def subsystem_dim(self) -> int:
        return self.psi.shape[0]

    @property
    def register_dims(self) -> tuple[int, ...]:
        return tuple(len(s) + 1 for s in self.measured_sets)

    @property
    def joint_dim(self) -> int:
        return self.subsystem_dim * int(np.prod(self.register_dims))

    def outcome_sequences(self) -> list[tuple]:
        """Registration sequences; index K at slot k means 'register still ready'."""
        return list(itertools.product(*(range(d) for d in self.register_dims)))


def _lift(model: IdealMeasurementModel, sub_op: Optional[np.ndarray] = None, reg: Optional[tuple] = None) -> np.ndarray:
    factors = [sub_op if sub_op is not None else np.eye(model.subsystem_dim)]
    for k, d in enumerate(model.register_dims):
        factors.append(reg[1] if reg is not None and reg[0] == k else np.eye(d))
    return tensor(*factors)


def disturbance_generator(projectors: Sequence[np.ndarray]) -> np.ndarray:
    """Hermitian G coupling the first basis vector of each outcome subspace to the others'."""
    heads = []
    for p in projectors:
        w, v = np.linalg.eigh(p)
        heads.append(v[:, np.argmax(w)])
    g = np.zeros_like(projectors[0], dtype=complex)
    for i, j in itertools.combinations(range(len(heads)), 2):
        g += np.outer(heads[i], heads[j].conj())
    return g + g.conj().T


def correlating_unitary(model: IdealMeasurementModel, k: int) -> np.ndarray:
    """Controlled shift: outcome alpha of set k moves register k from ready to its level."""
    d = model.register_dims[k]
    v = sum(
        _lift(model, p) @ _lift(model, None, (k, _shift(d, lvl)))
        for p, lvl in zip(model.measured_sets[k], model.register_levels[k])
    )
    if model.disturbance > 0:
        theta = np.arcsin(np.sqrt(model.disturbance))
        g = disturbance_generator(model.measured_sets[k])
        w, vec = np.linalg.eigh(g)
        kick = (vec * np.exp(-1j * theta * w)) @ vec.conj().T
        v = _lift(model, kick) @ v
    return v


def _register_state(model: IdealMeasurementModel, d: int) -> np.ndarray:
    rho = np.zeros((d, d), dtype=complex)
    rho[0, 0] = 1.0 - model.ready_noise
    if d > 1:
        rho[np.arange(1, d), np.arange(1, d)] = model.ready_noise / (d - 1)
    return rho


def build_closed_measurement(model: IdealMeasurementModel) -> HistorySet:
    """Registration histories of the closed subsystem + registers system."""
    h = _lift(model, model.subsystem_hamiltonian)
    kicks = [correlating_unitary(model, k) for k in range(model.n_measurements)]
    times = model.times
    hbar = model.hbar

    def u(t: float) -> np.ndarray:
        out = np.eye(h.shape[0], dtype=complex)
        last = 0.0
        for tk, vk in zip(times, kicks):
            if tk > t:
                break
            out = vk @ propagator(h, tk - last, hbar) @ out
            last = tk
        return propagator(h, t - last, hbar) @ out

    sched = []
    for k, t in enumerate(times):
        d = model.register_dims[k]
        projs = []
        for lvl in model.register_levels[k]:
            e = np.zeros((d, d))
            e[lvl, lvl] = 1.0
            projs.append(_lift(model, None, (k, e)))
        ready = np.zeros((d, d))
        ready[0, 0] = 1.0
        projs.append(_lift(model, None, (k, ready)))
        sched.append(ProjectorSet(tuple(projs), t, f"register{k}"))

    psi_sub = model.psi
    if model.ready_noise == 0:
        regs = [np.eye(d)[:, 0] for d in model.register_dims]
        state = QuantumState(tensor(psi_sub, *regs)) if regs else QuantumState(psi_sub)
    else:
        rho = tensor(np.outer(psi_sub, psi_sub.conj()), *(_register_state(model, d) for d in model.register_dims))
        state = QuantumState((rho + rho.conj().T) / 2)
    return HistorySet(tuple(sched), h, state, hbar, propagator=u)


def copenhagen_probabilities(model: IdealMeasurementModel) -> dict:
    """p(a_n..a_1) = || s_an(t_n) ... s_a1(t_1) |psi> ||^2 on the subsystem alone.

    Keys use the same index layout as :meth:`IdealMeasurementModel.outcome_sequences`;
    the trailing 'ready' index always has probability zero here.
    """
    h = model.subsystem_hamiltonian
    heis = []
    for s, t in zip(model.measured_sets, model.times):
        u = propagator(h, t, model.hbar)
        heis.append([u.conj().T @ p @ u for p in s])
    out = {}
    for seq in model.outcome_sequences():
        if any(a == len(s) for a, s in zip(seq, model.measured_sets)):
            out[seq] = 0.0
            continue
        v = model.psi
        for k, a in enumerate(seq):
            v = heis[k][a] @ v
        out[seq] = float(np.vdot(v, v).real)
    return out


def full_probabilities(model: IdealMeasurementModel) -> dict:
    """Diagonal of the closed-system decoherence functional, keyed like copenhagen_probabilities."""
    d = decoherence_functional(build_closed_measurement(model))
    return {tuple(lbl): float(p) for lbl, p in zip(d.labels, d.probabilities)}


def copenhagen_vs_full(model: IdealMeasurementModel) -> float:
    cop = copenhagen_probabilities(model)
    full = full_probabilities(model)
    return max(abs(cop[k] - full[k]) for k in cop)


@dataclass(frozen=True)
class DisturbanceSweep:
    etas: tuple
    deviations: tuple
    slope: float  # fitted C in deviation <= C * eta
    exponent: float  # log-log slope between the two smallest nonzero etas


def disturbance_sweep(model: IdealMeasurementModel, etas: Sequence[float] = (0.0, 0.01, 0.1)) -> DisturbanceSweep:
    devs = []
    for eta in etas:
        m = IdealMeasurementModel(
            model.subsystem_hamiltonian, model.psi, model.times, model.measured_sets,
            float(eta), model.ready_noise, model.register_levels, model.hbar,
        )
        devs.append(copenhagen_vs_full(m))
    ratios = [dv / e for dv, e in zip(devs, etas) if e > 0]
    pts = sorted((e, dv) for e, dv in zip(etas, devs) if e > 0 and dv > 0)
    expo = float(np.log(pts[1][1] / pts[0][1]) / np.log(pts[1][0] / pts[0][0])) if len(pts) >= 2 else float("nan")
    return DisturbanceSweep(tuple(float(e) for e in etas), tuple(devs), max(ratios) if ratios else 0.0, expo)


def qubit_two_measurement_model(theta: float = 0.7, eta: float = 0.0, ready_noise: float = 0.0) -> IdealMeasurementModel:
    """Qubit in |0>, z-measurements at t=0 and t=1, free x-rotation by ``theta`` in between."""
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    z = (np.diag([1.0, 0.0]), np.diag([0.0, 1.0]))
    return IdealMeasurementModel(theta / 2 * sx, np.array([1.0, 0.0]), (0.0, 1.0), (z, z), eta, ready_noise)
