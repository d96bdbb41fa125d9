import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from qcrealm.histories import (
    HistorySet, NotAProjectorError, ProjectorSet, branch_vector, branch_vectors,
    build_dust_grain, build_two_slit, chain_operator, check_decoherence, coarse_grain,
    coarse_grain_sets, decoherence_functional, dust_grain_branch_overlap,
    functional_from_chains, heisenberg_projector, interference_bound, random_commuting_history_set,
    random_history_set,
    sum_rule_residual,
)
from qcrealm.qcore import SX, SZ, QuantumState, ket

P0 = np.diag([1.0, 0.0]).astype(complex)
P1 = np.diag([0.0, 1.0]).astype(complex)
PLUS = np.array([1, 1]) / np.sqrt(2)
MINUS = np.array([1, -1]) / np.sqrt(2)
PP = np.outer(PLUS, PLUS)
PM = np.outer(MINUS, MINUS)


def brute_force_D(chains, rho):
    """Oracle: explicit Tr(C_a' rho C_a^dagger) over every pair."""
    n = len(chains)
    d = np.empty((n, n), dtype=complex)
    for i, j in itertools.product(range(n), repeat=2):
        d[i, j] = np.trace(chains[i] @ rho @ chains[j].conj().T)
    return d


def explicit_chains(projector_sets, times, h):
    """Oracle chains from scipy's expm, latest projector leftmost."""
    heis = [[expm(1j * h * t) @ p @ expm(-1j * h * t) for p in ps] for ps, t in zip(projector_sets, times)]
    out = []
    for idx in itertools.product(*(range(len(ps)) for ps in projector_sets)):
        c = np.eye(h.shape[0], dtype=complex)
        for k, a in enumerate(idx):
            c = heis[k][a] @ c
        out.append(c)
    return out


# --- heisenberg_projector ----------------------------------------------------

def test_heisenberg_zero_hamiltonian():
    np.testing.assert_allclose(heisenberg_projector(PP, np.zeros((2, 2)), 4.2), PP, atol=1e-15)


def test_heisenberg_commuting_projector_is_static():
    for t in (0.3, 1.0, 17.0):
        np.testing.assert_allclose(heisenberg_projector(P0, SZ, t), P0, atol=1e-14)


def test_heisenberg_quarter_rotation():
    omega = 2.3
    t = np.pi / (2 * omega)
    h = omega / 2 * SZ
    out = heisenberg_projector(PP, h, t)
    oracle = expm(1j * h * t) @ PP @ expm(-1j * h * t)
    np.testing.assert_allclose(out, oracle, atol=1e-12)
    # exp(+iHt)|+> is (|0> - i|1>)/sqrt(2) up to phase
    v = np.array([1, -1j]) / np.sqrt(2)
    np.testing.assert_allclose(out, np.outer(v, v.conj()), atol=1e-12)


def test_heisenberg_rejects_non_projector():
    with pytest.raises(NotAProjectorError):
        heisenberg_projector(np.array([[1, 1], [0, 0]]), SZ, 1.0)


# --- sets and chains -----------------------------------------------------------

def test_projector_set_validation():
    with pytest.raises(ValueError):
        ProjectorSet((P0,), 0.0)  # not exhaustive
    with pytest.raises(ValueError):
        ProjectorSet((P0, PP), 0.0)  # not exclusive / not exhaustive
    with pytest.raises(ValueError):
        HistorySet((ProjectorSet((P0, P1), 1.0), ProjectorSet((P0, P1), 1.0)), SZ, QuantumState(PLUS))


def test_chain_trivial_partitions():
    eye = np.eye(2)
    hs = HistorySet((ProjectorSet((eye,), 0.0),), SZ, QuantumState(PLUS))
    np.testing.assert_allclose(chain_operator(hs, (0,)).operator, eye, atol=1e-14)
    hs3 = HistorySet(tuple(ProjectorSet((eye,), t) for t in (0.0, 1.0, 2.5)), SX, QuantumState(PLUS))
    np.testing.assert_allclose(chain_operator(hs3, (0, 0, 0)).operator, eye, atol=1e-13)


def test_chain_z_then_x():
    hs = HistorySet(
        (ProjectorSet((P0, P1), 0.0), ProjectorSet((PP, PM), 1.0)), np.zeros((2, 2)), QuantumState(PLUS)
    )
    np.testing.assert_allclose(chain_operator(hs, (0, 0)).operator, PP @ P0, atol=1e-14)
    with pytest.raises(IndexError):
        chain_operator(hs, (0, 2))


def test_chain_operator_reconstruction_random():
    rng = np.random.default_rng(7)
    hs = random_history_set(rng, dim=5, n_sets=3)
    chains = explicit_chains([s.projectors for s in hs.schedule], [s.time for s in hs.schedule], hs.hamiltonian)
    for idx, c in zip(hs.indices(), chains):
        np.testing.assert_allclose(chain_operator(hs, idx).operator, c, atol=1e-10)


# --- branch vectors ------------------------------------------------------------

def test_branch_vector_trivial():
    eye = np.eye(2)
    psi = np.array([0.6, 0.8])
    hs = HistorySet((ProjectorSet((eye,), 0.0),), SX, QuantumState(psi))
    np.testing.assert_allclose(branch_vector(hs, (0,)), psi, atol=1e-14)


def test_branch_vector_eigenstate():
    hs = HistorySet((ProjectorSet((P0, P1), 0.0),), SZ, QuantumState(ket(1, 2)))
    np.testing.assert_allclose(branch_vector(hs, (1,)), ket(1, 2), atol=1e-14)
    np.testing.assert_allclose(branch_vector(hs, (0,)), 0, atol=1e-14)


def test_branch_vectors_complete_and_two_slit_overlap():
    c = 0.3 + 0.4j
    hs = build_two_slit(c)
    labels, vecs = branch_vectors(hs)
    np.testing.assert_allclose(vecs.sum(axis=0), hs.initial_state.data, atol=1e-12)
    # oracle: Psi_{s,+} = (1/2) |+> (x) |r_s>, so <Psi_{1+}|Psi_{0+}> = <r_1|r_0> / 4
    i0, i1 = labels.index((0, 0)), labels.index((1, 0))
    assert abs(np.vdot(vecs[i1], vecs[i0]) - np.conj(c) / 4) < 1e-12


def test_branch_vector_rejects_mixed():
    hs = HistorySet((ProjectorSet((P0, P1), 0.0),), SZ, QuantumState(np.eye(2) / 2))
    with pytest.raises(ValueError):
        branch_vector(hs, (0,))


# --- decoherence functional ---------------------------------------------------

def test_single_time_sets_decohere_exactly():
    rng = np.random.default_rng(11)
    for _ in range(10):
        hs = random_history_set(rng, n_sets=1)
        d = decoherence_functional(hs)
        rho = hs.initial_state.density_matrix()
        expected = np.diag([np.trace(rho @ hs.heisenberg(0, a)).real for a in range(hs.shape[0])])
        np.testing.assert_allclose(d.entries, expected, atol=1e-12)
        assert check_decoherence(d, 1e-12).decoherent


def test_trivial_partition_gives_one():
    hs = HistorySet((ProjectorSet((np.eye(3),), 0.5),), np.diag([0, 1.0, 2]), QuantumState(ket(1, 3)))
    d = decoherence_functional(hs)
    assert d.entries.shape == (1, 1) and abs(d.entries[0, 0] - 1) < 1e-14


def test_qubit_two_time_functional_against_brute_force():
    omega = 1.3
    h = omega / 2 * SX
    hs = HistorySet((ProjectorSet((P0, P1), 0.4), ProjectorSet((P0, P1), 1.5)), h, QuantumState(PLUS))
    d = decoherence_functional(hs)
    rho = np.outer(PLUS, PLUS)
    oracle = brute_force_D(explicit_chains([(P0, P1)] * 2, [0.4, 1.5], h), rho)
    np.testing.assert_allclose(d.entries, oracle, atol=1e-12)
    assert abs(d.total - 1) < 1e-12
    assert not check_decoherence(d, 1e-3).decoherent


def test_mixed_state_matches_trace_form():
    rng = np.random.default_rng(5)
    hs = random_history_set(rng, dim=6, n_sets=2, pure=False)
    chains = [chain_operator(hs, a) for a in hs.indices()]
    oracle = brute_force_D([c.operator for c in chains], hs.initial_state.density_matrix())
    np.testing.assert_allclose(decoherence_functional(hs).entries, oracle, atol=1e-12)
    np.testing.assert_allclose(functional_from_chains(chains, hs.initial_state).entries, oracle, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_functional_invariants(seed):
    rng = np.random.default_rng(seed)
    hs = random_history_set(rng, max_dim=10)
    d = decoherence_functional(hs)
    assert d.hermiticity_residual <= 1e-12
    assert abs(d.total - 1) <= 1e-10
    assert np.all(d.entries.diagonal().real >= -1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_pure_state_functional_is_branch_gram_matrix(seed):
    rng = np.random.default_rng(seed)
    hs = random_history_set(rng, max_dim=10, pure=True)
    d = decoherence_functional(hs)
    vecs = np.array([branch_vector(hs, a) for a in hs.indices()])
    gram = np.array([[np.vdot(b, a) for b in vecs] for a in vecs])  # <Psi_a|Psi_a'> at [a', a]
    np.testing.assert_allclose(d.entries, gram, atol=1e-12)


# --- check_decoherence ----------------------------------------------------------

def test_two_slit_decoherence_verdicts():
    assert check_decoherence(decoherence_functional(build_two_slit(0.0)), 1e-12).decoherent
    rep = check_decoherence(decoherence_functional(build_two_slit(1.0)), 0.01)
    assert not rep.decoherent
    assert abs(rep.max_normalized - 1.0) < 1e-12
    assert abs(rep.max_raw - 0.25) < 1e-12  # pure interference, no record
    half = check_decoherence(decoherence_functional(build_two_slit(0.5)), 0.01)
    assert abs(half.max_normalized - 0.5 * rep.max_normalized) < 1e-12
    with pytest.raises(ValueError):
        build_two_slit(1.2)


def test_two_slit_offdiagonal_monotone_in_overlap():
    grid = np.linspace(0, 1, 21)
    vals = [check_decoherence(decoherence_functional(build_two_slit(c))).max_normalized for c in grid]
    assert all(b >= a - 1e-14 for a, b in zip(vals, vals[1:]))
    np.testing.assert_allclose(vals, grid, atol=1e-12)


def test_zero_over_zero_convention():
    hs = HistorySet(
        (ProjectorSet((P0, P1), 0.0), ProjectorSet((P0, P1), 1.0)), np.zeros((2, 2)), QuantumState(ket(0, 2))
    )
    d = decoherence_functional(hs)
    norm = d.normalized()
    assert np.all(np.isfinite(norm))
    rep = check_decoherence(d, 1e-12)
    assert rep.decoherent and not rep.infinite_flagged


# --- dust grain --------------------------------------------------------------

def test_dust_grain_limits():
    d0 = decoherence_functional(build_dust_grain(0, 0.7))
    assert abs(check_decoherence(d0).max_normalized - 1.0) < 1e-12
    d1 = decoherence_functional(build_dust_grain(1, 0.0))
    assert check_decoherence(d1, 1e-12).decoherent


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
def test_dust_grain_exact_matches_product_of_overlaps(n):
    s = 0.9
    d = decoherence_functional(build_dust_grain(n, s))
    assert abs(check_decoherence(d).max_normalized - s ** n) < 1e-12
    assert abs(dust_grain_branch_overlap(n, s) - s ** n) < 1e-12


def test_dust_grain_factored_large_n():
    assert abs(dust_grain_branch_overlap(20, 0.9) - 0.9 ** 20) < 1e-12
    assert abs(0.9 ** 20 - 0.12157665459056936) < 1e-15
    with pytest.raises(ValueError):
        build_dust_grain(11, 0.9)


def test_dust_grain_many_scatterings_decohere():
    # product-of-overlaps oracle: 0.1**6 = 1e-6
    assert dust_grain_branch_overlap(20, 0.1) <= 1e-6
    d = decoherence_functional(build_dust_grain(6, 0.1))
    assert check_decoherence(d, 1e-5).decoherent


# --- coarse graining & sum rules -----------------------------------------------

def _qudit_set():
    h = np.diag([0.0, 0.5, 1.1, 2.0]) + 0.3 * (np.eye(4, k=1) + np.eye(4, k=-1))
    eye = np.eye(4)
    z = tuple(np.diag(eye[i]) for i in range(4))
    psi = np.array([0.5, 0.5j, -0.5, 0.5])
    return HistorySet((ProjectorSet(z, 0.0, "z1"), ProjectorSet(z, 1.3, "z2")), h, QuantumState(psi))


def test_coarse_grain_singletons_identity():
    hs = _qudit_set()
    chains = coarse_grain(hs, {a: a for a in hs.indices()})
    fine = decoherence_functional(hs)
    coarse = functional_from_chains(chains, hs.initial_state)
    np.testing.assert_allclose(coarse.entries, fine.entries, atol=1e-13)
    assert sum_rule_residual(hs, {a: a for a in hs.indices()}) == 0.0


def test_coarse_grain_everything_is_identity():
    hs = _qudit_set()
    (chain,) = coarse_grain(hs, lambda a: "all")
    np.testing.assert_allclose(chain.operator, np.eye(4), atol=1e-12)


def test_coarse_grain_rejects_partial_partition():
    hs = _qudit_set()
    with pytest.raises(ValueError):
        coarse_grain(hs, {(0, 0): "x"})


def test_merge_two_intervals_recomputed_on_coarse_set():
    hs = _qudit_set()
    coarse_set = coarse_grain_sets(hs, [None, [[0, 1], [2], [3]]])
    d_coarse = decoherence_functional(coarse_set)
    d_fine = decoherence_functional(hs)
    p = d_fine.as_dict()
    # operator-level sum equals per-time projector summation
    chains = coarse_grain(hs, lambda a: (a[0], {0: 0, 1: 0, 2: 1, 3: 2}[a[1]]))
    np.testing.assert_allclose(functional_from_chains(chains, hs.initial_state).entries, d_coarse.entries, atol=1e-12)
    rep = check_decoherence(d_fine)
    for a0 in range(4):
        merged = d_coarse.probability((a0, 0))
        interference = 2 * d_fine.entries[d_fine.labels.index((a0, 0)), d_fine.labels.index((a0, 1))].real
        assert abs(merged - (p[(a0, 0)] + p[(a0, 1)]) - interference) < 1e-12
        assert abs(merged - (p[(a0, 0)] + p[(a0, 1)])) <= 2 * rep.max_raw + 1e-12


def test_two_slit_sum_rule_is_twice_interference():
    for c in (1.0, 0.6, 0.25 + 0.5j, 0.0):
        hs = build_two_slit(c)
        part = lambda a: a[1]  # merge slits, keep screen outcome
        res = sum_rule_residual(hs, part)
        d = decoherence_functional(hs)
        interference = d.entries[d.labels.index((0, 0)), d.labels.index((1, 0))].real
        assert abs(res - 2 * abs(interference)) < 1e-12
        assert abs(res - abs(np.real(c)) / 2) < 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_sum_rule_bounded_by_within_class_interference(seed):
    rng = np.random.default_rng(seed)
    hs = random_history_set(rng, max_dim=8)
    labels = {a: int(rng.integers(0, 3)) for a in hs.indices()}
    d = decoherence_functional(hs)
    assert sum_rule_residual(hs, labels) <= interference_bound(d, hs, labels) + 1e-12


def test_decoherent_sets_obey_sum_rules_to_epsilon():
    # records make the set decoherent, so any coarse graining obeys the sum rules
    hs = build_dust_grain(6, 0.05)
    d = decoherence_functional(hs)
    eps = 1e-6
    assert check_decoherence(d, eps).decoherent
    n_pairs = len(d.labels) * (len(d.labels) - 1)
    for part in ({a: a[1] for a in hs.indices()}, {a: a[0] for a in hs.indices()}, {a: 0 for a in hs.indices()}):
        assert sum_rule_residual(hs, part) <= eps * n_pairs


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_commuting_sets_decohere_exactly_and_obey_sum_rules(seed):
    rng = np.random.default_rng(seed)
    hs = random_commuting_history_set(rng, max_dim=8)
    d = decoherence_functional(hs)
    assert check_decoherence(d, 1e-12).decoherent
    labels = {a: int(rng.integers(0, 3)) for a in hs.indices()}
    assert sum_rule_residual(hs, labels) <= 1e-12


def test_commuting_set_perturbation_creates_interference():
    rng = np.random.default_rng(3)
    sets = [random_commuting_history_set(rng, dim=6, n_sets=2, perturbation=0.3) for _ in range(10)]
    flags = [check_decoherence(decoherence_functional(hs), 1e-8).decoherent for hs in sets]
    assert not all(flags)
