import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcrealm.qcore import QuantumState
from qcrealm.thermo import (
    ConservedDensityField, InfeasibleTargetError, LatticeModel, basis_state, block_densities, continuity_check,
    domain_wall, entropy_history, evolve, global_gibbs, lattice_presets, matched_gibbs, maxent_fit, maxent_solve,
    number_rate, single_excitation_packet, xxz_bond, xxz_chain,
)

SX = np.array([[0, 1], [1, 0]], dtype=complex) / 2
SY = np.array([[0, -1j], [1j, 0]]) / 2
SZ = np.diag([0.5, -0.5])


def kron_site_op(op, i, n):
    out = np.eye(1)
    for k in range(n):
        out = np.kron(out, op if k == i else np.eye(2))
    return out


def test_bond_operator_matches_kron_oracle():
    n, delta, j = 4, 0.7, 1.3
    for a, b in [(0, 1), (1, 3), (2, 3)]:
        oracle = j * sum(kron_site_op(s, a, n) @ kron_site_op(s, b, n) for s in (SX, SY)) \
            + j * delta * kron_site_op(SZ, a, n) @ kron_site_op(SZ, b, n)
        np.testing.assert_allclose(xxz_bond(n, a, b, j, delta), oracle, atol=1e-14)


def test_number_operator_counts_up_spins():
    m = xxz_chain(4, 0.5, 1.0, 2)
    oracle = sum(kron_site_op(np.diag([1.0, 0.0]), i, 4) for i in range(4))
    np.testing.assert_array_equal(m.number, oracle)


@pytest.mark.parametrize("name", sorted(lattice_presets()))
def test_presets_conserve_number(name):
    m = lattice_presets()[name]()
    assert m.commutator_residual() <= 1e-12


def test_blocks_must_partition():
    with pytest.raises(ValueError):
        xxz_chain(4, 0.5, 1.0, blocks=[(0, 1), (1, 2, 3)])
    with pytest.raises(ValueError):
        xxz_chain(4, 0.5, 1.0, blocks=[(0, 2), (1, 3)])


def test_maximally_mixed_blocks_equal():
    m = xxz_chain(6, 0.5, 1.0, 3)
    d = block_densities(m, QuantumState(np.eye(m.dimension) / m.dimension))
    np.testing.assert_allclose(d.energy, d.energy[0], atol=1e-10)
    np.testing.assert_allclose(d.number, 0.5, atol=1e-10)


def test_all_up_number_maximal_and_static():
    m = xxz_chain(6, 0.5, 1.0, 3)
    up = basis_state(m, range(6))
    for t in (0.0, 0.7, 3.1):
        d = block_densities(m, up, t)
        np.testing.assert_allclose(d.number, 1.0, atol=1e-12)


def test_block_sums_telescope():
    m = xxz_chain(8, 0.5, 1.0, 4, next_nearest=0.3)
    rng = np.random.default_rng(0)
    v = rng.standard_normal(m.dimension) + 1j * rng.standard_normal(m.dimension)
    v /= np.linalg.norm(v)
    d = block_densities(m, v)
    assert d.energy_totals.sum() == pytest.approx(np.vdot(v, m.hamiltonian @ v).real, abs=1e-10)
    assert d.number_totals.sum() == pytest.approx(np.vdot(v, m.number @ v).real, abs=1e-10)


def test_gibbs_infinite_temperature():
    m = xxz_chain(4, 0.5, 1.0, 2)
    np.testing.assert_allclose(global_gibbs(m, 0.0, 0.3).data, np.eye(16) / 16, atol=1e-15)


def test_gibbs_low_temperature_is_ground_projector():
    m = xxz_chain(6, 0.5, 1.0, 3)
    hm = m.hamiltonian - 0.2 * m.number
    w, v = np.linalg.eigh(hm)
    g = w[w < w[0] + 1e-9]
    gap = w[len(g)] - w[0]
    beta = 25.0 / gap
    proj = v[:, : len(g)] @ v[:, : len(g)].T / len(g)
    np.testing.assert_allclose(global_gibbs(m, beta, 0.2).data, proj, atol=1e-8)


def test_gibbs_large_beta_no_overflow():
    m = xxz_chain(4, 0.5, 1.0, 2)
    rho = global_gibbs(m, 1e4, 0.0).data
    assert np.all(np.isfinite(rho)) and abs(np.trace(rho) - 1) < 1e-12


def test_single_site_occupation():
    m = LatticeModel(1, (), ((0,),))
    rho = global_gibbs(m, 1.0, -1.0)  # exp(-(N)) on one site
    occ = np.trace(m.number @ rho.data).real
    assert occ == pytest.approx(1 / (1 + np.e), abs=1e-14)
    assert occ == pytest.approx(0.26894142, abs=1e-8)


def test_maxent_round_trip_uniform():
    m = xxz_chain(8, 0.5, 1.0, 4)
    d = block_densities(m, global_gibbs(m, 0.6, -0.4))
    fit = maxent_fit(m, d)
    np.testing.assert_allclose(fit.beta, 0.6, atol=1e-6)
    np.testing.assert_allclose(fit.mu, -0.4, atol=1e-6)
    assert fit.residual <= 1e-8
    assert fit.trace == pytest.approx(1.0, abs=1e-10)


def test_maxent_maximal_mixing():
    m = xxz_chain(6, 0.5, 1.0, 3)
    d = block_densities(m, QuantumState(np.eye(m.dimension) / m.dimension))
    fit = maxent_fit(m, d)
    np.testing.assert_allclose(fit.theta, 0.0, atol=1e-10)
    assert fit.entropy == pytest.approx(6 * np.log(2), abs=1e-10)


def test_two_block_multipliers_order_against_energies():
    m = xxz_chain(6, 0.5, 1.0, 2)
    ops = [m.block_energy_op(0), m.block_energy_op(1)]
    # a local Gibbs state with different block temperatures, built directly
    k = 0.2 * ops[0] + 0.9 * ops[1]
    w, v = np.linalg.eigh(k)
    p = np.exp(-w - np.log(np.sum(np.exp(-w))))
    rho = QuantumState((v * p) @ v.T + 0j)
    d = block_densities(m, rho)
    fit = maxent_fit(m, d)
    assert d.energy[0] > d.energy[1]
    assert fit.beta[0] < fit.beta[1]
    np.testing.assert_allclose(fit.beta, [0.2, 0.9], atol=1e-6)


def test_dual_decreases_monotonically():
    m = xxz_chain(8, 0.5, 1.0, 4)
    d = block_densities(m, domain_wall(m), 1.5)
    fit = maxent_fit(m, d)
    assert all(b <= a + 1e-12 for a, b in zip(fit.phi_history, fit.phi_history[1:]))
    assert fit.residual <= 1e-8


def test_infeasible_target_reports_nearest_point():
    m = xxz_chain(4, 0.5, 1.0, 2)
    d = ConservedDensityField(np.array([0.0, 0.0]), np.array([1.2, 0.5]), (2, 2))
    with pytest.raises(InfeasibleTargetError) as exc:
        maxent_fit(m, d)
    assert exc.value.nearest[2] == pytest.approx(2.0)


def test_face_reduction_gives_zero_entropy_for_domain_wall():
    m = xxz_chain(10, 0.5, 1.0, 5)
    fit = maxent_fit(m, block_densities(m, domain_wall(m)))
    assert abs(fit.entropy) <= 1e-12
    assert fit.residual <= 1e-8


def test_maxent_solver_single_operator_scalar_oracle():
    # one two-level operator: <O> = t gives theta = log((1-t)/t)
    o = np.diag([1.0, 0.0])
    res = maxent_solve([o], [0.3], (np.arange(2),))
    assert res.theta[0] == pytest.approx(np.log(0.7 / 0.3), abs=1e-9)


def test_entropy_history_gibbs_is_stationary():
    m = xxz_chain(6, 0.5, 1.0, 3)
    rho = global_gibbs(m, 0.8, 0.1)
    hist = entropy_history(m, rho, [0.0, 1.0, 2.5])
    s = [h.entropy for h in hist]
    assert max(s) - min(s) <= 1e-8
    assert all(h.entropy >= h.von_neumann - 1e-9 for h in hist)


def test_entropy_history_domain_wall_small_chain():
    m = xxz_chain(6, 0.5, 1.0, 3)
    hist = entropy_history(m, domain_wall(m), np.linspace(0, 6, 7))
    assert hist[0].entropy == pytest.approx(0.0, abs=1e-10)
    assert all(h.entropy >= hist[0].entropy - 1e-3 for h in hist)
    assert all(h.von_neumann == 0.0 for h in hist)


def test_matched_gibbs_reproduces_energy_and_number():
    m = xxz_chain(6, 0.5, 1.0, 3)
    res = matched_gibbs(m, 0.3, 3.0)
    rho = global_gibbs(m, res.theta[0], -res.theta[1] / res.theta[0]).data
    assert np.trace(m.hamiltonian @ rho).real == pytest.approx(0.3, abs=1e-8)
    assert np.trace(m.number @ rho).real == pytest.approx(3.0, abs=1e-8)


def test_continuity_eigenstate_has_no_flow():
    m = xxz_chain(6, 0.5, 1.0, 3)
    w, v = np.linalg.eigh(m.hamiltonian)
    for k in range(3):
        rep = continuity_check(m, v[:, 7] + 0j, k)
        assert abs(rep.dndt) <= 1e-12 and rep.residual <= 1e-12


def test_continuity_packet_crossing_boundary():
    m = xxz_chain(10, 0.5, 1.0, 5)
    psi = evolve(m, single_excitation_packet(m, 2.0, 1.0, 1.2), 1.0).data
    rep = continuity_check(m, psi, 1)
    assert abs(rep.inflow) > 1e-3
    assert rep.residual <= 1e-8


def test_continuity_matches_finite_difference():
    m = xxz_chain(8, 0.5, 1.0, 4, next_nearest=0.4)
    psi0 = domain_wall(m)
    t, h = 1.3, 1e-4
    nv = [block_densities(m, psi0, t + s * h).number_totals[1] for s in (-2, -1, 1, 2)]
    fd = (nv[0] - 8 * nv[1] + 8 * nv[2] - nv[3]) / (12 * h)
    rep = continuity_check(m, evolve(m, psi0, t), 1)
    assert rep.inflow == pytest.approx(fd, abs=1e-7)


def test_whole_chain_block_has_no_current():
    m = xxz_chain(6, 0.5, 1.0, 1)
    psi = evolve(m, single_excitation_packet(m, 2.0, 1.0, 0.8), 0.5).data
    rep = continuity_check(m, psi, 0)
    assert abs(rep.inflow) == 0.0 and abs(rep.dndt) <= 1e-12


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), rank=st.integers(1, 16))
def test_coarse_entropy_bounds_von_neumann(seed, rank):
    m = xxz_chain(4, 0.5, 1.0, 2)
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((16, rank)) + 1j * rng.standard_normal((16, rank))
    rho = a @ a.conj().T
    rho = QuantumState(rho / np.trace(rho).real)
    fit = maxent_fit(m, block_densities(m, rho))
    w = np.linalg.eigvalsh(rho.data)
    w = w[w > 1e-15]
    assert fit.entropy >= -np.sum(w * np.log(w)) - 1e-9
    assert fit.residual <= 1e-8


@settings(max_examples=15, deadline=None)
@given(beta=st.floats(-2, 2), mu=st.floats(-1, 1))
def test_round_trip_hypothesis(beta, mu):
    m = xxz_chain(4, 0.5, 1.0, 2)
    fit = maxent_fit(m, block_densities(m, global_gibbs(m, beta, mu)))
    np.testing.assert_allclose(fit.theta[:2], beta, atol=1e-6)
    np.testing.assert_allclose(fit.theta[2:], -beta * mu, atol=1e-6)
