import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcrealm.qcore import (
    I2, SX, SZ, DimensionError, InvalidStateError, NotHermitianError, QuantumState,
    evolve_unitary, is_projector, is_unitary, ket, matrix_exponential, tensor,
)


def taylor_expm(a, squarings=12, terms=30):
    """Independent oracle: truncated Taylor series with scaling and squaring."""
    a = np.asarray(a, dtype=complex) / 2 ** squarings
    out = np.eye(a.shape[0], dtype=complex)
    term = np.eye(a.shape[0], dtype=complex)
    for k in range(1, terms):
        term = term @ a / k
        out = out + term
    for _ in range(squarings):
        out = out @ out
    return out


def rand_c(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_tensor_identity():
    assert np.array_equal(tensor(I2, I2), np.eye(4))


def test_tensor_basis_action():
    psi00 = tensor(ket(0, 2), ket(0, 2))
    assert np.array_equal(tensor(SX, I2) @ psi00, tensor(ket(1, 2), ket(0, 2)))


def test_tensor_mixed_product_rule():
    rng = np.random.default_rng(1)
    a, b, c, d = (rand_c(rng, 2, 2) for _ in range(4))
    lhs = tensor(a, b) @ tensor(c, d)
    # direct 4x4 product, entry by entry
    ac, bd = a @ c, b @ d
    rhs = np.empty((4, 4), dtype=complex)
    for i in range(4):
        for j in range(4):
            rhs[i, j] = ac[i // 2, j // 2] * bd[i % 2, j % 2]
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_tensor_associative_exactly():
    rng = np.random.default_rng(2)
    a, b, c = (rng.integers(-5, 5, (2, 2)) for _ in range(3))
    assert np.array_equal(tensor(tensor(a, b), c), tensor(a, tensor(b, c)))


def test_tensor_dimension_cap():
    with pytest.raises(DimensionError):
        tensor(np.eye(64), np.eye(128))


def test_expm_zero_and_pauli_identity():
    np.testing.assert_allclose(matrix_exponential(np.zeros((3, 3))), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(matrix_exponential(1j * np.pi * SX), -np.eye(2), atol=1e-12)


def test_expm_anti_hermitian_is_unitary_and_matches_taylor():
    rng = np.random.default_rng(3)
    g = rand_c(rng, 4, 4)
    a = (g - g.conj().T) / 2
    u = matrix_exponential(a)
    assert np.max(np.abs(u.conj().T @ u - np.eye(4))) < 1e-12
    np.testing.assert_allclose(u, taylor_expm(a), atol=1e-12)


def test_expm_general_matrix_matches_taylor():
    rng = np.random.default_rng(4)
    a = rand_c(rng, 5, 5) * 0.7
    np.testing.assert_allclose(matrix_exponential(a), taylor_expm(a), atol=1e-11)


def test_expm_non_finite_rejected():
    with pytest.raises(ValueError):
        matrix_exponential(np.array([[np.nan, 0], [0, 1]]))


def test_evolve_trivial_cases():
    psi = QuantumState(np.array([0.6, 0.8j]))
    out = evolve_unitary(psi, np.zeros((2, 2)), 3.0)
    np.testing.assert_array_equal(out.data, psi.data)
    out = evolve_unitary(psi, SZ, 0.0)
    np.testing.assert_array_equal(out.data, psi.data)


def test_evolve_qubit_half_period_flips_plus_to_minus():
    omega = 1.7
    h = omega / 2 * SZ
    plus = np.array([1, 1]) / np.sqrt(2)
    minus = np.array([1, -1]) / np.sqrt(2)
    out = evolve_unitary(QuantumState(plus), h, np.pi / omega).data
    oracle = taylor_expm(-1j * h * np.pi / omega) @ plus
    np.testing.assert_allclose(out, oracle, atol=1e-12)
    assert abs(abs(np.vdot(minus, out)) - 1) < 1e-12


def test_evolve_rejects_non_hermitian():
    with pytest.raises(NotHermitianError):
        evolve_unitary(QuantumState(ket(0, 2)), np.array([[0, 1], [0, 0]]), 1.0)


def test_state_validation():
    with pytest.raises(InvalidStateError):
        QuantumState(np.array([1.0, 1.0]))
    with pytest.raises(InvalidStateError):
        QuantumState(np.diag([1.5, -0.5]))
    with pytest.raises(InvalidStateError):
        QuantumState(np.array([[0.5, 0.5], [0.0, 0.5]]))


@settings(max_examples=40, deadline=None)
@given(dim=st.integers(2, 64), seed=st.integers(0, 2**32 - 1), t=st.floats(-5, 5))
def test_evolution_preserves_norm_and_trace(dim, seed, t):
    rng = np.random.default_rng(seed)
    g = rand_c(rng, dim, dim)
    h = (g + g.conj().T) / 2
    v = rand_c(rng, dim)
    psi = QuantumState(v / np.linalg.norm(v))
    assert abs(np.linalg.norm(evolve_unitary(psi, h, t).data) - 1) < 1e-12
    m = rand_c(rng, dim, dim)
    rho = m @ m.conj().T
    rho = QuantumState(rho / np.trace(rho).real)
    assert abs(np.trace(evolve_unitary(rho, h, t).data) - 1) < 1e-12


@settings(max_examples=30, deadline=None)
@given(dim=st.integers(2, 12), rank=st.integers(1, 11), seed=st.integers(0, 2**32 - 1))
def test_projectors_from_random_subspaces(dim, rank, seed):
    rank = min(rank, dim)
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rand_c(rng, dim, dim))
    p = q[:, :rank] @ q[:, :rank].conj().T
    assert is_projector(p)
    assert np.allclose(p @ p, p, atol=1e-10) and np.allclose(p, p.conj().T, atol=1e-10)
    assert is_unitary(q)
