"""Dense complex linear algebra on small labelled Hilbert spaces.

Operators are plain ``numpy`` complex arrays; :class:`HilbertSpace` only
carries the tensor-factor bookkeeping and :class:`QuantumState` wraps a ket
or a density matrix together with its validation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

HBAR = 1.0
KB = 1.0

TOL_NORM = 1e-10
TOL_HERM = 1e-10
TOL_PSD = -1e-10
TOL_EXP = 1e-12
MAX_DIM = 4096


class DimensionError(ValueError):
    """Composite dimension above the configured cap."""


class NotHermitianError(ValueError):
    pass


class InvalidStateError(ValueError):
    pass


@dataclass(frozen=True)
class HilbertSpace:
    factor_dims: tuple[int, ...]
    basis_labels: Optional[tuple[tuple[str, ...], ...]] = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.factor_dims)
        if not dims or any(d < 1 for d in dims):
            raise ValueError(f"factor dimensions must be positive, got {self.factor_dims}")
        object.__setattr__(self, "factor_dims", dims)
        if self.basis_labels is not None:
            if len(self.basis_labels) != len(dims) or any(
                len(lbl) != d for lbl, d in zip(self.basis_labels, dims)
            ):
                raise ValueError("basis_labels must give one label per basis vector per factor")

    @property
    def dimension(self) -> int:
        return int(np.prod(self.factor_dims))

    @classmethod
    def of_dim(cls, dim: int) -> "HilbertSpace":
        return cls((dim,))

    def __mul__(self, other: "HilbertSpace") -> "HilbertSpace":
        labels = None
        if self.basis_labels is not None and other.basis_labels is not None:
            labels = self.basis_labels + other.basis_labels
        return HilbertSpace(self.factor_dims + other.factor_dims, labels)


# ----------------------------------------------------------------------------
# predicates
# ----------------------------------------------------------------------------

def is_hermitian(a: np.ndarray, tol: float = TOL_HERM) -> bool:
    a = np.asarray(a)
    return a.ndim == 2 and a.shape[0] == a.shape[1] and bool(np.allclose(a, a.conj().T, atol=tol, rtol=0))


def is_unitary(u: np.ndarray, tol: float = TOL_HERM) -> bool:
    u = np.asarray(u)
    return bool(np.allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=tol, rtol=0))


def is_projector(p: np.ndarray, tol: float = TOL_HERM) -> bool:
    p = np.asarray(p)
    return is_hermitian(p, tol) and bool(np.allclose(p @ p, p, atol=tol, rtol=0))


def check_square(a: np.ndarray, name: str = "operator") -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


# ----------------------------------------------------------------------------
# states
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class QuantumState:
    """A pure ket (1-D array) or a density matrix (2-D array)."""

    data: np.ndarray
    space: Optional[HilbertSpace] = field(default=None, compare=False)

    def __post_init__(self):
        d = np.array(self.data, dtype=complex)
        if d.ndim == 1:
            if abs(np.linalg.norm(d) - 1.0) > TOL_NORM:
                raise InvalidStateError(f"ket norm {np.linalg.norm(d)!r} differs from 1")
        elif d.ndim == 2:
            d = check_square(d, "density matrix")
            if not is_hermitian(d):
                raise InvalidStateError("density matrix is not Hermitian")
            if abs(np.trace(d).real - 1.0) > TOL_NORM:
                raise InvalidStateError(f"density matrix trace {np.trace(d).real!r} differs from 1")
            if np.linalg.eigvalsh((d + d.conj().T) / 2)[0] < TOL_PSD:
                raise InvalidStateError("density matrix is not positive semidefinite")
        else:
            raise InvalidStateError("state must be a vector or a square matrix")
        space = self.space or HilbertSpace.of_dim(d.shape[0])
        if space.dimension != d.shape[0]:
            raise InvalidStateError("state dimension does not match its Hilbert space")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "space", space)

    @property
    def is_pure(self) -> bool:
        return self.data.ndim == 1

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def density_matrix(self) -> np.ndarray:
        if self.is_pure:
            return np.outer(self.data, self.data.conj())
        return self.data.copy()

    def expect(self, op: np.ndarray) -> complex:
        if self.is_pure:
            return complex(np.vdot(self.data, op @ self.data))
        return complex(np.trace(op @ self.data))


def as_state(state) -> QuantumState:
    if isinstance(state, QuantumState):
        return state
    return QuantumState(np.asarray(state))


def ket(index: int, dim: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return v


def von_neumann_entropy(rho: np.ndarray) -> float:
    w = np.linalg.eigvalsh((rho + rho.conj().T) / 2)
    w = w[w > 1e-15]
    return float(-np.sum(w * np.log(w)))


# ----------------------------------------------------------------------------
# operations
# ----------------------------------------------------------------------------

def tensor(*ops: np.ndarray, max_dim: int = MAX_DIM) -> np.ndarray:
    """Kronecker product of operators (or kets), left factor outermost."""
    if not ops:
        raise ValueError("tensor needs at least one factor")
    dim = int(np.prod([np.shape(o)[0] for o in ops]))
    if dim > max_dim:
        raise DimensionError(f"composite dimension {dim} exceeds cap {max_dim}")
    return reduce(np.kron, (np.asarray(o, dtype=complex) for o in ops))


def embed(op: np.ndarray, site: int, dims: Sequence[int]) -> np.ndarray:
    """Place ``op`` on factor ``site`` of the product space ``dims``."""
    factors = [np.eye(d, dtype=complex) for d in dims]
    factors[site] = np.asarray(op, dtype=complex)
    return tensor(*factors, max_dim=max(MAX_DIM, int(np.prod(dims))))


def matrix_exponential(a: np.ndarray, hermitian_generator: Optional[bool] = None) -> np.ndarray:
    """exp(a) for a dense complex matrix.

    Skew-Hermitian and Hermitian inputs go through ``eigh`` (exactly unitary /
    positive results); everything else uses Pade scaling-and-squaring.
    """
    a = check_square(a, "exponent")
    if hermitian_generator is None:
        scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
        if np.allclose(a, -a.conj().T, atol=1e-14 * scale, rtol=0):
            hermitian_generator = True
    if hermitian_generator:
        # a = i*K with K Hermitian
        k = (a - a.conj().T) / 2j
        w, v = np.linalg.eigh(k)
        return (v * np.exp(1j * w)) @ v.conj().T
    if np.allclose(a, a.conj().T, atol=0, rtol=0):
        w, v = np.linalg.eigh(a)
        return (v * np.exp(w)) @ v.conj().T
    out = sla.expm(a)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("matrix exponential did not converge (non-finite result)")
    return out


def propagator(h: np.ndarray, t: float, hbar: float = HBAR) -> np.ndarray:
    """U(t) = exp(-i H t / hbar)."""
    h = check_square(h, "Hamiltonian")
    if not is_hermitian(h):
        raise NotHermitianError("Hamiltonian is not Hermitian")
    if t == 0 or not np.any(h):
        return np.eye(h.shape[0], dtype=complex)
    w, v = np.linalg.eigh((h + h.conj().T) / 2)
    return (v * np.exp(-1j * w * t / hbar)) @ v.conj().T


def evolve_unitary(state, h: np.ndarray, t: float, hbar: float = HBAR) -> QuantumState:
    st = as_state(state)
    u = propagator(h, t, hbar)
    if st.is_pure:
        out = u @ st.data
    else:
        out = u @ st.data @ u.conj().T
        out = (out + out.conj().T) / 2
    return QuantumState(out, st.space)


# Pauli matrices, used throughout tests and model builders
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)
