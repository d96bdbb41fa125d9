"""Semiclassical (WKB) wave functions and the classical ensembles they predict.

Grid wave functions are split into amplitude and phase, momenta are read off
the phase gradient, and the resulting weighted classical ensemble is compared
with exact split-step Schrodinger evolution. Also Ehrenfest diagnostics and a
two-variable minisuperspace analogue with a user-supplied kinetic form.
"""
from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .qcore import HBAR

NORM_TOL = 1e-8
VALIDITY_MAX = 0.1
SUPPORT_MASS = 0.99
AMPLITUDE_FLOOR = 1e-12


class PhaseUnwrapError(ValueError):
    pass


class WKBValidityError(ValueError):
    pass


class ResolutionError(ValueError):
    pass


# ----------------------------------------------------------------------------
# grid wave functions
# ----------------------------------------------------------------------------

def _spacing(axis: np.ndarray) -> float:
    d = np.diff(axis)
    if axis.ndim != 1 or axis.size < 4 or not np.allclose(d, d[0], rtol=1e-9, atol=0) or d[0] <= 0:
        raise ValueError("grid axes must be uniform, increasing, with at least 4 nodes")
    return float(d[0])


@dataclass(frozen=True)
class GridWavefunction:
    """Complex values on a uniform 1-D or 2-D grid (``axes`` in ij order)."""

    axes: tuple
    values: np.ndarray
    mass: tuple = (1.0,)
    potential: Optional[np.ndarray] = None
    hbar: float = HBAR
    check_norm: bool = True

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != tuple(a.size for a in axes):
            raise ValueError("values shape must match the grid axes")
        for a in axes:
            _spacing(a)
        mass = tuple(float(m) for m in np.broadcast_to(np.asarray(self.mass, dtype=float), (len(axes),)))
        pot = None if self.potential is None else np.asarray(self.potential, dtype=float)
        if pot is not None and pot.shape != vals.shape:
            raise ValueError("potential shape must match the grid")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "potential", pot)
        if self.check_norm and abs(self.norm() - 1.0) > NORM_TOL:
            raise ValueError(f"wave function norm {self.norm()!r} differs from 1")

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def spacings(self) -> tuple:
        return tuple(_spacing(a) for a in self.axes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    def density(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    def norm(self) -> float:
        out = self.density()
        for k in reversed(range(self.ndim)):
            out = trapezoid(out, dx=self.spacings[k], axis=k)
        return float(out)

    def mesh(self) -> tuple:
        return np.meshgrid(*self.axes, indexing="ij")

    def with_values(self, values: np.ndarray) -> "GridWavefunction":
        return replace(self, values=values)


def gaussian_packet(
    x: np.ndarray, x0: float, p0: float, sigma: float, hbar: float = HBAR, chirp: float = 0.0,
    mass: float = 1.0, potential: Optional[np.ndarray] = None,
) -> GridWavefunction:
    """exp(-(x-x0)^2/(4 sigma^2) + i (p0 (x-x0) + chirp (x-x0)^2 / 2) / hbar), normalized."""
    x = np.asarray(x, dtype=float)
    d = x - x0
    psi = np.exp(-d ** 2 / (4 * sigma ** 2) + 1j * (p0 * d + 0.5 * chirp * d ** 2) / hbar)
    psi /= np.sqrt(trapezoid(np.abs(psi) ** 2, dx=_spacing(x)))
    return GridWavefunction((x,), psi, (mass,), potential, hbar)


# ----------------------------------------------------------------------------
# amplitude / phase
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseAmplitude:
    phase: np.ndarray  # S, nan outside the analysis region
    amplitude: np.ndarray  # A = |psi|
    region: np.ndarray
    grad_phase: tuple  # components of grad S (nan outside region)
    validity: np.ndarray  # (|grad A|/A) / (|grad S|/hbar)
    residues: int = 0


def _wrap(d: np.ndarray) -> np.ndarray:
    return (d + np.pi) % (2 * np.pi) - np.pi


def _components(mask: np.ndarray) -> int:
    seen = np.zeros_like(mask, dtype=bool)
    n = 0
    for start in zip(*np.nonzero(mask)):
        if seen[start]:
            continue
        n += 1
        seen[start] = True
        q = deque([start])
        while q:
            c = q.popleft()
            for ax in range(mask.ndim):
                for s in (-1, 1):
                    nb = list(c)
                    nb[ax] += s
                    nb = tuple(nb)
                    if 0 <= nb[ax] < mask.shape[ax] and mask[nb] and not seen[nb]:
                        seen[nb] = True
                        q.append(nb)
    return n


def _unwrap_tree(phase: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Integrate wrapped differences along a BFS spanning tree of the masked grid."""
    out = np.full(phase.shape, np.nan)
    amp_start = tuple(int(i) for i in np.argwhere(mask)[0])
    out[amp_start] = phase[amp_start]
    q = deque([amp_start])
    while q:
        c = q.popleft()
        for ax in range(mask.ndim):
            for s in (-1, 1):
                nb = list(c)
                nb[ax] += s
                nb = tuple(nb)
                if 0 <= nb[ax] < mask.shape[ax] and mask[nb] and np.isnan(out[nb]):
                    out[nb] = out[c] + _wrap(phase[nb] - phase[c])
                    q.append(nb)
    return out


def _plaquette_residues(phase: np.ndarray, mask: np.ndarray) -> int:
    p00, p10, p11, p01 = phase[:-1, :-1], phase[1:, :-1], phase[1:, 1:], phase[:-1, 1:]
    circ = _wrap(p10 - p00) + _wrap(p11 - p10) + _wrap(p01 - p11) + _wrap(p00 - p01)
    full = mask[:-1, :-1] & mask[1:, :-1] & mask[1:, 1:] & mask[:-1, 1:]
    return int(np.sum(full & (np.abs(circ) > np.pi)))


def _inconsistent_edges(raw: np.ndarray, unwrapped: np.ndarray, mask: np.ndarray) -> int:
    """Edges between region nodes where the tree-unwrapped phase disagrees with the local difference.

    Nonzero iff the phase winds around a masked hole or a vortex.
    """
    bad = 0
    for ax in range(raw.ndim):
        a = [slice(None)] * raw.ndim
        b = [slice(None)] * raw.ndim
        a[ax], b[ax] = slice(None, -1), slice(1, None)
        a, b = tuple(a), tuple(b)
        both = mask[a] & mask[b]
        diff = (unwrapped[b] - unwrapped[a]) - _wrap(raw[b] - raw[a])
        bad += int(np.sum(both & (np.abs(diff) > 1.0)))
    return bad


def _masked_gradient(f: np.ndarray, mask: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Second-order derivative along ``axis`` using only nodes inside ``mask``.

    Central differences where both neighbours are inside, one-sided
    three-point stencils at region edges, nan where neither fits.
    """
    f = np.moveaxis(np.where(mask, f, np.nan), axis, 0)
    m = np.moveaxis(mask, axis, 0)
    out = np.full(f.shape, np.nan)

    def sh(a, k, fill):
        r = np.full_like(a, fill)
        if k > 0:
            r[:-k] = a[k:]
        elif k < 0:
            r[-k:] = a[:k]
        else:
            r[:] = a
        return r

    mp1, mm1 = sh(m, 1, False), sh(m, -1, False)
    mp2, mm2 = sh(m, 2, False), sh(m, -2, False)
    fp1, fm1, fp2, fm2 = sh(f, 1, np.nan), sh(f, -1, np.nan), sh(f, 2, np.nan), sh(f, -2, np.nan)
    central = m & mp1 & mm1
    fwd = m & ~central & mp1 & mp2
    bwd = m & ~central & ~fwd & mm1 & mm2
    out[central] = ((fp1 - fm1) / (2 * h))[central]
    out[fwd] = ((-3 * f + 4 * fp1 - fp2) / (2 * h))[fwd]
    out[bwd] = ((3 * f - 4 * fm1 + fm2) / (2 * h))[bwd]
    return np.moveaxis(out, 0, axis)


def phase_amplitude_split(
    psi: GridWavefunction, region: Optional[np.ndarray] = None, max_step: float = 0.9 * np.pi,
) -> PhaseAmplitude:
    """A = |psi| and S = hbar * unwrapped arg(psi) on the region where |psi| > 1e-12."""
    amp = np.abs(psi.values)
    mask = amp > AMPLITUDE_FLOOR if region is None else (np.asarray(region, dtype=bool) & (amp > AMPLITUDE_FLOOR))
    if not mask.any():
        raise PhaseUnwrapError("empty analysis region")
    if _components(mask) != 1:
        raise PhaseUnwrapError("analysis region is split by zeros of psi; phase cannot be unwrapped across nodes")
    raw = np.angle(psi.values)
    for ax in range(psi.ndim):
        sl0 = [slice(None)] * psi.ndim
        sl1 = [slice(None)] * psi.ndim
        sl0[ax], sl1[ax] = slice(None, -1), slice(1, None)
        both = mask[tuple(sl0)] & mask[tuple(sl1)]
        step = np.abs(_wrap(raw[tuple(sl1)] - raw[tuple(sl0)]))[both]
        if step.size and step.max() > max_step:
            raise PhaseUnwrapError("phase changes by nearly pi between neighbouring nodes; grid too coarse")
        if step.size and step.max() > np.pi / 4:
            warnings.warn("grid spacing exceeds 1/8 of the local wavelength", RuntimeWarning)
    residues = 0
    if psi.ndim == 1:
        idx = np.flatnonzero(mask)
        ph = np.full(raw.shape, np.nan)
        ph[idx] = np.unwrap(raw[idx])
    else:
        ph = _unwrap_tree(raw, mask)
        residues = _plaquette_residues(raw, mask) if psi.ndim == 2 else 0
        residues += _inconsistent_edges(raw, ph, mask)
        if residues:
            raise PhaseUnwrapError(f"{residues} phase residues (vortices) inside the analysis region")
    s = psi.hbar * ph
    grads = [_masked_gradient(s, mask, h, ax) for ax, h in enumerate(psi.spacings)]
    with np.errstate(divide="ignore", invalid="ignore"):
        loga = np.log(np.where(mask, amp, 1.0))
        ga = [_masked_gradient(loga, mask, h, ax) for ax, h in enumerate(psi.spacings)]
        num = np.sqrt(sum(g ** 2 for g in ga))
        den = np.sqrt(sum(g ** 2 for g in grads)) / psi.hbar
        validity = np.where(mask, num / den, np.nan)
    return PhaseAmplitude(s, amp, mask, tuple(grads), validity, residues)


# ----------------------------------------------------------------------------
# classical ensembles
# ----------------------------------------------------------------------------

ForceField = Callable[[np.ndarray], np.ndarray]


def _rk4(q: np.ndarray, p: np.ndarray, velocity: Callable, force: Callable, dt: float, n: int):
    for _ in range(n):
        k1q, k1p = velocity(p), force(q)
        k2q, k2p = velocity(p + 0.5 * dt * k1p), force(q + 0.5 * dt * k1q)
        k3q, k3p = velocity(p + 0.5 * dt * k2p), force(q + 0.5 * dt * k2q)
        k4q, k4p = velocity(p + dt * k3p), force(q + dt * k3q)
        q = q + dt / 6 * (k1q + 2 * k2q + 2 * k3q + k4q)
        p = p + dt / 6 * (k1p + 2 * k2p + 2 * k3p + k4p)
    return q, p


@dataclass(frozen=True)
class ClassicalEnsemble:
    """Weighted initial phase-space points; rows of ``positions``/``momenta`` are members.

    Dynamics: dq/dt = K p, dp/dt = F(q), with K the inverse kinetic metric
    (diag(1/m) for ordinary particles, any symmetric matrix for minisuperspace).
    """

    positions: np.ndarray
    momenta: np.ndarray
    weights: np.ndarray
    convention_sign: int
    inverse_metric: np.ndarray
    force: Optional[ForceField] = field(default=None, repr=False)
    max_validity: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-8:
            raise ValueError("weights must be nonnegative and sum to 1")

    @property
    def size(self) -> int:
        return self.weights.size

    def mean_position(self, q: Optional[np.ndarray] = None) -> np.ndarray:
        q = self.positions if q is None else q
        return self.weights @ q

    def propagate(self, times: Sequence[float], dt: float = 1e-3) -> np.ndarray:
        """Positions at each of ``times`` (ascending, from t=0); shape (len(times), members, dim)."""
        kin = self.inverse_metric
        force = self.force or (lambda q: np.zeros_like(q))
        velocity = lambda p: p @ kin.T  # noqa: E731
        q, p = self.positions.copy(), self.momenta.copy()
        out = []
        t = 0.0
        for target in times:
            span = float(target) - t
            if span < -1e-15:
                raise ValueError("times must be ascending and nonnegative")
            n = int(np.ceil(span / dt - 1e-12)) if span > 0 else 0
            if n:
                q, p = _rk4(q, p, velocity, force, span / n, n)
            t = float(target)
            out.append(q.copy())
        return np.stack(out)


def grid_force(psi: GridWavefunction) -> ForceField:
    """-dV/dx from the grid potential, linearly interpolated (1-D)."""
    if psi.potential is None:
        return lambda q: np.zeros_like(q)
    x = psi.axes[0]
    f = -np.gradient(psi.potential, psi.spacings[0], edge_order=2)
    return lambda q: np.interp(q[:, 0], x, f)[:, None]


def _support_mask(weights: np.ndarray, mass: float) -> np.ndarray:
    order = np.argsort(weights.ravel())[::-1]
    cum = np.cumsum(weights.ravel()[order])
    k = int(np.searchsorted(cum, mass * cum[-1])) + 1
    m = np.zeros(weights.size, dtype=bool)
    m[order[:k]] = True
    return m.reshape(weights.shape)


def _ensemble(
    psi: GridWavefunction, pa: PhaseAmplitude, convention_sign: int, inverse_metric: np.ndarray,
    force: Optional[ForceField], check_validity: bool,
) -> ClassicalEnsemble:
    if convention_sign not in (1, -1):
        raise ValueError("convention_sign must be +1 or -1")
    w = np.where(pa.region, pa.amplitude ** 2 * psi.cell_volume, 0.0)
    support = _support_mask(w, SUPPORT_MASS) & pa.region
    worst = float(np.nanmax(np.where(support, pa.validity, np.nan)))
    if check_validity and not worst <= VALIDITY_MAX:
        raise WKBValidityError(f"WKB validity ratio {worst:.3g} exceeds {VALIDITY_MAX} on the 99% support")
    sel = pa.region & np.all([np.isfinite(g) for g in pa.grad_phase], axis=0)
    mesh = psi.mesh()
    q = np.stack([m[sel] for m in mesh], axis=1)
    p = convention_sign * np.stack([g[sel] for g in pa.grad_phase], axis=1)
    wt = w[sel]
    return ClassicalEnsemble(q, p, wt / wt.sum(), convention_sign, inverse_metric, force, worst)


def classical_ensemble(
    psi: GridWavefunction, convention_sign: int = 1, force: Optional[ForceField] = None,
    check_validity: bool = True, region: Optional[np.ndarray] = None,
) -> ClassicalEnsemble:
    """One member per grid node with weight |A|^2 h and momentum convention_sign * grad S."""
    if psi.ndim != 1:
        raise ValueError("use minisuperspace_ensemble for 2-D wave functions")
    pa = phase_amplitude_split(psi, region)
    kin = np.diag([1.0 / psi.mass[0]])
    return _ensemble(psi, pa, convention_sign, kin, force or grid_force(psi), check_validity)


def minisuperspace_ensemble(
    psi: GridWavefunction, inverse_metric: np.ndarray, potential_gradient: Optional[ForceField] = None,
    convention_sign: int = 1, check_validity: bool = True, region: Optional[np.ndarray] = None,
) -> ClassicalEnsemble:
    """Ensemble over (a, phi) for the toy Hamiltonian H = p.K.p / 2 + U(a, phi).

    ``inverse_metric`` is the symmetric matrix K (indefinite allowed);
    ``potential_gradient`` maps (members, 2) positions to grad U.
    """
    if psi.ndim != 2:
        raise ValueError("minisuperspace wave functions live on a 2-D grid")
    k = np.asarray(inverse_metric, dtype=float)
    if k.shape != (2, 2) or not np.allclose(k, k.T):
        raise ValueError("inverse kinetic metric must be a symmetric 2x2 matrix")
    pa = phase_amplitude_split(psi, region)
    force = None if potential_gradient is None else (lambda q: -potential_gradient(q))
    return _ensemble(psi, pa, convention_sign, k, force, check_validity)


# ----------------------------------------------------------------------------
# exact evolution
# ----------------------------------------------------------------------------

def _wavenumbers(psi: GridWavefunction) -> list:
    return [2 * np.pi * np.fft.fftfreq(a.size, d=h) for a, h in zip(psi.axes, psi.spacings)]


def schrodinger_evolve(
    psi: GridWavefunction, t: float, dt: Optional[float] = None, max_phase: float = 0.5,
    observe: Optional[Callable[[float, np.ndarray], None]] = None, n_observe: int = 0,
) -> GridWavefunction:
    """Strang split-step Fourier propagation on the periodic grid.

    ``observe(t, values)`` is called at ``n_observe`` equally spaced instants in
    (0, t] (plus t=0) when given.
    """
    ks = _wavenumbers(psi)
    kmesh = np.meshgrid(*ks, indexing="ij")
    kinetic = sum(psi.hbar ** 2 * k ** 2 / (2 * m) for k, m in zip(kmesh, psi.mass))
    spec = np.abs(np.fft.fftn(psi.values)) ** 2
    edge = sum(np.abs(k) > 0.8 * np.max(np.abs(k)) for k in kmesh) > 0
    if spec[edge].sum() > 1e-8 * spec.sum():
        raise ResolutionError("wave function has spectral weight near the grid Nyquist limit")
    pot = psi.potential if psi.potential is not None else np.zeros(psi.values.shape)
    if dt is None:
        occ_k = spec > 1e-10 * spec.max()
        dens = np.abs(psi.values) ** 2
        occ_x = dens > 1e-10 * dens.max()
        scale = max(float(kinetic[occ_k].max()), float(np.ptp(pot[occ_x])), 1e-300) / psi.hbar
        dt = max_phase / scale
    n = max(1, int(np.ceil(abs(t) / dt - 1e-12)))
    if observe is not None and n_observe:
        n = int(np.ceil(n / n_observe)) * n_observe
    step = t / n
    half_v = np.exp(-0.5j * pot * step / psi.hbar)
    kin = np.exp(-1j * kinetic * step / psi.hbar)
    v = psi.values.copy()
    every = n // n_observe if (observe is not None and n_observe) else 0
    if every:
        observe(0.0, v)
    for i in range(1, n + 1):
        v = half_v * np.fft.ifftn(kin * np.fft.fftn(half_v * v))
        if every and i % every == 0:
            observe(i * step, v)
    return psi.with_values(v)


# ----------------------------------------------------------------------------
# Ehrenfest diagnostics
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class PotentialSpec:
    """V(x) and dV/dx as vectorized callables (1-D)."""

    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"


def harmonic_potential(mass: float = 1.0, omega: float = 1.0) -> PotentialSpec:
    return PotentialSpec(lambda x: 0.5 * mass * omega ** 2 * x ** 2, lambda x: mass * omega ** 2 * x, "harmonic")


def quartic_potential(strength: float = 1.0) -> PotentialSpec:
    return PotentialSpec(lambda x: strength * x ** 4, lambda x: 4 * strength * x ** 3, "quartic")


def free_potential() -> PotentialSpec:
    return PotentialSpec(lambda x: np.zeros_like(x), lambda x: np.zeros_like(x), "free")


@dataclass(frozen=True)
class EhrenfestReport:
    times: np.ndarray
    mean_x: np.ndarray
    acceleration: np.ndarray  # d^2<x>/dt^2 from the exact generator
    mean_force: np.ndarray  # -<V'(x)>/m
    identity_residual: float  # max |acceleration - mean_force|
    substitution_error: float  # max |<V'(x)> - V'(<x>)|
    substitution_series: np.ndarray


def _grid_expectations(psi: GridWavefunction, v: np.ndarray, spec: PotentialSpec):
    x = psi.axes[0]
    h = psi.spacings[0]
    k = _wavenumbers(psi)[0]
    rho = np.abs(v) ** 2
    mean_x = float(np.sum(x * rho) * h)
    # d<p>/dt = (i/hbar) <[V, p]>, with p = -i hbar d/dx applied spectrally
    vx = spec.value(x)
    p_op = lambda f: psi.hbar * np.fft.ifft(k * np.fft.fft(f))  # noqa: E731
    comm = vx * p_op(v) - p_op(vx * v)
    dpdt = float((1j / psi.hbar * np.sum(v.conj() * comm) * h).real)
    mean_dv = float(np.sum(spec.derivative(x) * rho) * h)
    return mean_x, dpdt / psi.mass[0], -mean_dv / psi.mass[0], mean_dv


def ehrenfest_residual(psi: GridWavefunction, spec: PotentialSpec, horizon: float, n_samples: int = 50,
                       dt: Optional[float] = None) -> EhrenfestReport:
    """Both sides of m d^2<x>/dt^2 = -<V'(x)> along the exact evolution, and the
    error made by replacing <V'(x)> with V'(<x>)."""
    psi = replace(psi, potential=spec.value(psi.axes[0]))
    rows = []

    def obs(t, v):
        rows.append((t,) + _grid_expectations(psi, v, spec))

    schrodinger_evolve(psi, horizon, dt=dt, observe=obs, n_observe=n_samples)
    arr = np.array(rows)
    t, mx, acc, mf, mdv = arr.T
    subst = np.abs(mdv - spec.derivative(mx))
    return EhrenfestReport(t, mx, acc, mf, float(np.max(np.abs(acc - mf))), float(np.max(subst)), subst)


# ----------------------------------------------------------------------------
# ensemble vs exact comparison
# ----------------------------------------------------------------------------

def binned(positions: np.ndarray, weights: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Mass per bin; the two outer bins absorb everything beyond the edges."""
    idx = np.clip(np.searchsorted(edges, positions, side="right") - 1, -1, len(edges) - 1) + 1
    return np.bincount(idx, weights=weights, minlength=len(edges) + 1)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


@dataclass(frozen=True)
class EnsembleFidelity:
    times: np.ndarray
    tv: np.ndarray
    max_tv: float
    bin_width: float
    max_validity: float


def ensemble_fidelity(
    psi: GridWavefunction, horizon: float, bin_width: float, n_samples: int = 40, bin_origin: float = 0.0,
    convention_sign: int = 1, dt_quantum: Optional[float] = None, dt_classical: float = 2e-3,
) -> EnsembleFidelity:
    """Total-variation distance between binned ensemble positions and binned |psi(x,t)|^2."""
    h = psi.spacings[0]
    if bin_width < 8 * h:
        raise ValueError("bins must span at least 8 grid steps")
    x = psi.axes[0]
    lo = bin_origin + np.floor((x[0] - bin_origin) / bin_width) * bin_width
    edges = np.arange(lo, x[-1] + bin_width, bin_width)
    ens = classical_ensemble(psi, convention_sign)
    snaps = []
    schrodinger_evolve(psi, horizon, dt=dt_quantum, n_observe=n_samples,
                       observe=lambda t, v: snaps.append((t, np.abs(v) ** 2 * h)))
    times = np.array([s[0] for s in snaps])
    qs = ens.propagate(times, dt_classical)
    tv = []
    for (t, rho), q in zip(snaps, qs):
        pq = binned(x, rho / rho.sum(), edges)
        pc = binned(q[:, 0], ens.weights, edges)
        tv.append(total_variation(pq, pc))
    tv = np.array(tv)
    return EnsembleFidelity(times, tv, float(tv.max()), bin_width, ens.max_validity)


@dataclass(frozen=True)
class ConventionReport:
    winner: int
    drift_exact: float
    drift_plus: float
    drift_minus: float
    stated_sign: int = -1  # the alternative convention p = -grad S
    agrees_with_stated: bool = False


def determine_convention_sign(hbar: float = HBAR, mass: float = 1.0, t: float = 1.0) -> ConventionReport:
    """Pick the sign in p = sign * grad S that reproduces the exact drift of a right-moving packet."""
    x = np.linspace(-40, 40, 2048, endpoint=False)
    psi = gaussian_packet(x, -10.0, 5.0, 3.0, hbar, mass=mass)
    exact = schrodinger_evolve(psi, t)
    x_mean = lambda v: float(np.sum(x * np.abs(v) ** 2) / np.sum(np.abs(v) ** 2))  # noqa: E731
    drift = x_mean(exact.values) - x_mean(psi.values)
    drifts = {}
    for sign in (1, -1):
        ens = classical_ensemble(psi, sign)
        q = ens.propagate([t])[0]
        drifts[sign] = float(ens.mean_position(q)[0] - ens.mean_position()[0])
    match = [s for s in (1, -1) if np.sign(drifts[s]) == np.sign(drift) and abs(drifts[s] - drift) < 0.05 * abs(drift)]
    if len(match) != 1:
        raise RuntimeError("momentum-sign convention could not be discriminated")
    return ConventionReport(match[0], drift, drifts[1], drifts[-1], -1, match[0] == -1)
