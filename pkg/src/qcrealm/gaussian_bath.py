"""A harmonic oscillator coupled to a high-temperature ohmic bath.

Histories are sequences of position intervals at a few times. The decoherence
functional is computed two ways:

* ``gaussian`` backend: interval indicators are replaced by Gaussian windows so
  every step stays Gaussian. The reduced density kernel is carried in closed
  form through the high-temperature master equation via its chord function.
* ``grid`` backend: a direct double sum on a position grid. It uses the exact
  harmonic propagator per segment, damped by the noise term evaluated on the
  classical separation path (exact for quadratic actions). Friction is left out.

Also the noise part of the influence phase, the decoherence time, the Wigner
function of Gaussian states, the classical damped orbit and the peaking of
history probabilities around it.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import expm
from scipy.optimize import brentq

from .qcore import HBAR, KB

HIGH_TEMPERATURE_MIN = 10.0
MAX_HISTORIES = 200_000
MAX_PAIRS = 2_000_000
MAX_GRID_SLICES = 3


class NotDecoherentError(ValueError):
    pass


class GridResolutionError(ValueError):
    pass


# ----------------------------------------------------------------------------
# model description
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class OscillatorBathSpec:
    """Distinguished oscillator (mass, renormalized frequency) plus bath (gamma, temperature).

    The coupling constants of the bath enter only through ``gamma``.
    """

    mass: float = 1.0
    frequency: float = 1.0
    gamma: float = 0.1
    temperature: float = 100.0
    bare_frequency: Optional[float] = None
    hbar: float = HBAR
    kb: float = KB

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if not self.temperature > 0:
            raise ValueError("bath temperature must be positive")
        if not self.gamma >= 0:
            raise ValueError("gamma must be non-negative")
        if not self.frequency >= 0:
            raise ValueError("frequency must be non-negative")
        if not self.hbar > 0 or not self.kb > 0:
            raise ValueError("hbar and kb must be positive")

    @property
    def thermal_energy(self) -> float:
        return self.kb * self.temperature

    @property
    def high_temperature_ratio(self) -> float:
        """k T / (hbar omega); the noise kernel used here needs this to be large."""
        if self.frequency == 0:
            return math.inf
        return self.thermal_energy / (self.hbar * self.frequency)

    @property
    def is_high_temperature(self) -> bool:
        return self.high_temperature_ratio >= HIGH_TEMPERATURE_MIN

    @property
    def noise_coefficient(self) -> float:
        """2 M gamma k T / hbar^2: damping rate of coherence per unit squared separation."""
        return 2 * self.mass * self.gamma * self.thermal_energy / self.hbar ** 2

    def replace(self, **kw) -> "OscillatorBathSpec":
        from dataclasses import replace
        return replace(self, **kw)


@dataclass(frozen=True)
class CoarseGrainingGrid:
    """Position bins of width ``interval_width`` at each of ``times``.

    Bin centers are ``center + (j - (n_bins-1)/2) * interval_width``. For sharp
    bins the two outermost bins extend to infinity.
    """

    interval_width: float
    times: tuple
    n_bins: int
    center: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        if not self.interval_width > 0:
            raise ValueError("interval width must be positive")
        if self.n_bins < 1 or len(self.times) < 1:
            raise ValueError("need at least one bin and one time")
        t = np.asarray(self.times)
        if t[0] < 0 or np.any(np.diff(t) <= 0):
            raise ValueError("times must be non-negative and strictly increasing")

    @property
    def n_times(self) -> int:
        return len(self.times)

    @property
    def spacing(self) -> float:
        t = np.concatenate([[0.0], self.times])
        d = np.diff(t)
        return float(np.min(d[d > 0])) if np.any(d > 0) else math.inf

    @property
    def centers(self) -> np.ndarray:
        j = np.arange(self.n_bins) - (self.n_bins - 1) / 2
        return self.center + j * self.interval_width

    @property
    def edges(self) -> np.ndarray:
        c = self.centers
        return np.concatenate([[c[0] - self.interval_width / 2], c + self.interval_width / 2])

    @property
    def x_range(self) -> tuple:
        e = self.edges
        return float(e[0]), float(e[-1])

    def bin_of(self, x) -> np.ndarray:
        """Bin index of each position (outer bins unbounded)."""
        return np.clip(np.searchsorted(self.edges[1:-1], np.asarray(x), side="right"), 0, self.n_bins - 1)

    def histories(self) -> np.ndarray:
        return np.array(list(itertools.product(range(self.n_bins), repeat=self.n_times)), dtype=int)


@dataclass(frozen=True)
class GaussianInitialState:
    """Gaussian state of the oscillator given by its first and second moments."""

    x_mean: float = 0.0
    p_mean: float = 0.0
    x_var: float = 0.5
    p_var: float = 0.5
    xp_cov: float = 0.0
    hbar: float = HBAR

    def __post_init__(self):
        if not (self.x_var > 0 and self.p_var > 0):
            raise ValueError("variances must be positive")
        if self.x_var * self.p_var - self.xp_cov ** 2 < (self.hbar / 2) ** 2 * (1 - 1e-10):
            raise ValueError("covariance violates the uncertainty relation")

    @classmethod
    def minimum_uncertainty(cls, x_mean: float, p_mean: float, sigma: float, hbar: float = HBAR):
        return cls(x_mean, p_mean, sigma ** 2, (hbar / (2 * sigma)) ** 2, 0.0, hbar)

    @property
    def covariance(self) -> np.ndarray:
        return np.array([[self.x_var, self.xp_cov], [self.xp_cov, self.p_var]])

    @property
    def mean(self) -> np.ndarray:
        return np.array([self.x_mean, self.p_mean])


def wigner_gaussian(g: GaussianInitialState):
    """Wigner function of ``g`` as a vectorized callable ``w(x, p)``."""
    cov = g.covariance
    inv = np.linalg.inv(cov)
    norm = 1.0 / (2 * np.pi * np.sqrt(np.linalg.det(cov)))

    def w(x, p):
        dx = np.asarray(x, dtype=float) - g.x_mean
        dp = np.asarray(p, dtype=float) - g.p_mean
        q = inv[0, 0] * dx ** 2 + 2 * inv[0, 1] * dx * dp + inv[1, 1] * dp ** 2
        return norm * np.exp(-0.5 * q)

    return w


def density_kernel(g: GaussianInitialState, x, x_prime) -> np.ndarray:
    """Position kernel <x|rho|x'> of the Gaussian state."""
    a, b, c = _initial_form(g)
    xx, xp = np.broadcast_arrays(np.asarray(x, float), np.asarray(x_prime, float))
    z = np.stack([(xx + xp) / 2, xx - xp], axis=-1)
    return np.exp(_eval_form(a, b, c, z))


# ----------------------------------------------------------------------------
# influence phase, decoherence time, classical orbit
# ----------------------------------------------------------------------------

def influence_phase_im(path_a, path_b, spec: OscillatorBathSpec, times) -> float:
    """Imaginary part of the influence phase, (2 M gamma k T / hbar) * int (x_a - x_b)^2 dt."""
    xa, xb, t = (np.asarray(v, dtype=float) for v in (path_a, path_b, times))
    if xa.shape != xb.shape or xa.shape != t.shape or t.ndim != 1 or t.size < 2:
        raise ValueError("paths must be sampled on the same 1-D time grid")
    dt = np.diff(t)
    if np.any(dt <= 0) or not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
        raise ValueError("time grid must be uniform and increasing")
    return 2 * spec.mass * spec.gamma * spec.thermal_energy / spec.hbar * float(trapezoid((xa - xb) ** 2, t))


def decoherence_time(spec: OscillatorBathSpec, interval_width: float) -> float:
    """hbar^2 / (2 M gamma k T Delta^2); +inf (with a warning) without coupling."""
    if not interval_width > 0:
        raise ValueError("interval width must be positive")
    if spec.gamma == 0:
        warnings.warn("no bath coupling: decoherence time is infinite", RuntimeWarning)
        return math.inf
    return spec.hbar ** 2 / (2 * spec.mass * spec.gamma * spec.thermal_energy * interval_width ** 2)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    x: np.ndarray
    p: np.ndarray

    def energy(self, spec: OscillatorBathSpec) -> np.ndarray:
        return self.p ** 2 / (2 * spec.mass) + 0.5 * spec.mass * spec.frequency ** 2 * self.x ** 2

    def at(self, t) -> np.ndarray:
        return np.interp(t, self.times, self.x)


def langevin_ode_solve(spec: OscillatorBathSpec, x0: float, p0: float, horizon: float,
                       max_step: float = 1e-3) -> Trajectory:
    """RK4 solution of x'' + omega^2 x + 2 gamma x' = 0 from (x0, p0)."""
    if horizon < 0 or not max_step > 0:
        raise ValueError("horizon must be >= 0 and step > 0")
    n = max(1, int(math.ceil(horizon / max_step)))
    h = horizon / n
    w2, g2, m = spec.frequency ** 2, 2 * spec.gamma, spec.mass

    def f(y):
        return np.array([y[1] / m, -m * w2 * y[0] - g2 * y[1]])

    ys = np.empty((n + 1, 2))
    ys[0] = (x0, p0)
    for i in range(n):
        y = ys[i]
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        ys[i + 1] = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return Trajectory(np.linspace(0.0, horizon, n + 1), ys[:, 0], ys[:, 1])


def _drift_matrix(spec: OscillatorBathSpec) -> np.ndarray:
    # d(x, v)/dt for the damped oscillator
    return np.array([[0.0, 1.0], [-spec.frequency ** 2, -2 * spec.gamma]])


def _gramian(a: np.ndarray, q: np.ndarray, t: float) -> tuple:
    """(exp(a t), int_0^t exp(a s) q exp(a^T s) ds) by Van Loan's block exponential."""
    n = a.shape[0]
    blk = np.zeros((2 * n, 2 * n))
    blk[:n, :n] = a
    blk[:n, n:] = q
    blk[n:, n:] = -a.T
    e = expm(blk * t)
    phi = e[:n, :n]
    return phi, e[:n, n:] @ phi.T


def classical_position_spread(spec: OscillatorBathSpec, g: GaussianInitialState, t: float) -> float:
    """Standard deviation of x(t) under the Langevin law with noise 4 M gamma k T."""
    a = _drift_matrix(spec)
    q = np.diag([0.0, 4 * spec.gamma * spec.thermal_energy / spec.mass])
    phi, noise = _gramian(a, q, t)
    m = spec.mass
    cov0 = np.array([[g.x_var, g.xp_cov / m], [g.xp_cov / m, g.p_var / m ** 2]])
    cov = phi @ cov0 @ phi.T + noise
    return float(np.sqrt(cov[0, 0]))


# ----------------------------------------------------------------------------
# Gaussian algebra: kernels exp(-z.A.z/2 + b.z + c) in (X, xi) = ((x+x')/2, x-x')
# ----------------------------------------------------------------------------

def _eval_form(a, b, c, z):
    return -0.5 * np.einsum("...i,...ij,...j->...", z, a, z) + np.einsum("...i,...i->...", z, b) + c


def _initial_form(g: GaussianInitialState):
    hb = g.hbar
    kappa = g.xp_cov / g.x_var
    cond = g.p_var - g.xp_cov ** 2 / g.x_var
    a = np.array([[1 / g.x_var, -1j * kappa / hb], [-1j * kappa / hb, cond / hb ** 2]], dtype=complex)
    b = np.array([g.x_mean / g.x_var, 1j * (g.p_mean - kappa * g.x_mean) / hb], dtype=complex)
    c = complex(-g.x_mean ** 2 / (2 * g.x_var) - 0.5 * np.log(2 * np.pi * g.x_var))
    return a, b, c


def _fourier_first(a, b, c, sign: int):
    """Integrate the first variable z0 against exp(sign*i*s*z0); result in (s, z1)."""
    a0 = a[..., 0, 0]
    r = a[..., 0, 1]
    isg = 1j * sign
    out = np.empty_like(a)
    out[..., 0, 0] = 1.0 / a0
    out[..., 0, 1] = out[..., 1, 0] = isg * r / a0
    out[..., 1, 1] = a[..., 1, 1] - r ** 2 / a0
    bo = np.empty_like(b)
    bo[..., 0] = isg * b[..., 0] / a0
    bo[..., 1] = b[..., 1] - b[..., 0] * r / a0
    co = c + b[..., 0] ** 2 / (2 * a0) + 0.5 * np.log(2 * np.pi / a0)
    return out, bo, co


@dataclass(frozen=True)
class _Segment:
    back: np.ndarray   # exp(-L dt) acting on chord variables (k, xi)
    noise: np.ndarray  # int_0^dt exp(-L^T s) e_xi e_xi^T exp(-L s) ds


def _chord_generator(spec: OscillatorBathSpec) -> np.ndarray:
    m, w, hb = spec.mass, spec.frequency, spec.hbar
    return np.array([[0.0, -m * w ** 2 / hb], [hb / m, 2 * spec.gamma]])


def _segment(spec: OscillatorBathSpec, dt: float) -> _Segment:
    minus_l = -_chord_generator(spec)
    e_xi = np.array([[0.0, 0.0], [0.0, 1.0]])
    # int_0^dt exp(-L^T s) Q exp(-L s) ds = gramian of a = -L^T
    phi, gram = _gramian(minus_l.T, e_xi, dt)
    return _Segment(phi.T, gram)


def _evolve_forms(a, b, c, seg: _Segment, noise: float):
    """Carry kernels through one segment of the master equation."""
    ka, kb_, kc = _fourier_first(a, b, c, -1)
    bm = seg.back
    ka = np.einsum("ji,...jk,kl->...il", bm, ka, bm) + 2 * noise * seg.noise
    kb_ = np.einsum("ji,...j->...i", bm, kb_)
    a, b, c = _fourier_first(ka, kb_, kc, +1)
    return a, b, c - np.log(2 * np.pi)


def _window_scale(width: float) -> float:
    return width / math.sqrt(12.0)


def _apply_windows(a, b, c, left, right, width: float, classical: bool = False):
    """Multiply the kernel by g_left(x) g_right(x') (Gaussian windows).

    With ``classical`` both windows are evaluated at the center X = (x+x')/2,
    i.e. they multiply the Wigner function instead of acting as operators.
    """
    s2 = _window_scale(width) ** 2
    lognorm = math.log(width / (math.sqrt(2 * math.pi * s2)))
    a = a.copy()
    b = b.copy()
    a[..., 0, 0] += 1 / s2
    b[..., 0] += (left + right) / (2 * s2)
    if not classical:
        a[..., 1, 1] += 1 / (4 * s2)
        b[..., 1] += (left - right) / (4 * s2)
    c = c - (left ** 2 + right ** 2) / (4 * s2) + lognorm
    return a, b, c


def _final_trace(a, b, c, center, width: float):
    """log of int w(x) K(x, x) dx with w = g^2."""
    s2 = _window_scale(width) ** 2
    lognorm = math.log(width / (math.sqrt(2 * math.pi * s2)))
    aa = a[..., 0, 0] + 1 / s2
    bb = b[..., 0] + center / s2
    cc = c + lognorm - center ** 2 / (2 * s2)
    return cc + bb ** 2 / (2 * aa) + 0.5 * np.log(2 * np.pi / aa)


def _gaussian_log_values(spec, grid, g, left, right, noise: bool = True, classical: bool = False) -> np.ndarray:
    """log D for rows of window centers ``left`` (alpha') and ``right`` (alpha); final centers must agree."""
    left = np.atleast_2d(np.asarray(left, dtype=float))
    right = np.atleast_2d(np.asarray(right, dtype=float))
    npairs = left.shape[0]
    a0, b0, c0 = _initial_form(g)
    a = np.broadcast_to(a0, (npairs, 2, 2)).copy()
    b = np.broadcast_to(b0, (npairs, 2)).copy()
    c = np.full(npairs, c0, dtype=complex)
    coeff = spec.noise_coefficient if noise else 0.0
    width = grid.interval_width
    t_prev = 0.0
    for k, t in enumerate(grid.times):
        if t > t_prev:
            a, b, c = _evolve_forms(a, b, c, _segment(spec, t - t_prev), coeff)
        t_prev = t
        if k < grid.n_times - 1:
            a, b, c = _apply_windows(a, b, c, left[:, k], right[:, k], width, classical)
    return _final_trace(a, b, c, left[:, -1], width)


# ----------------------------------------------------------------------------
# grid backend
# ----------------------------------------------------------------------------

def _propagator_matrix(spec: OscillatorBathSpec, x: np.ndarray, dt: float) -> np.ndarray:
    m, w, hb = spec.mass, spec.frequency, spec.hbar
    h = x[1] - x[0]
    if w == 0:
        pref = np.sqrt(m / (2j * np.pi * hb * dt))
        phase = m * (x[:, None] - x[None, :]) ** 2 / (2 * hb * dt)
    else:
        s = np.sin(w * dt)
        if abs(s) < 1e-8:
            raise GridResolutionError("slice spacing hits a caustic of the oscillator propagator")
        pref = np.sqrt(m * w / (2j * np.pi * hb * s))
        phase = m * w / (2 * hb * s) * ((x[:, None] ** 2 + x[None, :] ** 2) * np.cos(w * dt)
                                      - 2 * x[:, None] * x[None, :])
    return pref * np.exp(1j * phase) * h


def separation_weights(frequency: float, dt: float) -> tuple:
    """(I_aa, I_ab, I_bb) with int xi(t)^2 dt over a classical path = I_aa a^2 + 2 I_ab a b + I_bb b^2."""
    w = frequency
    if w * dt < 1e-6:
        return dt / 3, dt / 6, dt / 3
    s = np.sin(w * dt)
    i_aa = (dt / 2 - np.sin(2 * w * dt) / (4 * w)) / s ** 2
    i_ab = (np.sin(w * dt) - w * dt * np.cos(w * dt)) / (2 * w) / s ** 2
    return float(i_aa), float(i_ab), float(i_aa)


def _grid_segment(kernel: np.ndarray, x: np.ndarray, prop: np.ndarray, weights: tuple, coeff: float) -> np.ndarray:
    """R'(x, x') = sum K(x,y) R(y,y') K*(x',y') exp(-coeff int xi^2)."""
    i_aa, i_ab, i_bb = weights
    y = x - x.mean()
    xi = y[:, None] - y[None, :]
    r = kernel * np.exp(-coeff * i_aa * xi ** 2)
    cross = 2 * coeff * i_ab
    if cross * np.ptp(y) ** 2 > 600:
        raise GridResolutionError("noise too strong for the grid backend on this span")
    out = np.empty_like(kernel)
    kc = prop.conj()
    for i in range(x.size):
        d = y[i] - y
        u = prop[i][None, :] * np.exp(-cross * np.outer(d, y))
        v = kc * np.exp(cross * np.outer(d, y))
        out[i] = np.sum(u * (v @ r.T), axis=1) * np.exp(-coeff * i_bb * d ** 2)
    return out


def _grid_windows(grid: CoarseGrainingGrid, x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sharp":
        return (grid.bin_of(x)[None, :] == np.arange(grid.n_bins)[:, None]).astype(float)
    if kind == "gaussian":
        s2 = _window_scale(grid.interval_width) ** 2
        norm2 = grid.interval_width / math.sqrt(2 * math.pi * s2)
        return np.sqrt(norm2) * np.exp(-(x[None, :] - grid.centers[:, None]) ** 2 / (4 * s2))
    raise ValueError("window must be 'sharp' or 'gaussian'")


def _grid_functional(spec, grid, g, points: int, span: Optional[tuple], window: str, classical: bool = False):
    if grid.n_times > MAX_GRID_SLICES:
        raise ValueError(f"grid backend supports at most {MAX_GRID_SLICES} time slices")
    lo, hi = span if span is not None else grid.x_range
    x = np.linspace(lo, hi, points)
    h = x[1] - x[0]
    if grid.interval_width < 2 * h:
        raise GridResolutionError("bin width is below two grid steps")
    coeff = spec.noise_coefficient
    win = _grid_windows(grid, x, window)
    if classical:
        # both windows evaluated at the center (x + x')/2
        center = 0.5 * (x[:, None] + x[None, :])

        def mult(i, j):
            return _grid_windows(grid, center.ravel(), window)[[i, j]].prod(axis=0).reshape(center.shape)
    else:
        def mult(i, j):
            return win[i][:, None] * win[j][None, :]
    kernel = density_kernel(g, x[:, None], x[None, :])
    nodes = {((), ()): kernel}
    t_prev = 0.0
    for k, t in enumerate(grid.times):
        if t > t_prev:
            prop = _propagator_matrix(spec, x, t - t_prev)
            wts = separation_weights(spec.frequency, t - t_prev)
            nodes = {key: _grid_segment(r, x, prop, wts, coeff) for key, r in nodes.items()}
        t_prev = t
        if k < grid.n_times - 1:
            nodes = {(kl + (i,), kr + (j,)): mult(i, j) * r
                     for (kl, kr), r in nodes.items() for i in range(grid.n_bins) for j in range(grid.n_bins)}
    hist = grid.histories()
    index = {tuple(h_): n for n, h_ in enumerate(hist)}
    d = np.zeros((len(hist), len(hist)), dtype=complex)
    for (kl, kr), r in nodes.items():
        diag = np.diag(r)
        for f in range(grid.n_bins):
            d[index[kl + (f,)], index[kr + (f,)]] = np.sum(win[f] ** 2 * diag) * h
    return hist, d


# ----------------------------------------------------------------------------
# decoherence functional over interval histories
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class PathEnsembleResult:
    """Decoherence functional and probabilities over position-interval histories.

    ``entries`` is the full matrix over ``histories`` (None when only the
    diagonal was computed). ``probabilities`` are normalized to sum to one;
    ``captured_mass`` is their raw total before normalization.

    ``max_offdiag`` is the largest normalized |D| among the pairs evaluated.
    ``max_interference`` is the largest normalized |D - D_classical|, where
    D_classical applies every window to the Wigner function rather than as an
    operator. Sharp bins give D_classical = 0 off the diagonal, so the two
    agree; smooth windows overlap, so only the second measures interference.
    """

    histories: np.ndarray
    probabilities: np.ndarray
    entries: Optional[np.ndarray]
    max_offdiag: float
    max_interference: float
    pairs_checked: int
    peak_index: tuple
    fitted_width: float
    slice_widths: np.ndarray
    captured_mass: float
    backend: str
    window: str
    grid: CoarseGrainingGrid

    @property
    def leaked_mass(self) -> float:
        return 1.0 - self.captured_mass

    def marginal(self, slice_index: int) -> np.ndarray:
        return np.bincount(self.histories[:, slice_index], weights=self.probabilities, minlength=self.grid.n_bins)

    def decoherent(self, epsilon: float) -> bool:
        return self.max_interference <= epsilon


def _normalized_offdiag(d: np.ndarray, p_left: np.ndarray, p_right: np.ndarray) -> np.ndarray:
    den = np.sqrt(np.clip(p_left, 0, None) * np.clip(p_right, 0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 0, np.abs(d) / np.where(den > 0, den, 1), np.where(np.abs(d) > 0, np.inf, 0.0))
    return out


def _slice_widths(grid: CoarseGrainingGrid, hist: np.ndarray, p: np.ndarray) -> np.ndarray:
    c = grid.centers
    out = []
    for k in range(grid.n_times):
        xs = c[hist[:, k]]
        m = np.sum(p * xs)
        out.append(np.sqrt(max(np.sum(p * (xs - m) ** 2), 0.0)))
    return np.array(out)


def _neighbor_pairs(hist_index: dict, top: Sequence[tuple], n_bins: int) -> list:
    """Pairs (top history, neighbor) differing by one bin step in some earlier slices, same final bin."""
    pairs = []
    n = len(top[0]) if top else 0
    steps = [s for s in itertools.product((-1, 0, 1), repeat=n - 1) if any(s)]
    for h in top:
        for s in steps:
            nb = tuple(hh + ss for hh, ss in zip(h[:-1], s)) + (h[-1],)
            if all(0 <= v < n_bins for v in nb):
                pairs.append((hist_index[h], hist_index[nb]))
    return pairs


def _max_off(d, dc, diag, ii, jj) -> tuple:
    if len(ii) == 0:
        return 0.0, 0.0
    raw = _normalized_offdiag(d, diag[ii], diag[jj])
    inter = _normalized_offdiag(d - dc, diag[ii], diag[jj])
    return float(np.max(raw)), float(np.max(inter))


def oscillator_decoherence_functional(spec: OscillatorBathSpec, grid: CoarseGrainingGrid, g: GaussianInitialState,
                                      backend: str = "gaussian", full: Optional[bool] = None, n_check: int = 50,
                                      grid_points: int = 121, grid_span: Optional[tuple] = None,
                                      window: Optional[str] = None) -> PathEnsembleResult:
    """Decoherence functional for position-interval histories of the damped oscillator.

    Both backends set D to zero when the final bins differ: the smeared form of
    P_a P_b = delta_ab P_a at the last time. The gaussian backend always uses
    Gaussian windows; the grid backend uses sharp bins unless
    ``window='gaussian'``. With ``full=False`` (default for large sets) only the
    diagonal plus neighbor pairs of the ``n_check`` most probable histories are
    evaluated.
    """
    if spec.hbar != g.hbar:
        raise ValueError("model and state use different hbar")
    if not spec.is_high_temperature:
        warnings.warn(f"k T / hbar omega = {spec.high_temperature_ratio:.3g} is below "
                      f"{HIGH_TEMPERATURE_MIN}; the noise kernel assumes high temperature", RuntimeWarning)
    hist = grid.histories()
    nh = len(hist)
    if nh > MAX_HISTORIES:
        raise ValueError(f"{nh} histories exceed the cap of {MAX_HISTORIES}")
    centers = grid.centers
    if backend == "grid":
        window = window or "sharp"
        hist, d = _grid_functional(spec, grid, g, grid_points, grid_span, window)
        diag = np.real(np.diag(d))
        if window == "sharp":
            dc = np.diag(np.diag(d))
        else:
            dc = _grid_functional(spec, grid, g, grid_points, grid_span, window, classical=True)[1]
        ii, jj = np.nonzero(~np.eye(nh, dtype=bool) & (hist[:, -1][:, None] == hist[:, -1][None, :]))
        maxoff, maxint = _max_off(d[ii, jj], dc[ii, jj], diag, ii, jj)
        npairs, entries = int(ii.size), d
    elif backend == "gaussian":
        if window not in (None, "gaussian"):
            raise ValueError("the gaussian backend only supports Gaussian windows")
        window = "gaussian"
        if full is None:
            full = nh * nh / grid.n_bins <= 20_000
        cl = centers[hist]
        diag = np.real(np.exp(_gaussian_log_values(spec, grid, g, cl, cl)))
        if full:
            same = (hist[:, -1][:, None] == hist[:, -1][None, :]) & ~np.eye(nh, dtype=bool)
            ii, jj = np.nonzero(same)
            if ii.size > MAX_PAIRS:
                raise ValueError("too many history pairs for a full functional")
            d = np.diag(diag).astype(complex)
            d[ii, jj] = np.exp(_gaussian_log_values(spec, grid, g, cl[ii], cl[jj]))
            dcv = np.exp(_gaussian_log_values(spec, grid, g, cl[ii], cl[jj], classical=True))
            maxoff, maxint = _max_off(d[ii, jj], dcv, diag, ii, jj)
            npairs, entries = int(ii.size), d
        else:
            order = np.argsort(-diag)[: max(1, n_check)]
            index = {tuple(h): n for n, h in enumerate(hist)}
            pairs = _neighbor_pairs(index, [tuple(hist[i]) for i in order], grid.n_bins)
            ii, jj = (np.array(pairs).T if pairs else (np.zeros(0, int), np.zeros(0, int)))
            dv = np.exp(_gaussian_log_values(spec, grid, g, cl[ii], cl[jj])) if pairs else np.zeros(0)
            dcv = np.exp(_gaussian_log_values(spec, grid, g, cl[ii], cl[jj], classical=True)) if pairs else np.zeros(0)
            maxoff, maxint = _max_off(dv, dcv, diag, ii, jj)
            npairs, entries = len(pairs), None
    else:
        raise ValueError("backend must be 'gaussian' or 'grid'")
    if np.any(diag < -1e-12 * max(1.0, np.max(np.abs(diag)))):
        raise ArithmeticError("negative history probability")
    diag = np.clip(diag, 0.0, None)
    total = float(diag.sum())
    if not total > 0:
        raise ArithmeticError("all history probabilities vanish; the bins miss the packet")
    p = diag / total
    if entries is not None:
        entries = entries / total
    widths = _slice_widths(grid, hist, p)
    peak = tuple(int(v) for v in hist[int(np.argmax(p))])
    return PathEnsembleResult(hist, p, entries, maxoff, maxint, npairs, peak, float(widths[-1]), widths, total,
                              backend, window, grid)


# ----------------------------------------------------------------------------
# measured decoherence time
# ----------------------------------------------------------------------------

def _pair_suppression(spec, g, centers: tuple, times: tuple, width: float) -> float:
    """log of the normalized off-diagonal with noise divided by the same without noise."""
    grid = CoarseGrainingGrid(width, times, 1)
    left = np.array([[centers[0], centers[0], centers[2]]])
    right = np.array([[centers[1], centers[1], centers[2]]])
    vals = []
    for noise in (True, False):
        od = _gaussian_log_values(spec, grid, g, left, right, noise)[0]
        pl = _gaussian_log_values(spec, grid, g, left, left, noise)[0]
        pr = _gaussian_log_values(spec, grid, g, right, right, noise)[0]
        vals.append(od.real - 0.5 * (pl.real + pr.real))
    return float(vals[0] - vals[1])


def suppression_curve(spec: OscillatorBathSpec, g: GaussianInitialState, interval_width: float,
                      spacings: Sequence[float], center: Optional[float] = None) -> np.ndarray:
    """Noise suppression factor of the adjacent-bin off-diagonal at each slice spacing."""
    c0 = g.x_mean if center is None else center
    centers = (c0 - interval_width / 2, c0 + interval_width / 2, c0)
    return np.exp([_pair_suppression(spec, g, centers, (0.0, dt, 2 * dt), interval_width) for dt in spacings])


def measured_decoherence_time(spec: OscillatorBathSpec, g: GaussianInitialState, interval_width: float,
                              center: Optional[float] = None) -> float:
    """Slice spacing at which bath noise suppresses interference between neighbor bins by e.

    The histories are (b, b, f) and (b+1, b+1, f) at times (0, dt, 2 dt), with
    f the bin between them; the normalized off-diagonal is divided by its
    value with the noise switched off (friction kept).
    """
    t_formula = decoherence_time(spec, interval_width)
    if not math.isfinite(t_formula):
        return math.inf
    c0 = g.x_mean if center is None else center
    centers = (c0 - interval_width / 2, c0 + interval_width / 2, c0)

    def excess(dt):
        return _pair_suppression(spec, g, centers, (0.0, dt, 2 * dt), interval_width) + 1.0

    hi = t_formula
    while excess(hi) > 0:
        hi *= 2
        if hi > 1e4 * t_formula:
            raise ArithmeticError("interference is never suppressed by a factor e")
    return float(brentq(excess, 1e-9 * t_formula, hi, xtol=1e-12 * t_formula, rtol=1e-10))


@dataclass(frozen=True)
class DecoherenceSweep:
    parameter: str
    values: np.ndarray
    measured: np.ndarray
    predicted: np.ndarray
    slope: float

    @property
    def max_ratio(self) -> float:
        r = self.measured / self.predicted
        return float(np.max(np.maximum(r, 1 / r)))


def decoherence_time_sweep(spec: OscillatorBathSpec, g: GaussianInitialState, parameter: str,
                           values: Sequence[float], interval_width: Optional[float] = None,
                           mapper: Callable = map) -> DecoherenceSweep:
    """Measured and predicted decoherence times while varying bin width or bath temperature.

    ``mapper`` evaluates the independent sweep points (e.g. an executor's map);
    results are kept in input order.
    """
    values = np.asarray(values, dtype=float)
    points = []
    for v in values:
        if parameter == "interval_width":
            points.append((spec, v))
        elif parameter == "temperature":
            if interval_width is None:
                raise ValueError("interval_width is required for a temperature sweep")
            points.append((spec.replace(temperature=v), interval_width))
        else:
            raise ValueError("parameter must be 'interval_width' or 'temperature'")
    measured = np.array(list(mapper(lambda sw: measured_decoherence_time(sw[0], g, sw[1]), points)))
    predicted = [decoherence_time(s, w) for s, w in points]
    slope = float(np.polyfit(np.log(values), np.log(measured), 1)[0])
    return DecoherenceSweep(parameter, values, measured, np.array(predicted), slope)


# ----------------------------------------------------------------------------
# classical peaking
# ----------------------------------------------------------------------------

def _equation_residuals(spec: OscillatorBathSpec, g: GaussianInitialState, times, xs) -> tuple:
    """Discretized E = x'' + omega^2 x + 2 gamma x' at the start and each interior slice, with weights."""
    t = np.concatenate([[0.0], np.asarray(times, float)])
    x = np.concatenate([[g.x_mean], np.asarray(xs, float)])
    v0 = g.p_mean / spec.mass
    w2, g2 = spec.frequency ** 2, 2 * spec.gamma
    res, wts = [], []
    h1 = t[1] - t[0]
    if h1 > 0:
        res.append(2 * (x[1] - x[0] - v0 * h1) / h1 ** 2 + w2 * x[0] + g2 * v0)
        wts.append(h1 / 2)
    for k in range(1, len(t) - 1):
        hl, hr = t[k] - t[k - 1], t[k + 1] - t[k]
        acc = 2 * (hl * x[k + 1] - (hl + hr) * x[k] + hr * x[k - 1]) / (hl * hr * (hl + hr))
        vel = (x[k + 1] - x[k - 1]) / (hl + hr)
        res.append(acc + w2 * x[k] + g2 * vel)
        wts.append((hl + hr) / 2)
    return np.array(res), np.array(wts)


def discretized_action(spec: OscillatorBathSpec, g: GaussianInitialState, times, xs) -> float:
    """Sum of weighted squared residuals of the classical equation of motion."""
    r, w = _equation_residuals(spec, g, times, xs)
    return float(np.sum(w * r ** 2))


@dataclass(frozen=True)
class PeakingReport:
    peak_index: tuple
    peak_positions: np.ndarray
    orbit_index: tuple
    matches_orbit: bool
    action_at_peak: float
    is_local_minimum: bool
    fitted_width: float
    predicted_width: float
    max_interference: float

    @property
    def width_ratio(self) -> float:
        return self.fitted_width / self.predicted_width


def classical_peaking(spec: OscillatorBathSpec, grid: CoarseGrainingGrid, g: GaussianInitialState,
                      epsilon: float = 1e-2, result: Optional[PathEnsembleResult] = None,
                      max_step: Optional[float] = None) -> PeakingReport:
    """Locate the most probable history and compare it with the damped classical orbit."""
    res = result if result is not None else oscillator_decoherence_functional(spec, grid, g)
    if not res.decoherent(epsilon):
        raise NotDecoherentError(f"max normalized interference {res.max_interference:.3g} exceeds {epsilon}")
    step = grid.spacing / 50 if max_step is None else min(max_step, grid.spacing / 50)
    traj = langevin_ode_solve(spec, g.x_mean, g.p_mean, grid.times[-1], step)
    orbit = tuple(int(v) for v in grid.bin_of(traj.at(grid.times)))
    c = grid.centers
    peak_x = c[list(res.peak_index)]
    act = discretized_action(spec, g, grid.times, peak_x)
    local_min = True
    for s in itertools.product((-1, 0, 1), repeat=grid.n_times):
        nb = np.array(res.peak_index) + np.array(s)
        if any(s) and np.all((nb >= 0) & (nb < grid.n_bins)):
            if discretized_action(spec, g, grid.times, c[nb]) < act:
                local_min = False
                break
    predicted = classical_position_spread(spec, g, grid.times[-1])
    return PeakingReport(res.peak_index, peak_x, orbit, orbit == res.peak_index, act, local_min,
                         res.fitted_width, predicted, res.max_interference)
