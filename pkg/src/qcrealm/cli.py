"""Batch front end: parse a JSON config, run one experiment, write CSV tables and a summary.

Exit codes: 0 all assertions pass, 1 some assertion failed, 2 config parse
error, 3 precondition violation, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from . import __version__
from . import gaussian_bath as gb
from . import histories as hi
from . import measurement as me
from . import semiclassical as sc
from . import thermo as th
from .qcore import QuantumState

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2
EXIT_PRECONDITION = 3
EXIT_NUMERICAL = 4

TOP_LEVEL_KEYS = {"experiment", "name", "params", "seed", "output", "tolerances", "assertions"}
THREADS_ENV = "QCREALM_THREADS"


class ConfigError(ValueError):
    """Malformed configuration; maps to exit code 2."""


# ----------------------------------------------------------------------------
# config
# ----------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    experiment: str
    name: str
    params: dict
    seed: int
    output: Optional[str]
    tolerances: dict
    assertions: Optional[list]

    def echo(self) -> dict:
        return {"experiment": self.experiment, "name": self.name, "params": self.params, "seed": self.seed,
                "output": self.output, "tolerances": self.tolerances, "assertions": self.assertions}


@dataclass
class Check:
    name: str
    value: Any
    limit: str
    passed: bool


@dataclass
class Outcome:
    metrics: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)  # file name -> (header, rows)

    def check(self, name: str, value, limit: str, passed: bool):
        self.checks.append(Check(name, value, limit, bool(passed)))


def _type_ok(default, value) -> bool:
    if default is None:
        return True
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, (int, float)):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return True


def _merge(kind: str, section: str, defaults: dict, given: Any) -> dict:
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise ConfigError(f"'{section}' must be an object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown {section} key(s) for experiment '{kind}': {', '.join(unknown)}")
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if not _type_ok(defaults[k], v):
            raise ConfigError(f"{section}.{k} has the wrong type ({type(v).__name__})")
        out[k] = v
    return out


def parse_config(raw: Any) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - TOP_LEVEL_KEYS)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kind = raw.get("experiment")
    if kind not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}; got {kind!r}")
    exp = EXPERIMENTS[kind]
    params = _merge(kind, "params", exp.params, raw.get("params"))
    tolerances = _merge(kind, "tolerances", exp.tolerances, raw.get("tolerances"))
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an integer in [0, 2^64)")
    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError("output must be a directory path string")
    name = raw.get("name", kind)
    if not isinstance(name, str) or not name:
        raise ConfigError("name must be a non-empty string")
    assertions = raw.get("assertions")
    if assertions is not None:
        if not isinstance(assertions, list) or not all(isinstance(a, str) for a in assertions):
            raise ConfigError("assertions must be a list of check names")
        bad = sorted(set(assertions) - set(exp.check_names))
        if bad:
            raise ConfigError(f"unknown assertion(s) for '{kind}': {', '.join(bad)}")
    return ExperimentConfig(kind, name, params, seed, output, tolerances, assertions)


def load_config(path: str) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return parse_config(raw)


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


class _Context:
    """Seeded RNG plus an order-preserving parallel map capped by the thread count."""

    def __init__(self, seed: int, threads: int):
        self.seed = seed
        self.threads = threads
        self.rng = np.random.default_rng(seed)
        self._pool = ThreadPoolExecutor(threads) if threads > 1 else None

    def map(self, fn: Callable, items) -> list:
        items = list(items)
        if self._pool is None:
            return [fn(x) for x in items]
        return list(self._pool.map(fn, items))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()


# ----------------------------------------------------------------------------
# output
# ----------------------------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    if v is None:
        return ""
    s = str(v)
    if any(c in s for c in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def format_table(header, rows) -> str:
    lines = [",".join(header)]
    for r in rows:
        if len(r) != len(header):
            raise ValueError("table row length does not match its header")
        lines.append(",".join(_cell(v) for v in r))
    return "\n".join(lines) + "\n"


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else ("nan" if math.isnan(f) else ("inf" if f > 0 else "-inf"))
    if isinstance(v, complex):
        return [_jsonable(v.real), _jsonable(v.imag)]
    return v


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ----------------------------------------------------------------------------
# experiments
# ----------------------------------------------------------------------------

@dataclass
class Experiment:
    description: str
    params: dict
    tolerances: dict
    check_names: tuple
    prepare: Callable  # params -> prepared objects; raises ValueError on bad physics
    run: Callable  # (prepared, params, tolerances, ctx) -> Outcome


def _runtime_limit(tolerances: dict) -> Optional[float]:
    v = tolerances.get("max_seconds")
    return None if v is None else float(v)


# realm -------------------------------------------------------------------------

def _prepare_realm(p):
    if p["n_random"] < 0 or p["n_commuting"] < 0 or p["partitions_per_set"] < 1:
        raise ValueError("set counts must be non-negative and partitions_per_set >= 1")
    if not 2 <= p["max_dim"] <= 64 or not 1 <= p["max_sets"] <= 4:
        raise ValueError("need 2 <= max_dim <= 64 and 1 <= max_sets <= 4")
    if not p["epsilon"] > 0:
        raise ValueError("epsilon must be positive")
    return None


def _run_realm(_, p, tol, ctx) -> Outcome:
    out = Outcome()
    rng = ctx.rng
    rows = []
    herm = norm = gram_res = single = sum_rule = 0.0
    n_decoherent = 0
    families = ["random"] * p["n_random"] + ["commuting"] * p["n_commuting"]
    for i, family in enumerate(families):
        if family == "random":
            hs = hi.random_history_set(rng, max_dim=p["max_dim"], max_sets=p["max_sets"])
        else:
            hs = hi.random_commuting_history_set(rng, max_dim=p["max_dim"], max_sets=p["max_sets"])
        d = hi.decoherence_functional(hs, p["epsilon"])
        rep = hi.check_decoherence(d, p["epsilon"])
        h_res = d.hermiticity_residual
        n_err = abs(d.total - 1)
        herm, norm = max(herm, h_res), max(norm, n_err)
        g_res = math.nan
        if hs.initial_state.is_pure:
            _, vecs = hi.branch_vectors(hs)
            g_res = float(np.max(np.abs(d.entries - vecs @ vecs.conj().T)))
            gram_res = max(gram_res, g_res)
        if len(hs.schedule) == 1:
            single = max(single, rep.max_normalized)
        s_res = math.nan
        if rep.decoherent:
            n_decoherent += 1
            s_res = 0.0
            for _ in range(p["partitions_per_set"]):
                k = int(rng.integers(1, 4))
                part = {a: int(rng.integers(0, k)) for a in hs.indices()}
                s_res = max(s_res, hi.sum_rule_residual(hs, part))
            sum_rule = max(sum_rule, s_res)
        rows.append((i, family, hs.dim, len(hs.schedule), hs.initial_state.is_pure, rep.max_normalized,
                     rep.decoherent, h_res, n_err, g_res, s_res))
    out.tables["realm_sets.csv"] = (
        ["index", "family", "dim", "n_sets", "pure", "max_normalized_offdiag", "decoherent",
         "hermiticity_residual", "normalization_error", "gram_residual", "sum_rule_residual"], rows)
    out.metrics.update(sets=len(families), decoherent_sets=n_decoherent, max_hermiticity_residual=herm,
                       max_normalization_error=norm, max_gram_residual=gram_res,
                       max_single_time_offdiag=single, max_sum_rule_residual=sum_rule)
    out.check("hermitian", herm, f"<= {tol['hermiticity']:g}", herm <= tol["hermiticity"])
    out.check("normalized", norm, f"<= {tol['normalization']:g}", norm <= tol["normalization"])
    out.check("single_time_decoherent", single, f"<= {tol['single_time']:g}", single <= tol["single_time"])
    out.check("pure_gram", gram_res, f"<= {tol['gram']:g}", gram_res <= tol["gram"])
    out.check("decoherent_sets_found", n_decoherent, ">= 1", n_decoherent >= 1)
    out.check("sum_rules", sum_rule, f"<= {tol['sum_rule']:g}", sum_rule <= tol["sum_rule"])
    return out


# two-slit ----------------------------------------------------------------------

def _prepare_twoslit(p):
    ov = complex(p["overlap_re"], p["overlap_im"])
    return hi.build_two_slit(ov), ov


def _run_twoslit(prep, p, tol, ctx) -> Outcome:
    hs, ov = prep
    d = hi.decoherence_functional(hs, p["epsilon"])
    rep = hi.check_decoherence(d, p["epsilon"])
    out = Outcome()
    out.tables["twoslit_functional.csv"] = (
        ["history_prime", "history", "re", "im"],
        [("-".join(map(str, a)), "-".join(map(str, b)), d.entries[i, j].real, d.entries[i, j].imag)
         for i, a in enumerate(d.labels) for j, b in enumerate(d.labels)])
    out.metrics.update(max_offdiag=rep.max_normalized, decoherent=rep.decoherent,
                       probabilities={"-".join(map(str, a)): pr for a, pr in zip(d.labels, d.probabilities)})
    dev = abs(rep.max_normalized - abs(ov))
    out.check("offdiag_matches_overlap", dev, f"<= {tol['overlap']:g}", dev <= tol["overlap"])
    out.check("hermitian", d.hermiticity_residual, f"<= {tol['hermiticity']:g}",
              d.hermiticity_residual <= tol["hermiticity"])
    if p["expect_decoherent"] is not None:
        out.check("decoherence_verdict", rep.decoherent, f"== {p['expect_decoherent']}",
                  rep.decoherent == p["expect_decoherent"])
    return out


# dust grain --------------------------------------------------------------------

def _prepare_dust(p):
    if not 0 <= p["overlap"] <= 1:
        raise ValueError("per-scatter overlap must lie in [0, 1]")
    if p["n_max"] < 0 or not 0 <= p["exact_max"] <= hi.DUST_EXACT_MAX:
        raise ValueError(f"need n_max >= 0 and 0 <= exact_max <= {hi.DUST_EXACT_MAX}")
    return None


def _run_dust(_, p, tol, ctx) -> Outcome:
    s = float(p["overlap"])
    rows = []
    worst_factored = worst_exact = 0.0
    for n in range(int(p["n_max"]) + 1):
        power = s ** n
        factored = hi.dust_grain_branch_overlap(n, s)
        exact = math.nan
        if n <= p["exact_max"]:
            exact = hi.check_decoherence(hi.decoherence_functional(hi.build_dust_grain(n, s))).max_normalized
            worst_exact = max(worst_exact, abs(exact - power))
        worst_factored = max(worst_factored, abs(factored - power))
        rows.append((n, factored, power, exact))
    out = Outcome()
    out.tables["dust_grain.csv"] = (["n_scatter", "factored_offdiag", "overlap_power", "exact_offdiag"], rows)
    out.metrics.update(max_factored_error=worst_factored, max_exact_error=worst_exact)
    out.check("factored_matches_power", worst_factored, f"<= {tol['factored']:g}", worst_factored <= tol["factored"])
    out.check("exact_matches_power", worst_exact, f"<= {tol['factored']:g}", worst_exact <= tol["factored"])
    return out


# oscillator --------------------------------------------------------------------

def _oscillator_objects(p):
    spec = gb.OscillatorBathSpec(p["mass"], p["frequency"], p["gamma"], p["temperature"], hbar=p["hbar"])
    g = gb.GaussianInitialState.minimum_uncertainty(p["x_mean"], p["p_mean"], p["sigma"], hbar=p["hbar"])
    return spec, g


def _prepare_oscillator(p):
    if p["mode"] not in ("sweep", "peaking", "functional"):
        raise ValueError("mode must be sweep, peaking or functional")
    spec, g = _oscillator_objects(p)
    grid = gb.CoarseGrainingGrid(p["interval_width"], tuple(p["times"]), int(p["n_bins"]), p["center"])
    if p["mode"] == "sweep" and not (p["delta_values"] or p["temperature_values"]):
        raise ValueError("a sweep needs delta_values or temperature_values")
    for key in ("delta_values", "temperature_values"):
        if p[key] is not None and (len(p[key]) < 2 or min(p[key]) <= 0):
            raise ValueError(f"{key} needs at least two positive values")
    return spec, g, grid


def _run_oscillator(prep, p, tol, ctx) -> Outcome:
    spec, g, grid = prep
    out = Outcome()
    if p["mode"] == "sweep":
        sweeps = []
        if p["delta_values"]:
            sweeps.append(("delta", -2.0, gb.decoherence_time_sweep(spec, g, "interval_width", p["delta_values"],
                                                                    mapper=ctx.map)))
        if p["temperature_values"]:
            sweeps.append(("temperature", -1.0, gb.decoherence_time_sweep(
                spec, g, "temperature", p["temperature_values"], interval_width=p["interval_width"], mapper=ctx.map)))
        worst = 0.0
        for label, target, sw in sweeps:
            col = "interval_width" if label == "delta" else "temperature"
            out.tables[f"{label}_sweep.csv"] = (
                [col, "measured_time", "predicted_time", "ratio"],
                [(v, m, pr, m / pr) for v, m, pr in zip(sw.values, sw.measured, sw.predicted)])
            out.metrics[f"{label}_slope"] = sw.slope
            out.metrics[f"{label}_max_ratio"] = sw.max_ratio
            worst = max(worst, sw.max_ratio)
            err = abs(sw.slope - target)
            out.check(f"{label}_slope", sw.slope, f"{target:g} +- {tol['slope']:g}", err <= tol["slope"])
        out.check("absolute_time", worst, f"<= factor {tol['absolute_factor']:g}", worst <= tol["absolute_factor"])
    elif p["mode"] == "peaking":
        cases = [("base", spec), ("temperature", spec.replace(temperature=spec.temperature * p["temperature_factor"])),
                 ("mass", spec.replace(mass=spec.mass * p["mass_factor"]))]
        reports = ctx.map(lambda c: gb.classical_peaking(c[1], grid, g, epsilon=p["epsilon"]), cases)
        rows = []
        for (label, _), rep in zip(cases, reports):
            for k, t in enumerate(grid.times):
                rows.append((label, k, t, rep.peak_index[k], rep.orbit_index[k], rep.peak_positions[k]))
        out.tables["peak_histories.csv"] = (["case", "slice", "time", "peak_bin", "orbit_bin", "bin_center"], rows)
        out.tables["widths.csv"] = (["case", "fitted_width", "predicted_width", "max_interference"],
                                    [(c[0], r.fitted_width, r.predicted_width, r.max_interference)
                                     for c, r in zip(cases, reports)])
        base = reports[0]
        t_ratio = reports[1].fitted_width / base.fitted_width
        m_ratio = reports[2].fitted_width / base.fitted_width
        t_target = math.sqrt(p["temperature_factor"])
        m_target = 1 / math.sqrt(p["mass_factor"])
        out.metrics.update(peak_index=base.peak_index, orbit_index=base.orbit_index,
                           max_interference=max(r.max_interference for r in reports),
                           temperature_width_ratio=t_ratio, mass_width_ratio=m_ratio)
        out.check("peak_matches_orbit", all(r.matches_orbit for r in reports), "all cases", all(r.matches_orbit for r in reports))
        out.check("peak_is_action_minimum", base.is_local_minimum, "true", base.is_local_minimum)
        out.check("temperature_width_scaling", t_ratio, f"{t_target:.6g} within {tol['width_scaling']:g}",
                  abs(t_ratio / t_target - 1) <= tol["width_scaling"])
        out.check("mass_width_scaling", m_ratio, f"{m_target:.6g} within {tol['width_scaling']:g}",
                  abs(m_ratio / m_target - 1) <= tol["width_scaling"])
    else:
        res = gb.oscillator_decoherence_functional(
            spec, grid, g, backend=p["backend"], full=p["full"], grid_points=int(p["grid_points"]),
            grid_span=tuple(p["grid_span"]) if p["grid_span"] else None, window=p["window"])
        out.tables["history_probabilities.csv"] = (
            [f"bin_t{k}" for k in range(grid.n_times)] + ["probability"],
            [tuple(int(b) for b in h) + (pr,) for h, pr in zip(res.histories, res.probabilities)])
        out.metrics.update(max_offdiag=res.max_offdiag, max_interference=res.max_interference,
                           pairs_checked=res.pairs_checked, captured_mass=res.captured_mass,
                           peak_index=res.peak_index, fitted_width=res.fitted_width,
                           decoherence_time=gb.decoherence_time(spec, grid.interval_width) if spec.gamma > 0 else math.inf)
        total = float(res.probabilities.sum())
        out.check("probabilities_normalized", abs(total - 1), f"<= {tol['normalization']:g}",
                  abs(total - 1) <= tol["normalization"])
        if p["expect_decoherent"] is not None:
            dec = res.decoherent(p["epsilon"])
            out.check("decoherence_verdict", dec, f"== {p['expect_decoherent']}", dec == p["expect_decoherent"])
    return out


# measurement -------------------------------------------------------------------

def _prepare_measure(p):
    etas = p["etas"]
    if len(etas) < 3 or etas[0] != 0 or any(b <= a for a, b in zip(etas, etas[1:])) or etas[-1] > 1:
        raise ValueError("etas must start at 0, increase strictly, stay <= 1 and have at least 3 entries")
    return me.qubit_two_measurement_model(p["theta"])


def _run_measure(model, p, tol, ctx) -> Outcome:
    sweep = me.disturbance_sweep(model, p["etas"])
    cop = me.copenhagen_probabilities(model)
    full = me.full_probabilities(model)
    out = Outcome()
    out.tables["disturbance_sweep.csv"] = (["eta", "max_deviation"], list(zip(sweep.etas, sweep.deviations)))
    out.tables["registration_probabilities.csv"] = (
        ["outcomes", "copenhagen", "closed_system"], [("-".join(map(str, k)), cop[k], full[k]) for k in cop])
    ideal = sweep.deviations[0]
    devs = np.array(sweep.deviations)
    grows = bool(np.all(np.diff(devs) > 0))
    out.metrics.update(ideal_deviation=ideal, deviation_exponent=sweep.exponent, deviation_constant=sweep.slope)
    out.check("ideal_equivalence", ideal, f"<= {tol['ideal']:g}", ideal <= tol["ideal"])
    out.check("disturbance_growth", grows, "strictly increasing in eta", grows)
    cont = math.isfinite(sweep.exponent) and sweep.exponent > 0
    out.check("disturbance_continuity", sweep.exponent, "power-law exponent > 0", cont)
    return out


# thermo ------------------------------------------------------------------------

def _prepare_thermo(p):
    if p["mode"] not in ("entropy", "continuity"):
        raise ValueError("mode must be entropy or continuity")
    if p["mode"] == "continuity":
        presets = th.lattice_presets()
        names = p["presets"] or sorted(presets)
        bad = [n for n in names if n not in presets]
        if bad:
            raise ValueError(f"unknown lattice preset(s): {', '.join(bad)}")
        return [(n, presets[n]()) for n in names]
    if p["n_samples"] < 2 or not p["horizon"] > 0:
        raise ValueError("need n_samples >= 2 and a positive horizon")
    return th.xxz_chain(int(p["n_sites"]), p["anisotropy"], p["coupling"], int(p["n_blocks"]), p["next_nearest"])


def _run_thermo(prep, p, tol, ctx) -> Outcome:
    out = Outcome()
    if p["mode"] == "continuity":
        rows = []
        worst = 0.0
        for name, model in prep:
            states = [("domain_wall", th.domain_wall(model)),
                      ("packet", th.single_excitation_packet(model, model.sites / 3, 1.0, 0.7))]
            for k in range(int(p["random_states"])):
                v = ctx.rng.standard_normal(model.dimension) + 1j * ctx.rng.standard_normal(model.dimension)
                states.append((f"random{k}", v / np.linalg.norm(v)))
            for label, psi in states:
                for b in range(len(model.blocks)):
                    rep = th.continuity_check(model, psi, b)
                    worst = max(worst, rep.residual)
                    rows.append((name, label, b, rep.dndt, rep.inflow, rep.residual))
        out.tables["continuity.csv"] = (["preset", "state", "block", "number_rate", "boundary_inflow", "residual"], rows)
        out.metrics["max_residual"] = worst
        out.check("continuity_residual", worst, f"<= {tol['continuity']:g}", worst <= tol["continuity"])
        return out
    model = prep
    psi = th.domain_wall(model)
    times = np.linspace(0.0, p["horizon"], int(p["n_samples"]))
    samples = [s for chunk in ctx.map(lambda t: th.entropy_history(model, psi, [t]), times) for s in chunk]
    st = QuantumState(psi)
    energy = float(st.expect(model.hamiltonian).real)
    number = float(st.expect(model.number).real)
    gibbs = th.matched_gibbs(model, energy, number).entropy
    plat = th.plateau(samples)
    s0 = samples[0].entropy
    gap = min(s.entropy - s.von_neumann for s in samples)
    out.tables["entropy.csv"] = (["time", "coarse_entropy", "von_neumann_entropy", "fit_residual"],
                                 [(s.time, s.entropy, s.von_neumann, s.residual) for s in samples])
    rel = abs(plat / gibbs - 1)
    out.metrics.update(initial_entropy=s0, plateau_entropy=plat, gibbs_entropy=gibbs, energy=energy, number=number,
                       plateau_relative_gap=rel, min_entropy_excess=gap)
    out.check("initial_entropy_minimal", s0, f"<= {tol['initial']:g}", s0 <= tol["initial"])
    out.check("plateau_matches_gibbs", rel, f"<= {tol['plateau']:g}", rel <= tol["plateau"])
    out.check("coarse_bounds_von_neumann", gap, f">= -{tol['second_law']:g}", gap >= -tol["second_law"])
    return out


# wkb ---------------------------------------------------------------------------

def _axis(spec_list) -> np.ndarray:
    lo, hi_, n = spec_list
    return np.linspace(float(lo), float(hi_), int(n), endpoint=False)


def _prepare_wkb(p):
    for key in ("free_grid", "harmonic_grid", "quartic_grid"):
        g = p[key]
        if len(g) != 3 or not g[1] > g[0] or int(g[2]) < 16:
            raise ValueError(f"{key} must be [min, max, points] with max > min and points >= 16")
    if len(p["quartic_sigmas"]) != 2:
        raise ValueError("quartic_sigmas must list the wide then the narrow width")
    horizon = 4 * math.pi if p["horizon"] is None else float(p["horizon"])
    x_f, x_h, x_q = _axis(p["free_grid"]), _axis(p["harmonic_grid"]), _axis(p["quartic_grid"])
    free = sc.gaussian_packet(x_f, 0.0, p["free_momentum"], p["free_sigma"])
    harm = sc.gaussian_packet(x_h, 0.0, p["harmonic_momentum"], p["harmonic_sigma"], potential=0.5 * x_h ** 2)
    quart = [sc.gaussian_packet(x_q, p["quartic_x0"], 0.0, s, hbar=p["quartic_hbar"]) for s in p["quartic_sigmas"]]
    return horizon, free, harm, quart


def _run_wkb(prep, p, tol, ctx) -> Outcome:
    horizon, free, harm, quart = prep
    conv = sc.determine_convention_sign()
    jobs = [
        lambda: sc.ensemble_fidelity(free, horizon, p["bin_width"], p["n_samples"], convention_sign=conv.winner),
        lambda: sc.ensemble_fidelity(harm, horizon, p["bin_width"], p["n_samples"], bin_origin=p["harmonic_bin_origin"],
                                     convention_sign=conv.winner),
        lambda: sc.ehrenfest_residual(free, sc.free_potential(), horizon, p["ehrenfest_samples"]),
        lambda: sc.ehrenfest_residual(harm, sc.harmonic_potential(), horizon, p["ehrenfest_samples"]),
    ] + [lambda q=q: sc.ehrenfest_residual(q, sc.quartic_potential(), p["quartic_horizon"], p["ehrenfest_samples"])
         for q in quart]
    fid_free, fid_harm, eh_free, eh_harm, eh_wide, eh_narrow = ctx.map(lambda f: f(), jobs)
    out = Outcome()
    out.tables["tv_free.csv"] = (["time", "total_variation"], list(zip(fid_free.times, fid_free.tv)))
    out.tables["tv_harmonic.csv"] = (["time", "total_variation"], list(zip(fid_harm.times, fid_harm.tv)))
    out.tables["quartic_substitution.csv"] = (
        ["sigma", "substitution_error", "identity_residual"],
        [(s, r.substitution_error, r.identity_residual) for s, r in zip(p["quartic_sigmas"], (eh_wide, eh_narrow))])
    identity = max(r.identity_residual for r in (eh_free, eh_harm, eh_wide, eh_narrow))
    ratio = eh_wide.substitution_error / eh_narrow.substitution_error if eh_narrow.substitution_error > 0 else math.inf
    out.metrics.update(convention_sign=conv.winner, convention_matches_alternative=conv.agrees_with_stated,
                       max_tv_free=fid_free.max_tv, max_tv_harmonic=fid_harm.max_tv,
                       max_validity=max(fid_free.max_validity, fid_harm.max_validity),
                       ehrenfest_identity_residual=identity, quartic_substitution_ratio=ratio)
    out.check("tv_free", fid_free.max_tv, f"<= {tol['tv']:g}", fid_free.max_tv <= tol["tv"])
    out.check("tv_harmonic", fid_harm.max_tv, f"<= {tol['tv']:g}", fid_harm.max_tv <= tol["tv"])
    out.check("ehrenfest_identity", identity, f"<= {tol['ehrenfest']:g}", identity <= tol["ehrenfest"])
    out.check("quartic_ratio", ratio, f">= {tol['quartic_ratio']:g}", ratio >= tol["quartic_ratio"])
    return out


# minisuperspace ----------------------------------------------------------------

def _prepare_minisuperspace(p):
    a, b = _axis(p["grid_a"]), _axis(p["grid_phi"])
    k = np.asarray(p["inverse_metric"], dtype=float)
    if k.shape != (2, 2):
        raise ValueError("inverse_metric must be a 2x2 matrix")
    aa, bb = np.meshgrid(a, b, indexing="ij")
    pa, pb = p["momenta"]
    v = np.exp(-(aa ** 2 + bb ** 2) / (4 * p["width"] ** 2)) * np.exp(1j * (pa * aa + pb * bb))
    norm = np.trapezoid(np.trapezoid(np.abs(v) ** 2, b, axis=1), a)
    psi = sc.GridWavefunction((a, b), v / np.sqrt(norm), (1.0, 1.0))
    return psi, k


def _run_minisuperspace(prep, p, tol, ctx) -> Outcome:
    psi, k = prep
    ens = sc.minisuperspace_ensemble(psi, k)
    times = sorted(float(t) for t in p["times"])
    qs = ens.propagate(times)
    velocity = k @ np.asarray(p["momenta"], dtype=float)
    rows, worst = [], 0.0
    for t, q in zip(times, qs):
        expected = ens.positions + t * velocity
        worst = max(worst, float(np.max(np.abs(q - expected))))
        mean = ens.mean_position(q)
        rows.append((t, mean[0], mean[1], *(ens.mean_position() + t * velocity)))
    mom_err = float(np.max(np.abs(ens.momenta - np.asarray(p["momenta"]))))
    out = Outcome()
    out.tables["minisuperspace_means.csv"] = (["time", "mean_a", "mean_phi", "expected_a", "expected_phi"], rows)
    out.metrics.update(members=ens.size, max_trajectory_error=worst, max_momentum_error=mom_err,
                       max_validity=ens.max_validity)
    out.check("momenta_from_phase", mom_err, f"<= {tol['momentum']:g}", mom_err <= tol["momentum"])
    out.check("straight_trajectories", worst, f"<= {tol['trajectory']:g}", worst <= tol["trajectory"])
    return out


EXPERIMENTS: dict[str, Experiment] = {
    "realm": Experiment(
        "randomized history sets: functional algebra and probability sum rules",
        {"n_random": 200, "n_commuting": 100, "max_dim": 16, "max_sets": 3, "partitions_per_set": 3, "epsilon": 1e-8},
        {"hermiticity": 1e-12, "normalization": 1e-10, "gram": 1e-12, "single_time": 1e-12, "sum_rule": 1e-6,
         "max_seconds": None},
        ("hermitian", "normalized", "single_time_decoherent", "pure_gram", "decoherent_sets_found", "sum_rules"),
        _prepare_realm, _run_realm),
    "twoslit": Experiment(
        "two-slit interference with a which-path record of given overlap",
        {"overlap_re": 0.0, "overlap_im": 0.0, "epsilon": 1e-8, "expect_decoherent": None},
        {"overlap": 1e-12, "hermiticity": 1e-12, "max_seconds": None},
        ("offdiag_matches_overlap", "hermitian", "decoherence_verdict"),
        _prepare_twoslit, _run_twoslit),
    "dustgrain": Experiment(
        "dust grain scattering N environment quanta: off-diagonal vs overlap^N",
        {"n_max": 20, "overlap": 0.9, "exact_max": 8},
        {"factored": 1e-12, "max_seconds": None},
        ("factored_matches_power", "exact_matches_power"),
        _prepare_dust, _run_dust),
    "oscillator": Experiment(
        "damped oscillator in a high-temperature bath: decoherence times and classical peaking",
        {"mode": "functional", "mass": 1.0, "frequency": 1.0, "gamma": 0.1, "temperature": 100.0, "hbar": 1.0,
         "x_mean": 0.0, "p_mean": 0.0, "sigma": 1.0, "interval_width": 1.0, "times": [1.0, 2.0, 3.0],
         "n_bins": 21, "center": 0.0, "backend": "gaussian", "window": None, "full": None, "grid_points": 121,
         "grid_span": None, "delta_values": None, "temperature_values": None, "epsilon": 1e-2,
         "temperature_factor": 2.0, "mass_factor": 4.0, "expect_decoherent": None},
        {"slope": 0.1, "absolute_factor": 2.0, "width_scaling": 0.15, "normalization": 1e-10, "max_seconds": None},
        ("delta_slope", "temperature_slope", "absolute_time", "peak_matches_orbit", "peak_is_action_minimum",
         "temperature_width_scaling", "mass_width_scaling", "probabilities_normalized", "decoherence_verdict"),
        _prepare_oscillator, _run_oscillator),
    "measure": Experiment(
        "ideal measurement model: registration probabilities vs closed-system histories",
        {"theta": 0.7, "etas": [0.0, 1e-4, 1e-3, 1e-2, 1e-1]},
        {"ideal": 1e-10, "max_seconds": None},
        ("ideal_equivalence", "disturbance_growth", "disturbance_continuity"),
        _prepare_measure, _run_measure),
    "thermo": Experiment(
        "spin-chain hydrodynamics: coarse-grained entropy growth and lattice continuity",
        {"mode": "entropy", "n_sites": 10, "anisotropy": 0.5, "coupling": 1.0, "n_blocks": 5, "next_nearest": 0.0,
         "horizon": 240.0, "n_samples": 49, "presets": None, "random_states": 3},
        {"initial": 1e-6, "plateau": 0.05, "second_law": 1e-9, "continuity": 1e-8, "max_seconds": None},
        ("initial_entropy_minimal", "plateau_matches_gibbs", "coarse_bounds_von_neumann", "continuity_residual"),
        _prepare_thermo, _run_thermo),
    "wkb": Experiment(
        "semiclassical packets: classical-ensemble fidelity and Ehrenfest checks",
        {"free_grid": [-100.0, 250.0, 8192], "free_sigma": 5.0, "free_momentum": 10.0,
         "harmonic_grid": [-40.0, 40.0, 2048], "harmonic_sigma": 3.0, "harmonic_momentum": 10.0,
         "harmonic_bin_origin": 0.5, "horizon": None, "bin_width": 1.0, "n_samples": 40,
         "quartic_grid": [-3.0, 3.0, 16384], "quartic_hbar": 1e-3, "quartic_x0": 1.0, "quartic_sigmas": [0.2, 0.05],
         "quartic_horizon": 0.1, "ehrenfest_samples": 20},
        {"tv": 0.05, "ehrenfest": 1e-6, "quartic_ratio": 10.0, "max_seconds": None},
        ("tv_free", "tv_harmonic", "ehrenfest_identity", "quartic_ratio"),
        _prepare_wkb, _run_wkb),
    "minisuperspace": Experiment(
        "two-variable WKB ensemble with an indefinite kinetic metric",
        {"grid_a": [-4.0, 4.0, 240], "grid_phi": [-3.0, 3.0, 200], "momenta": [14.0, -10.0], "width": 1.0,
         "inverse_metric": [[-1.0, 0.0], [0.0, 1.0]], "times": [0.5, 1.0]},
        {"momentum": 1e-8, "trajectory": 1e-8, "max_seconds": None},
        ("momenta_from_phase", "straight_trajectories"),
        _prepare_minisuperspace, _run_minisuperspace),
}
for _exp in EXPERIMENTS.values():
    _exp.check_names = _exp.check_names + ("runtime",)


# ----------------------------------------------------------------------------
# presets
# ----------------------------------------------------------------------------

PRESETS: dict[str, dict] = {
    "AC1": {"experiment": "realm", "name": "AC1", "seed": 1, "tolerances": {"max_seconds": 60},
            "assertions": ["hermitian", "normalized", "single_time_decoherent", "pure_gram", "runtime"]},
    "AC2": {"experiment": "realm", "name": "AC2", "seed": 2, "tolerances": {"max_seconds": 60},
            "assertions": ["decoherent_sets_found", "sum_rules", "runtime"]},
    "AC3": {"experiment": "oscillator", "name": "AC3",
            "params": {"mode": "sweep", "frequency": 0.0, "gamma": 1e-6, "temperature": 100.0, "sigma": 30.0,
                       "interval_width": 1.0, "delta_values": [float(v) for v in np.geomspace(0.3, 3.0, 5)],
                       "temperature_values": [float(v) for v in np.geomspace(100.0, 1000.0, 5)]},
            "tolerances": {"max_seconds": 600}},
    "AC4": {"experiment": "oscillator", "name": "AC4",
            "params": {"mode": "peaking", "mass": 1.0, "frequency": 1.0, "gamma": 0.1, "temperature": 4.0,
                       "hbar": 1e-4, "x_mean": 4.0, "p_mean": 0.0, "sigma": 0.1, "interval_width": 1.0,
                       "times": [1.0, 2.0, 3.0], "n_bins": 21},
            "tolerances": {"max_seconds": 600},
            "assertions": ["peak_matches_orbit", "peak_is_action_minimum", "temperature_width_scaling",
                           "mass_width_scaling", "runtime"]},
    "AC5": {"experiment": "measure", "name": "AC5", "tolerances": {"max_seconds": 60}},
    "AC6": {"experiment": "thermo", "name": "AC6", "tolerances": {"max_seconds": 900},
            "assertions": ["initial_entropy_minimal", "plateau_matches_gibbs", "coarse_bounds_von_neumann", "runtime"]},
    "AC7": {"experiment": "thermo", "name": "AC7", "seed": 7, "params": {"mode": "continuity"},
            "tolerances": {"max_seconds": 60}, "assertions": ["continuity_residual", "runtime"]},
    "AC8": {"experiment": "wkb", "name": "AC8", "tolerances": {"max_seconds": 300}},
    "AC9": {"experiment": "dustgrain", "name": "AC9", "params": {"n_max": 20, "overlap": 0.9, "exact_max": 8},
            "tolerances": {"max_seconds": 1.0}, "assertions": ["factored_matches_power", "runtime"]},
    "twoslit": {"experiment": "twoslit", "name": "twoslit", "params": {"overlap_re": 0.0, "expect_decoherent": True}},
    "twoslit-coherent": {"experiment": "twoslit", "name": "twoslit-coherent",
                         "params": {"overlap_re": 1.0, "expect_decoherent": False}},
    "dustgrain": {"experiment": "dustgrain", "name": "dustgrain"},
    "oscillator-functional": {
        "experiment": "oscillator", "name": "oscillator-functional",
        "params": {"mode": "functional", "mass": 1.0, "frequency": 1.0, "gamma": 0.002, "temperature": 250.0,
                   "x_mean": 0.3, "p_mean": 0.4, "sigma": 1.0, "interval_width": 1.0, "times": [0.5, 1.0],
                   "n_bins": 5, "full": True}},
    "oscillator-grid": {
        "experiment": "oscillator", "name": "oscillator-grid",
        "params": {"mode": "functional", "mass": 1.0, "frequency": 1.0, "gamma": 0.01, "temperature": 1000.0,
                   "interval_width": 1.0, "times": [0.5, 1.0], "n_bins": 5, "backend": "grid",
                   "grid_span": [-6.0, 6.0]}},
    "minisuperspace": {"experiment": "minisuperspace", "name": "minisuperspace"},
}
PRESET_DESCRIPTIONS = {
    "AC1": "decoherence functional algebra on 200 randomized history sets",
    "AC2": "probability sum rules on decoherent randomized sets",
    "AC3": "decoherence-time scaling with bin width and bath temperature",
    "AC4": "classical peaking of the damped oscillator and width scalings",
    "AC5": "ideal measurement: registration probabilities equal history probabilities",
    "AC6": "coarse-grained entropy growth in the XXZ chain",
    "AC7": "lattice continuity equation on all chain presets",
    "AC8": "WKB ensemble fidelity, Ehrenfest identity and quartic substitution error",
    "AC9": "dust-grain record scaling up to 20 scatterings",
    "twoslit": "two-slit with orthogonal which-path records (decoherent)",
    "twoslit-coherent": "two-slit with identical records (interference survives)",
    "dustgrain": "dust-grain off-diagonals against overlap^N, exact and factored",
    "oscillator-functional": "full decoherence functional of the bath-coupled oscillator (Gaussian windows)",
    "oscillator-grid": "sharp-bin decoherence functional on a position grid under strong coupling",
    "minisuperspace": "straight classical trajectories from a separable two-variable phase",
}


# ----------------------------------------------------------------------------
# driver
# ----------------------------------------------------------------------------

def _classify(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (np.linalg.LinAlgError, ArithmeticError, RuntimeError)):
        return EXIT_NUMERICAL
    if isinstance(exc, ValueError):
        return EXIT_PRECONDITION
    return EXIT_NUMERICAL


def execute(cfg: ExperimentConfig, output: Optional[str] = None, threads: int = 1) -> tuple[int, dict]:
    """Validate, run and write outputs. Returns (exit status, summary)."""
    exp = EXPERIMENTS[cfg.experiment]
    try:
        prepared = exp.prepare(cfg.params)
    except Exception as exc:  # noqa: BLE001 - mapped to an exit code
        return _classify(exc), {"error": f"{type(exc).__name__}: {exc}", "stage": "precondition"}
    out_dir = Path(output or cfg.output or os.path.join("qcrealm-output", cfg.name))
    ctx = _Context(cfg.seed, threads)
    start = time.perf_counter()
    error = None
    try:
        outcome = exp.run(prepared, cfg.params, cfg.tolerances, ctx)
    except Exception as exc:  # noqa: BLE001 - mapped to an exit code
        error = exc
        outcome = Outcome()
    finally:
        ctx.close()
    elapsed = time.perf_counter() - start
    if error is None:
        limit = _runtime_limit(cfg.tolerances)
        if limit is not None:
            outcome.check("runtime", elapsed, f"<= {limit:g} s", elapsed <= limit)
    wanted = set(cfg.assertions) if cfg.assertions is not None else None
    asserted = [c for c in outcome.checks if wanted is None or c.name in wanted]
    if wanted is not None:
        missing = sorted(wanted - {c.name for c in outcome.checks})
        if missing and error is None:
            asserted += [Check(m, None, "not evaluated in this mode", False) for m in missing]
    if error is not None:
        status = _classify(error)
    else:
        status = EXIT_OK if all(c.passed for c in asserted) else EXIT_ASSERTION

    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    for fname, (header, rows) in sorted(outcome.tables.items()):
        path = out_dir / fname
        path.write_text(format_table(header, rows))
        manifest.append({"file": fname, "sha256": _sha256(path), "bytes": path.stat().st_size})
    summary = {
        "qcrealm_version": __version__,
        "config": cfg.echo(),
        "metrics": outcome.metrics,
        "assertions": [{"name": c.name, "value": c.value, "limit": c.limit, "passed": c.passed} for c in asserted],
        "informational_checks": [{"name": c.name, "value": c.value, "limit": c.limit, "passed": c.passed}
                                 for c in outcome.checks if c not in asserted],
        "all_passed": status == EXIT_OK,
        "exit_status": status,
        "error": None if error is None else f"{type(error).__name__}: {error}",
        "threads": threads,
        "wall_clock_seconds": elapsed,
        "manifest": manifest,
    }
    (out_dir / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    return status, summary


def preset_config(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; see 'qcrealm list-presets'")
    return parse_config(copy.deepcopy(PRESETS[name]))


def _print_summary(summary: dict, stream) -> None:
    if "assertions" not in summary:
        print(f"error ({summary.get('stage')}): {summary.get('error')}", file=stream)
        return
    for a in summary["assertions"]:
        print(f"{'PASS' if a['passed'] else 'FAIL'} {a['name']}: {a['value']} ({a['limit']})", file=stream)
    if summary.get("error"):
        print(f"error: {summary['error']}", file=stream)
    print(f"exit status {summary['exit_status']}", file=stream)


def main(argv: Optional[list] = None) -> int:
    parser = argparse.ArgumentParser(prog="qcrealm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run one experiment from a JSON config")
    run_p.add_argument("config", nargs="?", help="path to a JSON config file")
    run_p.add_argument("--preset", help="run a built-in preset instead of a config file")
    run_p.add_argument("--output", help="output directory (overrides the config)")
    run_p.add_argument("--quiet", action="store_true")
    lp = sub.add_parser("list-presets", help="list built-in configurations")
    lp.add_argument("--json", action="store_true", help="print the full preset configs as JSON")
    sub.add_parser("version", help="print the package version")
    args = parser.parse_args(argv)

    if args.command == "version":
        print(__version__)
        return EXIT_OK
    if args.command == "list-presets":
        if args.json:
            print(json.dumps(PRESETS, indent=2, sort_keys=True))
        else:
            print("name,experiment,description")
            for name, cfg in PRESETS.items():
                print(f"{name},{cfg['experiment']},{PRESET_DESCRIPTIONS[name]}")
        return EXIT_OK

    try:
        if (args.config is None) == (args.preset is None):
            raise ConfigError("give exactly one of a config path or --preset")
        cfg = preset_config(args.preset) if args.preset else load_config(args.config)
        threads = thread_count()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status, summary = execute(cfg, args.output, threads)
    if not args.quiet:
        _print_summary(summary, sys.stdout if status == EXIT_OK else sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
