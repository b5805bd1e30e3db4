"""Scenario sampling, Monte Carlo sweeps, beam patterns and result emission."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ._validation import dbm_to_watts
from .geometry import ArrayGeometry, SphericalLocation, array_responses
from .power import QosInfeasibleError, SicOrderWarning, allocate, noma_rates
from .rates import (allocate_fdma, allocate_tdma, baseline_fdma, baseline_tdma, baseline_zf,
                    gain_table, sinr_table, sic_feasible)
from .scenario import UserGroup, UserScenario
from .splitting import BeamSplittingDesigner
from .steering import BeamSteeringDesigner, build_codebook

log = logging.getLogger(__name__)

__all__ = [
    "ScenarioConfig",
    "SweepResult",
    "DistanceErrorModel",
    "SCHEMES",
    "trial_seed",
    "sample_scenario",
    "pattern_grid",
    "local_maxima",
    "run_convergence",
    "run_trial",
    "run_sweep",
    "emit",
    "run_id",
]

SCHEMES = ("steering", "splitting", "fdma", "tdma", "farfield", "zf")
VARIABLES = ("pmax", "distance", "disterr")


@dataclass
class ScenarioConfig:
    """Everything needed to reproduce a sweep.  Powers in dBm, lengths in meters."""

    m_v: int = 16
    m_h: int = 16
    carrier_hz: float = 28e9
    n_groups: int = 2
    nu_radius: float = 10.0
    fu_radius: float = 15.0
    qos: float = 1.0
    p_max_dbm: float = 20.0
    noise_dbm: float = -75.0
    target_strength: float = 1e3
    interference_cap: float = 1e-2
    codebook_shape: tuple = (9, 9, 16)
    r_max: float = 20.0
    rho0: float = 1.0
    penalty_divisor: float = 1.1
    tol_inner: float = 1e-2
    tol_outer: float = 1e-2
    max_inner: int = 50
    max_outer: int = 400
    tol_power: float = 1e-6
    tol_sca: float = 1e-2
    tol_ao: float = 1e-2
    same_direction: bool = True
    primary: str = "steering"
    rate_model: str = "simplified"
    error_target: str = "near"
    nu_range_band: tuple = (8.0, 12.0)
    fu_range_band: tuple = (13.0, 17.0)
    trials: int = 20
    seed: int = 0

    def __post_init__(self):
        self.codebook_shape = tuple(int(q) for q in self.codebook_shape)
        self.nu_range_band = tuple(float(x) for x in self.nu_range_band)
        self.fu_range_band = tuple(float(x) for x in self.fu_range_band)
        if not (0 < self.nu_radius < self.fu_radius):
            raise ValueError("need 0 < NU radius < FU radius")
        if self.trials < 1:
            raise ValueError("trial count must be at least 1")
        if self.primary not in ("steering", "splitting"):
            raise ValueError("primary scheme must be 'steering' or 'splitting'")
        if self.rate_model not in ("simplified", "full"):
            raise ValueError("rate_model must be 'simplified' or 'full'")
        if self.error_target not in ("near", "far", "both"):
            raise ValueError("error_target must be 'near', 'far' or 'both'")

    @property
    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry(self.m_v, self.m_h, self.carrier_hz)

    @property
    def noise_w(self) -> float:
        return float(dbm_to_watts(self.noise_dbm))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["codebook_shape"] = list(self.codebook_shape)
        d["nu_range_band"] = list(self.nu_range_band)
        d["fu_range_band"] = list(self.fu_range_band)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def steering_designer(self, far_field: bool = False) -> BeamSteeringDesigner:
        return BeamSteeringDesigner(self.target_strength, self.codebook_shape, self.r_max,
                                    self.interference_cap, self.rho0, self.penalty_divisor,
                                    self.tol_inner, self.tol_outer, self.max_inner, self.max_outer,
                                    far_field=far_field)

    def splitting_designer(self) -> BeamSplittingDesigner:
        return BeamSplittingDesigner(self.interference_cap, self.tol_sca, self.tol_ao)


@dataclass
class DistanceErrorModel:
    """Range estimation errors ``d_est - d_true`` for the NUs and FUs of every group."""

    true_near: np.ndarray
    true_far: np.ndarray
    est_near: np.ndarray
    est_far: np.ndarray

    @property
    def errors(self) -> np.ndarray:
        return np.concatenate([self.est_near - self.true_near, self.est_far - self.true_far])

    @property
    def mean_error(self) -> float:
        """Average error over all ``2K`` users."""
        return float(np.mean(self.errors))

    @classmethod
    def with_mean_error(cls, true_near, true_far, mean_error: float, target: str = "near"):
        """Shift the targeted users' ranges equally so the ``2K``-user mean equals ``mean_error``."""
        true_near = np.asarray(true_near, float)
        true_far = np.asarray(true_far, float)
        k = true_near.size
        n_target = {"near": k, "far": k, "both": 2 * k}[target]
        shift = mean_error * 2 * k / n_target
        est_near = true_near + (shift if target in ("near", "both") else 0.0)
        est_far = true_far + (shift if target in ("far", "both") else 0.0)
        return cls(true_near, true_far, est_near, est_far)


@dataclass
class SweepResult:
    """One record per (scheme, trial, grid point), in deterministic order."""

    config: ScenarioConfig
    variable: str
    grid: np.ndarray
    schemes: tuple
    records: list = field(default_factory=list)
    traces: dict = field(default_factory=dict)

    def mean_sum_rate(self, scheme: str) -> np.ndarray:
        """Mean over feasible trials at every grid point (NaN where none is feasible)."""
        out = np.full(len(self.grid), np.nan)
        for j, x in enumerate(self.grid):
            vals = [r["sum_rate"] for r in self.records
                    if r["scheme"] == scheme and r["x_index"] == j and r["feasible"]]
            if vals:
                out[j] = float(np.mean(vals))
        return out

    def feasible_counts(self, scheme: str) -> np.ndarray:
        return np.array([sum(1 for r in self.records if r["scheme"] == scheme and r["x_index"] == j
                             and r["feasible"]) for j in range(len(self.grid))])

    def paired(self, scheme: str) -> np.ndarray:
        """Sum rates as a ``(trials, grid)`` array with NaN for infeasible trials."""
        out = np.full((self.config.trials, len(self.grid)), np.nan)
        for r in self.records:
            if r["scheme"] == scheme and r["feasible"]:
                out[r["trial"], r["x_index"]] = r["sum_rate"]
        return out


def trial_seed(master_seed: int, trial: int) -> int:
    """Independent 63-bit seed for ``trial`` derived from the master seed."""
    ss = np.random.SeedSequence(int(master_seed)).spawn(trial + 1)[trial]
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def sample_scenario(config: ScenarioConfig, seed, *, nu_radius=None, fu_radius=None) -> UserScenario:
    """Users on two rings; angles uniform on ``[-pi/2, pi/2]^2``.

    With ``config.same_direction`` each FU takes its partner's angles.
    """
    rng = np.random.default_rng(seed)
    k = config.n_groups
    r_n = config.nu_radius if nu_radius is None else nu_radius
    r_f = config.fu_radius if fu_radius is None else fu_radius
    ang_n = rng.uniform(-np.pi / 2, np.pi / 2, size=(k, 2))
    ang_f = ang_n.copy() if config.same_direction else rng.uniform(-np.pi / 2, np.pi / 2, size=(k, 2))
    r_n = np.broadcast_to(np.asarray(r_n, float), (k,))
    r_f = np.broadcast_to(np.asarray(r_f, float), (k,))
    groups = [UserGroup(SphericalLocation(ang_n[i, 0], ang_n[i, 1], r_n[i]),
                        SphericalLocation(ang_f[i, 0], ang_f[i, 1], r_f[i])) for i in range(k)]
    return UserScenario(config.geometry, groups, config.qos, config.qos)


def pattern_grid(beam: np.ndarray, geom: ArrayGeometry, azimuths, ranges, elevation=np.pi / 2,
                 *, slice_: str = "azimuth-range", azimuth: float = 0.0) -> np.ndarray:
    """Normalised beamforming gain ``|a^H u|^2 / max`` over a 2-D slice.

    For ``'azimuth-range'`` rows follow ``azimuths`` at fixed ``elevation``;
    for ``'elevation-range'`` the first argument lists elevations at fixed
    ``azimuth``.  Columns follow ``ranges``.
    """
    angles = np.asarray(azimuths, float)[:, None]
    r = np.asarray(ranges, float)[None, :]
    if slice_ == "azimuth-range":
        resp = array_responses(geom, angles, elevation, r)
    elif slice_ == "elevation-range":
        resp = array_responses(geom, azimuth, angles, r)
    else:
        raise ValueError(f"unknown slice {slice_!r}")
    gain = np.abs(resp.conj() @ np.asarray(beam, complex)) ** 2
    return gain / gain.max()


def local_maxima(grid: np.ndarray, *, interior: bool = True) -> list[tuple[int, int]]:
    """Local maxima over the 8-neighbourhood (ties allowed), strongest first.

    With ``interior`` the outermost rows and columns are skipped: a peak on
    the edge of the slice is usually a lobe that keeps rising outside it.
    """
    padded = np.pad(grid, 1, constant_values=-np.inf)
    core = padded[1:-1, 1:-1]
    is_max = np.ones_like(grid, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                is_max &= core >= padded[1 + di:1 + di + grid.shape[0], 1 + dj:1 + dj + grid.shape[1]]
    if interior:
        is_max[[0, -1], :] = False
        is_max[:, [0, -1]] = False
    idx = np.argwhere(is_max)
    order = np.argsort(-grid[is_max], kind="stable")
    return [tuple(int(x) for x in idx[o]) for o in order]


def run_convergence(config: ScenarioConfig, seed=None) -> dict:
    """Convergence traces of both designs on one sampled instance."""
    seed = trial_seed(config.seed, 0) if seed is None else seed
    steer = config.steering_designer().fit(sample_scenario(replace(config, same_direction=True), seed))
    split = config.splitting_designer().fit(sample_scenario(replace(config, same_direction=False), seed))
    return {
        "steering_objective": steer.trace_.objective.tolist(),
        "steering_penalty": list(steer.trace_.penalty),
        "splitting_rounds": list(split.trace_.rounds),
        "splitting_sca": [s.tolist() for s in split.trace_.sca],
    }


# ------------------------------------------------------------- evaluation

def _noma_rates(gt, config, p_max, noise):
    gains = gt.group_gains(config.qos, config.qos, noise)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SicOrderWarning)
        alloc = allocate(gains, p_max, config.tol_power)
    if config.rate_model == "simplified":
        return noma_rates(gains, alloc.p1, alloc.p2), True
    budget = sinr_table(gt, alloc.p1, alloc.p2, noise)
    ok = (np.all(budget.rate_n >= config.qos * (1 - 1e-9)) and np.all(budget.rate_f >= config.qos * (1 - 1e-9))
          and np.all(sic_feasible(budget)))
    return (budget.rate_n, budget.rate_f), bool(ok)


def _scheme_rates(scheme, tables, config, p_max):
    noise = config.noise_w
    try:
        if scheme in ("steering", "splitting", "farfield", "zf"):
            (r_n, r_f), ok = _noma_rates(tables[scheme], config, p_max, noise)
        elif scheme == "fdma":
            gains = tables[config.primary].group_gains(config.qos, config.qos, noise)
            rates = baseline_fdma(gains, allocate_fdma(gains, p_max))
            r_n, r_f, ok = rates[:, 0], rates[:, 1], True
        elif scheme == "tdma":
            gains = tables[config.primary].group_gains(config.qos, config.qos, noise)
            rates = baseline_tdma(gains, allocate_tdma(gains, p_max))
            r_n, r_f, ok = rates[:, 0], rates[:, 1], True
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
    except QosInfeasibleError:
        k = config.n_groups
        return np.full(k, np.nan), np.full(k, np.nan), False
    return np.asarray(r_n, float), np.asarray(r_f, float), ok


def _design_tables(scenario_design, scenario_eval, schemes, config, codebooks):
    """Design every requested beam on ``scenario_design``, evaluate gains on ``scenario_eval``."""
    need = set(schemes)
    if need & {"fdma", "tdma"}:
        need.add(config.primary)
    h_n, h_f = scenario_eval.channels("near"), scenario_eval.channels("far")
    tables, traces = {}, {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if "steering" in need:
            d = config.steering_designer().fit(scenario_design, codebook=codebooks.get("near"))
            tables["steering"] = gain_table(h_n, h_f, d.beamformer_)
            traces["steering"] = d.trace_.objective.tolist()
        if "farfield" in need:
            d = config.steering_designer(far_field=True).fit(scenario_design, codebook=codebooks.get("far"))
            tables["farfield"] = gain_table(h_n, h_f, d.beamformer_)
        if "splitting" in need:
            d = config.splitting_designer().fit(scenario_design)
            tables["splitting"] = gain_table(h_n, h_f, d.beamformer_)
            traces["splitting"] = list(d.trace_.rounds)
        if "zf" in need:
            tables["zf"] = gain_table(h_n, h_f, baseline_zf(scenario_design.channels("near")))
    return tables, traces


def _design_view(scenario: UserScenario, est_near, est_far, ranges=None) -> UserScenario:
    # the designer sees estimated ranges; keep NU nearer than FU and, when the
    # band misses every codebook range sample, stretch it to the closest one
    groups = []
    for g, rn, rf in zip(scenario.groups, est_near, est_far):
        lo, hi = sorted((max(rn, 1e-3), max(rf, 1e-3)))
        if hi - lo < 1e-6:
            hi = lo + 1e-6
        if ranges is not None and not np.any((ranges >= lo) & (ranges <= hi)):
            near = ranges[np.argmin(np.abs(ranges - 0.5 * (lo + hi)))]
            lo, hi = min(lo, near), max(hi, near)
        groups.append(UserGroup(g.near.with_range(lo), g.far.with_range(hi)))
    return UserScenario(scenario.geometry, groups, scenario.qos_n, scenario.qos_f)


def _record(scheme, trial, seed, variable, j, x, r_n, r_f, ok):
    return {"scheme": scheme, "trial": trial, "seed": seed, "x_var": variable, "x_index": j,
            "x_value": float(x), "sum_rate": float(np.sum(r_n) + np.sum(r_f)) if ok else float("nan"),
            "rate_nu": [float(v) for v in r_n], "rate_fu": [float(v) for v in r_f], "feasible": bool(ok)}


_CODEBOOKS: dict = {}


def _codebooks(config, schemes):
    key = (config.m_v, config.m_h, config.carrier_hz, config.codebook_shape, config.r_max)
    if key not in _CODEBOOKS:
        _CODEBOOKS.clear()
        _CODEBOOKS[key] = {}
    books = _CODEBOOKS[key]
    geom = config.geometry
    if ("steering" in schemes or {"fdma", "tdma"} & set(schemes)) and "near" not in books:
        books["near"] = build_codebook(geom, *config.codebook_shape, config.r_max)
    if "farfield" in schemes and "far" not in books:
        books["far"] = build_codebook(geom, *config.codebook_shape, config.r_max, far_field=True)
    return books


def run_trial(config: ScenarioConfig, variable: str, grid, schemes, trial: int):
    """All records of one Monte Carlo trial across the grid."""
    seed = trial_seed(config.seed, trial)
    books = _codebooks(config, schemes)
    grid = np.asarray(grid, float)
    records, traces = [], {}
    if variable == "pmax":
        sc = sample_scenario(config, seed)
        tables, traces = _design_tables(sc, sc, schemes, config, books)
        for j, x in enumerate(grid):
            p_max = float(dbm_to_watts(x))
            for s in schemes:
                records.append(_record(s, trial, seed, variable, j, x, *_scheme_rates(s, tables, config, p_max)))
    elif variable == "distance":
        p_max = float(dbm_to_watts(config.p_max_dbm))
        gap = config.fu_radius - config.nu_radius
        for j, x in enumerate(grid):
            r_n = x - gap / 2
            if r_n <= 0:
                raise ValueError(f"average distance {x} m leaves no room for a {gap} m NU-FU gap")
            sc = sample_scenario(config, seed, nu_radius=r_n, fu_radius=r_n + gap)
            tables, tr = _design_tables(sc, sc, schemes, config, books)
            traces.setdefault("steering", []).append(tr.get("steering"))
            for s in schemes:
                records.append(_record(s, trial, seed, variable, j, x, *_scheme_rates(s, tables, config, p_max)))
    elif variable == "disterr":
        p_max = float(dbm_to_watts(config.p_max_dbm))
        rng = np.random.default_rng(seed)
        k = config.n_groups
        true_n = rng.uniform(*config.nu_range_band, size=k)
        true_f = rng.uniform(*config.fu_range_band, size=k)
        sc = sample_scenario(config, rng.integers(2**63), nu_radius=true_n, fu_radius=true_f)
        for j, x in enumerate(grid):
            model = DistanceErrorModel.with_mean_error(true_n, true_f, x, config.error_target)
            design = _design_view(sc, model.est_near, model.est_far, books['near'].ranges if 'near' in books else None)
            tables, _ = _design_tables(design, sc, schemes, config, books)
            for s in schemes:
                records.append(_record(s, trial, seed, variable, j, x, *_scheme_rates(s, tables, config, p_max)))
    else:
        raise ValueError(f"unknown sweep variable {variable!r}; choose from {VARIABLES}")
    return records, traces


def _worker_count():
    env = os.environ.get("NFNOMA_THREADS")
    n = os.cpu_count() or 1
    if env:
        n = min(n, max(1, int(env)))
    return n


def _trial_job(args):
    return run_trial(*args)


def run_sweep(config: ScenarioConfig, variable: str, grid, schemes=("steering", "fdma", "tdma", "farfield", "zf"),
              workers: int | None = None) -> SweepResult:
    """Monte Carlo sweep of ``variable`` over ``grid`` for every scheme.

    Trials are independent (own seed) and may run in a process pool capped
    by ``NFNOMA_THREADS``; records are merged in trial order either way.
    """
    schemes = tuple(schemes)
    bad = set(schemes) - set(SCHEMES)
    if bad:
        raise ValueError(f"unknown schemes {sorted(bad)}")
    if variable not in VARIABLES:
        raise ValueError(f"unknown sweep variable {variable!r}; choose from {VARIABLES}")
    grid = np.asarray(grid, float)
    workers = workers or _worker_count()
    jobs = [(config, variable, grid, schemes, t) for t in range(config.trials)]
    if workers > 1 and config.trials > 1:
        with ProcessPoolExecutor(max_workers=min(workers, config.trials)) as pool:
            outputs = list(pool.map(_trial_job, jobs))
    else:
        outputs = [_trial_job(j) for j in jobs]
    result = SweepResult(config, variable, grid, schemes)
    for t, (recs, traces) in enumerate(outputs):
        result.records.extend(recs)
        result.traces[t] = traces
    order = {s: i for i, s in enumerate(schemes)}
    result.records.sort(key=lambda r: (order[r["scheme"]], r["trial"], r["x_index"]))
    return result


# ---------------------------------------------------------------- emission

def _fmt(x: float) -> str:
    return "nan" if not np.isfinite(x) else f"{x:.8e}"


def csv_text(result: SweepResult) -> str:
    """CSV body: one row per (scheme, trial, grid point), 9 significant digits."""
    k = result.config.n_groups
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["scheme", "trial", "seed", "x_var", "x_value", "sum_rate"]
                    + [f"rate_nu_{i + 1}" for i in range(k)] + [f"rate_fu_{i + 1}" for i in range(k)]
                    + ["feasible"])
    for r in result.records:
        rn = r["rate_nu"] if r["feasible"] else [float("nan")] * k
        rf = r["rate_fu"] if r["feasible"] else [float("nan")] * k
        writer.writerow([r["scheme"], r["trial"], r["seed"], r["x_var"], _fmt(r["x_value"]),
                         _fmt(r["sum_rate"])] + [_fmt(v) for v in rn] + [_fmt(v) for v in rf]
                        + [int(r["feasible"])])
    return buf.getvalue()


def run_id(payload: dict) -> str:
    """Content hash of a JSON-serialisable payload, shortened like a git object id."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha1(blob).hexdigest()[:12]


def summary(result: SweepResult) -> dict:
    cfg = result.config.to_dict()
    out = {
        "run_id": run_id({"config": cfg, "variable": result.variable, "grid": result.grid.tolist(),
                          "schemes": list(result.schemes)}),
        "config": cfg,
        "variable": result.variable,
        "grid": result.grid.tolist(),
        "seeds": [trial_seed(result.config.seed, t) for t in range(result.config.trials)],
        "schemes": {s: {"mean_sum_rate": [None if not np.isfinite(v) else float(v)
                                          for v in result.mean_sum_rate(s)],
                        "feasible_trials": result.feasible_counts(s).tolist()}
                    for s in result.schemes},
    }
    if result.variable == "distance":
        out["x_note"] = "x_value is the average user distance, NU radius + half the NU-FU gap"
    if result.variable == "disterr":
        out["x_note"] = ("x_value is the mean range error over all 2K users; "
                         f"errors applied to the {result.config.error_target} users")
    return out


def emit(result: SweepResult, out_dir: str, stem: str = "sweep") -> dict:
    """Write ``<stem>.csv`` and ``<stem>_summary.json`` into ``out_dir``; return the summary."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"{stem}.csv"), "w", newline="") as fh:
        fh.write(csv_text(result))
    info = summary(result)
    with open(os.path.join(out_dir, f"{stem}_summary.json"), "w") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return info
