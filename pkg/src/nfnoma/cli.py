"""Command-line entry point: ``nfnoma {pattern,design,allocate,sweep}``.

Units at the boundary are dBm, degrees and meters.  Every run writes one
``manifest.json`` next to its outputs; passing that manifest back through
``--config`` replays the run with identical CSV output.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import re
import sys
from dataclasses import replace
from datetime import datetime, timezone

import numpy as np

from . import __version__
from ._validation import dbm_to_watts
from .experiments import (SCHEMES, ScenarioConfig, emit, local_maxima, pattern_grid, run_sweep,
                          sample_scenario, trial_seed)
from .geometry import SphericalLocation
from .power import GroupGains, QosInfeasibleError, allocate, noma_rates
from .scenario import UserGroup, UserScenario

log = logging.getLogger("nfnoma")

MANIFEST = "manifest.json"

# flag -> ScenarioConfig field
_CONFIG_FLAGS = {
    "groups": "n_groups", "t": "target_strength", "eps": "interference_cap", "rho0": "rho0",
    "cbar": "penalty_divisor", "tol1": "tol_inner", "tol2": "tol_outer", "tol3": "tol_power",
    "tol4": "tol_sca", "tol5": "tol_ao", "seed": "seed", "trials": "trials",
    "pmax_dbm": "p_max_dbm", "noise_dbm": "noise_dbm", "rqos": "qos", "nu_radius": "nu_radius",
    "fu_radius": "fu_radius", "rate_model": "rate_model",
    "error_target": "error_target", "r_max": "r_max", "max_outer": "max_outer",
}


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ parsing

def _pair(text: str, sep: str = "x") -> tuple[int, int]:
    try:
        a, b = text.lower().split(sep)
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected AxB, got {text!r}") from None


def _location(text: str) -> tuple[float, float, float]:
    try:
        az, el, r = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected AZ_DEG,EL_DEG,RANGE_M, got {text!r}") from None
    return az, el, r


def _range_grid(text: str) -> list[float]:
    """``start:stop:step`` with ``stop`` included (to rounding), or a comma list."""
    if ":" not in text:
        return [float(x) for x in text.split(",")]
    try:
        start, stop, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}") from None
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError("grid needs step > 0 and stop >= start")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [float(np.round(start + i * step, 12)) for i in range(n)]


def _common(p: argparse.ArgumentParser, design: bool = True) -> None:
    p.add_argument("--config", help="JSON config or manifest; flags override its values")
    p.add_argument("--seed", type=int)
    p.add_argument("--array", type=_pair, metavar="VxH", help="DMA elements, vertical x horizontal")
    p.add_argument("--carrier-ghz", type=float)
    p.add_argument("--pmax-dbm", type=float)
    p.add_argument("--noise-dbm", type=float)
    p.add_argument("--rqos", type=float, help="QoS rate target, bits/s/Hz")
    if design:
        p.add_argument("--groups", type=int, metavar="K")
        p.add_argument("--t", type=float, help="target beam strength")
        p.add_argument("--eps", type=float, help="inter-group interference cap")
        p.add_argument("--rho0", type=float)
        p.add_argument("--cbar", type=float, help="penalty divisor (> 1)")
        for i, what in enumerate(["inner BCD", "outer penalty", "power budget", "SCA", "AO"], 1):
            p.add_argument(f"--tol{i}", type=float, help=f"{what} tolerance")
        p.add_argument("--max-outer", type=int)
        p.add_argument("--r-max", type=float, help="codebook range horizon (m)")
        p.add_argument("--nu-radius", type=float)
        p.add_argument("--fu-radius", type=float)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nfnoma", description="Near-field NOMA with DMA beamforming.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pattern", help="normalised beam pattern over a 2-D slice")
    _common(p)
    p.add_argument("--scheme", choices=["steering", "splitting"])
    p.add_argument("--slice", dest="slice_", choices=["azimuth-range", "elevation-range"])
    p.add_argument("--grid", type=_pair, metavar="NxM", help="angle samples x range samples")
    p.add_argument("--near", type=_location, metavar="AZ,EL,R", help="NU location (deg, deg, m)")
    p.add_argument("--far", type=_location, metavar="AZ,EL,R", help="FU location (deg, deg, m)")
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("design", help="design a hybrid beamformer for a sampled scenario")
    _common(p)
    p.add_argument("--scheme", choices=["steering", "splitting"])
    p.add_argument("--out", help="beamformer JSON file")

    p = sub.add_parser("allocate", help="NOMA power allocation for given effective gains")
    _common(p, design=False)
    p.add_argument("--gains", help="JSON/CSV file or inline 'gN,gF;gN,gF' (linear)")
    p.add_argument("--out", help="allocation JSON file")

    p = sub.add_parser("sweep", help="Monte Carlo sum-rate sweep")
    _common(p)
    p.add_argument("--variable", choices=["pmax", "distance", "disterr"])
    p.add_argument("--grid", type=_range_grid, help="start:stop:step (inclusive) or a comma list")
    p.add_argument("--trials", type=int)
    p.add_argument("--schemes", type=lambda s: [x.strip() for x in s.split(",") if x.strip()])
    p.add_argument("--primary", choices=["steering", "splitting"])
    p.add_argument("--rate-model", choices=["simplified", "full"])
    p.add_argument("--error-target", choices=["near", "far", "both"])
    p.add_argument("--out-dir")
    return parser


# -------------------------------------------------------------- resolution

_PARAM_DEFAULTS = {
    "pattern": {"scheme": "steering", "slice_": "azimuth-range", "grid": [91, 50],
                "near": None, "far": None, "out": None},
    "design": {"scheme": "steering", "out": None},
    "allocate": {"gains": None, "out": None},
    "sweep": {"variable": None, "grid": None, "schemes": ["steering", "fdma", "tdma", "farfield", "zf"],
              "primary": None, "out_dir": None},
}

_REQUIRED = {"pattern": ["out"], "design": ["out"], "allocate": ["gains", "out"],
             "sweep": ["variable", "grid", "out_dir"]}

# desk-scale pattern topology: users well inside the Fresnel region of a 16 x 16 aperture
_PATTERN_USERS = {
    "steering": ((30.0, 90.0, 0.1), (30.0, 90.0, 0.2)),
    "splitting": ((-45.0, 90.0, 0.1), (45.0, 90.0, 0.2)),
}
_PATTERN_R_MAX = 0.4


def _load_config(path: str | None):
    if not path:
        return {}, {}
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    if "config" in doc or "parameters" in doc:
        return dict(doc.get("config", {})), dict(doc.get("parameters", {}))
    return doc, {}


def resolve(args: argparse.Namespace):
    """Merge defaults, config file and flags (flags win).  Returns ``(config, params)``."""
    cfg_doc, params_doc = _load_config(args.config)
    base = ScenarioConfig(m_v=16, m_h=16)
    if args.command == "pattern":
        base = replace(base, n_groups=1, target_strength=None, r_max=_PATTERN_R_MAX)
    cfg = base.to_dict()
    cfg.update(cfg_doc)
    flags = vars(args)
    for flag, key in _CONFIG_FLAGS.items():
        if flags.get(flag) is not None:
            cfg[key] = flags[flag]
    if flags.get("carrier_ghz") is not None:
        cfg["carrier_hz"] = flags["carrier_ghz"] * 1e9
    if flags.get("array") is not None:
        cfg["m_v"], cfg["m_h"] = flags["array"]
    params = dict(_PARAM_DEFAULTS[args.command])
    params.update({k: v for k, v in params_doc.items() if k in params})
    for key in params:
        if flags.get(key) is not None:
            params[key] = flags[key]
    if args.command == "sweep" and params["primary"] is not None:
        cfg["primary"] = params["primary"]
    if args.command == "design" and params["scheme"] == "steering":
        cfg["same_direction"] = True
    elif args.command == "design":
        cfg["same_direction"] = False
    missing = [k for k in _REQUIRED[args.command] if params.get(k) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-")
                                                                    for m in missing))
    try:
        config = ScenarioConfig.from_dict(cfg)
    except (TypeError, ValueError) as err:
        raise UsageError(str(err)) from None
    return config, params


def _write_manifest(out_dir: str, command: str, config: ScenarioConfig, params: dict, started: str,
                    extra: dict | None = None) -> None:
    manifest = {
        "tool": "nfnoma",
        "version": __version__,
        "subcommand": command,
        "master_seed": config.seed,
        "config": config.to_dict(),
        "parameters": params,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir_of(path: str) -> str:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    return d


# ------------------------------------------------------------- subcommands

def _to_location(loc) -> SphericalLocation:
    az, el, r = loc
    return SphericalLocation(np.radians(az), np.radians(el), r)


def cmd_pattern(config: ScenarioConfig, params: dict) -> dict:
    from .splitting import BeamSplittingDesigner
    from .steering import BeamSteeringDesigner

    scheme = params["scheme"]
    near = params["near"] or _PATTERN_USERS[scheme][0]
    far = params["far"] or _PATTERN_USERS[scheme][1]
    params["near"], params["far"] = list(near), list(far)
    geom = config.geometry
    scenario = UserScenario(geom, [UserGroup(_to_location(near), _to_location(far))], config.qos, config.qos)
    if scheme == "steering":
        designer = BeamSteeringDesigner(config.target_strength, config.codebook_shape, config.r_max,
                                        config.interference_cap, config.rho0, config.penalty_divisor,
                                        config.tol_inner, config.tol_outer, config.max_inner,
                                        config.max_outer).fit(scenario)
    else:
        designer = config.splitting_designer().fit(scenario)
    beam = designer.beamformer_.effective()[:, 0]
    n_ang, n_rng = params["grid"]
    ranges = np.linspace(config.r_max / n_rng, config.r_max, n_rng)
    slice_ = params["slice_"]
    if slice_ == "azimuth-range":
        angles = np.linspace(-90.0, 90.0, n_ang)
        grid = pattern_grid(beam, geom, np.radians(angles), ranges, np.radians(near[1]), slice_=slice_)
    else:
        angles = np.linspace(0.0, 180.0, n_ang)
        grid = pattern_grid(beam, geom, np.radians(angles), ranges, slice_=slice_,
                            azimuth=np.radians(near[0]))
    out = params["out"]
    os.makedirs(out, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["angle_deg", "range_m", "gain"])
    for i, a in enumerate(angles):
        for j, r in enumerate(ranges):
            writer.writerow([f"{a:.8e}", f"{r:.8e}", f"{grid[i, j]:.8e}"])
    with open(os.path.join(out, "pattern.csv"), "w", newline="") as fh:
        fh.write(buf.getvalue())
    with open(os.path.join(out, "beamformer.json"), "w") as fh:
        json.dump(designer.beamformer_.to_dict(), fh, indent=1)
        fh.write("\n")
    peaks = [{"angle_deg": float(angles[i]), "range_m": float(ranges[j]), "gain": float(grid[i, j])}
             for i, j in local_maxima(grid)[:4]]
    return {"peaks": peaks}


def cmd_design(config: ScenarioConfig, params: dict) -> dict:
    scenario = sample_scenario(config, trial_seed(config.seed, 0))
    if params["scheme"] == "steering":
        designer = config.steering_designer().fit(scenario)
        converged = bool(designer.trace_.converged)
    else:
        designer = config.splitting_designer().fit(scenario)
        converged = bool(designer.trace_.converged)
    doc = designer.beamformer_.to_dict()
    doc["scheme"] = params["scheme"]
    doc["users"] = [{"near_deg_deg_m": [float(np.degrees(g.near.azimuth_rad)),
                                        float(np.degrees(g.near.elevation_rad)), g.near.range_m],
                     "far_deg_deg_m": [float(np.degrees(g.far.azimuth_rad)),
                                       float(np.degrees(g.far.elevation_rad)), g.far.range_m]}
                    for g in scenario.groups]
    doc["gains"] = designer.transform(scenario).tolist()
    doc["converged"] = converged
    with open(params["out"], "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    return {"converged": converged}


def _read_gains(source: str) -> np.ndarray:
    if os.path.exists(source):
        with open(source) as fh:
            text = fh.read()
        try:
            doc = json.loads(text)
            if isinstance(doc, dict):
                doc = doc["gains"]
            arr = np.asarray(doc, dtype=float)
        except json.JSONDecodeError:
            arr = np.loadtxt(io.StringIO(text), delimiter=",", ndmin=2)
    else:
        try:
            arr = np.array([[float(x) for x in row.split(",")] for row in source.split(";") if row.strip()])
        except ValueError:
            raise UsageError(f"--gains: {source!r} is neither a file nor 'gN,gF;...'") from None
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise UsageError(f"--gains must give K rows of (g_N, g_F); got shape {arr.shape}")
    return arr


def cmd_allocate(config: ScenarioConfig, params: dict) -> dict:
    gains_arr = _read_gains(params["gains"])
    gains = GroupGains(gains_arr[:, 0], gains_arr[:, 1], config.qos, config.qos, config.noise_w)
    p_max = float(dbm_to_watts(config.p_max_dbm))
    try:
        alloc = allocate(gains, p_max, config.tol_power)
    except QosInfeasibleError as err:
        doc = {"feasible": False, "deficit_w": float(err.deficit), "message": str(err)}
    else:
        r_n, r_f = noma_rates(gains, alloc.p1, alloc.p2)
        doc = {"feasible": True, "p_near_w": alloc.p1.tolist(), "p_far_w": alloc.p2.tolist(),
               "p_group_w": alloc.p_group.tolist(), "rate_near": r_n.tolist(), "rate_far": r_f.tolist(),
               "sum_rate": float(r_n.sum() + r_f.sum())}
    doc["gains"] = gains_arr.tolist()
    with open(params["out"], "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    return {"feasible": doc["feasible"]}


def cmd_sweep(config: ScenarioConfig, params: dict) -> dict:
    bad = set(params["schemes"]) - set(SCHEMES)
    if bad:
        raise UsageError(f"unknown schemes {sorted(bad)}; choose from {list(SCHEMES)}")
    result = run_sweep(config, params["variable"], params["grid"], params["schemes"])
    info = emit(result, params["out_dir"])
    return {"run_id": info["run_id"]}


_COMMANDS = {"pattern": cmd_pattern, "design": cmd_design, "allocate": cmd_allocate, "sweep": cmd_sweep}


_NEGATIVE_VALUE = re.compile(r"^-\d")


def _attach_negative_values(argv: list[str]) -> list[str]:
    # argparse reads "-1:1:0.5" as an option; glue such values onto their flag
    out: list[str] = []
    for tok in argv:
        if out and out[-1].startswith("--") and "=" not in out[-1] and _NEGATIVE_VALUE.match(tok):
            out[-1] = f"{out[-1]}={tok}"
        else:
            out.append(tok)
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_attach_negative_values(argv))
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = datetime.now(timezone.utc).isoformat()
    try:
        config, params = resolve(args)
    except UsageError as err:
        parser.error(str(err))
    except (OSError, json.JSONDecodeError) as err:
        parser.error(f"cannot read config: {err}")
    if args.command in ("design", "allocate"):
        _out_dir_of(params["out"])
    try:
        extra = _COMMANDS[args.command](config, params)
    except UsageError as err:
        parser.error(str(err))
    except Exception as err:  # noqa: BLE001 - report and exit nonzero
        log.error("%s failed: %s", args.command, err)
        return 1
    out_dir = params["out_dir"] if args.command == "sweep" else (
        params["out"] if args.command == "pattern" else _out_dir_of(params["out"]))
    _write_manifest(out_dir, args.command, config, params, started, extra)
    return 0


if __name__ == "__main__":
    sys.exit(main())
