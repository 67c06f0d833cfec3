"""Command-line entry point: ``latticesr <subcommand> --config run.json``.

Every run writes its outputs plus ``manifest.json`` (config echo, seed, package
versions, wall time) into the output directory.  A manifest can be passed back
as ``--config`` to repeat the run.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import platform
import sys
import time
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import SimConfig, simulate_ensemble
from .errors import ConfigParse, LatticeSRError
from .fields import SNAPSHOT_PHASES, DriveMode, ProbeDrive, snapshot_z_geometry
from .lattice_params import (
    RB85,
    AtomicSpecies,
    DerivedLattice,
    Geometry,
    LatticeConfig,
    derive_lattice,
    lattice_for_targets,
)
from .observables import DeltaPolicy, delta_sweep, noise_sweep, spectrum_from_stats
from .specfit import FitModel, fit_spectrum, load_spectrum_csv

SUBCOMMANDS = ("derive", "snapshot", "simulate", "sweep-delta", "sweep-noise", "fit")
MANIFEST_VERSION = 1
_SECTIONS = ("species", "lattice", "drive", "sim", "sweep", "snapshot", "fit", "output_dir")


@dataclass
class RunConfig:
    """JSON run configuration.  Sections are kept as plain dicts so that the
    round trip through JSON is lossless; `resolve_*` functions turn them into
    domain objects and report problems with a JSON pointer."""

    lattice: dict
    species: dict | None = None
    drive: dict | None = None
    sim: dict | None = None
    sweep: dict | None = None
    snapshot: dict | None = None
    fit: dict | None = None
    output_dir: str = "out"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.lattice, dict):
            raise ConfigParse("/lattice", "must be an object")
        has_beam = "beam" in self.lattice
        has_targets = "targets" in self.lattice
        if has_beam == has_targets:
            raise ConfigParse("/lattice", "exactly one of 'beam' or 'targets' is required")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigParse("", "config must be a JSON object")
        if "lattice" not in d:
            raise ConfigParse("/lattice", "missing required section")
        for key in ("species", "drive", "sim", "sweep", "snapshot", "fit"):
            if key in d and d[key] is not None and not isinstance(d[key], dict):
                raise ConfigParse(f"/{key}", "must be an object")
        extra = {k: v for k, v in d.items() if k not in _SECTIONS}
        return cls(lattice=copy.deepcopy(d["lattice"]), species=copy.deepcopy(d.get("species")),
                   drive=copy.deepcopy(d.get("drive")), sim=copy.deepcopy(d.get("sim")),
                   sweep=copy.deepcopy(d.get("sweep")), snapshot=copy.deepcopy(d.get("snapshot")),
                   fit=copy.deepcopy(d.get("fit")), output_dir=str(d.get("output_dir", "out")),
                   extra=copy.deepcopy(extra))

    def to_dict(self) -> dict:
        out = {"lattice": copy.deepcopy(self.lattice)}
        for key in ("species", "drive", "sim", "sweep", "snapshot", "fit"):
            v = getattr(self, key)
            if v is not None:
                out[key] = copy.deepcopy(v)
        out["output_dir"] = self.output_dir
        out.update(copy.deepcopy(self.extra))
        return out


def load_config(path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigParse("", f"invalid JSON: {exc}") from None
    if isinstance(d, dict) and "manifest_version" in d:
        d = d["config"]
    return RunConfig.from_dict(d)


# -- field helpers ---------------------------------------------------------------

def _number(node: dict, key: str, pointer: str, default=None, required=False, positive=False):
    if key not in node or node[key] is None:
        if required:
            raise ConfigParse(f"{pointer}/{key}", "missing required field")
        return default
    v = node[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigParse(f"{pointer}/{key}", f"expected a finite number, got {v!r}")
    if positive and not v > 0:
        raise ConfigParse(f"{pointer}/{key}", f"must be > 0, got {v!r}")
    return float(v)


def _frequency(value, pointer: str, lat: DerivedLattice | None):
    """A frequency given as a number (omega_r) or {"value": v, "unit": "omegar"|"khz"|"omega_x"}."""
    if isinstance(value, dict):
        unit = value.get("unit", "omegar")
        v = _number(value, "value", pointer, required=True)
    else:
        unit = "omegar"
        v = _number({"value": value}, "value", pointer, required=True)
    return _convert(v, unit, pointer, lat)


def _convert(v: float, unit: str, pointer: str, lat: DerivedLattice | None) -> float:
    if unit == "omegar":
        return v
    if lat is None:
        raise ConfigParse(pointer, f"unit {unit!r} needs a lattice")
    if unit == "khz":
        return lat.from_khz(v)
    if unit == "omega_x":
        return v * lat.Omega_X
    raise ConfigParse(f"{pointer}/unit", f"unknown unit {unit!r}")


def _grid(node, pointer: str, lat: DerivedLattice | None) -> np.ndarray:
    if not isinstance(node, dict):
        raise ConfigParse(pointer, "grid must be an object")
    unit = node.get("unit", "omegar")
    if "values" in node:
        vals = node["values"]
        if not isinstance(vals, list) or not vals:
            raise ConfigParse(f"{pointer}/values", "must be a non-empty list")
        raw = [_number({"v": v}, "v", f"{pointer}/values/{i}", required=True) for i, v in enumerate(vals)]
    else:
        start = _number(node, "start", pointer, required=True)
        stop = _number(node, "stop", pointer, required=True)
        num = node.get("num")
        if not isinstance(num, int) or isinstance(num, bool) or num < 1:
            raise ConfigParse(f"{pointer}/num", "must be a positive integer")
        spacing = node.get("spacing", "linear")
        if spacing == "linear":
            raw = list(np.linspace(start, stop, num))
        elif spacing == "log":
            if not (start > 0 and stop > 0):
                raise ConfigParse(pointer, "log spacing needs positive bounds")
            raw = list(np.geomspace(start, stop, num))
        else:
            raise ConfigParse(f"{pointer}/spacing", f"unknown spacing {spacing!r}")
    return np.array([_convert(v, unit, pointer, lat) for v in raw])


def resolve_species(cfg: RunConfig) -> AtomicSpecies:
    node = cfg.species
    if node is None or node.get("preset", None) in ("Rb85", "RB85"):
        return RB85
    if "preset" in node:
        raise ConfigParse("/species/preset", f"unknown preset {node['preset']!r}")
    kw = {f.name: _number(node, f.name, "/species", required=True, positive=True)
          for f in fields(AtomicSpecies)}
    return AtomicSpecies(**kw)


def _angle(node: dict, key: str, pointer: str, default_deg: float) -> float:
    """Angles are given in degrees under ``<name>_deg`` or radians under ``<name>``."""
    if f"{key}_deg" in node:
        return math.radians(_number(node, f"{key}_deg", pointer))
    return _number(node, key, pointer, default=math.radians(default_deg))


def resolve_lattice(cfg: RunConfig, species: AtomicSpecies, need_gamma_s: bool = True) -> DerivedLattice:
    lat_node = cfg.lattice
    geometry_s = lat_node.get("geometry", Geometry.THREE_D.value)
    try:
        geometry = Geometry(geometry_s)
    except ValueError:
        raise ConfigParse("/lattice/geometry", f"unknown geometry {geometry_s!r}") from None
    if "beam" in lat_node:
        node, ptr = lat_node["beam"], "/lattice/beam"
        if not isinstance(node, dict):
            raise ConfigParse(ptr, "must be an object")
        intensity = _number(node, "intensity_per_beam_I", ptr, required=True)
        if "detuning_in_gamma" in node:
            detuning = _number(node, "detuning_in_gamma", ptr) * species.natural_linewidth_Gamma
        else:
            detuning = _number(node, "detuning_Delta", ptr, required=True)
        th_x = _angle(node, "theta_x", ptr, 25.0)
        th_y = _angle(node, "theta_y", ptr, math.degrees(th_x))
        lc = LatticeConfig(intensity, detuning, th_x, th_y, geometry)
        return derive_lattice(species, lc)
    node, ptr = lat_node["targets"], "/lattice/targets"
    if not isinstance(node, dict):
        raise ConfigParse(ptr, "must be an object")
    U0 = _number(node, "U0", ptr, required=True, positive=True)
    gs = _number(node, "Gamma_S", ptr, required=need_gamma_s, positive=True)
    th_x = _angle(node, "theta_x", ptr, 25.0)
    th_y = _angle(node, "theta_y", ptr, math.degrees(th_x))
    return lattice_for_targets(U0, gs if gs is not None else 1.0, th_x, th_y, species, geometry)


def resolve_drive(cfg: RunConfig, lat: DerivedLattice | None) -> ProbeDrive:
    node = cfg.drive or {}
    mode_s = node.get("mode", "Off")
    try:
        mode = DriveMode(mode_s)
    except ValueError:
        raise ConfigParse("/drive/mode", f"unknown mode {mode_s!r}") from None
    eps = _number(node, "eps_p", "/drive", default=0.0)
    if eps < 0:
        raise ConfigParse("/drive/eps_p", "must be >= 0")
    delta = _frequency(node["delta"], "/drive/delta", lat) if "delta" in node else 0.0
    return ProbeDrive(eps, delta, mode)


def resolve_sim(cfg: RunConfig, lat: DerivedLattice, drive: ProbeDrive, auto: bool = True) -> SimConfig:
    node = cfg.sim
    if node is None:
        raise ConfigParse("/sim", "missing required section")
    seed = node.get("seed")
    if seed is None:
        raise ConfigParse("/sim/seed", "missing required field")
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigParse("/sim/seed", "must be an unsigned 64-bit integer")
    known = {f.name: f for f in fields(SimConfig)}
    kw = {}
    for key, val in node.items():
        if key not in known:
            raise ConfigParse(f"/sim/{key}", "unknown field")
        if key == "init_temperature" and val is None:
            kw[key] = None
        elif key in ("n_traj", "seed", "recoil_kicks_per_jump", "L_max", "N_max", "hist_bins",
                     "record_traj"):
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigParse(f"/sim/{key}", "must be an integer")
            kw[key] = val
        else:
            kw[key] = _number(node, key, "/sim")
    if auto:
        base = SimConfig.for_lattice(lat, drive)
        kw.setdefault("dt", base.dt)
        kw.setdefault("burn_in", base.burn_in)
    return SimConfig(**kw)


# -- output helpers --------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8",
                    newline="\n")


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    path.write_text(buf.getvalue(), encoding="utf-8", newline="\n")


def _versions() -> dict:
    import numba
    import scipy
    return {"latticesr": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


# -- subcommands -----------------------------------------------------------------

def cmd_derive(cfg: RunConfig, out: Path) -> dict:
    lat = resolve_lattice(cfg, resolve_species(cfg))
    d = lat.to_dict()
    d["Omega_X_kHz"] = lat.to_khz(lat.Omega_X)
    d["Omega_Z_kHz"] = lat.to_khz(lat.Omega_Z)
    _write_json(out / "derived.json", d)
    print(json.dumps(_clean(d), indent=2, sort_keys=True))
    return {"outputs": ["derived.json"]}


def cmd_snapshot(cfg: RunConfig, out: Path) -> dict:
    node = cfg.snapshot or {}
    if "U0" in node:
        U0 = _number(node, "U0", "/snapshot", positive=True)
    else:
        U0 = resolve_lattice(cfg, resolve_species(cfg)).U0
    amp = _number(node, "amp_ratio", "/snapshot", default=0.2)
    n = node.get("n_points", 401)
    if isinstance(n, bool) or not isinstance(n, int) or n < 2:
        raise ConfigParse("/snapshot/n_points", "must be an integer >= 2")
    phases = node.get("phases", list(SNAPSHOT_PHASES))
    if not isinstance(phases, list) or not phases:
        raise ConfigParse("/snapshot/phases", "must be a non-empty list")
    grid = np.linspace(0.0, 2 * math.pi, n)
    outputs = []
    for k, ph in enumerate(phases):
        ph = _number({"p": ph}, "p", f"/snapshot/phases/{k}", required=True)
        table = snapshot_z_geometry(U0, amp, ph, grid)
        name = f"snapshot_{k:02d}.csv"
        _write_csv(out / name, ["z_over_lambda", "U_plus", "U_minus", "dRho_plus", "dRho_minus"],
                   table.rows())
        outputs.append(name)
    return {"outputs": outputs, "phases": phases, "U0": U0, "amp_ratio": amp}


def cmd_simulate(cfg: RunConfig, out: Path) -> dict:
    lat = resolve_lattice(cfg, resolve_species(cfg))
    drive = resolve_drive(cfg, lat)
    sim = resolve_sim(cfg, lat, drive)
    stats = simulate_ensemble(sim, lat, drive)
    summary = stats.summary()
    summary["position_weighted_rate"] = stats.position_weighted_rate
    summary["kinetic_temperature"] = stats.kinetic_temperature
    outputs = ["summary.json"]
    if drive.delta > 0 and sim.L_max >= 0:
        summary["mode_spectrum"] = spectrum_from_stats(stats, drive).to_dict()
    _write_json(out / "summary.json", summary)
    if stats.trajectories is not None:
        rows = []
        for j, tr in enumerate(stats.trajectories):
            rows.extend((j, *r) for r in tr)
        _write_csv(out / "trajectories.csv", ["traj", "t", "x", "p", "spin"], rows)
        outputs.append("trajectories.csv")
    print(json.dumps(_clean(stats.summary()), sort_keys=True))
    return {"outputs": outputs, "sim_resolved": sim.to_dict()}


def _sweep_common(cfg: RunConfig, lat: DerivedLattice):
    node = cfg.sweep or {}
    drive_node = cfg.drive or {}
    eps = _number(node, "eps_p", "/sweep", default=_number(drive_node, "eps_p", "/drive", default=0.1))
    mode_s = node.get("mode", drive_node.get("mode", DriveMode.TRAVELING_PLUS.value))
    try:
        mode = DriveMode(mode_s)
    except ValueError:
        raise ConfigParse("/sweep/mode", f"unknown mode {mode_s!r}") from None
    workers = node.get("workers", 1)
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        raise ConfigParse("/sweep/workers", "must be a positive integer")
    return node, eps, mode, workers


def _write_sweep(res, out: Path) -> list[str]:
    (out / "sweep.csv").write_text(res.to_csv(), encoding="utf-8", newline="\n")
    summary = res.summary()
    summary["axis_values"] = res.axis_values
    summary["mean_velocity"] = res.mean_velocity
    summary["stderr"] = res.stderr
    summary["mode_11_magnitude"] = res.mode_11_magnitude
    summary["status"] = res.status
    _write_json(out / "sweep.json", summary)
    print(json.dumps(_clean(res.summary()), sort_keys=True))
    return ["sweep.csv", "sweep.json"]


def cmd_sweep_delta(cfg: RunConfig, out: Path) -> dict:
    lat = resolve_lattice(cfg, resolve_species(cfg))
    node, eps, mode, workers = _sweep_common(cfg, lat)
    if "delta" not in node:
        raise ConfigParse("/sweep/delta", "missing required grid")
    grid = _grid(node["delta"], "/sweep/delta", lat)
    sim = resolve_sim(cfg, lat, ProbeDrive(eps, float(grid.min()), mode))
    res = delta_sweep(sim, lat, eps, mode, grid, workers=workers)
    return {"outputs": _write_sweep(res, out)}


def cmd_sweep_noise(cfg: RunConfig, out: Path) -> dict:
    species = resolve_species(cfg)
    lat = resolve_lattice(cfg, species, need_gamma_s=False)
    node, eps, mode, workers = _sweep_common(cfg, lat)
    if "gamma_s" not in node:
        raise ConfigParse("/sweep/gamma_s", "missing required grid")
    grid = _grid(node["gamma_s"], "/sweep/gamma_s", lat)
    policy_s = node.get("delta_policy", DeltaPolicy.PEAK_OF_DELTA_SWEEP.value)
    try:
        policy = DeltaPolicy(policy_s)
    except ValueError:
        raise ConfigParse("/sweep/delta_policy", f"unknown policy {policy_s!r}") from None
    # dt and burn-in are adapted per grid point; the template only bounds them
    sim = resolve_sim(cfg, lat, ProbeDrive(), auto=False)
    res = noise_sweep(sim, species, lat.U0, grid, eps, mode, policy, theta_x=lat.theta_x,
                      workers=workers)
    return {"outputs": _write_sweep(res, out)}


def cmd_fit(cfg: RunConfig, out: Path) -> dict:
    node = cfg.fit or {}
    inputs = node.get("inputs")
    if not isinstance(inputs, list) or not inputs or not all(isinstance(p, str) for p in inputs):
        raise ConfigParse("/fit/inputs", "must be a non-empty list of CSV paths")
    units = node.get("units", "khz")
    if units not in ("khz", "omegar"):
        raise ConfigParse("/fit/units", f"unknown unit {units!r}")
    gamma_s = node.get("gamma_s", [None] * len(inputs))
    if not isinstance(gamma_s, list) or len(gamma_s) != len(inputs):
        raise ConfigParse("/fit/gamma_s", "must list one value per input")
    separate = bool(node.get("separate_sigma_B2", False))
    init = None
    if "init" in node:
        try:
            init = FitModel.from_dict(node["init"])
        except (TypeError, ValueError) as exc:
            raise ConfigParse("/fit/init", str(exc)) from None
    lat = None if init is not None else resolve_lattice(cfg, resolve_species(cfg))
    outputs, agg = [], []
    for k, path in enumerate(inputs):
        data = load_spectrum_csv(path, units)
        res = fit_spectrum(data, init=init, lat=lat, separate_sigma_B2=separate)
        name = f"fit_{k:03d}.json"
        _write_json(out / name, {**res.to_dict(), "source": data.source})
        outputs.append(name)
        agg.append((k, gamma_s[k] if gamma_s[k] is not None else "", res.brillouin_amplitude_A))
    _write_csv(out / "fits.csv", ["scan_id", "Gamma_S", "A"], agg)
    outputs.append("fits.csv")
    return {"outputs": outputs}


_HANDLERS = {"derive": cmd_derive, "snapshot": cmd_snapshot, "simulate": cmd_simulate,
             "sweep-delta": cmd_sweep_delta, "sweep-noise": cmd_sweep_noise, "fit": cmd_fit}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="latticesr", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="JSON run config or a previous manifest")
    ap.add_argument("--seed", type=int, default=None, help="override /sim/seed")
    ap.add_argument("--threads", type=int, default=0, help="worker threads, 0 = all cores")
    ap.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    return ap


def run(subcommand: str, cfg: RunConfig, seed: int | None = None, threads: int = 0,
        out: str | None = None) -> dict:
    """Execute one subcommand; returns the manifest that was written."""
    if subcommand not in _HANDLERS:
        raise ConfigParse("", f"unknown subcommand {subcommand!r}")
    cfg = RunConfig.from_dict(cfg.to_dict())
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ConfigParse("/sim/seed", "must be an unsigned 64-bit integer")
        cfg.sim = {**(cfg.sim or {}), "seed": seed}
    if out is not None:
        cfg.output_dir = out
    if threads:
        import numba
        numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        info = _HANDLERS[subcommand](cfg, outdir)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "subcommand": subcommand,
        "config": cfg.to_dict(),
        "seed": (cfg.sim or {}).get("seed"),
        "versions": _versions(),
        "wall_time": time.perf_counter() - t0,
        "warnings": [f"{w.category.__name__}: {w.message}" for w in caught],
        **info,
    }
    _write_json(outdir / "manifest.json", manifest)
    return manifest


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        run(args.subcommand, cfg, seed=args.seed, threads=args.threads, out=args.out)
    except ConfigParse as exc:
        print(json.dumps({"error": "ConfigParse", "pointer": exc.pointer, "message": str(exc)}),
              file=sys.stderr)
        return 2
    except (LatticeSRError, OSError, FloatingPointError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc),
                          "subcommand": args.subcommand}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
