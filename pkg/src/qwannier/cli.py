"""Command line: config ingestion, stage execution and artifact persistence.

A run is described by a declarative JSON :class:`RunConfig`.  Every artifact
name carries the first 12 hex digits of the config hash, and the run writes a
manifest listing each artifact with its sha256.  Tables are CSV with floats
at 17 significant digits; reports are JSON (floats in shortest round-trip
form, keys sorted); field samples are ``.npy`` with a JSON sidecar.

Example::

    qwannier run --config scripts/configs/mathieu.json --out runs/
    qwannier sweep --config scripts/configs/mathieu.json --parameter eps --values 0.04 0.02 0.01
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import pickle
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dfield
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, bloch, effective, feshbach, magwannier as mw, pipeline, wannier
from .lattice import Lattice2D
from .magphase import FieldSpec

log = logging.getLogger("qwannier")

STAGES = ("bands", "wannier", "effective", "spectrum", "butterfly", "feshbach-selftest")
_REQUIRES = {"wannier": ("bands",), "effective": ("wannier",), "spectrum": ("effective",),
             "butterfly": ("effective",)}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config

_NUMERIC_DEFAULTS = {
    "grid": 64,             # band mesh M
    "cutoff": 5.0,          # plane-wave cutoff K
    "b": 0.12,              # Sigma_b level
    "grid_per_cell": 12,    # FD / Wannier samples per period
    "torus_L": 16,          # magnetic torus size for kernel extraction
    "family_radius": 8,
    "box_cells": 14,        # FD box W for window spectra
    "window_N": 3,          # window [0, N eps]
    "margin_cells": 2.0,
    "matrix_R": 15,         # truncation of M for island reports
    "n_levels": 3,
    "q_max": 6,
    "mbz_grid": 8,
    "kernel_source": "torus",  # or "nearest_neighbour"
    "compare_H": True,
}

_RANGES = {
    "grid": (8, 512), "cutoff": (0.5, 50.0), "b": (1e-6, 10.0), "grid_per_cell": (12, 64),
    "torus_L": (4, 64), "family_radius": (1, 32), "box_cells": (4, 64), "window_N": (1, 20),
    "margin_cells": (0.0, 10.0), "matrix_R": (2, 40), "n_levels": (1, 20), "q_max": (1, 24),
    "mbz_grid": (1, 256),
}


def _fourier_table(rows) -> dict:
    """``[[m1, m2, re, im], ...]`` -> ``{(m1, m2): re + i im}``."""
    out = {}
    for r in rows:
        if len(r) != 4:
            raise ConfigError(f"Fourier row must be [m1, m2, re, im], got {r}")
        out[(int(r[0]), int(r[1]))] = complex(float(r[2]), float(r[3]))
    return out


@dataclass
class RunConfig:
    lattice: list = dfield(default_factory=lambda: [[2 * np.pi, 0.0], [0.0, 2 * np.pi]])
    potential: dict = dfield(default_factory=lambda: {"preset": "mathieu", "params": {"v": 0.1}})
    field: dict = dfield(default_factory=lambda: {"B0": 0.5, "epsilons": [0.02], "kappas": [0.0]})
    numerics: dict = dfield(default_factory=dict)
    stages: list = dfield(default_factory=lambda: ["bands", "wannier", "effective", "spectrum",
                                                  "butterfly"])
    seed: int = 0
    name: str = "run"

    def __post_init__(self):
        self.numerics = {**_NUMERIC_DEFAULTS, **self.numerics}
        self.validate()

    # -- validation
    def validate(self) -> None:
        unknown = set(self.numerics) - set(_NUMERIC_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown numerics keys: {sorted(unknown)}")
        for k, (lo, hi) in _RANGES.items():
            v = self.numerics[k]
            if not isinstance(v, (int, float)) or not lo <= v <= hi:
                raise ConfigError(f"numerics.{k}={v!r} outside [{lo}, {hi}]")
        if self.numerics["kernel_source"] not in ("torus", "nearest_neighbour"):
            raise ConfigError("numerics.kernel_source must be 'torus' or 'nearest_neighbour'")
        bad = [s for s in self.stages if s not in STAGES]
        if bad:
            raise ConfigError(f"unknown stages {bad}; choose from {STAGES}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a u64")
        f = self.field
        if not isinstance(f.get("epsilons", []), list) or not isinstance(f.get("kappas", [0.0]), list):
            raise ConfigError("field.epsilons and field.kappas must be lists")
        if any(not e > 0 for e in f.get("epsilons", [])):
            raise ConfigError("epsilons must be positive")
        if any(k < 0 for k in f.get("kappas", [0.0])):
            raise ConfigError("kappas must be non-negative")
        self.lattice_obj()
        self.field_spec(1.0, 0.0)
        if self.numerics["kernel_source"] == "torus":
            self.periodic_data()

    # -- builders
    def lattice_obj(self) -> Lattice2D:
        try:
            e1, e2 = (np.asarray(v, dtype=float) for v in self.lattice)
            return Lattice2D(e1, e2)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad lattice: {exc}") from exc

    def periodic_data(self) -> bloch.PeriodicData:
        p = self.potential
        lat = self.lattice_obj()
        if "preset" in p:
            if p["preset"] not in bloch.PRESETS:
                raise ConfigError(f"unknown preset {p['preset']!r}; choose from {sorted(bloch.PRESETS)}")
            return bloch.PRESETS[p["preset"]](lattice=lat, **p.get("params", {}))
        try:
            return bloch.PeriodicData(lat, V=_fourier_table(p.get("V", [])),
                                      A1=_fourier_table(p.get("A1", [])),
                                      A2=_fourier_table(p.get("A2", [])), name=p.get("name", "custom"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def field_spec(self, epsilon: float, kappa: float) -> FieldSpec:
        d = {"B0": self.field.get("B0", 0.5), "epsilon": epsilon, "kappa": kappa}
        if "profile" in self.field:
            d["profile"] = self.field["profile"]
        try:
            return FieldSpec.from_dict(d)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad field: {exc}") from exc

    @property
    def epsilons(self) -> list:
        return [float(e) for e in self.field.get("epsilons", [])]

    @property
    def kappas(self) -> list:
        return [float(k) for k in self.field.get("kappas", [0.0])]

    # -- serialization
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def subtree_hash(self, *keys: str, numerics: tuple = ()) -> str:
        d = {k: getattr(self, k) for k in keys}
        d["numerics"] = {k: self.numerics[k] for k in numerics}
        s = json.dumps(_jsonable(d), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(s.encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------- serialization

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [_jsonable(float(x.real)), _jsonable(float(x.imag))]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not np.isfinite(x):
            return repr(x)
        return x
    return x


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def csv_bytes(header: list, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue().encode()


def json_bytes(obj) -> bytes:
    return (json.dumps(_jsonable(obj), sort_keys=True, indent=1) + "\n").encode()


class ArtifactWriter:
    """Writes ``<stem>_<hash12>.<ext>`` files and records their hashes."""

    def __init__(self, out: Path, config_hash: str):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.tag = config_hash[:12]
        self.entries: list[dict] = []

    def _put(self, stem: str, ext: str, data: bytes, stage: str, kind: str) -> Path:
        path = self.out / f"{stem}_{self.tag}.{ext}"
        path.write_bytes(data)
        self.entries.append({"path": path.name, "sha256": hashlib.sha256(data).hexdigest(),
                             "bytes": len(data), "stage": stage, "kind": kind})
        return path

    def csv(self, stem, header, rows, stage):
        return self._put(stem, "csv", csv_bytes(header, rows), stage, "table")

    def json(self, stem, obj, stage):
        return self._put(stem, "json", json_bytes(obj), stage, "report")

    def array(self, stem, arr: np.ndarray, meta: dict, stage):
        buf = io.BytesIO()
        np.save(buf, np.ascontiguousarray(arr), allow_pickle=False)
        p = self._put(stem, "npy", buf.getvalue(), stage, "array")
        self._put(stem + "_meta", "json",
                  json_bytes({**meta, "dtype": str(arr.dtype), "shape": list(arr.shape)}),
                  stage, "sidecar")
        return p


# ---------------------------------------------------------------- stages

@dataclass
class RunState:
    config: RunConfig
    writer: ArtifactWriter
    cache_dir: Path | None = None
    workers: int = 1
    bands: tuple | None = None
    setup: pipeline.Setup | None = None
    kernels: dict = dfield(default_factory=dict)  # eps -> HoppingKernel
    results: dict = dfield(default_factory=dict)


def _tag(x: float) -> str:
    return format(x, ".6g").replace(".", "p").replace("-", "m")


def _cached_bands(st: RunState):
    """Bands, minimum and ``Sigma_b``, cached by the hash of the inputs they depend on."""
    cfg = st.config
    key = cfg.subtree_hash("lattice", "potential", numerics=("grid", "cutoff", "b"))
    path = st.cache_dir / f"bands_{key[:16]}.pkl" if st.cache_dir else None
    if path is not None and path.exists():
        with open(path, "rb") as fh:
            return pickle.load(fh)
    n = cfg.numerics
    bands = bloch.compute_bands(cfg.periodic_data(), n["grid"], n["cutoff"], n_bands=3, workers=st.workers)
    minimum = bloch.find_minimum(bands)
    sigma = bloch.sigma_b(bands, n["b"], minimum)
    out = (bands, minimum, sigma)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        with open(tmp, "wb") as fh:
            pickle.dump(out, fh)
        os.replace(tmp, path)
    return out


def _build_setup(st: RunState) -> pipeline.Setup:
    if st.setup is None:
        if st.bands is None:
            st.bands = _cached_bands(st)
        bands, minimum, sigma = st.bands
        section, psi0 = wannier.build_quasi_wannier(bands, minimum, sigma,
                                                    grid_per_cell=st.config.numerics["grid_per_cell"])
        st.setup = pipeline.Setup(bands.data, bands, minimum, sigma, section, psi0)
    return st.setup


def stage_bands(st: RunState):
    st.bands = _cached_bands(st)
    bands, minimum, sigma = st.bands
    J = bands.bands.shape[-1]
    st.writer.csv("bands", ["theta1", "theta2"] + [f"lambda{j}" for j in range(J)],
                  bands.to_csv_rows(), "bands")
    st.writer.json("minimum", {"minimum": minimum.to_dict(), "sigma_b": sigma.to_dict(),
                               "band_shift": bands.shift}, "bands")


def stage_wannier(st: RunState):
    s = _build_setup(st)
    w = s.psi0
    sec = s.section
    mass = np.abs(w.samples) ** 2 * w.cell_weight
    c = w.center
    tails = {}
    for r in (2, 4, 6, 8):
        lo, hi = c - r * w.grid_per_cell, c + r * w.grid_per_cell + 1
        if lo >= 0:
            tails[str(r)] = float(mass.sum() - mass[lo:hi, lo:hi].sum())
    st.writer.array("psi0", w.samples, {"grid_per_cell": w.grid_per_cell, "M": w.M,
                                        "origin_sample": c}, "wannier")
    st.writer.json("wannier", {"norm": w.norm(), "min_h_norm2": float(sec.h_norm2.min()),
                               "radius": sec.radius, "reference_index": sec.reference_index,
                               "overlap_at_min": list(sec.overlap_at_min),
                               "max_overlap_on_ball": sec.max_overlap_on_ball,
                               "eigen_nodes": int(sec.agrees_mask.sum()),
                               "tail_mass_outside": tails, "fd_shift": s.shift()}, "wannier")


def _kernel(st: RunState, eps: float) -> effective.HoppingKernel:
    if eps in st.kernels:
        return st.kernels[eps]
    cfg = st.config
    n = cfg.numerics
    if n["kernel_source"] == "nearest_neighbour":
        k = effective.HoppingKernel.nearest_neighbour(lattice=cfg.lattice_obj())
        k.epsilon = eps
        st.kernels[eps] = k
        return k
    tk = pipeline.torus_kernel(st.setup, cfg.field_spec(eps, 0.0), n["torus_L"], n["family_radius"])
    dev = pipeline.band_deviation(st.setup, tk)
    st.kernels[eps] = tk.kernel
    st.results.setdefault("effective", {})[eps] = {"diagnostics": tk.diagnostics(),
                                                   "band_deviation": dev.to_dict()}
    return tk.kernel


def stage_effective(st: RunState):
    for eps in st.config.epsilons:
        k = _kernel(st, eps)
        st.writer.csv(f"kernel_eps{_tag(eps)}", ["n1", "n2", "re", "im"], k.to_rows(), "effective")
        if eps in st.results.get("effective", {}):
            st.writer.json(f"kernel_eps{_tag(eps)}", st.results["effective"][eps], "effective")


def island_report(st: RunState, eps: float, kappa: float) -> dict:
    cfg = st.config
    n = cfg.numerics
    f = cfg.field_spec(eps, kappa)
    k = _kernel(st, eps)
    M = effective.build_magnetic_matrix(k, f, mw.TruncatedLattice(n["matrix_R"], 3))
    out = {"epsilon": eps, "kappa": kappa, "matrix_hermiticity": M.hermiticity_residual()}
    if st.setup is not None:
        pred = effective.landau_predictor(st.setup.minimum, f, n["n_levels"] + 1)
        levels = pred.levels - st.setup.minimum.lambda_min
        window = (0.0, float(levels[-1]))
        out["landau_prediction"] = levels[:-1]
        out["landau_spacing"] = pred.spacing
    else:
        w = np.linalg.eigvalsh(M.dense())
        window = (float(w[0]), float(w[-1]))
    eigs = effective.matrix_window_spectrum(M, window)
    rep = effective.detect_islands(eigs, window, 0.25 * f.b if f.b > 0 else 1e-3, flux=f.b)
    out["report"] = rep.to_dict()
    out["centers"] = rep.centers
    out["gap_widths"] = rep.gap_widths
    return out


def stage_spectrum(st: RunState):
    cfg = st.config
    n = cfg.numerics
    for eps in cfg.epsilons:
        for kappa in cfg.kappas:
            tag = f"eps{_tag(eps)}_kappa{_tag(kappa)}"
            rep = island_report(st, eps, kappa)
            if n["compare_H"] and st.setup is not None:
                cmp = pipeline.window_spectra(st.setup, _kernel(st, eps), cfg.field_spec(eps, kappa),
                                              N=n["window_N"], cells=n["box_cells"],
                                              margin_cells=n["margin_cells"])
                rep["window_comparison"] = cmp.to_dict()
            st.results.setdefault("spectrum", {})[(eps, kappa)] = rep
            st.writer.json(f"gaps_{tag}", rep, "spectrum")


def stage_butterfly(st: RunState):
    n = st.config.numerics
    eps = st.config.epsilons[0] if st.config.epsilons else 0.0
    k = _kernel(st, eps)
    rows = effective.butterfly(k, n["q_max"], n["mbz_grid"])
    st.writer.csv("butterfly", ["flux_per_cell_over_2pi", "energy"], rows, "butterfly")


def stage_feshbach(st: RunState):
    recs = feshbach.selftest_suite(seed=int(st.config.seed) % (2 ** 63))
    keys = ["instance", "beta", "identity_residual", "distance", "bound", "passed", "redraws"]
    st.writer.csv("feshbach_selftest", keys, [[r[k] for k in keys] for r in recs], "feshbach-selftest")
    st.writer.json("feshbach_summary", {
        "n_instances": len(recs), "all_passed": all(r["passed"] for r in recs),
        "max_identity_residual": max(r["identity_residual"] for r in recs),
        "max_distance_over_bound": max(r["distance"] / r["bound"] for r in recs if r["bound"] > 0),
    }, "feshbach-selftest")


_RUNNERS = {"bands": stage_bands, "wannier": stage_wannier, "effective": stage_effective,
            "spectrum": stage_spectrum, "butterfly": stage_butterfly,
            "feshbach-selftest": stage_feshbach}


def expand_stages(stages, kernel_source: str = "torus") -> list:
    """Requested stages plus prerequisites, in pipeline order."""
    need = set()

    def add(s):
        if s in need:
            return
        need.add(s)
        for r in _REQUIRES.get(s, ()):
            if kernel_source == "nearest_neighbour" and s == "effective":
                continue
            add(r)

    for s in stages:
        add(s)
    return [s for s in STAGES if s in need]


@dataclass
class RunResult:
    manifest: dict
    state: RunState

    @property
    def ok(self) -> bool:
        return self.manifest["status"] == "ok"


def run(config: RunConfig, out, stages=None, workers: int = 1, use_cache: bool = True) -> RunResult:
    """Execute the stages (plus prerequisites) and write the manifest."""
    h = config.hash()
    writer = ArtifactWriter(Path(out), h)
    st = RunState(config, writer, Path(out) / ".cache" if use_cache else None, workers)
    order = expand_stages(stages or config.stages, config.numerics["kernel_source"])
    failures, done = [], []
    for name in order:
        log.info("stage %s", name)
        try:
            _RUNNERS[name](st)
            done.append(name)
        except Exception as exc:  # recorded, later stages skipped
            failures.append({"stage": name, "error": type(exc).__name__, "message": str(exc),
                             "traceback": traceback.format_exc().splitlines()[-6:]})
            writer.json("failure", failures[-1], name)
            break
    manifest = {"config_hash": h, "config": json.loads(config.canonical_json()),
                "version": __version__, "stages": order, "completed": done,
                "status": "ok" if not failures else "failed", "failures": failures,
                "artifacts": writer.entries}
    data = json_bytes(manifest)
    (Path(out) / f"manifest_{h[:12]}.json").write_bytes(data)
    manifest["manifest_sha256"] = hashlib.sha256(data).hexdigest()
    st.results["manifest"] = manifest
    return RunResult(manifest, st)


# ---------------------------------------------------------------- sweeps

def _parse_flux(v) -> Fraction:
    f = Fraction(str(v)).limit_denominator(64)
    if not 0 <= f <= 1:
        raise ValueError(f"flux {v} outside [0, 1]")
    return f


def sweep(config: RunConfig, parameter: str, values: list, out, workers: int = 1) -> dict:
    """Per-value results plus ratio tables; failing values are recorded and skipped."""
    if parameter not in ("eps", "kappa", "flux"):
        raise ConfigError("parameter must be eps, kappa or flux")
    h = config.hash()
    tag = hashlib.sha256(f"{h}|{parameter}|{values}".encode()).hexdigest()
    writer = ArtifactWriter(Path(out), tag)
    st = RunState(config, writer, Path(out) / ".cache", 1)
    rows, failures = [], []
    n = config.numerics
    if parameter in ("eps", "kappa") and values and n["kernel_source"] == "torus":
        try:
            _build_setup(st)
        except Exception as exc:
            failures.append({"value": None, "error": type(exc).__name__, "message": str(exc)})
            values = []

    def point(v):
        if parameter == "flux":
            fr = _parse_flux(v)
            k = (effective.HoppingKernel.nearest_neighbour(lattice=config.lattice_obj())
                 if n["kernel_source"] == "nearest_neighbour" or not config.epsilons
                 else _kernel(st, config.epsilons[0]))
            rs = effective.rational_flux_spectrum(k, fr.numerator, fr.denominator, n["mbz_grid"])
            return {"value": str(fr), "band_edges": rs.band_edges, "gaps": rs.gaps}
        eps = float(v) if parameter == "eps" else config.epsilons[0]
        kappa = float(v) if parameter == "kappa" else (config.kappas[0] if config.kappas else 0.0)
        _kernel(st, eps)
        r = {"value": float(v), "epsilon": eps, "kappa": kappa}
        if eps in st.results.get("effective", {}) and parameter == "eps":
            r["band_deviation"] = st.results["effective"][eps]["band_deviation"]["sup_deviation"]
        if n["compare_H"] and st.setup is not None:
            c = pipeline.window_spectra(st.setup, st.kernels[eps], config.field_spec(eps, kappa),
                                        N=n["window_N"], cells=n["box_cells"], margin_cells=n["margin_cells"])
            r["distance"] = c.distance
        rep = island_report(st, eps, kappa)
        r["gap_widths"] = rep["gap_widths"]
        r["centers"] = rep["centers"]
        return r

    def safe(v):
        try:
            return point(v), None
        except Exception as exc:
            return None, {"value": v, "error": type(exc).__name__, "message": str(exc)}

    # kernels are built serially (they share the setup); points then run concurrently
    if parameter == "eps":
        for v in values:
            try:
                _kernel(st, float(v))
            except Exception:
                pass
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            outs = list(ex.map(safe, values))
    else:
        outs = [safe(v) for v in values]
    for r, f in outs:
        (rows if r is not None else failures).append(r if r is not None else f)

    table = []
    if parameter == "flux":
        for r in rows:
            for j, (lo, hi) in enumerate(r["band_edges"]):
                table.append([r["value"], j, lo, hi])
        writer.csv("flux_sweep", ["flux", "band", "lower", "upper"], table, "sweep")
    else:
        for r in rows:
            eps, kappa = r["epsilon"], r["kappa"]
            g = r["gap_widths"]
            table.append([r["value"], eps, kappa,
                          r.get("band_deviation", np.nan) / eps if "band_deviation" in r else np.nan,
                          r["distance"] / (kappa * eps + eps ** 2) if "distance" in r else np.nan,
                          (min(g[:2]) / eps) if len(g) else np.nan])
        writer.csv(f"{parameter}_sweep", ["value", "epsilon", "kappa", "deviation_over_eps",
                                          "distance_over_kappa_eps_plus_eps2", "min_gap_over_eps"],
                   table, "sweep")
    writer.json(f"{parameter}_sweep", {"parameter": parameter, "values": list(values),
                                       "points": rows, "failures": failures}, "sweep")
    manifest = {"config_hash": h, "sweep": parameter, "values": list(values), "artifacts": writer.entries,
                "failures": failures, "status": "ok" if not failures else "partial"}
    (Path(out) / f"manifest_{tag[:12]}.json").write_bytes(json_bytes(manifest))
    manifest["table"] = table
    return manifest


# ---------------------------------------------------------------- entry point

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qwannier", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="JSON run config")
        sp.add_argument("--out", default="runs", help="output directory")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--seed", type=int, default=None, help="override config seed (u64)")
        sp.add_argument("--no-cache", action="store_true")
        sp.add_argument("-v", "--verbose", action="store_true")

    r = sub.add_parser("run", help="run the stages listed in the config or --stages")
    common(r)
    r.add_argument("--stages", default=None, help="comma-separated stage list")
    for name in STAGES:
        common(sub.add_parser(name, help=f"run the {name} stage (and prerequisites)"))
    s = sub.add_parser("sweep", help="scan eps, kappa or flux")
    common(s)
    s.add_argument("--parameter", required=True, choices=("eps", "kappa", "flux"))
    s.add_argument("--values", nargs="*", default=[])
    v = sub.add_parser("validate", help="check a config and print its canonical form and hash")
    v.add_argument("--config", required=True)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
    except (ConfigError, OSError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    if args.command == "validate":
        print(cfg.canonical_json())
        print(cfg.hash())
        return 0
    if args.seed is not None:
        cfg.seed = args.seed
        try:
            cfg.validate()
        except ConfigError as exc:
            print(f"invalid config: {exc}", file=sys.stderr)
            return 2
    if args.command == "sweep":
        vals = args.values if args.parameter == "flux" else [float(x) for x in args.values]
        m = sweep(cfg, args.parameter, vals, args.out, args.workers)
        for row in m["table"]:
            print(",".join(fmt(x) for x in row))
        return 0 if m["status"] == "ok" else 1
    stages = ([s.strip() for s in args.stages.split(",") if s.strip()]
              if args.command == "run" and args.stages else
              (cfg.stages if args.command == "run" else [args.command]))
    bad = [s for s in stages if s not in STAGES]
    if bad:
        print(f"unknown stages {bad}", file=sys.stderr)
        return 2
    m = run(cfg, args.out, stages, args.workers, use_cache=not args.no_cache).manifest
    print(f"manifest_{m['config_hash'][:12]}.json {m['status']} {m['manifest_sha256']}")
    for f in m["failures"]:
        print(f"failed stage {f['stage']}: {f['error']}: {f['message']}", file=sys.stderr)
    return 0 if m["status"] == "ok" else 1


if __name__ == "__main__":
    sys.exit(main())
