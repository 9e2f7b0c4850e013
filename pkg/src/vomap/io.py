"""File formats: obstacle/radio grids, measurement CSV, fitted models, manifests.

Every writer emits UTF-8 text with LF line endings and shortest round-trip
float formatting, so write -> read -> write is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .diffraction import VoglerConfig
from .geometry import GridSpec, Link, ObstacleMap
from .propagation import NMAE_DEFINITION, Measurement, PathLossParams, RadioMapModel
from .stn import POOLED_FEATURE_NAMES, POOLED_FEATURES_VERSION, ScatterRegressor

MAP_SCHEMA = "vomap.obstacle-map/1"
RADIO_SCHEMA = "vomap.radio-map/1"
MODEL_SCHEMA = "vomap.model/1"
MANIFEST_SCHEMA = "vomap.manifest/1"
CSV_HEADER = "tx_x,tx_y,tx_z,rx_x,rx_y,rx_z,atten_db"


class FormatError(ValueError):
    """Malformed input file; carries the position of the problem."""

    def __init__(self, path, msg: str, line: Optional[int] = None, column: Optional[int] = None):
        self.path = str(path)
        self.line = line
        self.column = column
        where = f"{path}"
        if line is not None:
            where += f":{line}"
            if column is not None:
                where += f":{column}"
        super().__init__(f"{where}: {msg}")

    def as_dict(self) -> dict:
        return {"error": "format", "path": self.path, "line": self.line,
                "column": self.column, "message": str(self)}


def fmt(x: float) -> str:
    return repr(float(x))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def _write_text(path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _read_lines(path) -> List[str]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            text = f.read()
    except UnicodeDecodeError as exc:
        raise FormatError(path, f"not UTF-8: {exc}") from None
    if "\r" in text:
        raise FormatError(path, "expected LF line endings")
    return text.split("\n")


def _json_line(path, text: str, line: int):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(path, f"invalid JSON: {exc.msg}", line, exc.colno) from None


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


# ---------------------------------------------------------------------------
# grids


def format_grid(schema: str, grid: GridSpec, values: np.ndarray, extra: Optional[dict] = None) -> str:
    header = {"schema": schema, "M1": grid.rows, "M2": grid.cols,
              "cell_size": grid.cell_size, "origin": list(grid.origin)}
    if extra:
        header.update(extra)
    rows = [" ".join(fmt(v) for v in row) for row in np.asarray(values, dtype=float)]
    return json.dumps(header, sort_keys=True) + "\n" + "\n".join(rows) + "\n"


def parse_grid(path, expect_schema: str) -> Tuple[GridSpec, np.ndarray, dict]:
    lines = _read_lines(path)
    if not lines or not lines[0].strip():
        raise FormatError(path, "missing header", 1)
    header = _json_line(path, lines[0], 1)
    if not isinstance(header, dict):
        raise FormatError(path, "header must be a JSON object", 1, 1)
    schema = header.get("schema")
    if schema != expect_schema:
        raise FormatError(path, f"schema mismatch: expected {expect_schema!r}, found {schema!r}", 1)
    try:
        grid = GridSpec(header["M1"], header["M2"], header["cell_size"], tuple(header["origin"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(path, f"bad header: {exc}", 1) from None
    body = lines[1:]
    if body and body[-1] == "":
        body = body[:-1]
    if len(body) != grid.rows:
        raise FormatError(path, f"expected {grid.rows} rows, found {len(body)}", len(lines))
    values = np.empty(grid.shape)
    for i, text in enumerate(body):
        toks = text.split(" ")
        if len(toks) != grid.cols:
            raise FormatError(path, f"expected {grid.cols} values, found {len(toks)}", i + 2)
        col = 1
        for j, tok in enumerate(toks):
            try:
                values[i, j] = float(tok)
            except ValueError:
                raise FormatError(path, f"not a number: {tok!r}", i + 2, col) from None
            col += len(tok) + 1
    return grid, values, header


def write_map(path, H: ObstacleMap):
    _write_text(path, format_grid(MAP_SCHEMA, H.grid, H.heights))


def read_map(path) -> ObstacleMap:
    grid, values, _ = parse_grid(path, MAP_SCHEMA)
    try:
        return ObstacleMap(grid, values)
    except ValueError as exc:
        raise FormatError(path, str(exc)) from None


def write_radio_map(path, grid: GridSpec, values: np.ndarray, meta: dict):
    _write_text(path, format_grid(RADIO_SCHEMA, grid, values, {"meta": meta}))


def read_radio_map(path) -> Tuple[GridSpec, np.ndarray, dict]:
    grid, values, header = parse_grid(path, RADIO_SCHEMA)
    return grid, values, header.get("meta", {})


# ---------------------------------------------------------------------------
# measurements


def format_measurements(data: Sequence[Measurement]) -> str:
    out = [CSV_HEADER]
    for m in data:
        out.append(",".join(fmt(v) for v in (*m.link.tx, *m.link.rx, m.y)))
    return "\n".join(out) + "\n"


def write_measurements(path, data: Sequence[Measurement]):
    _write_text(path, format_measurements(data))


def read_measurements(path) -> List[Measurement]:
    lines = _read_lines(path)
    if lines[0] != CSV_HEADER:
        raise FormatError(path, f"header must be {CSV_HEADER!r}", 1, 1)
    body = lines[1:]
    if body and body[-1] == "":
        body = body[:-1]
    data = []
    for k, text in enumerate(body):
        line = k + 2
        toks = text.split(",")
        if len(toks) != 7:
            raise FormatError(path, f"expected 7 fields, found {len(toks)}", line)
        vals = []
        col = 1
        for tok in toks:
            try:
                vals.append(float(tok))
            except ValueError:
                raise FormatError(path, f"not a number: {tok!r}", line, col) from None
            col += len(tok) + 1
        try:
            data.append(Measurement(Link(vals[:3], vals[3:6]), vals[6]))
        except ValueError as exc:
            raise FormatError(path, str(exc), line) from None
    return data


# ---------------------------------------------------------------------------
# models


def model_to_dict(model: RadioMapModel, map_path: str, map_sha256: str,
                  training: Optional[dict] = None) -> dict:
    v = model.vogler
    return {
        "schema": MODEL_SCHEMA,
        "path_loss": {"beta0": model.los.beta0, "gamma0": model.los.gamma0},
        "vogler": {"wavelength": v.wavelength, "series_tolerance": v.series_tolerance,
                   "max_series_terms": v.max_series_terms, "max_edges_exact": v.max_edges_exact},
        "scatter": {"kind": model.scatter.kind,
                    "weights": [float(w) for w in model.scatter.weights],
                    "feature_shape": (list(model.scatter.feature_shape)
                                      if model.scatter.feature_shape is not None else None),
                    "features": list(POOLED_FEATURE_NAMES),
                    "features_version": POOLED_FEATURES_VERSION},
        "eccentricity": model.eccentricity,
        "indicator_mode": model.indicator_mode,
        "obstacle_map": {"path": map_path, "sha256": map_sha256},
        "nmae_definition": NMAE_DEFINITION,
        "training": training or {},
    }


def write_model(path, model: RadioMapModel, map_path, training: Optional[dict] = None):
    """Write the model JSON; the obstacle map is written to ``map_path`` and
    referenced by a path relative to the model file plus its content hash."""
    write_map(map_path, model.H)
    rel = os.path.relpath(map_path, start=os.path.dirname(os.path.abspath(path)))
    _write_text(path, dumps_json(model_to_dict(model, Path(rel).as_posix(),
                                               sha256_file(map_path), training)))


def read_model(path) -> RadioMapModel:
    text = Path(path).read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(path, f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from None
    if not isinstance(d, dict) or d.get("schema") != MODEL_SCHEMA:
        found = d.get("schema") if isinstance(d, dict) else None
        raise FormatError(path, f"schema mismatch: expected {MODEL_SCHEMA!r}, found {found!r}")
    try:
        ref = d["obstacle_map"]
        map_path = Path(path).parent / ref["path"]
        digest = sha256_file(map_path)
        if digest != ref["sha256"]:
            raise FormatError(path, f"obstacle map {map_path} does not match the recorded hash")
        sc = d["scatter"]
        if sc["features_version"] != POOLED_FEATURES_VERSION:
            raise FormatError(path, "scatter feature version mismatch")
        return RadioMapModel(
            H=read_map(map_path),
            los=PathLossParams(d["path_loss"]["beta0"], d["path_loss"]["gamma0"]),
            vogler=VoglerConfig(**d["vogler"]),
            scatter=ScatterRegressor(sc["kind"], sc["weights"], sc["feature_shape"]),
            eccentricity=d["eccentricity"],
            indicator_mode=d["indicator_mode"],
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(path, f"missing or invalid field: {exc}") from None


# ---------------------------------------------------------------------------
# manifests


def versions() -> Dict[str, str]:
    import scipy
    return {"vomap": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def manifest_path(output) -> Path:
    return Path(str(output) + ".manifest.json")


def write_manifest(output, command: str, config: dict, seed: int,
                   inputs: Iterable = (), outputs: Iterable = ()) -> Path:
    """Record what produced ``output``: command, resolved config and its
    hash, seed, library versions and hashes of inputs and outputs."""
    cfg_text = json.dumps(config, sort_keys=True)
    doc = {
        "schema": MANIFEST_SCHEMA,
        "command": command,
        "config": config,
        "config_sha256": sha256_bytes(cfg_text.encode()),
        "seed": seed,
        "versions": versions(),
        "inputs": {Path(p).name: sha256_file(p) for p in inputs},
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
    }
    mp = manifest_path(output)
    _write_text(mp, dumps_json(doc))
    return mp
