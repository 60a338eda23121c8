"""Field files and JSON problem configs.

A field file is a short ASCII header followed by raw little-endian float64
values in the grid's node order (slice-major)::

    MAFLOW1
    n=1
    h=0.10000000000000001
    dt=0.0050000000000000001
    T=0.25
    nodes=1586
    domain={"kind": "ball", ...}
    DATA
    <8 * nodes bytes>
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GridMismatch, MAFlowError
from .fields import SpaceTimeField
from .grid import ComplexGrid, DomainSpec, build_grid
from .solver import FlowProblem, SolverParams
from .stencil import MAConvention, make_frames

MAGIC = "MAFLOW1"
_DTYPE = np.dtype("<f8")


class FieldFormatError(MAFlowError):
    """Malformed field file."""


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_field(path, field: SpaceTimeField) -> None:
    g = field.grid
    header = [
        MAGIC,
        f"n={g.n}",
        f"h={fmt(g.h)}",
        f"dt={fmt(g.dt)}",
        f"T={fmt(g.T)}",
        f"nodes={g.n_nodes}",
        "domain=" + json.dumps(g.domain.to_dict(), sort_keys=True),
        "DATA",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(field.values, dtype=_DTYPE).tobytes())


def read_header(fh) -> dict:
    if fh.readline().decode("ascii", "replace").strip() != MAGIC:
        raise FieldFormatError("missing MAFLOW1 magic line")
    meta = {}
    for raw in iter(fh.readline, b""):
        line = raw.decode("ascii", "replace").rstrip("\n")
        if line == "DATA":
            break
        key, sep, val = line.partition("=")
        if not sep:
            raise FieldFormatError(f"bad header line {line!r}")
        meta[key] = val
    else:
        raise FieldFormatError("header has no DATA line")
    try:
        return {
            "n": int(meta["n"]),
            "h": float(meta["h"]),
            "dt": float(meta["dt"]),
            "T": float(meta["T"]),
            "nodes": int(meta["nodes"]),
            "domain": DomainSpec.from_dict(json.loads(meta["domain"])),
        }
    except (KeyError, ValueError) as exc:
        raise FieldFormatError(f"incomplete header: {exc}") from None


def read_field(path, grid: ComplexGrid | None = None) -> SpaceTimeField:
    """Read a field; if ``grid`` is given the header must describe the same grid."""
    with open(path, "rb") as fh:
        meta = read_header(fh)
        data = fh.read()
    if grid is None:
        grid = build_grid(meta["domain"], meta["h"], meta["dt"], meta["T"])
    elif (meta["domain"] != grid.domain or meta["h"] != grid.h or meta["dt"] != grid.dt
          or meta["T"] != grid.T):
        raise GridMismatch(f"{path}: header does not match the configured grid")
    if meta["nodes"] != grid.n_nodes or len(data) != 8 * grid.n_nodes:
        raise GridMismatch(f"{path}: expected {grid.n_nodes} nodes, header says {meta['nodes']}")
    vals = np.frombuffer(data, dtype=_DTYPE).astype(float).reshape(grid.n_times, grid.n_space)
    return SpaceTimeField(grid, vals)


# ---------------------------------------------------------------------------
# problem configs


@dataclass
class RunConfig:
    problem: FlowProblem
    grid: ComplexGrid
    params: SolverParams
    raw: dict


def load_config(path) -> RunConfig:
    raw = json.loads(Path(path).read_text())
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> RunConfig:
    try:
        dom = DomainSpec.from_dict(raw["domain"])
        T, h, dt = float(raw["T"]), float(raw["h"]), float(raw["dt"])
        F, g, hdata = raw["F"], raw["g"], raw["hdata"]
    except KeyError as exc:
        raise MAFlowError(f"config is missing key {exc}") from None
    conv = None
    if "convention" in raw and "cn" in raw["convention"]:
        conv = MAConvention(float(raw["convention"]["cn"]))
    s = raw.get("solver", {})
    frames = make_frames(dom.n, int(s["frames"])) if s.get("frames") else None
    params = SolverParams(
        tol=float(s.get("tol", 1e-8)),
        max_iter=int(s.get("maxIter", 5000)),
        damping=float(s.get("damping", 0.5)),
        frames=frames,
        method=s.get("method", "fixed-point"),
    )
    prob = FlowProblem(dom, F, g, hdata, T, conv, name=raw.get("name", ""))
    grid = build_grid(dom, h, dt, T)
    return RunConfig(prob, grid, params, raw)


def config_dict(prob: FlowProblem, grid: ComplexGrid, params: SolverParams | None = None) -> dict:
    """Inverse of config_from_dict for problems built from expression strings."""
    params = SolverParams() if params is None else params
    src = prob.expr_sources()
    out = {
        "name": prob.name,
        "domain": {k: v for k, v in prob.domain.to_dict().items() if k != "center"},
        "T": grid.T, "h": grid.h, "dt": grid.dt,
        "F": src["F"], "g": src["g"], "hdata": src["h"],
        "convention": {"cn": prob.conv.c_n},
        "solver": {"tol": params.tol, "maxIter": params.max_iter, "damping": params.damping},
    }
    if params.frames is not None:
        out["solver"]["frames"] = params.frames.m
    return out
