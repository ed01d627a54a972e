"""Point cloud file formats (ascii PLY, XYZ text) and the dataset manifest.

Coordinates are written with 9 significant digits, enough for a lossless
round trip at the millimeter scales the generator produces.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingFile, ParseError
from .geometry import PointCloud, RigidTransform


def write_xyz(path, cloud: PointCloud):
    """One whitespace-separated x y z triple per line."""
    with open(path, "w") as f:
        for x, y, z in cloud.points:
            f.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def read_xyz(path, unit: str = "millimeters") -> PointCloud:
    if not os.path.exists(path):
        raise MissingFile(path)
    pts = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) < 3:
                raise ParseError(f"expected 3 coordinates, got {len(fields)}", line=lineno)
            try:
                pts.append([float(v) for v in fields[:3]])
            except ValueError:
                raise ParseError(f"bad number in {line.strip()!r}", line=lineno)
    if not pts:
        raise ParseError("file contains no points", line=1)
    return PointCloud(np.array(pts), unit=unit)


def write_ply(path, cloud: PointCloud):
    """Vertex-only ascii PLY with float x y z properties."""
    pts = cloud.points
    with open(path, "w") as f:
        f.write("ply\n")
        f.write("format ascii 1.0\n")
        f.write(f"element vertex {len(pts)}\n")
        f.write("property float x\n")
        f.write("property float y\n")
        f.write("property float z\n")
        f.write("end_header\n")
        for x, y, z in pts:
            f.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def read_ply(path, unit: str = "millimeters") -> PointCloud:
    if not os.path.exists(path):
        raise MissingFile(path)
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic line", line=1)
    n_vertex = None
    n_props_before = 0
    coord_cols = {}
    in_vertex_element = False
    body_start = None
    for i, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if line == "end_header":
            body_start = i
            break
        fields = line.split()
        if not fields:
            continue
        if fields[0] == "format":
            if fields[1] != "ascii":
                raise ParseError(f"unsupported format {fields[1]!r}", line=i)
        elif fields[0] == "element":
            in_vertex_element = fields[1] == "vertex"
            if in_vertex_element:
                try:
                    n_vertex = int(fields[2])
                except (IndexError, ValueError):
                    raise ParseError("bad 'element vertex' count", line=i)
        elif fields[0] == "property" and in_vertex_element:
            name = fields[-1]
            if name in ("x", "y", "z"):
                coord_cols[name] = n_props_before
            n_props_before += 1
    if body_start is None:
        raise ParseError("missing end_header", line=len(lines))
    if n_vertex is None:
        raise ParseError("missing 'element vertex' declaration", line=1)
    if set(coord_cols) != {"x", "y", "z"}:
        raise ParseError("vertex element must carry x y z properties", line=1)
    if n_vertex == 0:
        raise ParseError("vertex element is empty", line=1)

    body = lines[body_start:]
    if len(body) < n_vertex:
        raise ParseError(f"expected {n_vertex} vertex lines, found {len(body)}", line=len(lines))
    pts = np.empty((n_vertex, 3))
    cols = [coord_cols["x"], coord_cols["y"], coord_cols["z"]]
    for r in range(n_vertex):
        fields = body[r].split()
        lineno = body_start + 1 + r
        if len(fields) < n_props_before:
            raise ParseError(f"expected {n_props_before} values", line=lineno)
        try:
            pts[r] = [float(fields[c]) for c in cols]
        except ValueError:
            raise ParseError(f"bad number in {body[r]!r}", line=lineno)
    return PointCloud(pts, unit=unit)


def write_cloud(path, cloud: PointCloud):
    """Dispatch on extension: .ply or .xyz."""
    if str(path).endswith(".ply"):
        write_ply(path, cloud)
    elif str(path).endswith(".xyz"):
        write_xyz(path, cloud)
    else:
        raise ValueError(f"unsupported cloud extension: {path}")


def read_cloud(path, unit: str = "millimeters") -> PointCloud:
    if str(path).endswith(".ply"):
        return read_ply(path, unit=unit)
    if str(path).endswith(".xyz"):
        return read_xyz(path, unit=unit)
    raise ValueError(f"unsupported cloud extension: {path}")


# ---------------------------------------------------------------------------
# Dataset manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairRecord:
    x_path: str
    y_path: str
    transform: RigidTransform
    unit: str
    seed: int
    split: str  # "train" or "test"


@dataclass(frozen=True)
class DatasetManifest:
    pairs: tuple[PairRecord, ...] = field(default_factory=tuple)

    def split(self, tag: str) -> list[PairRecord]:
        return [p for p in self.pairs if p.split == tag]


def write_manifest(path, manifest: DatasetManifest):
    payload = {
        "pairs": [
            {
                "x_path": p.x_path,
                "y_path": p.y_path,
                "transform": p.transform.as_flat(),
                "unit": p.unit,
                "seed": p.seed,
                "split": p.split,
            }
            for p in manifest.pairs
        ]
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=1)
        f.write("\n")


def read_manifest(path, validate_files: bool = True) -> DatasetManifest:
    if not os.path.exists(path):
        raise MissingFile(path)
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(str(e), line=e.lineno)
    pairs = []
    for rec in payload.get("pairs", []):
        pair = PairRecord(
            x_path=rec["x_path"],
            y_path=rec["y_path"],
            transform=RigidTransform.from_flat(rec["transform"]),
            unit=rec["unit"],
            seed=int(rec["seed"]),
            split=rec["split"],
        )
        if validate_files:
            for rel in (pair.x_path, pair.y_path):
                full = rel if os.path.isabs(rel) else os.path.join(base, rel)
                if not os.path.exists(full):
                    raise MissingFile(full)
        pairs.append(pair)
    return DatasetManifest(pairs=tuple(pairs))


def resolve_pair_paths(manifest_path, record: PairRecord) -> tuple[str, str]:
    """Absolute x/y cloud paths for a record of the given manifest."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    out = []
    for rel in (record.x_path, record.y_path):
        out.append(rel if os.path.isabs(rel) else os.path.join(base, rel))
    return out[0], out[1]
