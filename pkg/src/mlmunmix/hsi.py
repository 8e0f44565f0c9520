"""Cube, endmember, and map containers with bit-exact file formats.

A cube lives on disk as ``<name>.raw`` (raw little-endian float64 in
band-sequential order) next to a ``<name>.hdr.json`` sidecar carrying the
extents, dtype, byte order, and optional wavelengths.  Endmember
libraries are plain CSV, one column per signature.  Abundance and
transition-probability maps export as full-precision CSV plus 8-bit
grayscale PGM for quick visual inspection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ASC_TOL = 1e-6


@dataclass
class HsiCube:
    """H x W x B reflectance cube, optionally with band wavelengths in nm."""

    values: np.ndarray
    wavelengths: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError(f"cube values must be H x W x B, got {self.values.shape}")
        if min(self.values.shape) < 1:
            raise ValueError(f"cube extents must be positive, got {self.values.shape}")
        if self.wavelengths is not None:
            self.wavelengths = np.asarray(self.wavelengths, dtype=np.float64)
            if self.wavelengths.shape != (self.values.shape[2],):
                raise ValueError("wavelength list must have one entry per band")
            if np.any(np.diff(self.wavelengths) <= 0):
                raise ValueError("wavelengths must be strictly increasing")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    def as_pixel_matrix(self) -> np.ndarray:
        """Flatten to (N, B) pixel rows."""
        return self.values.reshape(self.n_pixels, self.bands)


def validate_endmembers(E: np.ndarray) -> np.ndarray:
    """Check a B x R endmember matrix: entries in [0,1], nonzero columns."""
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2 or E.shape[1] < 1:
        raise ValueError(f"endmember matrix must be B x R with R >= 1, got {E.shape}")
    if np.any(E < 0) or np.any(E > 1):
        raise ValueError("endmember values must lie in [0, 1]")
    norms = np.linalg.norm(E, axis=0)
    if np.any(norms == 0):
        raise ValueError("endmember columns must be nonzero")
    return E


def validate_abundance(A: np.ndarray, tol: float = ASC_TOL) -> np.ndarray:
    """Check an H x W x R map: nonnegative, each pixel summing to one."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 3:
        raise ValueError(f"abundance map must be H x W x R, got {A.shape}")
    if np.any(A < -tol):
        raise ValueError("abundance map has negative fractions")
    sums = A.sum(axis=2)
    worst = np.abs(sums - 1.0).max()
    if worst > tol:
        raise ValueError(f"abundance sums deviate from 1 by up to {worst:.3e}")
    return A


def validate_probability(P: np.ndarray, lower: float = 0.0, tol: float = 1e-9) -> np.ndarray:
    """Check an H x W transition-probability map against [lower, 1]."""
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2:
        raise ValueError(f"probability map must be H x W, got {P.shape}")
    if np.any(P > 1.0 + tol):
        raise ValueError("transition probabilities exceed 1")
    if np.any(P < lower - tol):
        raise ValueError(f"transition probabilities fall below the {lower} bound")
    return P


# ---------------------------------------------------------------------------
# cube format


def _cube_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    name = p.name
    if name.endswith(".hdr.json"):
        base = p.with_name(name[: -len(".hdr.json")])
    elif p.suffix == ".raw":
        base = p.with_suffix("")
    else:
        base = p
    return base.with_name(base.name + ".raw"), base.with_name(base.name + ".hdr.json")


def write_cube(cube: HsiCube, path, provenance: dict | None = None) -> None:
    """Write ``<path>.raw`` + ``<path>.hdr.json`` losslessly (BSQ float64 LE)."""
    raw_path, hdr_path = _cube_paths(path)
    header = {
        "height": cube.height,
        "width": cube.width,
        "bands": cube.bands,
        "dtype": "float64",
        "byte_order": "little",
    }
    if cube.wavelengths is not None:
        header["wavelengths"] = [float(w) for w in cube.wavelengths]
    if provenance:
        header["provenance"] = provenance
    hdr_path.write_text(json.dumps(header, indent=1, sort_keys=True), encoding="utf-8")
    bsq = np.ascontiguousarray(np.moveaxis(cube.values, 2, 0), dtype="<f8")
    bsq.tofile(raw_path)


def read_cube(path) -> HsiCube:
    raw_path, hdr_path = _cube_paths(path)
    if not hdr_path.exists():
        raise FileNotFoundError(f"missing cube header {hdr_path}")
    if not raw_path.exists():
        raise FileNotFoundError(f"missing cube payload {raw_path}")
    header = json.loads(hdr_path.read_text(encoding="utf-8"))
    if header.get("dtype") != "float64":
        raise ValueError(f"unknown cube dtype {header.get('dtype')!r}")
    if header.get("byte_order", "little") != "little":
        raise ValueError(f"unknown byte order {header.get('byte_order')!r}")
    h, w, b = int(header["height"]), int(header["width"]), int(header["bands"])
    if min(h, w, b) < 1:
        raise ValueError(f"cube extents must be positive, got {h}x{w}x{b}")
    data = np.fromfile(raw_path, dtype="<f8")
    if data.size != h * w * b:
        raise ValueError(
            f"cube payload holds {data.size} values, header promises {h * w * b}"
        )
    values = np.moveaxis(data.reshape(b, h, w), 0, 2)
    wl = header.get("wavelengths")
    return HsiCube(values, None if wl is None else np.asarray(wl, dtype=np.float64))


# ---------------------------------------------------------------------------
# endmember CSV


def write_endmembers(E: np.ndarray, path, names: list[str] | None = None) -> None:
    """One column per endmember, one row per band, header row with names."""
    E = validate_endmembers(E)
    bands, count = E.shape
    if names is None:
        names = [f"em_{i + 1}" for i in range(count)]
    if len(names) != count:
        raise ValueError("need one name per endmember column")
    lines = [",".join(names)]
    for b in range(bands):
        lines.append(",".join(repr(float(v)) for v in E[b]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_endmembers(path) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8")
    rows = [line for line in text.splitlines() if line.strip() and not line.startswith("#")]
    if len(rows) < 2:
        raise ValueError(f"{path}: endmember file needs a header row and at least one band")
    ncols = len(rows[0].split(","))
    values = np.empty((len(rows) - 1, ncols))
    for i, line in enumerate(rows[1:], start=2):
        cells = line.split(",")
        if len(cells) != ncols:
            raise ValueError(f"{path}: row {i} has {len(cells)} cells, expected {ncols}")
        for j, cell in enumerate(cells):
            try:
                v = float(cell)
            except ValueError:
                raise ValueError(f"{path}: non-numeric cell {cell!r} at row {i}") from None
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{path}: value {v} at row {i} outside [0, 1]")
            values[i - 2, j] = v
    return validate_endmembers(values)


# ---------------------------------------------------------------------------
# map exports


def write_pgm(values: np.ndarray, path, comment: str | None = None) -> None:
    """8-bit grayscale PGM (P5); values scaled by 255, rounded, clamped."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"PGM export needs a 2-D map, got {arr.shape}")
    gray = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    h, w = gray.shape
    head = "P5\n"
    if comment:
        head += f"# {comment}\n"
    head += f"{w} {h}\n255\n"
    with open(path, "wb") as f:
        f.write(head.encode("ascii"))
        f.write(gray.tobytes())


def write_map_csv(values: np.ndarray, path, comment: str | None = None) -> None:
    """Full-precision CSV, one line per image row."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"map CSV export needs a 2-D map, got {arr.shape}")
    lines = []
    if comment:
        lines.append(f"# {comment}")
    for row in arr:
        lines.append(",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_map_csv(path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        rows.append([float(c) for c in line.split(",")])
    if not rows:
        raise ValueError(f"{path}: empty map file")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: ragged rows with widths {sorted(widths)}")
    return np.asarray(rows, dtype=np.float64)


def histogram_bins(values: np.ndarray, nbins: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Uniform bins over [min, max]; a constant map collapses into bin one."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = float(flat.min()), float(flat.max())
    if hi <= lo:
        edges = np.linspace(lo, lo + 1.0, nbins + 1)
        counts = np.zeros(nbins, dtype=np.int64)
        counts[0] = flat.size
        return counts, edges
    counts, edges = np.histogram(flat, bins=nbins, range=(lo, hi))
    return counts, edges


def write_maps(abundance: np.ndarray, p: np.ndarray, out_dir, comment: str | None = None) -> list[Path]:
    """Export abundance planes and the P map as PGM + CSV, plus ``phist.csv``."""
    A = validate_abundance(abundance)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    P = np.asarray(p, dtype=np.float64)
    if P.shape != A.shape[:2]:
        raise ValueError(f"abundance {A.shape} and P {P.shape} shapes disagree")
    written = []
    for k in range(A.shape[2]):
        plane = A[:, :, k]
        for suffix, writer in ((".pgm", write_pgm), (".csv", write_map_csv)):
            path = out / f"abundance_{k + 1}{suffix}"
            writer(plane, path, comment)
            written.append(path)
    write_pgm(P, out / "pmap.pgm", comment)
    write_map_csv(P, out / "pmap.csv", comment)
    written += [out / "pmap.pgm", out / "pmap.csv"]
    counts, edges = histogram_bins(P)
    lines = ["bin_start,bin_end,count"]
    if comment:
        lines.insert(0, f"# {comment}")
    for i, c in enumerate(counts):
        lines.append(f"{edges[i]!r},{edges[i + 1]!r},{int(c)}")
    (out / "phist.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(out / "phist.csv")
    return written
