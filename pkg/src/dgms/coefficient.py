"""Piecewise-constant scalar diffusion fields on the fine mesh.

A coefficient stores one positive value per fine element (isotropic,
A = a(x) I) together with its spectral bounds. Raster files use an ASCII
format: `nx ny`, then `xmin ymin xmax ymax`, then ny rows of nx values,
top row first; `#` starts a comment line.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, IngestionError


@dataclass(frozen=True)
class Coefficient:
    mesh: object
    values: np.ndarray  # one value per fine element

    def __post_init__(self):
        if len(self.values) != self.mesh.nel:
            raise ConfigError("coefficient length does not match element count")
        if np.min(self.values) <= 0.0:
            raise ConfigError("coefficient values must be strictly positive")

    @property
    def bounds(self):
        return float(np.min(self.values)), float(np.max(self.values))


def constant(mesh, value):
    value = float(value)
    if value <= 0.0:
        raise ConfigError(f"constant coefficient must be positive, got {value}")
    return Coefficient(mesh, np.full(mesh.nel, value))


def periodic_stripes(mesh, period, low, high, axis="x"):
    """Stripes of width period/2 alternating low/high along the given axis."""
    if low <= 0.0 or high <= 0.0:
        raise ConfigError("stripe values must be positive")
    if axis not in ("x", "y"):
        raise ConfigError(f"stripe axis must be 'x' or 'y', got {axis!r}")
    w = mesh.width
    stripe = period / 2.0
    cells = stripe / w
    if abs(cells - round(cells)) > 1e-9 or round(cells) < 1:
        raise ConfigError(
            f"stripe period {period} not resolved by fine cells of width {w}"
        )
    cells = int(round(cells))
    idx = mesh.coords[:, 0] if axis == "x" else mesh.coords[:, 1]
    odd = (idx // cells) % 2
    values = np.where(odd == 0, low, high)
    return Coefficient(mesh, values.astype(float))


@dataclass(frozen=True)
class RasterField:
    nx: int
    ny: int
    extent: tuple  # (xmin, ymin, xmax, ymax)
    values: np.ndarray  # (ny, nx), row 0 = max y

    def sample(self, x, y):
        xmin, ymin, xmax, ymax = self.extent
        dx = (xmax - xmin) / self.nx
        dy = (ymax - ymin) / self.ny
        j = np.clip(((x - xmin) / dx).astype(int), 0, self.nx - 1)
        i = np.clip(((y - ymin) / dy).astype(int), 0, self.ny - 1)
        return self.values[self.ny - 1 - i, j]


def parse_raster(path):
    tokens = []  # (lineno, [fields])
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            tokens.append((lineno, stripped.split()))

    if not tokens:
        raise IngestionError("empty raster file")
    lineno, header = tokens[0]
    if len(header) != 2:
        raise IngestionError("expected header 'nx ny'", line=lineno)
    try:
        nx, ny = int(header[0]), int(header[1])
    except ValueError:
        raise IngestionError("non-integer raster dimensions", line=lineno) from None
    if nx < 1 or ny < 1:
        raise IngestionError("raster dimensions must be positive", line=lineno)

    if len(tokens) < 2:
        raise IngestionError("missing extent line", line=lineno)
    lineno, ext = tokens[1]
    if len(ext) != 4:
        raise IngestionError("expected extent 'xmin ymin xmax ymax'", line=lineno)
    try:
        xmin, ymin, xmax, ymax = map(float, ext)
    except ValueError:
        raise IngestionError("non-numeric extent", line=lineno) from None
    if xmax <= xmin or ymax <= ymin:
        raise IngestionError("degenerate raster extent", line=lineno)

    rows = tokens[2:]
    if len(rows) != ny:
        raise IngestionError(f"expected {ny} data rows, found {len(rows)}", line=lineno)
    values = np.empty((ny, nx))
    for i, (lineno, fields) in enumerate(rows):
        if len(fields) != nx:
            raise IngestionError(
                f"expected {nx} values per row, found {len(fields)}", line=lineno
            )
        try:
            row = np.array([float(v) for v in fields])
        except ValueError:
            raise IngestionError("non-numeric raster value", line=lineno) from None
        if np.min(row) <= 0.0:
            raise IngestionError("raster values must be strictly positive", line=lineno)
        values[i] = row
    return RasterField(nx, ny, (xmin, ymin, xmax, ymax), values)


def load_raster(path, mesh):
    """Map a raster onto the fine mesh by element-midpoint sampling."""
    field = parse_raster(path)
    xmin, ymin, xmax, ymax = field.extent
    if xmin > 0.0 + 1e-12 or ymin > 0.0 + 1e-12 or xmax < 1.0 - 1e-12 or ymax < 1.0 - 1e-12:
        raise IngestionError("raster extent does not cover the unit square")
    mid = (mesh.coords + 0.5) * mesh.width
    values = field.sample(mid[:, 0], mid[:, 1])
    return Coefficient(mesh, np.asarray(values, dtype=float))


def write_raster(path, field):
    """Serialize in the same decimal format accepted by parse_raster."""
    with open(path, "w") as fh:
        fh.write(f"{field.nx} {field.ny}\n")
        fh.write(" ".join(repr(float(v)) for v in field.extent) + "\n")
        for row in field.values:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def spectral_bounds(coefficient):
    """Exact (min, max) over fine elements inside the domain."""
    return coefficient.bounds
