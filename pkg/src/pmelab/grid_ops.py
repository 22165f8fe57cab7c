"""Uniform cell-centered grids, discrete operators and space-time norms.

Fields are plain numpy arrays of shape ``(n,)`` in 1D and ``(n, n)`` in 2D
(axis 0 is x, axis 1 is y). Vector fields carry a leading component axis.
Values outside the box are taken to be zero wherever a stencil needs them.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class Grid:
    dim: int
    n: int
    L: float

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 8:
            raise ValueError(f"need at least 8 cells per axis, got {self.n}")
        if not self.L > 0:
            raise ValueError("half-width L must be positive")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @cached_property
    def centers(self) -> np.ndarray:
        """1D cell-center coordinates, symmetric about 0."""
        # built symmetrically so that centers[i] == -centers[n-1-i] bitwise
        half = (np.arange(self.n) - (self.n - 1) / 2.0) * self.h
        return half

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Per-axis coordinate arrays broadcast to the field shape."""
        if self.dim == 1:
            return (self.centers,)
        X, Y = np.meshgrid(self.centers, self.centers, indexing="ij")
        return (X, Y)

    @cached_property
    def radius(self) -> np.ndarray:
        if self.dim == 1:
            return np.abs(self.centers)
        X, Y = self.coords
        return np.sqrt(X * X + Y * Y)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    @property
    def volume(self) -> float:
        return (2.0 * self.L) ** self.dim


def gradient(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Cell-centered gradient: centered inside, second-order one-sided at the edges."""
    if grid.dim == 1:
        return np.gradient(f, grid.h, edge_order=2)[np.newaxis]
    return np.stack(np.gradient(f, grid.h, edge_order=2))


def divergence(F: np.ndarray, grid: Grid) -> np.ndarray:
    """Cell-centered divergence, the same stencil as :func:`gradient` per component.

    On fields supported away from the boundary this is minus the transpose
    of :func:`gradient`.
    """
    out = np.zeros(F.shape[1:])
    for axis in range(grid.dim):
        out += np.gradient(F[axis], grid.h, axis=axis, edge_order=2)
    return out


def laplacian(f: np.ndarray, grid: Grid) -> np.ndarray:
    """3-point (1D) / 5-point (2D) Laplacian with zero values outside the box."""
    return face_divergence(face_gradient(f, grid), grid)


def face_coefficients(c: np.ndarray, grid: Grid) -> tuple[np.ndarray, ...]:
    """Arithmetic means of a cell coefficient on every face, boundary faces included.

    Boundary faces reuse the adjacent cell value. Returns one array per axis,
    of length n+1 along that axis.
    """
    out = []
    for axis in range(grid.dim):
        ext = np.concatenate(
            [np.take(c, [0], axis=axis), c, np.take(c, [-1], axis=axis)], axis=axis
        )
        lo = np.take(ext, np.arange(0, grid.n + 1), axis=axis)
        hi = np.take(ext, np.arange(1, grid.n + 2), axis=axis)
        out.append(0.5 * (lo + hi))
    return tuple(out)


def face_gradient(f: np.ndarray, grid: Grid) -> tuple[np.ndarray, ...]:
    """Differences across every face (zero outside the box), one array per axis."""
    g = np.pad(f, 1)
    if grid.dim == 1:
        return (np.diff(g) / grid.h,)
    return (np.diff(g[:, 1:-1], axis=0) / grid.h, np.diff(g[1:-1, :], axis=1) / grid.h)


def face_divergence(flux: Sequence[np.ndarray], grid: Grid) -> np.ndarray:
    """Net outflow per cell of face-located fluxes, divided by h."""
    out = np.diff(flux[0], axis=0) / grid.h
    if grid.dim == 2:
        out = out + np.diff(flux[1], axis=1) / grid.h
    return out


def flux_divergence(coef: np.ndarray | tuple, f: np.ndarray, grid: Grid) -> np.ndarray:
    """Conservative ``div(coef * grad f)`` with arithmetic-mean face coefficients.

    ``coef`` is a cell field or the tuple returned by :func:`face_coefficients`.
    With ``coef == 1`` this is exactly :func:`laplacian`'s stencil.
    """
    faces = coef if isinstance(coef, tuple) else face_coefficients(coef, grid)
    grads = face_gradient(f, grid)
    return face_divergence([c * g for c, g in zip(faces, grads)], grid)


def pointwise_magnitude(F: np.ndarray) -> np.ndarray:
    """Euclidean length of a vector field with leading component axis."""
    if F.shape[0] == 1:
        return np.abs(F[0])
    return np.sqrt(np.sum(F * F, axis=0))


def spatial_integral(f: np.ndarray, grid: Grid, p: int = 1) -> float:
    """``sum |f|^p h^d`` with no outer root. Vector fields use the Euclidean length."""
    if f.ndim == grid.dim + 1:
        f = pointwise_magnitude(f)
    a = np.abs(f)
    return float(np.sum(a**p) * grid.cell_volume)


def lp_norm(f: np.ndarray, grid: Grid, p: int = 2) -> float:
    if p not in (1, 2, 3, 4):
        raise ValueError(f"p must be one of 1, 2, 3, 4; got {p}")
    return spatial_integral(f, grid, p) ** (1.0 / p)


def negative_part(f):
    """``|f|_-``: zero where ``f > 0`` and ``-f`` elsewhere."""
    return np.where(f > 0, 0.0, -f) + 0.0


def spacetime_accumulate(integrals: Sequence[float], dts: Sequence[float], p: int = 1) -> float:
    """Trapezoidal time integral of per-time spatial integrals, then the ``1/p`` root.

    ``integrals`` holds the spatial integrals ``sum |f|^p h^d`` at the time
    nodes, ``dts`` the gaps between consecutive nodes.
    """
    integrals = np.asarray(integrals, dtype=float)
    dts = np.asarray(dts, dtype=float)
    if integrals.ndim != 1 or len(integrals) != len(dts) + 1:
        raise ValueError(
            f"need one more integral than time steps, got {len(integrals)} and {len(dts)}"
        )
    total = float(np.sum(0.5 * (integrals[1:] + integrals[:-1]) * dts))
    return total ** (1.0 / p) if p != 1 else total


# ------------------------------------------------------------ snapshot I/O


def write_field_csv(path: Path | str, f: np.ndarray, grid: Grid) -> None:
    """Write a field as ``x[,y],value`` rows in row-major order, 17 significant digits."""
    Path(path).write_text(field_to_csv(f, grid))


def field_to_csv(f: np.ndarray, grid: Grid) -> str:
    buf = io.StringIO()
    if grid.dim == 1:
        buf.write("x,value\n")
        data = np.column_stack([grid.centers, f])
        np.savetxt(buf, data, fmt=FLOAT_FMT, delimiter=",")
    else:
        buf.write("x,y,value\n")
        X, Y = grid.coords
        data = np.column_stack([X.ravel(), Y.ravel(), f.ravel()])
        np.savetxt(buf, data, fmt=FLOAT_FMT, delimiter=",")
    return buf.getvalue()


def read_field_csv(path: Path | str, grid: Grid) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = ["x", "value"] if grid.dim == 1 else ["x", "y", "value"]
        if header != expected:
            raise ValueError(f"{path}: header {header} does not match {expected}")
        values = np.array([float(row[-1]) for row in reader])
    if values.size != grid.n**grid.dim:
        raise ValueError(f"{path}: {values.size} values for a grid of {grid.shape}")
    return values.reshape(grid.shape)
