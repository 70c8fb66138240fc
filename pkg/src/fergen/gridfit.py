"""Scattered-data surface fitting onto a regular grid.

Node values g on an R x C grid are fitted to samples (x, y, v) by minimizing

    sum_p (interp(g; x_p, y_p) - v_p)^2
      + smoothing * [ sum ((d2x g) / sx^2)^2 + sum ((d2y g) / sy^2)^2 ]

where ``interp`` is bilinear interpolation on the grid, d2x and d2y are
second differences along grid rows and columns, and sx, sy are the axis
spacings normalized by their mean (so on square grids the penalty is the
plain [1, -2, 1] stencil and on anisotropic grids both axes are weighted
consistently). The minimizer solves one sparse symmetric
positive-semidefinite system. The penalty vanishes exactly on surfaces of
the form a + b*x + c*y + d*x*y, so the samples must pin those four modes;
constants and planes are reproduced exactly and the data residual is
non-increasing as the smoothing weight decreases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as sparse_linalg


class GridFitError(ValueError):
    """Raised when the fitting system is unsolvable or the grid is invalid."""


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a regular grid: node counts, origin and spacing (mm)."""

    rows: int
    cols: int
    origin: tuple[float, float]
    spacing: tuple[float, float]

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise GridFitError(f"grid must be at least 2x2, got {self.rows}x{self.cols}")
        if self.spacing[0] <= 0 or self.spacing[1] <= 0:
            raise GridFitError(f"grid spacing must be positive, got {self.spacing}")

    @property
    def x_coords(self) -> np.ndarray:
        return self.origin[0] + self.spacing[0] * np.arange(self.cols)

    @property
    def y_coords(self) -> np.ndarray:
        return self.origin[1] + self.spacing[1] * np.arange(self.rows)

    @classmethod
    def cover(cls, x, y, rows: int, cols: int, margin: float = 1.1) -> "GridSpec":
        """Grid covering ``margin`` times the bounding box of (x, y), centered on it."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        cx = 0.5 * (x.min() + x.max())
        cy = 0.5 * (y.min() + y.max())
        hx = 0.5 * (x.max() - x.min()) * margin
        hy = 0.5 * (y.max() - y.min()) * margin
        if hx == 0.0 or hy == 0.0:
            raise GridFitError("data bounding box has zero extent in x or y")
        return cls(rows=rows, cols=cols,
                   origin=(cx - hx, cy - hy),
                   spacing=(2.0 * hx / (cols - 1), 2.0 * hy / (rows - 1)))


@dataclass(frozen=True)
class GridSurface:
    """Fitted scalar values on a regular grid; node [r, c] sits at
    (origin_x + c*dx, origin_y + r*dy)."""

    values: np.ndarray
    origin: tuple[float, float]
    spacing: tuple[float, float]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 2 or v.shape[1] < 2:
            raise GridFitError(f"grid values must be at least 2x2, got shape {v.shape}")
        if self.spacing[0] <= 0 or self.spacing[1] <= 0:
            raise GridFitError(f"grid spacing must be positive, got {self.spacing}")
        if not np.isfinite(v).all():
            raise GridFitError("grid values contain non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def spec(self) -> GridSpec:
        return GridSpec(rows=self.values.shape[0], cols=self.values.shape[1],
                        origin=self.origin, spacing=self.spacing)

    def interpolate(self, x, y) -> np.ndarray:
        """Bilinear sample of the surface at (x, y), extrapolating edge cells."""
        rows_idx, cols_idx, weights = _bilinear_stencil(self.spec,
                                                        np.asarray(x, np.float64),
                                                        np.asarray(y, np.float64))
        return np.einsum("pk,pk->p", self.values[rows_idx, cols_idx], weights)


def _bilinear_stencil(spec: GridSpec, x: np.ndarray, y: np.ndarray):
    """Per-point 4-node stencil (row ids, col ids, weights).

    Points outside the grid reuse the nearest edge cell with raw offsets, so
    evaluation extends each edge cell's bilinear patch instead of clamping.
    """
    fx = (x - spec.origin[0]) / spec.spacing[0]
    fy = (y - spec.origin[1]) / spec.spacing[1]
    ci = np.clip(np.floor(fx).astype(np.intp), 0, spec.cols - 2)
    ri = np.clip(np.floor(fy).astype(np.intp), 0, spec.rows - 2)
    tx = fx - ci
    ty = fy - ri
    rows_idx = np.stack([ri, ri, ri + 1, ri + 1], axis=1)
    cols_idx = np.stack([ci, ci + 1, ci, ci + 1], axis=1)
    weights = np.stack([(1 - tx) * (1 - ty), tx * (1 - ty),
                        (1 - tx) * ty, tx * ty], axis=1)
    return rows_idx, cols_idx, weights


def _second_difference_penalty(spec: GridSpec) -> sparse.csr_matrix:
    rows, cols = spec.rows, spec.cols
    node = np.arange(rows * cols).reshape(rows, cols)
    mean_spacing = 0.5 * (spec.spacing[0] + spec.spacing[1])

    def stencil(i0, i1, i2, spacing):
        relative = spacing / mean_spacing
        count = i0.size
        r = np.repeat(np.arange(count), 3)
        c = np.column_stack([i0, i1, i2]).ravel()
        s = np.tile([1.0, -2.0, 1.0], count) / (relative * relative)
        return sparse.csr_matrix((s, (r, c)), shape=(count, rows * cols))

    along_x = stencil(node[:, :-2].ravel(), node[:, 1:-1].ravel(),
                      node[:, 2:].ravel(), spec.spacing[0])
    along_y = stencil(node[:-2, :].ravel(), node[1:-1, :].ravel(),
                      node[2:, :].ravel(), spec.spacing[1])
    return sparse.vstack([along_x, along_y]).tocsr()


class GridFitter:
    """Prefactored fit operator for one set of sample locations on one grid.

    The factorized system depends only on the sample (x, y) locations, the
    grid and the smoothing weight, so fitting several value channels sampled
    at the same locations reuses a single factorization.
    """

    def __init__(self, x, y, spec: GridSpec, smoothing: float):
        x = np.ascontiguousarray(x, dtype=np.float64).ravel()
        y = np.ascontiguousarray(y, dtype=np.float64).ravel()
        if x.size != y.size:
            raise GridFitError(f"x and y differ in length ({x.size} vs {y.size})")
        if x.size < 3:
            raise GridFitError(f"need at least 3 samples, got {x.size}")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise GridFitError("sample locations contain non-finite values")
        if smoothing <= 0.0:
            raise GridFitError(f"smoothing must be positive, got {smoothing}")
        if spec.rows < 3 or spec.cols < 3:
            raise GridFitError(
                f"fitting needs at least a 3x3 grid, got {spec.rows}x{spec.cols}")

        # The samples must pin the penalty nullspace span{1, x, y, x*y}:
        # rank deficiency of these four columns is exactly the singular case.
        pin = np.column_stack([np.ones_like(x), x, y, x * y])
        pin /= np.linalg.norm(pin, axis=0)
        if np.linalg.matrix_rank(pin, tol=1e-10) < 4:
            raise GridFitError(
                "sample locations cannot pin the smoothing nullspace "
                "(fewer than 4 effective points, collinear data, or a degenerate layout)")

        rows_idx, cols_idx, weights = _bilinear_stencil(spec, x, y)
        n_data = x.size
        design = sparse.csr_matrix(
            (weights.ravel(),
             (np.repeat(np.arange(n_data), 4),
              (rows_idx * spec.cols + cols_idx).ravel())),
            shape=(n_data, spec.rows * spec.cols))
        penalty = _second_difference_penalty(spec)
        normal = (design.T @ design + smoothing * (penalty.T @ penalty)).tocsc()
        try:
            self._solver = sparse_linalg.splu(normal)
        except RuntimeError as exc:
            raise GridFitError(f"fitting system is singular: {exc}") from exc
        self._normal = normal
        self._design = design
        self.spec = spec
        self.smoothing = smoothing
        self.n_samples = n_data

    def fit(self, values) -> GridSurface:
        """Solve for the grid surface matching one channel of sample values."""
        values = np.ascontiguousarray(values, dtype=np.float64).ravel()
        if values.size != self.n_samples:
            raise GridFitError(
                f"got {values.size} values for {self.n_samples} sample locations")
        if not np.isfinite(values).all():
            raise GridFitError("sample values contain non-finite entries")
        rhs = self._design.T @ values
        solution = self._solver.solve(rhs)
        # One refinement pass: the normal system can be ill-conditioned when
        # the smoothing term is weak, and exact reproduction of constants and
        # planes is part of the fit contract.
        solution += self._solver.solve(rhs - self._normal @ solution)
        if not np.isfinite(solution).all():
            raise GridFitError("fitting system is numerically singular")
        return GridSurface(values=solution.reshape(self.spec.rows, self.spec.cols),
                           origin=self.spec.origin, spacing=self.spec.spacing)


def gridfit(points, spec: GridSpec, smoothing: float) -> GridSurface:
    """Fit one scalar channel: ``points`` is an (n, 3) array of (x, y, value)."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise GridFitError(f"points must be (n, 3) of (x, y, value), got {points.shape}")
    fitter = GridFitter(points[:, 0], points[:, 1], spec, smoothing)
    return fitter.fit(points[:, 2])
