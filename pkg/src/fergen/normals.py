"""Pointcloud surface normals and their spherical-angle encoding."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .corpus import Face

#: Below this squared xy-magnitude a normal counts as polar and gets azimuth 0.
POLE_EPS = 1e-12


class DegenerateNeighborhoodError(ValueError):
    """Raised when a vertex neighborhood is collinear and has no plane normal."""


def estimate_normals(face, k: int) -> np.ndarray:
    """Per-vertex unit normals from local plane fits over k nearest neighbors.

    Each vertex and its k nearest neighbors are fitted with a plane (the
    smallest principal direction of the neighborhood covariance). Normals
    are oriented toward +z, which is well defined for frontal scans.
    """
    points = face.vertices if isinstance(face, Face) else np.asarray(face, dtype=np.float64)
    n_points = points.shape[0]
    if not 3 <= k < n_points:
        raise ValueError(f"k must satisfy 3 <= k < {n_points}, got {k}")

    _, neighbor_idx = cKDTree(points).query(points, k=k + 1)
    neighborhoods = points[neighbor_idx]
    centered = neighborhoods - neighborhoods.mean(axis=1, keepdims=True)
    cov = np.einsum("pki,pkj->pij", centered, centered)
    eigvals, eigvecs = np.linalg.eigh(cov)

    # A collinear neighborhood has two vanishing eigenvalues and no unique
    # plane normal.
    degenerate = eigvals[:, 1] <= 1e-12 * np.maximum(eigvals[:, 2], 1e-300)
    if degenerate.any():
        vertex = int(np.argmax(degenerate))
        raise DegenerateNeighborhoodError(
            f"vertex {vertex}: neighborhood of {k} nearest points is collinear")

    normals = eigvecs[:, :, 0]
    flip = normals[:, 2] < 0.0
    # Deterministic sign for exactly in-plane normals (z == 0).
    on_plane = normals[:, 2] == 0.0
    flip |= on_plane & ((normals[:, 0] < 0.0)
                        | ((normals[:, 0] == 0.0) & (normals[:, 1] < 0.0)))
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return normals


def to_spherical(normal):
    """Azimuth and elevation angles of unit normal(s).

    Azimuth is atan2(n_y, n_x) in (-pi, pi], defined as 0 for polar normals
    (n_x^2 + n_y^2 below ``POLE_EPS``); elevation is asin(n_z), in
    [0, pi/2] for +z-oriented normals. A round-off-level n_y snaps to +0 so
    normals on the negative-x meridian consistently land on the +pi branch
    instead of flipping sign with the noise. Accepts one (3,) vector or an
    (N, 3) stack and returns scalars or arrays to match.
    """
    n = np.asarray(normal, dtype=np.float64)
    single = n.ndim == 1
    n = np.atleast_2d(n)
    ny = np.where(np.abs(n[:, 1]) < 1e-12, 0.0, n[:, 1])
    azimuth = np.arctan2(ny, n[:, 0])
    azimuth[n[:, 0] ** 2 + n[:, 1] ** 2 < POLE_EPS] = 0.0
    elevation = np.arcsin(np.clip(n[:, 2], -1.0, 1.0))
    if single:
        return float(azimuth[0]), float(elevation[0])
    return azimuth, elevation
