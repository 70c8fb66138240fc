"""Thin-plate-spline bending energy between corresponded faces.

For a source face sampled at P' vertices, the interpolation system couples
the radial kernel matrix K (K[a, b] = r^2 log r over source point distances)
with the affine block S = [1, x, y, z]. The bending matrix is the upper-left
P' x P' block of the inverse of::

    [[K,   S],
     [S^T, 0]]

and the energy needed to deform the source onto target coordinates (x, y, z)
is the sum of the three quadratic forms x^T B x + y^T B y + z^T B z. The
bending matrix annihilates the affine column space, so the energy of the
source itself, or of any affine image of it, is zero: the scalar measures
only the non-rigid part of the deformation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

from .corpus import Corpus, ExpressionLabel, Face


class SingularSystemError(ValueError):
    """Raised when the spline system cannot be solved (duplicate or coplanar samples)."""


class NegativeEnergyError(ArithmeticError):
    """Raised when a bending energy is negative beyond round-off tolerance."""


def tps_kernel(a, b) -> float:
    """Radial kernel r^2 log r of the distance between two 3D points.

    Returns exactly 0 at r = 0, the limit value.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    r2 = float(np.sum((a - b) ** 2))
    if r2 == 0.0:
        return 0.0
    return 0.5 * r2 * np.log(r2)


def _kernel_matrix(points: np.ndarray) -> np.ndarray:
    d2 = cdist(points, points, "sqeuclidean")
    out = np.zeros_like(d2)
    mask = d2 > 0.0
    out[mask] = 0.5 * d2[mask] * np.log(d2[mask])
    return out


@dataclass(frozen=True)
class BendingSystem:
    """Prefactored spline system of one source face.

    ``matrix`` is the bending matrix; evaluating it against target
    coordinates taken at ``sample_indices`` yields the directed energy from
    the source to that target.
    """

    source_identity: int
    category: ExpressionLabel
    sample_indices: np.ndarray
    sample_points: np.ndarray
    matrix: np.ndarray


def _validate_samples(points: np.ndarray, sample_indices: np.ndarray) -> None:
    d2 = cdist(points, points, "sqeuclidean")
    np.fill_diagonal(d2, np.inf)
    dup = np.argwhere(d2 == 0.0)
    if dup.size:
        a, b = dup[0]
        raise SingularSystemError(
            f"coincident sample points at vertex indices "
            f"{sample_indices[a]} and {sample_indices[b]}")
    affine = np.column_stack([np.ones(len(points)), points])
    if np.linalg.matrix_rank(affine) < 4:
        raise SingularSystemError(
            f"sample points at indices {sample_indices.tolist()} are coplanar; "
            "the affine block is rank deficient")


def build_bending_system(face: Face, sample_indices) -> BendingSystem:
    """Assemble and solve the spline block system of one source face.

    The block system is factored once and solved for the identity columns;
    the resulting bending matrix is symmetrized and projected so that it
    annihilates span{1, x, y, z} at round-off level (the raw solve leaves an
    O(cond * eps) defect there, which would otherwise dominate the energy of
    near-affine deformations).
    """
    sample_indices = np.asarray(sample_indices, dtype=np.intp)
    m = sample_indices.size
    if m < 8:
        raise ValueError(f"need at least 8 sample indices, got {m}")
    if sample_indices.min() < 0 or sample_indices.max() >= face.vertex_count:
        raise IndexError(
            f"sample index out of range for face with {face.vertex_count} vertices")
    points = face.vertices[sample_indices]
    _validate_samples(points, sample_indices)

    kernel = _kernel_matrix(points)
    affine = np.column_stack([np.ones(m), points])
    system = np.zeros((m + 4, m + 4))
    system[:m, :m] = kernel
    system[:m, m:] = affine
    system[m:, :m] = affine.T

    rhs = np.zeros((m + 4, m))
    rhs[:m, :m] = np.eye(m)
    try:
        lu, piv = scipy.linalg.lu_factor(system)
        block = scipy.linalg.lu_solve((lu, piv), rhs)[:m, :]
    except scipy.linalg.LinAlgError as exc:
        raise SingularSystemError(f"spline system is singular: {exc}") from exc
    if not np.isfinite(block).all():
        raise SingularSystemError(
            f"spline system is numerically singular for sample indices "
            f"{sample_indices.tolist()}")

    bending = 0.5 * (block + block.T)
    q, _ = np.linalg.qr(affine)
    bending -= q @ (q.T @ bending)
    bending -= (bending @ q) @ q.T
    bending = 0.5 * (bending + bending.T)
    bending.setflags(write=False)

    return BendingSystem(
        source_identity=face.identity,
        category=face.expression,
        sample_indices=sample_indices,
        sample_points=points,
        matrix=bending,
    )


def _target_vertices(target) -> np.ndarray:
    vertices = target.vertices if isinstance(target, Face) else np.asarray(target, dtype=np.float64)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise ValueError(f"target must be (P, 3) coordinates, got shape {vertices.shape}")
    return vertices


def bending_energy(system: BendingSystem, target) -> float:
    """Directed bending energy from the system's source face to ``target``.

    ``target`` is a :class:`Face` or a (P, 3) array sharing the source
    corpus vertex indexing; coordinates are taken at the system's sample
    indices. Values within round-off of zero (1e-8 relative to the scale of
    the quadratic form) are returned as exactly 0, so the source face and
    its affine images get energy 0; negative values beyond that tolerance
    indicate a genuine fault and raise :class:`NegativeEnergyError`.
    """
    vertices = _target_vertices(target)
    if system.sample_indices.max() >= vertices.shape[0]:
        raise IndexError(
            f"target has {vertices.shape[0]} vertices; sample indices require "
            f"at least {int(system.sample_indices.max()) + 1}")
    coords = vertices[system.sample_indices]
    products = system.matrix @ coords
    energy = float(np.einsum("pa,pa->", coords, products))
    scale = float(np.abs(system.matrix).max() * np.sum(coords * coords))
    if abs(energy) <= 1e-8 * max(scale, 1e-300):
        return 0.0
    if energy < 0.0:
        raise NegativeEnergyError(
            f"bending energy {energy} from identity {system.source_identity} is negative "
            f"beyond round-off (scale {scale:.3e})")
    return energy


@dataclass(frozen=True)
class PairwiseEnergyTable:
    """All directed energies within one expression category.

    ``energies[i, j]`` is the energy deforming face ``face_ids[i]`` onto
    face ``face_ids[j]``; the matrix is generally asymmetric.
    """

    category: ExpressionLabel
    face_ids: tuple[int, ...]
    energies: np.ndarray
    sample_indices: np.ndarray

    def __post_init__(self):
        n = len(self.face_ids)
        if self.energies.shape != (n, n):
            raise ValueError(
                f"energies shape {self.energies.shape} does not match {n} face ids")

    def index_of(self, identity: int) -> int:
        try:
            return self.face_ids.index(identity)
        except ValueError:
            raise KeyError(f"identity {identity} not in table for {self.category.key}") from None

    def energy(self, source_identity: int, target_identity: int) -> float:
        return float(self.energies[self.index_of(source_identity),
                                   self.index_of(target_identity)])

    def to_csv(self, path) -> None:
        """Debug dump: N x N energies with identity ids as header and row labels."""
        with open(path, "w", encoding="ascii") as fh:
            fh.write("," + ",".join(str(i) for i in self.face_ids) + "\n")
            for identity, row in zip(self.face_ids, self.energies):
                fh.write(str(identity) + "," + ",".join(f"{v:.17g}" for v in row) + "\n")


def sample_vertex_indices(vertex_count: int, sample_count: int, seed: int) -> np.ndarray:
    """Deterministic shared sample-index set, sorted ascending."""
    if not 8 <= sample_count <= vertex_count:
        raise ValueError(
            f"sample count must lie in [8, {vertex_count}], got {sample_count}")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(vertex_count, size=sample_count, replace=False))


def pairwise_energy_table(corpus: Corpus, category: ExpressionLabel,
                          sample_count: int, seed: int) -> PairwiseEnergyTable:
    """Build the N x N directed energy table of one expression category.

    One sample-index set (deterministic in ``seed``) is shared by every face
    in the category, which dense correspondence makes legal and which keeps
    all energies comparable. Each face's spline system is built once and
    reused against all targets.
    """
    faces = corpus.faces_in(category)
    if len(faces) < 2:
        raise ValueError(f"category {category.key} has {len(faces)} faces; need at least 2")
    indices = sample_vertex_indices(corpus.vertex_count, sample_count, seed)

    systems = []
    for face in faces:
        try:
            systems.append(build_bending_system(face, indices))
        except SingularSystemError as exc:
            raise SingularSystemError(
                f"category {category.key}, identity {face.identity}: {exc}") from exc

    n = len(faces)
    energies = np.zeros((n, n))
    for i, system in enumerate(systems):
        for j, target in enumerate(faces):
            try:
                energies[i, j] = bending_energy(system, target)
            except NegativeEnergyError as exc:
                raise NegativeEnergyError(
                    f"category {category.key}, pair ({faces[i].identity}, "
                    f"{target.identity}): {exc}") from exc

    # Round-off guard: clamp tiny negatives relative to the table scale,
    # reject anything genuinely negative.
    tol = 1e-8 * float(energies.max(initial=0.0))
    negative = energies < 0.0
    if np.any(energies < -tol):
        worst = float(energies.min())
        raise NegativeEnergyError(
            f"category {category.key}: energy {worst} below -{tol:.3e}")
    energies[negative] = 0.0

    off_diag_max = float(energies[~np.eye(n, dtype=bool)].max(initial=0.0))
    diag_bound = 1e-8 * off_diag_max if off_diag_max > 0.0 else 1e-12
    if np.any(np.diag(energies) > diag_bound):
        raise NegativeEnergyError(
            f"category {category.key}: nonzero self-energy on the diagonal")

    energies.setflags(write=False)
    return PairwiseEnergyTable(
        category=category,
        face_ids=tuple(f.identity for f in faces),
        energies=energies,
        sample_indices=indices,
    )
