"""Corpora of densely corresponded 3D face scans.

Every face in a corpus shares one vertex indexing: vertex p marks the same
anatomical location on every scan. Coordinates are millimeters and no
rescaling is applied on load, so all scans referenced by one index file must
share a physical scale. Scans are assumed roughly frontal with the nose
pointing toward +z.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ply import read_ascii_ply, write_ascii_ply

EMOTIONS = ("anger", "disgust", "fear", "happiness", "sadness", "surprise")
NEUTRAL = "neutral"
#: The seven classification labels in canonical (index) order.
CLASS_NAMES = tuple(sorted(EMOTIONS + (NEUTRAL,)))
MIN_VERTICES = 8


class CorpusError(ValueError):
    """Raised when face or corpus data violates the correspondence contract."""


@dataclass(frozen=True, order=True)
class ExpressionLabel:
    """Emotion category, optionally with an intensity level.

    Neutral carries no level; the six non-neutral emotions carry a level in
    1..4. Category partitioning conventionally uses levels 2 and 3, and the
    levels of one emotion collapse to a single classification label.
    """

    emotion: str
    level: int | None = None

    def __post_init__(self):
        if self.emotion == NEUTRAL:
            if self.level is not None:
                raise CorpusError("neutral expression carries no level")
        elif self.emotion in EMOTIONS:
            if self.level not in (1, 2, 3, 4):
                raise CorpusError(
                    f"emotion {self.emotion!r} requires a level in 1..4, got {self.level!r}")
        else:
            raise CorpusError(f"unknown emotion {self.emotion!r}")

    @property
    def class_name(self) -> str:
        """Classification label; levels of one emotion share a class."""
        return self.emotion

    @property
    def key(self) -> str:
        """Filesystem-safe category name, e.g. ``happiness_2`` or ``neutral``."""
        return self.emotion if self.level is None else f"{self.emotion}_{self.level}"

    @classmethod
    def from_key(cls, key: str) -> "ExpressionLabel":
        if key == NEUTRAL:
            return cls(NEUTRAL)
        emotion, _, level = key.rpartition("_")
        try:
            return cls(emotion, int(level))
        except (ValueError, CorpusError):
            raise CorpusError(f"malformed category key {key!r}") from None


def standard_categories() -> tuple[ExpressionLabel, ...]:
    """The 13 conventional categories: six emotions at levels 2 and 3, plus neutral."""
    labels = [ExpressionLabel(e, lvl) for e in EMOTIONS for lvl in (2, 3)]
    labels.append(ExpressionLabel(NEUTRAL))
    return tuple(sorted(labels))


@dataclass(frozen=True)
class Face:
    """One corresponded scan: (P, 3) vertices plus identity and expression."""

    vertices: np.ndarray
    identity: int
    expression: ExpressionLabel

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise CorpusError(f"vertices must be (P, 3), got shape {v.shape}")
        if v.shape[0] < MIN_VERTICES:
            raise CorpusError(
                f"face {self.identity}: needs at least {MIN_VERTICES} vertices, got {v.shape[0]}")
        if not np.isfinite(v).all():
            raise CorpusError(f"face {self.identity}: non-finite coordinates")
        if np.unique(v, axis=0).shape[0] != v.shape[0]:
            raise CorpusError(f"face {self.identity}: exactly coincident vertices")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def vertex_count(self) -> int:
        return self.vertices.shape[0]

    @property
    def level(self) -> int | None:
        return self.expression.level


class Corpus:
    """Immutable set of corresponded faces partitioned into expression categories.

    Categories are keyed by :class:`ExpressionLabel`; within a category each
    identity appears at most once and members are ordered by identity.
    """

    def __init__(self, faces):
        faces = tuple(faces)
        if not faces:
            raise CorpusError("corpus holds no faces")
        counts = sorted({f.vertex_count for f in faces})
        if len(counts) != 1:
            raise CorpusError(
                f"vertex counts differ across faces ({counts}); dense correspondence is broken")
        self._vertex_count = counts[0]

        grouped: dict[ExpressionLabel, list[Face]] = {}
        for face in faces:
            grouped.setdefault(face.expression, []).append(face)
        for label, members in grouped.items():
            seen: set[int] = set()
            for face in members:
                if face.identity in seen:
                    raise CorpusError(
                        f"duplicate entry for identity {face.identity} in category {label.key}")
                seen.add(face.identity)
            members.sort(key=lambda f: f.identity)
        self._categories = {label: tuple(grouped[label]) for label in sorted(grouped)}
        self._faces = tuple(f for members in self._categories.values() for f in members)

    @property
    def vertex_count(self) -> int:
        return self._vertex_count

    @property
    def faces(self) -> tuple[Face, ...]:
        """All faces in canonical (category, identity) order."""
        return self._faces

    @property
    def category_labels(self) -> tuple[ExpressionLabel, ...]:
        return tuple(self._categories)

    def faces_in(self, label: ExpressionLabel) -> tuple[Face, ...]:
        try:
            return self._categories[label]
        except KeyError:
            raise CorpusError(f"no category {label.key} in corpus") from None

    def face(self, label: ExpressionLabel, identity: int) -> Face:
        for candidate in self.faces_in(label):
            if candidate.identity == identity:
                return candidate
        raise CorpusError(f"no face for identity {identity} in category {label.key}")

    def checksum(self) -> str:
        """SHA-256 over labels, identities and vertex bytes in canonical order."""
        h = hashlib.sha256()
        for face in self._faces:
            h.update(face.expression.key.encode())
            h.update(str(face.identity).encode())
            h.update(face.vertices.tobytes())
        return h.hexdigest()


def load_corpus(index_path) -> Corpus:
    """Load a corpus from an index CSV of ``path,identity,emotion,level`` rows.

    Pointcloud paths are resolved relative to the index file. ``level`` is
    left empty for neutral scans.
    """
    index_path = Path(index_path)
    if not index_path.exists():
        raise CorpusError(f"index file {index_path} does not exist")
    faces = []
    seen: set[tuple[int, ExpressionLabel]] = set()
    with open(index_path, "r", newline="") as fh:
        reader = csv.DictReader(fh)
        fields = set(reader.fieldnames or ())
        missing = {"path", "identity", "emotion", "level"} - fields
        if missing:
            raise CorpusError(f"{index_path}: index lacks columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                identity = int(row["identity"])
            except ValueError:
                raise CorpusError(
                    f"{index_path}:{lineno}: bad identity {row['identity']!r}") from None
            level_text = (row["level"] or "").strip()
            try:
                level = int(level_text) if level_text else None
            except ValueError:
                raise CorpusError(f"{index_path}:{lineno}: bad level {level_text!r}") from None
            label = ExpressionLabel(row["emotion"].strip(), level)
            entry = (identity, label)
            if entry in seen:
                raise CorpusError(
                    f"{index_path}:{lineno}: duplicate entry for identity {identity}, "
                    f"category {label.key}")
            seen.add(entry)
            ply_path = index_path.parent / row["path"]
            if not ply_path.exists():
                raise CorpusError(f"{index_path}:{lineno}: missing pointcloud {ply_path}")
            faces.append(Face(read_ascii_ply(ply_path), identity, label))
    return Corpus(faces)


def save_corpus(corpus: Corpus, directory) -> Path:
    """Write a corpus as PLY files plus an index CSV; returns the index path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for label in corpus.category_labels:
        for face in corpus.faces_in(label):
            name = f"{label.key}_id{face.identity:04d}.ply"
            write_ascii_ply(directory / name, face.vertices)
            rows.append((name, face.identity, label.emotion,
                         "" if label.level is None else label.level))
    index_path = directory / "index.csv"
    with open(index_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "identity", "emotion", "level"])
        writer.writerows(rows)
    return index_path


# ---------------------------------------------------------------------------
# Synthetic corpus generation (desk-scale stand-in for a scanned corpus).

#: Analytic x/y position of the nose bump used by every synthetic face.
NOSE_CENTER = (0.0, -5.0)

_LATTICE_X = (-85.0, 85.0)
_LATTICE_Y = (-105.0, 105.0)

# (amplitude mm, center x, center y, sigma x, sigma y)
_BASE_BUMPS = (
    (30.0, 0.0, 0.0, 58.0, 72.0),      # skull dome
    (14.0, NOSE_CENTER[0], NOSE_CENTER[1], 9.0, 11.0),
    (5.0, -38.0, -28.0, 16.0, 14.0),   # cheeks
    (5.0, 38.0, -28.0, 16.0, 14.0),
    (4.0, 0.0, 30.0, 40.0, 8.0),       # brow ridge
    (3.0, 0.0, -88.0, 20.0, 12.0),     # chin
)

# Fixed per-emotion displacement fields. Bump centers stay >= 25 mm from the
# nose so the depth maximum remains the nose for every category and level.
_EXPRESSION_BUMPS = {
    "anger": (
        (-4.5, 0.0, 32.0, 30.0, 7.0),
        (3.0, 0.0, 14.0, 10.0, 6.0),
        (2.0, -45.0, -55.0, 12.0, 10.0),
        (2.0, 45.0, -55.0, 12.0, 10.0),
    ),
    "disgust": (
        (4.5, 0.0, -30.0, 14.0, 7.0),
        (2.5, 0.0, 10.0, 12.0, 8.0),
        (-2.0, -20.0, 30.0, 14.0, 7.0),
        (-2.0, 20.0, 30.0, 14.0, 7.0),
    ),
    "fear": (
        (4.0, 0.0, 33.0, 34.0, 8.0),
        (-2.5, -22.0, 15.0, 10.0, 7.0),
        (-2.5, 22.0, 15.0, 10.0, 7.0),
        (-4.0, 0.0, -45.0, 12.0, 9.0),
    ),
    "happiness": (
        (5.0, -30.0, -18.0, 13.0, 11.0),
        (5.0, 30.0, -18.0, 13.0, 11.0),
        (3.5, -24.0, -40.0, 9.0, 7.0),
        (3.5, 24.0, -40.0, 9.0, 7.0),
    ),
    "sadness": (
        (-3.5, -24.0, -42.0, 9.0, 7.0),
        (-3.5, 24.0, -42.0, 9.0, 7.0),
        (2.5, -10.0, 30.0, 9.0, 7.0),
        (2.5, 10.0, 30.0, 9.0, 7.0),
        (-2.0, -32.0, -22.0, 13.0, 11.0),
        (-2.0, 32.0, -22.0, 13.0, 11.0),
    ),
    "surprise": (
        (5.0, 0.0, 34.0, 36.0, 9.0),
        (-3.0, -22.0, 15.0, 10.0, 7.0),
        (-3.0, 22.0, 15.0, 10.0, 7.0),
        (-5.0, 0.0, -48.0, 11.0, 11.0),
    ),
}

_IDENTITY_BUMP_COUNT = 6
_IDENTITY_MAX_AMPLITUDE = 2.2


def _bump_field(x, y, bumps, scale=1.0):
    z = np.zeros_like(x)
    for amp, cx, cy, sx, sy in bumps:
        z += (scale * amp) * np.exp(-((x - cx) ** 2 / (2.0 * sx * sx)
                                      + (y - cy) ** 2 / (2.0 * sy * sy)))
    return z


def _lattice(vertex_count: int):
    nx = math.ceil(math.sqrt(vertex_count))
    ny = math.ceil(vertex_count / nx)
    xs = np.linspace(*_LATTICE_X, nx)
    ys = np.linspace(*_LATTICE_Y, ny)
    gx, gy = np.meshgrid(xs, ys)
    return gx.ravel()[:vertex_count].copy(), gy.ravel()[:vertex_count].copy()


def base_face_height(x, y) -> np.ndarray:
    """Analytic height of the shared base face (no identity, no expression)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return _bump_field(x, y, _BASE_BUMPS)


def expression_displacement(x, y, label: ExpressionLabel) -> np.ndarray:
    """Analytic z displacement of an expression category, scaled by level."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if label.emotion == NEUTRAL:
        return np.zeros_like(x)
    return _bump_field(x, y, _EXPRESSION_BUMPS[label.emotion], scale=label.level / 2.0)


def _identity_displacement(x, y, seed: int, identity: int) -> np.ndarray:
    rng = np.random.default_rng([seed, identity])
    bumps = [
        (rng.uniform(-_IDENTITY_MAX_AMPLITUDE, _IDENTITY_MAX_AMPLITUDE),
         rng.uniform(-70.0, 70.0), rng.uniform(-90.0, 90.0),
         rng.uniform(22.0, 46.0), rng.uniform(22.0, 46.0))
        for _ in range(_IDENTITY_BUMP_COUNT)
    ]
    return _bump_field(x, y, bumps)


def generate_synthetic_corpus(seed: int, n_identities: int, vertex_count: int,
                              categories) -> Corpus:
    """Generate a deterministic synthetic corpus of corresponded faces.

    Every face samples a smooth height field over one shared x/y lattice:
    the base face (fixed Gaussian bumps for skull, nose, cheeks, brow and
    chin) plus an identity-specific random low-frequency deformation plus a
    fixed per-emotion displacement field scaled by intensity level. Sharing
    the lattice gives dense correspondence by construction, and the output
    is a pure function of ``(seed, n_identities, vertex_count, categories)``.
    """
    if n_identities < 1:
        raise CorpusError(f"need at least one identity, got {n_identities}")
    if vertex_count < MIN_VERTICES:
        raise CorpusError(f"need at least {MIN_VERTICES} vertices, got {vertex_count}")
    categories = tuple(categories)
    if not categories:
        raise CorpusError("no expression categories requested")

    x, y = _lattice(vertex_count)
    base = base_face_height(x, y)
    faces = []
    for identity in range(n_identities):
        personal = base + _identity_displacement(x, y, seed, identity)
        for label in categories:
            z = personal + expression_displacement(x, y, label)
            faces.append(Face(np.column_stack([x, y, z]), identity, label))
    return Corpus(faces)
