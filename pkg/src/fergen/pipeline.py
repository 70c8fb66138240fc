"""End-to-end dataset generation with a persisted, reproducible manifest.

For every expression category the pipeline builds the pairwise energy
table, selects the top trios by shape difference, synthesizes the centroid
faces and rasterizes them to PNG. Records land in a JSON Lines manifest
sorted by (category, ids) whose header carries the generation parameters
and the corpus content checksum; identical corpus and parameters give a
byte-identical manifest (and images) regardless of worker count, and an
interrupted run can be resumed because finished images are detected and
reused instead of regenerated.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import shutil
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bending import pairwise_energy_table
from .corpus import Corpus, ExpressionLabel, load_corpus
from .raster import CROP_SIZE, RasterParams, png_bytes, rasterize_face
from .synthesis import synthesize_face
from .trios import TrioScore, select_top_trios

MANIFEST_NAME = "manifest.jsonl"
RUN_STAMP_NAME = "run.json"


class PipelineError(RuntimeError):
    """Raised when a pipeline stage fails; names the offending category/trio."""


@dataclass(frozen=True)
class PipelineConfig:
    """Configuration of one generation run.

    ``corpus_index`` and ``output_dir`` locate inputs and outputs; the
    remaining fields are generation parameters recorded in the manifest.
    ``workers`` bounds the thread pool and never affects results.
    """

    corpus_index: str
    output_dir: str
    sample_count: int = 500
    trios_per_category: int = 64000
    train_fraction: float = 0.75
    seed: int = 0
    workers: int = 1
    smoothing: float = 1e-5
    grid_rows: int = 320
    grid_cols: int = 320
    margin: float = 1.1
    neighbors: int = 16

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train fraction must lie in (0, 1), got {self.train_fraction}")
        if self.trios_per_category < 0:
            raise ValueError(f"trios per category must be >= 0, got {self.trios_per_category}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.sample_count < 8:
            raise ValueError(f"sample count must be >= 8, got {self.sample_count}")

    def raster_params(self) -> RasterParams:
        return RasterParams(grid_rows=self.grid_rows, grid_cols=self.grid_cols,
                            margin=self.margin, smoothing=self.smoothing,
                            neighbors=self.neighbors)

    def snapshot(self) -> dict:
        """Generation parameters that determine outputs byte for byte.

        Machine-specific fields (paths, worker count) are excluded so two
        runs of the same corpus and parameters in different locations
        produce identical manifests; corpus identity is carried separately
        by its content checksum.
        """
        return {
            "sample_count": self.sample_count,
            "trios_per_category": self.trios_per_category,
            "train_fraction": self.train_fraction,
            "seed": self.seed,
            "smoothing": self.smoothing,
            "grid_rows": self.grid_rows,
            "grid_cols": self.grid_cols,
            "margin": self.margin,
            "neighbors": self.neighbors,
            "crop_size": CROP_SIZE,
        }

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(PipelineConfig)}
_CONFIG_PATH_FIELDS = ("corpus_index", "output_dir")


def load_config(path) -> PipelineConfig:
    """Read a JSON config file; relative paths resolve against its directory."""
    path = Path(path)
    with open(path, "r") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise PipelineError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise PipelineError(f"{path}: config must be a JSON object")
    unknown = set(raw) - _CONFIG_FIELDS
    if unknown:
        raise PipelineError(f"{path}: unknown config keys {sorted(unknown)}")
    missing = {"corpus_index", "output_dir"} - set(raw)
    if missing:
        raise PipelineError(f"{path}: config lacks required keys {sorted(missing)}")
    for field in _CONFIG_PATH_FIELDS:
        raw[field] = str((path.parent / raw[field]).resolve())
    try:
        return PipelineConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise PipelineError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class ManifestRecord:
    """One generated image: provenance, split assignment, path and checksum."""

    category: ExpressionLabel
    ids: tuple[int, int, int]
    score: float
    split: str
    path: str
    sha256: str

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {self.split!r}")

    def to_json(self) -> str:
        return json.dumps({
            "category": self.category.key,
            "ids": list(self.ids),
            "score": self.score,
            "split": self.split,
            "path": self.path,
            "sha256": self.sha256,
        }, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "ManifestRecord":
        raw = json.loads(line)
        return cls(category=ExpressionLabel.from_key(raw["category"]),
                   ids=tuple(int(v) for v in raw["ids"]),
                   score=float(raw["score"]),
                   split=raw["split"],
                   path=raw["path"],
                   sha256=raw["sha256"])


@dataclass(frozen=True)
class DatasetManifest:
    """Header (parameters + corpus checksum) plus records sorted by (category, ids)."""

    parameters: dict
    corpus_sha256: str
    records: tuple[ManifestRecord, ...]

    def __post_init__(self):
        paths = [r.path for r in self.records]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest contains duplicate image paths")

    def write(self, path) -> None:
        path = Path(path)
        header = json.dumps({
            "kind": "fergen-manifest",
            "version": 1,
            "corpus_sha256": self.corpus_sha256,
            "parameters": self.parameters,
            "records": len(self.records),
        }, sort_keys=True, separators=(",", ":"))
        body = "\n".join([header] + [r.to_json() for r in self.records]) + "\n"
        _atomic_write(path, body.encode("ascii"))

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        with open(path, "r") as fh:
            lines = [line for line in fh.read().splitlines() if line]
        if not lines:
            raise PipelineError(f"{path}: empty manifest")
        header = json.loads(lines[0])
        if header.get("kind") != "fergen-manifest":
            raise PipelineError(f"{path}: not a dataset manifest")
        records = tuple(ManifestRecord.from_json(line) for line in lines[1:])
        if header.get("records") != len(records):
            raise PipelineError(
                f"{path}: header declares {header.get('records')} records, found {len(records)}")
        return cls(parameters=header["parameters"],
                   corpus_sha256=header["corpus_sha256"],
                   records=records)

    def records_for(self, split: str) -> tuple[ManifestRecord, ...]:
        return tuple(r for r in self.records if r.split == split)


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _split_rank(seed: int, category: ExpressionLabel, ids) -> str:
    a, b, c = ids
    return hashlib.sha256(f"{seed}:{category.key}:{a}:{b}:{c}".encode("ascii")).hexdigest()


def assign_splits(seed: int, category: ExpressionLabel, trios,
                  train_fraction: float) -> dict[tuple[int, int, int], str]:
    """Stratified split: rank trios by a keyed hash, take the leading share
    as train. Per category the train count is round(fraction * n), so the
    realized fraction is within one record of the configured one."""
    ranked = sorted(trios, key=lambda t: (_split_rank(seed, category, t.ids), t.ids))
    n_train = int(train_fraction * len(ranked) + 0.5)
    return {t.ids: ("train" if rank < n_train else "test")
            for rank, t in enumerate(ranked)}


def _record_image_path(trio: TrioScore) -> str:
    i, j, k = trio.ids
    return f"{trio.category.key}/{i}_{j}_{k}.png"


def _render_one(corpus: Corpus, trio: TrioScore, split: str, out_dir: Path,
                params: RasterParams) -> ManifestRecord:
    rel_path = _record_image_path(trio)
    target = out_dir / rel_path
    try:
        if target.exists():
            data = target.read_bytes()
        else:
            target.parent.mkdir(parents=True, exist_ok=True)
            face = synthesize_face(corpus, trio)
            data = png_bytes(rasterize_face(face, params))
            _atomic_write(target, data)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(
            f"category {trio.category.key}, trio {trio.ids}: {exc}") from exc
    return ManifestRecord(category=trio.category, ids=trio.ids, score=trio.score,
                          split=split, path=rel_path,
                          sha256=hashlib.sha256(data).hexdigest())


def _check_run_stamp(out_dir: Path, corpus_sha: str, parameters: dict) -> None:
    stamp_path = out_dir / RUN_STAMP_NAME
    stamp = {"kind": "fergen-run", "corpus_sha256": corpus_sha, "parameters": parameters}
    if stamp_path.exists():
        with open(stamp_path, "r") as fh:
            existing = json.load(fh)
        if existing != stamp:
            raise PipelineError(
                f"{out_dir} holds outputs generated with different parameters or a "
                "different corpus; refusing to mix runs (use a fresh output directory)")
    else:
        _atomic_write(stamp_path, json.dumps(stamp, sort_keys=True).encode("ascii"))


def run_generate(config: PipelineConfig) -> DatasetManifest:
    """Generate the dataset described by ``config`` and write its manifest.

    Per category: energy table -> top trios -> synthesize -> rasterize ->
    PNG. Already-present images are checksummed and reused, making
    interrupted runs resumable. The manifest is written last.
    """
    corpus = load_corpus(config.corpus_index)
    corpus_sha = corpus.checksum()
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _check_run_stamp(out_dir, corpus_sha, config.snapshot())

    params = config.raster_params()
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        def prepare(label: ExpressionLabel):
            try:
                table = pairwise_energy_table(corpus, label, config.sample_count,
                                              config.seed)
                return select_top_trios(table, config.trios_per_category)
            except Exception as exc:
                raise PipelineError(f"category {label.key}: {exc}") from exc

        selections = list(pool.map(prepare, corpus.category_labels))

        jobs: list[tuple[TrioScore, str]] = []
        for label, trios in zip(corpus.category_labels, selections):
            splits = assign_splits(config.seed, label, trios, config.train_fraction)
            jobs.extend((trio, splits[trio.ids]) for trio in trios)

        futures = [pool.submit(_render_one, corpus, trio, split, out_dir, params)
                   for trio, split in jobs]
        records = []
        try:
            for future in as_completed(futures):
                records.append(future.result())
        except BaseException:
            for future in futures:
                future.cancel()
            raise

    records.sort(key=lambda r: (r.category, r.ids))
    manifest = DatasetManifest(parameters=config.snapshot(), corpus_sha256=corpus_sha,
                               records=tuple(records))
    manifest.write(out_dir / MANIFEST_NAME)
    return manifest


@dataclass(frozen=True)
class CategoryStats:
    count: int
    train: int
    test: int


@dataclass(frozen=True)
class ManifestStats:
    record_count: int
    per_category: dict[str, CategoryStats]
    score_min: float | None
    score_median: float | None
    score_max: float | None
    checksum_failures: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.checksum_failures


_CURRENT_STDOUT = object()


def run_stats(manifest_path, stream=_CURRENT_STDOUT) -> ManifestStats:
    """Summarize a manifest and verify every image checksum.

    Prints per-category counts, split ratios and the score distribution to
    ``stream`` (default: whatever sys.stdout is at call time; pass None to
    stay quiet) and returns the summary, including any paths whose checksum
    no longer matches.
    """
    if stream is _CURRENT_STDOUT:
        stream = sys.stdout
    manifest_path = Path(manifest_path)
    manifest = DatasetManifest.read(manifest_path)
    base = manifest_path.parent

    per_category: dict[str, CategoryStats] = {}
    for label in sorted({r.category for r in manifest.records}):
        members = [r for r in manifest.records if r.category == label]
        train = sum(1 for r in members if r.split == "train")
        per_category[label.key] = CategoryStats(count=len(members), train=train,
                                                test=len(members) - train)

    failures = []
    for record in manifest.records:
        image_path = base / record.path
        if not image_path.exists():
            failures.append(record.path)
            continue
        if hashlib.sha256(image_path.read_bytes()).hexdigest() != record.sha256:
            failures.append(record.path)

    scores = np.array([r.score for r in manifest.records])
    stats = ManifestStats(
        record_count=len(manifest.records),
        per_category=per_category,
        score_min=float(scores.min()) if scores.size else None,
        score_median=float(np.median(scores)) if scores.size else None,
        score_max=float(scores.max()) if scores.size else None,
        checksum_failures=tuple(failures),
    )

    if stream is not None:
        print(f"records: {stats.record_count}", file=stream)
        for key, cat in stats.per_category.items():
            ratio = cat.train / cat.count if cat.count else 0.0
            print(f"  {key}: {cat.count} records, {cat.train} train / {cat.test} test "
                  f"(train fraction {ratio:.3f})", file=stream)
        if scores.size:
            print(f"shape-difference scores: min {stats.score_min:.6g}, "
                  f"median {stats.score_median:.6g}, max {stats.score_max:.6g}",
                  file=stream)
        if failures:
            print(f"checksum FAILURES ({len(failures)}):", file=stream)
            for path in failures:
                print(f"  {path}", file=stream)
        else:
            print("all image checksums verified", file=stream)
    return stats


def run_export(manifest_path, export_dir) -> dict[tuple[str, str], int]:
    """Materialize ``train/<emotion>`` and ``test/<emotion>`` class trees.

    Levels of one emotion merge into a single class directory; file names
    keep the category key so merged levels cannot collide. Re-exporting
    over an existing tree overwrites in place and is idempotent. Returns
    per (split, class) file counts.
    """
    manifest_path = Path(manifest_path)
    manifest = DatasetManifest.read(manifest_path)
    base = manifest_path.parent
    export_dir = Path(export_dir)

    counts: dict[tuple[str, str], int] = {}
    for record in manifest.records:
        source = base / record.path
        if not source.exists():
            raise PipelineError(f"missing image file {record.path}")
        class_name = record.category.class_name
        dest_dir = export_dir / record.split / class_name
        dest_dir.mkdir(parents=True, exist_ok=True)
        i, j, k = record.ids
        shutil.copyfile(source, dest_dir / f"{record.category.key}_{i}_{j}_{k}.png")
        counts[(record.split, class_name)] = counts.get((record.split, class_name), 0) + 1
    return counts
