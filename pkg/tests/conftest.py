import numpy as np
import pytest

import fergen


def random_face(rng, count=40, identity=0, label=None, scale=60.0):
    """Random pointcloud face for spline tests; coordinates span ~scale mm."""
    label = label or fergen.ExpressionLabel("neutral")
    vertices = rng.uniform(-scale, scale, size=(count, 3))
    return fergen.Face(vertices=vertices, identity=identity, expression=label)


def random_affine(rng):
    """Random well-conditioned affine map (A, t): x -> A x + t."""
    while True:
        matrix = rng.uniform(-1.5, 1.5, size=(3, 3))
        if abs(np.linalg.det(matrix)) > 0.2:
            return matrix, rng.uniform(-20.0, 20.0, size=3)


def apply_affine(face, matrix, translation):
    vertices = face.vertices @ matrix.T + translation
    return fergen.Face(vertices=vertices, identity=face.identity,
                       expression=face.expression)


@pytest.fixture
def happy2():
    return fergen.ExpressionLabel("happiness", 2)


@pytest.fixture(scope="session")
def desk_categories():
    return (fergen.ExpressionLabel("happiness", 2),
            fergen.ExpressionLabel("happiness", 3))


@pytest.fixture(scope="session")
def desk_corpus_dir(tmp_path_factory, desk_categories):
    """Desk-scale corpus on disk: 6 identities x 2 categories."""
    corpus = fergen.generate_synthetic_corpus(
        seed=11, n_identities=6, vertex_count=625, categories=desk_categories)
    directory = tmp_path_factory.mktemp("desk-corpus")
    index = fergen.save_corpus(corpus, directory)
    return index


def desk_config(index_path, output_dir, **overrides):
    settings = dict(
        corpus_index=str(index_path),
        output_dir=str(output_dir),
        sample_count=60,
        trios_per_category=4,
        train_fraction=0.75,
        seed=3,
        workers=1,
        grid_rows=240,
        grid_cols=240,
    )
    settings.update(overrides)
    return fergen.PipelineConfig(**settings)


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory, desk_corpus_dir):
    """One completed desk-scale generation run, shared across read-only tests."""
    out_dir = tmp_path_factory.mktemp("desk-out")
    config = desk_config(desk_corpus_dir, out_dir)
    manifest = fergen.run_generate(config)
    return config, manifest, out_dir / "manifest.jsonl"
