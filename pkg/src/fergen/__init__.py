"""fergen: synthesis of labeled 3D facial-expression image datasets.

Grows a small corpus of densely corresponded 3D face scans into a large
labeled image dataset: within each expression category, the most
shape-dissimilar identity trios (by thin-plate-spline bending energy) are
averaged into new faces, and each new face is rasterized into a 224x224
depth/azimuth/elevation image with a train/test manifest.
"""

from .baseline import (EvalExample, EvalReport, LinearModel, evaluate,
                       examples_from_manifest, image_to_features,
                       softmax_cross_entropy, train_linear)
from .bending import (BendingSystem, NegativeEnergyError, PairwiseEnergyTable,
                      SingularSystemError, bending_energy,
                      build_bending_system, pairwise_energy_table,
                      sample_vertex_indices, tps_kernel)
from .corpus import (CLASS_NAMES, EMOTIONS, NEUTRAL, Corpus, CorpusError,
                     ExpressionLabel, Face, generate_synthetic_corpus,
                     load_corpus, save_corpus, standard_categories)
from .gridfit import GridFitError, GridFitter, GridSpec, GridSurface, gridfit
from .normals import DegenerateNeighborhoodError, estimate_normals, to_spherical
from .pipeline import (DatasetManifest, ManifestRecord, PipelineConfig,
                       PipelineError, load_config, run_export, run_generate,
                       run_stats)
from .raster import (CROP_SIZE, ChannelImage, RasterError, RasterParams,
                     load_png, png_bytes, rasterize_face, save_png)
from .synthesis import synthesize_face, synthetic_identity
from .trios import TrioScore, save_trio_scores, select_top_trios, trio_score

__version__ = "0.1.0"

__all__ = [
    "BendingSystem", "CLASS_NAMES", "CROP_SIZE", "ChannelImage", "Corpus",
    "CorpusError", "DatasetManifest", "DegenerateNeighborhoodError",
    "EMOTIONS", "EvalExample", "EvalReport", "ExpressionLabel", "Face",
    "GridFitError", "GridFitter", "GridSpec", "GridSurface", "LinearModel",
    "ManifestRecord", "NEUTRAL", "NegativeEnergyError", "PairwiseEnergyTable",
    "PipelineConfig", "PipelineError", "RasterError", "RasterParams",
    "SingularSystemError", "TrioScore", "bending_energy",
    "build_bending_system", "evaluate", "examples_from_manifest",
    "generate_synthetic_corpus", "gridfit", "image_to_features",
    "load_config", "load_corpus", "load_png", "pairwise_energy_table",
    "png_bytes", "rasterize_face", "run_export", "run_generate", "run_stats",
    "sample_vertex_indices", "save_corpus", "save_png", "save_trio_scores",
    "select_top_trios", "softmax_cross_entropy", "standard_categories",
    "synthesize_face", "synthetic_identity", "to_spherical", "tps_kernel",
    "train_linear", "trio_score",
]
