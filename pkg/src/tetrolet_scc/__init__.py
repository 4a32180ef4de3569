"""Adaptive tetromino-based Haar transform with sparse concept coding.

Feature pipeline for handwritten character images: a multilevel Tetrolet
decomposition adapts a Haar basis to local shape geometry, sparse concept
coding compresses the transform coefficients into low-dimensional
discriminative codes, and a nearest-dictionary-column recognizer assigns
class labels.  Includes MNIST/IDX and labelled-directory ingestion plus a
seeded cross-validation harness and CLI.
"""

from .tetromino import (
    CATALOG_SIZE,
    HAAR_MATRIX,
    Covering,
    CoveringCatalog,
    Tetromino,
    enumerate_coverings,
    four_neighborhood,
    haar_coefficient,
    linear_index,
)
from .transform import (
    CorruptPyramidError,
    CoveringMode,
    PyramidLevel,
    ShrinkageConfig,
    TetroletPyramid,
    TransformConfig,
    analyze_block,
    bits_per_pixel,
    covering_costs,
    deserialize_pyramid,
    feature_vector,
    flatten,
    forward,
    inverse,
    serialize_pyramid,
    shrink,
    side_info_cost,
    transform_image,
)
from .coder import (
    CoderConfig,
    ConceptBasis,
    ConvergenceError,
    SparseCodes,
    encode_matrix,
    factorization_error,
    lasso_encode,
    learn_basis,
    project_test,
    spectral_embedding,
)
from .recognizer import (
    TrainingSet,
    build_training_set,
    classify,
    load_model,
    recognize_image,
    save_model,
    score,
)
from .datasets import (
    FormatError,
    FoldPlan,
    LabeledDataset,
    load_directory,
    load_mnist_directory,
    normalize,
    parse_idx_images,
    parse_idx_labels,
    stratified_folds,
    write_idx_images,
    write_idx_labels,
)
from .evaluation import (
    ConfusionMatrix,
    EvalReport,
    PipelineConfig,
    accuracy,
    confusion_matrix,
    cross_validate,
    fit_pipeline,
    micro_accuracy,
    recall_precision,
    sweep_k,
)

__version__ = "0.1.0"
