"""Label-free accuracy estimation from dataset-level feature representations.

The pipeline: summarize a set of classifier features as per-dimension
histograms + matched cluster centers + farthest-point samples against a
reference frame, then regress accuracy from the flat summary.  Scalar
baselines (threshold counts, average confidence, Frechet distance) and a
synthetic meta-set harness round out the experiment loop.
"""

from .errors import (
    ConfigError,
    FormatError,
    InputError,
    NumericError,
    TrainingError,
    ValidationError,
    WorkspaceError,
)
from .featureset import FeatureSet, load, save, validate
from .represent import (
    DatasetRepresentation,
    ReferenceFrame,
    RepresentationOptions,
    assemble,
    build_reference_frame,
    compute_clusters,
    compute_shape,
    fps_indices,
    fps_sample,
    kmeans,
    random_sample,
)
from .baselines import (
    GaussianSummary,
    average_confidence,
    baseline_representation,
    entropy_score_estimate,
    frechet_distance,
    gaussian_summary,
    prediction_score_estimate,
)
from .regress import (
    RegressorModel,
    TrainConfig,
    fit,
    gradient_check,
    init_model,
    load_model,
    predict,
    predict_batch,
    save_model,
)
from .metaset import (
    SampleSetRecord,
    ToyClassifier,
    ToyTask,
    TransformSpec,
    PrimitiveSpec,
    apply_transform,
    draw_split,
    generate_sets,
    train_toy_classifier,
)
from .harness import (
    ExperimentConfig,
    ExperimentReport,
    ablation_table,
    rmse,
    run_experiment,
    write_report,
)

__version__ = "0.1.0"
