"""Occlusion sensitivity analysis with deep-feature augmentation subspaces."""

from .backend import InputSpec, OracleRegionModel, ToyLinearBackend, load_model
from .errors import (
    CapabilityError,
    ConfigError,
    DegenerateFeatureError,
    DegenerateSaliencyError,
    ModelLoadError,
    OsaDasError,
)
from .explain import ExplainerConfig, Heatmap, compose_heatmaps, explain, osa_classic, osa_das, osa_representation
from .metrics import MetricConfig, MetricReport, evaluate
from .subspace import Subspace, canonical_cosines, orthogonal_degree, uncentered_pca

__version__ = "0.1.0"
