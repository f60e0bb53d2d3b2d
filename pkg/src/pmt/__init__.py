"""Coverage-aware predictive mutation testing."""

__version__ = "0.1.0"

from .dataset import (Dataset, EncoderState, MutantRecord, apply_encoding, filter_covered,  # noqa: E402
                      fit_frequency_encoding, load_csv, split_by_project, write_csv)
from .ensemble import (CombinedModel, ForestConfig, GbBagConfig, PipelineOptions, classify,  # noqa: E402
                       fit_forest, fit_gb_bag, fit_pipeline, load_model, predict_combined, predict_forest)
from .featsel import permutation_importance, recursive_elimination, spearman_rho  # noqa: E402
from .metrics import (ConfusionMatrix, balanced_accuracy_adjusted, evaluate_per_project, mcc,  # noqa: E402
                      roc_auc)
from .resample import AdasynConfig, adasyn, knn_indices  # noqa: E402
from .schema import FeatureSchema, FeatureSpec, default_schema, load_schema  # noqa: E402
from .skesd import MetricGroup, cohens_delta, scott_knott_esd  # noqa: E402
from .synthdata import SynthConfig, generate, inflation_experiment  # noqa: E402
from .trees import GbConfig, TreeConfig, fit_gb, fit_tree  # noqa: E402
