"""Cohort-guided multimodal survival analysis.

Trainable end to end on numpy: genomics and pathology encoders, knowledge
decomposition with cohort guidance, transformer fusion into a discrete
hazard, and a censorship-aware evaluation suite.
"""

from .autodiff import (
    SGD, FusedSGD, Parameter, Tensor, backward, cosine_similarity, no_grad,
    sgd_step,
)
from .data import (
    CohortDataset, PatientRecord, SyntheticSpec, assign_groups,
    discretize_times, generate_synthetic, load_cohort, make_folds, write_cohort,
)
from .decomposition import KnowledgeComponents, KnowledgeDecomposer
from .fusion import (
    FusionModel, HazardPrediction, nll_loss, risk_score, survival_function,
    total_loss,
)
from .genomics import GenomicsEncoder
from .guidance import CohortBank, cohort_loss, knowledge_loss, patient_loss
from .harness import (
    FoldReport, RunConfig, emit_report, evaluate_predictions,
    run_ablation_suite, run_cv,
)
from .model import SurvivalModel
from .pathology import Anchor, PathologyEncoder, align_centers, kmeans
from .stats import (
    KMCurve, SurvivalOutcome, concordance_index, km_curve, logrank_test,
    median_split, welch_ttest,
)

__version__ = "0.1.0"
