"""Crowd-annotation soft-labeling toolkit.

Turns raw multi-annotator label sets into per-item probability
distributions via multiple views (count normalizations and latent-truth
models), aggregates the views (averaging, Jensen-Shannon centroid,
temperature scaling, hybrid), distills the result into a linear softmax
classifier with a KL loss, and evaluates with macro-F1 and calibrated
log-likelihood.
"""

__version__ = "0.1.0"

from .distributions import (
    Categorical,
    LogProbs,
    NaturalParams,
    from_natural,
    grad_neg_entropy,
    inv_grad_neg_entropy,
    jsd,
    jsd_natural,
    kld,
    neg_entropy,
    softmax,
    to_natural,
)
from .annotations import (
    AnnotationSet,
    LabelSpace,
    VoteCounts,
    load_annotations,
    majority_vote,
    softmax_normalize,
    standard_normalize,
    vote_counts,
)
from .annotator_models import (
    DawidSkeneModel,
    EmConfig,
    MaceModel,
    fit_dawid_skene,
    fit_mace,
    log_likelihood,
)
from .aggregation import (
    CccpConfig,
    Ensemble,
    TempFitConfig,
    Temperatures,
    apply_temperatures,
    average,
    cccp_step,
    fit_temperatures,
    hybrid,
    js_centroid,
    jsc_objective,
    temperature_scaled_average,
)
from .distill import FeatureDataset, LinearSoftmaxModel, TrainConfig, grad_kld, kld_loss, predict, train
from .evaluation import (
    CllConfig,
    EvalReport,
    calibrated_log_likelihood,
    evaluate,
    fit_cll_temperature,
    hub_analysis,
    macro_f1,
    nll,
    pearson,
)
from .simulate import AnnotatorProfile, SimConfig, generate_crowd
