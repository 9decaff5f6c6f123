"""Open-set recognition of AD/CN/Unknown from binary abnormal patterns.

Records are encoded as patterns of out-of-normal-range flags, clustered per
known category, and scored against Weibull tail models of their distances
to the category centers. Those scores revise a closed-set classifier's
activation vector into probabilities over (Unknown, AD, CN).
"""

from .classifier import ClassifierModel, TrainConfig, train_classifier
from .cluster import ClusterCenters, fit_minibatch_kmeans
from .data_model import (
    INDICATORS,
    KNOWN,
    OPEN_SET_ORDER,
    Category,
    DataError,
    Dataset,
    SubjectRecord,
    parse_dataset,
    split_dataset,
    write_dataset,
)
from .evaluation import EvalReport, auc_ovr, bootstrap_ci, evaluate, sensitivity
from .evt import GpdModel, WeibullTailModel, fit_gpd, fit_weibull_tail, gpd_cdf, w_score
from .openset import (
    ModelError,
    OpenApMaxModel,
    OpenSetPrediction,
    fit_openapmax,
    fit_openmax,
    predict_many,
    predict_openapmax,
    predict_openmax,
    predict_softmax_threshold,
    tune_tau,
)
from .pattern import AbnormalPattern, RangeTable, binarize, estimate_normal_ranges, pattern_distance
from .synth import default_spec, generate_cohort

__version__ = "0.1.0"
