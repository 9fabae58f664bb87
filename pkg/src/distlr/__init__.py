"""Distance-based likelihood ratios for same-source / different-source
comparison of high-dimensional traces."""

__version__ = "0.1.0"

from .direct import (
    DirectModel,
    Gmm2,
    direct_lr,
    direct_posterior,
    direct_posterior_log_odds,
    fit_gmm2,
    gmm_pdf,
)
from .evaluation import (
    EvalReport,
    RocCurve,
    evaluate_method,
    evaluate_model,
    grouped_kfold,
    roc_auc,
    youden_best,
)
from .indirect import (
    LogisticModel,
    fit_logistic,
    indirect_lr,
    indirect_posterior,
    indirect_posterior_log_odds,
    logistic_output,
)
from .methods import MethodConfig, fit_method, log_lr_scores
from .pairs import (
    PairSet,
    compute_distances,
    enumerate_pairs,
    euclidean,
    pearson_distance,
    rank_transform,
    spearman_distance,
    vectorial_distance,
)
from .persistence import load_model, save_model
from .selection import FeatureRanking, SelectionResult, rank_features, select_count_cv
from .stattests import fisher_exact_p, wilcoxon_ranksum_p
from .synth import PanelConfig, generate_panel
from .traces import (
    CsvSchema,
    SplitConfig,
    TraceMatrix,
    dichotomize,
    ingest_csv,
    normalize_log,
    repeatability,
    split_calibration_test,
    write_csv,
)
