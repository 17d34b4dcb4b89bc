"""Scalable causal structure learning for bipartite (X -> Y) graphs.

Amortized mask-conditioned regressors feed a GCM conditional independence
test; a Gumbel-Softmax guided search looks for the conditioning subset of the
other Y variables that maximizes each edge's p-value, and Benjamini-Hochberg
controls the false discovery rate over all edges.
"""

from .amortized import AmortizedModel, MaskState, TrainConfig, fit_count, train_x_model, train_y_model
from .bench import BenchSpec, run_bench
from .data import (DataMatrix, Domain, GroundTruthGraph, RngHandle, decode_binary, load_csv, recode_binary,
                   write_csv)
from .discovery import SCSL, DiscoveryConfig, DiscoveryReport, bh_procedure, discover, marginal_pvalues
from .exceptions import SCSLError
from .gcm import EdgeEvaluator, GcmResult, gcm_pvalue, gcm_statistic, gcm_test, residual_products
from .metrics import BenchMetrics, compute_metrics
from .search import EdgeResult, SearchConfig, SearchMode, search_edge
from .synthgen import GenConfig, gen_continuous_variants, gen_real_confounding, gen_synth_confounding

__version__ = "0.1.0"

__all__ = [
    "AmortizedModel", "MaskState", "TrainConfig", "fit_count", "train_x_model", "train_y_model",
    "BenchSpec", "run_bench",
    "DataMatrix", "Domain", "GroundTruthGraph", "RngHandle", "decode_binary", "load_csv", "recode_binary",
    "write_csv",
    "SCSL", "DiscoveryConfig", "DiscoveryReport", "bh_procedure", "discover", "marginal_pvalues",
    "SCSLError",
    "EdgeEvaluator", "GcmResult", "gcm_pvalue", "gcm_statistic", "gcm_test", "residual_products",
    "BenchMetrics", "compute_metrics",
    "EdgeResult", "SearchConfig", "SearchMode", "search_edge",
    "GenConfig", "gen_continuous_variants", "gen_real_confounding", "gen_synth_confounding",
]
