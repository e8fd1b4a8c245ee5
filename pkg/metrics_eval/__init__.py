from .metrics import centroid_distance, centroid_mm, dsc, mse, neg_jacobian_fraction, tre
from .report import (METRICS, EvalReport, comparison_table, evaluate_pair, evaluate_pairs, format_mean_std,
                     paired_pvalue)
from .table import Table

__all__ = [
    "centroid_distance", "centroid_mm", "dsc", "mse", "neg_jacobian_fraction", "tre",
    "METRICS", "EvalReport", "comparison_table", "evaluate_pair", "evaluate_pairs", "format_mean_std",
    "paired_pvalue", "Table",
]
