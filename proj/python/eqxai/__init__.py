"""Invariance and equivariance of explanations for symmetry-invariant models.

Quick start::

    import eqxai
    exp = eqxai.Experiment("[dataset]\nkind = ecg_like\n[models]\nkinds = all_cnn_1d\n")
    exp.robustness("all_cnn_1d", "saliency", example=0)   # 1.0 on an invariant model
"""

from ._core import (
    ConfigError,
    Dataset,
    Error,
    Experiment,
    FormatError,
    Group,
    GroupMismatchError,
    InvalidArgumentError,
    ShapeMismatchError,
    Signal,
    default_config,
    generate,
    hoeffding_bound,
    hoeffding_deviation,
    read_report_csv,
    report,
    run,
    similarity,
    summarize,
)

__all__ = [
    "ConfigError",
    "Dataset",
    "Error",
    "Experiment",
    "FormatError",
    "Group",
    "GroupMismatchError",
    "InvalidArgumentError",
    "ShapeMismatchError",
    "Signal",
    "default_config",
    "generate",
    "hoeffding_bound",
    "hoeffding_deviation",
    "read_report_csv",
    "report",
    "run",
    "similarity",
    "summarize",
]

__version__ = "0.1.0"
