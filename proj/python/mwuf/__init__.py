"""Warm-up experiments for cold-start item embeddings.

The heavy lifting lives in the compiled extension; this package just re-exports
its surface under a stable name.
"""

from ._mwuf import (
    METHODS,
    PHASES,
    Config,
    Report,
    ablate,
    auc,
    config_help,
    load_checkpoint,
    relaimpr,
    reports_csv,
    run,
    save_checkpoint,
    split_summary,
)

__version__ = "0.1.0"

__all__ = [
    "METHODS",
    "PHASES",
    "Config",
    "Report",
    "ablate",
    "auc",
    "config_help",
    "load_checkpoint",
    "relaimpr",
    "reports_csv",
    "run",
    "save_checkpoint",
    "split_summary",
]
