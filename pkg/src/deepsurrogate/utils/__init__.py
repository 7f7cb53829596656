from deepsurrogate.utils.io import atomic_write_text, write_csv, write_json
from deepsurrogate.utils.metrics import EvalReport, coverage, evaluate, misclassification_rate, rmspe

__all__ = [
    "atomic_write_text",
    "write_csv",
    "write_json",
    "EvalReport",
    "coverage",
    "evaluate",
    "misclassification_rate",
    "rmspe",
]
