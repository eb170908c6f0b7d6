"""Early approximate results over block files, with bootstrap error bounds."""
from .engine import FinalResult, RuntimeConfig, full_scan, run_job
from .estimator import EarlyApproximation, SampleSizeEstimator
from .jobs import parse_job
from .ssabe import EstimatorConfig

__all__ = ["EarlyApproximation", "EstimatorConfig", "FinalResult", "RuntimeConfig",
           "SampleSizeEstimator", "full_scan", "parse_job", "run_job"]
__version__ = "0.1.0"
