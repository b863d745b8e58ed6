"""Client-side scheduling simulator for black-box LLM APIs.

Three client-side layers (inter-class allocation, intra-class ordering,
admission overload control) are composed into named strategies and run
against a congestion-aware mock provider inside a deterministic
discrete-event loop.  The harness reproduces a matrix of experiments as
seed-deterministic CSV tables.
"""

from .config import ScenarioConfig, Strategy, validate_config
from .harness import run_experiment
from .metrics import RunSummary, aggregate, percentile, summarize
from .scheduler import RunLog, run
from .workload import (
    Bucket,
    Congestion,
    InformationLevel,
    Mix,
    Request,
    attach_priors,
    generate_stream,
    load_trace,
)

__version__ = "0.1.0"

__all__ = [
    "Bucket",
    "Congestion",
    "InformationLevel",
    "Mix",
    "Request",
    "RunLog",
    "RunSummary",
    "ScenarioConfig",
    "Strategy",
    "aggregate",
    "attach_priors",
    "generate_stream",
    "load_trace",
    "percentile",
    "run",
    "run_experiment",
    "summarize",
    "validate_config",
    "__version__",
]
