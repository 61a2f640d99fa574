"""Linear probes, four-way trials, scorers and reports."""

from .probe import ProbeResult, ProbeSplit, extract_features, linear_probe, make_split
from .report import emit_report, run_dir
from .trials import (
    TrialRecord,
    image_model_adapter,
    make_trials,
    multimodal_scorer,
    nway_trial_eval,
    read_trials,
    trial_outcomes,
    write_trials,
)

__all__ = [
    "ProbeResult", "ProbeSplit", "extract_features", "linear_probe", "make_split",
    "emit_report", "run_dir",
    "TrialRecord", "image_model_adapter", "make_trials", "multimodal_scorer", "nway_trial_eval",
    "read_trials", "trial_outcomes", "write_trials",
]
