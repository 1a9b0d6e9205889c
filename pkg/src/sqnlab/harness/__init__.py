"""Multi-run experiments, presets, CSV/JSON output and the command line."""

from .experiment import (
    AggregateStats,
    AlgorithmSpec,
    ConfigError,
    ExperimentFailed,
    ExperimentResult,
    ExperimentSpec,
    aggregate,
    bb_fraction_report,
    run_experiment,
    run_one,
    run_seed,
    spec_from_dict,
)
from .output import CSV_COLUMNS, emit_csv, emit_json, read_csv, read_json, stats_from_dict, write_outputs
from .presets import SVM_NSFO_GRID, svm_preset, table1_preset
