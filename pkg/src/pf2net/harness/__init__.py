"""Experiment grid, configuration and result persistence."""
from .config import ExperimentConfig, MethodOptions, config_from_dict, parse_config
from .experiment import ResultsTable, TableRow, run_dataset, run_experiment
