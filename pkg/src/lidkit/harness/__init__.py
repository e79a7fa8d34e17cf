"""Experiment harness: synthetic data, configuration, recipes, and reports."""

from .config import ExperimentConfig, load_config, parse_config_text, parse_layers
from .data import Dataset, gen_synthetic, load_csv, save_csv
from .recipes import RECIPE_NAMES, run_recipe
from .report import ExperimentReport, load_report, save_report

__all__ = [
    "Dataset", "ExperimentConfig", "ExperimentReport", "RECIPE_NAMES",
    "gen_synthetic", "load_config", "load_csv", "parse_config_text",
    "parse_layers", "run_recipe", "save_csv", "save_report", "load_report",
]
