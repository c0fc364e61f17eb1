"""Configuration, persistence, experiments, plots and the CLI."""
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .experiment import ExperimentReport, run_experiment, write_report
from .persistence import TrajectoryFormatError, load_trajectory, save_trajectory
