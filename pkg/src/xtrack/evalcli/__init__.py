from .ablation import TABLE_GRID, AblationTable, ablate, evaluate_model
from .certify import LAYERS, run_suite
from .cli import cli_main
from .configfile import ConfigFileError, dump_config, parse_config, read_config
from .metrics import MetricError, MetricsReport, ade, fde, metrics_report, rmse_at, step_errors
