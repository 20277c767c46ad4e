"""Configuration, persistence and CLI orchestration of the full experiment."""
from .config import PRESETS, ExperimentConfig, build_config, load_config
from .pipeline import (cmd_all, cmd_extract, cmd_generate, cmd_mil, cmd_pca, cmd_pretrain,
                       cmd_report, geometry_stats, write_run_manifest)

__all__ = [
    "PRESETS", "ExperimentConfig", "build_config", "load_config", "cmd_all", "cmd_extract",
    "cmd_generate", "cmd_mil", "cmd_pca", "cmd_pretrain", "cmd_report", "geometry_stats",
    "write_run_manifest",
]
