from imukit.harness.config import ConfigError, ExperimentConfig, METHODS, config_hash
from imukit.harness.pipeline import (
    MissingArtifactError, RunPaths, cmd_ablate, cmd_evaluate, cmd_gen_data,
    cmd_immunize, cmd_report, cmd_train,
)

__all__ = [
    "ConfigError", "ExperimentConfig", "METHODS", "config_hash",
    "MissingArtifactError", "RunPaths", "cmd_ablate", "cmd_evaluate",
    "cmd_gen_data", "cmd_immunize", "cmd_report", "cmd_train",
]
