import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from dampwave.core.config import Settings
from dampwave.core.errors import ConfigError, ConfigParseError
from dampwave.models.experiment import ExperimentConfig, ExperimentKind
from dampwave.services.experiment_service import experiment_service

logger = logging.getLogger(__name__)


def get_settings() -> Settings:
    """Fresh settings, so DAMPWAVE_* variables set after import still apply"""
    return Settings()


def read_config_file(path: Path) -> Dict[str, Any]:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError([f"config: cannot read {path}: {e.strerror}"]) from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigParseError([f"{path}: line {e.lineno} column {e.colno}: {e.msg}"]) from e
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a key/value object"])
    return data


def build_config(kind: ExperimentKind, overrides: Dict[str, Any],
                 config_path: Optional[Path] = None) -> ExperimentConfig:
    """Config file (if any) overlaid with command-line flags; every problem is reported at once"""
    data: Dict[str, Any] = read_config_file(config_path) if config_path is not None else {}
    conflicts: List[str] = []
    file_kind = data.get("experiment")
    if file_kind is not None and file_kind != kind.value:
        conflicts.append(f"experiment: config file is {file_kind!r} but the subcommand runs {kind.value!r}")
    if "nx" in overrides and "L" not in overrides and "L" not in data:
        conflicts.append("nx: --nx needs --L")

    merged = {**data, **overrides, "experiment": kind.value}
    try:
        config = experiment_service.config_from_mapping(merged)
    except ConfigParseError:
        raise
    except ConfigError as e:
        raise ConfigError(conflicts + [error for error in e.errors if error not in conflicts]) from e
    if conflicts:
        raise ConfigError(conflicts)
    logger.debug(f"Resolved config: {experiment_service.dump_config(config)}")
    return config
