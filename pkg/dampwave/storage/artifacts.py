import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Union

import pandas as pd
from pydantic import BaseModel

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def _atomic_write(path: Path, text: str):
    """Write to a temp file next to ``path`` and rename it into place"""
    path.parent.mkdir(parents=True, exist_ok=True)
    handle, temp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(handle, "w", newline="") as f:
            f.write(text)
        os.replace(temp_name, path)
    except Exception as e:
        logger.error(f"Error writing {path}: {e}")
        if os.path.exists(temp_name):
            os.remove(temp_name)
        raise


class ArtifactStore:
    """Artifacts under <root>/<experiment>/<job-id>/"""

    def __init__(self, root: Union[str, Path], experiment: str):
        self.root = Path(root)
        self.experiment = experiment

    @property
    def experiment_dir(self) -> Path:
        return self.root / self.experiment

    def job_dir(self, job_id: str) -> Path:
        return self.experiment_dir / job_id

    def write_csv(self, job_id: str, name: str, frame: pd.DataFrame) -> Path:
        path = self.job_dir(job_id) / name
        _atomic_write(path, frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))
        logger.debug(f"Wrote {path}")
        return path

    def write_json(self, job_id: str, name: str, payload: Any) -> Path:
        path = self.job_dir(job_id) / name
        if isinstance(payload, BaseModel):
            payload = payload.model_dump(mode="json")
        _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")
        logger.debug(f"Wrote {path}")
        return path

    def write_manifest(self, payload: Any) -> Path:
        path = self.experiment_dir / "manifest.json"
        if isinstance(payload, BaseModel):
            payload = payload.model_dump(mode="json")
        _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")
        logger.info(f"Manifest written to {path}")
        return path

    def load_json(self, path: Union[str, Path]) -> Any:
        with open(path) as f:
            return json.load(f)
