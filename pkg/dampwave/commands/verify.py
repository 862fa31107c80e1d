import argparse
import logging
from pathlib import Path

from dampwave.commands.common import report
from dampwave.core.dependencies import get_settings
from dampwave.core.errors import ConfigError
from dampwave.services.experiment_service import experiment_service

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("verify", help="Run the fast invariant suite end to end",
                                   description="Run the fast invariant suite end to end",
                                   argument_default=argparse.SUPPRESS)
    parser.add_argument("--output-dir", dest="output_dir", type=Path)
    parser.add_argument("--workers", type=int)
    parser.set_defaults(handler=handle)


def handle(args) -> int:
    root = Path(getattr(args, "output_dir", None) or get_settings().output_dir)
    workers = getattr(args, "workers", 1)
    if workers < 1:
        raise ConfigError([f"workers: must be at least 1, got {workers}"])
    logger.info(f"Verify suite into {root} on {workers} worker(s)")
    manifests = experiment_service.run_verify(root, workers)
    code = max((report(manifest, root) for manifest in manifests), default=0)
    logger.info(f"Verify suite finished with exit code {code}")
    return code
