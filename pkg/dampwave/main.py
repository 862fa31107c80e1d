import argparse
import logging
import sys
from typing import List, Optional

from dampwave.commands import critical, decay, lifespan, phi, picard, simulate, verify
from dampwave.core.dependencies import get_settings
from dampwave.core.errors import ConfigError, DampwaveError

logger = logging.getLogger(__name__)

COMMANDS = (simulate, phi, decay, lifespan, critical, picard, verify)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dampwave",
        description="Numerical lab for the damped wave equation u_tt - u_xx + mu0 (1+x^2)^(-1/2) u_t = f",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.required = True
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Exit code 0 when every invariant passes, 1 on an invariant failure, 2 on a usage or config error"""
    logging.basicConfig(level=get_settings().log_level)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    try:
        return args.handler(args)
    except ConfigError as e:
        for error in e.errors:
            print(f"config error: {error}", file=sys.stderr)
        return 2
    except DampwaveError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
