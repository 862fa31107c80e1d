from dampwave.commands.common import (add_grid_flags, add_nonlinearity_flags, add_parser, add_physics_flags,
                                      add_picard_flags, run_kind)
from dampwave.models.experiment import ExperimentKind


def register(subparsers):
    parser = add_parser(subparsers, "picard", "Picard iterates of the Duhamel map and their contraction")
    add_physics_flags(parser)
    add_nonlinearity_flags(parser)
    add_grid_flags(parser)
    add_picard_flags(parser)
    parser.set_defaults(handler=handle)


def handle(args) -> int:
    return run_kind(ExperimentKind.PICARD, args)
