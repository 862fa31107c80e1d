from dampwave.commands.common import (add_grid_flags, add_lifespan_flags, add_nonlinearity_flags, add_parser,
                                      add_physics_flags, run_kind)
from dampwave.models.experiment import ExperimentKind


def register(subparsers):
    parser = add_parser(subparsers, "lifespan", "Blow-up times over an eps ladder and the log-log lifespan fit")
    add_physics_flags(parser)
    add_nonlinearity_flags(parser, choices=["abs_p", "signed_p"])
    add_grid_flags(parser)
    add_lifespan_flags(parser)
    parser.set_defaults(handler=handle)


def handle(args) -> int:
    return run_kind(ExperimentKind.LIFESPAN_SWEEP, args)
