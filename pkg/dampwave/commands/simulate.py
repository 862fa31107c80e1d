from dampwave.commands.common import add_grid_flags, add_nonlinearity_flags, add_parser, add_physics_flags, run_kind
from dampwave.models.experiment import ExperimentKind


def register(subparsers):
    parser = add_parser(subparsers, "simulate", "Single run with snapshot CSVs and the solver checks")
    add_physics_flags(parser)
    add_nonlinearity_flags(parser)
    add_grid_flags(parser)
    parser.add_argument("--snapshots", type=int, help="number of evenly spaced snapshots")
    parser.set_defaults(handler=handle)


def handle(args) -> int:
    return run_kind(ExperimentKind.SIMULATE, args)
