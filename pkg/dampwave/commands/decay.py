from dampwave.commands.common import add_grid_flags, add_parser, add_physics_flags, run_kind
from dampwave.models.experiment import ExperimentKind

CHECKS = {"decay": ExperimentKind.LINEAR_DECAY, "dissipation": ExperimentKind.DISSIPATION}


def register(subparsers):
    parser = add_parser(subparsers, "decay", "Linear energy decay fits or the dissipation identities")
    parser.add_argument("--check", choices=sorted(CHECKS), default="decay",
                        help="decay: fitted rates over a window; dissipation: identities and equivalence bounds")
    add_physics_flags(parser)
    add_grid_flags(parser)
    parser.add_argument("--window-lo", dest="window_lo", type=float)
    parser.add_argument("--window-hi", dest="window_hi", type=float)
    parser.add_argument("--mu", type=float, help="energy weight below min(1, mu0)")
    parser.add_argument("--refinement-levels", dest="refinement_levels", type=int)
    parser.set_defaults(handler=handle)


def handle(args) -> int:
    return run_kind(CHECKS[args.check], args)
