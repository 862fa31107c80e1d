from dampwave.commands.common import add_parser, run_kind
from dampwave.models.experiment import ExperimentKind


def register(subparsers):
    parser = add_parser(subparsers, "phi", "Tabulate phi and run the growth and psi-mass checks")
    parser.add_argument("--mu0", type=float, help="damping strength")
    parser.add_argument("--R0", "--r0", dest="R0", type=float, help="data support radius for the psi mass")
    parser.add_argument("--rmax", "--r-max", dest="r_max", type=float, help="table radius")
    parser.add_argument("--dr", type=float, help="RK4 step")
    parser.add_argument("--psi-t-max", dest="psi_t_max", type=float, help="last time of the psi-mass curve")
    parser.set_defaults(handler=handle)


def handle(args) -> int:
    return run_kind(ExperimentKind.PHI_CHECKS, args)
