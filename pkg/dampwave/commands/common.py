import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict

from dampwave.core.dependencies import build_config, get_settings
from dampwave.models.duhamel import QuadratureRule
from dampwave.models.experiment import ExperimentKind, Manifest
from dampwave.models.wave import InitialProfile, NonlinearityType, Scheme
from dampwave.services.experiment_service import experiment_service

logger = logging.getLogger(__name__)

# parser keys that are not ExperimentConfig fields
CONTROL_KEYS = {"command", "handler", "config", "check"}


def add_parser(subparsers, name: str, help: str) -> argparse.ArgumentParser:
    """Subcommand parser whose unset flags stay out of the namespace, so file values survive"""
    parser = subparsers.add_parser(name, help=help, description=help, argument_default=argparse.SUPPRESS)
    parser.add_argument("--config", type=Path, help="JSON config file; flags override its values")
    parser.add_argument("--name", help="experiment directory under the output root")
    parser.add_argument("--output-dir", dest="output_dir", type=Path,
                        help="artifact root (default: $DAMPWAVE_OUTPUT_DIR or ./artifacts)")
    parser.add_argument("--workers", type=int, help="parallel worker processes")
    return parser


def add_physics_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--mu0", type=float, help="damping strength")
    parser.add_argument("--R0", "--r0", dest="R0", type=float, help="data support radius")
    parser.add_argument("--profile", choices=[p.value for p in InitialProfile])
    parser.add_argument("--eps", type=float, help="data amplitude")
    parser.add_argument("--u0-weight", dest="u0_weight", type=float)
    parser.add_argument("--u1-weight", dest="u1_weight", type=float)
    parser.add_argument("--profile-perturbation", dest="profile_perturbation", type=float,
                        help="amplitude in [0, 1) of the seeded profile perturbation")
    parser.add_argument("--seed", type=int)


def add_nonlinearity_flags(parser: argparse.ArgumentParser, choices=None):
    kinds = choices or [k.value for k in NonlinearityType]
    parser.add_argument("--nonlinearity", choices=kinds)
    parser.add_argument("--p", type=float, help="exponent on u_t")
    parser.add_argument("--q", type=float, help="exponent on u_x")


def add_grid_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--L", "--half-width", dest="L", type=float, help="domain half-width")
    parser.add_argument("--nx", type=int, help="odd number of grid nodes (needs --L)")
    parser.add_argument("--dx", type=float)
    parser.add_argument("--cfl", type=float)
    parser.add_argument("--scheme", choices=[s.value for s in Scheme])
    parser.add_argument("--t-end", dest="t_end", type=float)
    parser.add_argument("--blowup-threshold", dest="blowup_threshold", type=float)
    parser.add_argument("--sample-every", dest="sample_every", type=float)


def add_lifespan_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--eps-max", dest="eps_max", type=float, help="largest eps of the ladder")
    parser.add_argument("--eps-ladder", dest="eps_ladder", type=int, help="number of ladder entries")
    parser.add_argument("--eps-ratio", dest="eps_ratio", type=float, help="ratio between ladder entries")
    parser.add_argument("--max-refinements", dest="max_refinements", type=int)


def add_picard_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--K", "--k", dest="K", type=int, help="number of Picard iterates")
    parser.add_argument("--quad-dt", dest="quad_dt", type=float, help="Duhamel quadrature spacing")
    parser.add_argument("--quadrature", choices=[r.value for r in QuadratureRule])
    parser.add_argument("--s0", type=float, help="start time of the propagation check")
    parser.add_argument("--propagation-span", dest="propagation_span", type=float)


def overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {key: value for key, value in vars(args).items() if key not in CONTROL_KEYS}


def report(manifest: Manifest, root: Path) -> int:
    failed = [name for name, ok in manifest.invariants.items() if not ok]
    for job_id, error in manifest.failures.items():
        print(f"job {job_id} failed: {error}", file=sys.stderr)
    for name in failed:
        print(f"invariant failed: {name}", file=sys.stderr)
    status = "PASS" if manifest.passed else "FAIL"
    print(f"{status} {manifest.experiment}: {len(manifest.artifacts)} artifacts, "
          f"{len(manifest.invariants) - len(failed)}/{len(manifest.invariants)} invariants "
          f"({root / manifest.experiment / 'manifest.json'})")
    return 0 if manifest.passed else 1


def run_kind(kind: ExperimentKind, args: argparse.Namespace) -> int:
    """Shared adapter: flags -> ExperimentConfig -> harness -> exit code"""
    config = build_config(kind, overrides(args), getattr(args, "config", None))
    root = Path(config.output_dir or get_settings().output_dir)
    logger.info(f"Starting {kind.value} into {root}")
    manifest = experiment_service.run_experiment(config, root)
    code = report(manifest, root)
    logger.info(f"{kind.value} finished with exit code {code}")
    return code
