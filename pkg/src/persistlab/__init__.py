"""Instability and persistence analysis for cross-diffusion parabolic systems."""

__version__ = "0.1.0"

from .discretization import Grid, build_grid, assemble  # noqa: E402
from .model import Scenario, SystemSpec, make_system, validate_system  # noqa: E402
from .scenarios import (REGISTRY, SCHEMA, analytic_scenario, load_scenario,  # noqa: E402
                        resolve_scenario, scenario_from_json)
from .spectral import TauResult, principal_eigenpair, spectral_comparison  # noqa: E402
from .instability import (check_coop_corollary, check_coop_criterion,  # noqa: E402
                          check_competitive_block, check_E_condition, check_neumann_smallness,
                          compute_tau, scale_scenario)
from .structure import certify_positivity, classify, triangularize  # noqa: E402
from .sim import persistence_verdict, run  # noqa: E402
