"""Blockage-aware placement and resource allocation for multi-UAV networks.

Max-min rate optimisation of UAV positions and transmit power jointly with the
user/subcarrier association, under a channel whose LoS/NLoS state follows
from building geometry.
"""
from .channel import ChannelParams
from .geometry import Building, ShadowSet, blocked_regions, los_oracle
from .netmodel import SolutionState, objective_Z, rates
from .pdlio import AlgoParams, Network, RunReport, optimize, run
from .scenario import (SCHEMES, Scenario, ScenarioError, initial_state, load_scenario,
                       monte_carlo, run_scheme, synthetic_scene, validate)
from .subsolver import MaximinProblem, solve_maximin

__version__ = "0.1.0"
