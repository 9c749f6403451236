r"""Contain the main features of the ``covisac`` package: energy-efficient
covert mobile edge computing for UAVs served by networked sensing and
communication access points."""

from __future__ import annotations

__all__ = [
    "AoSettings",
    "ChannelSet",
    "ConicSettings",
    "Design",
    "EnergyBreakdown",
    "ResourceAllocation",
    "ScaSettings",
    "ScenarioConfig",
    "SolveReport",
    "Trajectory",
    "TrustRegionSettings",
    "alternate",
    "load_scenario",
    "solve_design",
    "sweep",
]

from covisac.ao_driver import AoSettings, Design, SolveReport, alternate, solve_design, sweep
from covisac.channel import ChannelSet
from covisac.conic import ConicSettings
from covisac.metrics import EnergyBreakdown, ResourceAllocation
from covisac.ra_solver import ScaSettings
from covisac.scenario import ScenarioConfig, Trajectory, load_scenario
from covisac.traj_solver import TrustRegionSettings
