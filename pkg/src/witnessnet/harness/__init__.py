"""Scenario replay, statistics, reporting and the command line."""

from ..aggregate import NetworkModel
from .report import RENDERERS, RenderError, render, report_from_jsonlines
from .scenario import Scenario, ScenarioError, bundled, interpolate, load_scenario, parse_scenario, walk
from .sim import EventKind, RunReport, Simulation, run
from .stats import StatsError, mean, median, pearson, spearman

__all__ = [name for name in dir() if not name.startswith("_")]
