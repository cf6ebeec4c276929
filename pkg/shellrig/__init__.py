"""
ShellRig Package

Numerical toolkit for Riemannian target spaces, discrete immersions of a cube
and the energies and rigidity estimates that control them.
"""

from shellrig.config import ScenarioConfig, load_config, validate_config
from shellrig.errors import (
    ChartError,
    ConfigError,
    GeodesicError,
    HypothesisError,
    MetricError,
    PatchError,
    ReportError,
    ShellRigError,
)
from shellrig.experiments import (
    ExperimentResult,
    Scenario,
    build_scenario,
    classify_partition,
    convergence_experiment,
    emit_reports,
    json_document,
    parameter_sweep,
    run_experiment,
)
from shellrig.immersions import DiscreteImmersion, GridDomain
from shellrig.metric_core import ConstMetric, LinearMapSample
from shellrig.target_space import MetricField, catalog_metric

__version__ = "1.0.0"

__all__ = [
    "ChartError",
    "ConfigError",
    "ConstMetric",
    "DiscreteImmersion",
    "ExperimentResult",
    "GeodesicError",
    "GridDomain",
    "HypothesisError",
    "LinearMapSample",
    "MetricError",
    "MetricField",
    "PatchError",
    "ReportError",
    "Scenario",
    "ShellRigError",
    "ScenarioConfig",
    "build_scenario",
    "catalog_metric",
    "classify_partition",
    "convergence_experiment",
    "emit_reports",
    "json_document",
    "load_config",
    "parameter_sweep",
    "run_experiment",
    "validate_config",
]
