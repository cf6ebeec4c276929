"""
ShellRig Configuration Module

Scenario files are TOML with ``schema_version = 1``; every section is a
pydantic model that rejects unknown keys, so errors carry the dotted path of
the offending key.
"""

import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from shellrig.errors import ConfigError
from shellrig.families import Family, PlaneFamily
from shellrig.target_space import METRIC_CATALOG

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ScenarioSection(_Section):
    name: str = "scenario"
    seed: int = 0
    p: float = Field(2.0, gt=1.0)


class DomainSection(_Section):
    d: Literal[1, 2, 3] = 2
    side: float = Field(1.0, gt=0)
    m_per_side: int = Field(17, ge=3)
    origin: Optional[List[float]] = None
    source_metric: Literal["flat", "constant", "conformal-wave", "induced"] = "flat"
    source_params: Dict[str, Any] = Field(default_factory=dict)
    lam: Optional[float] = Field(None, ge=1.0)

    @model_validator(mode="after")
    def _origin_matches(self):
        if self.origin is not None and len(self.origin) != self.d:
            raise ValueError(f"origin needs {self.d} coordinates")
        return self


class TargetSection(_Section):
    metric: Optional[str] = None
    params: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("metric")
    @classmethod
    def _known_metric(cls, value):
        if value is not None and value not in METRIC_CATALOG:
            raise ValueError(f"unknown metric {value!r}; known metrics: {', '.join(sorted(METRIC_CATALOG))}")
        return value


class ReferenceSection(_Section):
    kind: Literal["zero", "constant", "family"] = "zero"
    entries: Optional[List[List[float]]] = None

    @model_validator(mode="after")
    def _entries_given(self):
        if self.kind == "constant" and self.entries is None:
            raise ValueError("a constant reference needs entries")
        return self


class ChartSection(_Section):
    kind: Literal["affine", "normal"] = "affine"
    center: Optional[List[float]] = None
    radius: float = Field(16.0, gt=0)
    r: float = Field(4.0, gt=0)
    delta: float = Field(0.5, gt=0, lt=1)

    @model_validator(mode="after")
    def _ball_fits(self):
        if 2.0 * self.r > self.radius:
            raise ValueError(f"extension radius r = {self.r} needs a chart radius of at least {2.0 * self.r}")
        return self


class PartitionSection(_Section):
    m: int = Field(4, ge=1)
    tau: Optional[float] = Field(None, gt=0)
    epsilon: float = Field(0.1, gt=0, lt=1)
    q0: Optional[List[float]] = None


class ExperimentSection(_Section):
    kind: Literal["energies", "rigidity", "reverse-poincare", "partition", "convergence"] = "energies"
    sweep_param: str = "k"
    values: List[float] = Field(default_factory=list)
    fit_from: float = 4.0
    partner: Dict[str, Any] = Field(default_factory=dict)
    n_jobs: int = 1


class OutputSection(_Section):
    dir: Optional[str] = None
    stem: Optional[str] = None
    formats: List[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])


class ScenarioConfig(_Section):
    schema_version: Literal[1] = SCHEMA_VERSION
    scenario: ScenarioSection = Field(default_factory=ScenarioSection)
    domain: DomainSection = Field(default_factory=DomainSection)
    target: TargetSection = Field(default_factory=TargetSection)
    family: Family = Field(default_factory=PlaneFamily)
    reference: ReferenceSection = Field(default_factory=ReferenceSection)
    chart: ChartSection = Field(default_factory=ChartSection)
    partition: PartitionSection = Field(default_factory=PartitionSection)
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    output: OutputSection = Field(default_factory=OutputSection)

    @property
    def p(self) -> float:
        return self.scenario.p

    @property
    def target_metric(self) -> str:
        return self.target.metric or self.family.default_target()

    def resolved(self) -> Dict[str, Any]:
        """Fully resolved configuration with defaults filled, JSON-ready"""
        out = self.model_dump(mode="json")
        out["target"]["metric"] = self.target_metric
        return out


def _error_path(error: Dict[str, Any]) -> str:
    return ".".join(str(part) for part in error["loc"])


def validate_config(raw: Dict[str, Any]) -> ScenarioConfig:
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported schema version {version!r}, expected {SCHEMA_VERSION}")
    try:
        return ScenarioConfig.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(_error_path(first), first["msg"]) from None


def parse_override(text: str):
    """``section.key=value`` with the value read as a TOML literal (bare words stay strings)"""
    if "=" not in text:
        raise ConfigError(text, "override must look like section.key=value")
    key, value = (part.strip() for part in text.split("=", 1))
    if not key:
        raise ConfigError(text, "override has an empty key")
    try:
        parsed = tomllib.loads(f"value = {value}")["value"]
    except tomllib.TOMLDecodeError:
        parsed = value
    return key.split("."), parsed


def apply_overrides(raw: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    for text in overrides:
        path, value = parse_override(text)
        node = raw
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(".".join(path), f"{part!r} is not a section")
            node = child
        node[path[-1]] = value
    return raw


def load_config(path, overrides: Sequence[str] = ()) -> ScenarioConfig:
    path = Path(path)
    try:
        with path.open("rb") as handle:
            raw = tomllib.load(handle)
    except FileNotFoundError:
        raise ConfigError("", f"config file {path} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"{path} is not valid TOML: {exc}") from None
    config = validate_config(apply_overrides(raw, overrides))
    logger.info("loaded scenario %r from %s", config.scenario.name, path)
    return config
