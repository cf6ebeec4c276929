"""
ShellRig Scenario Routes
"""

from typing import Any, Dict, List

from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field

from shellrig.config import SCHEMA_VERSION, apply_overrides, validate_config
from shellrig.errors import ConfigError
from shellrig.experiments import build_scenario
from shellrig.families import FAMILY_NAMES
from shellrig.target_space import METRIC_CATALOG

router = APIRouter()

EXPERIMENT_KINDS = ["energies", "rigidity", "reverse-poincare", "partition", "convergence"]


class ScenarioRequest(BaseModel):
    config: Dict[str, Any] = Field(default_factory=dict)
    overrides: List[str] = Field(default_factory=list)


class CatalogResponse(BaseModel):
    schema_version: int
    metrics: List[str]
    families: List[str]
    experiments: List[str]


class CheckResponse(BaseModel):
    valid: bool
    resolved: Dict[str, Any]
    grid_nodes: int
    comparability: float


def resolve_request(request: ScenarioRequest):
    """Validated config for a request body, or 422 naming the offending key"""
    try:
        return validate_config(apply_overrides(dict(request.config), request.overrides))
    except ConfigError as exc:
        raise HTTPException(status_code=422, detail={"path": exc.path, "message": exc.message})


@router.get("/catalog", response_model=CatalogResponse)
def get_catalog():
    """Known target metrics, immersion families and experiment kinds"""
    return CatalogResponse(
        schema_version=SCHEMA_VERSION,
        metrics=sorted(METRIC_CATALOG),
        families=list(FAMILY_NAMES),
        experiments=EXPERIMENT_KINDS,
    )


@router.post("/check", response_model=CheckResponse)
def check_scenario(request: ScenarioRequest):
    config = resolve_request(request)
    try:
        scenario = build_scenario(config)
    except ConfigError as exc:
        raise HTTPException(status_code=422, detail={"path": exc.path, "message": exc.message})
    return CheckResponse(
        valid=True,
        resolved=config.resolved(),
        grid_nodes=int(scenario.domain.weights.size),
        comparability=float(scenario.domain.lam),
    )
