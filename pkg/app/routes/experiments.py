"""
ShellRig Experiment Routes
"""

import logging
from typing import List

from fastapi import APIRouter, HTTPException
from pydantic import Field

from app import settings
from app.routes.scenarios import ScenarioRequest, resolve_request
from shellrig.errors import ConfigError, HypothesisError, ReportError, ShellRigError
from shellrig.experiments import ExperimentResult, emit_reports, json_document, run_experiment

logger = logging.getLogger(__name__)

router = APIRouter()


class RunRequest(ScenarioRequest):
    write_reports: bool = False


class RunResponse(ExperimentResult):
    files: List[str] = Field(default_factory=list)


@router.post("/run", response_model=RunResponse)
def run_scenario(request: RunRequest):
    """Run the experiment a scenario describes and return its table and summary"""
    config = resolve_request(request)
    try:
        result = run_experiment(config, settings.N_JOBS)
        files = []
        if request.write_reports:
            directory = settings.output_dir(config.output.dir)
            files = [str(p) for p in emit_reports(result, directory, config.output.stem, config.output.formats)]
    except ConfigError as exc:
        raise HTTPException(status_code=422, detail={"path": exc.path, "message": exc.message})
    except HypothesisError as exc:
        raise HTTPException(status_code=409, detail={"hypothesis": exc.hypothesis, "message": exc.detail})
    except ReportError as exc:
        logger.error("report writing failed: %s", exc)
        raise HTTPException(status_code=500, detail=str(exc))
    except (ShellRigError, ArithmeticError) as exc:
        logger.error("experiment failed: %s", exc)
        raise HTTPException(status_code=500, detail={"error": type(exc).__name__, "message": str(exc)})
    return RunResponse(**json_document(result), files=files)
