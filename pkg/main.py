import os
import logging
from typing import Any, Callable, Dict, List

import pandas as pd
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import ValidationError

from channel_model import InvalidParameterError
from config import AnalyzeRequest, ExperimentConfig, InstanceConfig, log_level
from dtmc_analysis import ModelMismatchError, UnreachableTargetError, analyze
from game_core import InstanceTooLargeError, equilibrium_report
from report_templates import (
    EquilibriumPayload,
    build_analysis_row,
    build_equilibrium_report,
    build_trial_summary,
)
from repositories.instances_repo import InstancesRepository
from repositories.results_repo import ResultsRepository
from sim_harness import SWEEP_COLUMNS, run_experiment, split_sweep, sweep_rows


logging.basicConfig(level=log_level())
logger = logging.getLogger("te-powerctl")

DEFAULT_API_MAX_WORK = 1_000_000

# Data layer (lazy init)
instances_repo = None
results_repo = None


app = FastAPI(title="te-powerctl")


@app.exception_handler(RequestValidationError)
async def validation_error(request: Request, exc: RequestValidationError):
    detail = [{"loc": list(e.get("loc", ())), "msg": e.get("msg", "")} for e in exc.errors()]
    return JSONResponse(status_code=400, content={"detail": detail})


def ensure_context():
    """Lazily initialize repositories from the current environment."""
    global instances_repo, results_repo
    if instances_repo is None:
        instances_repo = InstancesRepository()
    if results_repo is None:
        results_repo = ResultsRepository()


def max_work() -> int:
    return int(os.getenv("TE_API_MAX_WORK", str(DEFAULT_API_MAX_WORK)))


def _call(fn: Callable[..., Any], *args, **kwargs) -> Any:
    try:
        return fn(*args, **kwargs)
    except (InvalidParameterError, ValidationError, UnreachableTargetError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    except InstanceTooLargeError as e:
        raise HTTPException(status_code=413, detail=str(e))
    except ModelMismatchError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except FileNotFoundError as e:
        raise HTTPException(status_code=404, detail=str(e))
    except HTTPException:
        raise
    except Exception as e:
        logger.exception("request failed: %s", e)
        raise HTTPException(status_code=500, detail="internal error")


@app.get("/healthz")
def healthz():
    status = {
        "env": {
            "TE_RESULTS_DIR": os.getenv("TE_RESULTS_DIR", "results"),
            "TE_DATA_DIR": os.getenv("TE_DATA_DIR", "data"),
            "TE_ENUMERATION_CAP": bool(os.getenv("TE_ENUMERATION_CAP")),
            "TE_API_MAX_WORK": max_work(),
        },
        "repositories": {"ok": False, "error": None, "instances": 0},
    }
    try:
        ensure_context()
        status["repositories"]["instances"] = len(instances_repo.list_all())
        status["repositories"]["ok"] = True
    except Exception as e:
        status["repositories"]["error"] = str(e)
    return status


@app.post("/analyze")
def analyze_endpoint(req: AnalyzeRequest) -> Dict[str, Any]:
    row = _call(lambda: analyze(req.to_params(), req.target))
    return build_analysis_row(row)


@app.post("/equilibria", response_model=EquilibriumPayload)
def equilibria_endpoint(cfg: InstanceConfig, limit: int = 50):
    def run():
        instance = cfg.build()
        return build_equilibrium_report(instance, equilibrium_report(instance), limit=limit)

    return _call(run)


@app.post("/simulate")
def simulate_endpoint(cfg: ExperimentConfig, persist: bool = False) -> Dict[str, Any]:
    work = cfg.iterations * cfg.trials
    if work > max_work():
        raise HTTPException(
            status_code=413,
            detail=f"iterations x trials = {work} exceeds TE_API_MAX_WORK = {max_work()}",
        )

    def run():
        records = run_experiment(cfg)
        rows = sweep_rows(cfg, records)
        if persist:
            ensure_context()
            occ, passage = split_sweep(pd.DataFrame(rows, columns=SWEEP_COLUMNS))
            results_repo.append("occupancy", occ.to_dict("records"))
            results_repo.append("passage", passage.to_dict("records"))
        return {
            "trials": [build_trial_summary(r).model_dump() for r in records],
            "rows": [build_analysis_row(r) for r in rows],
        }

    return _call(run)


@app.get("/results/{kind}")
def results_endpoint(kind: str) -> List[Dict[str, Any]]:
    ensure_context()
    df = _call(results_repo.read, kind)
    return [build_analysis_row(r) for r in df.to_dict("records")]
