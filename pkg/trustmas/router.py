from typing import Annotated, Any
from uuid import UUID

from fastapi import APIRouter, Body, HTTPException, Query
from fastapi.concurrency import run_in_threadpool

from .dependencies import SessionDep, SettingsDep
from .models import Run, Scenario
from .oracle import oracle_document, verify
from .schemas import (
    OracleDocument,
    RunOut,
    ScenarioDetail,
    ScenarioItems,
    ScenarioOut,
    Summary,
    VerificationReport
)
from .sim import load_scenario, run

router = APIRouter()


async def get_scenario_or_404(
        scenario_id: UUID,
        session: SessionDep,
) -> Scenario:
    scenario = await session.get(Scenario, scenario_id)
    if not scenario:
        raise HTTPException(status_code=404, detail='scenario not found')
    return scenario


@router.get(
    '/api/scenarios',
    response_model=ScenarioItems,
    response_model_exclude_none=True,
)
async def get_scenarios(session: SessionDep) -> dict[str, list[Scenario]]:
    items = await Scenario.select(session)
    return {'items': items}


@router.post(
    '/api/scenarios',
    response_model=ScenarioOut,
    response_model_exclude_none=True,
)
async def create_scenario(
        document: Annotated[dict[str, Any], Body()],
        session: SessionDep,
) -> Scenario:
    cfg = load_scenario(document)
    scenario = Scenario(name=cfg.name, document=cfg.model_dump(mode='json'))
    return await scenario.save(session)


@router.get('/api/scenarios/{scenario_id}', response_model=ScenarioDetail)
async def get_scenario(
        scenario_id: UUID,
        session: SessionDep,
) -> dict[str, Any]:
    scenario = await get_scenario_or_404(scenario_id, session)
    return {
        'id': scenario.id,
        'name': scenario.name,
        'created_at': scenario.created_at,
        'updated_at': scenario.updated_at,
        'document': scenario.document,
        'runs': await scenario.runs(session),
    }


@router.post('/api/scenarios/{scenario_id}/runs', response_model=RunOut)
async def create_run(
        scenario_id: UUID,
        session: SessionDep,
        seed: Annotated[int | None, Query(ge=0, lt=2**64)] = None,
) -> Run:
    scenario = await get_scenario_or_404(scenario_id, session)
    cfg = load_scenario(scenario.document)
    if seed is not None:
        cfg = cfg.model_copy(update={'seed': seed})
    _, summary = await run_in_threadpool(run, cfg)
    new_run = Run(
        scenario=scenario,
        seed=str(cfg.seed),
        convergence_time=summary.convergence_time,
        summary=summary.model_dump(mode='json'),
    )
    return await new_run.save(session)


@router.get('/api/runs/{run_id}', response_model=RunOut)
async def get_run(run_id: UUID, session: SessionDep) -> Run:
    stored = await session.get(Run, run_id)
    if not stored:
        raise HTTPException(status_code=404, detail='run not found')
    return stored


@router.get(
    '/api/scenarios/{scenario_id}/oracle',
    response_model=OracleDocument,
)
async def get_oracle(
        scenario_id: UUID,
        session: SessionDep,
        settings: SettingsDep,
) -> OracleDocument:
    scenario = await get_scenario_or_404(scenario_id, session)
    cfg = load_scenario(scenario.document)
    return await run_in_threadpool(
        oracle_document,
        cfg,
        settings.oracle_max_nodes,
        settings.walk_hit_max_roster,
    )


@router.get(
    '/api/runs/{run_id}/verification',
    response_model=VerificationReport,
)
async def get_verification(
        run_id: UUID,
        session: SessionDep,
        settings: SettingsDep,
) -> VerificationReport:
    stored = await get_run(run_id, session)
    cfg = load_scenario(stored.scenario.document)
    oracle = await run_in_threadpool(
        oracle_document,
        cfg,
        settings.oracle_max_nodes,
        settings.walk_hit_max_roster,
    )
    return verify(Summary.model_validate(stored.summary), oracle)
