import json
from datetime import datetime
from fractions import Fraction
from functools import partial
from pathlib import Path

import pytest
from sqlalchemy.ext.asyncio import AsyncSession, create_async_engine
from sqlalchemy.pool import StaticPool

from trustmas.core import AgentId, Layer, MetricWeights, StegMethodSpec
from trustmas.models import Base
from trustmas.routing import ProtocolConfig, StegAgent, TimerConfig
from trustmas.sim import load_scenario, rng_stream, run

SCENARIOS = Path(__file__).parent.parent / 'scenarios'

SHIPPED = sorted(path.stem for path in SCENARIOS.glob('*.json'))


def datetime_from_string(s: str) -> datetime:
    return datetime.fromisoformat(s)


def method(id, capacity, delay, penalty=0, layer=Layer.APPLICATION):
    return StegMethodSpec(
        id, layer, Fraction(capacity), Fraction(delay), Fraction(penalty),
    )


CATALOG = {
    'm1': method('m1', 64, 20, 1),
    'm3': method('m3', 128, 2, 3, Layer.DATA_LINK),
    'm8': method('m8', 8, 200, 2),
    'm216': method('m216', 216, 5, 3, Layer.TRANSPORT_NETWORK),
}


def make_agent(name, caps, platform='P1', seed=1, **protocol):
    me = AgentId(platform, name)
    return StegAgent(
        me,
        frozenset(caps),
        CATALOG,
        MetricWeights(),
        partial(rng_stream, seed, me),
        TimerConfig(),
        ProtocolConfig(**protocol),
    )


@pytest.fixture
def anyio_backend():
    return 'asyncio'


@pytest.fixture(name='session')
async def session_fixture():
    engine = create_async_engine(
        'sqlite+aiosqlite://',
        connect_args={'check_same_thread': False},
        poolclass=StaticPool,
    )
    async with engine.begin() as connection:
        await connection.run_sync(Base.metadata.create_all)
    async with AsyncSession(engine, expire_on_commit=False) as session:
        yield session


@pytest.fixture
def scenario_document():
    def _scenario_document(name, **overrides):
        document = json.loads((SCENARIOS / f'{name}.json').read_text())
        return document | overrides
    return _scenario_document


@pytest.fixture
def scenario(scenario_document):
    def _scenario(name, **overrides):
        return load_scenario(scenario_document(name, **overrides))
    return _scenario


@pytest.fixture(scope='session')
def shipped_runs():
    cache = {}

    def _shipped_runs(name):
        if name not in cache:
            path = SCENARIOS / f'{name}.json'
            cache[name] = run(load_scenario(path.read_text()))
        return cache[name]
    return _shipped_runs


@pytest.fixture
def minimal_document():
    return {
        'name': 'minimal',
        'seed': 1,
        'duration': 300,
        'catalog': [
            {
                'id': 'm1',
                'layer': 'application',
                'capacity_kbps': 64,
                'delay_ms': 20,
                'penalty': 1,
            },
        ],
        'platforms': [
            {
                'id': 'P1',
                'agents': [
                    {'id': 'S1', 'role': 'SA', 'caps': ['m1']},
                    {'id': 'S2', 'role': 'SA', 'caps': ['m1']},
                    {'id': 'O1', 'role': 'OA'},
                ],
            },
        ],
    }
