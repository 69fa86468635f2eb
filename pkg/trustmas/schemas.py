from collections import Counter
from datetime import datetime
from decimal import Decimal
from fractions import Fraction
from typing import Annotated, Any, Literal, Self
from uuid import UUID

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    PositiveFloat,
    PositiveInt,
    StringConstraints,
    model_validator
)

from .core import (
    AgentId,
    Layer,
    MetricWeights,
    Role,
    StegMethodSpec
)
from .routing import ProtocolConfig, TimerConfig
from .walk import WalkConfig

Token = Annotated[
    str,
    StringConstraints(min_length=1, max_length=64, pattern=r'^[^/\s]+$'),
]
AgentRef = Annotated[str, StringConstraints(pattern=r'^[^/\s]+/[^/\s]+$')]
NonNegativeDecimal = Annotated[Decimal, Field(ge=0)]
PositiveDecimal = Annotated[Decimal, Field(gt=0)]
Rational = Annotated[str, StringConstraints(pattern=r'^-?\d+(/\d+)?$')]


class Document(BaseModel):
    model_config = ConfigDict(extra='forbid')


class MethodIn(Document):
    id: Token
    layer: Layer
    capacity_kbps: PositiveDecimal
    delay_ms: NonNegativeDecimal
    penalty: NonNegativeDecimal = Decimal(0)

    def to_spec(self) -> StegMethodSpec:
        return StegMethodSpec(
            id=self.id,
            layer=self.layer,
            capacity_kbps=Fraction(self.capacity_kbps),
            delay_ms=Fraction(self.delay_ms),
            penalty=Fraction(self.penalty),
        )


class WeightsIn(Document):
    w_d: NonNegativeDecimal = Decimal(1)
    w_c: NonNegativeDecimal = Decimal(1)
    c_ref_kbps: NonNegativeDecimal = Decimal(1000)
    w_m: NonNegativeDecimal = Decimal(10)

    def to_weights(self) -> MetricWeights:
        return MetricWeights(
            w_d=Fraction(self.w_d),
            w_c=Fraction(self.w_c),
            c_ref_kbps=Fraction(self.c_ref_kbps),
            w_m=Fraction(self.w_m),
        )


class WalkIn(Document):
    p_f: Annotated[float, Field(ge=0, lt=1)] = 0.5
    platform_delay_ms: NonNegativeDecimal = Decimal(1)

    def to_walk(self) -> WalkConfig:
        return WalkConfig(
            p_f=self.p_f,
            platform_delay_ms=Fraction(self.platform_delay_ms),
        )


class TimersIn(Document):
    random_walk_period: PositiveFloat = 60.0
    routing_update_period: PositiveFloat = 30.0
    hello_period: PositiveFloat = 10.0
    fluctuation_rw: NonNegativeFloat | None = None
    fluctuation_ru: NonNegativeFloat | None = None
    fluctuation_h: NonNegativeFloat | None = None
    hello_timeout: PositiveFloat | None = None
    sweep_interval: PositiveFloat = 1.0

    @model_validator(mode='after')
    def verify_hello_timeout(self) -> Self:
        if self.hello_timeout is not None:
            if self.hello_timeout <= self.hello_period:
                raise ValueError('hello_timeout must exceed hello_period')
        return self

    def to_timers(self) -> TimerConfig:
        return TimerConfig.from_periods(**self.model_dump())


class ProtocolIn(Document):
    triggered_updates: bool = False
    split_horizon: bool = False
    form_steg_link: bool = True
    link_from_routes: bool = False
    max_candidates: PositiveInt = 3
    announcement_ttl: PositiveFloat | None = None
    quiet_window: PositiveFloat | None = None

    def to_protocol(self, timers: TimerConfig) -> ProtocolConfig:
        ttl = self.announcement_ttl or 2 * timers.random_walk_period
        window = self.quiet_window or 2 * timers.routing_update_period
        return ProtocolConfig(
            triggered_updates=self.triggered_updates,
            split_horizon=self.split_horizon,
            form_steg_link=self.form_steg_link,
            link_from_routes=self.link_from_routes,
            max_candidates=self.max_candidates,
            announcement_ttl=ttl,
            quiet_window=window,
        )


def verify_caps(name: str, role: Role, caps: list[str]) -> None:
    if role == Role.OA and caps:
        raise ValueError(f'OA {name} must not declare caps')
    if role == Role.SA and not caps:
        raise ValueError(f'SA {name} declares no caps')
    if len(set(caps)) != len(caps):
        raise ValueError(f'{name} lists a method twice')


class AgentIn(Document):
    id: Token
    role: Role
    caps: list[Token] = []

    @model_validator(mode='after')
    def verify_role_caps(self) -> Self:
        verify_caps(self.id, self.role, self.caps)
        return self


class PlatformIn(Document):
    id: Token
    agents: list[AgentIn]


class FixedRelationIn(Document):
    sa_a: AgentRef
    sa_b: AgentRef
    method: Token


class KillEvent(Document):
    kind: Literal['kill']
    time: NonNegativeFloat
    agent: AgentRef


class JoinEvent(Document):
    kind: Literal['join']
    time: NonNegativeFloat
    agent: AgentRef
    role: Role = Role.SA
    caps: list[Token] = []

    @model_validator(mode='after')
    def verify_role_caps(self) -> Self:
        verify_caps(self.agent, self.role, self.caps)
        return self


class SendDataEvent(Document):
    kind: Literal['send_data']
    time: NonNegativeFloat
    source: AgentRef
    dest: AgentRef
    payload: str = ''


class UnicastEvent(Document):
    kind: Literal['unicast']
    time: NonNegativeFloat
    origin: AgentRef
    dest: AgentRef
    payload: str = ''


ScenarioEvent = Annotated[
    KillEvent | JoinEvent | SendDataEvent | UnicastEvent,
    Field(discriminator='kind'),
]


class ScenarioConfig(Document):
    name: Token = 'scenario'
    seed: Annotated[int, Field(ge=0, lt=2**64)] = 0
    duration: NonNegativeFloat
    catalog: Annotated[list[MethodIn], Field(min_length=1)]
    weights: WeightsIn = WeightsIn()
    walk: WalkIn = WalkIn()
    timers: TimersIn = TimersIn()
    protocol: ProtocolIn = ProtocolIn()
    platforms: Annotated[list[PlatformIn], Field(min_length=1)]
    fixed_relations: list[FixedRelationIn] = []
    events: list[ScenarioEvent] = []

    def reference_findings(self) -> list[tuple[str, str]]:
        """Cross-field problems as (field path, message) pairs."""
        findings = []
        method_ids = Counter(method.id for method in self.catalog)
        for i, method in enumerate(self.catalog):
            if method_ids[method.id] > 1:
                findings.append(
                    (f'catalog.{i}.id', f'duplicate method {method.id}')
                )

        platform_ids = Counter(platform.id for platform in self.platforms)
        roles = {}
        caps = {}
        for i, platform in enumerate(self.platforms):
            if platform_ids[platform.id] > 1:
                findings.append(
                    (f'platforms.{i}.id', f'duplicate platform {platform.id}')
                )
            for j, agent in enumerate(platform.agents):
                path = f'platforms.{i}.agents.{j}'
                address = f'{platform.id}/{agent.id}'
                if address in roles:
                    findings.append((f'{path}.id', f'duplicate id {address}'))
                roles[address] = agent.role
                caps[address] = set(agent.caps)
                for k, method in enumerate(agent.caps):
                    if method not in method_ids:
                        findings.append(
                            (f'{path}.caps.{k}', f'unknown method {method}')
                        )

        for i, relation in enumerate(self.fixed_relations):
            path = f'fixed_relations.{i}'
            if relation.method not in method_ids:
                findings.append(
                    (f'{path}.method', f'unknown method {relation.method}')
                )
            if relation.sa_a == relation.sa_b:
                findings.append((path, 'relation links an agent to itself'))
            for key in 'sa_a', 'sa_b':
                address = getattr(relation, key)
                if roles.get(address) != Role.SA:
                    findings.append(
                        (f'{path}.{key}', f'{address} is not a declared SA')
                    )
                elif relation.method not in caps[address]:
                    findings.append((
                        f'{path}.method',
                        f'{address} lacks method {relation.method}',
                    ))

        alive = dict(roles)
        ordered = sorted(
            enumerate(self.events), key=lambda item: (item[1].time, item[0]),
        )
        for i, event in ordered:
            path = f'events.{i}'
            if event.time > self.duration:
                findings.append((f'{path}.time', 'event after duration'))
            match event:
                case KillEvent(agent=address):
                    if address not in alive:
                        findings.append(
                            (f'{path}.agent', f'unknown agent {address}')
                        )
                    alive.pop(address, None)
                case JoinEvent(agent=address):
                    if address in roles:
                        findings.append(
                            (f'{path}.agent', f'duplicate id {address}')
                        )
                    if AgentId.parse(address).platform not in platform_ids:
                        findings.append(
                            (f'{path}.agent', f'unknown platform of {address}')
                        )
                    for k, method in enumerate(event.caps):
                        if method not in method_ids:
                            findings.append((
                                f'{path}.caps.{k}', f'unknown method {method}',
                            ))
                    roles[address] = event.role
                    caps[address] = set(event.caps)
                    alive[address] = event.role
                case SendDataEvent(source=source, dest=dest):
                    for key, address in ('source', source), ('dest', dest):
                        if alive.get(address) != Role.SA:
                            findings.append((
                                f'{path}.{key}', f'{address} is not a live SA',
                            ))
                    if source == dest:
                        findings.append((path, 'source equals dest'))
                case UnicastEvent(origin=origin, dest=dest):
                    for key, address in ('origin', origin), ('dest', dest):
                        if address not in alive:
                            findings.append(
                                (f'{path}.{key}', f'unknown agent {address}')
                            )
                    same_platform = (
                        AgentId.parse(origin).platform
                        == AgentId.parse(dest).platform
                    )
                    if origin == dest or not same_platform:
                        findings.append(
                            (path, 'unicast needs two agents on one platform')
                        )
        return findings


class TraceRecord(BaseModel):
    t: float
    actor: str
    kind: str
    detail: dict[str, Any] = {}


class NeighborOut(BaseModel):
    address: str
    method: str
    caps: list[str]


class RouteOut(BaseModel):
    dest: str
    next_hop: str
    method: str
    bottleneck_kbps: Rational | None
    delay_ms: Rational
    penalty: Rational
    hop_count: int
    score: Rational
    best: bool


class AgentTables(BaseModel):
    caps: list[str]
    neighbors: list[NeighborOut]
    routes: list[RouteOut]


class WalkStats(BaseModel):
    launched: int = 0
    terminated: int = 0
    mean_hops: float | None = None
    hop_histogram: dict[str, int] = {}


class HopOut(BaseModel):
    sender: str
    receiver: str
    method: str


class DeliveryOut(BaseModel):
    t: float
    source: str
    dest: str
    delivered: bool
    error: str | None = None
    hops: list[HopOut]
    score: Rational | None = None


class Summary(BaseModel):
    scenario: str
    seed: int
    duration: float
    convergence_time: float | None
    msg_counts: dict[str, int]
    walk_stats: WalkStats
    final_tables: dict[str, AgentTables]
    deliveries: list[DeliveryOut] = []


class OraclePair(BaseModel):
    source: str
    dest: str
    reachable: bool
    score: Rational | None = None
    bottleneck_kbps: Rational | None = None
    delay_ms: Rational | None = None
    penalty: Rational | None = None
    hop_count: int | None = None
    path: list[str] = []
    methods: list[str] = []
    tied: bool = False


class WalkHit(BaseModel):
    platform: str
    origin: str
    target: str
    p_f: float
    probability: float


class OracleDocument(BaseModel):
    scenario: str
    pairs: list[OraclePair]
    walk_hits: list[WalkHit] = []


class Mismatch(BaseModel):
    source: str
    dest: str
    kind: Literal['score', 'missing_route', 'unexpected_route', 'next_hop']
    expected: str | None = None
    actual: str | None = None


class VerificationReport(BaseModel):
    scenario: str
    pairs_checked: int
    mismatches: list[Mismatch]


class EntityModelOut(BaseModel):
    id: UUID
    created_at: datetime
    updated_at: datetime | None = None


class ScenarioOut(EntityModelOut):
    name: str


class ScenarioItems(BaseModel):
    items: list[ScenarioOut]


class RunBrief(EntityModelOut):
    seed: int
    convergence_time: float | None


class ScenarioDetail(ScenarioOut):
    document: dict[str, Any]
    runs: list[RunBrief]


class RunOut(RunBrief):
    scenario_id: UUID
    summary: Summary


class HopBin(BaseModel):
    hops: int
    empirical: float
    analytic: float
    deviation: float


class HitRate(BaseModel):
    target: str
    empirical: float
    exact: float
    deviation: float


class WalkLaw(BaseModel):
    p_f: float
    platform: str
    origin: str
    trials: int
    mean_hops: float
    expected_mean_hops: float
    histogram: list[HopBin]
    hits: list[HitRate]


class WalkStatsReport(BaseModel):
    scenario: str
    laws: list[WalkLaw]
