import hashlib
import heapq
import itertools
import logging
from collections import Counter
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Mapping

import numpy as np
from numpy.random import Generator
from pydantic import ValidationError

from .core import (
    AgentId,
    ConfigError,
    CoverMessage,
    DataMessage,
    FormStegLinkMessage,
    HelloMessage,
    IncompatibleHello,
    LinkSend,
    Role,
    RoutingUpdateMessage,
    TrustmasError,
    UnknownNeighbor,
    format_rational,
    score,
    uncover
)
from .paths import DeliveryRecord, delivery_record, forward_data
from .routing import StegAgent
from .schemas import (
    AgentTables,
    DeliveryOut,
    HopOut,
    JoinEvent,
    KillEvent,
    NeighborOut,
    RouteOut,
    ScenarioConfig,
    SendDataEvent,
    Summary,
    TraceRecord,
    UnicastEvent,
    WalkStats
)
from .walk import WalkStep, anonymous_unicast, forward_random_walk

logger = logging.getLogger(__name__)

TIMERS = 'random_walk', 'hello', 'routing_update'

# Record kinds written to the trace, in no particular order.
TRACE_KINDS = frozenset({
    'tick',
    'walk',
    'walk_skip',
    'walk_recv',
    'walk_end',
    'hello',
    'routing_update',
    'form_steg_link',
    'data',
    'recv',
    'drop',
    'neighbor_up',
    'neighbor_down',
    'route',
    'kill',
    'join',
    'delivery',
    'unicast',
})

MESSAGE_KINDS = {
    HelloMessage: 'hello',
    RoutingUpdateMessage: 'routing_update',
    FormStegLinkMessage: 'form_steg_link',
    DataMessage: 'data',
}


def rng_stream(seed: int, actor: AgentId | str, purpose: str) -> Generator:
    """Random stream owned by one (actor, purpose) pair of a run."""
    digest = hashlib.sha256(f'{actor}\x00{purpose}'.encode()).digest()
    spawn_key = tuple(
        int.from_bytes(digest[i:i + 4], 'little') for i in range(0, 16, 4)
    )
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=spawn_key)
    )


def load_scenario(
        document: Mapping[str, Any] | str | bytes,
) -> ScenarioConfig:
    try:
        if isinstance(document, (str, bytes)):
            cfg = ScenarioConfig.model_validate_json(document)
        else:
            cfg = ScenarioConfig.model_validate(document)
    except ValidationError as e:
        raise ConfigError([
            ('.'.join(str(part) for part in error['loc']) or '<root>',
             error['msg'])
            for error in e.errors()
        ]) from e
    if findings := cfg.reference_findings():
        raise ConfigError(findings)
    return cfg


@dataclass(order=True)
class Event:
    time: float
    seq: int
    target: AgentId | None = field(compare=False)
    payload: Any = field(compare=False)


@dataclass(frozen=True)
class TimerFire:
    timer: str


@dataclass(frozen=True)
class WalkDelivery:
    sender: AgentId
    message: CoverMessage


@dataclass(frozen=True)
class LinkDelivery:
    sender: AgentId
    send: LinkSend


@dataclass(frozen=True)
class Sweep:
    pass


class Trace:
    def __init__(self):
        self.records: list[TraceRecord] = []

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, t: float, actor: Any, kind: str, /, **detail) -> None:
        self.records.append(
            TraceRecord(t=t, actor=str(actor), kind=kind, detail=detail)
        )

    def of_kind(self, *kinds: str) -> list[TraceRecord]:
        return [record for record in self.records if record.kind in kinds]

    def to_jsonl(self) -> str:
        return ''.join(
            record.model_dump_json() + '\n' for record in self.records
        )


class Simulator:
    """Discrete-event engine for one scenario.

    Events pop in (time, insertion order). SAs are driven through their
    `StegAgent` handlers; OAs only take part in walks.
    """

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.catalog = {spec.id: spec.to_spec() for spec in cfg.catalog}
        self.weights = cfg.weights.to_weights()
        self.walk = cfg.walk.to_walk()
        self.timers = cfg.timers.to_timers()
        self.protocol = cfg.protocol.to_protocol(self.timers)
        self.walk_delay = float(self.walk.platform_delay_ms / 1000)
        self.now = 0.0
        self.trace = Trace()
        self.msg_counts = Counter()
        self.agents: dict[AgentId, StegAgent] = {}
        self.roles: dict[AgentId, Role] = {}
        self.deliveries: list[DeliveryOut] = []
        self.last_change: float | None = None
        self._queue: list[Event] = []
        self._seq = itertools.count()
        self._walk_ids = Counter()
        self._walk_hops = Counter()
        self._launched = 0
        self._oa_rngs: dict[AgentId, Generator] = {}
        self._seen: dict[AgentId, tuple] = {}

        for platform in cfg.platforms:
            for agent in platform.agents:
                address = AgentId(platform.id, agent.id)
                self._add_agent(address, agent.role, agent.caps)
        for relation in cfg.fixed_relations:
            a = AgentId.parse(relation.sa_a)
            b = AgentId.parse(relation.sa_b)
            method = relation.method
            self.agents[a].add_fixed_link(b, self.agents[b].caps, method)
            self.agents[b].add_fixed_link(a, self.agents[a].caps, method)
        for address in sorted(self.agents):
            self._seen[address] = self._snapshot(self.agents[address])
            self._start_timers(self.agents[address])
        for event in cfg.events:
            self._schedule(event.time, None, event)
        if cfg.duration > 0:
            self._schedule(self.timers.sweep_interval, None, Sweep())

    def roster(self, platform: str) -> tuple[AgentId, ...]:
        return tuple(sorted(
            address for address in self.roles if address.platform == platform
        ))

    def run(self) -> tuple[Trace, Summary]:
        while self._queue and self._queue[0].time <= self.cfg.duration:
            event = heapq.heappop(self._queue)
            self.now = event.time
            self._dispatch(event)
        return self.trace, self.summary()

    def summary(self) -> Summary:
        convergence = None
        settled = self.last_change if self.last_change is not None else 0.0
        if self.cfg.duration - settled >= self.protocol.quiet_window:
            convergence = settled
        hops = self._walk_hops
        terminated = sum(hops.values())
        mean_hops = None
        if terminated:
            mean_hops = sum(k * n for k, n in hops.items()) / terminated
        return Summary(
            scenario=self.cfg.name,
            seed=self.cfg.seed,
            duration=self.cfg.duration,
            convergence_time=convergence,
            msg_counts=dict(sorted(self.msg_counts.items())),
            walk_stats=WalkStats(
                launched=self._launched,
                terminated=terminated,
                mean_hops=mean_hops,
                hop_histogram={str(k): hops[k] for k in sorted(hops)},
            ),
            final_tables={
                str(address): self._tables(self.agents[address])
                for address in sorted(self.agents)
            },
            deliveries=self.deliveries,
        )

    def _tables(self, agent: StegAgent) -> AgentTables:
        routes = []
        for dest in agent.routes.destinations():
            for i, entry in enumerate(agent.routes.candidates(dest)):
                routes.append(RouteOut(
                    dest=str(dest),
                    next_hop=str(entry.next_hop),
                    method=entry.method,
                    bottleneck_kbps=format_rational(
                        entry.attrs.bottleneck_kbps
                    ),
                    delay_ms=format_rational(entry.attrs.total_delay_ms),
                    penalty=format_rational(entry.attrs.total_penalty),
                    hop_count=entry.attrs.hop_count,
                    score=format_rational(score(entry.attrs, self.weights)),
                    best=i == 0,
                ))
        return AgentTables(
            caps=sorted(agent.caps),
            neighbors=[
                NeighborOut(
                    address=str(entry.address),
                    method=entry.link_method,
                    caps=sorted(entry.caps),
                )
                for entry in agent.neighbors
            ],
            routes=routes,
        )

    def _schedule(self, time: float, target: AgentId | None, payload) -> None:
        heapq.heappush(
            self._queue, Event(time, next(self._seq), target, payload),
        )

    def _add_agent(self, address: AgentId, role: Role, caps) -> None:
        self.roles[address] = role
        if role == Role.SA:
            self.agents[address] = StegAgent(
                address,
                frozenset(caps),
                self.catalog,
                self.weights,
                partial(rng_stream, self.cfg.seed, address),
                self.timers,
                self.protocol,
            )
        else:
            self._oa_rngs[address] = rng_stream(self.cfg.seed, address, 'walk')

    def _start_timers(self, agent: StegAgent) -> None:
        for timer in TIMERS:
            delay = agent.next_delay(timer)
            self._schedule(self.now + delay, agent.me, TimerFire(timer))

    def _dispatch(self, event: Event) -> None:
        match event.payload:
            case Sweep():
                self._sweep()
            case KillEvent() | JoinEvent() as change:
                self._apply(change)
            case SendDataEvent(source=source, dest=dest, payload=payload):
                msg = DataMessage(
                    AgentId.parse(source), AgentId.parse(dest), payload,
                )
                self._forward(self.agents[msg.source], msg)
            case UnicastEvent():
                self._unicast(event.payload)
            case _ if event.target not in self.roles:
                self._drop(event)
            case TimerFire(timer=timer):
                self._fire(self.agents[event.target], timer)
            case WalkDelivery():
                self._walk_received(event.target, event.payload)
            case LinkDelivery():
                self._link_received(self.agents[event.target], event.payload)

    def _drop(self, event: Event) -> None:
        match event.payload:
            case WalkDelivery(message=msg):
                self.trace.append(
                    self.now, event.target, 'drop',
                    kind='walk', walk=msg.walk_id, reason='agent gone',
                )
                self._walk_hops[msg.hop_count] += 1
            case LinkDelivery(sender=sender, send=send):
                kind = MESSAGE_KINDS[type(send.message)]
                self.trace.append(
                    self.now, event.target, 'drop',
                    kind=kind, sender=str(sender), reason='agent gone',
                )
                if isinstance(send.message, DataMessage):
                    self._delivered(send.message, 'next hop gone')

    def _apply(self, change: KillEvent | JoinEvent) -> None:
        address = AgentId.parse(change.agent)
        match change:
            case KillEvent():
                role = self.roles.pop(address)
                self.agents.pop(address, None)
                self._oa_rngs.pop(address, None)
                self._seen.pop(address, None)
                self.trace.append(self.now, address, 'kill', role=str(role))
                logger.info('%s killed at %s', address, self.now)
            case JoinEvent(role=role, caps=caps):
                self._add_agent(address, role, caps)
                self.trace.append(
                    self.now, address, 'join',
                    role=str(role), caps=sorted(caps),
                )
                if agent := self.agents.get(address):
                    self._seen[address] = self._snapshot(agent)
                    self._start_timers(agent)

    def _fire(self, agent: StegAgent, timer: str) -> None:
        self.trace.append(self.now, agent.me, 'tick', timer=timer)
        match timer:
            case 'random_walk':
                self._walk_ids[agent.me] += 1
                walk_id = f'{agent.me}#{self._walk_ids[agent.me]}'
                roster = self.roster(agent.me.platform)
                step, delay = agent.on_timer_random_walk(roster, walk_id)
                if step is None:
                    self.trace.append(self.now, agent.me, 'walk_skip')
                else:
                    self._launched += 1
                    self._walk(step)
            case 'hello':
                emissions, delay = agent.on_timer_hello(self.now)
                self._emit(agent.me, emissions)
            case 'routing_update':
                emissions, delay = agent.on_timer_routing_update(self.now)
                self._emit(agent.me, emissions)
        self._schedule(self.now + delay, agent.me, TimerFire(timer))

    def _sweep(self) -> None:
        for address in sorted(self.agents):
            agent = self.agents[address]
            removed, emissions = agent.sweep_timeouts(self.now)
            self._emit(address, emissions)
            if removed:
                self._observe(agent)
        self._schedule(
            self.now + self.timers.sweep_interval, None, Sweep(),
        )

    def _walk(self, step: WalkStep) -> None:
        self.msg_counts['walk'] += 1
        self.trace.append(
            self.now, step.sender, 'walk',
            walk=step.message.walk_id,
            to=str(step.recipient),
            hops=step.message.hop_count,
        )
        self._schedule(
            self.now + self.walk_delay,
            step.recipient,
            WalkDelivery(step.sender, step.message),
        )

    def _walk_received(
            self,
            address: AgentId,
            delivery: WalkDelivery,
    ) -> None:
        msg = delivery.message
        roster = self.roster(address.platform)
        agent = self.agents.get(address)
        found = uncover(msg, caller_is_sa=agent is not None) is not None
        self.trace.append(
            self.now, address, 'walk_recv',
            walk=msg.walk_id,
            sender=str(delivery.sender),
            hops=msg.hop_count,
            found=found,
        )
        if agent is None:
            rng = self._oa_rngs[address]
            step = forward_random_walk(address, msg, self.walk, roster, rng)
        else:
            emissions, step = agent.on_random_walk(
                msg, roster, self.walk, self.now,
            )
            self._emit(address, emissions)
            self._observe(agent)
        if step is None:
            self._walk_hops[msg.hop_count] += 1
            self.trace.append(
                self.now, address, 'walk_end',
                walk=msg.walk_id, hops=msg.hop_count,
            )
        else:
            self._walk(step)

    def _emit(self, sender: AgentId, emissions: list[LinkSend]) -> None:
        for send in emissions:
            kind = MESSAGE_KINDS[type(send.message)]
            self.msg_counts[kind] += 1
            detail = {'to': str(send.to), 'method': send.method}
            match send.message:
                case HelloMessage(seq=seq):
                    detail['seq'] = seq
                case RoutingUpdateMessage(entries=entries):
                    detail['triggered'] = send.triggered
                    detail['routes'] = len(entries)
                case FormStegLinkMessage(new_sa_address=new, target=target):
                    detail['new_sa'] = str(new)
                    detail['target'] = str(target)
                case DataMessage(source=source, dest=dest, hops=hops):
                    detail['source'] = str(source)
                    detail['dest'] = str(dest)
                    detail['hop'] = len(hops)
            self.trace.append(self.now, sender, kind, **detail)
            latency = float(self.catalog[send.method].delay_ms / 1000)
            self._schedule(
                self.now + latency, send.to, LinkDelivery(sender, send),
            )

    def _link_received(self, agent: StegAgent, delivery: LinkDelivery):
        msg = delivery.send.message
        kind = MESSAGE_KINDS[type(msg)]
        self.trace.append(
            self.now, agent.me, 'recv',
            kind=kind, sender=str(delivery.sender),
        )
        try:
            match msg:
                case HelloMessage():
                    emissions = agent.on_hello(msg, self.now)
                case RoutingUpdateMessage():
                    emissions = agent.on_routing_update(msg, self.now)
                case FormStegLinkMessage():
                    emissions = agent.on_form_steg_link(msg, self.now)
                case DataMessage():
                    if msg.dest == agent.me:
                        self._delivered(msg)
                    else:
                        self._forward(agent, msg)
                    return
        except (IncompatibleHello, UnknownNeighbor) as e:
            logger.warning('%s', e)
            self.trace.append(
                self.now, agent.me, 'drop', kind=kind, reason=str(e),
            )
            return
        self._emit(agent.me, emissions)
        self._observe(agent)

    def _forward(self, agent: StegAgent, msg: DataMessage) -> None:
        try:
            send = forward_data(agent, msg)
        except TrustmasError as e:
            logger.info('%s: data to %s not forwarded, %s', agent.me,
                        msg.dest, e)
            self._delivered(msg, str(e))
            return
        self._emit(agent.me, [send])

    def _delivered(self, msg: DataMessage, error: str | None = None) -> None:
        record = delivery_record(msg, error)
        self.deliveries.append(self._delivery_out(record))
        self.trace.append(
            self.now, msg.dest if error is None else msg.source, 'delivery',
            source=str(msg.source),
            dest=str(msg.dest),
            delivered=record.delivered,
            error=error,
            hops=[
                [str(hop.sender), str(hop.receiver), hop.method]
                for hop in record.hops
            ],
        )

    def _delivery_out(self, record: DeliveryRecord) -> DeliveryOut:
        total = None
        if record.delivered and record.hops:
            total = format_rational(score(record.total_attrs, self.weights))
        return DeliveryOut(
            t=self.now,
            source=str(record.source),
            dest=str(record.dest),
            delivered=record.delivered,
            error=record.error,
            hops=[
                HopOut(
                    sender=str(hop.sender),
                    receiver=str(hop.receiver),
                    method=hop.method,
                )
                for hop in record.hops
            ],
            score=total,
        )

    def _unicast(self, event: UnicastEvent) -> None:
        origin = AgentId.parse(event.origin)
        dest = AgentId.parse(event.dest)
        self.msg_counts['unicast'] += 1
        purpose = f'unicast#{self.msg_counts["unicast"]}'
        rng = rng_stream(self.cfg.seed, origin, purpose)
        roster = self.roster(origin.platform)
        try:
            record = anonymous_unicast(
                origin, dest, event.payload, self.walk, roster, rng,
            )
        except ValueError as e:
            self.trace.append(
                self.now, origin, 'unicast',
                dest=str(dest), delivered=False, error=str(e), proxies=[],
            )
            return
        self.trace.append(
            self.now, origin, 'unicast',
            dest=str(dest),
            delivered=record.delivered,
            error=None if record.delivered else 'no proxy available',
            proxies=[str(proxy) for proxy in record.proxies],
        )

    def _snapshot(self, agent: StegAgent) -> tuple:
        neighbors = {
            entry.address: entry.link_method for entry in agent.neighbors
        }
        best = {}
        for dest in agent.routes.destinations():
            entry = agent.routes.best(dest)
            best[dest] = (
                entry.next_hop,
                entry.method,
                score(entry.attrs, self.weights),
            )
        return neighbors, best, agent.signature()

    def _observe(self, agent: StegAgent) -> None:
        before_neighbors, before_best, before = self._seen[agent.me]
        neighbors, best, signature = self._seen[agent.me] = (
            self._snapshot(agent)
        )
        if signature == before:
            return
        self.last_change = self.now
        for address in sorted(before_neighbors.keys() - neighbors.keys()):
            self.trace.append(
                self.now, agent.me, 'neighbor_down', neighbor=str(address),
            )
        for address in sorted(neighbors.keys() - before_neighbors.keys()):
            self.trace.append(
                self.now, agent.me, 'neighbor_up',
                neighbor=str(address), method=neighbors[address],
            )
        for dest in sorted(before_best.keys() | best.keys()):
            if before_best.get(dest) == best.get(dest):
                continue
            next_hop, method, total = best.get(dest, (None, None, None))
            self.trace.append(
                self.now, agent.me, 'route',
                dest=str(dest),
                next_hop=str(next_hop) if next_hop else None,
                method=method,
                score=format_rational(total),
            )


def run(cfg: ScenarioConfig) -> tuple[Trace, Summary]:
    return Simulator(cfg).run()
