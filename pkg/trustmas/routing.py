import logging
from collections import defaultdict
from dataclasses import dataclass, replace
from operator import attrgetter
from typing import Callable, Iterator, Self, Sequence

from numpy.random import Generator

from .core import (
    ZERO_ATTRIBUTES,
    AdvertisedRoute,
    AgentId,
    CapabilitySet,
    Catalog,
    CoverMessage,
    DegeneratePlatform,
    FormStegLinkMessage,
    HelloMessage,
    HopLimitExceeded,
    IncompatibleHello,
    LinkSend,
    MetricWeights,
    NeighborEntry,
    RouteEntry,
    RoutingUpdateMessage,
    StegAnnouncement,
    UnknownNeighbor,
    capability_overlap,
    compose_attributes,
    dominates,
    route_rank,
    score,
    uncover
)
from .paths import select_link_method
from .walk import WalkConfig, WalkStep, forward_random_walk, send_random_walk

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimerConfig:
    random_walk_period: float = 60.0
    routing_update_period: float = 30.0
    hello_period: float = 10.0
    fluctuation_rw: float = 12.0
    fluctuation_ru: float = 6.0
    fluctuation_h: float = 2.0
    hello_timeout: float = 30.0
    sweep_interval: float = 1.0

    def __post_init__(self):
        periods = (
            self.random_walk_period,
            self.routing_update_period,
            self.hello_period,
            self.sweep_interval,
        )
        if min(periods) <= 0:
            raise ValueError('timer periods must be positive')
        fluctuations = (
            self.fluctuation_rw,
            self.fluctuation_ru,
            self.fluctuation_h,
        )
        if min(fluctuations) < 0:
            raise ValueError('timer fluctuations must be non-negative')
        if self.hello_timeout <= self.hello_period:
            raise ValueError('hello_timeout must exceed hello_period')

    @classmethod
    def from_periods(
            cls,
            random_walk_period: float = 60.0,
            routing_update_period: float = 30.0,
            hello_period: float = 10.0,
            **overrides,
    ) -> Self:
        """Fill jitter bounds (a fifth of each period) and hello timeout."""
        values = {
            'random_walk_period': random_walk_period,
            'routing_update_period': routing_update_period,
            'hello_period': hello_period,
            'fluctuation_rw': 0.2 * random_walk_period,
            'fluctuation_ru': 0.2 * routing_update_period,
            'fluctuation_h': 0.2 * hello_period,
            'hello_timeout': 3 * hello_period,
        }
        values.update(
            (key, value) for key, value in overrides.items()
            if value is not None
        )
        return cls(**values)


@dataclass(frozen=True)
class ProtocolConfig:
    triggered_updates: bool = False
    split_horizon: bool = False
    form_steg_link: bool = True
    link_from_routes: bool = False
    max_candidates: int = 3
    announcement_ttl: float = 120.0
    quiet_window: float = 60.0


@dataclass(frozen=True)
class CachedAnnouncement:
    announcement: StegAnnouncement
    expires: float


class NeighborTable:
    def __init__(self):
        self._entries: dict[AgentId, NeighborEntry] = {}

    def __contains__(self, address: AgentId) -> bool:
        return address in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[NeighborEntry]:
        return iter(sorted(self._entries.values(), key=attrgetter('address')))

    def get(self, address: AgentId) -> NeighborEntry | None:
        return self._entries.get(address)

    def upsert(self, entry: NeighborEntry) -> None:
        self._entries[entry.address] = entry

    def refresh(self, address: AgentId, now: float) -> None:
        entry = self._entries[address]
        self._entries[address] = replace(entry, last_hello=now)

    def remove(self, address: AgentId) -> NeighborEntry:
        return self._entries.pop(address)

    def expired(self, now: float, timeout: float) -> list[NeighborEntry]:
        return [entry for entry in self if now - entry.last_hello > timeout]

    def digest(self) -> tuple[AgentId, ...]:
        return tuple(sorted(self._entries))


class RoutingTable:
    """Candidate steg-paths per destination.

    Each neighbor's latest advertisement, composed over every method shared
    with that neighbor, makes up the neighbor's contribution. Per
    destination the table keeps the entries no other entry beats on
    bottleneck, additive cost and hop count (the frontier, which is what
    gets advertised), plus the best entry of each of the
    `max_candidates` best next hops.
    """

    def __init__(
            self,
            owner: AgentId,
            caps: CapabilitySet,
            catalog: Catalog,
            weights: MetricWeights,
            max_candidates: int = 3,
    ):
        self.owner = owner
        self.caps = caps
        self.catalog = catalog
        self.weights = weights
        self.max_candidates = max_candidates
        self._learned: dict[AgentId, dict[AgentId, list[RouteEntry]]] = {}
        self._frontier: dict[AgentId, tuple[RouteEntry, ...]] = {}
        self._candidates: dict[AgentId, tuple[RouteEntry, ...]] = {}

    def __contains__(self, dest: AgentId) -> bool:
        return dest in self._candidates

    def __len__(self) -> int:
        return len(self._candidates)

    def destinations(self) -> list[AgentId]:
        return sorted(self._candidates)

    def candidates(self, dest: AgentId) -> tuple[RouteEntry, ...]:
        return self._candidates.get(dest, ())

    def best(self, dest: AgentId) -> RouteEntry | None:
        candidates = self.candidates(dest)
        return candidates[0] if candidates else None

    def entries(self) -> Iterator[RouteEntry]:
        for dest in self.destinations():
            yield from self._candidates[dest]

    def signature(self) -> tuple:
        return tuple(
            (dest, tuple(
                (entry.next_hop, entry.method, entry.attrs)
                for entry in self._candidates[dest]
            ))
            for dest in self.destinations()
        )

    def merge(
            self,
            neighbor: NeighborEntry,
            msg: RoutingUpdateMessage,
            now: float,
    ) -> bool:
        before = self.signature()
        methods = sorted(capability_overlap(self.caps, neighbor.caps))
        learned = defaultdict(list)
        for adv in msg.entries:
            if adv.dest == self.owner:
                continue
            for method in methods:
                try:
                    attrs = compose_attributes(self.catalog[method], adv.attrs)
                except HopLimitExceeded:
                    logger.debug(
                        '%s: drop %s via %s, hop cap',
                        self.owner, adv.dest, neighbor.address,
                    )
                    continue
                learned[adv.dest].append(RouteEntry(
                    dest=adv.dest,
                    dest_caps=adv.dest_caps,
                    next_hop=neighbor.address,
                    method=method,
                    attrs=attrs,
                    last_updated=now,
                ))
        self._learned[neighbor.address] = {
            dest: self._frontier_of(entries)
            for dest, entries in learned.items()
        }
        self._rebuild()
        return self.signature() != before

    def drop_next_hop(self, neighbor: AgentId) -> bool:
        if self._learned.pop(neighbor, None) is None:
            return False
        before = self.signature()
        self._rebuild()
        return self.signature() != before

    def advertisement(
            self,
            exclude_next_hop: AgentId | None = None,
    ) -> tuple[AdvertisedRoute, ...]:
        routes = []
        for dest in sorted(self._frontier):
            seen = []
            for entry in self._frontier[dest]:
                if entry.next_hop == exclude_next_hop or entry.attrs in seen:
                    continue
                seen.append(entry.attrs)
                routes.append(
                    AdvertisedRoute(dest, entry.dest_caps, entry.attrs)
                )
        return tuple(routes)

    def _rank(self, entry: RouteEntry) -> tuple:
        return route_rank(entry, self.weights)

    def _frontier_of(self, entries: Sequence[RouteEntry]) -> list[RouteEntry]:
        kept = []
        for entry in sorted(entries, key=self._rank):
            if not any(dominates(k.attrs, entry.attrs, self.weights)
                       for k in kept):
                kept.append(entry)
        # equal scores may rank a dominated entry ahead of its dominator
        return [
            entry for entry in kept
            if not any(
                other is not entry
                and dominates(other.attrs, entry.attrs, self.weights)
                and not dominates(entry.attrs, other.attrs, self.weights)
                for other in kept
            )
        ]

    def _rebuild(self) -> None:
        pooled = defaultdict(list)
        for neighbor in sorted(self._learned):
            for dest, entries in self._learned[neighbor].items():
                pooled[dest].extend(entries)
        self._frontier = {}
        self._candidates = {}
        for dest, entries in pooled.items():
            if not entries:
                continue
            frontier = self._frontier_of(entries)
            per_hop = {}
            for entry in sorted(entries, key=self._rank):
                per_hop.setdefault(entry.next_hop, entry)
            alternates = sorted(per_hop.values(), key=self._rank)
            kept = {}
            for entry in frontier + alternates[:self.max_candidates]:
                key = entry.next_hop, entry.method, entry.attrs
                kept.setdefault(key, entry)
            self._frontier[dest] = tuple(frontier)
            ranked = sorted(kept.values(), key=self._rank)
            self._candidates[dest] = tuple(ranked)


class StegAgent:
    """Steg-routing engine of one SA, driven by the simulator's events.

    Handlers return the steg-link messages to emit; timer handlers also
    return the delay until their next firing.
    """

    def __init__(
            self,
            me: AgentId,
            caps: CapabilitySet,
            catalog: Catalog,
            weights: MetricWeights,
            streams: Callable[[str], Generator],
            timers: TimerConfig = TimerConfig(),
            protocol: ProtocolConfig = ProtocolConfig(),
    ):
        if not caps:
            raise ValueError(f'{me}: a StegAgent needs steg-capabilities')
        self.me = me
        self.caps = frozenset(caps)
        self.catalog = catalog
        self.weights = weights
        self.timers = timers
        self.protocol = protocol
        self.neighbors = NeighborTable()
        self.routes = RoutingTable(
            me, self.caps, catalog, weights, protocol.max_candidates,
        )
        self._streams = streams
        self._rngs: dict[str, Generator] = {}
        self._cache: dict[AgentId, CachedAnnouncement] = {}
        self._pending: dict[AgentId, float] = {}
        self._hello_seq = 0

    def __repr__(self):
        return f'StegAgent(me={self.me}, caps={sorted(self.caps)})'

    @property
    def announcement(self) -> StegAnnouncement:
        return StegAnnouncement(self.me, self.caps)

    @property
    def cached(self) -> list[StegAnnouncement]:
        return [self._cache[key].announcement for key in sorted(self._cache)]

    def rng(self, purpose: str) -> Generator:
        if purpose not in self._rngs:
            self._rngs[purpose] = self._streams(purpose)
        return self._rngs[purpose]

    def signature(self) -> tuple:
        links = tuple(
            (entry.address, entry.link_method) for entry in self.neighbors
        )
        return links, self.routes.signature()

    def add_fixed_link(
            self,
            peer: AgentId,
            peer_caps: CapabilitySet,
            method: str,
            now: float = 0.0,
    ) -> None:
        self.neighbors.upsert(NeighborEntry(peer, peer_caps, method, now))

    def on_timer_random_walk(
            self,
            roster: Sequence[AgentId],
            walk_id: str,
    ) -> tuple[WalkStep | None, float]:
        try:
            step = send_random_walk(
                self.me, self.announcement, roster, self.rng('walk'), walk_id,
            )
        except DegeneratePlatform as e:
            logger.info('%s: walk skipped, %s', self.me, e)
            step = None
        return step, self.next_delay('random_walk')

    def on_random_walk(
            self,
            msg: CoverMessage,
            roster: Sequence[AgentId],
            walk: WalkConfig,
            now: float,
    ) -> tuple[list[LinkSend], WalkStep | None]:
        emissions = []
        ann = uncover(msg, caller_is_sa=True)
        if ann and ann.address != self.me and self._is_new(ann):
            emissions = self.integrate_discovery(ann, now)
        rng = self.rng('walk')
        step = forward_random_walk(self.me, msg, walk, roster, rng)
        return emissions, step

    def integrate_discovery(
            self,
            ann: StegAnnouncement,
            now: float,
    ) -> list[LinkSend]:
        if ann.address == self.me:
            raise ValueError('an SA does not discover itself')
        if capability_overlap(self.caps, ann.capabilities):
            method = select_link_method(
                self.caps, ann.capabilities, self.catalog, self.weights,
            )
            return self._initiate(ann.address, method, now)
        if self.protocol.form_steg_link and (relay := self._relay(ann)):
            return [relay]
        ttl = self.protocol.announcement_ttl
        self._cache[ann.address] = CachedAnnouncement(ann, now + ttl)
        logger.debug('%s: cached announcement of %s', self.me, ann.address)
        return []

    def on_form_steg_link(
            self,
            msg: FormStegLinkMessage,
            now: float,
    ) -> list[LinkSend]:
        if msg.target != self.me:
            best = self.routes.best(msg.target)
            if best is None:
                logger.info(
                    '%s: no route to relay target %s', self.me, msg.target,
                )
                return []
            link = self.neighbors.get(best.next_hop)
            return [LinkSend(best.next_hop, link.link_method, msg)]
        address = msg.new_sa_address
        if address == self.me or address in self.neighbors:
            return []
        if not capability_overlap(self.caps, msg.new_sa_caps):
            logger.info('%s: stale form steg-link for %s', self.me, address)
            return []
        method = select_link_method(
            self.caps, msg.new_sa_caps, self.catalog, self.weights,
        )
        return self._initiate(address, method, now)

    def on_hello(self, msg: HelloMessage, now: float) -> list[LinkSend]:
        if msg.link_method not in self.caps:
            raise IncompatibleHello(
                f'{self.me}: hello from {msg.sender} on {msg.link_method}'
            )
        known = self.neighbors.get(msg.sender)
        if known is None:
            self.neighbors.upsert(NeighborEntry(
                msg.sender, msg.sender_caps, msg.link_method, now,
            ))
            self._pending.pop(msg.sender, None)
            self._cache.pop(msg.sender, None)
            logger.debug('%s: neighbor %s up', self.me, msg.sender)
            return [self._hello(msg.sender, msg.link_method)]
        if known.caps != msg.sender_caps:
            self.neighbors.upsert(replace(known, caps=msg.sender_caps))
        self.neighbors.refresh(msg.sender, now)
        return []

    def on_timer_hello(self, now: float) -> tuple[list[LinkSend], float]:
        emissions = [
            self._hello(entry.address, entry.link_method)
            for entry in self.neighbors
        ]
        return emissions, self.next_delay('hello')

    def sweep_timeouts(
            self,
            now: float,
    ) -> tuple[list[NeighborEntry], list[LinkSend]]:
        for address, cached in list(self._cache.items()):
            if cached.expires < now:
                del self._cache[address]
        removed = self.neighbors.expired(now, self.timers.hello_timeout)
        changed = False
        for entry in removed:
            self.neighbors.remove(entry.address)
            changed |= self.routes.drop_next_hop(entry.address)
            logger.debug('%s: neighbor %s timed out', self.me, entry.address)
        if changed and self.protocol.triggered_updates:
            return removed, self._routing_updates(triggered=True)
        return removed, []

    def on_routing_update(
            self,
            msg: RoutingUpdateMessage,
            now: float,
    ) -> list[LinkSend]:
        neighbor = self.neighbors.get(msg.sender)
        if neighbor is None:
            raise UnknownNeighbor(f'{self.me}: update from {msg.sender}')
        changed = self.routes.merge(neighbor, msg, now)
        emissions = []
        if self.protocol.link_from_routes:
            emissions += self._link_learned_destinations(now)
        if changed and self.protocol.form_steg_link:
            emissions += self._retry_cached(now)
        if changed and self.protocol.triggered_updates:
            emissions += self._routing_updates(triggered=True)
        return emissions

    def on_timer_routing_update(
            self,
            now: float,
    ) -> tuple[list[LinkSend], float]:
        updates = self._routing_updates(triggered=False)
        return updates, self.next_delay('routing_update')

    def next_delay(self, timer: str) -> float:
        """Period of `timer` plus a uniform draw from its jitter bound."""
        period, fluctuation = {
            'random_walk': (
                self.timers.random_walk_period, self.timers.fluctuation_rw,
            ),
            'routing_update': (
                self.timers.routing_update_period, self.timers.fluctuation_ru,
            ),
            'hello': (self.timers.hello_period, self.timers.fluctuation_h),
        }[timer]
        if not fluctuation:
            return period
        rng = self.rng(f'timer:{timer}')
        return period + float(rng.uniform(0, fluctuation))

    def _hello(self, to: AgentId, method: str) -> LinkSend:
        self._hello_seq += 1
        hello = HelloMessage(
            sender=self.me,
            sender_caps=self.caps,
            link_method=method,
            neighbor_digest=self.neighbors.digest(),
            seq=self._hello_seq,
        )
        return LinkSend(to, method, hello)

    def _initiate(
            self,
            address: AgentId,
            method: str,
            now: float,
    ) -> list[LinkSend]:
        if address in self.neighbors:
            return []
        started = self._pending.get(address)
        if started is not None and now - started < self.timers.hello_timeout:
            return []
        self._pending[address] = now
        return [self._hello(address, method)]

    def _is_new(self, ann: StegAnnouncement) -> bool:
        neighbor = self.neighbors.get(ann.address)
        if neighbor is not None:
            return neighbor.caps != ann.capabilities
        cached = self._cache.get(ann.address)
        if cached and cached.announcement.capabilities == ann.capabilities:
            return False
        best = self.routes.best(ann.address)
        return not (
            best is not None
            and best.dest_caps == ann.capabilities
            and not capability_overlap(self.caps, ann.capabilities)
        )

    def _relay(self, ann: StegAnnouncement) -> LinkSend | None:
        matches = [
            best for dest in self.routes.destinations()
            if dest != ann.address
            and (best := self.routes.best(dest))
            and capability_overlap(best.dest_caps, ann.capabilities)
        ]
        if not matches:
            return None
        nearest = min(
            matches,
            key=lambda entry: (score(entry.attrs, self.weights), entry.dest),
        )
        link = self.neighbors.get(nearest.next_hop)
        msg = FormStegLinkMessage(ann.address, ann.capabilities, nearest.dest)
        logger.debug(
            '%s: relay %s to %s', self.me, ann.address, nearest.dest,
        )
        return LinkSend(nearest.next_hop, link.link_method, msg)

    def _retry_cached(self, now: float) -> list[LinkSend]:
        emissions = []
        for address in sorted(self._cache):
            cached = self._cache[address]
            if cached.expires < now:
                continue
            if relay := self._relay(cached.announcement):
                del self._cache[address]
                emissions.append(relay)
        return emissions

    def _link_learned_destinations(self, now: float) -> list[LinkSend]:
        emissions = []
        for dest in self.routes.destinations():
            if dest.platform != self.me.platform or dest in self.neighbors:
                continue
            dest_caps = self.routes.best(dest).dest_caps
            if capability_overlap(self.caps, dest_caps):
                method = select_link_method(
                    self.caps, dest_caps, self.catalog, self.weights,
                )
                emissions += self._initiate(dest, method, now)
        return emissions

    def _routing_updates(self, triggered: bool) -> list[LinkSend]:
        own = AdvertisedRoute(self.me, self.caps, ZERO_ATTRIBUTES)
        emissions = []
        for entry in self.neighbors:
            exclude = entry.address if self.protocol.split_horizon else None
            routes = self.routes.advertisement(exclude_next_hop=exclude)
            msg = RoutingUpdateMessage(self.me, (own,) + routes)
            emissions.append(
                LinkSend(entry.address, entry.link_method, msg, triggered)
            )
        return emissions
