import math
from dataclasses import dataclass, field, replace
from enum import StrEnum
from fractions import Fraction
from typing import Mapping, Self

MAX_HOPS = 16

CapabilitySet = frozenset[str]


class TrustmasError(Exception):
    pass


class HopLimitExceeded(TrustmasError):
    pass


class NoSharedMethod(TrustmasError):
    pass


class DegeneratePlatform(TrustmasError):
    pass


class IncompatibleHello(TrustmasError):
    pass


class UnknownNeighbor(TrustmasError):
    pass


class NoPathFound(TrustmasError):
    pass


class ForwardingLoop(TrustmasError):
    pass


class UnknownAgent(TrustmasError):
    pass


class TooLarge(TrustmasError):
    pass


class InputError(TrustmasError):
    pass


class ConfigError(TrustmasError):
    def __init__(self, findings: list[tuple[str, str]]):
        self.findings = findings
        super().__init__(
            '; '.join(f'{path}: {message}' for path, message in findings)
        )


class Role(StrEnum):
    SA = 'SA'
    OA = 'OA'


class Layer(StrEnum):
    APPLICATION = 'application'
    TRANSPORT_NETWORK = 'transport_network'
    DATA_LINK = 'data_link'


@dataclass(frozen=True, order=True)
class AgentId:
    platform: str
    local_name: str

    def __post_init__(self):
        for token in self.platform, self.local_name:
            if not token or '/' in token or token != token.strip():
                raise ValueError(f'invalid agent id token {token!r}')

    def __str__(self):
        return f'{self.platform}/{self.local_name}'

    @classmethod
    def parse(cls, value: str) -> Self:
        platform, sep, local_name = value.partition('/')
        if not sep:
            raise ValueError(f'agent id {value!r} is not "platform/name"')
        return cls(platform, local_name)


@dataclass(frozen=True)
class StegMethodSpec:
    id: str
    layer: Layer
    capacity_kbps: Fraction
    delay_ms: Fraction
    penalty: Fraction

    def __post_init__(self):
        if self.capacity_kbps <= 0:
            raise ValueError(f'method {self.id}: capacity must be positive')
        if self.delay_ms < 0 or self.penalty < 0:
            raise ValueError(f'method {self.id}: negative delay or penalty')


Catalog = Mapping[str, StegMethodSpec]


def capability_overlap(a: CapabilitySet, b: CapabilitySet) -> CapabilitySet:
    return a & b


@dataclass(frozen=True)
class StegAnnouncement:
    address: AgentId
    capabilities: CapabilitySet

    def __post_init__(self):
        if not self.capabilities:
            raise ValueError(f'{self.address}: announcement without methods')


@dataclass(frozen=True)
class CoverMessage:
    walk_id: str
    hop_count: int = 0
    hidden: StegAnnouncement | None = field(default=None, repr=False)

    def forwarded(self) -> Self:
        return replace(self, hop_count=self.hop_count + 1)


def cover(ann: StegAnnouncement, walk_id: str) -> CoverMessage:
    return CoverMessage(walk_id=walk_id, hidden=ann)


def decoy_cover(walk_id: str) -> CoverMessage:
    return CoverMessage(walk_id=walk_id)


def uncover(msg: CoverMessage, caller_is_sa: bool) -> StegAnnouncement | None:
    # OAs cannot tell a covered announcement from plain cover traffic.
    if not caller_is_sa:
        return None
    return msg.hidden


@dataclass(frozen=True)
class RouteAttributes:
    bottleneck_kbps: Fraction | float
    total_delay_ms: Fraction
    total_penalty: Fraction
    hop_count: int

    def __post_init__(self):
        empty = (
            self.bottleneck_kbps == math.inf
            and self.total_delay_ms == 0
            and self.total_penalty == 0
        )
        if (self.hop_count == 0) != empty:
            raise ValueError('only the empty path has zero hops')
        if not 0 <= self.hop_count <= MAX_HOPS:
            raise ValueError(f'hop count {self.hop_count} out of range')


ZERO_ATTRIBUTES = RouteAttributes(math.inf, Fraction(0), Fraction(0), 0)


def compose_attributes(
        link: StegMethodSpec,
        adv: RouteAttributes,
) -> RouteAttributes:
    if adv.hop_count >= MAX_HOPS:
        raise HopLimitExceeded(f'route already has {adv.hop_count} hops')
    return RouteAttributes(
        bottleneck_kbps=min(link.capacity_kbps, adv.bottleneck_kbps),
        total_delay_ms=link.delay_ms + adv.total_delay_ms,
        total_penalty=link.penalty + adv.total_penalty,
        hop_count=adv.hop_count + 1,
    )


def concat_attributes(
        prefix: RouteAttributes,
        suffix: RouteAttributes,
) -> RouteAttributes:
    hops = prefix.hop_count + suffix.hop_count
    if hops > MAX_HOPS:
        raise HopLimitExceeded(f'path of {hops} hops')
    return RouteAttributes(
        bottleneck_kbps=min(prefix.bottleneck_kbps, suffix.bottleneck_kbps),
        total_delay_ms=prefix.total_delay_ms + suffix.total_delay_ms,
        total_penalty=prefix.total_penalty + suffix.total_penalty,
        hop_count=hops,
    )


def link_attributes(link: StegMethodSpec) -> RouteAttributes:
    return compose_attributes(link, ZERO_ATTRIBUTES)


@dataclass(frozen=True)
class MetricWeights:
    w_d: Fraction = Fraction(1)
    w_c: Fraction = Fraction(1)
    c_ref_kbps: Fraction = Fraction(1000)
    w_m: Fraction = Fraction(10)

    def __post_init__(self):
        if min(self.w_d, self.w_c, self.c_ref_kbps, self.w_m) < 0:
            raise ValueError('metric weights must be non-negative')


def additive_cost(attrs: RouteAttributes, w: MetricWeights) -> Fraction:
    return w.w_d * attrs.total_delay_ms + w.w_m * attrs.total_penalty


def score(attrs: RouteAttributes, w: MetricWeights) -> Fraction:
    """Route metric, lower is better.

    Delay and penalty add up along the path while capacity enters through
    its bottleneck, so the empty self-route has no score.
    """
    if attrs.hop_count == 0:
        raise ValueError('the self-route has no score')
    capacity_term = w.w_c * w.c_ref_kbps / Fraction(attrs.bottleneck_kbps)
    return additive_cost(attrs, w) + capacity_term


def dominates(
        a: RouteAttributes,
        b: RouteAttributes,
        w: MetricWeights,
) -> bool:
    return (
        a.bottleneck_kbps >= b.bottleneck_kbps
        and additive_cost(a, w) <= additive_cost(b, w)
        and a.hop_count <= b.hop_count
    )


@dataclass(frozen=True)
class HelloMessage:
    sender: AgentId
    sender_caps: CapabilitySet
    link_method: str
    neighbor_digest: tuple[AgentId, ...]
    seq: int

    def __post_init__(self):
        if self.link_method not in self.sender_caps:
            raise ValueError(f'{self.sender}: hello on foreign method')


@dataclass(frozen=True)
class AdvertisedRoute:
    dest: AgentId
    dest_caps: CapabilitySet
    attrs: RouteAttributes


@dataclass(frozen=True)
class RoutingUpdateMessage:
    sender: AgentId
    entries: tuple[AdvertisedRoute, ...]


@dataclass(frozen=True)
class FormStegLinkMessage:
    new_sa_address: AgentId
    new_sa_caps: CapabilitySet
    target: AgentId

    def __post_init__(self):
        if not self.new_sa_caps:
            raise ValueError('form steg-link without methods')


@dataclass(frozen=True)
class Hop:
    sender: AgentId
    receiver: AgentId
    method: str


@dataclass(frozen=True)
class DataMessage:
    source: AgentId
    dest: AgentId
    payload: str
    hops: tuple[Hop, ...] = ()
    attrs: RouteAttributes = ZERO_ATTRIBUTES


@dataclass(frozen=True)
class NeighborEntry:
    address: AgentId
    caps: CapabilitySet
    link_method: str
    last_hello: float


@dataclass(frozen=True)
class RouteEntry:
    dest: AgentId
    dest_caps: CapabilitySet
    next_hop: AgentId
    method: str
    attrs: RouteAttributes
    last_updated: float


def route_rank(entry: RouteEntry, w: MetricWeights) -> tuple:
    return (
        score(entry.attrs, w),
        entry.attrs.hop_count,
        entry.next_hop,
        entry.method,
    )


def format_rational(value: Fraction | float | None) -> str | None:
    if value is None or value == math.inf:
        return None
    return str(Fraction(value))


def parse_rational(value: str | None) -> Fraction | float:
    if value is None:
        return math.inf
    return Fraction(value)


@dataclass(frozen=True)
class LinkSend:
    """One message handed to a steg-link, carried on `method`."""
    to: AgentId
    method: str
    message: (
        HelloMessage | RoutingUpdateMessage | FormStegLinkMessage | DataMessage
    )
    triggered: bool = False
