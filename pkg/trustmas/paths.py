import logging
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Mapping, Sequence

from .core import (
    MAX_HOPS,
    AgentId,
    CapabilitySet,
    Catalog,
    DataMessage,
    ForwardingLoop,
    HopLimitExceeded,
    Hop,
    LinkSend,
    MetricWeights,
    NoPathFound,
    NoSharedMethod,
    RouteAttributes,
    RouteEntry,
    capability_overlap,
    concat_attributes,
    link_attributes,
    route_rank,
    score
)

if TYPE_CHECKING:
    from .routing import RoutingTable, StegAgent

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeliveryRecord:
    source: AgentId
    dest: AgentId
    hops: tuple[Hop, ...]
    total_attrs: RouteAttributes
    delivered: bool
    error: str | None = None


def find_paths_match(
        table: 'RoutingTable',
        dest: AgentId,
) -> list[RouteEntry]:
    return list(table.candidates(dest))


def choose_best_path(
        paths: Sequence[RouteEntry],
        w: MetricWeights,
) -> RouteEntry:
    if not paths:
        raise ValueError('no candidate paths')
    return min(paths, key=lambda entry: route_rank(entry, w))


def select_link_method(
        a: CapabilitySet,
        b: CapabilitySet,
        catalog: Catalog,
        w: MetricWeights,
) -> str:
    shared = capability_overlap(a, b)
    if not shared:
        raise NoSharedMethod(f'{sorted(a)} and {sorted(b)} share no method')
    return min(
        shared,
        key=lambda m: (score(link_attributes(catalog[m]), w), m),
    )


def forward_data(agent: 'StegAgent', msg: DataMessage) -> LinkSend:
    """Pick the next steg-link for `msg` and re-encode onto its method.

    The choice accounts for the attributes already accumulated on the way
    here, so the delivered path keeps the score the source computed.
    """
    if len(msg.hops) >= MAX_HOPS:
        raise ForwardingLoop(f'{msg.source} -> {msg.dest} exceeded hop cap')
    paths = find_paths_match(agent.routes, msg.dest)
    if not paths:
        raise NoPathFound(f'{agent.me} has no route to {msg.dest}')
    if len(paths) == 1:
        chosen = paths[0]
    elif not msg.hops:
        chosen = choose_best_path(paths, agent.weights)
    else:
        chosen = min(
            paths,
            key=lambda entry: _continuation_rank(msg, entry, agent.weights),
        )
    link = link_attributes(agent.catalog[chosen.method])
    try:
        attrs = concat_attributes(msg.attrs, link)
    except HopLimitExceeded as e:
        raise ForwardingLoop(str(e)) from e
    hop = Hop(agent.me, chosen.next_hop, chosen.method)
    message = replace(msg, hops=msg.hops + (hop,), attrs=attrs)
    return LinkSend(chosen.next_hop, chosen.method, message)


def _continuation_rank(
        msg: DataMessage,
        entry: RouteEntry,
        w: MetricWeights,
) -> tuple:
    try:
        total = concat_attributes(msg.attrs, entry.attrs)
    except HopLimitExceeded:
        return (1, 0, 0, entry.next_hop, entry.method)
    return (0, score(total, w), total.hop_count, entry.next_hop, entry.method)


def delivery_record(
        msg: DataMessage,
        error: str | None = None,
) -> DeliveryRecord:
    return DeliveryRecord(
        source=msg.source,
        dest=msg.dest,
        hops=msg.hops,
        total_attrs=msg.attrs,
        delivered=error is None,
        error=error,
    )


def send_data(
        agents: Mapping[AgentId, 'StegAgent'],
        source: AgentId,
        dest: AgentId,
        payload: str,
) -> DeliveryRecord:
    """Deliver `payload` synchronously by walking the agents' tables."""
    msg = DataMessage(source, dest, payload)
    holder = source
    while holder != dest:
        step = forward_data(agents[holder], msg)
        if step.to not in agents:
            raise NoPathFound(f'{holder}: next hop {step.to} is gone')
        holder, msg = step.to, step.message
    logger.debug('delivered %s -> %s in %d hops', source, dest, len(msg.hops))
    return delivery_record(msg)
