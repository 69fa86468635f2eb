import logging
from dataclasses import dataclass, replace
from enum import StrEnum
from fractions import Fraction
from typing import Sequence

from numpy.random import Generator

from .core import (
    AgentId,
    CoverMessage,
    DegeneratePlatform,
    StegAnnouncement,
    cover,
    decoy_cover
)

logger = logging.getLogger(__name__)


class WalkMode(StrEnum):
    DISCOVERY = 'discovery'
    UNICAST = 'unicast'


@dataclass(frozen=True)
class WalkConfig:
    p_f: float = 0.5
    mode: WalkMode = WalkMode.DISCOVERY
    platform_delay_ms: Fraction = Fraction(1)

    def __post_init__(self):
        if not 0 <= self.p_f < 1:
            raise ValueError(f'p_f must lie in [0, 1), got {self.p_f}')


@dataclass(frozen=True)
class WalkStep:
    sender: AgentId
    recipient: AgentId
    message: CoverMessage


@dataclass(frozen=True)
class UnicastRecord:
    origin: AgentId
    dest: AgentId
    proxies: tuple[AgentId, ...]
    payload: str
    delivered: bool = True


def select_random_agent(
        holder: AgentId,
        roster: Sequence[AgentId],
        rng: Generator,
        exclude: frozenset[AgentId] = frozenset(),
) -> AgentId:
    candidates = [
        agent for agent in roster
        if agent != holder and agent not in exclude
    ]
    if not candidates:
        raise DegeneratePlatform(f'{holder}: no other agent on the platform')
    return candidates[int(rng.integers(len(candidates)))]


def coin_flip(p_f: float, rng: Generator) -> bool:
    return bool(rng.random() < p_f)


def send_random_walk(
        me: AgentId,
        ann: StegAnnouncement | None,
        roster: Sequence[AgentId],
        rng: Generator,
        walk_id: str,
) -> WalkStep:
    """Launch a walk; `ann=None` sends plain decoy cover traffic."""
    recipient = select_random_agent(me, roster, rng)
    msg = cover(ann, walk_id) if ann else decoy_cover(walk_id)
    return WalkStep(me, recipient, msg.forwarded())


def forward_random_walk(
        agent: AgentId,
        msg: CoverMessage,
        cfg: WalkConfig,
        roster: Sequence[AgentId],
        rng: Generator,
        dest: AgentId | None = None,
) -> WalkStep | None:
    """Flip the coin for the holder of `msg`.

    Heads passes the message to a random agent. On tails a discovery walk
    dies, while a unicast walk is handed to `dest`, which is never drawn
    as a proxy.
    """
    unicast = cfg.mode is WalkMode.UNICAST
    if unicast and dest is None:
        raise ValueError('unicast walks need a destination')
    if coin_flip(cfg.p_f, rng):
        exclude = frozenset({dest}) if unicast else frozenset()
        try:
            recipient = select_random_agent(agent, roster, rng, exclude)
            return WalkStep(agent, recipient, msg.forwarded())
        except DegeneratePlatform:
            logger.debug('%s: no agent to forward %s', agent, msg.walk_id)
    if unicast:
        return WalkStep(agent, dest, msg.forwarded())
    return None


def anonymous_unicast(
        origin: AgentId,
        dest: AgentId,
        payload: str,
        cfg: WalkConfig,
        roster: Sequence[AgentId],
        rng: Generator,
) -> UnicastRecord:
    """Relay `payload` through random proxies, then hand it to `dest`.

    A platform holding only the two endpoints offers no proxy, so nothing
    is sent and the record is marked undelivered.
    """
    if origin == dest:
        raise ValueError('origin and destination coincide')
    if dest not in roster or origin not in roster:
        raise ValueError('unicast endpoints must share the platform')
    try:
        first = select_random_agent(origin, roster, rng, frozenset({dest}))
    except DegeneratePlatform:
        logger.info('%s: no proxy towards %s', origin, dest)
        return UnicastRecord(origin, dest, (), payload, delivered=False)
    cfg = replace(cfg, mode=WalkMode.UNICAST)
    step = WalkStep(origin, first, decoy_cover('unicast').forwarded())
    proxies = [first]
    while True:
        step = forward_random_walk(
            step.recipient, step.message, cfg, roster, rng, dest,
        )
        if step.recipient == dest:
            return UnicastRecord(origin, dest, tuple(proxies), payload)
        proxies.append(step.recipient)


def walk_length_pmf(p_f: float, k: int) -> float:
    if not 0 <= p_f < 1:
        raise ValueError(f'p_f must lie in [0, 1), got {p_f}')
    if k < 1:
        raise ValueError('walks have at least one hop')
    return p_f ** (k - 1) * (1 - p_f)


def mean_walk_length(p_f: float) -> float:
    return 1 / (1 - p_f)


def walk_trail(
        origin: AgentId,
        roster: Sequence[AgentId],
        cfg: WalkConfig,
        rng: Generator,
        walk_id: str = 'trial',
) -> list[AgentId]:
    """Recipients of one discovery walk, in visiting order."""
    step = send_random_walk(origin, None, roster, rng, walk_id)
    trail = [step.recipient]
    while step := forward_random_walk(
            step.recipient, step.message, cfg, roster, rng):
        trail.append(step.recipient)
    return trail
