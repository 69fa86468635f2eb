from collections import Counter

import numpy as np
import pytest

from trustmas.core import (
    AgentId,
    DegeneratePlatform,
    StegAnnouncement,
    decoy_cover,
    uncover
)
from trustmas.walk import (
    WalkConfig,
    WalkMode,
    anonymous_unicast,
    forward_random_walk,
    mean_walk_length,
    select_random_agent,
    send_random_walk,
    walk_length_pmf,
    walk_trail
)


def roster(n, platform='P1'):
    return [AgentId(platform, f'A{i}') for i in range(n)]


def test_walk_config_raise_value_error_p_f_one():
    with pytest.raises(ValueError, match='p_f'):
        WalkConfig(p_f=1.0)


def test_select_random_agent_never_self():
    agents = roster(3)
    rng = np.random.default_rng(0)
    picks = {select_random_agent(agents[0], agents, rng) for _ in range(200)}

    assert picks == set(agents[1:])


def test_select_random_agent_raise_degenerate_platform():
    agents = roster(1)
    with pytest.raises(DegeneratePlatform):
        select_random_agent(agents[0], agents, np.random.default_rng(0))


def test_send_random_walk_single_choice():
    agents = roster(2)
    ann = StegAnnouncement(agents[0], frozenset({'m1'}))
    step = send_random_walk(
        agents[0], ann, agents, np.random.default_rng(0), 'w1',
    )

    assert step.recipient == agents[1]
    assert step.message.hop_count == 1
    assert uncover(step.message, caller_is_sa=True) == ann


def test_send_random_walk_replays_with_seed():
    agents = roster(6)

    def recipients(seed):
        rng = np.random.default_rng(seed)
        return [
            send_random_walk(agents[0], None, agents, rng, 'w').recipient
            for _ in range(20)
        ]

    assert recipients(3) == recipients(3)


def test_forward_random_walk_p_f_zero_terminates():
    agents = roster(4)
    msg = decoy_cover('w1').forwarded()
    cfg = WalkConfig(p_f=0.0)
    rng = np.random.default_rng(0)

    assert forward_random_walk(agents[1], msg, cfg, agents, rng) is None


def test_forward_random_walk_increments_hop_count():
    agents = roster(4)
    msg = decoy_cover('w1').forwarded()
    cfg = WalkConfig(p_f=0.99)
    rng = np.random.default_rng(1)
    step = None
    while step is None:
        step = forward_random_walk(agents[1], msg, cfg, agents, rng)

    assert step.message.hop_count == 2
    assert step.recipient != agents[1]


def test_forward_random_walk_dies_on_emptied_platform():
    agents = roster(1)
    msg = decoy_cover('w1').forwarded()
    cfg = WalkConfig(p_f=0.99)

    for seed in range(10):
        rng = np.random.default_rng(seed)
        assert forward_random_walk(agents[0], msg, cfg, agents, rng) is None


def test_forward_random_walk_unicast_tails_delivers():
    agents = roster(4)
    msg = decoy_cover('u1').forwarded()
    cfg = WalkConfig(p_f=0.0, mode=WalkMode.UNICAST)
    rng = np.random.default_rng(0)
    step = forward_random_walk(agents[1], msg, cfg, agents, rng, agents[3])

    assert step.sender == agents[1]
    assert step.recipient == agents[3]
    assert step.message.hop_count == 2


def test_forward_random_walk_unicast_heads_skips_dest():
    agents = roster(3)
    msg = decoy_cover('u1').forwarded()
    cfg = WalkConfig(p_f=0.5, mode=WalkMode.UNICAST)
    rng = np.random.default_rng(4)
    steps = [
        forward_random_walk(agents[1], msg, cfg, agents, rng, agents[2])
        for _ in range(200)
    ]
    recipients = {step.recipient for step in steps}

    assert recipients == {agents[0], agents[2]}


def test_forward_random_walk_unicast_delivers_on_emptied_platform():
    agents = roster(2)
    msg = decoy_cover('u1').forwarded()
    cfg = WalkConfig(p_f=0.99, mode=WalkMode.UNICAST)
    rng = np.random.default_rng(0)
    step = forward_random_walk(agents[0], msg, cfg, agents, rng, agents[1])

    assert step.recipient == agents[1]


def test_forward_random_walk_raise_value_error_unicast_without_dest():
    agents = roster(3)
    msg = decoy_cover('u1').forwarded()
    cfg = WalkConfig(mode=WalkMode.UNICAST)
    with pytest.raises(ValueError, match='destination'):
        forward_random_walk(
            agents[0], msg, cfg, agents, np.random.default_rng(0),
        )


@pytest.mark.parametrize(
    'p_f, k, expected',
    [
        (0.5, 1, 0.5),
        (0.5, 3, 0.125),
        (0.0, 1, 1.0),
        (0.0, 2, 0.0),
        (0.75, 2, 0.1875),
    ],
)
def test_walk_length_pmf(p_f, k, expected):
    actual = walk_length_pmf(p_f, k)

    assert actual == pytest.approx(expected)


@pytest.mark.parametrize('p_f, k', [(1.0, 1), (-0.1, 1), (0.5, 0)])
def test_walk_length_pmf_raise_value_error(p_f, k):
    with pytest.raises(ValueError):
        walk_length_pmf(p_f, k)


@pytest.mark.parametrize('p_f', [0.25, 0.5, 0.75])
def test_walk_length_law(p_f):
    agents = roster(6)
    cfg = WalkConfig(p_f=p_f)
    rng = np.random.default_rng(2024)
    trials = 10000
    lengths = Counter(
        len(walk_trail(agents[0], agents, cfg, rng)) for _ in range(trials)
    )
    mean = sum(k * n for k, n in lengths.items()) / trials

    assert mean == pytest.approx(mean_walk_length(p_f), rel=0.05)
    for k in range(1, max(lengths) + 1):
        assert abs(lengths[k] / trials - walk_length_pmf(p_f, k)) <= 0.02


def test_walk_trail_p_f_zero_is_single_hop():
    agents = roster(5)
    cfg = WalkConfig(p_f=0.0)
    rng = np.random.default_rng(0)

    for _ in range(50):
        trail = walk_trail(agents[0], agents, cfg, rng)
        assert len(trail) == 1
        assert trail[0] != agents[0]


def test_anonymous_unicast_p_f_zero_single_proxy():
    agents = roster(5)
    record = anonymous_unicast(
        agents[0], agents[4], 'hi', WalkConfig(p_f=0.0), agents,
        np.random.default_rng(0),
    )

    assert len(record.proxies) == 1
    assert record.proxies[0] not in (agents[0], agents[4])
    assert record.delivered


def test_anonymous_unicast_never_uses_dest_as_proxy():
    agents = roster(4)
    cfg = WalkConfig(p_f=0.9)
    rng = np.random.default_rng(5)

    for _ in range(100):
        record = anonymous_unicast(
            agents[0], agents[3], 'x', cfg, agents, rng,
        )
        assert agents[3] not in record.proxies
        for a, b in zip(record.proxies, record.proxies[1:]):
            assert a != b


def test_anonymous_unicast_raise_value_error_same_endpoints():
    agents = roster(3)
    with pytest.raises(ValueError, match='coincide'):
        anonymous_unicast(
            agents[0], agents[0], 'x', WalkConfig(), agents,
            np.random.default_rng(0),
        )


def test_anonymous_unicast_raise_value_error_foreign_dest():
    agents = roster(3)
    with pytest.raises(ValueError, match='share the platform'):
        anonymous_unicast(
            agents[0], AgentId('P2', 'A0'), 'x', WalkConfig(), agents,
            np.random.default_rng(0),
        )


def test_anonymous_unicast_without_proxy_is_undelivered():
    agents = roster(2)
    record = anonymous_unicast(
        agents[0], agents[1], 'x', WalkConfig(), agents,
        np.random.default_rng(0),
    )

    assert record.proxies == ()
    assert not record.delivered


def test_anonymous_unicast_chain_length_law():
    agents = roster(6)
    cfg = WalkConfig(p_f=0.5)
    rng = np.random.default_rng(11)
    trials = 10000
    lengths = Counter(
        len(anonymous_unicast(
            agents[0], agents[5], 'x', cfg, agents, rng,
        ).proxies)
        for _ in range(trials)
    )

    for k in range(1, 5):
        assert abs(lengths[k] / trials - walk_length_pmf(0.5, k)) <= 0.02
