from fractions import Fraction

import pytest

from conftest import make_agent, method
from trustmas.core import (
    MAX_HOPS,
    AgentId,
    DataMessage,
    ForwardingLoop,
    Hop,
    MetricWeights,
    NoPathFound,
    NoSharedMethod,
    RouteAttributes,
    RouteEntry,
    score
)
from trustmas.paths import (
    choose_best_path,
    find_paths_match,
    forward_data,
    select_link_method,
    send_data
)

DEST = AgentId('P1', 'D')


def attrs(capacity, delay, penalty, hops):
    return RouteAttributes(
        Fraction(capacity), Fraction(delay), Fraction(penalty), hops,
    )


def entry(next_hop, route, method='m1'):
    return RouteEntry(
        DEST, frozenset({'m1'}), AgentId('P1', next_hop), method, route, 0.0,
    )


def exchange(agents, rounds):
    """Deliver every agent's periodic updates, `rounds` times over."""
    for _ in range(rounds):
        for agent in agents.values():
            updates, _ = agent.on_timer_routing_update(0.0)
            for send in updates:
                agents[send.to].on_routing_update(send.message, 0.0)


@pytest.fixture
def chain():
    a = make_agent('A', {'m1'})
    b = make_agent('B', {'m1', 'm3'})
    c = make_agent('C', {'m3'})
    for x, y, m in (a, b, 'm1'), (b, c, 'm3'):
        x.add_fixed_link(y.me, y.caps, m)
        y.add_fixed_link(x.me, x.caps, m)
    agents = {agent.me: agent for agent in (a, b, c)}
    exchange(agents, 2)
    return agents


def test_choose_best_path_lowest_score():
    paths = [entry('B', attrs(8, 205, 5, 2)), entry('C', attrs(10, 10, 1, 1))]
    expected = paths[1]
    actual = choose_best_path(paths, MetricWeights())

    assert expected == actual
    assert score(actual.attrs, MetricWeights()) == 120


def test_choose_best_path_tie_prefers_fewer_hops():
    paths = [
        entry('B', attrs(1000, 9, 0, 3)),
        entry('C', attrs(1000, 9, 0, 2)),
    ]
    actual = choose_best_path(paths, MetricWeights())

    assert actual.attrs.hop_count == 2


def test_choose_best_path_tie_prefers_lower_next_hop():
    paths = [
        entry('C', attrs(1000, 9, 0, 2)),
        entry('B', attrs(1000, 9, 0, 2)),
    ]
    actual = choose_best_path(paths, MetricWeights())

    assert actual.next_hop == AgentId('P1', 'B')


def test_choose_best_path_raise_value_error_empty():
    with pytest.raises(ValueError):
        choose_best_path([], MetricWeights())


def test_select_link_method_lowest_link_score():
    catalog = {'m1': method('m1', 50, 30, 1), 'm2': method('m2', 100, 15, 1)}
    actual = select_link_method(
        frozenset({'m1', 'm2'}), frozenset({'m1', 'm2', 'm9'}), catalog,
        MetricWeights(),
    )

    assert actual == 'm2'


def test_select_link_method_single_shared():
    catalog = {'m1': method('m1', 50, 30, 1), 'm2': method('m2', 100, 15, 1)}
    actual = select_link_method(
        frozenset({'m1'}), frozenset({'m1', 'm2'}), catalog, MetricWeights(),
    )

    assert actual == 'm1'


def test_select_link_method_raise_no_shared_method():
    catalog = {'m1': method('m1', 50, 30, 1), 'm2': method('m2', 100, 15, 1)}
    with pytest.raises(NoSharedMethod):
        select_link_method(
            frozenset({'m1'}), frozenset({'m2'}), catalog, MetricWeights(),
        )


def test_find_paths_match(chain):
    a = chain[AgentId('P1', 'A')]

    assert find_paths_match(a.routes, AgentId('P1', 'C'))
    assert find_paths_match(a.routes, AgentId('P1', 'Z')) == []


def test_send_data_converts_methods(chain):
    source, relay, dest = sorted(chain)
    record = send_data(chain, source, dest, 'hello')
    expected = (Hop(source, relay, 'm1'), Hop(relay, dest, 'm3'))

    assert record.delivered
    assert record.hops == expected
    assert record.total_attrs == attrs(64, 22, 4, 2)
    for hop in record.hops:
        assert hop.method in chain[hop.sender].caps
        assert hop.method in chain[hop.receiver].caps


def test_send_data_direct_neighbor(chain):
    source, relay, _ = sorted(chain)
    record = send_data(chain, source, relay, 'hi')

    assert record.hops == (Hop(source, relay, 'm1'),)


def test_send_data_raise_no_path_found(chain):
    source = AgentId('P1', 'A')
    with pytest.raises(NoPathFound):
        send_data(chain, source, AgentId('P1', 'Z'), 'x')


def test_forward_data_raise_forwarding_loop(chain):
    a = chain[AgentId('P1', 'A')]
    hops = tuple(Hop(a.me, a.me, 'm1') for _ in range(MAX_HOPS))
    msg = DataMessage(a.me, AgentId('P1', 'C'), 'x', hops)
    with pytest.raises(ForwardingLoop):
        forward_data(a, msg)


def test_forward_data_keeps_source_score(chain):
    a = chain[AgentId('P1', 'A')]
    dest = AgentId('P1', 'C')
    best = a.routes.best(dest)
    record = send_data(chain, a.me, dest, 'x')
    w = MetricWeights()

    assert score(record.total_attrs, w) == score(best.attrs, w)
