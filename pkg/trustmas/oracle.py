import logging
from collections import defaultdict, deque
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations, permutations
from typing import Sequence

import networkx as nx
import numpy as np

from .core import (
    MAX_HOPS,
    ZERO_ATTRIBUTES,
    AgentId,
    CapabilitySet,
    Catalog,
    InputError,
    MetricWeights,
    RouteAttributes,
    TooLarge,
    additive_cost,
    capability_overlap,
    compose_attributes,
    concat_attributes,
    format_rational,
    link_attributes,
    parse_rational,
    score
)
from .schemas import (
    JoinEvent,
    KillEvent,
    Mismatch,
    OracleDocument,
    OraclePair,
    ScenarioConfig,
    Summary,
    VerificationReport,
    WalkHit
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OracleRoute:
    source: AgentId
    dest: AgentId
    attrs: RouteAttributes
    path: tuple[AgentId, ...]
    methods: tuple[str, ...]
    tied: bool = False


def final_population(cfg: ScenarioConfig) -> dict[AgentId, CapabilitySet]:
    """SAs alive once every scenario event has been applied."""
    population = {
        AgentId(platform.id, agent.id): frozenset(agent.caps)
        for platform in cfg.platforms
        for agent in platform.agents
        if agent.caps
    }
    events = sorted(
        enumerate(cfg.events), key=lambda item: (item[1].time, item[0]),
    )
    for _, event in events:
        match event:
            case KillEvent(agent=address):
                population.pop(AgentId.parse(address), None)
            case JoinEvent(agent=address, caps=caps) if caps:
                population[AgentId.parse(address)] = frozenset(caps)
    return population


def build_link_graph(cfg: ScenarioConfig) -> nx.MultiGraph:
    """Steg-links every SA pair could hold once discovery completes.

    Parallel edges are keyed by the method they run on.
    """
    graph = nx.MultiGraph()
    population = final_population(cfg)
    for address in sorted(population):
        graph.add_node(address, caps=population[address])
    for a, b in combinations(sorted(population), 2):
        if a.platform == b.platform:
            shared = capability_overlap(population[a], population[b])
            for method in sorted(shared):
                graph.add_edge(a, b, key=method)
    for relation in cfg.fixed_relations:
        a = AgentId.parse(relation.sa_a)
        b = AgentId.parse(relation.sa_b)
        if a in population and b in population:
            graph.add_edge(a, b, key=relation.method)
    return graph


def link_methods(graph: nx.MultiGraph, a: AgentId, b: AgentId) -> list[str]:
    return sorted(graph.get_edge_data(a, b, default={}))


def best_methods(
        graph: nx.MultiGraph,
        path: Sequence[AgentId],
        catalog: Catalog,
        w: MetricWeights,
) -> tuple[RouteAttributes, tuple[str, ...]] | None:
    """Cheapest method per link of `path`, for the best bottleneck floor.

    For each floor every link takes its lowest-cost method at or above the
    floor; the floor giving the lowest score wins.
    """
    links = [link_methods(graph, a, b) for a, b in zip(path, path[1:])]
    floors = sorted({
        catalog[method].capacity_kbps
        for methods in links
        for method in methods
    })
    best = None
    for floor in floors:
        chosen = []
        for methods in links:
            usable = [
                method for method in methods
                if catalog[method].capacity_kbps >= floor
            ]
            if not usable:
                break
            chosen.append(min(usable, key=lambda m: (
                additive_cost(link_attributes(catalog[m]), w), m,
            )))
        else:
            attrs = ZERO_ATTRIBUTES
            for method in reversed(chosen):
                attrs = compose_attributes(catalog[method], attrs)
            key = score(attrs, w), tuple(chosen)
            if best is None or key < best[0]:
                best = key, attrs
    if best is None:
        return None
    (_, methods), attrs = best
    return attrs, methods


@dataclass(frozen=True)
class PathLabel:
    attrs: RouteAttributes
    cost: Fraction
    path: tuple[AgentId, ...]

    def covers(self, other: 'PathLabel') -> bool:
        """Every extension of `other` is matched by one of this label."""
        mine = self.attrs.bottleneck_kbps, self.cost, self.attrs.hop_count
        theirs = other.attrs.bottleneck_kbps, other.cost, other.attrs.hop_count
        if mine == theirs:
            return self.path <= other.path
        return (
            mine[0] >= theirs[0]
            and mine[1] <= theirs[1]
            and mine[2] <= theirs[2]
        )


def path_labels(
        graph: nx.MultiGraph,
        source: AgentId,
        catalog: Catalog,
        w: MetricWeights,
) -> dict[AgentId, dict[AgentId, list[PathLabel]]]:
    """Non-dominated simple paths from `source`, by destination and first hop.

    A partial path is dropped once a path to the same node through the same
    first hop has at least its bottleneck with no more cost or hops. Costs
    are non-negative, so no optimal score or optimal first hop is lost.
    """
    labels = defaultdict(lambda: defaultdict(list))
    queue = deque([PathLabel(ZERO_ATTRIBUTES, Fraction(0), (source,))])
    while queue:
        label = queue.popleft()
        path = label.path
        if len(path) > 1 and label not in labels[path[-1]][path[1]]:
            continue
        if label.attrs.hop_count >= MAX_HOPS:
            continue
        for neighbor in sorted(graph.adj[path[-1]]):
            if neighbor in path:
                continue
            extended = path + (neighbor,)
            bucket = labels[neighbor][extended[1]]
            for method in link_methods(graph, path[-1], neighbor):
                attrs = concat_attributes(
                    label.attrs, link_attributes(catalog[method]),
                )
                candidate = PathLabel(
                    attrs, additive_cost(attrs, w), extended,
                )
                if any(old.covers(candidate) for old in bucket):
                    continue
                bucket[:] = [
                    old for old in bucket if not candidate.covers(old)
                ]
                bucket.append(candidate)
                queue.append(candidate)
    return labels


def oracle_routes(
        graph: nx.MultiGraph,
        catalog: Catalog,
        w: MetricWeights,
        max_nodes: int = 12,
) -> dict[tuple[AgentId, AgentId], OracleRoute]:
    """Best route of every connected ordered SA pair.

    The witness is the optimal path with the fewest hops, then the lowest
    agent sequence; a pair is tied when optimal paths leave through more
    than one first hop.
    """
    if len(graph) > max_nodes:
        raise TooLarge(
            f'{len(graph)} SAs exceed the oracle limit of {max_nodes}'
        )
    routes = {}
    for source in sorted(graph.nodes):
        labels = path_labels(graph, source, catalog, w)
        for dest in sorted(labels):
            scored = [
                (score(label.attrs, w), label)
                for bucket in labels[dest].values()
                for label in bucket
            ]
            best_score = min(value for value, _ in scored)
            optimal = [label for value, label in scored if value == best_score]
            witness = min(
                optimal, key=lambda label: (label.attrs.hop_count, label.path),
            )
            attrs, methods = best_methods(graph, witness.path, catalog, w)
            first_hops = {label.path[1] for label in optimal}
            routes[source, dest] = OracleRoute(
                source, dest, attrs, witness.path, methods,
                len(first_hops) > 1,
            )
    return routes


def oracle_walk_hit(
        roster: Sequence[AgentId],
        p_f: float,
        origin: AgentId,
        target: AgentId,
        max_roster: int = 20,
) -> float:
    """Probability that a discovery walk from `origin` ever visits `target`.

    The walk is an absorbing chain over the roster plus a terminal state;
    hitting probabilities solve (P - I) h = -b on the transient states.
    """
    n = len(roster)
    if n > max_roster:
        raise TooLarge(f'roster of {n} exceeds {max_roster} agents')
    if origin not in roster or target not in roster:
        raise ValueError('origin and target must be on the roster')
    if target == origin:
        return 0.0
    index = {address: i for i, address in enumerate(roster)}
    # state n is the terminated walk
    P = np.zeros((n + 1, n + 1))
    for i in range(n):
        P[i, :n] = p_f / (n - 1)
        P[i, i] = 0.0
        P[i, n] = 1 - p_f
    P[n, n] = 1.0
    t = index[target]
    transient = np.array([i for i in range(n) if i != t], dtype=int)
    A = P[transient, :][:, transient] - np.eye(len(transient))
    b = -P[transient, t]
    h = np.ones(n + 1)
    h[transient] = np.linalg.solve(A, b)
    h[n] = 0.0
    first_hop = np.ones(n) / (n - 1)
    first_hop[index[origin]] = 0.0
    return float(first_hop @ h[:n])


def oracle_document(
        cfg: ScenarioConfig,
        max_nodes: int = 12,
        max_roster: int = 20,
) -> OracleDocument:
    catalog = {spec.id: spec.to_spec() for spec in cfg.catalog}
    weights = cfg.weights.to_weights()
    graph = build_link_graph(cfg)
    routes = oracle_routes(graph, catalog, weights, max_nodes)
    pairs = []
    for source, dest in permutations(sorted(graph.nodes), 2):
        route = routes.get((source, dest))
        if route is None:
            pairs.append(OraclePair(
                source=str(source), dest=str(dest), reachable=False,
            ))
            continue
        pairs.append(OraclePair(
            source=str(source),
            dest=str(dest),
            reachable=True,
            score=format_rational(score(route.attrs, weights)),
            bottleneck_kbps=format_rational(route.attrs.bottleneck_kbps),
            delay_ms=format_rational(route.attrs.total_delay_ms),
            penalty=format_rational(route.attrs.total_penalty),
            hop_count=route.attrs.hop_count,
            path=[str(address) for address in route.path],
            methods=list(route.methods),
            tied=route.tied,
        ))
    return OracleDocument(
        scenario=cfg.name,
        pairs=pairs,
        walk_hits=walk_hits(cfg, max_roster),
    )


def walk_hits(cfg: ScenarioConfig, max_roster: int = 20) -> list[WalkHit]:
    hits = []
    for platform in cfg.platforms:
        roster = sorted(
            AgentId(platform.id, agent.id) for agent in platform.agents
        )
        if len(roster) > max_roster:
            logger.info('platform %s too large for walk hits', platform.id)
            continue
        steg_agents = sorted(
            AgentId(platform.id, agent.id)
            for agent in platform.agents if agent.caps
        )
        for origin, target in permutations(steg_agents, 2):
            hits.append(WalkHit(
                platform=platform.id,
                origin=str(origin),
                target=str(target),
                p_f=cfg.walk.p_f,
                probability=oracle_walk_hit(
                    roster, cfg.walk.p_f, origin, target, max_roster,
                ),
            ))
    return hits


def verify(summary: Summary, oracle: OracleDocument) -> VerificationReport:
    """Compare the best route of every SA with the oracle's optimum.

    Next hops are compared only where the oracle found a single optimal
    first hop.
    """
    if summary.scenario != oracle.scenario:
        raise InputError(
            f'summary of {summary.scenario!r} checked against oracle of '
            f'{oracle.scenario!r}'
        )
    best = {
        (source, route.dest): route
        for source, tables in summary.final_tables.items()
        for route in tables.routes
        if route.best
    }
    mismatches = []
    checked = set()
    for pair in oracle.pairs:
        if pair.source not in summary.final_tables:
            continue
        key = pair.source, pair.dest
        checked.add(key)
        route = best.get(key)
        if pair.reachable and route is None:
            mismatches.append(Mismatch(
                source=pair.source, dest=pair.dest,
                kind='missing_route', expected=pair.score,
            ))
        elif not pair.reachable and route is not None:
            mismatches.append(Mismatch(
                source=pair.source, dest=pair.dest,
                kind='unexpected_route', actual=route.score,
            ))
        elif route is None:
            continue
        elif parse_rational(route.score) != parse_rational(pair.score):
            mismatches.append(Mismatch(
                source=pair.source, dest=pair.dest,
                kind='score', expected=pair.score, actual=route.score,
            ))
        elif not pair.tied and route.next_hop != pair.path[1]:
            mismatches.append(Mismatch(
                source=pair.source, dest=pair.dest,
                kind='next_hop', expected=pair.path[1],
                actual=route.next_hop,
            ))
    for key in sorted(best.keys() - checked):
        mismatches.append(Mismatch(
            source=key[0], dest=key[1],
            kind='unexpected_route', actual=best[key].score,
        ))
    mismatches.sort(key=lambda m: (m.source, m.dest, m.kind))
    return VerificationReport(
        scenario=oracle.scenario,
        pairs_checked=len(checked),
        mismatches=mismatches,
    )
