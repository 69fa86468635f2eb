import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import Sequence

from pydantic import BaseModel, ValidationError

from .config import Settings
from .core import AgentId, ConfigError, InputError, TooLarge, TrustmasError
from .oracle import oracle_document, oracle_walk_hit, verify
from .schemas import (
    HitRate,
    HopBin,
    OracleDocument,
    ScenarioConfig,
    Summary,
    WalkLaw,
    WalkStatsReport
)
from .sim import load_scenario, rng_stream, run
from .walk import WalkConfig, mean_walk_length, walk_length_pmf, walk_trail

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_CONFIG = 2
EXIT_INTERNAL = 3


def read_scenario(path: Path) -> ScenarioConfig:
    try:
        document = path.read_text()
    except OSError as e:
        raise ConfigError([('<file>', f'cannot read {path}: {e}')]) from e
    return load_scenario(document)


def positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f'{value} is not positive')
    return number


def read_document[T: BaseModel](path: Path, model: type[T]) -> T:
    try:
        return model.model_validate_json(path.read_text())
    except (OSError, ValidationError) as e:
        raise InputError(f'{path}: {e}') from e


def write_json(path: Path, document: BaseModel) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(document.model_dump_json(indent=2) + '\n')


def render_table(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    cells = [list(map(str, headers))] + [list(map(str, row)) for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = [
        '  '.join(cell.ljust(width) for cell, width in zip(row, widths))
        for row in cells
    ]
    lines.insert(1, '  '.join('-' * width for width in widths))
    return '\n'.join(line.rstrip() for line in lines)


def walk_statistics(
        cfg: ScenarioConfig,
        p_fs: Sequence[float],
        trials: int,
        max_roster: int = 20,
) -> WalkStatsReport:
    """Monte Carlo walk lengths and hit rates next to their exact laws.

    Each platform of at least two agents contributes one origin, its first
    SA (or first agent when it has no SA).
    """
    laws = []
    for platform in cfg.platforms:
        roster = sorted(
            AgentId(platform.id, agent.id) for agent in platform.agents
        )
        if len(roster) < 2:
            continue
        steg_agents = sorted(
            AgentId(platform.id, agent.id)
            for agent in platform.agents if agent.caps
        )
        origin = steg_agents[0] if steg_agents else roster[0]
        targets = [address for address in steg_agents if address != origin]
        for p_f in p_fs:
            walk = WalkConfig(p_f=p_f)
            rng = rng_stream(cfg.seed, origin, f'walkstats:{p_f}')
            lengths = Counter()
            visits = Counter()
            for i in range(trials):
                trail = walk_trail(origin, roster, walk, rng, f'trial#{i}')
                lengths[len(trail)] += 1
                visits.update(set(trail))
            histogram = []
            for k in range(1, max(lengths) + 1):
                empirical = lengths[k] / trials
                analytic = walk_length_pmf(p_f, k)
                histogram.append(HopBin(
                    hops=k,
                    empirical=empirical,
                    analytic=analytic,
                    deviation=abs(empirical - analytic),
                ))
            hits = []
            if len(roster) <= max_roster:
                for target in targets:
                    empirical = visits[target] / trials
                    exact = oracle_walk_hit(
                        roster, p_f, origin, target, max_roster,
                    )
                    hits.append(HitRate(
                        target=str(target),
                        empirical=empirical,
                        exact=exact,
                        deviation=abs(empirical - exact),
                    ))
            laws.append(WalkLaw(
                p_f=p_f,
                platform=platform.id,
                origin=str(origin),
                trials=trials,
                mean_hops=sum(k * n for k, n in lengths.items()) / trials,
                expected_mean_hops=mean_walk_length(p_f),
                histogram=histogram,
                hits=hits,
            ))
    return WalkStatsReport(scenario=cfg.name, laws=laws)


def cmd_validate(args: argparse.Namespace, settings: Settings) -> int:
    cfg = read_scenario(args.scenario)
    logger.info('scenario %s is valid', cfg.name)
    print('OK')
    return EXIT_OK


def cmd_run(args: argparse.Namespace, settings: Settings) -> int:
    cfg = read_scenario(args.scenario)
    if args.seed is not None:
        cfg = load_scenario(cfg.model_dump() | {'seed': args.seed})
    trace, summary = run(cfg)
    out = Path(args.out or settings.out)
    write_json(out / 'summary.json', summary)
    if args.trace:
        (out / 'trace.jsonl').write_text(trace.to_jsonl())
    logger.info('%s: %d trace records written to %s', cfg.name,
                len(trace), out)
    if args.format == 'table':
        print(f'convergence_time: {summary.convergence_time}')
        print(render_table(
            ('kind', 'count'), list(summary.msg_counts.items()),
        ))
    else:
        print(json.dumps({
            'convergence_time': summary.convergence_time,
            'msg_counts': summary.msg_counts,
        }))
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace, settings: Settings) -> int:
    cfg = read_scenario(args.scenario)
    document = oracle_document(
        cfg, settings.oracle_max_nodes, settings.walk_hit_max_roster,
    )
    out = Path(args.out or settings.out)
    write_json(out / 'oracle.json', document)
    print(document.model_dump_json())
    return EXIT_OK


def cmd_verify(args: argparse.Namespace, settings: Settings) -> int:
    summary = read_document(args.summary, Summary)
    oracle = read_document(args.oracle, OracleDocument)
    report = verify(summary, oracle)
    out = Path(args.out or settings.out)
    write_json(out / 'report.json', report)
    print(report.model_dump_json())
    if report.mismatches:
        logger.warning('%d mismatches', len(report.mismatches))
        return EXIT_MISMATCH
    return EXIT_OK


def cmd_walkstats(args: argparse.Namespace, settings: Settings) -> int:
    cfg = read_scenario(args.scenario)
    for p_f in args.p_f:
        if not 0 <= p_f < 1:
            raise ConfigError([('--p-f', f'{p_f} is outside [0, 1)')])
    report = walk_statistics(
        cfg, args.p_f, args.trials, settings.walk_hit_max_roster,
    )
    if args.format == 'json':
        print(report.model_dump_json())
        return EXIT_OK
    for law in report.laws:
        print(
            f'{law.platform} p_f={law.p_f} origin={law.origin} '
            f'mean_hops={law.mean_hops:.4f} '
            f'expected={law.expected_mean_hops:.4f}'
        )
        print(render_table(
            ('hops', 'empirical', 'analytic', 'deviation'),
            [
                (b.hops, f'{b.empirical:.4f}', f'{b.analytic:.4f}',
                 f'{b.deviation:.4f}')
                for b in law.histogram
            ],
        ))
        if law.hits:
            print(render_table(
                ('target', 'empirical', 'exact', 'deviation'),
                [
                    (h.target, f'{h.empirical:.4f}', f'{h.exact:.4f}',
                     f'{h.deviation:.4f}')
                    for h in law.hits
                ],
            ))
        print()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='trustmas',
        description='Simulate and verify steganographic routing.',
    )
    parser.add_argument(
        '-v', '--verbose', action='count', default=0,
        help='log more (repeat for debug output)',
    )
    commands = parser.add_subparsers(dest='command', required=True)

    validate = commands.add_parser('validate', help='check a scenario file')
    validate.add_argument('scenario', type=Path)
    validate.set_defaults(handler=cmd_validate)

    run_parser = commands.add_parser('run', help='simulate a scenario')
    run_parser.add_argument('scenario', type=Path)
    run_parser.add_argument('--seed', type=int, default=None)
    run_parser.add_argument('--out', default=None)
    run_parser.add_argument(
        '--trace', action=argparse.BooleanOptionalAction, default=True,
    )
    run_parser.add_argument(
        '--format', choices=('json', 'table'), default='json',
    )
    run_parser.set_defaults(handler=cmd_run)

    oracle = commands.add_parser('oracle', help='compute exact best routes')
    oracle.add_argument('scenario', type=Path)
    oracle.add_argument('--out', default=None)
    oracle.set_defaults(handler=cmd_oracle)

    verify_parser = commands.add_parser(
        'verify', help='compare a run summary with its oracle',
    )
    verify_parser.add_argument('summary', type=Path)
    verify_parser.add_argument('oracle', type=Path)
    verify_parser.add_argument('--out', default=None)
    verify_parser.set_defaults(handler=cmd_verify)

    walkstats = commands.add_parser(
        'walkstats', help='random walk statistics against the exact law',
    )
    walkstats.add_argument('scenario', type=Path)
    walkstats.add_argument('--trials', type=positive_int, default=10000)
    walkstats.add_argument(
        '--p-f', type=float, nargs='+', default=[0.25, 0.5, 0.75],
    )
    walkstats.add_argument(
        '--format', choices=('json', 'table'), default='table',
    )
    walkstats.set_defaults(handler=cmd_walkstats)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    settings = Settings()
    levels = {0: settings.log_level.upper(), 1: 'INFO'}
    level = levels.get(args.verbose, 'DEBUG')
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format='%(levelname)s %(name)s: %(message)s',
    )
    try:
        return args.handler(args, settings)
    except ConfigError as e:
        stream = sys.stdout if args.command == 'validate' else sys.stderr
        for path, message in e.findings:
            print(f'{path}: {message}', file=stream)
        return EXIT_CONFIG
    except InputError as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_CONFIG
    except TooLarge as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_INTERNAL
    except TrustmasError:
        logger.exception('run failed')
        return EXIT_INTERNAL
    except Exception:
        logger.exception('internal error')
        return EXIT_INTERNAL
