import json

import pytest

from conftest import SCENARIOS
from trustmas.cli import (
    EXIT_CONFIG,
    EXIT_INTERNAL,
    EXIT_MISMATCH,
    EXIT_OK,
    main,
    render_table
)
from trustmas.schemas import OracleDocument, VerificationReport

LINE = str(SCENARIOS / 'line_abc.json')


@pytest.fixture
def write_document(tmp_path):
    def _write_document(document, name='scenario.json'):
        path = tmp_path / name
        path.write_text(json.dumps(document))
        return str(path)
    return _write_document


@pytest.fixture
def line_outputs(tmp_path):
    out = tmp_path / 'line'
    assert main(['run', LINE, '--out', str(out)]) == EXIT_OK
    assert main(['oracle', LINE, '--out', str(out)]) == EXIT_OK
    return out


def test_render_table():
    expected = 'kind   count\n-----  -----\nhello  12'
    actual = render_table(('kind', 'count'), [('hello', 12)])

    assert expected == actual


def test_validate(write_document, minimal_document, capsys):
    path = write_document(minimal_document)

    assert main(['validate', path]) == EXIT_OK
    assert capsys.readouterr().out == 'OK\n'


def test_validate_fail_oa_caps(write_document, minimal_document, capsys):
    minimal_document['platforms'][0]['agents'][2]['caps'] = ['m1']
    path = write_document(minimal_document)

    assert main(['validate', path]) == EXIT_CONFIG
    out = capsys.readouterr().out
    assert 'platforms.0.agents.2' in out
    assert 'OA O1' in out


def test_validate_fail_missing_file(tmp_path, capsys):
    path = str(tmp_path / 'absent.json')

    assert main(['validate', path]) == EXIT_CONFIG
    assert '<file>' in capsys.readouterr().out


def test_validate_fail_not_json(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{"duration": ')

    assert main(['validate', str(path)]) == EXIT_CONFIG


def test_run_writes_summary_and_trace(tmp_path, capsys):
    out = tmp_path / 'out'

    assert main(['run', LINE, '--out', str(out)]) == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    summary = json.loads((out / 'summary.json').read_text())
    lines = (out / 'trace.jsonl').read_text().splitlines()

    assert printed['msg_counts'] == summary['msg_counts']
    assert printed['convergence_time'] == summary['convergence_time']
    assert summary['scenario'] == 'line_abc'
    assert lines
    assert {'t', 'actor', 'kind', 'detail'} == json.loads(lines[0]).keys()


def test_run_same_seed_same_bytes(tmp_path):
    first, second = tmp_path / 'first', tmp_path / 'second'

    assert main(['run', LINE, '--seed', '42', '--out', str(first)]) == 0
    assert main(['run', LINE, '--seed', '42', '--out', str(second)]) == 0
    for name in 'summary.json', 'trace.jsonl':
        assert (first / name).read_bytes() == (second / name).read_bytes()
    assert json.loads((first / 'summary.json').read_text())['seed'] == 42


def test_run_no_trace(tmp_path):
    out = tmp_path / 'out'

    assert main(['run', LINE, '--out', str(out), '--no-trace']) == EXIT_OK
    assert (out / 'summary.json').exists()
    assert not (out / 'trace.jsonl').exists()


def test_run_table_format(tmp_path, capsys):
    out = str(tmp_path / 'out')

    assert main(['run', LINE, '--out', out, '--format', 'table']) == 0
    printed = capsys.readouterr().out
    assert printed.startswith('convergence_time:')
    assert 'kind' in printed
    assert 'hello' in printed


def test_run_fail_negative_seed(tmp_path, capsys):
    out = tmp_path / 'out'

    assert main(['run', LINE, '--seed', '-1', '--out', str(out)]) == 2
    assert 'seed' in capsys.readouterr().err
    assert not (out / 'summary.json').exists()


def test_run_out_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv('TRUSTMAS_OUT', str(tmp_path))

    assert main(['run', LINE, '--no-trace']) == EXIT_OK
    assert (tmp_path / 'summary.json').exists()


def test_oracle(line_outputs):
    document = OracleDocument.model_validate_json(
        (line_outputs / 'oracle.json').read_text()
    )
    [forward] = [
        p for p in document.pairs
        if (p.source, p.dest) == ('P1/A', 'P1/C')
    ]

    assert forward.score == '380'
    assert document.walk_hits


def test_oracle_fail_too_large(write_document, minimal_document, tmp_path):
    minimal_document['platforms'][0]['agents'].extend(
        {'id': f'X{i}', 'role': 'SA', 'caps': ['m1']} for i in range(11)
    )
    path = write_document(minimal_document)
    out = str(tmp_path / 'out')

    assert main(['oracle', path, '--out', out]) == EXIT_INTERNAL


def test_verify(line_outputs):
    args = [
        'verify',
        str(line_outputs / 'summary.json'),
        str(line_outputs / 'oracle.json'),
        '--out', str(line_outputs),
    ]

    assert main(args) == EXIT_OK
    report = VerificationReport.model_validate_json(
        (line_outputs / 'report.json').read_text()
    )
    assert report.mismatches == []
    assert report.pairs_checked == 6


def test_verify_fail_perturbed_route(line_outputs):
    path = line_outputs / 'summary.json'
    summary = json.loads(path.read_text())
    for route in summary['final_tables']['P1/A']['routes']:
        if route['dest'] == 'P1/C' and route['best']:
            route['next_hop'] = 'P1/C'
            route['score'] = '500'
    path.write_text(json.dumps(summary))
    args = [
        'verify', str(path), str(line_outputs / 'oracle.json'),
        '--out', str(line_outputs),
    ]

    assert main(args) == EXIT_MISMATCH
    report = VerificationReport.model_validate_json(
        (line_outputs / 'report.json').read_text()
    )
    [mismatch] = report.mismatches
    assert (mismatch.source, mismatch.dest) == ('P1/A', 'P1/C')


def test_verify_fail_truncated_run(
        tmp_path,
        scenario_document,
        write_document,
):
    path = write_document(scenario_document('line_abc', duration=5))
    out = str(tmp_path / 'out')
    assert main(['run', path, '--out', out]) == EXIT_OK
    assert main(['oracle', path, '--out', out]) == EXIT_OK
    args = [
        'verify', f'{out}/summary.json', f'{out}/oracle.json', '--out', out,
    ]

    assert main(args) == EXIT_MISMATCH


def test_verify_fail_other_scenario(line_outputs, tmp_path):
    other = tmp_path / 'other'
    other_path = str(SCENARIOS / 'method_choice.json')
    assert main(['oracle', other_path, '--out', str(other)]) == EXIT_OK
    args = [
        'verify',
        str(line_outputs / 'summary.json'),
        str(other / 'oracle.json'),
        '--out', str(other),
    ]

    assert main(args) == EXIT_CONFIG


def test_verify_fail_unreadable_summary(tmp_path, line_outputs):
    args = [
        'verify',
        str(tmp_path / 'absent.json'),
        str(line_outputs / 'oracle.json'),
    ]

    assert main(args) == EXIT_CONFIG


@pytest.fixture
def ten_agent_platform(minimal_document, write_document):
    agents = [
        {'id': f'S{i}', 'role': 'SA', 'caps': ['m1']} for i in range(4)
    ]
    agents += [{'id': f'O{i}', 'role': 'OA'} for i in range(6)]
    minimal_document['platforms'][0]['agents'] = agents
    return write_document(minimal_document, 'ten.json')


def test_walkstats(ten_agent_platform, capsys):
    args = [
        'walkstats', ten_agent_platform, '--p-f', '0.5', '--format', 'json',
    ]

    assert main(args) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    [law] = report['laws']
    assert law['trials'] == 10000
    assert law['origin'] == 'P1/S0'
    assert law['mean_hops'] == pytest.approx(2.0, rel=0.05)
    assert law['expected_mean_hops'] == pytest.approx(2.0)
    assert all(b['deviation'] <= 0.02 for b in law['histogram'])
    assert len(law['hits']) == 3
    assert all(h['deviation'] <= 0.02 for h in law['hits'])


def test_walkstats_p_f_zero(ten_agent_platform, capsys):
    args = [
        'walkstats', ten_agent_platform, '--p-f', '0', '--trials', '500',
        '--format', 'json',
    ]

    assert main(args) == EXIT_OK
    [law] = json.loads(capsys.readouterr().out)['laws']
    assert [b['hops'] for b in law['histogram']] == [1]
    assert law['histogram'][0]['empirical'] == 1.0


def test_walkstats_table(ten_agent_platform, capsys):
    args = ['walkstats', ten_agent_platform, '--trials', '200']

    assert main(args) == EXIT_OK
    printed = capsys.readouterr().out
    for p_f in '0.25', '0.5', '0.75':
        assert f'p_f={p_f}' in printed
    assert 'deviation' in printed


def test_walkstats_fail_p_f_one(ten_agent_platform, capsys):
    args = ['walkstats', ten_agent_platform, '--p-f', '1.0']

    assert main(args) == EXIT_CONFIG
    assert '--p-f' in capsys.readouterr().err


def test_walkstats_fail_zero_trials(ten_agent_platform, capsys):
    args = ['walkstats', ten_agent_platform, '--trials', '0']

    with pytest.raises(SystemExit) as e:
        main(args)
    assert e.value.code == EXIT_CONFIG
    assert '--trials' in capsys.readouterr().err
