import json
import os

import numpy as np
import pytest

from configs.status import ContractStatus, contract_result, determine_status
from utils.record_store import RecordStore
from utils.seeding import derive_seed, make_rng, spawn_seeds
from utils.tables import (
    HEADER_PREFIX,
    format_value,
    read_table,
    render_summary,
    render_table,
    strip_timestamp,
)


@pytest.mark.parametrize('statuses,expected', [
    ([], (ContractStatus.PASSED, 0)),
    ([ContractStatus.PASSED, ContractStatus.SKIPPED], (ContractStatus.PASSED, 0)),
    ([ContractStatus.PASSED, ContractStatus.FAILED], (ContractStatus.FAILED, 1)),
    ([ContractStatus.FAILED, ContractStatus.ERROR], (ContractStatus.ERROR, 2)),
])
def test_determine_status(statuses, expected):
    assert determine_status([{'status': s} for s in statuses]) == expected


def test_contract_result():
    assert contract_result('a', True, 'ok') == {'name': 'a', 'status': 'PASSED', 'detail': 'ok'}
    assert contract_result('a', False, 'no')['status'] == ContractStatus.FAILED


@pytest.mark.parametrize('value,text', [
    (0.1, '0.10000000000000001'),
    (np.float64(0.5), '0.5'),
    (True, 'true'),
    (np.bool_(False), 'false'),
    (np.int64(7), '7'),
    (float('nan'), 'nan'),
    (float('-inf'), '-inf'),
    ((1, 2.5), '1;2.5'),
    ({'b': 1, 'a': 2}, 'a=2;b=1'),
    ('centered_pstar', 'centered_pstar'),
])
def test_format_value(value, text):
    assert format_value(value) == text


def test_rendered_table_reads_back(tmp_path):
    path = tmp_path / 'table.csv'
    path.write_text(HEADER_PREFIX + 'now\n' + render_table(['n', 'radius'], [(100, 0.25), (200, 0.125)]))
    header, rows = read_table(str(path))
    assert header == ['n', 'radius']
    assert rows == [['100', '0.25'], ['200', '0.125']]


def test_summary_keeps_insertion_order():
    assert render_summary({'beta': -0.5, 'passed': True}) == "beta = -0.5\npassed = true\n"


def test_strip_timestamp():
    assert strip_timestamp(HEADER_PREFIX + '2026\nx = 1\n') == 'x = 1\n'
    assert strip_timestamp('x = 1\n') == 'x = 1\n'


def test_derive_seed():
    seed = derive_seed(20040101, 'parametric_interior/n=100', 3)
    assert seed == derive_seed(20040101, 'parametric_interior/n=100', 3)
    assert 0 <= seed < 1 << 64
    assert seed != derive_seed(20040101, 'parametric_interior/n=100', 4)
    assert seed != derive_seed(20040102, 'parametric_interior/n=100', 3)
    assert len(set(spawn_seeds(seed, 5))) == 5


def test_make_rng_is_reproducible():
    assert np.array_equal(make_rng(42).normal(size=4), make_rng(42).normal(size=4))
    assert np.array_equal(make_rng(-1).uniform(size=2), make_rng((1 << 64) - 1).uniform(size=2))


def test_record_store(tmp_path):
    store = RecordStore(str(tmp_path / 'out'))
    table = store.write_table('rate.csv', ['n'], [(100,)])
    summary = store.write_summary('rate.txt', {'beta': 0.5})
    failures = store.write_failures()
    assert store.written == [table, summary, failures]
    with open(table) as f:
        assert f.readline().startswith(HEADER_PREFIX)
    with open(failures) as f:
        assert json.load(f) == {'failures': []}

    store.add_failure('rate_exponent', 'beta too large', status=ContractStatus.FAILED)
    store.write_failures()
    with open(os.path.join(store.out_dir, 'failures.json')) as f:
        assert json.load(f)['failures'] == [{'contract': 'rate_exponent', 'detail': 'beta too large',
                                             'status': 'FAILED'}]
