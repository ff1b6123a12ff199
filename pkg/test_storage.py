#!/usr/bin/env python3
"""
Test Storage Manager
Atomic report output, checksums and table export
"""
import json

import numpy as np
import pandas as pd
import pytest

from core.errors import InputDataError
from core.storage_manager import ReportStore, calculate_checksum, load_report, report_kind, to_jsonable


@pytest.fixture
def store(tmp_path):
    return ReportStore(tmp_path / "out", config={})


def payload(**extra):
    return {'kind': 'fit', 'run_config': {'seed': 7}, 'values': [1.5, 2.5], **extra}


def test_to_jsonable_converts_numpy_and_non_finite():
    data = to_jsonable({'a': np.float64(1.5), 'b': np.int64(3), 'c': np.array([1.0, np.nan]),
                        'd': float('inf'), 'e': np.bool_(True), 1: (2, 3)})
    assert data == {'a': 1.5, 'b': 3, 'c': [1.0, None], 'd': None, 'e': True, '1': [2, 3]}
    assert type(data['b']) is int


def test_checksum_ignores_existing_checksum_and_key_order():
    first = {'kind': 'fit', 'x': 1, 'checksum': 'abc'}
    second = {'x': 1, 'kind': 'fit'}
    assert calculate_checksum(first) == calculate_checksum(second)
    assert calculate_checksum(second) != calculate_checksum({'x': 2, 'kind': 'fit'})


def test_report_round_trip(store):
    path = store.save_report('fit_basic', payload(gradient_norm=float('nan')))
    assert path.name == 'fit_basic.json'
    data = load_report(path)
    assert data['gradient_norm'] is None
    assert data['values'] == [1.5, 2.5]
    assert report_kind(data, 'fit') is data
    with pytest.raises(InputDataError, match="Expected a 'diagnostics' report"):
        report_kind(data, 'diagnostics')


def test_reports_are_byte_identical(tmp_path):
    first = ReportStore(tmp_path / "a", config={}).save_report('r', payload())
    second = ReportStore(tmp_path / "b", config={}).save_report('r', payload())
    assert first.read_bytes() == second.read_bytes()


def test_corrupted_report_is_rejected(store):
    path = store.save_report('fit_basic', payload())
    data = json.loads(path.read_text())
    data['values'][0] = 9.0
    path.write_text(json.dumps(data))
    with pytest.raises(InputDataError, match="checksum"):
        load_report(path)


def test_malformed_reports(tmp_path):
    with pytest.raises(InputDataError, match="not found"):
        load_report(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(InputDataError, match="not valid JSON"):
        load_report(bad)
    bad.write_text("[1, 2]")
    with pytest.raises(InputDataError, match="not a JSON object"):
        load_report(bad)
    bad.write_text(json.dumps({'kind': 'fit'}))
    with pytest.raises(InputDataError, match="lacks run_config, checksum"):
        load_report(bad)


def test_transaction_removes_partial_output(store):
    with pytest.raises(RuntimeError):
        with store.transaction():
            store.save_report('fit_basic', payload())
            store.save_text('fit_basic', "summary")
            raise RuntimeError("fit failed")
    assert not list(store.output_dir.iterdir())

    with store.transaction():
        store.save_text('kept', "summary\n\n")
    assert (store.output_dir / "kept.txt").read_text() == "summary\n"


def test_tables_in_each_format(store):
    frame = pd.DataFrame({'coefficient': [1.0 / 3.0, 2.0]}, index=pd.Index(['A', 'B'], name='name'))
    sheets = {'estimates': frame}

    assert store.save_tables('fit', sheets, 'json') == []
    [csv_path] = store.save_tables('fit', sheets, 'csv')
    assert csv_path.name == 'fit_estimates.csv'
    loaded = pd.read_csv(csv_path, index_col='name')
    assert loaded.loc['A', 'coefficient'] == pytest.approx(1.0 / 3.0, rel=1e-9)

    [xlsx_path] = store.save_tables('fit', {'a_sheet_name_longer_than_thirty_one': frame}, 'xlsx')
    workbook = pd.read_excel(xlsx_path, sheet_name=None, index_col=0)
    assert list(workbook) == ['a_sheet_name_longer_than_thirty']
    with pytest.raises(InputDataError, match="Unsupported output format"):
        store.save_tables('fit', sheets, 'parquet')
