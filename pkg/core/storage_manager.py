#!/usr/bin/env python3
"""
Storage Manager - Core Business Logic
Atomic report output (JSON, CSV, Excel) with integrity checksums
"""
import hashlib
import json
import logging
import math
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from core.errors import InputDataError
from utils.settings import load_app_config, merge_config

STORAGE_DEFAULTS = {
    'storage': {
        'output_directory': 'output',
        'json_indent': 2
    },
    'export': {
        'default_format': 'json',
        'supported_formats': ['json', 'csv', 'xlsx'],
        'float_format': '%.10g'
    }
}

REQUIRED_REPORT_KEYS = ('kind', 'run_config', 'checksum')


def to_jsonable(value):
    """Plain JSON types; NaN and infinities become null"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def calculate_checksum(data: Dict[str, Any]) -> str:
    """MD5 of the canonical JSON form, ignoring any existing checksum"""
    content = {k: v for k, v in data.items() if k != 'checksum'}
    data_str = json.dumps(to_jsonable(content), sort_keys=True)
    return hashlib.md5(data_str.encode('utf-8')).hexdigest()


class ReportStore:
    """Writes run outputs so that a failed run leaves nothing behind"""

    def __init__(self, output_dir=None, config: Optional[Dict[str, Any]] = None):
        self.config = merge_config(STORAGE_DEFAULTS, config if config is not None else load_app_config('storage_config'))
        self.output_dir = Path(output_dir or self.config['storage']['output_directory'])
        self._written: Optional[List[Path]] = None

    @property
    def supported_formats(self):
        return list(self.config['export']['supported_formats'])

    @contextmanager
    def transaction(self):
        """Every file written inside is removed again if the block raises"""
        self._written = []
        try:
            yield self
        except BaseException:
            for path in self._written:
                try:
                    path.unlink()
                except OSError as e:
                    logging.error(f"Could not remove partial output {path}: {e}")
            raise
        finally:
            self._written = None

    def _atomic_write(self, path: Path, writer: Callable[[Path], None]) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix='.tmp', dir=path.parent)
        os.close(fd)
        tmp_path = Path(tmp_name)
        try:
            writer(tmp_path)
            os.replace(tmp_path, path)
        except Exception as e:
            tmp_path.unlink(missing_ok=True)
            logging.error(f"Error writing {path}: {e}")
            raise
        if self._written is not None:
            self._written.append(path)
        logging.info(f"Saved {path}")
        return path

    def save_report(self, name: str, payload: Dict[str, Any]) -> Path:
        """JSON report with sorted keys and an embedded checksum"""
        report = to_jsonable(payload)
        report['checksum'] = calculate_checksum(report)
        text = json.dumps(report, sort_keys=True, indent=self.config['storage']['json_indent']) + "\n"
        return self._atomic_write(self.output_dir / f"{name}.json",
                                  lambda p: p.write_text(text, encoding='utf-8'))

    def save_text(self, name: str, text: str, suffix: str = 'txt') -> Path:
        return self._atomic_write(self.output_dir / f"{name}.{suffix}",
                                  lambda p: p.write_text(text.rstrip("\n") + "\n", encoding='utf-8'))

    def save_file(self, filename: str, writer: Callable[[Path], None]) -> Path:
        """Any other output file, written by 'writer' to a temporary path first"""
        return self._atomic_write(self.output_dir / filename, writer)

    def save_table(self, name: str, frame: pd.DataFrame, index: bool = True) -> Path:
        float_format = self.config['export']['float_format']
        return self._atomic_write(self.output_dir / f"{name}.csv",
                                  lambda p: frame.to_csv(p, index=index, float_format=float_format,
                                                         encoding='utf-8'))

    def save_workbook(self, name: str, sheets: Dict[str, pd.DataFrame]) -> Path:
        """One sheet per table; sheet names are cut to Excel's 31 characters"""
        def write(path):
            with pd.ExcelWriter(path, engine='openpyxl') as writer:
                for sheet, frame in sheets.items():
                    frame.to_excel(writer, sheet_name=sheet[:31])
        return self._atomic_write(self.output_dir / f"{name}.xlsx", write)

    def save_tables(self, name: str, sheets: Dict[str, pd.DataFrame], output_format: str) -> List[Path]:
        """Tables in the requested export format (json reports are written separately)"""
        if output_format not in self.supported_formats:
            raise InputDataError(f"Unsupported output format {output_format!r}; use one of {self.supported_formats}")
        if output_format == 'xlsx':
            return [self.save_workbook(name, sheets)]
        if output_format == 'csv':
            return [self.save_table(f"{name}_{sheet}", frame) for sheet, frame in sheets.items()]
        return []


def load_report(path) -> Dict[str, Any]:
    """Read a JSON report, checking structure and checksum"""
    path = Path(path)
    if not path.is_file():
        raise InputDataError(f"Report not found: {path}")
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise InputDataError(f"Report {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise InputDataError(f"Report {path} is not a JSON object")
    missing = [k for k in REQUIRED_REPORT_KEYS if k not in data]
    if missing:
        raise InputDataError(f"Report {path} lacks {', '.join(missing)}")
    if calculate_checksum(data) != data['checksum']:
        raise InputDataError(f"Report {path} failed its checksum; the file is corrupt or was edited")
    return data


def report_kind(data: Dict[str, Any], expected: str) -> Dict[str, Any]:
    if data.get('kind') != expected:
        raise InputDataError(f"Expected a {expected!r} report, got {data.get('kind')!r}")
    return data


