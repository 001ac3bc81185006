"""Single-writer storage for output tables, summaries and failure lists"""
import json
import logging
import os
import threading
from typing import Any, Dict, Iterable, List, Mapping, Sequence

from utils.tables import render_summary, render_table, timestamp_line

logger = logging.getLogger(__name__)


class RecordStore:
    """Writes every output file of one run under a single directory"""

    def __init__(self, out_dir: str = 'out'):
        self.out_dir = out_dir
        self.lock = threading.Lock()
        self.written: List[str] = []
        self.failures: List[Dict[str, Any]] = []

    def _path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def _write(self, name: str, body: str) -> str:
        """Write a file with the timestamp line in front"""
        path = self._path(name)
        with self.lock:
            os.makedirs(self.out_dir, exist_ok=True)
            with open(path, 'w', newline='') as f:
                f.write(timestamp_line() + '\n')
                f.write(body)
            self.written.append(path)
        logger.info(f"💾 wrote {path}")
        return path

    def write_table(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
        return self._write(name, render_table(header, rows))

    def write_summary(self, name: str, values: Mapping[str, Any]) -> str:
        return self._write(name, render_summary(values))

    def add_failure(self, contract: str, detail: str, **extra):
        with self.lock:
            self.failures.append({'contract': contract, 'detail': detail, **extra})

    def write_failures(self) -> str:
        """failures.json lists every failed contract; written even when empty"""
        path = self._path('failures.json')
        with self.lock:
            os.makedirs(self.out_dir, exist_ok=True)
            with open(path, 'w') as f:
                json.dump({'failures': self.failures}, f, indent=2, sort_keys=True, default=str)
            self.written.append(path)
        return path
