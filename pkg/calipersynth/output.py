"""Table files with a provenance header, their JSON mirrors and console summaries."""
import os
import json
import math
import hashlib
import logging
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from . import __version__


def config_hash(run_config: Dict[str, Any]) -> str:
    """First 12 hex digits of the SHA-256 of the canonical JSON run config."""
    canonical = json.dumps(run_config, sort_keys=True, default=str, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:12]


def provenance(run_config: Dict[str, Any]) -> str:
    return f"calipersynth {__version__} config={config_hash(run_config)}"


def format_value(value: Any) -> str:
    """Shortest round-trip text for floats, lower-case booleans, empty for missing."""
    if value is None:
        return ''
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _json_value(value: Any) -> Any:
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if value == '':
        return None
    return value


class TableWriter:
    """Writes result tables under one output directory."""

    def __init__(self, out_dir: str, run_config: Dict[str, Any], json_mirror: bool = False):
        self.out_dir = out_dir
        self.provenance = provenance(run_config)
        self.json_mirror = json_mirror
        os.makedirs(out_dir, exist_ok=True)

    def write(self, name: str, rows: List[Dict[str, Any]], columns: Optional[Sequence[str]] = None) -> List[str]:
        """Write <name>.csv (and <name>.json when mirroring); returns the paths written."""
        if columns is None:
            columns = list(rows[0]) if rows else []
        frame = pd.DataFrame([[format_value(row.get(c)) for c in columns] for row in rows], columns=list(columns))

        csv_path = os.path.join(self.out_dir, f"{name}.csv")
        with open(csv_path, 'w', encoding='utf-8', newline='') as f:
            f.write(f"# {self.provenance}\n")
            frame.to_csv(f, index=False, lineterminator='\n')
        paths = [csv_path]

        if self.json_mirror:
            json_path = os.path.join(self.out_dir, f"{name}.json")
            payload = {
                'provenance': self.provenance,
                'rows': [{c: _json_value(row.get(c)) for c in columns} for row in rows],
            }
            with open(json_path, 'w', encoding='utf-8') as f:
                json.dump(payload, f, indent=2)
                f.write('\n')
            paths.append(json_path)

        logging.debug(f"Wrote {len(rows)} rows to {csv_path}")
        return paths


def read_table(path: str) -> pd.DataFrame:
    """Read a table written by TableWriter, skipping the provenance line."""
    return pd.read_csv(path, comment='#', dtype=str, keep_default_na=False)


def _cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return format_value(value)


def print_table(console: Console, title: str, rows: List[Dict[str, Any]], columns: Optional[Sequence[str]] = None):
    if columns is None:
        columns = list(rows[0]) if rows else []
    table = Table(title=title)
    for column in columns:
        table.add_column(column, justify='left' if column in ('covariate', 'method', 'scenario', 'estimand') else 'right')
    for row in rows:
        table.add_row(*[_cell(row.get(c)) for c in columns])
    console.print(table)


def print_summary(console: Console, title: str, values: Dict[str, Any]):
    table = Table(title=title, show_header=False)
    table.add_column('field', style='bold')
    table.add_column('value', justify='right')
    for key, value in values.items():
        table.add_row(key, _cell(value) if value is not None else 'unavailable')
    console.print(table)
