"""
On-disk artifacts: metrics and probe CSVs, JSON records.

CSV headers are fixed (``step,layer,metric,value`` and
``layer,kind,accuracy,seed``). JSON records use sorted keys and two-space
indentation, and every writer goes through a temporary file so a failed run
never leaves a half-written artifact behind.
"""
import json
import logging
import os
from pathlib import Path
from typing import Dict, Optional

import pandas as pd

from inflect import __version__
from inflect.diagnostics.metrics import METRICS_COLUMNS, DiagnosticsLog
from inflect.diagnostics.probes import PROBE_COLUMNS, ProbeReport
from inflect.errors import InvalidInputError
from inflect.utility.seeding import stream_seeds

logger = logging.getLogger(__name__)

ENTROPY_UNIT = "nats"
LORA_CONVENTION = "W_eff = W + (alpha / rank) * B @ A"


def run_header(root_seed: int, **extra) -> Dict[str, object]:
    header = {
        "version": __version__,
        "root_seed": int(root_seed),
        "stream_seeds": stream_seeds(root_seed),
        "entropy_unit": ENTROPY_UNIT,
        "lora_multiplier": LORA_CONVENTION,
    }
    header.update(extra)
    return header


def _atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_name(path.name + ".tmp")
    with open(tmp_path, "w", newline="\n") as f:
        f.write(text)
    os.replace(tmp_path, path)
    return path


def write_json(record: dict, path) -> Path:
    return _atomic_write_text(path, json.dumps(record, sort_keys=True, indent=2, allow_nan=True) + "\n")


def read_json(path) -> dict:
    with open(path) as f:
        return json.load(f)


def write_frame(frame: pd.DataFrame, path) -> Path:
    return _atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))


def write_metrics_csv(log: DiagnosticsLog, path) -> Path:
    return write_frame(log.to_frame(), path)


def read_metrics_csv(path) -> DiagnosticsLog:
    frame = pd.read_csv(path)
    if list(frame.columns) != METRICS_COLUMNS:
        raise InvalidInputError(f"{path} does not start with header {','.join(METRICS_COLUMNS)}")
    return DiagnosticsLog.from_frame(frame)


def write_probe_csv(report: ProbeReport, path) -> Path:
    return write_frame(report.to_frame(), path)


def read_probe_csv(path) -> pd.DataFrame:
    frame = pd.read_csv(path)
    if list(frame.columns) != PROBE_COLUMNS:
        raise InvalidInputError(f"{path} does not start with header {','.join(PROBE_COLUMNS)}")
    return frame


def find_reports(root, name: str = "report.json") -> list:
    """Every ``name`` below ``root``, sorted by path."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"report directory not found: {root}")
    return sorted(root.rglob(name))


def load_reports(root, name: str = "report.json") -> list:
    reports = [read_json(path) for path in find_reports(root, name)]
    if not reports:
        raise InvalidInputError(f"no {name} files found under {root}")
    return reports


def ensure_out_dir(out_dir: Optional[str]) -> Path:
    path = Path(out_dir or ".")
    path.mkdir(parents=True, exist_ok=True)
    return path
