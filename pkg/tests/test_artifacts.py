import pandas as pd
import pytest

from inflect.diagnostics.metrics import DiagnosticsLog
from inflect.errors import InvalidInputError
from inflect.report.artifacts import (find_reports, read_json, read_metrics_csv, read_probe_csv, run_header,
                                      write_json, write_metrics_csv)
from inflect.utility.seeding import STREAMS, derive_seed, stream_seeds


def test_streams_are_distinct_and_stable():
    seeds = stream_seeds(42)
    assert set(seeds) == set(STREAMS)
    assert len(set(seeds.values())) == len(STREAMS)
    assert seeds == stream_seeds(42)
    assert derive_seed(42, "data") != derive_seed(43, "data")
    assert all(0 <= seed < 2 ** 31 for seed in seeds.values())


def test_run_header_names_conventions():
    header = run_header(7, regime="OVER")
    assert header["root_seed"] == 7
    assert header["entropy_unit"] == "nats"
    assert header["stream_seeds"]["lora"] == derive_seed(7, "lora")
    assert header["regime"] == "OVER"


def test_json_is_sorted_and_atomic(tmp_path):
    path = write_json({"b": 1, "a": [1, 2]}, tmp_path / "nested" / "record.json")
    assert path.read_text().splitlines()[1] == '  "a": ['
    assert read_json(path) == {"a": [1, 2], "b": 1}
    assert not list(path.parent.glob("*.tmp"))


def test_metrics_csv_layout(tmp_path):
    log = DiagnosticsLog(2)
    log.record(1, [1.0, 0.5], [0.2, 0.1], [0.0, 0.3])
    path = write_metrics_csv(log, tmp_path / "metrics.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "step,layer,metric,value"
    assert len(lines) == 1 + 2 * 3
    assert read_metrics_csv(path).means("attention_entropy").tolist() == [1.0, 0.5]


def test_wrong_headers_are_rejected(tmp_path):
    path = tmp_path / "other.csv"
    pd.DataFrame({"a": [1], "b": [2]}).to_csv(path, index=False)
    with pytest.raises(InvalidInputError):
        read_metrics_csv(path)
    with pytest.raises(InvalidInputError):
        read_probe_csv(path)


def test_find_reports(tmp_path):
    write_json({}, tmp_path / "b" / "report.json")
    write_json({}, tmp_path / "a" / "report.json")
    assert [p.parent.name for p in find_reports(tmp_path)] == ["a", "b"]
    with pytest.raises(FileNotFoundError):
        find_reports(tmp_path / "missing")
