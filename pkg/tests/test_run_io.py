"""Tests for manifests, summaries, traces and the sweep table."""
import json

import numpy as np
import pytest

from utils.run_io import (
    SCHEMA_VERSION,
    SWEEP_COLUMNS,
    RunManifest,
    SweepWriter,
    TraceWriter,
    file_checksum,
    read_json,
    read_sweep,
    read_trace,
    write_json,
)


def test_manifest_records_and_verifies_outputs(tmp_path):
    output = tmp_path / "result.txt"
    output.write_text("sign 0.99\n")
    source = tmp_path / "state.npz"
    source.write_bytes(b"\x00\x01")

    manifest = RunManifest.start("positivize", {"eta": 0.01}, input_path=str(source))
    manifest.add_output(str(output))
    manifest.finish(str(tmp_path / "manifest.json"))

    loaded = RunManifest.load(str(tmp_path / "manifest.json"))
    assert loaded.input_checksum == file_checksum(str(source))
    assert loaded.started_at.endswith("+00:00")
    assert loaded.finished_at is not None
    assert loaded.verify() == []

    output.write_text("sign 0.50\n")
    assert loaded.verify() == [str(output)]


def test_json_records_carry_schema_version(tmp_path):
    path = tmp_path / "summary.json"
    write_json(str(path), {"final": {"hard_avg_sign": np.float64(0.5)}, "angles": np.zeros(2)})
    record = read_json(str(path))
    assert record["schema_version"] == SCHEMA_VERSION
    assert record["final"]["hard_avg_sign"] == 0.5
    assert record["angles"] == [0.0, 0.0]

    path.write_text(json.dumps({"schema_version": 99}))
    with pytest.raises(ValueError):
        read_json(str(path))


def test_trace_writer_streams_lines(tmp_path):
    path = str(tmp_path / "trace.jsonl")
    with TraceWriter(path) as writer:
        writer({"iteration": 0, "soft_cost": -0.1})
        writer({"iteration": 1, "soft_cost": -0.2})
    with TraceWriter(path, append=True) as writer:
        writer({"iteration": 2, "soft_cost": -0.3})

    frame = read_trace(path)
    assert list(frame["iteration"]) == [0, 1, 2]


def test_sweep_writer_appends_rows(tmp_path):
    path = str(tmp_path / "sweep.csv")
    writer = SweepWriter(path)
    writer.append({"jr": 0.25, "depth": 1, "n": 8, "seed": 0, "status": "ok", "final_sign": 0.97, "final_imag": 0.01})
    writer.append({"jr": 0.75, "depth": 1, "n": 8, "seed": 0, "status": "failed", "error": "SolverError: no convergence"})

    frame = read_sweep(path)
    assert list(frame.columns) == SWEEP_COLUMNS
    assert list(frame["status"]) == ["ok", "failed"]
    assert frame.loc[0, "final_sign"] == pytest.approx(0.97)
    assert np.isnan(frame.loc[1, "final_sign"])
