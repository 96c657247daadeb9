"""
Run artifacts: manifests with checksums, JSON summaries, the JSON-lines
trace and the incremental sweep table.
"""
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime
from importlib import metadata

import numpy as np
import pandas as pd
import pytz

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SWEEP_COLUMNS = [
    "schema_version", "jr", "depth", "n", "seed", "status",
    "final_sign", "final_imag", "entropy", "truncation_error", "iterations", "error",
]


def file_checksum(path):
    """SHA-256 hex digest of a file"""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def utc_now():
    return datetime.now(pytz.utc).isoformat()


def code_version():
    try:
        return metadata.version("wavefunction-positivizer")
    except metadata.PackageNotFoundError:
        return "unknown"


def _plain(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_json(path, record):
    """
    Write a record as JSON, tagging it with the schema version

    Args:
        path (str): Destination
        record (dict): Values to write
    """
    with open(path, "w") as f:
        json.dump({"schema_version": SCHEMA_VERSION, **record}, f, indent=2, default=_plain)
    logger.info(f"Wrote {path}")


def read_json(path):
    with open(path) as f:
        record = json.load(f)
    if record.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"Unsupported schema version {record.get('schema_version')} in {path}")
    return record


@dataclass
class RunManifest:
    """Provenance of one command: config, input checksum, timestamps and output checksums"""
    command: str
    config: dict
    input_checksum: str = None
    code_version: str = field(default_factory=code_version)
    started_at: str = field(default_factory=utc_now)
    finished_at: str = None
    outputs: dict = field(default_factory=dict)

    @classmethod
    def start(cls, command, config, input_path=None):
        return cls(
            command=command,
            config=config,
            input_checksum=file_checksum(input_path) if input_path else None,
        )

    def add_output(self, path):
        self.outputs[os.path.abspath(path)] = file_checksum(path)

    def finish(self, path):
        """Stamp the end time and write the manifest to `path`"""
        self.finished_at = utc_now()
        write_json(path, asdict(self))

    @classmethod
    def load(cls, path):
        record = read_json(path)
        record.pop("schema_version")
        return cls(**record)

    def verify(self):
        """
        Compare every recorded output with the file on disk

        Returns:
            list: Paths that are missing or whose checksum changed
        """
        stale = []
        for path, checksum in self.outputs.items():
            if not os.path.exists(path) or file_checksum(path) != checksum:
                stale.append(path)
        return stale


class TraceWriter:
    """Streams one JSON object per training iteration to a .jsonl file"""

    def __init__(self, path, append=False):
        self.path = path
        self._file = open(path, "a" if append else "w")

    def __call__(self, record):
        self._file.write(json.dumps(record, default=_plain) + "\n")
        self._file.flush()

    def close(self):
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_trace(path):
    """
    Load a trace file

    Returns:
        pd.DataFrame: One row per iteration
    """
    return pd.read_json(path, lines=True)


def truncate_trace(path, before_iteration, every=1):
    """
    Drop trace records at or after `before_iteration`, keeping earlier lines verbatim

    Args:
        path (str): Trace file; a missing file is left alone
        before_iteration (int): First iteration to remove
        every (int): Also drop earlier records whose iteration is not a multiple of this
    """
    if not os.path.exists(path):
        return
    with open(path) as f:
        lines = [line for line in f if line.strip()]
    iterations = [json.loads(line)["iteration"] for line in lines]
    kept = [line for line, it in zip(lines, iterations) if it < before_iteration and it % every == 0]
    with open(path, "w") as f:
        f.writelines(kept)
    if len(kept) < len(lines):
        logger.info(f"Dropped {len(lines) - len(kept)} record(s) of {path} before resuming at iteration {before_iteration}")


class SweepWriter:
    """Appends sweep rows to a CSV as they complete"""

    def __init__(self, path):
        self.path = path
        if os.path.exists(path):
            os.remove(path)

    def append(self, row):
        frame = pd.DataFrame([{"schema_version": SCHEMA_VERSION, **row}], columns=SWEEP_COLUMNS)
        frame.to_csv(self.path, mode="a", header=not os.path.exists(self.path), index=False)


def read_sweep(path):
    frame = pd.read_csv(path)
    versions = set(frame["schema_version"].unique())
    if versions - {SCHEMA_VERSION}:
        raise ValueError(f"Unsupported sweep schema version(s) {sorted(versions)} in {path}")
    return frame
