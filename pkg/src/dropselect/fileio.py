"""Bit-exact persistence for tensors, scores, manifests and reports.

The tensor container is the contract shared with external exporters and
is documented byte-exactly in docs/formats.md: an 8-byte magic, version,
dtype code, rank, u64 dims, a little-endian float32 row-major payload,
and a trailing CRC-32 of the payload.  Write->read round-trips are
bit-identical on every platform.

JSON output is key-sorted and timestamp-free except for the run
manifest, whose timestamp honors SOURCE_DATE_EPOCH for reproducible
runs.
"""

from __future__ import annotations

import dataclasses
import datetime
import hashlib
import json
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .stats import CorrelationReport, DecileCurve

TENSOR_MAGIC = b"DSTENSR1"
TENSOR_VERSION = 1
DTYPE_FLOAT32 = 1
MAX_RANK = 8
MAX_DIM = 2**48

TOOL_VERSION = "0.1.0"


class TensorFormatError(ValueError):
    """Structurally invalid tensor file (magic, rank, truncation)."""


class TensorVersionError(TensorFormatError):
    """Valid container written by an unsupported format version."""


class TensorChecksumError(TensorFormatError):
    """Payload bytes do not match the stored CRC-32."""


class TensorDimOverflowError(TensorFormatError):
    """Declared rank or dimensions exceed the format limits."""


def write_tensor(path, data: np.ndarray) -> None:
    """Serialize a float32 array of any rank; see docs/formats.md."""
    arr = np.ascontiguousarray(data, dtype="<f4")
    if arr.ndim > MAX_RANK:
        raise TensorDimOverflowError(f"rank {arr.ndim} exceeds {MAX_RANK}")
    payload = arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<III", TENSOR_VERSION, DTYPE_FLOAT32, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 20 or raw[:8] != TENSOR_MAGIC:
        raise TensorFormatError(f"{path}: not a tensor file")
    version, dtype, rank = struct.unpack("<III", raw[8:20])
    if version != TENSOR_VERSION:
        raise TensorVersionError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_FLOAT32:
        raise TensorFormatError(f"{path}: unknown dtype code {dtype}")
    if rank > MAX_RANK:
        raise TensorDimOverflowError(f"{path}: rank {rank} exceeds {MAX_RANK}")
    head_end = 20 + 8 * rank
    if len(raw) < head_end + 4:
        raise TensorFormatError(f"{path}: truncated header")
    dims = struct.unpack(f"<{rank}Q", raw[20:head_end])
    if any(d > MAX_DIM for d in dims):
        raise TensorDimOverflowError(f"{path}: dimension exceeds {MAX_DIM}")
    count = 1
    for d in dims:
        count *= d
    expected = head_end + 4 * count + 4
    if len(raw) != expected:
        raise TensorFormatError(f"{path}: expected {expected} bytes, got {len(raw)}")
    payload = raw[head_end:-4]
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) != crc:
        raise TensorChecksumError(f"{path}: payload checksum mismatch")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)


# --- digests, timestamps, manifests --------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def timestamp_utc() -> str:
    """ISO timestamp; SOURCE_DATE_EPOCH overrides the wall clock so runs
    can be made byte-reproducible."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        dt = datetime.datetime.fromtimestamp(int(epoch), tz=datetime.timezone.utc)
    else:
        dt = datetime.datetime.now(tz=datetime.timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class RunManifest:
    command: str
    master_seed: int | None
    configs: dict = field(default_factory=dict)
    input_digests: dict = field(default_factory=dict)
    tool_version: str = TOOL_VERSION
    created_utc: str = field(default_factory=timestamp_utc)

    def add_input(self, path) -> None:
        self.input_digests[str(path)] = sha256_file(path)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: _jsonify(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    return obj


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonify(obj), fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_manifest(path, manifest: RunManifest) -> None:
    write_json(path, manifest.to_dict())


# --- report writers -------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_correlation_report(
    report: CorrelationReport, json_path=None, csv_path=None, manifest: RunManifest | None = None
) -> None:
    if csv_path is not None:
        rows = [
            (e.metric_id, e.kendall, e.distance, e.pearson)
            for e in report.entries
        ]
        write_csv(csv_path, ["metric", "kendall", "distance", "pearson"], rows)
    if json_path is not None:
        body = {
            "accuracy": report.accuracy,
            "metrics": [
                {
                    "metric": e.metric_id,
                    "kendall": e.kendall,
                    "distance": e.distance,
                    "pearson": e.pearson,
                    "n": e.n,
                    "degenerate": e.degenerate,
                }
                for e in report.entries
            ],
        }
        if manifest is not None:
            body["manifest"] = manifest.to_dict()
        write_json(json_path, body)


def write_decile_curve(
    curve: DecileCurve, json_path=None, csv_path=None, manifest: RunManifest | None = None
) -> None:
    if csv_path is not None:
        rows = list(
            zip(curve.fractions, curve.cumulative_accuracy, curve.mean_metric_per_decile)
        )
        write_csv(csv_path, ["fraction", "accuracy", "mean_metric"], rows)
    if json_path is not None:
        body = {
            "metric": curve.metric_id,
            "fractions": curve.fractions,
            "cumulative_accuracy": curve.cumulative_accuracy,
            "mean_metric_per_decile": curve.mean_metric_per_decile,
        }
        if manifest is not None:
            body["manifest"] = manifest.to_dict()
        write_json(json_path, body)


def write_retrain_trace(
    trace, json_path=None, csv_path=None, epochs_csv_path=None, manifest: RunManifest | None = None
) -> None:
    """Trace rows: one accuracy per (repetition, iteration), plus optional
    per-epoch validation curves for convergence plots."""
    if csv_path is not None:
        rows = [
            (rep_i, it.iteration, it.train_size, it.test_accuracy)
            for rep_i, rep in enumerate(trace.repetitions)
            for it in rep.iterations
        ]
        write_csv(csv_path, ["repetition", "iteration", "train_size", "accuracy"], rows)
    if epochs_csv_path is not None:
        rows = [
            (rep_i, it.iteration, epoch, acc)
            for rep_i, rep in enumerate(trace.repetitions)
            for it in rep.iterations
            for epoch, acc in enumerate(it.val_curve)
        ]
        write_csv(epochs_csv_path, ["repetition", "iteration", "epoch", "val_accuracy"], rows)
    if json_path is not None:
        body = {
            "policy": trace.policy_label,
            "median_accuracy": trace.median_curve(),
            "repetitions": [
                {
                    "iterations": [
                        {
                            "iteration": it.iteration,
                            "train_size": it.train_size,
                            "test_accuracy": it.test_accuracy,
                            "selected_ids": [int(i) for i in it.selected_ids],
                        }
                        for it in rep.iterations
                    ]
                }
                for rep in trace.repetitions
            ],
        }
        if manifest is not None:
            body["manifest"] = manifest.to_dict()
        write_json(json_path, body)


def write_report(result, json_path=None, csv_path=None, manifest=None, **kw) -> None:
    """Dispatch on the result type; see the specific writers."""
    if isinstance(result, CorrelationReport):
        write_correlation_report(result, json_path, csv_path, manifest)
    elif isinstance(result, DecileCurve):
        write_decile_curve(result, json_path, csv_path, manifest)
    else:
        write_retrain_trace(result, json_path, csv_path, manifest=manifest, **kw)
