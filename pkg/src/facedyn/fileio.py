"""Binary and text file formats used by the pipeline.

Descriptor file: u32 video_id, u32 N, u32 D, then N*D little-endian
float32 values (row-major, one row per segment).

Heatmap file: u32 video_id, u32 D, u32 M, then D*M amplitude values,
then D*M phase values, little-endian float32.

Both formats round-trip bit-exactly.
"""

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np

from facedyn import TRAIT_COLUMNS
from facedyn.spectral import SpectralHeatmap

METRIC_COLUMNS = TRAIT_COLUMNS + ("Avg",)


def _read_exact(fh, n, path):
    data = fh.read(n)
    if len(data) != n:
        raise ValueError(f"{path}: truncated file (wanted {n} bytes, got {len(data)})")
    return data


def save_descriptors(path, video_id, matrix):
    """matrix: [N, D] float32, one row per segment."""
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise ValueError(f"descriptor matrix must be 2-D, got shape {m.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", video_id, m.shape[0], m.shape[1]))
        fh.write(m.tobytes())


def load_descriptors(path):
    with open(path, "rb") as fh:
        video_id, n, d = struct.unpack("<III", _read_exact(fh, 12, path))
        payload = _read_exact(fh, 4 * n * d, path)
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after descriptor payload")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(n, d)
    return video_id, matrix


def save_heatmap(path, heatmap):
    amp = np.ascontiguousarray(heatmap.amplitude, dtype="<f4")
    phase = np.ascontiguousarray(heatmap.phase, dtype="<f4")
    if amp.shape != phase.shape or amp.ndim != 2:
        raise ValueError(
            f"heatmap maps must share a 2-D shape, got {amp.shape} and {phase.shape}"
        )
    d, m = amp.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", heatmap.video_id, d, m))
        fh.write(amp.tobytes())
        fh.write(phase.tobytes())


def load_heatmap(path):
    with open(path, "rb") as fh:
        video_id, d, m = struct.unpack("<III", _read_exact(fh, 12, path))
        amp = np.frombuffer(_read_exact(fh, 4 * d * m, path), dtype="<f4").reshape(d, m)
        phase = np.frombuffer(_read_exact(fh, 4 * d * m, path), dtype="<f4").reshape(d, m)
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after heatmap payload")
    return SpectralHeatmap(amp.copy(), phase.copy(), video_id)


def heatmap_csv(heatmap):
    """Human-readable dump: one row per channel, amplitude then phase blocks."""
    out = io.StringIO()
    writer = csv.writer(out)
    d, m = heatmap.amplitude.shape
    writer.writerow(["video_id", heatmap.video_id, "D", d, "M", m])
    writer.writerow(["block", "channel"] + [f"k{k}" for k in range(m)])
    for name, block in (("amplitude", heatmap.amplitude), ("phase", heatmap.phase)):
        for c in range(d):
            writer.writerow([name, c] + [repr(float(v)) for v in block[c]])
    return out.getvalue()


def save_labels(path, videos):
    """CSV of video_id, identity, and the five trait labels."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "identity"] + list(TRAIT_COLUMNS))
        for v in videos:
            writer.writerow([v.video_id, v.identity] + [repr(float(x)) for x in v.traits])


def load_labels(path):
    """-> {video_id: (identity, traits[5])}."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["video_id", "identity"]:
            raise ValueError(f"{path}: not a label file (header {header[:2]})")
        for row in reader:
            out[int(row[0])] = (int(row[1]), np.array([float(x) for x in row[2:7]]))
    return out


def write_metrics_csv(path, rows):
    """rows: list of (label, metrics dict with the six METRIC_COLUMNS keys)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["configuration"] + list(METRIC_COLUMNS))
        for label, metrics in rows:
            writer.writerow([label] + [f"{metrics[c]:.6f}" for c in METRIC_COLUMNS])


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for row in reader:
            rows.append((row[0], {c: float(v) for c, v in zip(header[1:], row[1:])}))
    return rows


def write_manifest(run_dir, stage, payload):
    """JSON manifest recording how a stage was run."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / f"{stage}_manifest.json"
    with open(path, "w") as fh:
        json.dump({"stage": stage, **payload}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_manifest(run_dir, stage):
    with open(Path(run_dir) / f"{stage}_manifest.json") as fh:
        return json.load(fh)
