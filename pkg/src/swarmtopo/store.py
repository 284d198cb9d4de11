"""On-disk dataset store: manifest, point-cloud blobs, diagram files, checkpoints.

Layout under a dataset root::

    manifest.json            schema_version, generation config, per-sequence records
    clouds/seq_00000.f32     little-endian float32, frames concatenated, shape (N_obs, M_i, 3)
    diagrams/seq_00000.pd    diagram codec below
    vectorizers/split0.json  fitted structure elements + fingerprint
    vectors/split0.npy       (N, N_obs, d) float64 vectors under that vectorizer
    crocker/seq_00000.npy    flattened crocker stacks (uint16)
    runs/<variant>/split<s>_rate<r>/checkpoint.bin, history.csv
    reports/                 scores CSV and summary tables

Diagram file (all little-endian)::

    b"SWPD" | u16 version | u8 max_dim | u32 n_frames
    per frame, per dim 0..max_dim: u32 n_pairs, n_pairs x (f64 birth, f64 death)

Infinite deaths are written as -1.0 (a real death is never negative).

Checkpoint file::

    b"SWCK" | u16 version | u32 header_len | header (UTF-8 JSON)
    float64 parameters, then ADAM first moments, then second moments,
    each in the order and shapes listed in the header.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .ph.diagram import PersistenceDiagram

SCHEMA_VERSION = 1
DIAGRAM_MAGIC = b"SWPD"
DIAGRAM_VERSION = 1
CHECKPOINT_MAGIC = b"SWCK"
CHECKPOINT_VERSION = 1
INF_SENTINEL = -1.0


class StoreError(RuntimeError):
    """Raised for missing, corrupt or inconsistent store content."""


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_atomic(path, data: bytes) -> None:
    """Write to a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json_atomic(path, obj) -> None:
    write_atomic(path, (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode())


def config_hash(cfg: dict) -> str:
    return sha256_bytes(json.dumps(cfg, sort_keys=True).encode())


# ---------------------------------------------------------------- clouds

def encode_clouds(clouds) -> bytes:
    return b"".join(np.ascontiguousarray(c, dtype="<f4").tobytes() for c in clouds)


def decode_clouds(data: bytes, frame_sizes) -> list:
    flat = np.frombuffer(data, dtype="<f4")
    if flat.size != 3 * int(np.sum(frame_sizes)):
        raise StoreError(f"cloud blob holds {flat.size} floats, expected {3 * int(np.sum(frame_sizes))}")
    out, pos = [], 0
    for m in frame_sizes:
        out.append(flat[pos:pos + 3 * m].reshape(m, 3).astype(np.float64))
        pos += 3 * m
    return out


# ---------------------------------------------------------------- diagrams

def encode_diagrams(frames) -> bytes:
    """``frames[t]`` is the list of diagrams (dims 0..max_dim) of observation t."""
    max_dim = len(frames[0]) - 1 if frames else 0
    buf = io.BytesIO()
    buf.write(DIAGRAM_MAGIC)
    buf.write(struct.pack("<HBI", DIAGRAM_VERSION, max_dim, len(frames)))
    for frame in frames:
        if len(frame) != max_dim + 1:
            raise ValueError("every frame needs one diagram per dimension")
        for k, d in enumerate(frame):
            if d.dim != k:
                raise ValueError(f"frame diagrams must be ordered by dimension, got {d.dim} at {k}")
            pairs = np.where(np.isinf(d.pairs), INF_SENTINEL, d.pairs).astype("<f8")
            buf.write(struct.pack("<I", len(pairs)))
            buf.write(pairs.tobytes())
    return buf.getvalue()


def decode_diagrams(data: bytes) -> list:
    if data[:4] != DIAGRAM_MAGIC:
        raise StoreError("not a diagram file")
    version, max_dim, n_frames = struct.unpack_from("<HBI", data, 4)
    if version != DIAGRAM_VERSION:
        raise StoreError(f"unsupported diagram file version {version}")
    pos = 4 + struct.calcsize("<HBI")
    frames = []
    for _ in range(n_frames):
        frame = []
        for k in range(max_dim + 1):
            if pos + 4 > len(data):
                raise StoreError("diagram file is truncated")
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            if pos + 16 * n > len(data):
                raise StoreError("diagram file is truncated")
            pairs = np.frombuffer(data, dtype="<f8", count=2 * n, offset=pos).reshape(n, 2).astype(np.float64)
            pos += 16 * n
            pairs[:, 1] = np.where(pairs[:, 1] == INF_SENTINEL, np.inf, pairs[:, 1])
            frame.append(PersistenceDiagram(k, pairs))
        frames.append(frame)
    if pos != len(data):
        raise StoreError("trailing bytes in diagram file")
    return frames


# ---------------------------------------------------------------- checkpoints

def encode_checkpoint(header: dict, params: dict, m=None, v=None, step: int = 0) -> bytes:
    names = list(params)
    shapes = [list(np.shape(params[n])) for n in names]
    m = m if m is not None else [np.zeros_like(params[n]) for n in names]
    v = v if v is not None else [np.zeros_like(params[n]) for n in names]
    head = dict(header, params=[{"name": n, "shape": s} for n, s in zip(names, shapes)], adam_step=step)
    blob = json.dumps(head, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                    for group in ([params[n] for n in names], m, v) for a in group)
    return CHECKPOINT_MAGIC + struct.pack("<HI", CHECKPOINT_VERSION, len(blob)) + blob + body


def decode_checkpoint(data: bytes):
    """Returns (header, params, m, v) with ``params`` a name -> array dict."""
    if data[:4] != CHECKPOINT_MAGIC:
        raise StoreError("not a checkpoint file")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != CHECKPOINT_VERSION:
        raise StoreError(f"unsupported checkpoint version {version}")
    pos = 4 + struct.calcsize("<HI")
    header = json.loads(data[pos:pos + hlen].decode())
    pos += hlen
    groups = []
    for _ in range(3):
        arrays = []
        for entry in header["params"]:
            n = int(np.prod(entry["shape"], dtype=np.int64))
            if pos + 8 * n > len(data):
                raise StoreError("checkpoint is truncated")
            arrays.append(np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(entry["shape"]).copy())
            pos += 8 * n
        groups.append(arrays)
    if pos != len(data):
        raise StoreError("checkpoint length does not match its header")
    params = {entry["name"]: a for entry, a in zip(header["params"], groups[0])}
    return header, params, groups[1], groups[2]


# ---------------------------------------------------------------- csv

def write_rows_csv(path, rows, columns=None) -> None:
    rows = list(rows)
    columns = columns or (list(rows[0]) if rows else [])
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    write_atomic(path, buf.getvalue().encode())


def read_rows_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- dataset

class Dataset:
    """Read access to a dataset root plus manifest updates."""

    def __init__(self, root):
        self.root = Path(root)
        path = self.root / "manifest.json"
        if not path.exists():
            raise StoreError(f"no dataset at {self.root} (manifest.json missing; run `generate` first)")
        self.manifest = json.loads(path.read_text())
        if self.manifest.get("schema_version") != SCHEMA_VERSION:
            raise StoreError(f"unsupported schema version {self.manifest.get('schema_version')}")

    @property
    def sequences(self) -> list:
        return self.manifest["sequences"]

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def model(self) -> str:
        return self.manifest["model"]

    def save_manifest(self) -> None:
        write_json_atomic(self.root / "manifest.json", self.manifest)

    def cloud_path(self, i: int) -> Path:
        return self.root / self.sequences[i]["file"]

    def diagram_path(self, i: int) -> Path:
        return self.root / "diagrams" / f"seq_{i:05d}.pd"

    def load_clouds(self, i: int, verify: bool = True) -> list:
        rec = self.sequences[i]
        data = self.cloud_path(i).read_bytes()
        if verify and (len(data) != rec["length"] or sha256_bytes(data) != rec["sha256"]):
            raise StoreError(f"cloud blob of sequence {i} does not match the manifest")
        return decode_clouds(data, rec["frame_sizes"])

    def verify(self) -> list:
        """Ids of sequences whose blob is missing or corrupt."""
        bad = []
        for i, rec in enumerate(self.sequences):
            p = self.cloud_path(i)
            if not p.exists() or p.stat().st_size != rec["length"] or sha256_file(p) != rec["sha256"]:
                bad.append(i)
        return bad

    def times(self, i: int) -> np.ndarray:
        return np.asarray(self.sequences[i]["times"], dtype=np.float64)

    def targets(self) -> np.ndarray:
        return np.array([s["targets"] for s in self.sequences], dtype=np.float64)

    # diagrams
    @property
    def diagram_info(self) -> dict:
        return self.manifest.get("diagrams") or {}

    def has_diagrams(self, i: int) -> bool:
        rec = self.diagram_info.get("files", {}).get(str(i))
        p = self.diagram_path(i)
        return bool(rec) and p.exists() and p.stat().st_size == rec["length"] and sha256_file(p) == rec["sha256"]

    def load_diagrams(self, i: int) -> list:
        rec = self.diagram_info.get("files", {}).get(str(i))
        if rec is None:
            raise StoreError(f"no diagrams for sequence {i}; run `precompute` first")
        data = self.diagram_path(i).read_bytes()
        if sha256_bytes(data) != rec["sha256"]:
            raise StoreError(f"diagram file of sequence {i} does not match the manifest")
        return decode_diagrams(data)

    def require_diagrams(self) -> None:
        files = self.diagram_info.get("files", {})
        missing = [i for i in range(len(self)) if str(i) not in files]
        if missing:
            raise StoreError(f"diagrams missing for {len(missing)} sequence(s) (first: {missing[0]}); "
                             f"run `swarmtopo precompute --data {self.root}`")

    # vectorizers
    def vectorizer_path(self, split: int) -> Path:
        return self.root / "vectorizers" / f"split{split}.json"

    def vectors_path(self, split: int) -> Path:
        return self.root / "vectors" / f"split{split}.npy"

    def run_dir(self, variant: str, split: int, rate: float) -> Path:
        return self.root / "runs" / variant / f"split{split}_rate{rate:.2f}"
