"""File formats: features, labels, boundaries, manifests, configs, checkpoints.

All writes go through a temporary file in the target directory followed by
an atomic rename.
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .decode import BoundarySet, Segment
from .neural import AlignerNetwork, ParameterStore
from .training import TrainConfig, Utterance

FEATURE_MAGIC = b"FAF1"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIIII")
CHECKPOINT_VERSION = 1
BOUNDARY_HEADER = "phoneme\tstart_frame\tend_frame\tstart_sec\tend_sec"


class FormatError(ValueError):
    pass


def atomic_write(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- features


def write_feature_file(path, frames: np.ndarray, frame_shift: float = 0.010) -> None:
    frames = np.asarray(frames)
    if frames.ndim != 2:
        raise ValueError("feature matrix must be 2-D (T, D)")
    n_frames, dim = frames.shape
    header = _HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, n_frames, dim, round(frame_shift * 1e6))
    payload = np.ascontiguousarray(frames, dtype="<f4").tobytes()
    atomic_write(path, header + payload)


def read_feature_file(path) -> tuple[np.ndarray, float]:
    """Return ``(frames as float32 (T, D), frame_shift in seconds)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} of {_HEADER.size} bytes)")
    magic, version, n_frames, dim, shift_us = _HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0")
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    expected = n_frames * dim * 4
    actual = len(raw) - _HEADER.size
    if actual != expected:
        raise FormatError(
            f"{path}: payload at byte {_HEADER.size} has {actual} bytes, expected {expected}"
        )
    if n_frames < 1 or dim < 1:
        raise FormatError(f"{path}: empty feature matrix ({n_frames}x{dim})")
    frames = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n_frames, dim)
    if not np.all(np.isfinite(frames)):
        raise FormatError(f"{path}: non-finite feature values")
    return frames.astype(np.float32), shift_us / 1e6


# ---------------------------------------------------------------- labels / boundaries


def read_labels(path, vocab: Optional[Iterable[str]] = None) -> list[str]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if len(lines) != 1:
        raise FormatError(f"{path}: expected one line of phoneme tokens, found {len(lines)}")
    tokens = lines[0].split()
    if vocab is not None:
        known = set(vocab)
        for i, tok in enumerate(tokens):
            if tok not in known:
                raise FormatError(f"{path}:1: unknown phoneme {tok!r} (token {i + 1})")
    return tokens


def write_labels(path, phonemes: Sequence[str]) -> None:
    atomic_write(path, " ".join(phonemes) + "\n")


def format_boundaries(bset: BoundarySet) -> str:
    rows = [BOUNDARY_HEADER]
    fs = bset.frame_shift
    for s in bset.segments:
        rows.append(f"{s.phoneme}\t{s.start_frame}\t{s.end_frame}\t{s.start_sec(fs):.6f}\t{s.end_sec(fs):.6f}")
    return "\n".join(rows) + "\n"


def write_boundaries(path, bset: BoundarySet) -> None:
    atomic_write(path, format_boundaries(bset))


def read_boundaries(path, frame_shift: float = 0.010) -> BoundarySet:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != BOUNDARY_HEADER:
        raise FormatError(f"{path}:1: missing boundary header")
    segs = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 5:
            raise FormatError(f"{path}:{lineno}: expected 5 columns, got {len(cols)}")
        try:
            segs.append(Segment(cols[0], int(cols[1]), int(cols[2])))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad frame index") from None
    try:
        return BoundarySet(tuple(segs), frame_shift)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


# ---------------------------------------------------------------- manifest


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    feature_path: Path
    label_path: Path
    ref_path: Optional[Path] = None


def read_manifest(path, check_files: bool = True) -> list[ManifestEntry]:
    path = Path(path)
    base = path.parent
    entries, seen = [], set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) not in (3, 4):
            raise FormatError(f"{path}:{lineno}: expected 3 or 4 tab-separated columns")
        uid = cols[0]
        if uid in seen:
            raise FormatError(f"{path}:{lineno}: duplicate utterance id {uid!r}")
        seen.add(uid)
        files = [base / c for c in cols[1:]]
        if check_files:
            for f in files:
                if not f.exists():
                    raise FileNotFoundError(f"{path}:{lineno}: missing file {f}")
        entries.append(ManifestEntry(uid, files[0], files[1], files[2] if len(files) == 3 else None))
    return entries


def write_manifest(path, entries: Sequence[ManifestEntry]) -> None:
    base = Path(path).parent.resolve()
    lines = []
    for e in entries:
        cols = [e.utt_id, e.feature_path, e.label_path] + ([e.ref_path] if e.ref_path else [])
        lines.append("\t".join(
            c if isinstance(c, str) else os.path.relpath(Path(c).resolve(), base) for c in cols))
    atomic_write(path, "\n".join(lines) + "\n")


def load_utterances(entries: Sequence[ManifestEntry], vocab=None) -> list[Utterance]:
    utts = []
    for e in entries:
        frames, shift = read_feature_file(e.feature_path)
        phonemes = read_labels(e.label_path, vocab)
        ref = read_boundaries(e.ref_path, shift) if e.ref_path else None
        utts.append(Utterance(e.utt_id, frames.astype(np.float64), phonemes, shift, ref))
    return utts


# ---------------------------------------------------------------- config


def _parse_value(key: str, raw: str, kind):
    if kind in (bool, "bool"):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"{key}: expected true/false, got {raw!r}")
    if kind in (int, "int"):
        return int(raw)
    return float(raw)


def parse_config(text: str, base: Optional[TrainConfig] = None, source: str = "<config>") -> TrainConfig:
    """Parse ``key = value`` lines on top of ``base`` (defaults when omitted)."""
    types = TrainConfig.field_types()
    values = asdict(base or TrainConfig())
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"{source}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _parse_value(key, raw, types[key])
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from None
    return TrainConfig(**values)


def read_config(path, base: Optional[TrainConfig] = None) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), base, source=str(path))


def format_config(config: TrainConfig) -> str:
    out = []
    for key, value in asdict(config).items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        out.append(f"{key} = {value}")
    return "\n".join(out) + "\n"


def config_hash(config: TrainConfig) -> str:
    return hashlib.sha256(format_config(config).encode()).hexdigest()[:16]


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, store: ParameterStore, net: AlignerNetwork, config: TrainConfig) -> None:
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "step": store.step,
        "config": asdict(config),
        "config_hash": config_hash(config),
        "vocab": list(net.vocab),
        "n_features": net.n_features,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for name in sorted(store.params):
        arrays[f"param/{name}"] = store.params[name]
        arrays[f"m/{name}"] = store.m[name]
        arrays[f"v/{name}"] = store.v[name]
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write(path, buf.getvalue())


def load_checkpoint(path) -> tuple[AlignerNetwork, ParameterStore, TrainConfig]:
    with np.load(path) as data:
        meta = json.loads(data["meta"].tobytes().decode())
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {meta.get('format_version')}")
        config = TrainConfig(**meta["config"])
        if config_hash(config) != meta["config_hash"]:
            raise FormatError(f"{path}: config hash mismatch")
        names = [k[len("param/"):] for k in data.files if k.startswith("param/")]
        store = ParameterStore({n: data[f"param/{n}"] for n in names})
        store.m = {n: data[f"m/{n}"].copy() for n in names}
        store.v = {n: data[f"v/{n}"].copy() for n in names}
        store.step = int(meta["step"])
    net = AlignerNetwork(
        n_features=meta["n_features"],
        vocab=meta["vocab"],
        states_per_phoneme=config.states_per_phoneme,
        embed_dim=config.embed_dim,
        hidden_channels=config.hidden_channels,
        layers=config.layers,
    )
    return net, store, config
