"""Corpus manifests, the per-app feature cache and batch extraction.

Cache file layout (little-endian), one file per app::

    b"BCTX1" | u16 format | u32 len + JSON header (sorted keys)
    | u32 n_vectors | n * (u32 len + name, u8 dtype code, u32 length)
    | vector payloads in table order
    | u32 n_tokens | n * (u32 len + UTF-8 token)

dtype codes: 0 = float64, 1 = uint64.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import urllib.parse
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..catalog import load_catalog
from ..errors import BctxError, CacheFormatError, CorpusError
from ..pipeline import ExtractConfig, FeatureRecord, extract_apk

log = logging.getLogger(__name__)

CACHE_MAGIC = b"BCTX1"
CACHE_FORMAT = 1
CACHE_SUFFIX = ".bctx"
REPORT_NAME = "extract_report.json"
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<u8")}
_CODES = {np.dtype("float64"): 0, np.dtype("uint64"): 1}


@dataclass(frozen=True)
class CorpusEntry:
    app_id: str
    path: Path
    label: str


def load_manifest(path, check_paths: bool = True) -> list[CorpusEntry]:
    """Read a JSON-lines corpus manifest; relative paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    entries = []
    seen = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            app_id, apk, label = str(rec["id"]), rec["path"], str(rec["label"])
        except (ValueError, KeyError, TypeError) as exc:
            raise CorpusError(f"{path}:{lineno}: {exc}") from None
        if not label:
            raise CorpusError(f"{path}:{lineno}: empty label")
        if app_id in seen:
            raise CorpusError(f"{path}:{lineno}: duplicate id {app_id!r}")
        seen.add(app_id)
        p = Path(apk) if Path(apk).is_absolute() else base / apk
        if check_paths and not p.exists():
            raise CorpusError(f"{path}:{lineno}: {p} does not exist")
        entries.append(CorpusEntry(app_id, p, label))
    return entries


# -- record files ----------------------------------------------------------------

def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def record_to_bytes(rec: FeatureRecord) -> bytes:
    header = {
        "id": rec.app_id, "label": rec.label, "version": rec.version, "backend": rec.backend,
        "config_hash": rec.config_hash, "source_sha256": rec.source_sha256,
        "source_path": rec.source_path, "warnings": list(rec.warnings),
    }
    vectors = [("f_bin", np.asarray(rec.f_bin, dtype=np.float64)), ("f_lib", np.asarray(rec.f_lib, dtype=np.uint64))]
    out = bytearray(CACHE_MAGIC + struct.pack("<H", CACHE_FORMAT))
    out += _pack_str(json.dumps(header, sort_keys=True))
    out += struct.pack("<I", len(vectors))
    for name, arr in vectors:
        out += _pack_str(name) + struct.pack("<BI", _CODES[arr.dtype], arr.size)
    for _, arr in vectors:
        out += arr.astype(_DTYPES[_CODES[arr.dtype]]).tobytes()
    out += struct.pack("<I", len(rec.tokens))
    for t in rec.tokens:
        out += _pack_str(t)
    return bytes(out)


def record_from_bytes(data: bytes) -> FeatureRecord:
    if data[:len(CACHE_MAGIC)] != CACHE_MAGIC:
        raise CacheFormatError("not a feature cache file")
    pos = len(CACHE_MAGIC)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CacheFormatError("truncated feature cache file")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    def u32() -> int:
        return struct.unpack("<I", take(4))[0]

    def string() -> str:
        return take(u32()).decode("utf-8")

    fmt = struct.unpack("<H", take(2))[0]
    if fmt != CACHE_FORMAT:
        raise CacheFormatError(f"cache format {fmt} is not supported")
    header = json.loads(string())
    table = []
    for _ in range(u32()):
        name = string()
        code, length = struct.unpack("<BI", take(5))
        if code not in _DTYPES:
            raise CacheFormatError(f"unknown dtype code {code}")
        table.append((name, code, length))
    vectors = {}
    for name, code, length in table:
        vectors[name] = np.frombuffer(take(8 * length), dtype=_DTYPES[code]).astype(_DTYPES[code].newbyteorder("="))
    tokens = tuple(string() for _ in range(u32()))
    if pos != len(data):
        raise CacheFormatError("trailing bytes in feature cache file")
    return FeatureRecord(
        app_id=header["id"], label=header["label"], f_bin=vectors["f_bin"], tokens=tokens,
        f_lib=vectors["f_lib"], version=header["version"], backend=header["backend"],
        config_hash=header["config_hash"], source_sha256=header["source_sha256"],
        source_path=header["source_path"], warnings=tuple(header["warnings"]),
    )


def record_path(cache_dir, app_id: str) -> Path:
    return Path(cache_dir) / (urllib.parse.quote(app_id, safe="") + CACHE_SUFFIX)


def write_record(cache_dir, rec: FeatureRecord) -> Path:
    path = record_path(cache_dir, rec.app_id)
    tmp = path.with_suffix(".tmp")
    tmp.write_bytes(record_to_bytes(rec))
    tmp.replace(path)
    return path


def read_record(path) -> FeatureRecord:
    return record_from_bytes(Path(path).read_bytes())


def load_cache(cache_dir) -> list[FeatureRecord]:
    """Every record in ``cache_dir``, sorted by id."""
    paths = sorted(Path(cache_dir).glob("*" + CACHE_SUFFIX))
    if not paths:
        raise CacheFormatError(f"{cache_dir}: no feature records")
    records = [read_record(p) for p in paths]
    return sorted(records, key=lambda r: r.app_id)


# -- batch extraction --------------------------------------------------------------

@dataclass
class ExtractReport:
    written: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    errors: list = field(default_factory=list)  # {"id", "error"} dicts

    def to_dict(self) -> dict:
        return {"written": self.written, "skipped": self.skipped, "errors": self.errors}


def _is_fresh(path: Path, source_sha: str, config_hash: str, version: str) -> bool:
    if not path.exists():
        return False
    try:
        rec = read_record(path)
    except (CacheFormatError, ValueError, KeyError) as exc:
        log.info("%s: unreadable cache file (%s), re-extracting", path, exc)
        return False
    return rec.source_sha256 == source_sha and rec.config_hash == config_hash and rec.version == version


def _extract_one(args) -> tuple[str, Optional[bytes], Optional[str]]:
    entry, config = args
    try:
        rec = extract_apk(entry.path, entry.app_id, entry.label, config)
        return entry.app_id, record_to_bytes(rec), None
    except (BctxError, OSError, ValueError) as exc:
        return entry.app_id, None, f"{type(exc).__name__}: {exc}"


def extract_all(manifest, cache_dir, config: ExtractConfig = ExtractConfig(), jobs: int = 1) -> ExtractReport:
    """Extract every app in ``manifest`` into ``cache_dir``.

    Apps whose cache file already matches the APK content hash, the config
    hash and the extraction version are skipped. Failures are reported per app
    and never stop the batch.
    """
    entries = load_manifest(manifest) if not isinstance(manifest, list) else manifest
    entries = sorted(entries, key=lambda e: e.app_id)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    config_hash = config.config_hash(load_catalog(config.catalog_path))

    report = ExtractReport()
    todo = []
    for e in entries:
        try:
            sha = hashlib.sha256(e.path.read_bytes()).hexdigest()
        except OSError as exc:
            report.errors.append({"id": e.app_id, "error": f"{type(exc).__name__}: {exc}"})
            continue
        if _is_fresh(record_path(cache_dir, e.app_id), sha, config_hash, config.version):
            report.skipped.append(e.app_id)
        else:
            todo.append(e)

    work = [(e, config) for e in todo]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_extract_one, work))
    else:
        results = [_extract_one(w) for w in work]
    for app_id, payload, err in results:
        if err is not None:
            log.warning("%s: %s", app_id, err)
            report.errors.append({"id": app_id, "error": err})
            continue
        path = record_path(cache_dir, app_id)
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(payload)
        tmp.replace(path)
        report.written.append(app_id)
    report.errors.sort(key=lambda e: e["id"])
    (cache_dir / REPORT_NAME).write_text(json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n")
    return report


def dataset_from_cache(cache_dir, with_streams: bool = False):
    """Load a cache directory as a Dataset; optionally re-read dex streams from the source APKs."""
    from ..apk import concat_dex_bytes, open_apk
    from .dataset import Dataset

    records = load_cache(cache_dir)
    ds = Dataset.from_records(records)
    if with_streams:
        ds.streams = [concat_dex_bytes(open_apk(r.source_path)) for r in records]
    return ds
