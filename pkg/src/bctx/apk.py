"""APK (ZIP) ingestion.

The central directory is read with :mod:`zipfile`; entry payloads are pulled
straight from the local headers so that a CRC mismatch can be reported as a
warning instead of aborting the read.
"""

from __future__ import annotations

import io
import logging
import os
import re
import struct
import zipfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

from .errors import MissingDex, MissingManifest, NotAZip, NotSupported

log = logging.getLogger(__name__)

MANIFEST_NAME = "AndroidManifest.xml"
ARSC_NAME = "resources.arsc"
MIN_DEX_SIZE = 0x70
_ZIP32_LIMIT = 0xFFFFFFFF

_DEX_RE = re.compile(r"^classes(\d*)\.dex$")
_STRINGS_RE = re.compile(r"^res/values[^/]*/strings\.xml$")


@dataclass(frozen=True)
class ApkBundle:
    source_path: str
    dex_entries: tuple[tuple[str, bytes], ...]
    manifest_bytes: bytes
    resource_entries: tuple[tuple[str, bytes], ...] = ()
    corrupt_entries: tuple[str, ...] = ()
    warnings: tuple[str, ...] = field(default=())

    def dex_names(self) -> list[str]:
        return [name for name, _ in self.dex_entries]


def dex_order_key(name: str) -> tuple[int, str]:
    m = _DEX_RE.match(name)
    if m is None:
        raise ValueError(f"{name} is not a classes*.dex entry")
    return (int(m.group(1)) if m.group(1) else 1, name)


def _read_entry(raw: bytes, info: zipfile.ZipInfo) -> bytes:
    off = info.header_offset
    if raw[off:off + 4] != b"PK\x03\x04":
        raise zipfile.BadZipFile(f"{info.filename}: bad local header signature")
    name_len, extra_len = struct.unpack_from("<HH", raw, off + 26)
    start = off + 30 + name_len + extra_len
    payload = raw[start:start + info.compress_size]
    if len(payload) != info.compress_size:
        raise zipfile.BadZipFile(f"{info.filename}: payload truncated")
    if info.compress_type == zipfile.ZIP_STORED:
        return payload
    if info.compress_type == zipfile.ZIP_DEFLATED:
        return zlib.decompressobj(-15).decompress(payload)
    raise NotSupported(f"{info.filename}: compression method {info.compress_type}")


def open_apk(path: Union[str, os.PathLike]) -> ApkBundle:
    """Open an APK and pull out its dex files, manifest and string resources."""
    raw = Path(path).read_bytes()
    if len(raw) > _ZIP32_LIMIT:
        raise NotSupported(f"{path}: archives over 4 GiB are not supported")
    try:
        zf = zipfile.ZipFile(io.BytesIO(raw))
    except zipfile.BadZipFile as exc:
        raise NotAZip(f"{path}: {exc}") from None

    warnings: list[str] = []
    wanted: dict[str, zipfile.ZipInfo] = {}
    with zf:
        for info in zf.infolist():
            name = info.filename
            if not (_DEX_RE.match(name) or name in (MANIFEST_NAME, ARSC_NAME) or _STRINGS_RE.match(name)):
                continue
            if info.file_size > _ZIP32_LIMIT or info.compress_size > _ZIP32_LIMIT:
                raise NotSupported(f"{name}: zip64 entries are not supported")
            if name in wanted:
                warnings.append(f"duplicate entry {name}; last one wins")
            wanted[name] = info

    contents: dict[str, bytes] = {}
    corrupt = []
    for name, info in wanted.items():
        if info.flag_bits & 0x1:
            warnings.append(f"{name}: encrypted entry skipped")
            continue
        try:
            data = _read_entry(raw, info)
        except (zipfile.BadZipFile, zlib.error, NotSupported) as exc:
            warnings.append(f"{name}: unreadable ({exc})")
            continue
        if zlib.crc32(data) != info.CRC:
            log.warning("%s: CRC mismatch", name)
            warnings.append(f"{name}: CRC mismatch")
            corrupt.append(name)
        contents[name] = data

    dex = sorted(((n, b) for n, b in contents.items() if _DEX_RE.match(n)), key=lambda e: dex_order_key(e[0]))
    if not dex:
        raise MissingDex(f"{path}: no classes*.dex entries")
    manifest = contents.get(MANIFEST_NAME)
    if not manifest:
        raise MissingManifest(f"{path}: no {MANIFEST_NAME}")
    for name, data in dex:
        if len(data) < MIN_DEX_SIZE:
            warnings.append(f"{name}: only {len(data)} bytes, shorter than a dex header")

    resources = tuple(sorted((n, b) for n, b in contents.items() if n == ARSC_NAME or _STRINGS_RE.match(n)))
    return ApkBundle(
        source_path=str(path),
        dex_entries=tuple(dex),
        manifest_bytes=manifest,
        resource_entries=resources,
        corrupt_entries=tuple(sorted(corrupt)),
        warnings=tuple(warnings),
    )


def concat_dex_bytes(bundle: ApkBundle) -> bytes:
    """All dex payloads joined in multi-dex order."""
    if not bundle.dex_entries:
        raise MissingDex(f"{bundle.source_path}: no dex entries")
    return b"".join(data for _, data in bundle.dex_entries)


def write_apk(path: Union[str, os.PathLike], entries: Iterable[tuple[str, bytes]], compress: bool = True) -> None:
    """Write ``entries`` as a ZIP archive, in the given order.

    Fixture helper; no signing block is produced.
    """
    method = zipfile.ZIP_DEFLATED if compress else zipfile.ZIP_STORED
    with zipfile.ZipFile(path, "w", compression=method) as zf:
        for name, data in entries:
            info = zipfile.ZipInfo(name, date_time=(2020, 1, 1, 0, 0, 0))
            info.compress_type = method
            zf.writestr(info, data)
