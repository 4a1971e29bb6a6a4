"""Curated third-party SDK catalog (tab-separated text)."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import BadCatalogLine

CATEGORIES = ("ads", "maps", "payments", "other")
_PREFIX_RE = re.compile(r"L[\w$]+(?:/[\w$]+)*[/;]?")


@dataclass(frozen=True)
class SdkEntry:
    library_id: str
    category: str
    prefixes: tuple[str, ...]

    def matches(self, type_descriptor: str) -> bool:
        return type_descriptor.startswith(self.prefixes)


@dataclass(frozen=True)
class SdkCatalog:
    entries: tuple[SdkEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def library_ids(self) -> list[str]:
        return [e.library_id for e in self.entries]

    def canonical_text(self) -> str:
        return "".join(f"{e.library_id}\t{e.category}\t{','.join(e.prefixes)}\n" for e in self.entries)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()


def parse_catalog(text: str) -> SdkCatalog:
    entries = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\r\n").split("\t")
        if len(parts) != 3:
            raise BadCatalogLine(lineno, f"expected 3 tab-separated fields, got {len(parts)}")
        lib, cat, prefix_field = (p.strip() for p in parts)
        if not lib:
            raise BadCatalogLine(lineno, "empty library id")
        if lib in seen:
            raise BadCatalogLine(lineno, f"duplicate library id {lib!r}")
        if cat not in CATEGORIES:
            raise BadCatalogLine(lineno, f"unknown category {cat!r}")
        prefixes = tuple(p.strip() for p in prefix_field.split(",") if p.strip())
        if not prefixes:
            raise BadCatalogLine(lineno, "no prefixes")
        for p in prefixes:
            if not _PREFIX_RE.fullmatch(p):
                raise BadCatalogLine(lineno, f"malformed type prefix {p!r}")
        seen.add(lib)
        entries.append(SdkEntry(lib, cat, prefixes))
    return SdkCatalog(tuple(entries))


def load_catalog(path: Optional[str | Path] = None) -> SdkCatalog:
    """Load a catalog file; with no path, the bundled default."""
    if path is None:
        text = resources.files("bctx.data").joinpath("sdk_catalog.tsv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_catalog(text)
