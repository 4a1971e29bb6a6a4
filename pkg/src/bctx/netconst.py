"""URL and IP string constants found in code and string resources."""

from __future__ import annotations

import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Iterable, Optional

from .axml import arsc_strings
from .dex.parser import ConstString, DexFile, iter_code
from .errors import BctxError

log = logging.getLogger(__name__)

_URL_RE = re.compile(
    r"(?P<scheme>[hH][tT][tT][pP][sS]?)://"
    r"(?P<host>[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)*)"
    r"(?P<port>:[0-9]+)?"
    r"(?P<rest>[/?#]\S*)?"
)
_IP_RE = re.compile(r"([0-9]+)\.([0-9]+)\.([0-9]+)\.([0-9]+)")

DEX_CONST_STRING = "dex_const_string"
STRING_RESOURCE = "string_resource"


@dataclass(frozen=True)
class NetConstant:
    kind: str  # "url" or "ip"
    raw: str
    normalized: str
    origin: str

    @property
    def token(self) -> str:
        return f"net:{self.normalized}"


def classify(text: str) -> Optional[tuple[str, str]]:
    """Return ``(kind, normalized)`` if ``text`` is a URL or IPv4 literal."""
    m = _URL_RE.fullmatch(text)
    if m:
        out = m["scheme"].lower() + "://" + m["host"].lower() + (m["port"] or "") + (m["rest"] or "")
        return "url", out.rstrip("/")
    m = _IP_RE.fullmatch(text)
    if m:
        octets = [int(g) for g in m.groups()]
        if all(o <= 255 for o in octets):
            return "ip", ".".join(map(str, octets))
    return None


def normalize(text: str) -> str:
    hit = classify(text)
    if hit is None:
        raise ValueError(f"{text!r} is neither a URL nor an IPv4 address")
    return hit[1]


def _scan(texts: Iterable[str], origin: str) -> list[NetConstant]:
    out = []
    for t in texts:
        hit = classify(t)
        if hit is not None:
            out.append(NetConstant(hit[0], t, hit[1], origin))
    return out


def scan_dex_constants(dex: DexFile) -> list[NetConstant]:
    """Every const-string operand that parses as a URL or IP, in code order."""
    texts = []
    for _cls, method in iter_code(dex):
        for ins in method.code.instructions:
            if isinstance(ins, ConstString):
                s = dex.strings[ins.string_index]
                if s is not None:
                    texts.append(s)
    return _scan(texts, DEX_CONST_STRING)


def strings_xml_bodies(data: bytes) -> list[str]:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        log.warning("unparseable strings.xml: %s", exc)
        return []
    out = []
    for elem in root.iter():
        if elem.tag in ("string", "item"):
            out.append("".join(elem.itertext()).strip())
    return out


def scan_resources(bundle) -> list[NetConstant]:
    texts: list[str] = []
    for name, data in bundle.resource_entries:
        if name == "resources.arsc":
            try:
                texts += arsc_strings(data)
            except BctxError as exc:
                log.warning("%s: %s", name, exc)
        elif data.lstrip().startswith(b"<"):
            texts += strings_xml_bodies(data)
        else:
            # compiled xml under res/ carries no plain bodies
            log.debug("%s: skipping non-text resource", name)
    return _scan(texts, STRING_RESOURCE)
