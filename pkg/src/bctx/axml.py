"""Android binary XML (AXML) and resource-table string pools.

``parse_manifest`` accepts either the compiled chunk format found inside
APKs or a plain-text manifest, and reduces both to the same ``ManifestFacts``.
The forge functions produce compiled documents for fixtures.
"""

from __future__ import annotations

import logging
import struct
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Optional

from .errors import BadChunk, BadStringPool, WellFormednessError

log = logging.getLogger(__name__)

RES_NULL_TYPE = 0x0000
RES_STRING_POOL_TYPE = 0x0001
RES_TABLE_TYPE = 0x0002
RES_XML_TYPE = 0x0003
RES_XML_START_NAMESPACE_TYPE = 0x0100
RES_XML_END_NAMESPACE_TYPE = 0x0101
RES_XML_START_ELEMENT_TYPE = 0x0102
RES_XML_END_ELEMENT_TYPE = 0x0103
RES_XML_CDATA_TYPE = 0x0104
RES_XML_RESOURCE_MAP_TYPE = 0x0180

UTF8_FLAG = 1 << 8
NO_ENTRY = 0xFFFFFFFF

ANDROID_NS = "http://schemas.android.com/apk/res/android"
ATTR_NAME_RESID = 0x01010003

TYPE_STRING = 0x03
TYPE_INT_DEC = 0x10
TYPE_INT_HEX = 0x11
TYPE_INT_BOOLEAN = 0x12
TYPE_REFERENCE = 0x01

COMPONENT_KINDS = ("activity", "service", "receiver", "provider")
PERMISSION_TAGS = ("uses-permission", "uses-permission-sdk-23")


@dataclass(frozen=True)
class ManifestFacts:
    package: str = ""
    permissions: frozenset = frozenset()
    components: frozenset = frozenset()  # {(kind, name)}
    actions: frozenset = frozenset()
    component_actions: frozenset = frozenset()  # {(kind, name, action)}

    def tokens(self) -> set[str]:
        out = {f"perm:{p}" for p in self.permissions}
        out |= {f"comp:{k}:{n}" for k, n in self.components}
        out |= {f"act:{a}" for a in self.actions}
        return out


# ---------------------------------------------------------------------------
# string pools
# ---------------------------------------------------------------------------

def _decode_len8(data: bytes, pos: int) -> tuple[int, int]:
    n = data[pos]
    if n & 0x80:
        return ((n & 0x7F) << 8) | data[pos + 1], pos + 2
    return n, pos + 1


def _decode_len16(data: bytes, pos: int) -> tuple[int, int]:
    n = struct.unpack_from("<H", data, pos)[0]
    if n & 0x8000:
        lo = struct.unpack_from("<H", data, pos + 2)[0]
        return ((n & 0x7FFF) << 16) | lo, pos + 4
    return n, pos + 2


def read_string_pool(data: bytes, off: int) -> list[str]:
    """Decode the string pool chunk starting at ``off``."""
    try:
        ctype, hsize, size, count, _styles, flags, strings_start, _styles_start = struct.unpack_from(
            "<HHIIIIII", data, off)
    except struct.error:
        raise BadStringPool(f"string pool header at {off} is truncated") from None
    if ctype != RES_STRING_POOL_TYPE:
        raise BadStringPool(f"expected string pool chunk at {off}, found type 0x{ctype:04x}")
    if off + size > len(data) or hsize < 28 or off + hsize + 4 * count > off + size:
        raise BadStringPool(f"string pool at {off} overruns its chunk")
    utf8 = bool(flags & UTF8_FLAG)
    base = off + strings_start
    end = off + size
    out = []
    for i in range(count):
        rel = struct.unpack_from("<I", data, off + hsize + 4 * i)[0]
        pos = base + rel
        try:
            if utf8:
                _, pos = _decode_len8(data, pos)
                nbytes, pos = _decode_len8(data, pos)
                if pos + nbytes > end:
                    raise BadStringPool(f"string {i} overruns pool")
                out.append(data[pos:pos + nbytes].decode("utf-8", "replace"))
            else:
                nchars, pos = _decode_len16(data, pos)
                if pos + 2 * nchars > end:
                    raise BadStringPool(f"string {i} overruns pool")
                out.append(data[pos:pos + 2 * nchars].decode("utf-16-le", "surrogatepass"))
        except (IndexError, struct.error):
            raise BadStringPool(f"string {i} is truncated") from None
    return out


def _encode_len8(n: int) -> bytes:
    if n > 0x7FFF:
        raise ValueError("string too long for a UTF-8 pool")
    return bytes([n]) if n < 0x80 else bytes([0x80 | (n >> 8), n & 0xFF])


def _encode_len16(n: int) -> bytes:
    if n < 0x8000:
        return struct.pack("<H", n)
    return struct.pack("<HH", 0x8000 | (n >> 16), n & 0xFFFF)


def build_string_pool(strings: list[str], utf8: bool = False) -> bytes:
    blobs = []
    for s in strings:
        if utf8:
            raw = s.encode("utf-8")
            blobs.append(_encode_len8(len(s.encode("utf-16-le")) // 2) + _encode_len8(len(raw)) + raw + b"\x00")
        else:
            raw = s.encode("utf-16-le", "surrogatepass")
            blobs.append(_encode_len16(len(raw) // 2) + raw + b"\x00\x00")
    offsets = []
    pos = 0
    for b in blobs:
        offsets.append(pos)
        pos += len(b)
    body = b"".join(blobs)
    body += b"\x00" * (-len(body) % 4)
    header_size = 28
    strings_start = header_size + 4 * len(strings)
    size = strings_start + len(body)
    return struct.pack("<HHIIIIII", RES_STRING_POOL_TYPE, header_size, size, len(strings), 0,
                       UTF8_FLAG if utf8 else 0, strings_start, 0) \
        + b"".join(struct.pack("<I", o) for o in offsets) + body


# ---------------------------------------------------------------------------
# AXML reading
# ---------------------------------------------------------------------------

class _FactCollector:
    """Turns a stream of (tag, attrs) start/end events into ManifestFacts."""

    def __init__(self):
        self.package = ""
        self.permissions: set[str] = set()
        self.components: set[tuple[str, str]] = set()
        self.component_actions: set[tuple[str, str, str]] = set()
        self.stack: list[tuple[str, Optional[tuple[str, str]]]] = []

    def _owner(self) -> Optional[tuple[str, str]]:
        for _tag, comp in reversed(self.stack):
            if comp is not None:
                return comp
        return None

    def start(self, tag: str, attrs: dict) -> None:
        comp = None
        name = attrs.get("name")
        if tag == "manifest":
            self.package = attrs.get("package", "") or ""
        elif tag in PERMISSION_TAGS and name:
            self.permissions.add(name)
        elif tag in COMPONENT_KINDS and name:
            comp = (tag, expand_component_name(name, self.package))
            self.components.add(comp)
        elif tag == "action" and name:
            in_filter = any(t == "intent-filter" for t, _ in self.stack)
            owner = self._owner()
            if in_filter and owner is not None:
                self.component_actions.add((owner[0], owner[1], name))
        self.stack.append((tag, comp))

    def end(self) -> None:
        if self.stack:
            self.stack.pop()

    def facts(self) -> ManifestFacts:
        return ManifestFacts(
            package=self.package,
            permissions=frozenset(self.permissions),
            components=frozenset(self.components),
            actions=frozenset(a for _, _, a in self.component_actions),
            component_actions=frozenset(self.component_actions),
        )


def expand_component_name(name: str, package: str) -> str:
    if name.startswith("."):
        return package + name
    if "." not in name and package:
        return f"{package}.{name}"
    return name


def _attr_value(strings: list[str], raw_idx: int, dtype: int, data: int) -> str:
    if raw_idx != NO_ENTRY and raw_idx < len(strings):
        return strings[raw_idx]
    if dtype == TYPE_STRING and data < len(strings):
        return strings[data]
    if dtype == TYPE_INT_BOOLEAN:
        return "true" if data else "false"
    if dtype == TYPE_INT_HEX:
        return f"0x{data:08x}"
    if dtype == TYPE_REFERENCE:
        return f"@{data:08x}"
    return str(struct.unpack("<i", struct.pack("<I", data))[0])


def parse_axml(data: bytes) -> ManifestFacts:
    """Walk a compiled XML document and collect manifest facts."""
    data = bytes(data)
    if len(data) < 8:
        raise BadChunk("document shorter than a chunk header")
    ctype, hsize, total = struct.unpack_from("<HHI", data, 0)
    if ctype != RES_XML_TYPE:
        raise BadChunk(f"not an XML chunk (type 0x{ctype:04x})")
    if total > len(data) or total < hsize or hsize < 8:
        raise BadChunk(f"document size {total} inconsistent with {len(data)} bytes")

    strings: list[str] = []
    resource_ids: list[int] = []
    collector = _FactCollector()
    pos = hsize
    while pos < total:
        if pos + 8 > total:
            raise BadChunk(f"chunk header at {pos} truncated")
        ctype, chsize, csize = struct.unpack_from("<HHI", data, pos)
        if csize < 8 or chsize < 8 or chsize > csize or pos + csize > total:
            raise BadChunk(f"chunk at {pos} has invalid size {csize}")
        if ctype == RES_STRING_POOL_TYPE:
            strings = read_string_pool(data, pos)
        elif ctype == RES_XML_RESOURCE_MAP_TYPE:
            n = (csize - chsize) // 4
            resource_ids = list(struct.unpack_from(f"<{n}I", data, pos + chsize))
        elif ctype == RES_XML_START_ELEMENT_TYPE:
            collector.start(*_read_start_element(data, pos, chsize, csize, strings, resource_ids))
        elif ctype == RES_XML_END_ELEMENT_TYPE:
            collector.end()
        elif ctype in (RES_XML_START_NAMESPACE_TYPE, RES_XML_END_NAMESPACE_TYPE, RES_XML_CDATA_TYPE, RES_NULL_TYPE):
            pass
        else:
            log.debug("skipping unknown chunk 0x%04x at %d", ctype, pos)
        pos += csize
    return collector.facts()


def _string(strings: list[str], idx: int) -> str:
    if idx == NO_ENTRY:
        return ""
    if idx >= len(strings):
        raise BadChunk(f"string reference {idx} outside pool of {len(strings)}")
    return strings[idx]


def _read_start_element(data, pos, chsize, csize, strings, resource_ids) -> tuple[str, dict]:
    ext = pos + chsize
    if ext + 20 > pos + csize:
        raise BadChunk(f"start element at {pos} truncated")
    _ns, name_idx, attr_start, attr_size, attr_count = struct.unpack_from("<IIHHH", data, ext)
    tag = _string(strings, name_idx)
    attrs = {}
    for i in range(attr_count):
        a = ext + attr_start + i * attr_size
        if a + 20 > pos + csize:
            raise BadChunk(f"attribute {i} of <{tag}> overruns its chunk")
        a_ns, a_name, a_raw, _vsize, _res0, vtype, vdata = struct.unpack_from("<IIIHBBI", data, a)
        key = _string(strings, a_name)
        if a_name < len(resource_ids) and resource_ids[a_name] == ATTR_NAME_RESID:
            key = "name"
        if not key:
            continue
        # only android:name and the bare package attribute matter; keep local names
        ns = _string(strings, a_ns)
        if ns and ns != ANDROID_NS and key == "name":
            continue
        attrs[key] = _attr_value(strings, a_raw, vtype, vdata)
    return tag, attrs


# ---------------------------------------------------------------------------
# plain XML
# ---------------------------------------------------------------------------

def parse_plain_manifest(text) -> ManifestFacts:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    if "<!DOCTYPE" in text or "<!ENTITY" in text:
        raise WellFormednessError("DTDs are not accepted")
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise WellFormednessError(str(exc)) from None
    collector = _FactCollector()
    _walk(root, collector)
    return collector.facts()


def _local_attrs(elem: ET.Element) -> dict:
    attrs = {}
    for k, v in elem.attrib.items():
        if k.startswith("{"):
            ns, local = k[1:].split("}", 1)
            if ns != ANDROID_NS and local == "name":
                continue
            attrs[local] = v
        else:
            attrs[k] = v
    return attrs


def _walk(elem: ET.Element, collector: _FactCollector) -> None:
    collector.start(elem.tag.split("}")[-1], _local_attrs(elem))
    for child in elem:
        _walk(child, collector)
    collector.end()


def parse_manifest(data: bytes) -> ManifestFacts:
    """Compiled or plain-text manifest, chosen by the leading bytes."""
    head = bytes(data[:64]).lstrip(b"\xef\xbb\xbf \t\r\n")
    if head.startswith(b"<"):
        return parse_plain_manifest(bytes(data))
    return parse_axml(data)


# ---------------------------------------------------------------------------
# forging
# ---------------------------------------------------------------------------

def _split_qname(key: str) -> tuple[str, str]:
    if key.startswith("{"):
        ns, local = key[1:].split("}", 1)
        return ns, local
    return "", key


def forge_axml(root: ET.Element, utf8: bool = False, hide_name_attr: bool = False) -> bytes:
    """Compile an element tree into AXML.

    ``hide_name_attr`` blanks the ``name`` attribute string so readers must
    resolve it through the resource map, as obfuscated manifests require.
    """
    elements = list(root.iter())
    attr_names: list[str] = []
    other: list[str] = []

    def want(bucket, s):
        if s not in attr_names and s not in other:
            bucket.append(s)

    has_android = False
    for e in elements:
        for k in e.attrib:
            ns, local = _split_qname(k)
            if ns == ANDROID_NS:
                has_android = True
                if local == "name":
                    want(attr_names, "" if hide_name_attr else "name")
    for e in elements:
        want(other, _split_qname(e.tag)[1])
        for k, v in e.attrib.items():
            ns, local = _split_qname(k)
            if not (ns == ANDROID_NS and local == "name"):
                want(other, local)
            want(other, v)
    if has_android:
        want(other, "android")
        want(other, ANDROID_NS)
    strings = attr_names + other
    idx = {s: i for i, s in enumerate(strings)}

    chunks = [build_string_pool(strings, utf8=utf8)]
    if attr_names:
        ids = [ATTR_NAME_RESID]
        chunks.append(struct.pack("<HHI", RES_XML_RESOURCE_MAP_TYPE, 8, 8 + 4 * len(ids))
                      + b"".join(struct.pack("<I", i) for i in ids))
    if has_android:
        chunks.append(struct.pack("<HHIIIII", RES_XML_START_NAMESPACE_TYPE, 16, 24, 1, NO_ENTRY,
                                  idx["android"], idx[ANDROID_NS]))

    def emit(e: ET.Element) -> None:
        attrs = []
        for k, v in e.attrib.items():
            ns, local = _split_qname(k)
            name_idx = 0 if (ns == ANDROID_NS and local == "name") else idx[local]
            ns_idx = idx[ns] if ns else NO_ENTRY
            attrs.append(struct.pack("<IIIHBBI", ns_idx, name_idx, idx[v], 8, 0, TYPE_STRING, idx[v]))
        body = struct.pack("<IIHHHHHH", NO_ENTRY, idx[_split_qname(e.tag)[1]], 20, 20, len(attrs), 0, 0, 0)
        body += b"".join(attrs)
        chunks.append(struct.pack("<HHIII", RES_XML_START_ELEMENT_TYPE, 16, 16 + len(body), 1, NO_ENTRY) + body)
        for child in e:
            emit(child)
        chunks.append(struct.pack("<HHIIIII", RES_XML_END_ELEMENT_TYPE, 16, 24, 1, NO_ENTRY,
                                  NO_ENTRY, idx[_split_qname(e.tag)[1]]))

    emit(root)
    if has_android:
        chunks.append(struct.pack("<HHIIIII", RES_XML_END_NAMESPACE_TYPE, 16, 24, 1, NO_ENTRY,
                                  idx["android"], idx[ANDROID_NS]))
    body = b"".join(chunks)
    return struct.pack("<HHI", RES_XML_TYPE, 8, 8 + len(body)) + body


def manifest_tree(package: str, permissions=(), components=()) -> ET.Element:
    """Build a manifest element tree.

    ``components`` holds ``(kind, name, [actions])`` triples.
    """
    a = f"{{{ANDROID_NS}}}"
    root = ET.Element("manifest", {"package": package})
    for p in permissions:
        ET.SubElement(root, "uses-permission", {a + "name": p})
    app = ET.SubElement(root, "application")
    for kind, name, actions in components:
        comp = ET.SubElement(app, kind, {a + "name": name})
        if actions:
            filt = ET.SubElement(comp, "intent-filter")
            for act in actions:
                ET.SubElement(filt, "action", {a + "name": act})
    return root


def tree_to_text(root: ET.Element) -> str:
    ET.register_namespace("android", ANDROID_NS)
    return ET.tostring(root, encoding="unicode")


# ---------------------------------------------------------------------------
# resources.arsc
# ---------------------------------------------------------------------------

def arsc_strings(data: bytes) -> list[str]:
    """Strings from the global pool of a compiled resource table."""
    data = bytes(data)
    if len(data) < 12:
        raise BadChunk("resource table shorter than its header")
    ctype, hsize, size = struct.unpack_from("<HHI", data, 0)
    if ctype != RES_TABLE_TYPE:
        raise BadChunk(f"not a resource table (type 0x{ctype:04x})")
    pos = hsize
    end = min(size, len(data))
    while pos + 8 <= end:
        ctype, _chsize, csize = struct.unpack_from("<HHI", data, pos)
        if csize < 8:
            raise BadChunk(f"chunk at {pos} has invalid size {csize}")
        if ctype == RES_STRING_POOL_TYPE:
            return read_string_pool(data, pos)
        pos += csize
    return []


def forge_arsc(strings: list[str], utf8: bool = True) -> bytes:
    pool = build_string_pool(strings, utf8=utf8)
    return struct.pack("<HHII", RES_TABLE_TYPE, 12, 12 + len(pool), 0) + pool
