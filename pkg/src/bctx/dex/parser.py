"""Reader for DEX (version 035) files.

Tables are materialized eagerly and every code item is walked into a list of
instructions. Only string loads, class-literal loads and method invocations
are decoded; everything else is kept as an opaque ``Other`` with its width.
"""

from __future__ import annotations

import hashlib
import logging
import struct
import zlib
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from ..errors import BadMagic, IndexOutOfRange, TruncatedSection
from . import mutf8
from .opcodes import (
    CONST_CLASS,
    CONST_STRING,
    CONST_STRING_JUMBO,
    INVOKE_OPCODES,
    INVOKE_RANGE_OPCODES,
    NOP,
    OPCODE_UNITS,
    payload_units,
)

log = logging.getLogger(__name__)

HEADER_SIZE = 0x70
DEX_MAGIC_PREFIX = b"dex\n"
ENDIAN_CONSTANT = 0x12345678
NO_INDEX = 0xFFFFFFFF


@dataclass(frozen=True)
class DexHeader:
    magic: bytes
    checksum: int
    signature: bytes
    file_size: int
    header_size: int
    endian_tag: int
    link_size: int
    link_off: int
    map_off: int
    string_ids_size: int
    string_ids_off: int
    type_ids_size: int
    type_ids_off: int
    proto_ids_size: int
    proto_ids_off: int
    field_ids_size: int
    field_ids_off: int
    method_ids_size: int
    method_ids_off: int
    class_defs_size: int
    class_defs_off: int
    data_size: int
    data_off: int

    @property
    def version(self) -> str:
        return self.magic[4:7].decode("ascii", "replace")


@dataclass(frozen=True)
class Proto:
    shorty: str
    return_type: str
    parameters: tuple[str, ...]

    @property
    def descriptor(self) -> str:
        return "(" + "".join(self.parameters) + ")" + self.return_type


@dataclass(frozen=True)
class MethodRef:
    defining_type: str
    name: str
    descriptor: str
    shorty: str = ""

    @property
    def signature(self) -> str:
        return f"{self.defining_type}->{self.name}{self.descriptor}"

    def __str__(self) -> str:
        return self.signature


@dataclass(frozen=True)
class FieldRef:
    defining_type: str
    name: str
    type: str


@dataclass(frozen=True)
class ConstString:
    offset: int
    length: int
    string_index: int


@dataclass(frozen=True)
class ConstClass:
    offset: int
    length: int
    type_index: int


@dataclass(frozen=True)
class Invoke:
    offset: int
    length: int
    style: str
    method_index: int
    is_range: bool = False


@dataclass(frozen=True)
class Other:
    offset: int
    length: int
    opcode: int


Instruction = Union[ConstString, ConstClass, Invoke, Other]


@dataclass(frozen=True)
class CodeItem:
    registers_size: int
    ins_size: int
    outs_size: int
    tries_size: int
    insns_size: int
    instructions: tuple[Instruction, ...]


@dataclass(frozen=True)
class EncodedMethod:
    ref: MethodRef
    method_index: int
    access_flags: int
    code: Optional[CodeItem]


@dataclass(frozen=True)
class ClassDef:
    this_type: str
    superclass_type: Optional[str]
    interfaces: tuple[str, ...]
    access_flags: int
    methods: tuple[EncodedMethod, ...]


@dataclass(frozen=True)
class DexFile:
    header: DexHeader
    strings: tuple[Optional[str], ...]
    types: tuple[str, ...]
    protos: tuple[Proto, ...]
    fields: tuple[FieldRef, ...]
    methods: tuple[MethodRef, ...]
    classes: tuple[ClassDef, ...]
    checksum_ok: bool = True
    signature_ok: bool = True
    bad_strings: tuple[int, ...] = ()
    warnings: tuple[str, ...] = field(default=())

    def string(self, index: int) -> Optional[str]:
        return self.strings[index]


def is_valid_type_descriptor(desc: str) -> bool:
    i = 0
    while i < len(desc) and desc[i] == "[":
        i += 1
    rest = desc[i:]
    if len(rest) == 1:
        return rest in "VZBSCIJFD" and not (i and rest == "V")
    return len(rest) > 2 and rest[0] == "L" and rest[-1] == ";" and ";" not in rest[1:-1]


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.size = len(data)

    def check(self, off: int, length: int, what: str) -> None:
        if off < 0 or length < 0 or off + length > self.size:
            raise TruncatedSection(f"{what}: [{off}, {off + length}) outside file of {self.size} bytes")

    def u2(self, off: int) -> int:
        self.check(off, 2, "u2")
        return struct.unpack_from("<H", self.data, off)[0]

    def u4(self, off: int) -> int:
        self.check(off, 4, "u4")
        return struct.unpack_from("<I", self.data, off)[0]

    def uleb128(self, off: int) -> tuple[int, int]:
        result = 0
        shift = 0
        for i in range(5):
            if off + i >= self.size:
                raise TruncatedSection(f"uleb128 at {off} runs past end of file")
            b = self.data[off + i]
            result |= (b & 0x7F) << shift
            if b < 0x80:
                return result, off + i + 1
            shift += 7
        raise TruncatedSection(f"uleb128 at {off} longer than 5 bytes")


def _parse_header(r: _Reader) -> DexHeader:
    vals = struct.unpack_from("<8sI20s20I", r.data, 0)
    return DexHeader(vals[0], vals[1], vals[2], *vals[3:])


def parse_dex(data: bytes) -> DexFile:
    """Parse a complete DEX image.

    Raises BadMagic, TruncatedSection or IndexOutOfRange. A wrong checksum is
    not fatal: the result carries ``checksum_ok=False``.
    """
    data = bytes(data)
    if len(data) < 8 or not data.startswith(DEX_MAGIC_PREFIX) or data[7] != 0:
        raise BadMagic(f"not a dex file (magic {data[:8]!r})")
    if len(data) < HEADER_SIZE:
        raise TruncatedSection(f"dex header needs {HEADER_SIZE} bytes, got {len(data)}")
    r = _Reader(data)
    hdr = _parse_header(r)
    warnings = []

    if hdr.file_size > len(data):
        raise TruncatedSection(f"header file_size {hdr.file_size} exceeds {len(data)} bytes")
    if hdr.file_size < len(data):
        warnings.append(f"{len(data) - hdr.file_size} trailing bytes after file_size")
    if hdr.endian_tag != ENDIAN_CONSTANT:
        raise BadMagic(f"unsupported endian tag 0x{hdr.endian_tag:08x}")

    checksum_ok = zlib.adler32(data[12:hdr.file_size]) == hdr.checksum
    if not checksum_ok:
        log.warning("dex checksum mismatch; continuing")
        warnings.append("checksum mismatch")
    signature_ok = hashlib.sha1(data[32:hdr.file_size]).digest() == hdr.signature
    if not signature_ok:
        warnings.append("signature mismatch")

    for name in ("string_ids", "type_ids", "proto_ids", "field_ids", "method_ids", "class_defs"):
        count = getattr(hdr, name + "_size")
        off = getattr(hdr, name + "_off")
        width = {"string_ids": 4, "type_ids": 4, "proto_ids": 12,
                 "field_ids": 8, "method_ids": 8, "class_defs": 32}[name]
        if count:
            r.check(off, count * width, name)

    strings, bad = _read_strings(r, hdr)

    def string_at(idx: int) -> str:
        if idx >= len(strings):
            raise IndexOutOfRange(f"string index {idx} >= {len(strings)}")
        s = strings[idx]
        if s is None:
            raise IndexOutOfRange(f"string index {idx} refers to an undecodable string")
        return s

    types = tuple(string_at(r.u4(hdr.type_ids_off + 4 * i)) for i in range(hdr.type_ids_size))

    def type_at(idx: int) -> str:
        if idx >= len(types):
            raise IndexOutOfRange(f"type index {idx} >= {len(types)}")
        return types[idx]

    def type_list(off: int) -> tuple[str, ...]:
        if off == 0:
            return ()
        n = r.u4(off)
        r.check(off + 4, 2 * n, "type_list")
        return tuple(type_at(r.u2(off + 4 + 2 * i)) for i in range(n))

    protos = []
    for i in range(hdr.proto_ids_size):
        base = hdr.proto_ids_off + 12 * i
        protos.append(Proto(string_at(r.u4(base)), type_at(r.u4(base + 4)), type_list(r.u4(base + 8))))
    protos = tuple(protos)

    fields = []
    for i in range(hdr.field_ids_size):
        base = hdr.field_ids_off + 8 * i
        fields.append(FieldRef(type_at(r.u2(base)), string_at(r.u4(base + 4)), type_at(r.u2(base + 2))))

    methods = []
    for i in range(hdr.method_ids_size):
        base = hdr.method_ids_off + 8 * i
        proto_idx = r.u2(base + 2)
        if proto_idx >= len(protos):
            raise IndexOutOfRange(f"proto index {proto_idx} >= {len(protos)}")
        proto = protos[proto_idx]
        methods.append(MethodRef(type_at(r.u2(base)), string_at(r.u4(base + 4)), proto.descriptor, proto.shorty))
    methods = tuple(methods)

    limits = (len(strings), len(types), len(methods))
    classes = []
    seen = set()
    for i in range(hdr.class_defs_size):
        base = hdr.class_defs_off + 32 * i
        cls_idx, access, super_idx, ifaces_off, _src, _ann, data_off, _sv = struct.unpack_from("<8I", data, base)
        this_type = type_at(cls_idx)
        if this_type in seen:
            raise IndexOutOfRange(f"duplicate class definition {this_type}")
        seen.add(this_type)
        superclass = None if super_idx == NO_INDEX else type_at(super_idx)
        enc_methods = _read_class_data(r, data_off, methods, limits) if data_off else ()
        classes.append(ClassDef(this_type, superclass, type_list(ifaces_off), access, enc_methods))

    return DexFile(
        header=hdr,
        strings=tuple(strings),
        types=types,
        protos=protos,
        fields=tuple(fields),
        methods=methods,
        classes=tuple(classes),
        checksum_ok=checksum_ok,
        signature_ok=signature_ok,
        bad_strings=tuple(bad),
        warnings=tuple(warnings),
    )


def _read_strings(r: _Reader, hdr: DexHeader) -> tuple[list, list]:
    strings: list = []
    bad = []
    for i in range(hdr.string_ids_size):
        off = r.u4(hdr.string_ids_off + 4 * i)
        _utf16_len, start = r.uleb128(off)
        end = r.data.find(b"\x00", start)
        if end < 0:
            raise TruncatedSection(f"string_data_item {i} is not NUL-terminated")
        try:
            strings.append(mutf8.decode(r.data[start:end]))
        except mutf8.BadMutf8 as exc:
            log.warning("string %d: %s", i, exc)
            strings.append(None)
            bad.append(i)
    return strings, bad


def _read_class_data(r: _Reader, off: int, methods, limits) -> tuple[EncodedMethod, ...]:
    sizes = []
    pos = off
    for _ in range(4):
        v, pos = r.uleb128(pos)
        sizes.append(v)
    n_static, n_instance, n_direct, n_virtual = sizes
    for _ in range(2 * (n_static + n_instance)):
        _, pos = r.uleb128(pos)

    out = []
    for count in (n_direct, n_virtual):
        idx = 0
        for _ in range(count):
            diff, pos = r.uleb128(pos)
            access, pos = r.uleb128(pos)
            code_off, pos = r.uleb128(pos)
            idx += diff
            if idx >= len(methods):
                raise IndexOutOfRange(f"method index {idx} >= {len(methods)}")
            code = _read_code_item(r, code_off, limits) if code_off else None
            out.append(EncodedMethod(methods[idx], idx, access, code))
    return tuple(out)


def _read_code_item(r: _Reader, off: int, limits) -> CodeItem:
    r.check(off, 16, "code_item")
    regs, ins, outs, tries = struct.unpack_from("<4H", r.data, off)
    insns_size = r.u4(off + 12)
    r.check(off + 16, 2 * insns_size, "insns")
    insns = struct.unpack_from(f"<{insns_size}H", r.data, off + 16)
    return CodeItem(regs, ins, outs, tries, insns_size, decode_instructions(insns, limits))


def decode_instructions(insns, limits=None) -> tuple[Instruction, ...]:
    """Walk a code-unit array into instructions covering it exactly.

    ``limits`` is an optional (n_strings, n_types, n_methods) triple used to
    bounds-check decoded indices.
    """
    n_strings, n_types, n_methods = limits or (None, None, None)
    out: list[Instruction] = []
    pos = 0
    total = len(insns)
    while pos < total:
        unit = insns[pos]
        op = unit & 0xFF
        length = None
        if op == NOP and unit != 0:
            try:
                length = payload_units(insns, pos)
            except IndexError:
                raise TruncatedSection(f"payload at unit {pos} runs past code end") from None
        if length is None:
            length = OPCODE_UNITS[op]
        if pos + length > total:
            raise TruncatedSection(f"instruction 0x{op:02x} at unit {pos} runs past code end")

        if op in (CONST_STRING, CONST_STRING_JUMBO):
            idx = insns[pos + 1] if op == CONST_STRING else insns[pos + 1] | (insns[pos + 2] << 16)
            _bound(idx, n_strings, "string")
            out.append(ConstString(pos, length, idx))
        elif op == CONST_CLASS:
            idx = insns[pos + 1]
            _bound(idx, n_types, "type")
            out.append(ConstClass(pos, length, idx))
        elif op in INVOKE_OPCODES or op in INVOKE_RANGE_OPCODES:
            idx = insns[pos + 1]
            _bound(idx, n_methods, "method")
            is_range = op in INVOKE_RANGE_OPCODES
            style = INVOKE_RANGE_OPCODES[op] if is_range else INVOKE_OPCODES[op]
            out.append(Invoke(pos, length, style, idx, is_range))
        else:
            out.append(Other(pos, length, op))
        pos += length
    return tuple(out)


def _bound(idx: int, limit: Optional[int], what: str) -> None:
    if limit is not None and idx >= limit:
        raise IndexOutOfRange(f"{what} index {idx} >= {limit}")


def iter_strings(dex: DexFile) -> Iterator[tuple[int, str]]:
    """Yield ``(index, text)`` for every decodable string, in index order."""
    for i, s in enumerate(dex.strings):
        if s is not None:
            yield i, s


def iter_code(dex: DexFile) -> Iterator[tuple[ClassDef, EncodedMethod]]:
    for cls in dex.classes:
        for m in cls.methods:
            if m.code is not None:
                yield cls, m
