"""Emit small, structurally valid DEX files from a declarative description.

Used to build fixtures: a ``DexSpec`` lists classes, methods and instruction
sketches, and ``forge_dex`` lays them out as a version-035 file with correct
checksum, signature and map list.

Instruction sketches are tuples::

    ("const-string", "http://a.com")            # optionally ("const-string/jumbo", text)
    ("const-class", "Lcom/x/Main;")
    ("invoke-static", "Lcom/x/Ads;", "load", "()V")   # any style, optional "/range"
    ("return-void",)
    ("op", 0x01)                                # any undecoded opcode, zero operands
    ("payload", "packed-switch", 3)             # or sparse-switch / fill-array-data
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

from ..errors import SpecTooLarge
from . import mutf8
from .opcodes import (
    CONST_CLASS,
    CONST_STRING,
    CONST_STRING_JUMBO,
    FILL_ARRAY_DATA_PAYLOAD,
    INVOKE_OPCODE_FOR,
    INVOKE_OPCODES,
    INVOKE_RANGE_OPCODE_FOR,
    INVOKE_RANGE_OPCODES,
    OPCODE_UNITS,
    PACKED_SWITCH_PAYLOAD,
    RETURN_VOID,
    SPARSE_SWITCH_PAYLOAD,
)
from .parser import HEADER_SIZE, NO_INDEX, DexFile, is_valid_type_descriptor

DEX_MAGIC = b"dex\n035\x00"

ACC_PUBLIC = 0x1
ACC_PRIVATE = 0x2
ACC_STATIC = 0x8
ACC_ABSTRACT = 0x400
ACC_CONSTRUCTOR = 0x10000

_DECODED_OPCODES = {CONST_STRING, CONST_STRING_JUMBO, CONST_CLASS} | set(INVOKE_OPCODES) | set(INVOKE_RANGE_OPCODES)


@dataclass
class ForgeMethod:
    name: str
    descriptor: str = "()V"
    instructions: list = field(default_factory=lambda: [("return-void",)])
    access_flags: int = ACC_PUBLIC
    abstract: bool = False

    @property
    def is_direct(self) -> bool:
        return self.name in ("<init>", "<clinit>") or bool(self.access_flags & (ACC_STATIC | ACC_PRIVATE))


@dataclass
class ForgeClass:
    name: str
    superclass: Optional[str] = "Ljava/lang/Object;"
    interfaces: list = field(default_factory=list)
    methods: list = field(default_factory=list)
    access_flags: int = ACC_PUBLIC


@dataclass
class DexSpec:
    classes: list = field(default_factory=list)
    strings: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict) -> "DexSpec":
        classes = []
        for c in d.get("classes", []):
            methods = [
                ForgeMethod(
                    name=m["name"],
                    descriptor=m.get("descriptor", "()V"),
                    instructions=[tuple(i) for i in m.get("instructions", [["return-void"]])],
                    access_flags=m.get("access_flags", ACC_PUBLIC),
                    abstract=m.get("abstract", False),
                )
                for m in c.get("methods", [])
            ]
            classes.append(ForgeClass(c["name"], c.get("superclass", "Ljava/lang/Object;"),
                                      list(c.get("interfaces", [])), methods))
        return cls(classes, list(d.get("strings", [])))


def parse_descriptor(desc: str) -> tuple[list[str], str]:
    """Split ``(Ljava/lang/String;I)V`` into (["Ljava/lang/String;", "I"], "V")."""
    if not desc.startswith("(") or ")" not in desc:
        raise ValueError(f"bad method descriptor {desc!r}")
    inner, ret = desc[1:].split(")", 1)
    params = []
    i = 0
    while i < len(inner):
        j = i
        while inner[j] == "[":
            j += 1
        if inner[j] == "L":
            j = inner.index(";", j)
        params.append(inner[i:j + 1])
        i = j + 1
    for t in params + [ret]:
        if not is_valid_type_descriptor(t):
            raise ValueError(f"bad type descriptor {t!r} in {desc!r}")
    return params, ret


def shorty_of(desc: str) -> str:
    params, ret = parse_descriptor(desc)
    return "".join("L" if t[0] in "L[" else t for t in [ret] + params)


def _invoke_parts(op: str) -> tuple[str, bool]:
    base = op[len("invoke-"):]
    is_range = base.endswith("/range")
    style = base[: -len("/range")] if is_range else base
    if style not in INVOKE_OPCODE_FOR:
        raise ValueError(f"unknown invoke style in {op!r}")
    return style, is_range


def _payload_units(kind: str, n: int) -> list[int]:
    if kind == "packed-switch":
        return [PACKED_SWITCH_PAYLOAD, n, 0, 0] + [0, 0] * n
    if kind == "sparse-switch":
        return [SPARSE_SWITCH_PAYLOAD, n] + [0, 0] * (2 * n)
    if kind == "fill-array-data":
        # element width 1
        return [FILL_ARRAY_DATA_PAYLOAD, 1, n & 0xFFFF, n >> 16] + [0] * ((n + 1) // 2)
    raise ValueError(f"unknown payload kind {kind!r}")


def _utf16_key(s: str) -> bytes:
    return s.encode("utf-16-be", "surrogatepass")


class _Pools:
    def __init__(self, spec: DexSpec):
        strings: set[str] = set(spec.strings)
        types: set[str] = set()
        protos: set[str] = set()
        methods: set[tuple[str, str, str]] = set()

        def add_type(t: str) -> None:
            if not is_valid_type_descriptor(t):
                raise ValueError(f"bad type descriptor {t!r}")
            types.add(t)

        def add_method(owner: str, name: str, desc: str) -> None:
            add_type(owner)
            params, ret = parse_descriptor(desc)
            for t in params + [ret]:
                add_type(t)
            protos.add(desc)
            strings.add(name)
            methods.add((owner, name, desc))

        for cls in spec.classes:
            add_type(cls.name)
            if cls.superclass is not None:
                add_type(cls.superclass)
            for i in cls.interfaces:
                add_type(i)
            for m in cls.methods:
                add_method(cls.name, m.name, m.descriptor)
                for ins in (m.instructions if not m.abstract else []):
                    op = ins[0]
                    if op.startswith("const-string"):
                        strings.add(ins[1])
                    elif op == "const-class":
                        add_type(ins[1])
                    elif op.startswith("invoke-"):
                        _invoke_parts(op)
                        add_method(ins[1], ins[2], ins[3])

        strings |= types
        strings |= {shorty_of(d) for d in protos}
        self.strings = sorted(strings, key=_utf16_key)
        self.string_idx = {s: i for i, s in enumerate(self.strings)}
        self.types = sorted(types, key=lambda t: self.string_idx[t])
        self.type_idx = {t: i for i, t in enumerate(self.types)}

        def proto_key(desc):
            params, ret = parse_descriptor(desc)
            return (self.type_idx[ret], [self.type_idx[p] for p in params])

        self.protos = sorted(protos, key=proto_key)
        self.proto_idx = {p: i for i, p in enumerate(self.protos)}
        self.methods = sorted(
            methods,
            key=lambda m: (self.type_idx[m[0]], self.string_idx[m[1]], self.proto_idx[m[2]]),
        )
        self.method_idx = {m: i for i, m in enumerate(self.methods)}


def _encode_insns(instructions: Sequence[tuple], pools: _Pools) -> list[int]:
    units: list[int] = []
    for ins in instructions:
        op = ins[0]
        if op in ("const-string", "const-string/jumbo"):
            idx = pools.string_idx[ins[1]]
            if op == "const-string" and idx <= 0xFFFF:
                units += [CONST_STRING, idx]
            else:
                units += [CONST_STRING_JUMBO, idx & 0xFFFF, idx >> 16]
        elif op == "const-class":
            units += [CONST_CLASS, pools.type_idx[ins[1]]]
        elif op.startswith("invoke-"):
            style, is_range = _invoke_parts(op)
            idx = pools.method_idx[(ins[1], ins[2], ins[3])]
            opcode = INVOKE_RANGE_OPCODE_FOR[style] if is_range else INVOKE_OPCODE_FOR[style]
            units += [opcode, idx, 0]
        elif op == "return-void":
            units.append(RETURN_VOID)
        elif op == "op":
            opcode = ins[1]
            if opcode in _DECODED_OPCODES:
                raise ValueError(f"opcode 0x{opcode:02x} needs operands; use its named sketch")
            units += [opcode] + [0] * (OPCODE_UNITS[opcode] - 1)
        elif op == "payload":
            units += _payload_units(ins[1], ins[2])
        else:
            raise ValueError(f"unknown instruction sketch {ins!r}")
    return units


def _uleb128(value: int) -> bytes:
    out = bytearray()
    while True:
        b = value & 0x7F
        value >>= 7
        if value:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _align4(buf: bytearray) -> None:
    buf += b"\x00" * (-len(buf) % 4)


def forge_dex(spec: DexSpec) -> bytes:
    """Lay out ``spec`` as a complete DEX file."""
    pools = _Pools(spec)
    ns, nt, np_, nm, nc = (len(pools.strings), len(pools.types), len(pools.protos),
                           len(pools.methods), len(spec.classes))
    if nt > 0xFFFF or np_ > 0xFFFF or nm > 0xFFFF:
        raise SpecTooLarge("type/proto/method pools exceed 16-bit indices")
    if len({c.name for c in spec.classes}) != nc:
        raise ValueError("duplicate class names in spec")

    string_ids_off = HEADER_SIZE
    type_ids_off = string_ids_off + 4 * ns
    proto_ids_off = type_ids_off + 4 * nt
    method_ids_off = proto_ids_off + 12 * np_
    class_defs_off = method_ids_off + 8 * nm
    data_off = class_defs_off + 32 * nc

    data = bytearray()
    map_items = []  # (type, count, offset)

    def here() -> int:
        return data_off + len(data)

    # type lists: proto parameters and class interfaces, deduplicated
    type_list_off: dict[tuple[str, ...], int] = {}
    lists = [tuple(parse_descriptor(p)[0]) for p in pools.protos] + [tuple(c.interfaces) for c in spec.classes]
    first = None
    for tl in lists:
        if tl and tl not in type_list_off:
            _align4(data)
            if first is None:
                first = here()
            type_list_off[tl] = here()
            data += struct.pack("<I", len(tl))
            data += b"".join(struct.pack("<H", pools.type_idx[t]) for t in tl)
    if type_list_off:
        map_items.append((0x1001, len(type_list_off), first))

    # code items
    code_off: dict[tuple[str, str, str], int] = {}
    first = None
    for cls in spec.classes:
        for m in cls.methods:
            if m.abstract:
                continue
            _align4(data)
            if first is None:
                first = here()
            units = _encode_insns(m.instructions, pools)
            code_off[(cls.name, m.name, m.descriptor)] = here()
            data += struct.pack("<4HII", 1, 0, 0, 0, 0, len(units))
            data += struct.pack(f"<{len(units)}H", *units)
    if code_off:
        map_items.append((0x2001, len(code_off), first))

    # string data
    string_data_off = []
    for s in pools.strings:
        string_data_off.append(here())
        data += _uleb128(mutf8.utf16_length(s)) + mutf8.encode(s) + b"\x00"
    if ns:
        map_items.append((0x2002, ns, string_data_off[0]))

    # class data
    class_data_off = []
    for cls in spec.classes:
        if not cls.methods:
            class_data_off.append(0)
            continue
        class_data_off.append(here())
        direct = sorted((m for m in cls.methods if m.is_direct),
                        key=lambda m: pools.method_idx[(cls.name, m.name, m.descriptor)])
        virtual = sorted((m for m in cls.methods if not m.is_direct),
                         key=lambda m: pools.method_idx[(cls.name, m.name, m.descriptor)])
        data += _uleb128(0) + _uleb128(0) + _uleb128(len(direct)) + _uleb128(len(virtual))
        for group in (direct, virtual):
            prev = 0
            for m in group:
                key = (cls.name, m.name, m.descriptor)
                idx = pools.method_idx[key]
                flags = m.access_flags | (ACC_ABSTRACT if m.abstract else 0)
                if m.name in ("<init>", "<clinit>"):
                    flags |= ACC_CONSTRUCTOR
                data += _uleb128(idx - prev) + _uleb128(flags) + _uleb128(code_off.get(key, 0))
                prev = idx
    n_class_data = sum(1 for o in class_data_off if o)
    if n_class_data:
        map_items.append((0x2000, n_class_data, next(o for o in class_data_off if o)))

    # map list
    _align4(data)
    map_off = here()
    items = [(0x0000, 1, 0)]
    for code, count, off in ((0x0001, ns, string_ids_off), (0x0002, nt, type_ids_off),
                             (0x0003, np_, proto_ids_off), (0x0005, nm, method_ids_off),
                             (0x0006, nc, class_defs_off)):
        if count:
            items.append((code, count, off))
    items += map_items
    items.append((0x1000, 1, map_off))
    items.sort(key=lambda it: it[2])
    data += struct.pack("<I", len(items))
    for code, count, off in items:
        data += struct.pack("<HHII", code, 0, count, off)

    file_size = data_off + len(data)
    if file_size > 0xFFFFFFFF:
        raise SpecTooLarge("file exceeds 32-bit offsets")

    index = bytearray()
    index += b"".join(struct.pack("<I", o) for o in string_data_off)
    index += b"".join(struct.pack("<I", pools.string_idx[t]) for t in pools.types)
    for p in pools.protos:
        params, ret = parse_descriptor(p)
        index += struct.pack("<III", pools.string_idx[shorty_of(p)], pools.type_idx[ret],
                             type_list_off.get(tuple(params), 0))
    for owner, name, desc in pools.methods:
        index += struct.pack("<HHI", pools.type_idx[owner], pools.proto_idx[desc], pools.string_idx[name])
    for cls, cd_off in zip(spec.classes, class_data_off):
        sup = NO_INDEX if cls.superclass is None else pools.type_idx[cls.superclass]
        ifaces = type_list_off.get(tuple(cls.interfaces), 0)
        index += struct.pack("<8I", pools.type_idx[cls.name], cls.access_flags, sup, ifaces,
                             NO_INDEX, 0, cd_off, 0)

    def sec(count, off):
        return (count, off if count else 0)

    header = struct.pack(
        "<8sI20s20I", DEX_MAGIC, 0, b"\x00" * 20, file_size, HEADER_SIZE, 0x12345678, 0, 0, map_off,
        *sec(ns, string_ids_off), *sec(nt, type_ids_off), *sec(np_, proto_ids_off), 0, 0,
        *sec(nm, method_ids_off), *sec(nc, class_defs_off), len(data), data_off,
    )
    out = bytearray(header) + index + data
    assert len(out) == file_size
    out[12:32] = hashlib.sha1(out[32:]).digest()
    out[8:12] = struct.pack("<I", zlib.adler32(bytes(out[12:])))
    return bytes(out)


def spec_observable(spec: DexSpec) -> dict:
    """Content a parser must recover from ``forge_dex(spec)``."""
    pools = _Pools(spec)
    classes = []
    for cls in spec.classes:
        methods = []
        for m in cls.methods:
            code = None
            if not m.abstract:
                code = []
                for ins in m.instructions:
                    op = ins[0]
                    if op.startswith("const-string"):
                        code.append(("const-string", ins[1]))
                    elif op == "const-class":
                        code.append(("const-class", ins[1]))
                    elif op.startswith("invoke-"):
                        style, is_range = _invoke_parts(op)
                        code.append((f"invoke-{style}", f"{ins[1]}->{ins[2]}{ins[3]}", is_range))
                    elif op == "return-void":
                        code.append(("other", RETURN_VOID, 1))
                    elif op == "op":
                        code.append(("other", ins[1], OPCODE_UNITS[ins[1]]))
                    elif op == "payload":
                        code.append(("other", 0, len(_payload_units(ins[1], ins[2]))))
            methods.append((m.name, m.descriptor, code))
        classes.append({
            "name": cls.name,
            "superclass": cls.superclass,
            "interfaces": list(cls.interfaces),
            "methods": sorted(methods, key=lambda t: (t[0], t[1])),
        })
    return {"strings": list(pools.strings), "classes": classes}


def dex_observable(dex: DexFile) -> dict:
    """The same view as ``spec_observable``, read back from a parsed file."""
    from .parser import ConstClass, ConstString, Invoke

    classes = []
    for cls in dex.classes:
        methods = []
        for m in cls.methods:
            code = None
            if m.code is not None:
                code = []
                for ins in m.code.instructions:
                    if isinstance(ins, ConstString):
                        code.append(("const-string", dex.strings[ins.string_index]))
                    elif isinstance(ins, ConstClass):
                        code.append(("const-class", dex.types[ins.type_index]))
                    elif isinstance(ins, Invoke):
                        code.append((f"invoke-{ins.style}", dex.methods[ins.method_index].signature, ins.is_range))
                    else:
                        code.append(("other", ins.opcode, ins.length))
            methods.append((m.ref.name, m.ref.descriptor, code))
        classes.append({
            "name": cls.this_type,
            "superclass": cls.superclass_type,
            "interfaces": list(cls.interfaces),
            "methods": sorted(methods, key=lambda t: (t[0], t[1])),
        })
    return {"strings": [s for s in dex.strings], "classes": classes}
