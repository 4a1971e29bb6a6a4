"""Dalvik opcode formats and instruction widths.

Every one of the 256 opcode bytes maps to an instruction format; the width in
16-bit code units follows from the format. Semantics are only decoded for the
handful of opcodes the feature extractors care about.
"""

FORMAT_UNITS = {
    "10x": 1, "12x": 1, "11n": 1, "11x": 1, "10t": 1,
    "20t": 2, "20bc": 2, "22x": 2, "21t": 2, "21s": 2, "21h": 2, "21c": 2,
    "23x": 2, "22b": 2, "22t": 2, "22s": 2, "22c": 2, "22cs": 2,
    "30t": 3, "32x": 3, "31i": 3, "31t": 3, "31c": 3,
    "35c": 3, "35ms": 3, "35mi": 3, "3rc": 3, "3rms": 3, "3rmi": 3,
    "45cc": 4, "4rcc": 4,
    "51l": 5,
}


def _build_formats():
    fmt = ["10x"] * 256
    spans = [
        (0x00, 0x00, "10x"), (0x01, 0x01, "12x"), (0x02, 0x02, "22x"),
        (0x03, 0x03, "32x"), (0x04, 0x04, "12x"), (0x05, 0x05, "22x"),
        (0x06, 0x06, "32x"), (0x07, 0x07, "12x"), (0x08, 0x08, "22x"),
        (0x09, 0x09, "32x"), (0x0A, 0x0D, "11x"), (0x0E, 0x0E, "10x"),
        (0x0F, 0x11, "11x"), (0x12, 0x12, "11n"), (0x13, 0x13, "21s"),
        (0x14, 0x14, "31i"), (0x15, 0x15, "21h"), (0x16, 0x16, "21s"),
        (0x17, 0x17, "31i"), (0x18, 0x18, "51l"), (0x19, 0x19, "21h"),
        (0x1A, 0x1A, "21c"), (0x1B, 0x1B, "31c"), (0x1C, 0x1C, "21c"),
        (0x1D, 0x1E, "11x"), (0x1F, 0x1F, "21c"), (0x20, 0x20, "22c"),
        (0x21, 0x21, "12x"), (0x22, 0x22, "21c"), (0x23, 0x23, "22c"),
        (0x24, 0x24, "35c"), (0x25, 0x25, "3rc"), (0x26, 0x26, "31t"),
        (0x27, 0x27, "11x"), (0x28, 0x28, "10t"), (0x29, 0x29, "20t"),
        (0x2A, 0x2A, "30t"), (0x2B, 0x2C, "31t"), (0x2D, 0x31, "23x"),
        (0x32, 0x37, "22t"), (0x38, 0x3D, "21t"), (0x3E, 0x43, "10x"),
        (0x44, 0x51, "23x"), (0x52, 0x5F, "22c"), (0x60, 0x6D, "21c"),
        (0x6E, 0x72, "35c"), (0x73, 0x73, "10x"), (0x74, 0x78, "3rc"),
        (0x79, 0x7A, "10x"), (0x7B, 0x8F, "12x"), (0x90, 0xAF, "23x"),
        (0xB0, 0xCF, "12x"), (0xD0, 0xD7, "22s"), (0xD8, 0xE2, "22b"),
        (0xE3, 0xF9, "10x"),
        # 038+ opcodes; walked by width, never decoded
        (0xFA, 0xFA, "45cc"), (0xFB, 0xFB, "4rcc"), (0xFC, 0xFC, "35c"),
        (0xFD, 0xFD, "3rc"), (0xFE, 0xFF, "21c"),
    ]
    for lo, hi, name in spans:
        for op in range(lo, hi + 1):
            fmt[op] = name
    return tuple(fmt)


OPCODE_FORMATS = _build_formats()
OPCODE_UNITS = tuple(FORMAT_UNITS[f] for f in OPCODE_FORMATS)

NOP = 0x00
RETURN_VOID = 0x0E
CONST_STRING = 0x1A
CONST_STRING_JUMBO = 0x1B
CONST_CLASS = 0x1C

INVOKE_STYLES = ("virtual", "super", "direct", "static", "interface")
INVOKE_OPCODES = {0x6E + i: s for i, s in enumerate(INVOKE_STYLES)}
INVOKE_RANGE_OPCODES = {0x74 + i: s for i, s in enumerate(INVOKE_STYLES)}
INVOKE_OPCODE_FOR = {s: op for op, s in INVOKE_OPCODES.items()}
INVOKE_RANGE_OPCODE_FOR = {s: op for op, s in INVOKE_RANGE_OPCODES.items()}

# pseudo-opcode idents carried in the high byte of a nop unit
PACKED_SWITCH_PAYLOAD = 0x0100
SPARSE_SWITCH_PAYLOAD = 0x0200
FILL_ARRAY_DATA_PAYLOAD = 0x0300


def payload_units(insns, pos):
    """Width in code units of the payload starting at ``insns[pos]``, or None.

    ``insns`` is a sequence of 16-bit code units.
    """
    ident = insns[pos]
    if ident == PACKED_SWITCH_PAYLOAD:
        size = insns[pos + 1]
        return 4 + size * 2
    if ident == SPARSE_SWITCH_PAYLOAD:
        size = insns[pos + 1]
        return 2 + size * 4
    if ident == FILL_ARRAY_DATA_PAYLOAD:
        width = insns[pos + 1]
        size = insns[pos + 2] | (insns[pos + 3] << 16)
        return 4 + (size * width + 1) // 2
    return None
