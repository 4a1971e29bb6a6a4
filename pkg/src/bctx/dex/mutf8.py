"""Modified UTF-8 as used by DEX string_data_item."""


class BadMutf8(ValueError):
    pass


def decode(data: bytes) -> str:
    """Decode MUTF-8 bytes (without the trailing NUL terminator)."""
    units = []
    i = 0
    n = len(data)
    while i < n:
        b = data[i]
        if b < 0x80:
            if b == 0:
                raise BadMutf8(f"raw NUL at {i}")
            units.append(b)
            i += 1
        elif b & 0xE0 == 0xC0:
            if i + 1 >= n or data[i + 1] & 0xC0 != 0x80:
                raise BadMutf8(f"truncated 2-byte sequence at {i}")
            units.append(((b & 0x1F) << 6) | (data[i + 1] & 0x3F))
            i += 2
        elif b & 0xF0 == 0xE0:
            if i + 2 >= n or data[i + 1] & 0xC0 != 0x80 or data[i + 2] & 0xC0 != 0x80:
                raise BadMutf8(f"truncated 3-byte sequence at {i}")
            units.append(((b & 0x0F) << 12) | ((data[i + 1] & 0x3F) << 6) | (data[i + 2] & 0x3F))
            i += 3
        else:
            raise BadMutf8(f"invalid lead byte 0x{b:02x} at {i}")

    # join UTF-16 units, pairing surrogates
    out = []
    j = 0
    while j < len(units):
        u = units[j]
        if 0xD800 <= u < 0xDC00 and j + 1 < len(units) and 0xDC00 <= units[j + 1] < 0xE000:
            out.append(chr(0x10000 + ((u - 0xD800) << 10) + (units[j + 1] - 0xDC00)))
            j += 2
        else:
            out.append(chr(u))
            j += 1
    return "".join(out)


def encode(text: str) -> bytes:
    out = bytearray()
    for ch in text:
        cp = ord(ch)
        if cp >= 0x10000:
            cp -= 0x10000
            for unit in (0xD800 + (cp >> 10), 0xDC00 + (cp & 0x3FF)):
                out += _encode_unit(unit)
        else:
            out += _encode_unit(cp)
    return bytes(out)


def _encode_unit(u: int) -> bytes:
    if 0 < u < 0x80:
        return bytes([u])
    if u < 0x800:
        return bytes([0xC0 | (u >> 6), 0x80 | (u & 0x3F)])
    return bytes([0xE0 | (u >> 12), 0x80 | ((u >> 6) & 0x3F), 0x80 | (u & 0x3F)])


def utf16_length(text: str) -> int:
    return sum(2 if ord(c) >= 0x10000 else 1 for c in text)
