"""Independent walk over a container's raw bytes (no nrt code involved)."""
import struct


def records(data: bytes):
    """(tag, offset, payload) for every record between header and key table."""
    magic, version, dir_offset, tag = struct.unpack_from("<4sIQ16s", data)
    assert magic == b"NRT1"
    pos = 32
    end = dir_offset or len(data)
    out = []
    while pos < end:
        t, n = struct.unpack_from("<BQ", data, pos)
        out.append((t, pos, data[pos + 9:pos + 9 + n]))
        pos += 9 + n
    return out
