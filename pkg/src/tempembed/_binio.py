"""Little-endian struct helpers for the binary artifact formats."""

import struct

from .errors import FormatError

TILE = struct.Struct("<BII")


class Reader:
    """Sequential reader over an in-memory buffer that fails loudly on truncation."""

    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.what}: truncated at byte {self.pos} (needed {n} more)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def magic(self, expected: bytes):
        got = self.take(len(expected))
        if got != expected:
            raise FormatError(f"{self.what}: bad magic {got!r}, expected {expected!r}")

    def version(self, supported):
        (v,) = self.unpack("<H")
        if v != supported:
            raise FormatError(f"{self.what}: unsupported version {v} (this build reads {supported})")
        return v

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(f"{self.what}: {len(self.data) - self.pos} trailing bytes")
