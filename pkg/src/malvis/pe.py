"""PE section tables, byte-plot rendering and binary PGM I/O.

A byte-plot maps every byte of a file to one 8-bit grayscale pixel, laid
out row-major at a width chosen from the file size. Only the handful of
PE/COFF fields needed to list sections are interpreted.
"""
from __future__ import annotations

import io
import math
import os
import re
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Union

import numpy as np

from .errors import EmptyInput, MalformedHeader, NotPE, SizeMismatch, Truncated, UnsupportedMaxval, ZeroSize

PathOrFile = Union[str, os.PathLike, BinaryIO]

DOS_HEADER_SIZE = 64
PE_OFFSET_FIELD = 0x3C
COFF_HEADER_SIZE = 20
SECTION_HEADER_SIZE = 40

KB = 1024
# (exclusive upper bound in bytes, width); sizes at or above the last bound get 1024
WIDTH_SCHEDULE = (
    (10 * KB, 32),
    (30 * KB, 64),
    (60 * KB, 128),
    (100 * KB, 256),
    (200 * KB, 384),
    (500 * KB, 512),
    (1000 * KB, 768),
)
MAX_WIDTH = 1024


@dataclass(frozen=True)
class SectionRecord:
    name: str
    file_offset: int
    file_size: int
    characteristics: int


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit grayscale raster, stored as a (height, width) uint8 array."""

    width: int
    height: int
    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if self.width < 1 or self.height < 1:
            raise SizeMismatch(f"image dimensions must be >= 1, got {self.width}x{self.height}")
        if px.size != self.width * self.height:
            raise SizeMismatch(f"{px.size} pixels for a {self.width}x{self.height} image")
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > 255):
                raise ValueError("pixel intensities must lie in [0, 255]")
            px = px.astype(np.uint8)
        px = np.ascontiguousarray(px.reshape(self.height, self.width))
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_array(cls, array) -> "GrayImage":
        a = np.asarray(array)
        if a.ndim != 2:
            raise SizeMismatch(f"expected a 2-D array, got shape {a.shape}")
        return cls(width=a.shape[1], height=a.shape[0], pixels=a)

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) and np.array_equal(
            self.pixels, other.pixels
        )

    __hash__ = None

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()


def parse_sections(file_bytes: bytes) -> list[SectionRecord]:
    """Read the section table: DOS header -> PE signature -> COFF header -> section headers.

    Raises NotPE when either magic is missing and Truncated when a header or
    a section's raw data runs past the end of the input.
    """
    data = memoryview(bytes(file_bytes))
    n = len(data)
    if n < 2 or data[:2] != b"MZ":
        raise NotPE("missing MZ magic")
    if n < DOS_HEADER_SIZE:
        raise Truncated(f"DOS header needs {DOS_HEADER_SIZE} bytes, file has {n}")
    (pe_off,) = struct.unpack_from("<I", data, PE_OFFSET_FIELD)
    if pe_off + 4 > n:
        raise Truncated(f"PE signature offset 0x{pe_off:x} lies past end of file")
    if data[pe_off : pe_off + 4] != b"PE\0\0":
        raise NotPE(f"no PE signature at offset 0x{pe_off:x}")
    coff = pe_off + 4
    if coff + COFF_HEADER_SIZE > n:
        raise Truncated("COFF header extends past end of file")
    _machine, nsections, _ts, _symptr, _nsyms, opt_size, _flags = struct.unpack_from("<HHIIIHH", data, coff)
    table = coff + COFF_HEADER_SIZE + opt_size
    if table + nsections * SECTION_HEADER_SIZE > n:
        raise Truncated(f"section table of {nsections} entries extends past end of file")

    sections = []
    for i in range(nsections):
        off = table + i * SECTION_HEADER_SIZE
        raw_name = bytes(data[off : off + 8])
        raw_size, raw_ptr = struct.unpack_from("<II", data, off + 16)
        (chars,) = struct.unpack_from("<I", data, off + 36)
        name = raw_name.rstrip(b"\0").decode("ascii", errors="replace")
        if raw_size and raw_ptr + raw_size > n:
            raise Truncated(f"section {name!r} data [{raw_ptr}, {raw_ptr + raw_size}) exceeds file length {n}")
        sections.append(SectionRecord(name, raw_ptr, raw_size, chars))
    return sections


def bytes_to_pixels(data: bytes) -> np.ndarray:
    """Each byte becomes one pixel of the same unsigned value."""
    return np.frombuffer(bytes(data), dtype=np.uint8).copy()


def choose_width(file_size: int) -> int:
    if file_size <= 0:
        raise ZeroSize("cannot choose a width for an empty file")
    for bound, width in WIDTH_SCHEDULE:
        if file_size < bound:
            return width
    return MAX_WIDTH


def render_image(data: bytes, width: int) -> GrayImage:
    """Lay bytes out row-major at ``width``; the last row is zero-padded."""
    if width < 1:
        raise ValueError("width must be >= 1")
    pixels = bytes_to_pixels(data)
    if pixels.size == 0:
        raise EmptyInput("cannot render an empty byte sequence")
    height = math.ceil(pixels.size / width)
    padded = np.zeros(width * height, dtype=np.uint8)
    padded[: pixels.size] = pixels
    return GrayImage(width, height, padded)


def encode_pgm(image: GrayImage) -> bytes:
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + image.tobytes()


def write_pgm(image: GrayImage, destination: PathOrFile) -> int:
    payload = encode_pgm(image)
    if hasattr(destination, "write"):
        destination.write(payload)
    else:
        with open(destination, "wb") as fh:
            fh.write(payload)
    return len(payload)


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def decode_pgm(blob: bytes) -> GrayImage:
    if blob[:2] != b"P5":
        raise MalformedHeader("not a binary PGM (missing P5 magic)")
    pos = 2
    values = []
    for _ in range(3):
        m = _TOKEN.match(blob, pos)
        if m is None or not m.group(1).isdigit():
            raise MalformedHeader("PGM header must carry width, height and maxval")
        values.append(int(m.group(1)))
        pos = m.end()
    if pos >= len(blob) or blob[pos : pos + 1] not in (b"\n", b" ", b"\t", b"\r"):
        raise MalformedHeader("PGM header must end with a single whitespace byte")
    pos += 1
    width, height, maxval = values
    if maxval != 255:
        raise UnsupportedMaxval(f"maxval {maxval} (only 255 is supported)")
    if width < 1 or height < 1:
        raise MalformedHeader(f"invalid dimensions {width}x{height}")
    payload = blob[pos:]
    if len(payload) != width * height:
        raise SizeMismatch(f"header declares {width}x{height}={width * height} bytes, payload has {len(payload)}")
    return GrayImage(width, height, np.frombuffer(payload, dtype=np.uint8))


def read_pgm(source: PathOrFile) -> GrayImage:
    if hasattr(source, "read"):
        blob = source.read()
    else:
        with open(source, "rb") as fh:
            blob = fh.read()
    return decode_pgm(blob)


def convert_file(path, width: int | None = None) -> GrayImage:
    """Render a whole file (headers included) as a byte-plot."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data:
        raise EmptyInput(f"{path} is empty")
    return render_image(data, width if width is not None else choose_width(len(data)))


def build_minimal_pe(sections, file_alignment: int = 0x200, optional_header_size: int = 0xE0) -> bytes:
    """Assemble a tiny PE image for tests and demos.

    ``sections`` is a sequence of ``(name, payload_bytes, characteristics)``.
    Section data is placed at file-aligned offsets after the headers.
    """
    nsec = len(sections)
    pe_off = 0x80
    headers_end = pe_off + 4 + COFF_HEADER_SIZE + optional_header_size + nsec * SECTION_HEADER_SIZE
    first = -(-headers_end // file_alignment) * file_alignment

    buf = io.BytesIO()
    dos = bytearray(pe_off)
    dos[0:2] = b"MZ"
    struct.pack_into("<I", dos, PE_OFFSET_FIELD, pe_off)
    buf.write(dos)
    buf.write(b"PE\0\0")
    buf.write(struct.pack("<HHIIIHH", 0x14C, nsec, 0, 0, 0, optional_header_size, 0x0102))
    opt = bytearray(optional_header_size)
    if optional_header_size >= 2:
        struct.pack_into("<H", opt, 0, 0x10B)
    buf.write(opt)

    offset = first
    placed = []
    for i, (name, payload, chars) in enumerate(sections):
        raw = name.encode("ascii")[:8].ljust(8, b"\0")
        size = len(payload)
        buf.write(raw)
        buf.write(struct.pack("<IIIIIIHHI", size, 0x1000 * (i + 1), size, offset, 0, 0, 0, 0, chars))
        placed.append((offset, payload))
        offset += -(-size // file_alignment) * file_alignment
    out = bytearray(buf.getvalue())
    out.extend(b"\0" * (first - len(out)))
    for off, payload in placed:
        out.extend(b"\0" * (off - len(out)))
        out[off : off + len(payload)] = payload
    return bytes(out)
