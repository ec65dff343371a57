import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from malvis.errors import EmptyInput, MalformedHeader, NotPE, SizeMismatch, Truncated, UnsupportedMaxval, ZeroSize
from malvis.pe import (
    GrayImage,
    build_minimal_pe,
    bytes_to_pixels,
    choose_width,
    parse_sections,
    read_pgm,
    render_image,
    write_pgm,
)


def handmade_pe():
    """One .text section at file offset 512, 1024 bytes, laid out field by field."""
    out = bytearray()
    out += b"MZ" + b"\0" * 58           # e_magic + rest of DOS header up to e_lfanew
    out += struct.pack("<I", 64)        # e_lfanew at 0x3C -> PE header right after
    assert len(out) == 64
    out += b"PE\0\0"
    out += struct.pack("<H", 0x14C)     # Machine
    out += struct.pack("<H", 1)         # NumberOfSections
    out += struct.pack("<I", 0)         # TimeDateStamp
    out += struct.pack("<I", 0)         # PointerToSymbolTable
    out += struct.pack("<I", 0)         # NumberOfSymbols
    out += struct.pack("<H", 0)         # SizeOfOptionalHeader
    out += struct.pack("<H", 0x0102)    # Characteristics
    out += b".text\0\0\0"               # Name
    out += struct.pack("<I", 1024)      # VirtualSize
    out += struct.pack("<I", 0x1000)    # VirtualAddress
    out += struct.pack("<I", 1024)      # SizeOfRawData
    out += struct.pack("<I", 512)       # PointerToRawData
    out += struct.pack("<II", 0, 0)     # PointerToRelocations, PointerToLinenumbers
    out += struct.pack("<HH", 0, 0)     # NumberOfRelocations, NumberOfLinenumbers
    out += struct.pack("<I", 0x60000020)  # Characteristics: code | execute | read
    out += b"\0" * (512 - len(out))
    out += bytes(range(256)) * 4
    return bytes(out)


def test_handmade_fixture_layout():
    blob = handmade_pe()
    assert len(blob) == 1536
    assert blob[64:68] == b"PE\0\0"
    # section header starts right after the 20-byte COFF header
    assert blob[88:93] == b".text"


def test_parse_single_section():
    (sec,) = parse_sections(handmade_pe())
    assert (sec.name, sec.file_offset, sec.file_size, sec.characteristics) == (".text", 512, 1024, 0x60000020)


def test_four_standard_sections():
    names = [".text", ".rdata", ".data", ".rsrc"]
    blob = build_minimal_pe([(n, bytes([i + 1]) * 300, 0x40000040) for i, n in enumerate(names)])
    secs = parse_sections(blob)
    assert [s.name for s in secs] == names
    for i, s in enumerate(secs):
        assert blob[s.file_offset : s.file_offset + s.file_size] == bytes([i + 1]) * 300


def test_nonstandard_names_reported_verbatim():
    blob = build_minimal_pe([(".tex", b"\x90" * 10, 0), ("UPX0", b"", 0)])
    assert [s.name for s in parse_sections(blob)] == [".tex", "UPX0"]


@pytest.mark.parametrize("blob", [b"", b"M", b"ZM" + b"\0" * 100])
def test_not_pe_without_mz(blob):
    with pytest.raises(NotPE):
        parse_sections(blob)


def test_not_pe_without_signature():
    blob = bytearray(handmade_pe())
    blob[64:68] = b"NE\0\0"
    with pytest.raises(NotPE):
        parse_sections(bytes(blob))


def test_truncated_inputs():
    blob = handmade_pe()
    with pytest.raises(Truncated):
        parse_sections(blob[:40])          # DOS header cut short
    with pytest.raises(Truncated):
        parse_sections(blob[:100])         # section table cut short
    with pytest.raises(Truncated):
        parse_sections(blob[:1000])        # section data past end
    bad = bytearray(blob)
    bad[0x3C:0x40] = struct.pack("<I", 10_000)
    with pytest.raises(Truncated):
        parse_sections(bytes(bad))


def test_bytes_to_pixels_examples():
    assert bytes_to_pixels(b"\x00").tolist() == [0]
    assert bytes_to_pixels(b"\xff").tolist() == [255]
    assert bytes_to_pixels(b"ABC").tolist() == [65, 66, 67]


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=512))
def test_bytes_to_pixels_identity(data):
    px = bytes_to_pixels(data)
    assert len(px) == len(data)
    assert all(int(p) == b for p, b in zip(px, data))


@pytest.mark.parametrize(
    "size, width",
    [(1, 32), (5_000, 32), (10 * 1024 - 1, 32), (10 * 1024, 64), (150_000, 384), (2_000_000, 1024), (1000 * 1024, 1024)],
)
def test_choose_width(size, width):
    assert choose_width(size) == width


def test_choose_width_zero():
    with pytest.raises(ZeroSize):
        choose_width(0)


def test_render_exact_fit():
    img = render_image(bytes([10, 20, 30, 40, 50, 60]), 3)
    assert (img.width, img.height) == (3, 2)
    assert img.pixels.tolist() == [[10, 20, 30], [40, 50, 60]]


def test_render_pads_last_row_with_zero():
    img = render_image(bytes([1, 2, 3, 4, 5]), 3)
    assert img.pixels.tolist() == [[1, 2, 3], [4, 5, 0]]


def test_render_empty():
    with pytest.raises(EmptyInput):
        render_image(b"", 4)


def test_render_whole_file_includes_headers():
    blob = handmade_pe()
    img = render_image(blob, choose_width(len(blob)))
    assert img.width == 32 and img.height == 48
    assert img.pixels[0, :2].tolist() == [ord("M"), ord("Z")]


def test_pgm_minimal_encoding():
    buf = io.BytesIO()
    n = write_pgm(GrayImage(1, 1, np.zeros(1, np.uint8)), buf)
    assert buf.getvalue() == b"P5\n1 1\n255\n\x00"
    assert n == 12


def test_pgm_round_trip_file(tmp_path):
    rng = np.random.default_rng(3)
    img = GrayImage.from_array(rng.integers(0, 256, (48, 64), dtype=np.uint8))
    path = tmp_path / "x.pgm"
    write_pgm(img, path)
    assert read_pgm(path) == img


def test_pgm_errors():
    with pytest.raises(SizeMismatch):
        read_pgm(io.BytesIO(b"P5\n4 4\n255\n" + b"\0" * 15))
    with pytest.raises(UnsupportedMaxval):
        read_pgm(io.BytesIO(b"P5\n1 1\n65535\n\0\0"))
    with pytest.raises(MalformedHeader):
        read_pgm(io.BytesIO(b"P2\n1 1\n255\n0"))
    with pytest.raises(MalformedHeader):
        read_pgm(io.BytesIO(b"P5\n1\n"))


def test_pgm_header_comments_accepted():
    img = read_pgm(io.BytesIO(b"P5\n# made by hand\n2 1\n255\n\x07\x08"))
    assert img.pixels.tolist() == [[7, 8]]
