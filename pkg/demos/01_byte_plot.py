# %% [markdown]
# # From a binary to a byte-plot image
# Every byte becomes one pixel. The width comes from a size schedule,
# the last row is padded with black.

# %%
import os
import tempfile

import numpy as np

from malvis.pe import build_minimal_pe, choose_width, parse_sections, read_pgm, render_image, write_pgm

# %%
# a small PE with the four usual sections: code, constants, data, resources
rng = np.random.default_rng(0)
sections = [
    (".text", rng.integers(0, 256, 3000, dtype=np.uint8).tobytes(), 0x60000020),
    (".rdata", b"Hello, world\0" * 40, 0x40000040),
    (".data", bytes(600), 0xC0000040),
    (".rsrc", bytes(range(256)) * 6, 0x40000040),
]
blob = build_minimal_pe(sections)
len(blob)

# %%
for s in parse_sections(blob):
    print(f"{s.name:8s} offset={s.file_offset:6d} size={s.file_size:6d} flags=0x{s.characteristics:08x}")

# %%
# < 10 KB -> 32 pixels wide
width = choose_width(len(blob))
img = render_image(blob, width)
print(width, img.height, "rows;", img.width * img.height - len(blob), "padding pixels")

# %%
# sections show up as horizontal bands: noisy code, repeated strings, a zero block, a ramp
for s in parse_sections(blob):
    top, bottom = s.file_offset // width, (s.file_offset + s.file_size) // width
    band = img.pixels[top:bottom]
    print(f"{s.name:8s} rows {top:3d}-{bottom:3d} mean {band.mean():6.1f} std {band.std():6.1f}")

# %%
out = os.path.join(tempfile.mkdtemp(), "sample.pgm")
write_pgm(img, out)
assert read_pgm(out) == img  # round trip is bit exact
print("wrote", out, os.path.getsize(out), "bytes")
