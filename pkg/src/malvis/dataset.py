"""Family-labelled image corpora (Malimg directory layout) and batching.

Corpus layout is ``<root>/<FamilyName>/<file>``. Family ids are assigned by
ascending lexicographic family name.
"""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .errors import EmptyCorpus, FamilyTooSmall, MalvisError, UnreadableImage
from .pe import GrayImage, decode_pgm
from .rng import SplitMix64

# Family table of the public Malimg release as published: (family, samples, kind).
MALIMG_TABLE = (
    ("Adialer.C", 123, "Dialer"),
    ("Agent.FYI", 117, "Backdoor"),
    ("Allaple.A", 2950, "Worm"),
    ("Allaple.L", 1592, "Worm"),
    ("Alueron.gen!J", 199, "Trojan"),
    ("Autorun.K", 107, "Worm AutoIT"),
    ("C2LOP.gen!g", 201, "Trojan"),
    ("C2LOP.p", 147, "Trojan"),
    ("Dialplatform.B", 178, "Dialer"),
    ("Donoto.A", 163, "Trojan Downloader"),
    ("Fakerean", 382, "Rouge"),
    ("Instaccess", 432, "Dialer"),
    ("Lolyada.AA1", 214, "PWS"),
    ("Lolyada.AA2", 185, "PWS"),
    ("Lolyada.AA3", 124, "PWS"),
    ("Lolyada.AT", 160, "PWS"),
    ("Malex.gen!J", 137, "Trojan"),
    ("Obfuscator.AD", 143, "Trojan Downloader"),
    ("RBot!gen", 159, "Backdoor"),
    ("Skintrim.N", 81, "Trojan"),
    ("Swizzor.gen!E", 129, "Trojan Downloader"),
    ("Swizzor.gen!I", 133, "Trojan Downloader"),
    ("VB.AT", 409, "Worm"),
    ("Wintrim.BX", 98, "Trojan Downloader"),
    ("Yuner.A", 801, "Worm"),
)
MALIMG_TOTAL = 9342

# published spelling -> directory name used by the distributed corpus
MALIMG_DIR_ALIASES = {
    "C2LOP.p": "C2LOP.P",
    "Donoto.A": "Dontovo.A",
    "Instaccess": "Instantaccess",
    "Lolyada.AA1": "Lolyda.AA1",
    "Lolyada.AA2": "Lolyda.AA2",
    "Lolyada.AA3": "Lolyda.AA3",
    "Lolyada.AT": "Lolyda.AT",
    "RBot!gen": "Rbot!gen",
}


def family_kind(name: str) -> str | None:
    canonical = {MALIMG_DIR_ALIASES.get(f, f).lower(): k for f, _, k in MALIMG_TABLE}
    canonical.update({f.lower(): k for f, _, k in MALIMG_TABLE})
    return canonical.get(name.lower())


@dataclass(frozen=True)
class SampleRecord:
    path: str
    family: str
    family_id: int


@dataclass(frozen=True)
class CorpusIndex:
    families: tuple[str, ...]
    samples: tuple[SampleRecord, ...]
    root: str | None = None
    counts: dict = field(init=False, compare=False)

    def __post_init__(self):
        counts = {f: 0 for f in self.families}
        for s in self.samples:
            counts[s.family] += 1
        object.__setattr__(self, "counts", counts)

    def __len__(self):
        return len(self.samples)

    @property
    def num_classes(self) -> int:
        return len(self.families)

    def labels(self) -> np.ndarray:
        return np.array([s.family_id for s in self.samples], dtype=np.int64)

    def subset(self, samples) -> "CorpusIndex":
        return CorpusIndex(self.families, tuple(sorted(samples, key=lambda s: s.path)), self.root)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    val_fraction: float = 0.15
    test_fraction: float = 0.15
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(not 0.0 < f < 1.0 for f in fr):
            raise ValueError(f"split fractions must lie in (0, 1), got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fr)!r}")


# -- decoding ----------------------------------------------------------------

Decoder = Callable[[bytes], np.ndarray]
_DECODERS: dict[str, Decoder] = {}


def register_decoder(extension: str, decoder: Decoder) -> None:
    """Register a raster decoder for a file extension.

    A decoder takes the raw file bytes and returns a uint8 array of shape
    (H, W) or (H, W, channels).
    """
    _DECODERS[extension.lower().lstrip(".")] = decoder


def _pillow_decoder(blob: bytes) -> np.ndarray:
    from PIL import Image

    with Image.open(io.BytesIO(blob)) as im:
        im.load()
        if im.mode in ("L", "RGB"):
            return np.asarray(im, dtype=np.uint8)
        if im.mode == "LA":
            return np.asarray(im.getchannel(0), dtype=np.uint8)
        if im.mode in ("I;16", "I;16B", "I", "F"):
            raise ValueError(f"unsupported bit depth (mode {im.mode})")
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


for _ext in ("png", "jpg", "jpeg", "bmp", "gif", "tif", "tiff"):
    register_decoder(_ext, _pillow_decoder)
register_decoder("pgm", lambda blob: decode_pgm(blob).pixels)

IMAGE_EXTENSIONS = frozenset(_DECODERS)


def to_single_channel(array: np.ndarray) -> np.ndarray:
    """Collapse (H, W, C) to (H, W) with round((r + g + b) / 3), halves rounding up."""
    a = np.asarray(array)
    if a.ndim == 2:
        return a.astype(np.uint8, copy=False)
    if a.ndim != 3 or a.shape[2] not in (3, 4):
        raise ValueError(f"cannot convert array of shape {a.shape} to grayscale")
    total = a[..., :3].astype(np.int64).sum(axis=2)
    return ((2 * total + 3) // 6).astype(np.uint8)


def load_gray(path) -> GrayImage:
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower().lstrip(".")
    decoder = _DECODERS.get(ext)
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
        if decoder is None:
            # sniff binary PGM regardless of extension
            if blob[:2] != b"P5":
                raise ValueError(f"no decoder registered for extension {ext!r}")
            decoder = _DECODERS["pgm"]
        return GrayImage.from_array(to_single_channel(decoder(blob)))
    except (OSError, ValueError, MalvisError, SyntaxError) as exc:
        raise UnreadableImage(path, str(exc)) from exc
    except Exception as exc:  # decoder plugins raise their own exception types
        raise UnreadableImage(path, f"{type(exc).__name__}: {exc}") from exc


# -- corpus ------------------------------------------------------------------

def _is_image(name: str) -> bool:
    return os.path.splitext(name)[1].lower().lstrip(".") in IMAGE_EXTENSIONS


def _validate(path: str) -> None:
    ext = os.path.splitext(path)[1].lower().lstrip(".")
    try:
        if ext == "pgm":
            with open(path, "rb") as fh:
                decode_pgm(fh.read())
        else:
            from PIL import Image

            with Image.open(path) as im:
                im.verify()
    except Exception as exc:
        raise UnreadableImage(path, str(exc)) from exc


def scan_corpus(root, verify: bool = True) -> CorpusIndex:
    """Index ``root/<family>/<image>``; paths are stored relative to ``root``.

    With ``verify`` every file is checked to be decodable (header-level for
    Pillow formats, full decode for PGM).
    """
    root = os.fspath(root)
    if not os.path.isdir(root):
        raise EmptyCorpus(f"corpus root {root!r} is not a directory")
    families = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    ids = {f: i for i, f in enumerate(families)}
    samples = []
    for fam in families:
        for dirpath, dirnames, filenames in os.walk(os.path.join(root, fam)):
            dirnames.sort()
            for name in sorted(filenames):
                if not _is_image(name):
                    continue
                full = os.path.join(dirpath, name)
                if verify:
                    _validate(full)
                rel = Path(os.path.relpath(full, root)).as_posix()
                samples.append(SampleRecord(rel, fam, ids[fam]))
    if not samples:
        raise EmptyCorpus(f"no images found under {root!r}")
    samples.sort(key=lambda s: s.path)
    return CorpusIndex(tuple(families), tuple(samples), root)


def sample_path(index: CorpusIndex, sample: SampleRecord) -> str:
    if index.root is None or os.path.isabs(sample.path):
        return sample.path
    return os.path.join(index.root, sample.path)


def class_stats(index: CorpusIndex) -> list[tuple[str, int, str | None]]:
    """(family, count, kind) rows sorted by family, then ("TOTAL", n, None)."""
    rows = [(f, index.counts[f], family_kind(f)) for f in sorted(index.families)]
    rows.append(("TOTAL", len(index.samples), None))
    return rows


def class_stats_csv(index: CorpusIndex) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["family", "count"])
    for fam, count, _ in class_stats(index):
        w.writerow([fam, count])
    return buf.getvalue()


def balanced_subsample(index: CorpusIndex, per_family: int, seed: int) -> CorpusIndex:
    """At most ``per_family`` samples from each family, chosen by a seeded shuffle."""
    rng = SplitMix64(seed)
    chosen = []
    for fam in index.families:
        members = [s for s in index.samples if s.family == fam]
        rng.shuffle(members)
        chosen.extend(members[:per_family])
    return index.subset(chosen)


# -- splitting ---------------------------------------------------------------

def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_counts(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    n_val = _round_half_up(spec.val_fraction * n)
    n_test = _round_half_up(spec.test_fraction * n)
    return n - n_val - n_test, n_val, n_test


def stratified_split(index: CorpusIndex, spec: SplitSpec) -> tuple[CorpusIndex, CorpusIndex, CorpusIndex]:
    """Per-family split; val/test sizes are round-half-up of fraction x count, train takes the rest.

    One generator seeded with ``spec.seed`` shuffles each family's samples
    (lexicographic path order, families in id order) before slicing.
    """
    rng = SplitMix64(spec.seed)
    parts: tuple[list, list, list] = ([], [], [])
    for fam in index.families:
        members = sorted((s for s in index.samples if s.family == fam), key=lambda s: s.path)
        if not members:
            continue
        if len(members) < 3:
            raise FamilyTooSmall(f"family {fam!r} has {len(members)} samples, need at least 3")
        n_train, n_val, _ = split_counts(len(members), spec)
        rng.shuffle(members)
        parts[0].extend(members[:n_train])
        parts[1].extend(members[n_train : n_train + n_val])
        parts[2].extend(members[n_train + n_val :])
    return tuple(index.subset(p) for p in parts)


def write_manifest(index: CorpusIndex, destination) -> None:
    """One ``<relative path>\\t<family>`` line per sample, UTF-8."""
    lines = "".join(f"{s.path}\t{s.family}\n" for s in index.samples)
    with open(destination, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(lines)


def read_manifest(path, families, root=None) -> CorpusIndex:
    ids = {f: i for i, f in enumerate(families)}
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                rel, fam = line.rsplit("\t", 1)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected '<path>\\t<family>'") from None
            if fam not in ids:
                raise ValueError(f"{path}:{lineno}: unknown family {fam!r}")
            samples.append(SampleRecord(rel, fam, ids[fam]))
    return CorpusIndex(tuple(families), tuple(samples), root)


# -- tensors -----------------------------------------------------------------

def resize(image: GrayImage, target_h: int, target_w: int) -> GrayImage:
    """Bilinear resize with corner-aligned sampling and round-half-up.

    Output pixel (i, j) samples source coordinate
    (i * (H - 1) / (target_h - 1), j * (W - 1) / (target_w - 1)); a target
    extent of 1 samples coordinate 0. Weights are exact rationals, so the
    result is bit-reproducible.
    """
    if target_h < 1 or target_w < 1:
        raise ValueError("target dimensions must be >= 1")
    src = image.pixels.astype(np.int64)
    h, w = src.shape
    if (h, w) == (target_h, target_w):
        return image

    def axis(n_in, n_out):
        den = max(n_out - 1, 1)
        num = np.arange(n_out, dtype=np.int64) * (n_in - 1) if n_out > 1 else np.zeros(1, np.int64)
        lo = num // den
        frac = num - lo * den
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, frac, den

    y0, y1, fy, dy = axis(h, target_h)
    x0, x1, fx, dx = axis(w, target_w)
    top = src[y0][:, x0] * (dx - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (dx - fx) + src[y1][:, x1] * fx
    acc = top * (dy - fy)[:, None] + bot * fy[:, None]
    d = dx * dy
    out = (2 * acc + d) // (2 * d)
    return GrayImage(target_w, target_h, out.astype(np.uint8))


def to_tensor(image: GrayImage, channels: int = 1) -> np.ndarray:
    if channels not in (1, 3):
        raise ValueError("channels must be 1 or 3")
    plane = image.pixels.astype(np.float64) / 255.0
    return np.repeat(plane[None, :, :], channels, axis=0)


def worker_count() -> int:
    raw = os.environ.get("MALVIS_THREADS", "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return min(8, os.cpu_count() or 1)


def load_tensor(path, target_h: int, target_w: int, channels: int) -> np.ndarray:
    return to_tensor(resize(load_gray(path), target_h, target_w), channels)


def load_all(index: CorpusIndex, target_h, target_w, channels, order=None) -> np.ndarray:
    order = range(len(index.samples)) if order is None else order
    paths = [sample_path(index, index.samples[i]) for i in order]
    job = lambda p: load_tensor(p, target_h, target_w, channels)  # noqa: E731
    workers = worker_count()
    if workers > 1 and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            tensors = list(pool.map(job, paths))
    else:
        tensors = [job(p) for p in paths]
    if not tensors:
        return np.zeros((0, channels, target_h, target_w))
    return np.stack(tensors)


def batch_iter(
    index: CorpusIndex,
    batch_size: int,
    shuffle_seed: int | None,
    target_h: int,
    target_w: int,
    channels: int = 1,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """One epoch of (images (N, C, H, W), labels (N,)) batches.

    Order is ``SplitMix64(shuffle_seed).permutation`` of the index, or index
    order when ``shuffle_seed`` is None. The last batch may be short.
    Decoding may run on MALVIS_THREADS workers; order does not depend on it.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(index.samples)
    order = list(range(n)) if shuffle_seed is None else SplitMix64(shuffle_seed).permutation(n)
    labels = index.labels()
    for start in range(0, n, batch_size):
        chunk = order[start : start + batch_size]
        yield load_all(index, target_h, target_w, channels, chunk), labels[chunk]
