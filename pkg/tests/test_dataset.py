import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from malvis.dataset import (
    MALIMG_TABLE,
    CorpusIndex,
    SampleRecord,
    SplitSpec,
    batch_iter,
    class_stats,
    class_stats_csv,
    load_gray,
    read_manifest,
    resize,
    scan_corpus,
    split_counts,
    stratified_split,
    to_single_channel,
    to_tensor,
    write_manifest,
)
from malvis.errors import EmptyCorpus, FamilyTooSmall, UnreadableImage
from malvis.pe import GrayImage, write_pgm

from conftest import write_corpus


def fake_index(counts):
    fams = sorted(counts)
    samples = [SampleRecord(f"{f}/{i:05d}.png", f, fams.index(f)) for f in fams for i in range(counts[f])]
    return CorpusIndex(tuple(fams), tuple(samples))


def test_scan_two_families(small_corpus):
    idx = scan_corpus(small_corpus)
    assert idx.families == ("a_fam", "b_fam")
    assert [idx.counts[f] for f in idx.families] == [3, 2]
    assert [s.family_id for s in idx.samples] == [0, 0, 0, 1, 1]
    assert [s.path for s in idx.samples] == sorted(s.path for s in idx.samples)


def test_scan_deterministic(small_corpus):
    assert scan_corpus(small_corpus) == scan_corpus(small_corpus)


def test_scan_empty(tmp_path):
    with pytest.raises(EmptyCorpus):
        scan_corpus(tmp_path)
    with pytest.raises(EmptyCorpus):
        scan_corpus(tmp_path / "missing")


def test_scan_reports_unreadable_path(small_corpus):
    bad = os.path.join(small_corpus, "a_fam", "zzz.pgm")
    with open(bad, "wb") as fh:
        fh.write(b"P5\n9 9\n255\n\x00")
    with pytest.raises(UnreadableImage) as info:
        scan_corpus(small_corpus)
    assert info.value.path == bad


def test_load_gray_pgm_round_trip(tmp_path):
    img = GrayImage.from_array(np.arange(12, dtype=np.uint8).reshape(3, 4))
    write_pgm(img, tmp_path / "x.pgm")
    assert load_gray(tmp_path / "x.pgm") == img


def test_load_gray_png_and_rgb(tmp_path):
    Image.fromarray(np.full((4, 5), 77, np.uint8)).save(tmp_path / "g.png")
    assert np.all(load_gray(tmp_path / "g.png").pixels == 77)
    Image.fromarray(np.full((4, 5, 3), 200, np.uint8)).save(tmp_path / "c.png")
    assert np.all(load_gray(tmp_path / "c.png").pixels == 200)


def test_luma_rule_rounds_half_up():
    px = np.array([[[0, 0, 1], [0, 1, 1], [1, 1, 1], [255, 255, 254]]], dtype=np.uint8)
    # sums 1, 2, 3, 764 -> /3 = 0.33, 0.67, 1, 254.67
    assert to_single_channel(px).tolist() == [[0, 1, 1, 255]]


def test_load_gray_truncated(tmp_path):
    Image.fromarray(np.zeros((20, 20), np.uint8)).save(tmp_path / "t.png")
    blob = (tmp_path / "t.png").read_bytes()
    (tmp_path / "t.png").write_bytes(blob[: len(blob) // 2])
    with pytest.raises(UnreadableImage):
        load_gray(tmp_path / "t.png")
    (tmp_path / "t.pgm").write_bytes(b"P5\n4 4\n255\n\0\0")
    with pytest.raises(UnreadableImage):
        load_gray(tmp_path / "t.pgm")


def naive_bilinear(src, th, tw):
    # independent float evaluation of corner-aligned bilinear + round-half-up
    h, w = src.shape
    out = np.zeros((th, tw), dtype=np.int64)
    for i in range(th):
        for j in range(tw):
            y = i * (h - 1) / (th - 1) if th > 1 else 0.0
            x = j * (w - 1) / (tw - 1) if tw > 1 else 0.0
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = y - y0, x - x0
            v = (src[y0, x0] * (1 - fy) * (1 - fx) + src[y0, x1] * (1 - fy) * fx
                 + src[y1, x0] * fy * (1 - fx) + src[y1, x1] * fy * fx)
            out[i, j] = int(np.floor(v + 0.5 + 1e-9))
    return out


def test_resize_identity():
    img = GrayImage.from_array(np.array([[0, 255], [0, 255]], np.uint8))
    assert resize(img, 2, 2) == img


def test_resize_midpoint_rounds_up():
    img = GrayImage.from_array(np.array([[0, 255]], np.uint8))
    assert resize(img, 1, 3).pixels.tolist() == [[0, 128, 255]]


def test_resize_to_224():
    img = GrayImage.from_array(np.random.default_rng(0).integers(0, 256, (300, 64), dtype=np.uint8))
    out = resize(img, 224, 224)
    assert (out.height, out.width) == (224, 224)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**31))
def test_resize_matches_naive(h, w, th, tw, seed):
    src = np.random.default_rng(seed).integers(0, 256, (h, w), dtype=np.uint8)
    got = resize(GrayImage.from_array(src), th, tw).pixels
    assert got.tolist() == naive_bilinear(src.astype(np.float64), th, tw).tolist()


def test_to_tensor():
    img = GrayImage.from_array(np.array([[0, 255], [51, 102]], np.uint8))
    t1 = to_tensor(img, 1)
    assert t1.shape == (1, 2, 2) and t1[0, 0, 1] == 1.0 and t1[0, 1, 0] == pytest.approx(0.2)
    t3 = to_tensor(img, 3)
    assert t3.shape == (3, 2, 2)
    assert np.array_equal(t3[0], t3[1]) and np.array_equal(t3[1], t3[2])
    assert to_tensor(GrayImage.from_array(np.zeros((224, 224), np.uint8)), 1).shape == (1, 224, 224)
    with pytest.raises(ValueError):
        to_tensor(img, 2)


@pytest.mark.parametrize("n, expected", [(100, (70, 15, 15)), (81, (57, 12, 12)), (3, (3, 0, 0)), (2950, (2064, 443, 443))])
def test_split_counts(n, expected):
    # 81: 0.15*81 = 12.15 -> 12 each; train takes 81 - 24 = 57
    # 2950: 0.15*2950 = 442.5 -> 443 (half rounds up); train 2950 - 886 = 2064
    assert split_counts(n, SplitSpec()) == expected


def test_stratified_split_partition_and_determinism():
    idx = fake_index({"x": 100, "y": 81, "z": 10})
    spec = SplitSpec(0.7, 0.15, 0.15, seed=42)
    tr, va, te = stratified_split(idx, spec)
    assert [tr.counts["y"], va.counts["y"], te.counts["y"]] == [57, 12, 12]
    paths = [s.path for part in (tr, va, te) for s in part.samples]
    assert sorted(paths) == sorted(s.path for s in idx.samples)
    assert len(set(paths)) == len(paths)
    assert stratified_split(idx, spec) == (tr, va, te)
    other = stratified_split(idx, SplitSpec(0.7, 0.15, 0.15, seed=43))
    assert other != (tr, va, te)


def test_split_family_too_small():
    with pytest.raises(FamilyTooSmall):
        stratified_split(fake_index({"x": 10, "y": 2}), SplitSpec())


def test_split_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec(0.5, 0.2, 0.2)
    with pytest.raises(ValueError):
        SplitSpec(1.0, 0.0, 0.0)


def test_class_stats():
    idx = fake_index({"Skintrim.N": 81, "Allaple.A": 2950})
    rows = class_stats(idx)
    assert rows[0] == ("Allaple.A", 2950, "Worm")
    assert rows[-1][:2] == ("TOTAL", 3031)
    assert class_stats(CorpusIndex((), ())) == [("TOTAL", 0, None)]
    csv_text = class_stats_csv(idx)
    assert csv_text.splitlines() == ["family,count", "Allaple.A,2950", "Skintrim.N,81", "TOTAL,3031"]


def test_published_table_shape():
    assert len(MALIMG_TABLE) == 25
    counts = dict((f, n) for f, n, _ in MALIMG_TABLE)
    assert counts["Allaple.A"] == 2950 and counts["Skintrim.N"] == 81


def test_manifest_round_trip(small_corpus, tmp_path):
    idx = scan_corpus(small_corpus)
    write_manifest(idx, tmp_path / "m.txt")
    again = read_manifest(tmp_path / "m.txt", idx.families, idx.root)
    assert again == idx


def test_batch_iter(tmp_path):
    rng = np.random.default_rng(0)
    root = write_corpus(tmp_path, {"a": [rng.integers(0, 256, (8, 8), dtype=np.uint8) for _ in range(6)],
                                   "b": [rng.integers(0, 256, (8, 8), dtype=np.uint8) for _ in range(4)]})
    idx = scan_corpus(root)
    batches = list(batch_iter(idx, 4, 7, 8, 8, 1))
    assert [len(y) for _, y in batches] == [4, 4, 2]
    assert batches[0][0].shape == (4, 1, 8, 8)
    labels = np.concatenate([y for _, y in batches])
    assert sorted(labels.tolist()) == [0] * 6 + [1] * 4
    again = list(batch_iter(idx, 4, 7, 8, 8, 1))
    assert all(np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1]) for a, b in zip(batches, again))
    # every sample exactly once: images are distinct, so compare the multiset of tensors
    seen = np.concatenate([x for x, _ in batches]).reshape(10, -1)
    direct = np.concatenate([x for x, _ in batch_iter(idx, 10, None, 8, 8, 1)]).reshape(10, -1)
    assert sorted(r.tobytes() for r in seen) == sorted(r.tobytes() for r in direct)


def test_batch_iter_order_independent_of_threads(tmp_path, monkeypatch):
    rng = np.random.default_rng(2)
    root = write_corpus(tmp_path, {"a": [rng.integers(0, 256, (6, 6), dtype=np.uint8) for _ in range(9)]})
    idx = scan_corpus(root)
    monkeypatch.setenv("MALVIS_THREADS", "1")
    one = [x for x, _ in batch_iter(idx, 4, 3, 6, 6, 3)]
    monkeypatch.setenv("MALVIS_THREADS", "4")
    four = [x for x, _ in batch_iter(idx, 4, 3, 6, 6, 3)]
    assert all(np.array_equal(a, b) for a, b in zip(one, four))
