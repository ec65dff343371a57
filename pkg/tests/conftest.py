import os

import numpy as np
import pytest

from malvis.pe import GrayImage, write_pgm


def write_corpus(root, families):
    """``families`` maps family name -> list of 2-D uint8 arrays; writes PGM files."""
    for fam, images in families.items():
        d = os.path.join(root, fam)
        os.makedirs(d, exist_ok=True)
        for i, arr in enumerate(images):
            write_pgm(GrayImage.from_array(arr), os.path.join(d, f"{i:04d}.pgm"))
    return str(root)


def separable_images(n_per_class, size=16, seed=0):
    """Two classes split by brightness: class a in [0, 100], class b in [155, 255]."""
    rng = np.random.default_rng(seed)
    dark = [rng.integers(0, 101, (size, size), dtype=np.uint8) for _ in range(n_per_class)]
    bright = [rng.integers(155, 256, (size, size), dtype=np.uint8) for _ in range(n_per_class)]
    return {"a_dark": dark, "b_bright": bright}


def texture_images(n_families, n_per_family, size=32, seed=0):
    """Families that differ in stripe period/orientation, plus noise."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    out = {}
    for f in range(n_families):
        period = 2 + f % 5
        angle = (f // 5) * np.pi / 5
        base = 127.5 + 100 * np.sin(2 * np.pi * (xx * np.cos(angle) + yy * np.sin(angle)) / period)
        imgs = []
        for _ in range(n_per_family):
            noisy = base + rng.normal(0, 25, base.shape)
            imgs.append(np.clip(noisy, 0, 255).astype(np.uint8))
        out[f"fam{f:02d}"] = imgs
    return out


@pytest.fixture
def small_corpus(tmp_path):
    rng = np.random.default_rng(1)
    fams = {"b_fam": [rng.integers(0, 256, (5, 7), dtype=np.uint8) for _ in range(2)],
            "a_fam": [rng.integers(0, 256, (6, 4), dtype=np.uint8) for _ in range(3)]}
    return write_corpus(tmp_path / "corpus", fams)


# -- acceptance summary: one line per criterion at the end of the run ---------

_MEASURES = {}


@pytest.fixture
def measure(request):
    """Record the measured quantity for an acceptance criterion."""
    def note(text):
        _MEASURES[request.node.nodeid] = text
    return note


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid or rep.when not in ("call", "setup"):
                continue
            if outcome == "skipped":
                detail = rep.longrepr[2] if isinstance(rep.longrepr, tuple) else str(rep.longrepr)
            else:
                detail = _MEASURES.get(nodeid, "")
            number = int(nodeid.split("test_criterion_")[1].split("_")[0])
            label = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[outcome]
            lines.append((number, f"criterion {number:2d}: {label}  {detail}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
