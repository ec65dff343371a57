"""Malware byte-plot imaging and family classification with small numpy networks."""
from .dataset import (
    CorpusIndex,
    SampleRecord,
    SplitSpec,
    batch_iter,
    class_stats,
    load_gray,
    resize,
    scan_corpus,
    stratified_split,
    to_tensor,
)
from .models import ModelSpec, build_model
from .pe import GrayImage, SectionRecord, bytes_to_pixels, choose_width, parse_sections, read_pgm, render_image, write_pgm
from .train import EvalReport, TrainConfig, compare_models, emit_report, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "CorpusIndex", "SampleRecord", "SplitSpec", "batch_iter", "class_stats", "load_gray", "resize",
    "scan_corpus", "stratified_split", "to_tensor", "ModelSpec", "build_model", "GrayImage", "SectionRecord",
    "bytes_to_pixels", "choose_width", "parse_sections", "read_pgm", "render_image", "write_pgm",
    "EvalReport", "TrainConfig", "compare_models", "emit_report", "evaluate", "train",
]
