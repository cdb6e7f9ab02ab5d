from .batching import Batch, collate, fixed_batches, make_batches
from .image import augment, dilate, erode, grid_distort, normalize_contrast, preprocess, scale_to_height
from .io import load_dataset, read_image, read_index, write_dataset
from .sample import LineSample
from .synth import FontSpec, random_texts, synth_corpus, synth_line

__all__ = [
    "Batch", "FontSpec", "LineSample", "augment", "collate", "dilate", "erode", "fixed_batches",
    "grid_distort", "load_dataset", "make_batches", "normalize_contrast", "preprocess", "random_texts",
    "read_image", "read_index", "scale_to_height", "synth_corpus", "synth_line", "write_dataset",
]
