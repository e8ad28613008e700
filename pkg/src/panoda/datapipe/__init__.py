from .augment import apply_augment, augment, draw_augment
from .classmap import (APOLLO16, CITYSCAPES, IGNORE_INDEX, NUM_CLASSES, ClassMap,
                       check_labels, map_labels)
from .manifest import DatasetManifest, SampleRecord, load_all, load_manifest, load_sample, save_sample
from .stats import class_pixel_histogram, compute_class_weights, histogram_report
from .synthetic import SyntheticSceneSpec, generate_synthetic_pair, write_synthetic_dataset
