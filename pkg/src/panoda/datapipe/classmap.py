from dataclasses import dataclass, field

import numpy as np

IGNORE_INDEX = 255
NUM_CLASSES = 19

CITYSCAPES_CLASSES = (
    "road", "sidewalk", "building", "wall", "fence", "pole", "traffic light",
    "traffic sign", "vegetation", "terrain", "sky", "person", "rider", "car",
    "truck", "bus", "train", "motorcycle", "bicycle",
)

CITYSCAPES_PALETTE = (
    (128, 64, 128), (244, 35, 232), (70, 70, 70), (102, 102, 156), (190, 153, 153),
    (153, 153, 153), (250, 170, 30), (220, 220, 0), (107, 142, 35), (152, 251, 152),
    (70, 130, 180), (220, 20, 60), (255, 0, 0), (0, 0, 142), (0, 0, 70),
    (0, 60, 100), (0, 80, 100), (0, 0, 230), (119, 11, 32),
)
IGNORE_COLOR = (0, 0, 0)


@dataclass(frozen=True)
class ClassMap:
    names: tuple = CITYSCAPES_CLASSES
    palette: tuple = CITYSCAPES_PALETTE
    # foreign id -> train id (or 255); None means identity on 0..18
    remap: dict = field(default=None)

    def __post_init__(self):
        if len(self.names) != NUM_CLASSES or len(set(self.names)) != NUM_CLASSES:
            raise ValueError("class map needs 19 distinct names")
        if len(self.palette) != NUM_CLASSES:
            raise ValueError("palette needs one color per class")
        if self.remap is not None:
            bad = {k: v for k, v in self.remap.items() if not (0 <= v < NUM_CLASSES or v == IGNORE_INDEX)}
            if bad:
                raise ValueError(f"remap targets outside 0..18/255: {bad}")

    def id_of(self, name):
        return self.names.index(name)

    def name_of(self, idx):
        return self.names[idx]

    def table(self):
        """Lookup array of length 256; -1 marks ids with no mapping."""
        lut = np.full(256, -1, dtype=np.int16)
        if self.remap is None:
            lut[:NUM_CLASSES] = np.arange(NUM_CLASSES)
        else:
            for src, dst in self.remap.items():
                lut[int(src)] = dst
        lut[IGNORE_INDEX] = IGNORE_INDEX
        return lut

    def discarding(self, names):
        """Map from the 19 train ids where the given classes become ignore."""
        drop = {self.id_of(n) for n in names}
        remap = {i: (IGNORE_INDEX if i in drop else i) for i in range(NUM_CLASSES)}
        return ClassMap(self.names, self.palette, remap)

    def palette_array(self):
        lut = np.zeros((256, 3), dtype=np.uint8)
        lut[:NUM_CLASSES] = np.asarray(self.palette, dtype=np.uint8)
        lut[IGNORE_INDEX] = IGNORE_COLOR
        return lut

    def hash(self):
        import hashlib
        payload = "|".join(self.names) + repr(self.palette)
        return hashlib.sha1(payload.encode()).hexdigest()[:16]


CITYSCAPES = ClassMap()
# 16-class evaluation ontology used for ApolloScape-style comparisons
APOLLO16 = CITYSCAPES.discarding(["terrain", "sky", "train"])


def map_labels(raw, cmap=CITYSCAPES):
    raw = np.asarray(raw)
    lut = cmap.table()
    if raw.size and (raw.min() < 0 or raw.max() > 255):
        raise ValueError("label ids must lie in 0..255")
    mapped = lut[raw.astype(np.int64)]
    if (mapped < 0).any():
        missing = sorted(int(v) for v in np.unique(raw[mapped < 0]))
        raise ValueError(f"label ids without a mapping: {missing}")
    return mapped.astype(np.uint8)


def check_labels(label):
    label = np.asarray(label)
    bad = (label >= NUM_CLASSES) & (label != IGNORE_INDEX)
    if bad.any():
        vals = sorted(int(v) for v in np.unique(label[bad]))
        raise ValueError(f"label values outside 0..18/255: {vals}")
    return label
