"""Procedural pinhole / equirectangular scene pairs.

A scene is a label function over (azimuth, elevation) in degrees: road below the
horizon, optional sidewalk strips, building blocks, sky above, and car / person
rectangles painted on top.  Panoramas sample it on a linear (azimuth, elevation)
grid; pinhole crops sample it along perspective rays.
"""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .manifest import SampleRecord, save_sample

ROAD, SIDEWALK, BUILDING, SKY, PERSON, CAR = 0, 1, 2, 10, 11, 13
SCENE_CLASSES = (ROAD, SIDEWALK, BUILDING, SKY, PERSON, CAR)

BASE_COLORS = {
    ROAD: (0.35, 0.33, 0.38),
    SIDEWALK: (0.62, 0.55, 0.60),
    BUILDING: (0.50, 0.42, 0.32),
    SKY: (0.55, 0.72, 0.92),
    PERSON: (0.80, 0.25, 0.25),
    CAR: (0.15, 0.22, 0.55),
}


@dataclass
class AppearanceShift:
    brightness: float = 0.0
    contrast: float = 1.0
    color_cast: tuple = (0.0, 0.0, 0.0)
    noise: float = 0.03
    color_jitter: float = 0.05


@dataclass
class SyntheticSceneSpec:
    seed: int = 0
    pano_size: tuple = (64, 256)
    pano_vfov: float = 70.0
    pinhole_size: tuple = (64, 64)
    pinhole_hfov: float = 70.0
    road_top: float = -6.0
    sidewalk_top: float = -2.0
    n_buildings: tuple = (4, 8)
    building_width: tuple = (20.0, 70.0)
    building_height: tuple = (8.0, 35.0)
    n_sidewalks: tuple = (2, 5)
    sidewalk_width: tuple = (20.0, 80.0)
    n_cars: tuple = (2, 6)
    car_width: tuple = (8.0, 20.0)
    car_height: tuple = (4.0, 9.0)
    car_bottom: tuple = (-16.0, -5.0)
    n_persons: tuple = (2, 6)
    person_width: tuple = (2.0, 4.0)
    person_height: tuple = (8.0, 14.0)
    person_bottom: tuple = (-14.0, -4.0)
    source_style: AppearanceShift = field(default_factory=AppearanceShift)
    target_style: AppearanceShift = field(default_factory=lambda: AppearanceShift(
        brightness=-0.12, contrast=0.6, color_cast=(0.12, 0.02, -0.10), noise=0.08, color_jitter=0.08))

    def __post_init__(self):
        if isinstance(self.source_style, dict):
            self.source_style = AppearanceShift(**self.source_style)
        if isinstance(self.target_style, dict):
            self.target_style = AppearanceShift(**self.target_style)
        for name in ("pano_size", "pinhole_size"):
            size = tuple(int(v) for v in getattr(self, name))
            if len(size) != 2 or min(size) <= 0:
                raise ValueError(f"{name} must be two positive ints, got {size}")
            setattr(self, name, size)
        if not 0.0 < self.pinhole_hfov <= 120.0:
            raise ValueError(f"pinhole_hfov must lie in (0, 120], got {self.pinhole_hfov}")
        if not 0.0 < self.pano_vfov < 180.0:
            raise ValueError(f"pano_vfov must lie in (0, 180), got {self.pano_vfov}")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key, value in d.items():
            if isinstance(value, list):
                d[key] = tuple(value)
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class Entity:
    cls: int
    azimuth: float          # left edge, degrees
    width: float
    bottom: float           # elevation of lower edge, degrees
    height: float


@dataclass
class Scene:
    sidewalks: list         # [(start azimuth, width)]
    buildings: list         # [Entity]
    objects: list           # [Entity], painted in order
    road_top: float = -6.0
    sidewalk_top: float = -2.0


def _in_arc(theta, start, width):
    return np.mod(theta - start, 360.0) < width


def scene_labels(scene, theta, phi):
    """Class id at each (azimuth, elevation) sample, all in degrees."""
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    out = np.full(np.broadcast(theta, phi).shape, SKY, dtype=np.uint8)
    out[phi < scene.sidewalk_top] = ROAD
    band = (phi >= scene.road_top) & (phi < scene.sidewalk_top)
    for start, width in scene.sidewalks:
        out[band & _in_arc(theta, start, width)] = SIDEWALK
    for b in scene.buildings:
        out[(phi >= scene.sidewalk_top) & (phi < b.bottom + b.height) & _in_arc(theta, b.azimuth, b.width)] = BUILDING
    for e in scene.objects:
        out[(phi >= e.bottom) & (phi < e.bottom + e.height) & _in_arc(theta, e.azimuth, e.width)] = e.cls
    return out


def sample_scene(spec, rng):
    def uni(lo_hi):
        return float(rng.uniform(*lo_hi))

    def count(lo_hi):
        return int(rng.integers(lo_hi[0], lo_hi[1] + 1))

    sidewalks = [(uni((0, 360)), uni(spec.sidewalk_width)) for _ in range(count(spec.n_sidewalks))]
    buildings = [
        Entity(BUILDING, uni((0, 360)), uni(spec.building_width), spec.sidewalk_top,
               uni(spec.building_height) - spec.sidewalk_top)
        for _ in range(count(spec.n_buildings))
    ]
    objects = [
        Entity(CAR, uni((0, 360)), uni(spec.car_width), uni(spec.car_bottom), uni(spec.car_height))
        for _ in range(count(spec.n_cars))
    ]
    objects += [
        Entity(PERSON, uni((0, 360)), uni(spec.person_width), uni(spec.person_bottom), uni(spec.person_height))
        for _ in range(count(spec.n_persons))
    ]
    return Scene(sidewalks, buildings, objects, spec.road_top, spec.sidewalk_top)


def panorama_angles(size, vfov):
    """Pixel-center (azimuth, elevation) grids; image center column faces azimuth 0."""
    h, w = size
    theta = ((np.arange(w) + 0.5) / w - 0.5) * 360.0
    phi = (0.5 - (np.arange(h) + 0.5) / h) * vfov
    return np.meshgrid(theta, phi)


def pinhole_angles(size, hfov, view_azimuth):
    h, w = size
    f = (w / 2.0) / np.tan(np.radians(hfov) / 2.0)
    xc = np.arange(w) + 0.5 - w / 2.0
    yc = np.arange(h) + 0.5 - h / 2.0
    xc, yc = np.meshgrid(xc, yc)
    theta = view_azimuth + np.degrees(np.arctan2(xc, f))
    phi = np.degrees(np.arctan2(-yc, np.hypot(xc, f)))
    return theta, phi


def render_labels(scene, spec, view_azimuth=None):
    """Panorama labels, or pinhole labels when a view azimuth is given."""
    if view_azimuth is None:
        theta, phi = panorama_angles(spec.pano_size, spec.pano_vfov)
    else:
        theta, phi = pinhole_angles(spec.pinhole_size, spec.pinhole_hfov, view_azimuth)
    return scene_labels(scene, theta, phi)


def shade(label, style, rng):
    """Color a label map with per-class base colors, jitter and pixel noise."""
    h, w = label.shape
    image = np.zeros((h, w, 3), dtype=np.float64)
    for cls, color in BASE_COLORS.items():
        jitter = rng.normal(0.0, style.color_jitter, size=3)
        image[label == cls] = np.asarray(color) + jitter
    # vertical illumination gradient, same for both domains
    image *= np.linspace(1.05, 0.9, h)[:, None, None]
    image = (image - 0.5) * style.contrast + 0.5 + style.brightness + np.asarray(style.color_cast)
    image += rng.normal(0.0, style.noise, size=image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def generate_synthetic_pair(spec, rng, scene=None, view_azimuth=None):
    """Render one scene as (pinhole source record, panoramic target record)."""
    if scene is None:
        scene = sample_scene(spec, rng)
    if view_azimuth is None:
        view_azimuth = float(rng.uniform(0.0, 360.0))
    pin_label = render_labels(scene, spec, view_azimuth)
    pano_label = render_labels(scene, spec)
    pin = SampleRecord(shade(pin_label, spec.source_style, rng), pin_label, "source", "pinhole")
    pano = SampleRecord(shade(pano_label, spec.target_style, rng), pano_label, "target", "panoramic")
    return pin, pano


SPLIT_CODES = {"source_train": 0, "target_train": 1, "target_val": 2, "target_test": 3}


def write_synthetic_dataset(root, spec, n_source=200, n_target_train=200, n_target_val=20, n_target_test=50):
    """Write pinhole/ and panoramic/ trees in the densepass-style layout plus a JSON sidecar.

    Each record i of each split comes from an independent scene seeded by
    (spec.seed, split code, i), so output is reproducible and order independent.
    Panoramic training labels are never written.
    """
    root = Path(root)
    plan = [
        ("source_train", n_source, "pinhole", "train", True),
        ("target_train", n_target_train, "panoramic", "train", False),
        ("target_val", n_target_val, "panoramic", "val", True),
        ("target_test", n_target_test, "panoramic", "test", True),
    ]
    for key, n, domain_dir, split, labelled in plan:
        for i in range(n):
            rng = np.random.default_rng([spec.seed, SPLIT_CODES[key], i])
            pin, pano = generate_synthetic_pair(spec, rng)
            record = pin if domain_dir == "pinhole" else pano
            name = f"{key}_{i:05d}.png"
            base = root / domain_dir
            save_sample(record, base / "leftImg8bit" / split / name,
                        base / "gtFine" / split / name if labelled else None)
    sidecar = {
        "generator": "panoda.synthetic",
        "seed": spec.seed,
        "spec": spec.to_dict(),
        "counts": {key: n for key, n, *_ in plan},
    }
    (root / "synthetic.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return root
