import json
import math

import numpy as np
import pytest

from panoda.datapipe import SyntheticSceneSpec, generate_synthetic_pair, load_manifest, write_synthetic_dataset
from panoda.datapipe.synthetic import (BUILDING, CAR, PERSON, ROAD, SIDEWALK, SKY, Entity, Scene, render_labels,
                                       sample_scene)

SMALL = dict(pano_size=(32, 64), pinhole_size=(32, 32))


def _oracle_label(scene, az, el):
    """Scalar re-statement of the scene rules, evaluated one ray at a time."""
    def inside(a, start, width):
        return (a - start) % 360.0 < width

    lab = SKY if el >= scene.sidewalk_top else ROAD
    if scene.road_top <= el < scene.sidewalk_top:
        for start, width in scene.sidewalks:
            if inside(az, start, width):
                lab = SIDEWALK
    for b in scene.buildings:
        if scene.sidewalk_top <= el < b.bottom + b.height and inside(az, b.azimuth, b.width):
            lab = BUILDING
    for e in scene.objects:
        if e.bottom <= el < e.bottom + e.height and inside(az, e.azimuth, e.width):
            lab = e.cls
    return lab


def _ray_angles(direction):
    x, y, z = direction            # x right, y up, z forward (azimuth 0)
    return math.degrees(math.atan2(x, z)), math.degrees(math.asin(y / math.sqrt(x * x + y * y + z * z)))


def _oracle_pinhole(scene, spec, view):
    h, w = spec.pinhole_size
    f = (w / 2) / math.tan(math.radians(spec.pinhole_hfov / 2))
    c, s = math.cos(math.radians(view)), math.sin(math.radians(view))
    out = np.zeros((h, w), np.uint8)
    for v in range(h):
        for u in range(w):
            cam = (u + 0.5 - w / 2, -(v + 0.5 - h / 2), f)
            # rotate about the vertical axis by the view azimuth
            world = (c * cam[0] + s * cam[2], cam[1], -s * cam[0] + c * cam[2])
            az, el = _ray_angles(world)
            out[v, u] = _oracle_label(scene, az, el)
    return out


def _oracle_panorama(scene, spec):
    h, w = spec.pano_size
    out = np.zeros((h, w), np.uint8)
    for y in range(h):
        for x in range(w):
            az = ((x + 0.5) / w - 0.5) * 360.0
            el = (0.5 - (y + 0.5) / h) * spec.pano_vfov
            out[y, x] = _oracle_label(scene, az, el)
    return out


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_renders_match_ray_casting_oracle(seed):
    spec = SyntheticSceneSpec(**SMALL)
    rng = np.random.default_rng(seed)
    scene = sample_scene(spec, rng)
    view = float(rng.uniform(0, 360))
    assert np.array_equal(render_labels(scene, spec, view), _oracle_pinhole(scene, spec, view))
    assert np.array_equal(render_labels(scene, spec), _oracle_panorama(scene, spec))


@pytest.mark.parametrize("seed", [3, 4, 5])
def test_pinhole_is_projection_of_panorama_window(seed):
    spec = SyntheticSceneSpec(**SMALL)
    rng = np.random.default_rng(seed)
    scene = sample_scene(spec, rng)
    view = float(rng.uniform(0, 360))
    pin = render_labels(scene, spec, view)
    pano = render_labels(scene, spec)
    ph, pw = spec.pano_size
    h, w = spec.pinhole_size
    f = (w / 2) / math.tan(math.radians(spec.pinhole_hfov / 2))
    agree = total = 0
    for v in range(h):
        for u in range(w):
            x_c, y_c = u + 0.5 - w / 2, v + 0.5 - h / 2
            az = view + math.degrees(math.atan2(x_c, f))
            el = math.degrees(math.atan2(-y_c, math.hypot(x_c, f)))
            if abs(el) >= spec.pano_vfov / 2:
                continue
            px = int(((az / 360.0 + 0.5) % 1.0) * pw)
            py = int((0.5 - el / spec.pano_vfov) * ph)
            total += 1
            agree += pin[v, u] == pano[py, px]
    # the only disagreements are pinhole rays falling in panorama cells cut by an edge
    assert agree / total > 0.85
    for cls in np.unique(pin):
        assert cls in pano


def test_entity_inside_fov_appears_in_both():
    spec = SyntheticSceneSpec(**SMALL)
    car = Entity(CAR, -5.0, 10.0, -15.0, 8.0)
    scene = Scene([], [], [car])
    pin = render_labels(scene, spec, 0.0)
    pano = render_labels(scene, spec)
    assert (pin == CAR).any() and (pano == CAR).any()


def test_entity_behind_camera_only_in_panorama():
    spec = SyntheticSceneSpec(**SMALL)
    person = Entity(PERSON, 175.0, 10.0, -10.0, 20.0)
    scene = Scene([], [], [person])
    assert not (render_labels(scene, spec, 0.0) == PERSON).any()
    assert (render_labels(scene, spec) == PERSON).any()


def _analytic_sky_fraction(scene, vfov):
    """Integrate the sky extent over azimuth from building intervals (1/10 degree steps)."""
    az = (np.arange(3600) + 0.5) / 10.0
    top = np.full(az.shape, scene.sidewalk_top)
    for b in scene.buildings:
        inside = np.mod(az - b.azimuth, 360.0) < b.width
        top[inside] = np.maximum(top[inside], b.bottom + b.height)
    return float(np.mean(np.clip(vfov / 2 - top, 0, vfov) / vfov))


@pytest.mark.parametrize("seed", range(5))
def test_sky_fraction_matches_layout(seed):
    spec = SyntheticSceneSpec(n_cars=(0, 0), n_persons=(0, 0))
    scene = sample_scene(spec, np.random.default_rng(seed))
    pano = render_labels(scene, spec)
    assert abs((pano == SKY).mean() - _analytic_sky_fraction(scene, spec.pano_vfov)) < 0.02


def test_sky_fraction_without_buildings_is_horizon_fraction():
    spec = SyntheticSceneSpec()
    pano = render_labels(Scene([], [], []), spec)
    expected = (spec.pano_vfov / 2 - spec.sidewalk_top) / spec.pano_vfov
    assert abs((pano == SKY).mean() - expected) < 0.02


def test_pair_records_and_determinism():
    spec = SyntheticSceneSpec()
    a = generate_synthetic_pair(spec, np.random.default_rng(9))
    b = generate_synthetic_pair(spec, np.random.default_rng(9))
    for x, y in zip(a, b):
        assert np.array_equal(x.image, y.image) and np.array_equal(x.label, y.label)
    pin, pano = a
    assert pin.image.shape == (64, 64, 3) and pano.image.shape == (64, 256, 3)
    assert pin.domain == "source" and pano.domain == "target"
    assert set(np.unique(pano.label)) <= {ROAD, SIDEWALK, BUILDING, SKY, PERSON, CAR}


def test_target_only_appearance_shift():
    spec = SyntheticSceneSpec()
    pin, pano = generate_synthetic_pair(spec, np.random.default_rng(0))
    sky_src = pin.image[pin.label == SKY].mean(0)
    sky_tgt = pano.image[pano.label == SKY].mean(0)
    assert np.abs(sky_src - sky_tgt).max() > 0.05


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSceneSpec(pinhole_hfov=150)
    with pytest.raises(ValueError):
        SyntheticSceneSpec(pano_size=(0, 10))


def test_written_dataset_layout_and_determinism(tmp_path):
    spec = SyntheticSceneSpec(seed=7, **SMALL)
    a = write_synthetic_dataset(tmp_path / "a", spec, 4, 3, 2, 2)
    b = write_synthetic_dataset(tmp_path / "b", spec, 4, 3, 2, 2)
    files_a = sorted(p.relative_to(a) for p in a.rglob("*.png"))
    assert files_a == sorted(p.relative_to(b) for p in b.rglob("*.png"))
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes()
    assert len(load_manifest(a / "pinhole", "train", "synthetic")) == 4
    assert all(l is None for _, l in load_manifest(a / "panoramic", "train", "synthetic").entries)
    assert load_manifest(a / "panoramic", "test", "synthetic").has_labels
    meta = json.loads((a / "synthetic.json").read_text())
    assert meta["seed"] == 7 and meta["counts"]["source_train"] == 4
