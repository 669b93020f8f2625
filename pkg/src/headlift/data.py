"""Dataset manifests, pair sampling across the three data kinds, and the
procedural fixture generator.

Desk-scale stand-ins for the real corpora: each fixture scene is a textured
ellipsoid head with painted eye/mouth features, expressed directly as a
GaussianCloud and rendered to posed views through the package's own
rasterizer, so cameras, masks, and pixels are exact by construction.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .edit_encoder import SegmentationMap
from .errors import ConfigurationError, InvalidArgumentError
from .geometry import Camera, DTYPE, GaussianCloud, orbit_camera
from .imgio import load_image_png, load_mask_png, save_image_png, save_mask_png
from .splat import rasterize

KINDS = ("multiview_real", "multiview_synthetic", "singleview")
DEFAULT_P_SAME = 0.1
MASK_ALPHA_THRESHOLD = 0.02


@dataclass(frozen=True)
class ViewRecord:
    image_path: str
    mask_path: str
    camera: Camera

    def load_image(self):
        return load_image_png(self.image_path)

    def load_mask(self):
        return load_mask_png(self.mask_path)


@dataclass(frozen=True)
class SceneManifest:
    scene_id: str
    kind: str
    views: tuple

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown scene kind {self.kind!r}")
        if not self.views:
            raise InvalidArgumentError("scene must have at least one view")
        if self.kind == "singleview" and len(self.views) != 1:
            raise InvalidArgumentError(
                f"singleview scene has {len(self.views)} views")

    def check_files(self):
        for view in self.views:
            for path in (view.image_path, view.mask_path):
                if not Path(path).exists():
                    raise ConfigurationError(f"manifest references missing {path}")
        return self


@dataclass(frozen=True)
class DatasetMix:
    multiview_real: float = 0.4
    multiview_synthetic: float = 0.3
    singleview: float = 0.3

    def __post_init__(self):
        weights = self.as_tuple()
        if any(w < 0 for w in weights):
            raise ConfigurationError("mix weights must be nonnegative")
        if sum(weights) <= 0:
            raise ConfigurationError("mix weights must sum to a positive value")

    def as_tuple(self):
        return (self.multiview_real, self.multiview_synthetic, self.singleview)


def sample_pair(mix, manifests, rng, p_same=DEFAULT_P_SAME):
    """Draw (input view, target view, scene) under the kind mix.

    Multi-view scenes pick distinct views except with probability p_same;
    single-view scenes always return the view as its own target.
    """
    by_kind = {kind: [] for kind in KINDS}
    for scene in manifests:
        by_kind[scene.kind].append(scene)
    weights = np.asarray(mix.as_tuple(), dtype=np.float64)
    for kind, weight in zip(KINDS, weights):
        if weight > 0 and not by_kind[kind]:
            raise ConfigurationError(f"mix requires {kind} scenes but none exist")
    kind = KINDS[rng.choice(len(KINDS), p=weights / weights.sum())]
    scenes = by_kind[kind]
    scene = scenes[rng.integers(len(scenes))]
    if len(scene.views) == 1:
        view = scene.views[0]
        return view, view, scene
    i = int(rng.integers(len(scene.views)))
    if rng.uniform() < p_same:
        return scene.views[i], scene.views[i], scene
    j = int(rng.integers(len(scene.views) - 1))
    if j >= i:
        j += 1
    return scene.views[i], scene.views[j], scene


def save_manifests(manifests, path):
    payload = [{
        "scene_id": scene.scene_id,
        "kind": scene.kind,
        "views": [{"image": view.image_path, "mask": view.mask_path,
                   "camera": view.camera.to_json_dict()} for view in scene.views],
    } for scene in manifests]
    Path(path).write_text(json.dumps(payload, indent=2))
    return path


def load_manifests(path, check_files=True):
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"manifest file {path} does not exist")
    scenes = []
    for entry in json.loads(path.read_text()):
        views = tuple(ViewRecord(v["image"], v["mask"],
                                 Camera.from_json_dict(v["camera"]))
                      for v in entry["views"])
        scene = SceneManifest(entry["scene_id"], entry["kind"], views)
        scenes.append(scene.check_files() if check_files else scene)
    return scenes


def stub_segmentation(pixels, mask):
    """Heuristic class map: foreground -> skin, its top band -> hair.

    The service's builtin segmenter and the edit-fine-tune fixtures share
    this; it is explicitly a stand-in for a real face parser.
    """
    mask = np.asarray(mask, dtype=bool)
    classes = np.zeros(mask.shape, dtype=np.int64)
    classes[mask] = 1  # skin
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size:
        top, bottom = rows[0], rows[-1]
        hair_band = top + max(1, (bottom - top + 1) // 4)
        hair = mask.copy()
        hair[hair_band:] = False
        classes[hair] = 17  # hair
    return SegmentationMap(classes)


def _head_cloud(rng):
    """A textured ellipsoid with painted eyes and mouth, as Gaussians."""
    n = 320
    directions = rng.standard_normal((n, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    semi = np.array([0.55, 0.70, 0.60]) * rng.uniform(0.9, 1.1)
    positions = directions * semi

    base = rng.uniform(0.35, 0.75, 3)
    phase = rng.uniform(0, 2 * math.pi, 3)
    freq = rng.uniform(2.0, 4.0, (3, 3))
    colors = base + 0.2 * np.sin(positions @ freq.T + phase)

    # painted features on the +z face (the yaw-0 camera looks down -z)
    def paint(center, radius, rgb, count):
        offsets = rng.standard_normal((count, 3)) * radius * 0.4
        pts = np.asarray(center) + offsets
        pts = pts / np.linalg.norm(pts / semi, axis=1, keepdims=True).clip(1e-9, None)
        return pts, np.tile(rgb, (count, 1))

    eye_y = -0.18  # above center; +y points down in image space
    feats = [
        paint((-0.22, eye_y, 0.55), 0.08, (0.05, 0.05, 0.08), 24),
        paint((+0.22, eye_y, 0.55), 0.08, (0.05, 0.05, 0.08), 24),
        paint((0.0, 0.26, 0.55), 0.10, (0.65, 0.10, 0.12), 32),
    ]
    positions = np.concatenate([positions] + [f[0] for f in feats])
    colors = np.concatenate([colors] + [f[1] for f in feats])
    colors = colors.clip(0.0, 1.0)
    total = positions.shape[0]

    scales = rng.uniform(0.05, 0.09, (total, 3))
    quats = rng.standard_normal((total, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    opacities = rng.uniform(0.82, 0.97, total)
    as_t = lambda a: torch.tensor(a, dtype=DTYPE)
    return GaussianCloud(as_t(positions), as_t(scales), as_t(quats),
                         as_t(opacities), as_t(colors))


def generate_fixture_scene(root, scene_id, kind, num_views, size, rng,
                           distance=1.8, write_seg=False,
                           background=(0.0, 0.0, 0.0)):
    """Render one procedural head to posed views; returns a SceneManifest.

    Views are framed as tight portrait crops (the head fills most of the
    frame) on a black background.  Both choices keep patch-feature losses
    honest: in a frame dominated by flat background a constant render
    already aligns most patches, so single-scene training slides into
    painting the background color everywhere and nothing else.
    """
    scene_dir = Path(root) / scene_id
    scene_dir.mkdir(parents=True, exist_ok=True)
    cloud = _head_cloud(rng)
    views = []
    for k in range(num_views):
        yaw = 360.0 * k / num_views + float(rng.uniform(-5.0, 5.0))
        pitch = float(rng.uniform(-15.0, 15.0))
        camera = orbit_camera(yaw, pitch, distance, width=size, height=size)
        with torch.no_grad():
            out = rasterize(cloud, camera, background=background)
        image = out.image.numpy()
        mask = out.alpha.numpy() > MASK_ALPHA_THRESHOLD
        image_path = str(scene_dir / f"view_{k:02d}.png")
        mask_path = str(scene_dir / f"mask_{k:02d}.png")
        save_image_png(image, image_path)
        save_mask_png(mask, mask_path)
        if write_seg:
            from .edit_encoder import save_segmentation_png
            seg = stub_segmentation(image, mask)
            save_segmentation_png(seg, str(scene_dir / f"seg_{k:02d}.png"))
        views.append(ViewRecord(image_path, mask_path, camera))
        if kind == "singleview":
            break
    return SceneManifest(scene_id, kind, tuple(views))


def generate_fixture_dataset(root, num_scenes=3, views_per_scene=8, size=64,
                             seed=0, kinds=None, write_seg=False,
                             background=(0.0, 0.0, 0.0)):
    """Write a small procedural dataset plus its manifest; deterministic."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    kinds = tuple(kinds) if kinds else tuple(
        KINDS[i % len(KINDS)] for i in range(num_scenes))
    if len(kinds) != num_scenes:
        raise InvalidArgumentError("kinds must match num_scenes")
    manifests = []
    for idx, kind in enumerate(kinds):
        rng = np.random.default_rng((seed, idx))
        scene = generate_fixture_scene(
            root, f"scene_{idx:03d}", kind,
            1 if kind == "singleview" else views_per_scene, size, rng,
            write_seg=write_seg, background=background)
        manifests.append(scene)
    manifest_path = root / "manifest.json"
    save_manifests(manifests, manifest_path)
    return str(manifest_path)
