"""Shared fixtures: procedural datasets, desk models, and the (slow)
single-scene overfit run reused by the training and acceptance tests."""

import numpy as np
import pytest
import torch

from headlift.data import (DatasetMix, SceneManifest, generate_fixture_dataset,
                           generate_fixture_scene, load_manifests)
from headlift.model import EditModel, LiftModel
from headlift.training import TrainingConfig, train_base

OVERFIT_STEPS = 700
OVERFIT_SEED = 0
OVERFIT_FIXTURE_SEED = 77
OVERFIT_IMAGE_SIZE = 64
OVERFIT_RING_VIEWS = 16
OVERFIT_DISTANCE = 1.8
OVERFIT_LR = 3e-4
OVERFIT_WARMUP = 32
OVERFIT_CLIP = 0.5
OVERFIT_BACKGROUND = (0.0, 0.0, 0.0)
# 10th percentile of held-out PSNR over seeds 0/1/2 (10.275, 9.703, 11.264 dB)
# from scripts/calibrate_overfit.py at the settings above; training is
# byte-deterministic, so the seed-0 run here reproduces its calibration value.
OVERFIT_THRESHOLD = 9.817204307013746


@pytest.fixture(scope="session")
def fixture_dataset(tmp_path_factory):
    """Three small scenes (one of each kind) at 48x48 with 4 views."""
    root = tmp_path_factory.mktemp("dataset")
    manifest = generate_fixture_dataset(root, num_scenes=3, views_per_scene=4,
                                        size=48, seed=3)
    return load_manifests(manifest), manifest


@pytest.fixture(scope="session")
def desk_models():
    lift = LiftModel().init_weights(3)
    edit = EditModel().init_weights(3)
    edit.init_from_base(lift)
    return lift, edit


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory):
    """One calibrated overfit run: 8 training views on a 16-slot ring (the
    even slots) with ring slot 1 held out, so the evaluation camera sits
    22.5 degrees from its nearest training views.  Settings mirror
    scripts/calibrate_overfit.py, which froze the acceptance threshold."""
    root = tmp_path_factory.mktemp("overfit")
    rng = np.random.default_rng((OVERFIT_FIXTURE_SEED, 0))
    scene = generate_fixture_scene(root / "fixture", "overfit_scene",
                                   "multiview_real", OVERFIT_RING_VIEWS,
                                   OVERFIT_IMAGE_SIZE, rng,
                                   distance=OVERFIT_DISTANCE)
    train_scene = SceneManifest(scene.scene_id, scene.kind, scene.views[0::2])
    config = TrainingConfig(out_dir=str(root / "run"), steps=OVERFIT_STEPS,
                            seed=OVERFIT_SEED, lr=OVERFIT_LR,
                            mix=DatasetMix(1.0, 0.0, 0.0),
                            pair_schedule="cycle", log_every=8,
                            warmup_steps=OVERFIT_WARMUP,
                            grad_clip=OVERFIT_CLIP,
                            background=OVERFIT_BACKGROUND,
                            checkpoint_every=OVERFIT_STEPS)
    state = train_base(config, [train_scene])
    return state, train_scene, scene.views[1]
