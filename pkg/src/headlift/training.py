"""Two-phase training loop plus the editing-model fine-tune.

Phase one optimizes the task encoder, fusion MLP, decoder, and Gaussian head
against the perceptual losses; phase two freezes all of that (hash-verified
at every checkpoint) and trains only the refiner CNN.  The edit fine-tune
swaps the image encoder for the segmentation/style encoder, with the decoder
initialized from the base checkpoint.

Everything here is deterministic given (seed, config, fixtures) with
single-worker data loading; metrics logs are JSON-lines without timestamps
so identical runs produce identical files.
"""

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import module_hash
from .data import DEFAULT_P_SAME, DatasetMix, load_manifests, sample_pair, stub_segmentation
from .edit_encoder import embed_style
from .errors import ConfigurationError, InvalidArgumentError, InvariantViolationError, TrainingAbortedError
from .evaluation import psnr
from .geometry import DTYPE
from .losses import LossEvaluator, preset
from .model import EditModel, LiftModel, load_model, save_model
from .splat import rasterize

PHASES = ("base", "refiner", "edit")
LR_MIN_FACTOR = 0.01


@dataclass(frozen=True)
class TrainingConfig:
    out_dir: str
    steps: int = 100
    seed: int = 0
    lr: float = 1e-3
    checkpoint_every: int = 50
    log_every: int = 1
    mix: DatasetMix = field(default_factory=DatasetMix)
    p_same: float = DEFAULT_P_SAME
    loss_preset: str = "base_full"
    background: tuple = (1.0, 1.0, 1.0)
    pair_schedule: str = "random"
    warmup_steps: int = 0
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigurationError("steps must be nonnegative")
        if self.lr <= 0:
            raise ConfigurationError("lr must be positive")
        if self.checkpoint_every < 1 or self.log_every < 1:
            raise ConfigurationError("checkpoint/log intervals must be >= 1")
        if not 0.0 <= self.p_same <= 1.0:
            raise ConfigurationError("p_same must lie in [0, 1]")
        if self.pair_schedule not in ("random", "cycle"):
            raise ConfigurationError(
                f"unknown pair schedule {self.pair_schedule!r}")
        if self.warmup_steps < 0:
            raise ConfigurationError("warmup_steps must be nonnegative")
        if self.grad_clip < 0:
            raise ConfigurationError("grad_clip must be nonnegative (0 disables)")

    def to_dict(self):
        d = {k: getattr(self, k) for k in (
            "out_dir", "steps", "seed", "lr", "checkpoint_every", "log_every",
            "p_same", "loss_preset", "pair_schedule", "warmup_steps",
            "grad_clip")}
        d["mix"] = list(self.mix.as_tuple())
        d["background"] = list(self.background)
        return d


@dataclass
class TrainState:
    step: int
    phase: str
    model: torch.nn.Module
    checkpoint_path: str
    metrics_path: str
    rng_state: dict

    def load_metrics(self):
        return read_metrics(self.metrics_path)


def read_metrics(path):
    lines = Path(path).read_text().splitlines()
    return [json.loads(line) for line in lines if line.strip()]


def cosine_lr(base_lr, step, total_steps, min_factor=LR_MIN_FACTOR,
              warmup_steps=0):
    """Linear warmup then cosine decay to min_factor * base_lr."""
    if step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    span = total_steps - warmup_steps
    if span <= 1:
        return base_lr
    t = (step - warmup_steps) / (span - 1)
    return base_lr * (min_factor + (1 - min_factor) * 0.5 * (1 + math.cos(math.pi * t)))


class _ViewCache:
    """Per-run decode cache; fixture images are tiny so this is unbounded."""

    def __init__(self):
        self._images = {}
        self._masks = {}

    def image(self, view):
        if view.image_path not in self._images:
            self._images[view.image_path] = view.load_image()
        return self._images[view.image_path]

    def mask(self, view):
        if view.mask_path not in self._masks:
            self._masks[view.mask_path] = view.load_mask()
        return self._masks[view.mask_path]


def _resolve_manifests(manifests):
    if isinstance(manifests, (str, Path)):
        return load_manifests(manifests)
    return list(manifests)


def _pair_stream(config, manifests, rng):
    """Infinite (input, target, scene) stream.

    "random" draws iid via sample_pair; "cycle" walks a fixed pair list so
    consecutive logging windows average over identical pair sets (mix weights
    are ignored): per scene, input i pairs with view (i + shift) mod V for a
    run-constant shift, i.e. a rotation derangement.
    """
    if config.pair_schedule == "cycle":
        pairs = []
        for scene in manifests:
            v = len(scene.views)
            shift = 1 + int(rng.integers(v - 1)) if v > 1 else 0
            for i in range(v):
                pairs.append((scene.views[i], scene.views[(i + shift) % v], scene))

        def cycled():
            while True:
                yield from pairs
        return cycled()

    def sampled():
        while True:
            yield sample_pair(config.mix, manifests, rng, config.p_same)
    return sampled()


class _Loop:
    """Shared training-loop mechanics: optimizer, schedule, metrics JSONL,
    checkpointing, NaN abort with a last-good reference."""

    def __init__(self, config, phase, model, parameters, metadata=None):
        params = [p for p in parameters if p.requires_grad]
        if not params:
            raise ConfigurationError(f"phase {phase} has no trainable parameters")
        self.config = config
        self.phase = phase
        self.model = model
        self.params = params
        self.optimizer = torch.optim.Adam(params, lr=config.lr)
        self.out_dir = Path(config.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.metrics_path = self.out_dir / f"metrics_{phase}.jsonl"
        self.metrics_path.write_text("")
        self.metadata = dict(metadata or {})
        self.metadata.update(phase=phase, config=config.to_dict())
        self.rng = np.random.default_rng(config.seed)
        self.last_good = self._save("init")

    def _save(self, tag, step=0):
        path = self.out_dir / f"{self.phase}_{tag}.npz"
        save_model(path, self.model, {**self.metadata, "step": step})
        return str(path)

    def log(self, record):
        with open(self.metrics_path, "a") as fh:
            fh.write(json.dumps(record) + "\n")

    def run(self, step_fn, on_checkpoint=None):
        config = self.config
        window = []
        for step in range(config.steps):
            lr = cosine_lr(config.lr, step, config.steps,
                           warmup_steps=config.warmup_steps)
            for group in self.optimizer.param_groups:
                group["lr"] = lr
            loss, breakdown, probe = step_fn()
            if not torch.isfinite(loss):
                raise TrainingAbortedError(
                    f"non-finite loss at step {step}",
                    last_good_checkpoint=self.last_good)
            self.optimizer.zero_grad()
            loss.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(self.params, config.grad_clip)
            self.optimizer.step()
            window.append(float(loss.detach()))
            if (step + 1) % config.log_every == 0 or step == config.steps - 1:
                record = {"step": step, "phase": self.phase, "lr": lr,
                          "total": window[-1],
                          "window_mean": float(np.mean(window))}
                record.update({f"loss/{k}": v for k, v in breakdown.items()})
                record.update(probe)
                self.log(record)
                window = []
            if (step + 1) % config.checkpoint_every == 0:
                self.last_good = self._save(f"step_{step + 1:06d}", step + 1)
                if on_checkpoint:
                    on_checkpoint(step + 1)
        final = self._save("final", config.steps)
        if on_checkpoint:
            on_checkpoint(config.steps)
        return TrainState(config.steps, self.phase, self.model, final,
                          str(self.metrics_path),
                          {"bit_generator": self.rng.bit_generator.state})


def train_base(config, manifests, model=None, model_config=None):
    """Phase one: optimize the lifting pipeline, refiner untouched."""
    manifests = _resolve_manifests(manifests)
    if model is None:
        model = LiftModel(model_config).init_weights(config.seed)
    evaluator = LossEvaluator(preset(config.loss_preset),
                              model.config.image_size, model.config.patch_size)
    cache = _ViewCache()
    params = itertools.chain(model.encoder.parameters(),
                             model.decoder.parameters())
    loop = _Loop(config, "base", model, params)
    pairs = _pair_stream(config, manifests, loop.rng)

    def step_fn():
        inp, tgt, _ = next(pairs)
        cloud = model.reconstruct(cache.image(inp), cache.mask(inp))
        _, rendered = model.render(cloud, tgt.camera, config.background,
                                   refine=False)
        target = torch.tensor(cache.image(tgt), dtype=DTYPE)
        loss, breakdown = evaluator(rendered, target)
        return loss, breakdown, {"psnr": psnr(rendered.detach(), target)}

    return loop.run(step_fn)


def train_refiner(config, base, manifests):
    """Phase two: refiner only; base weights hash-verified every checkpoint."""
    manifests = _resolve_manifests(manifests)
    model = _resolve_model(base, LiftModel)
    model.encoder.requires_grad_(False)
    model.decoder.requires_grad_(False)
    frozen_hashes = {"encoder": module_hash(model.encoder),
                     "decoder": module_hash(model.decoder)}
    config = replace(config, loss_preset="refiner") \
        if preset(config.loss_preset).phase != "refiner" else config
    evaluator = LossEvaluator(preset(config.loss_preset),
                              model.config.image_size, model.config.patch_size)
    cache = _ViewCache()
    loop = _Loop(config, "refiner", model, model.refiner.parameters())
    pairs = _pair_stream(config, manifests, loop.rng)

    def verify_frozen(step):
        for name, expected in frozen_hashes.items():
            actual = module_hash(getattr(model, name))
            if actual != expected:
                raise InvariantViolationError(
                    f"{name} weights changed during refiner phase at step {step}")

    def step_fn():
        inp, tgt, _ = next(pairs)
        with torch.no_grad():
            cloud = model.reconstruct(cache.image(inp), cache.mask(inp))
            raw = rasterize(cloud, tgt.camera, config.background).image
        refined = model.refiner(raw)
        target = torch.tensor(cache.image(tgt), dtype=DTYPE)
        loss, breakdown = evaluator(refined, target)
        return loss, breakdown, {"psnr": psnr(refined.detach(), target)}

    state = loop.run(step_fn, on_checkpoint=verify_frozen)
    return state


def finetune_edit(config, base, manifests, segmenter=None, embedder=None):
    """Swap in the segmentation/style encoder and fine-tune from the base.

    Synthetic multi-view data is excluded by contract; segmentation inputs
    come from the target view through the segmenter adapter and the style
    embedding from the input view's image.
    """
    if config.mix.multiview_synthetic != 0:
        raise ConfigurationError(
            "edit fine-tuning requires zero weight on multiview_synthetic")
    manifests = _resolve_manifests(manifests)
    base_model = _resolve_model(base, LiftModel)
    model = EditModel(base_model.config).init_weights(config.seed)
    model.init_from_base(base_model)
    segmenter = segmenter or stub_segmentation
    evaluator = LossEvaluator(preset(config.loss_preset),
                              model.config.image_size, model.config.patch_size)
    cache = _ViewCache()
    params = itertools.chain(model.encoder.parameters(),
                             model.decoder.parameters())
    loop = _Loop(config, "edit", model, params)
    pairs = _pair_stream(config, manifests, loop.rng)

    def step_fn():
        inp, tgt, _ = next(pairs)
        seg = segmenter(cache.image(tgt), cache.mask(tgt))
        style = embed_style(cache.image(inp), embedder)
        cloud = model.reconstruct(seg, style)
        _, rendered = model.render(cloud, tgt.camera, config.background,
                                   refine=False)
        target = torch.tensor(cache.image(tgt), dtype=DTYPE)
        loss, breakdown = evaluator(rendered, target)
        return loss, breakdown, {"psnr": psnr(rendered.detach(), target)}

    return loop.run(step_fn)


def _resolve_model(base, expected_cls):
    if isinstance(base, TrainState):
        base = base.model
    if isinstance(base, (str, Path)):
        base, _ = load_model(base)
    if not isinstance(base, expected_cls):
        raise ConfigurationError(
            f"expected a {expected_cls.__name__} checkpoint, got {type(base).__name__}")
    return base
