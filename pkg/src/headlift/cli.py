"""Command-line entry points: training phases, reconstruction with orbit
rendering, decoder-layer visualization, fixture generation, and the HTTP
service.

Exit codes: 0 success, 1 unexpected failure, 2 bad configuration,
3 empty foreground.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import torch

from .data import DatasetMix, generate_fixture_dataset
from .errors import ConfigurationError, EmptyForegroundError, HeadliftError
from .geometry import orbit_camera
from .imgio import load_image_png, load_mask_png, save_image_png
from .model import LiftModel, ModelConfig, load_model
from .training import TrainingConfig, finetune_edit, train_base, train_refiner

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_BAD_CONFIG = 2
EXIT_EMPTY_FOREGROUND = 3

ENV_CHECKPOINT = "HEADLIFT_CHECKPOINT"
ENV_EDIT_CHECKPOINT = "HEADLIFT_EDIT_CHECKPOINT"


def load_train_config(path):
    """Parse the single-document training config JSON.

    Returns (TrainingConfig, manifest path, base checkpoint or None,
    ModelConfig or None).
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} does not exist")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError("config root must be a JSON object")
    known = {"manifest", "out_dir", "steps", "seed", "lr", "checkpoint_every",
             "log_every", "mix", "p_same", "loss_preset", "background",
             "pair_schedule", "warmup_steps", "grad_clip", "base_checkpoint",
             "model"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    for key in ("manifest", "out_dir"):
        if key not in doc:
            raise ConfigurationError(f"config is missing required key {key!r}")
    kwargs = {k: doc[k] for k in ("steps", "seed", "lr", "checkpoint_every",
                                  "log_every", "p_same", "loss_preset",
                                  "pair_schedule", "warmup_steps",
                                  "grad_clip") if k in doc}
    if "mix" in doc:
        mix = doc["mix"]
        kwargs["mix"] = (DatasetMix(*mix) if isinstance(mix, (list, tuple))
                         else DatasetMix(**mix))
    if "background" in doc:
        kwargs["background"] = tuple(doc["background"])
    try:
        config = TrainingConfig(out_dir=doc["out_dir"], **kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"bad training config: {exc}") from exc
    model_cfg = ModelConfig.from_dict(doc["model"]) if "model" in doc else None
    return config, doc["manifest"], doc.get("base_checkpoint"), model_cfg


def cmd_train(args):
    config, manifest, base, model_cfg = load_train_config(args.config)
    if args.phase == "base":
        train_base(config, manifest, model_config=model_cfg)
    else:
        if base is None:
            raise ConfigurationError(
                f"phase {args.phase} needs a base_checkpoint in the config")
        if args.phase == "refiner":
            train_refiner(config, base, manifest)
        else:
            finetune_edit(config, base, manifest)
    return EXIT_OK


def _load_lift(path):
    model, ckpt = load_model(path)
    if not isinstance(model, LiftModel):
        raise ConfigurationError(f"{path} is not a reconstruction checkpoint")
    return model, ckpt


def _orbit_frames(model, image_path, mask_path, out_dir, frames, pitch,
                  distance, size):
    image = load_image_png(image_path)
    mask = load_mask_png(mask_path) if mask_path else None
    with torch.no_grad():
        cloud = model.reconstruct(image, mask)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cameras = []
    for k in range(frames):
        camera = orbit_camera(360.0 * k / frames, pitch, distance,
                              width=size, height=size)
        with torch.no_grad():
            _, rendered = model.render(cloud, camera)
        save_image_png(rendered.detach().cpu().numpy(),
                       out_dir / f"frame_{k:03d}.png")
        cameras.append(camera.to_json_dict())
    (out_dir / "cameras.json").write_text(json.dumps(cameras, indent=2))


def cmd_reconstruct(args):
    model, _ = _load_lift(args.checkpoint)
    src = Path(args.image)
    if src.is_dir():
        stems = sorted(p for p in src.glob("*.png") if "mask" not in p.name)
        if not stems:
            raise ConfigurationError(f"no PNG frames found in {src}")
        for frame in stems:
            _orbit_frames(model, frame, args.mask, Path(args.orbit) / frame.stem,
                          args.frames, args.pitch, args.distance, args.size)
    else:
        _orbit_frames(model, src, args.mask, args.orbit, args.frames,
                      args.pitch, args.distance, args.size)
    return EXIT_OK


def cmd_viz_decoder(args):
    model, _ = _load_lift(args.checkpoint)
    image = load_image_png(args.image)
    mask = load_mask_png(args.mask) if args.mask else None
    aligned = model.align(image, mask)
    from .preprocess import select_foreground_patches
    patches = select_foreground_patches(aligned, model.config.patch_size)
    if len(patches) == 0:
        raise EmptyForegroundError("image has no foreground patches")
    with torch.no_grad():
        f2d = model.encoder(aligned, patches)
    camera = orbit_camera(0.0, 0.0, args.distance,
                          width=args.size, height=args.size)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    renders = model.decoder.decoder_gallery(f2d, model.template, camera)
    for layer, out in enumerate(renders):
        save_image_png(out.image.detach().cpu().numpy(),
                       out_dir / f"layer_{layer:02d}.png")
    return EXIT_OK


def cmd_serve(args):
    from .service import app_from_checkpoints
    lift = os.environ.get(ENV_CHECKPOINT, args.lift)
    edit = os.environ.get(ENV_EDIT_CHECKPOINT, args.edit)
    app = app_from_checkpoints(lift_path=lift, edit_path=edit,
                               capacity=args.capacity)
    import uvicorn
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def cmd_make_fixtures(args):
    manifest = generate_fixture_dataset(
        args.out, num_scenes=args.scenes, views_per_scene=args.views,
        size=args.size, seed=args.seed, write_seg=args.seg)
    print(manifest)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="headlift")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training phase from a JSON config")
    p.add_argument("--phase", choices=("base", "refiner", "edit"), required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("reconstruct",
                       help="lift an image (or directory of frames) and render an orbit")
    p.add_argument("--image", required=True)
    p.add_argument("--mask")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--orbit", required=True, help="output directory")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--pitch", type=float, default=0.0)
    p.add_argument("--distance", type=float, default=2.7)
    p.add_argument("--size", type=int, default=256)
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("viz-decoder",
                       help="render the per-layer decoder gallery for one image")
    p.add_argument("--image", required=True)
    p.add_argument("--mask")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--distance", type=float, default=2.7)
    p.add_argument("--size", type=int, default=256)
    p.set_defaults(fn=cmd_viz_decoder)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--lift", help=f"lift checkpoint (overridden by ${ENV_CHECKPOINT})")
    p.add_argument("--edit", help=f"edit checkpoint (overridden by ${ENV_EDIT_CHECKPOINT})")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--capacity", type=int, default=32)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("make-fixtures", help="generate a procedural dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=3)
    p.add_argument("--views", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seg", action="store_true", help="also write class maps")
    p.set_defaults(fn=cmd_make_fixtures)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except EmptyForegroundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY_FOREGROUND
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except HeadliftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
