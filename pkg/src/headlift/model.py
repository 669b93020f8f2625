"""Full pipeline assembly: encoder + decoder + refiner over a shared template.

LiftModel reconstructs a GaussianCloud from one aligned image; EditModel does
the same from a segmentation map plus style embedding, sharing the decoder
and head architecture so base weights transfer directly.
"""

import dataclasses
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .backbones import BackboneConfig
from .checkpoint import load_checkpoint, restore_module, save_checkpoint
from .decoder import LiftDecoder, LiftDecoderConfig
from .edit_encoder import EditEncoder, EditEncoderConfig
from .errors import ConfigurationError, EmptyForegroundError
from .geometry import build_template
from .lift_encoder import LiftEncoder, LiftEncoderConfig
from .preprocess import AlignedImage, prepare, select_foreground_patches
from .refiner import Refiner, RefinerConfig
from .splat import rasterize


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    patch_size: int = 8
    dim: int = 256
    enc_dim: int = 128
    enc_blocks: int = 4
    enc_heads: int = 4
    num_layers: int = 6
    num_heads: int = 8
    num_patches: int = 256
    template_seed: int = 0
    backbone: BackboneConfig = field(default_factory=lambda: BackboneConfig("tiny_vit"))
    refiner: RefinerConfig = field(default_factory=RefinerConfig)

    def encoder_config(self):
        return LiftEncoderConfig(
            image_size=self.image_size, patch_size=self.patch_size, dim=self.dim,
            enc_dim=self.enc_dim, enc_blocks=self.enc_blocks,
            enc_heads=self.enc_heads, backbone=self.backbone)

    def edit_encoder_config(self):
        return EditEncoderConfig(
            image_size=self.image_size, patch_size=self.patch_size, dim=self.dim,
            enc_dim=self.enc_dim, enc_blocks=self.enc_blocks,
            enc_heads=self.enc_heads)

    def decoder_config(self):
        return LiftDecoderConfig(dim=self.dim, num_layers=self.num_layers,
                                 num_heads=self.num_heads)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if isinstance(data.get("backbone"), dict):
            bb = dict(data["backbone"])
            bb["tap_layers"] = tuple(bb.get("tap_layers", ()))
            data["backbone"] = BackboneConfig(**bb)
        if isinstance(data.get("refiner"), dict):
            data["refiner"] = RefinerConfig(**data["refiner"])
        return cls(**data)


def desk_config():
    """The scale every test runs at."""
    return ModelConfig()


def service_config():
    """Service-facing preset: full-resolution inputs, desk-sized template."""
    return ModelConfig(image_size=256, patch_size=16)


def paper_scale_config():
    """The published scale; constructible but not exercised by the test suite."""
    return ModelConfig(image_size=512, patch_size=16, dim=1024, enc_dim=512,
                       num_heads=16, num_patches=4096)


class LiftModel(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        cfg = config or desk_config()
        self.config = cfg
        self.encoder = LiftEncoder(cfg.encoder_config())
        self.decoder = LiftDecoder(cfg.decoder_config())
        self.refiner = Refiner(cfg.refiner)
        self.template = build_template(cfg.num_patches, seed=cfg.template_seed)

    def init_weights(self, seed):
        self.encoder.init_weights(seed)
        self.decoder.init_weights(seed + 1)
        self.refiner.init_weights(seed + 2)
        return self

    def align(self, image, mask=None):
        if isinstance(image, AlignedImage):
            return image
        return prepare(image, mask=mask, size=self.config.image_size)

    def reconstruct(self, image, mask=None):
        """Single image (or AlignedImage) -> GaussianCloud."""
        aligned = self.align(image, mask)
        patches = select_foreground_patches(aligned, self.config.patch_size)
        if len(patches) == 0:
            raise EmptyForegroundError("image has no foreground patches")
        f2d = self.encoder(aligned, patches)
        return self.decoder(f2d, self.template)

    def render(self, cloud, camera, background=(1.0, 1.0, 1.0), refine=True):
        """Rasterize and optionally sharpen; returns (RenderOutput, image)."""
        out = rasterize(cloud, camera, background)
        image = self.refiner(out.image) if refine else out.image
        return out, image

    def forward(self, aligned, patches):
        return self.decoder(self.encoder(aligned, patches), self.template)


class EditModel(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        cfg = config or desk_config()
        self.config = cfg
        self.encoder = EditEncoder(cfg.edit_encoder_config())
        self.decoder = LiftDecoder(cfg.decoder_config())
        self.refiner = Refiner(cfg.refiner)
        self.template = build_template(cfg.num_patches, seed=cfg.template_seed)

    def init_weights(self, seed):
        self.encoder.init_weights(seed)
        self.decoder.init_weights(seed + 1)
        self.refiner.init_weights(seed + 2)
        return self

    def init_from_base(self, base):
        """Copy the shared decoder/head and refiner weights from a LiftModel."""
        if base.config.dim != self.config.dim or \
                base.config.num_layers != self.config.num_layers:
            raise ConfigurationError("base and edit decoder shapes differ")
        self.decoder.load_state_dict(base.decoder.state_dict())
        self.refiner.load_state_dict(base.refiner.state_dict())
        return self

    def reconstruct(self, seg, style):
        """SegmentationMap + StyleEmbedding -> GaussianCloud."""
        return self.decoder(self.encoder(seg, style), self.template)

    def render(self, cloud, camera, background=(1.0, 1.0, 1.0), refine=True):
        out = rasterize(cloud, camera, background)
        image = self.refiner(out.image) if refine else out.image
        return out, image

    forward = reconstruct


def model_components(model):
    return {"encoder": model.encoder, "decoder": model.decoder,
            "refiner": model.refiner}


def save_model(path, model, metadata=None):
    meta = dict(metadata or {})
    meta["config"] = model.config.to_dict()
    meta["model_kind"] = "edit" if isinstance(model, EditModel) else "lift"
    return save_checkpoint(path, model_components(model), meta)


def load_model(path):
    """Rebuild a LiftModel or EditModel from a checkpoint archive."""
    ckpt = load_checkpoint(path)
    if "config" not in ckpt.metadata:
        raise ConfigurationError(f"checkpoint {path} has no model config metadata")
    cfg = ModelConfig.from_dict(ckpt.metadata["config"])
    kind = ckpt.metadata.get("model_kind", "lift")
    model = EditModel(cfg) if kind == "edit" else LiftModel(cfg)
    for name, module in model_components(model).items():
        restore_module(module, ckpt, name)
    return model, ckpt
