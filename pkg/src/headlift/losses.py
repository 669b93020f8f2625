"""Perceptual supervision: multi-layer feature-cosine losses over frozen
backbones, plain L1, and a pluggable LPIPS-style slot.

feature_cosine is the mean over tap layers of the per-layer mean over tokens
of (1 - cosine similarity) between l2-normalized features of the prediction
and the target.  Gradients flow into the prediction only; the target branch
and the loss backbones stay gradient-free.
"""

from dataclasses import dataclass, field

import torch

from .backbones import BackboneConfig, FrozenBackbone
from .errors import ConfigurationError, InvalidArgumentError
from .geometry import DTYPE

NORM_GUARD = 1e-8
LOSS_KINDS = ("feature_cosine", "l1", "lpips_slot")


@dataclass(frozen=True)
class LossTerm:
    kind: str
    weight: float = 1.0
    backbone: BackboneConfig = None
    tap_layers: tuple = None
    label: str = ""

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigurationError(f"unknown loss kind {self.kind!r}")
        if self.weight < 0:
            raise ConfigurationError("loss weights must be nonnegative")
        if self.kind == "feature_cosine" and self.backbone is None:
            raise ConfigurationError("feature_cosine terms need a backbone")
        if self.tap_layers is not None:
            object.__setattr__(self, "tap_layers", tuple(self.tap_layers))
        if not self.label:
            name = self.backbone.name if self.backbone else ""
            object.__setattr__(self, "label",
                               f"{self.kind}:{name}" if name else self.kind)


@dataclass(frozen=True)
class LossConfig:
    terms: tuple
    phase: str = "base"

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.phase not in ("base", "refiner"):
            raise ConfigurationError(f"unknown phase {self.phase!r}")
        if not any(t.weight > 0 for t in self.terms):
            raise ConfigurationError("at least one loss term must have weight > 0")


def l1_loss(pred, target):
    """Mean absolute pixel difference; target receives no gradient."""
    if tuple(pred.shape) != tuple(target.shape):
        raise InvalidArgumentError(
            f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target.detach()).abs().mean()


def multiscale_l1(pred, target, scales=(1, 2, 4)):
    """Documented LPIPS-slot substitute: mean of L1 at average-pooled scales."""
    if tuple(pred.shape) != tuple(target.shape):
        raise InvalidArgumentError(
            f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    p = pred.permute(2, 0, 1)[None]
    t = target.detach().permute(2, 0, 1)[None]
    total = 0.0
    for s in scales:
        if s == 1:
            total = total + (p - t).abs().mean()
        else:
            total = total + (torch.nn.functional.avg_pool2d(p, s)
                             - torch.nn.functional.avg_pool2d(t, s)).abs().mean()
    return total / len(scales)


def _cosine_layer_mean(pred_tokens, target_tokens):
    pn = torch.linalg.norm(pred_tokens, dim=-1, keepdim=True)
    tn = torch.linalg.norm(target_tokens, dim=-1, keepdim=True)
    valid = ((pn > NORM_GUARD) & (tn > NORM_GUARD))[..., 0]
    cos = ((pred_tokens / torch.clamp(pn, min=NORM_GUARD))
           * (target_tokens / torch.clamp(tn, min=NORM_GUARD))).sum(-1)
    cos = torch.where(valid, cos, torch.zeros_like(cos))
    return (1.0 - cos).mean()


def _tap_fn(backbone):
    net = getattr(backbone, "net", None)
    fn = getattr(net, "forward_taps", None) or getattr(backbone, "forward_taps", None)
    if fn is None:
        raise InvalidArgumentError("backbone must expose forward_taps")
    return fn


def feature_cosine_loss(pred, target, backbone, tap_layers=None):
    """Mean over layers and tokens of (1 - cos) on normalized features.

    backbone is a FrozenBackbone or anything exposing forward_taps(image,
    taps) -> list of (T, C) token tensors; tap_layers overrides its
    configured taps.  Zero-norm token vectors contribute cosine 0 with zero
    gradient.
    """
    if tuple(pred.shape) != tuple(target.shape):
        raise InvalidArgumentError(
            f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if tap_layers is not None:
        taps = tuple(tap_layers)
    else:
        cfg = getattr(backbone, "config", None)
        taps = cfg.tap_layers if cfg is not None else None
    fn = _tap_fn(backbone)
    pred_feats = fn(pred.to(DTYPE), taps)
    with torch.no_grad():
        target_feats = fn(target.detach().to(DTYPE), taps)
    per_layer = [_cosine_layer_mean(p, t) for p, t in zip(pred_feats, target_feats)]
    return torch.stack(per_layer).mean()


def _semantic_backbone():
    # Late-stage taps of the depth-8 builtin ViT: last and third-from-last.
    return BackboneConfig("tiny_vit", tap_layers=(5, 7), feature_dim=64, seed=101)


def _segmentation_backbone():
    return BackboneConfig("tiny_conv", tap_layers=(0,), feature_dim=64, seed=202)


def preset(name):
    """Named LossConfig presets mirroring the ablation rows."""
    semantic = _semantic_backbone()
    seg = _segmentation_backbone()
    if name == "base_full":
        return LossConfig((
            LossTerm("feature_cosine", 1.0, semantic),
            LossTerm("feature_cosine", 1.0, seg),
        ), phase="base")
    if name == "base_dino_only":
        return LossConfig((LossTerm("feature_cosine", 1.0, semantic),), phase="base")
    if name == "base_sam_only":
        return LossConfig((LossTerm("feature_cosine", 1.0, seg),), phase="base")
    if name == "base_lpips_l1":
        return LossConfig((
            LossTerm("lpips_slot", 1.0),
            LossTerm("l1", 1.0),
        ), phase="base")
    if name == "refiner":
        return LossConfig((
            LossTerm("feature_cosine", 1.0, semantic),
            LossTerm("l1", 1.0),
            LossTerm("lpips_slot", 1.0),
        ), phase="refiner")
    raise ConfigurationError(f"unknown loss preset {name!r}")


class LossEvaluator:
    """Materialized LossConfig: owns the frozen loss backbones and computes
    the weighted total plus a per-term breakdown."""

    def __init__(self, config, image_size, patch_size=8, lpips_module=None):
        self.config = config
        self.lpips_module = lpips_module
        self._backbones = []
        for term in config.terms:
            if term.kind == "feature_cosine":
                self._backbones.append(
                    FrozenBackbone(term.backbone, image_size, patch_size))
            else:
                self._backbones.append(None)

    def __call__(self, pred, target):
        total = torch.zeros((), dtype=DTYPE)
        breakdown = {}
        for term, backbone in zip(self.config.terms, self._backbones):
            if term.kind == "feature_cosine":
                value = feature_cosine_loss(pred, target, backbone, term.tap_layers)
            elif term.kind == "l1":
                value = l1_loss(pred, target)
            elif self.lpips_module is not None:
                value = self.lpips_module(pred, target)
            else:
                value = multiscale_l1(pred, target)
            breakdown[term.label] = float(value.detach())
            total = total + term.weight * value
        return total, breakdown


def composite_loss(pred, target, config, image_size=None, patch_size=8,
                   lpips_module=None):
    """One-shot evaluation; prefer LossEvaluator in loops (backbone reuse)."""
    size = image_size if image_size is not None else pred.shape[0]
    return LossEvaluator(config, size, patch_size, lpips_module)(pred, target)
