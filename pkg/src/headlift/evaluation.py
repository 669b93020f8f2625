"""Image metrics and the novel/extreme view evaluation protocols.

Metrics take channels-last arrays or tensors in [0, 1].  Protocols run a
model adapter over view pairs from dataset manifests and emit per-scene and
aggregate tables as CSV or JSON.
"""

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .backbones import FrozenBackbone
from .errors import ConfigurationError, InvalidArgumentError
from .geometry import DTYPE
from .losses import _semantic_backbone, feature_cosine_loss
from .model import load_model

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
ANGLE_FLOOR = 1e-6
PROTOCOLS = ("novel", "extreme")


def _as_tensor(image):
    if isinstance(image, torch.Tensor):
        return image.to(DTYPE)
    return torch.tensor(np.asarray(image), dtype=DTYPE)


def psnr(pred, target):
    """10*log10(1/MSE) for images in [0, 1]; equal inputs give +inf."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise InvalidArgumentError(
            f"psnr shapes differ: {tuple(pred.shape)} vs {tuple(target.shape)}")
    mse = float(torch.mean((pred - target) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size, sigma):
    coords = torch.arange(size, dtype=DTYPE) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2 * sigma * sigma))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(pred, target, window=SSIM_WINDOW, sigma=SSIM_SIGMA,
         k1=SSIM_K1, k2=SSIM_K2, data_range=1.0):
    """Mean structural similarity with a gaussian window, valid padding."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise InvalidArgumentError(
            f"ssim shapes differ: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if pred.ndim == 2:
        pred, target = pred[..., None], target[..., None]
    if pred.ndim != 3:
        raise InvalidArgumentError("ssim expects (H, W) or (H, W, C) images")
    h, w = pred.shape[:2]
    if h < window or w < window:
        raise InvalidArgumentError(
            f"image {h}x{w} smaller than the {window}-pixel ssim window")
    # channels as batch entries of single-channel maps
    x = pred.permute(2, 0, 1).unsqueeze(1)
    y = target.permute(2, 0, 1).unsqueeze(1)
    kernel = _gaussian_window(window, sigma).reshape(1, 1, window, window)
    blur = lambda t: torch.nn.functional.conv2d(t, kernel)
    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x * mu_x
    var_y = blur(y * y) - mu_y * mu_y
    cov = blur(x * y) - mu_x * mu_y
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float((num / den).mean())


def feature_distance(pred, target, backbone, tap_layers=None):
    """Perceptual distance between two images; no gradients flow."""
    with torch.no_grad():
        value = feature_cosine_loss(_as_tensor(pred), _as_tensor(target),
                                    backbone, tap_layers=tap_layers)
    return float(value)


def select_extreme_pairs(cameras, percentile=90.0):
    """Most-separated view pairs: optical-axis angles at or above the 90th
    percentile, plus the pair with maximum vertical camera separation.
    """
    cameras = list(cameras)
    if len(cameras) < 2:
        warnings.warn("extreme-pair selection needs at least two views")
        return []
    axes = np.stack([cam.optical_axis for cam in cameras])
    heights = np.array([cam.position[1] for cam in cameras])
    pairs, angles = [], []
    for i in range(len(cameras)):
        for j in range(i + 1, len(cameras)):
            cosang = float(np.clip(axes[i] @ axes[j], -1.0, 1.0))
            pairs.append((i, j))
            angles.append(math.acos(cosang))
    angles = np.asarray(angles)
    threshold = max(float(np.percentile(angles, percentile)), ANGLE_FLOOR)
    selected = {p for p, a in zip(pairs, angles) if a >= threshold}
    vertical = np.abs(heights[:, None] - heights[None, :])
    if vertical.max() > ANGLE_FLOOR:
        i, j = np.unravel_index(int(vertical.argmax()), vertical.shape)
        selected.add((min(i, j), max(i, j)))
    return sorted(selected)


class GroundTruthOracle:
    """Adapter stub that echoes the target image; metric floor/ceiling."""

    def predict(self, input_view, target_view):
        return target_view.load_image()


class LiftModelAdapter:
    """Runs a LiftModel: reconstruct from the input view, render at the
    target view's camera with refinement."""

    def __init__(self, model, background=(1.0, 1.0, 1.0), refine=True):
        self.model = model
        self.background = background
        self.refine = refine

    def predict(self, input_view, target_view):
        with torch.no_grad():
            cloud = self.model.reconstruct(
                input_view.load_image(), input_view.load_mask())
            _, image = self.model.render(
                cloud, target_view.camera, background=self.background,
                refine=self.refine)
        return image.detach().cpu().numpy()


def adapter_from_checkpoint(path, **kwargs):
    model, _ = load_model(path)
    return LiftModelAdapter(model, **kwargs)


@dataclass
class EvalTable:
    protocol: str
    rows: list = field(default_factory=list)

    COLUMNS = ("scene_id", "input", "target", "psnr", "ssim",
               "feature_distance", "identity")

    def add(self, scene_id, input_idx, target_idx, metrics):
        self.rows.append({"scene_id": scene_id, "input": input_idx,
                          "target": target_idx, **metrics})

    def _mean(self, rows, key):
        values = [r[key] for r in rows if isinstance(r[key], float)]
        return float(np.mean(values)) if values else "n/a"

    def scene_means(self):
        by_scene = {}
        for row in self.rows:
            by_scene.setdefault(row["scene_id"], []).append(row)
        return {sid: {k: self._mean(rows, k)
                      for k in ("psnr", "ssim", "feature_distance", "identity")}
                for sid, rows in sorted(by_scene.items())}

    def aggregate(self):
        return {k: self._mean(self.rows, k)
                for k in ("psnr", "ssim", "feature_distance", "identity")}

    def to_json_dict(self):
        return {"protocol": self.protocol, "rows": self.rows,
                "scene_means": self.scene_means(), "aggregate": self.aggregate()}

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2,
                                         default=str))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.COLUMNS)
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row)


def protocol_pairs(scene, protocol):
    """Directed (input, target) index pairs for one scene."""
    n = len(scene.views)
    if protocol == "novel":
        return [(i, j) for i in range(n) for j in range(n) if i != j]
    if protocol == "extreme":
        undirected = select_extreme_pairs([v.camera for v in scene.views])
        return [p for i, j in undirected for p in ((i, j), (j, i))]
    raise InvalidArgumentError(f"unknown protocol {protocol!r}")


def run_protocol(adapter, manifests, protocol="novel", backbone=None,
                 identity_adapter=None, patch_size=8):
    """Evaluate every protocol pair of every scene; returns an EvalTable.

    identity metrics are reported as "n/a" unless an adapter with
    distance(pred, target) is supplied.
    """
    table = EvalTable(protocol)
    for scene in manifests:
        for i, j in protocol_pairs(scene, protocol):
            pred = np.asarray(adapter.predict(scene.views[i], scene.views[j]))
            target = scene.views[j].load_image()
            if backbone is None:
                backbone = FrozenBackbone(_semantic_backbone(),
                                          target.shape[0], patch_size)
            if pred.shape != target.shape:
                raise ConfigurationError(
                    f"adapter produced {pred.shape}, expected {target.shape}")
            identity = ("n/a" if identity_adapter is None
                        else float(identity_adapter.distance(pred, target)))
            table.add(scene.scene_id, i, j, {
                "psnr": psnr(pred, target),
                "ssim": ssim(pred, target),
                "feature_distance": feature_distance(pred, target, backbone),
                "identity": identity,
            })
    return table
