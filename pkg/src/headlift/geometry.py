"""Canonical 3D scene elements: cameras, Gaussian clouds, and the head template.

World coordinates are right-handed with +y up; the head template is centered
at the origin.  Cameras follow the computer-vision convention: world-to-camera
is ``x_cam = R @ x_world + t``, +z looks forward, +x right, +y down in the
image, and the pixel origin is the top-left corner (pixel (row, col) has its
center at (col + 0.5, row + 0.5)).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import InvalidArgumentError

# All torch-side math in the package runs in float64: the finite-difference
# gradient acceptance (eps 1e-4, rel err < 1e-3) has no headroom in float32.
DTYPE = torch.float64

GAUSSIANS_PER_PATCH = 16

# Head-proportioned ellipsoid semi-axes (x width, y height, z depth).
TEMPLATE_SEMI_AXES = (1.0, 1.3, 1.1)

DEFAULT_CAMERA_DISTANCE = 2.7
DEFAULT_FOV_DEG = 60.0


@dataclass(frozen=True)
class Camera:
    """Pinhole intrinsics plus a rigid world-to-camera transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray  # 3x3 orthonormal, world-to-camera
    translation: np.ndarray  # 3-vector, world-to-camera
    near: float = 0.05
    far: float = 100.0

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgumentError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.near < self.far):
            raise InvalidArgumentError(f"need 0 < near < far, got near={self.near}, far={self.far}")
        if self.width < 1 or self.height < 1:
            raise InvalidArgumentError("image size must be at least 1x1")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
            raise InvalidArgumentError("rotation matrix is not orthonormal within 1e-6")

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def optical_axis(self) -> np.ndarray:
        """World-space unit vector the camera looks along (+z row of R)."""
        return self.rotation[2].copy()

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def to_json_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "R": [float(v) for v in self.rotation.reshape(-1)],
            "t": [float(v) for v in self.translation],
            "near": self.near,
            "far": self.far,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Camera":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
            rotation=np.asarray(d["R"], dtype=np.float64).reshape(3, 3),
            translation=np.asarray(d["t"], dtype=np.float64),
            near=float(d["near"]),
            far=float(d["far"]),
        )


def orbit_camera(
    yaw_deg: float,
    pitch_deg: float = 0.0,
    distance: float = DEFAULT_CAMERA_DISTANCE,
    width: int = 256,
    height: int = 256,
    fov_deg: float = DEFAULT_FOV_DEG,
    near: float = 0.05,
    far: float = 100.0,
) -> Camera:
    """Camera on a sphere around the origin, looking at the origin, +y up.

    yaw=0, pitch=0 places the camera on the +z axis (frontal view); positive
    yaw orbits toward +x, positive pitch rises above the horizon.
    """
    yaw = math.radians(yaw_deg)
    pitch = math.radians(max(-89.0, min(89.0, pitch_deg)))
    pos = distance * np.array(
        [math.sin(yaw) * math.cos(pitch), math.sin(pitch), math.cos(yaw) * math.cos(pitch)]
    )
    forward = -pos / np.linalg.norm(pos)
    up = np.array([0.0, 1.0, 0.0])
    x_cam = np.cross(forward, up)
    x_cam /= np.linalg.norm(x_cam)
    y_cam = np.cross(forward, x_cam)
    R = np.stack([x_cam, y_cam, forward])
    t = -R @ pos
    f = 0.5 * width / math.tan(math.radians(fov_deg) / 2)
    return Camera(
        fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
        width=width, height=height, rotation=R, translation=t, near=near, far=far,
    )


@dataclass(frozen=True)
class GaussianCloud:
    """Structure-of-arrays of 3D Gaussians, stored as torch float64 tensors.

    Tensors may carry gradients (the Gaussian head emits differentiable
    clouds); plain numpy inputs are accepted and converted.
    """

    positions: torch.Tensor  # (N, 3)
    scales: torch.Tensor  # (N, 3), per-axis std-dev, > 0
    rotations: torch.Tensor  # (N, 4), unit quaternions (w, x, y, z)
    opacities: torch.Tensor  # (N,), in (0, 1)
    colors: torch.Tensor  # (N, 3), in [0, 1]

    def __post_init__(self):
        for name in ("positions", "scales", "rotations", "opacities", "colors"):
            v = getattr(self, name)
            if not isinstance(v, torch.Tensor):
                object.__setattr__(self, name, torch.as_tensor(np.asarray(v), dtype=DTYPE))
            elif v.dtype != DTYPE:
                object.__setattr__(self, name, v.to(DTYPE))
        n = self.positions.shape[0]
        expect = {
            "positions": (n, 3), "scales": (n, 3), "rotations": (n, 4),
            "opacities": (n,), "colors": (n, 3),
        }
        for name, shape in expect.items():
            got = tuple(getattr(self, name).shape)
            if got != shape:
                raise InvalidArgumentError(f"{name} has shape {got}, expected {shape}")

    def __len__(self) -> int:
        return self.positions.shape[0]

    def validate(self, quat_tol: float = 1e-5):
        """Check the value-range invariants; raises on violation."""
        with torch.no_grad():
            if len(self) == 0:
                return
            if not torch.all(self.scales > 0):
                raise InvalidArgumentError("all scales must be strictly positive")
            qn = torch.linalg.norm(self.rotations, dim=1)
            if not torch.all((qn - 1.0).abs() <= quat_tol):
                raise InvalidArgumentError(f"quaternions must be unit-norm within {quat_tol}")
            if not torch.all((self.opacities > 0) & (self.opacities < 1)):
                raise InvalidArgumentError("opacities must lie strictly inside (0, 1)")
            if not torch.all((self.colors >= 0) & (self.colors <= 1)):
                raise InvalidArgumentError("colors must lie in [0, 1]")

    def detach(self) -> "GaussianCloud":
        return GaussianCloud(
            self.positions.detach(), self.scales.detach(), self.rotations.detach(),
            self.opacities.detach(), self.colors.detach(),
        )

    def select(self, index) -> "GaussianCloud":
        return GaussianCloud(
            self.positions[index], self.scales[index], self.rotations[index],
            self.opacities[index], self.colors[index],
        )

    def numpy(self) -> dict[str, np.ndarray]:
        return {
            "positions": self.positions.detach().numpy().copy(),
            "scales": self.scales.detach().numpy().copy(),
            "rotations": self.rotations.detach().numpy().copy(),
            "opacities": self.opacities.detach().numpy().copy(),
            "colors": self.colors.detach().numpy().copy(),
        }

    @classmethod
    def empty(cls) -> "GaussianCloud":
        z = lambda *s: torch.zeros(*s, dtype=DTYPE)
        return cls(z(0, 3), z(0, 3), z(0, 4), z(0), z(0, 3))


def morton_codes(vertices: np.ndarray, bits: int = 10) -> np.ndarray:
    """Morton (Z-order) code per vertex, `bits` bits per axis over the bbox.

    All axes share one quantization scale (the largest bbox extent), so cells
    are cubes and the curve respects actual distances; per-axis scales would
    stretch near-degenerate axes to full range and scramble locality.
    """
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    lo = v.min(axis=0)
    span = float((v.max(axis=0) - lo).max())
    if span == 0.0:
        span = 1.0  # all points identical: everything quantizes to 0
    q = np.floor((v - lo) / span * (2**bits - 1) + 0.5).astype(np.uint64)
    q = np.clip(q, 0, 2**bits - 1)
    codes = np.zeros(len(v), dtype=np.uint64)
    for b in range(bits):
        for axis in range(3):
            codes |= ((q[:, axis] >> np.uint64(b)) & np.uint64(1)) << np.uint64(3 * b + axis)
    return codes


def group_patches(vertices: np.ndarray) -> np.ndarray:
    """Assign each vertex to a spatially-local patch of 16.

    Vertices are ordered by Morton code (ties broken by input index) and the
    ordering is split into consecutive runs of 16; the returned array maps
    each *input* vertex to its patch id.
    """
    v = np.asarray(vertices, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 3:
        raise InvalidArgumentError(f"vertices must be (V, 3), got {v.shape}")
    n = v.shape[0]
    if n % GAUSSIANS_PER_PATCH != 0:
        raise InvalidArgumentError(f"vertex count {n} is not divisible by {GAUSSIANS_PER_PATCH}")
    order = np.argsort(morton_codes(v), kind="stable")
    patch_index = np.empty(n, dtype=np.int64)
    patch_index[order] = np.arange(n) // GAUSSIANS_PER_PATCH
    return patch_index


@dataclass(frozen=True)
class TemplatePointSet:
    """The canonical head-shaped point set, grouped into 3D patches of 16.

    Vertices are stored in Morton order, so patch p owns vertices
    [16p, 16p+16) and "the g-th vertex of patch p" is well defined.
    """

    vertices: np.ndarray  # (V, 3)
    patch_index: np.ndarray  # (V,), int64
    patch_centroids: np.ndarray = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        pi = np.asarray(self.patch_index, dtype=np.int64)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "patch_index", pi)
        if v.shape[0] % GAUSSIANS_PER_PATCH != 0:
            raise InvalidArgumentError("vertex count must be divisible by 16")
        counts = np.bincount(pi, minlength=self.num_patches)
        if not np.all(counts == GAUSSIANS_PER_PATCH):
            raise InvalidArgumentError("every patch must have exactly 16 members")
        centroids = np.zeros((self.num_patches, 3))
        np.add.at(centroids, pi, v)
        object.__setattr__(self, "patch_centroids", centroids / GAUSSIANS_PER_PATCH)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_patches(self) -> int:
        return self.vertices.shape[0] // GAUSSIANS_PER_PATCH

    def vertices_torch(self) -> torch.Tensor:
        return torch.as_tensor(self.vertices, dtype=DTYPE)

    def centroids_torch(self) -> torch.Tensor:
        return torch.as_tensor(self.patch_centroids, dtype=DTYPE)


def _fibonacci_sphere(n: int) -> np.ndarray:
    """Low-discrepancy unit-sphere lattice (golden-spiral construction)."""
    i = np.arange(n, dtype=np.float64)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    y = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - y * y))
    return np.stack([r * np.cos(phi), y, r * np.sin(phi)], axis=1)


def _seeded_rotation(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    # Uniform random rotation via a normalized random quaternion.
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def build_template(num_patches: int, seed: int = 0) -> TemplatePointSet:
    """Deterministic head-proportioned template of 16*num_patches vertices.

    A Fibonacci lattice on the unit sphere is rotated by a seeded random
    rotation (so different seeds decorrelate the lattice axes) and stretched
    to the head ellipsoid.  Identical (num_patches, seed) give bit-identical
    output.
    """
    if num_patches < 1:
        raise InvalidArgumentError(f"num_patches must be >= 1, got {num_patches}")
    n = num_patches * GAUSSIANS_PER_PATCH
    pts = _fibonacci_sphere(n) @ _seeded_rotation(seed).T
    pts = pts * np.asarray(TEMPLATE_SEMI_AXES)
    order = np.argsort(morton_codes(pts), kind="stable")
    vertices = pts[order]
    patch_index = np.arange(n, dtype=np.int64) // GAUSSIANS_PER_PATCH
    return TemplatePointSet(vertices=vertices, patch_index=patch_index)


# Template export/import.  Binary layout (little-endian): uint64 vertex count,
# then V*3 float64 vertices row-major, then V int64 patch indices.

_BIN_MAGIC = b"HLTP"


def save_template(template: TemplatePointSet, path: str):
    path = str(path)
    if path.endswith(".json"):
        payload = {
            "vertices": [[float(x) for x in row] for row in template.vertices],
            "patch_index": [int(i) for i in template.patch_index],
        }
        with open(path, "w") as f:
            json.dump(payload, f)
    else:
        with open(path, "wb") as f:
            f.write(_BIN_MAGIC)
            f.write(struct.pack("<Q", template.num_vertices))
            f.write(template.vertices.astype("<f8").tobytes())
            f.write(template.patch_index.astype("<i8").tobytes())


def load_template(path: str) -> TemplatePointSet:
    path = str(path)
    if path.endswith(".json"):
        with open(path) as f:
            payload = json.load(f)
        vertices = np.asarray(payload["vertices"], dtype=np.float64)
        patch_index = np.asarray(payload["patch_index"], dtype=np.int64)
    else:
        with open(path, "rb") as f:
            magic = f.read(4)
            if magic != _BIN_MAGIC:
                raise InvalidArgumentError(f"{path} is not a template file")
            (count,) = struct.unpack("<Q", f.read(8))
            vertices = np.frombuffer(f.read(count * 3 * 8), dtype="<f8").reshape(count, 3).copy()
            patch_index = np.frombuffer(f.read(count * 8), dtype="<i8").copy()
    return TemplatePointSet(vertices=vertices, patch_index=patch_index)
