"""Named-tensor checkpoint archives.

A checkpoint is an .npz of float64 arrays named "<component>/<parameter>"
plus a JSON manifest sidecar recording every tensor's shape and dtype, free
metadata, and a sha256 over the tensor bytes.  The hash doubles as the
freeze-verification fingerprint for phase-2 training.
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigurationError

MANIFEST_SUFFIX = ".manifest.json"


def module_arrays(module):
    """state_dict as plain numpy arrays (detached copies)."""
    return {name: tensor.detach().cpu().numpy().copy()
            for name, tensor in module.state_dict().items()}


def arrays_hash(arrays):
    """Order-independent sha256 over names, shapes, dtypes, and raw bytes."""
    digest = hashlib.sha256()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        digest.update(name.encode("utf-8"))
        digest.update(str(arr.shape).encode("utf-8"))
        digest.update(str(arr.dtype).encode("utf-8"))
        digest.update(arr.tobytes())
    return digest.hexdigest()


def module_hash(module):
    return arrays_hash(module_arrays(module))


@dataclass(frozen=True)
class Checkpoint:
    arrays: dict  # "<component>/<param>" -> np.ndarray
    metadata: dict
    sha256: str

    def component_arrays(self, component):
        prefix = component + "/"
        out = {name[len(prefix):]: arr for name, arr in self.arrays.items()
               if name.startswith(prefix)}
        if not out:
            raise ConfigurationError(
                f"checkpoint has no component {component!r}")
        return out

    @property
    def components(self):
        return sorted({name.split("/", 1)[0] for name in self.arrays})


def manifest_path(path):
    return Path(str(path) + MANIFEST_SUFFIX)


def save_checkpoint(path, components, metadata=None):
    """components: {"encoder": module_or_arrays, ...} -> manifest dict."""
    arrays = {}
    for comp, source in components.items():
        if "/" in comp:
            raise ConfigurationError(f"component name {comp!r} may not contain '/'")
        named = source if isinstance(source, dict) else module_arrays(source)
        for name, arr in named.items():
            arrays[f"{comp}/{name}"] = np.asarray(arr)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **arrays)
    manifest = {
        "tensors": {name: {"shape": list(arr.shape), "dtype": str(arr.dtype)}
                    for name, arr in arrays.items()},
        "metadata": dict(metadata or {}),
        "sha256": arrays_hash(arrays),
    }
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def load_checkpoint(path):
    """Load and verify an archive against its manifest."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"checkpoint {path} does not exist")
    mpath = manifest_path(path)
    if not mpath.exists():
        raise ConfigurationError(f"checkpoint manifest {mpath} does not exist")
    manifest = json.loads(mpath.read_text())
    with np.load(path) as archive:
        arrays = {name: archive[name] for name in archive.files}
    declared = manifest.get("tensors", {})
    if set(declared) != set(arrays):
        missing = sorted(set(declared) ^ set(arrays))
        raise ConfigurationError(
            f"archive/manifest tensor sets differ, first mismatch {missing[0]!r}")
    for name, info in declared.items():
        if list(arrays[name].shape) != list(info["shape"]):
            raise ConfigurationError(
                f"tensor {name!r} has shape {list(arrays[name].shape)}, "
                f"manifest says {info['shape']}")
    digest = arrays_hash(arrays)
    if digest != manifest.get("sha256"):
        raise ConfigurationError(f"checkpoint {path} failed its content hash")
    return Checkpoint(arrays, manifest.get("metadata", {}), digest)


def restore_module(module, checkpoint, component):
    """Load one component's tensors into a module, strictly."""
    arrays = checkpoint.component_arrays(component)
    state = module.state_dict()
    if set(state) != set(arrays):
        missing = sorted(set(state) ^ set(arrays))
        raise ConfigurationError(
            f"component {component!r} does not match module parameters, "
            f"first mismatch {missing[0]!r}")
    tensors = {}
    for name, arr in arrays.items():
        if tuple(arr.shape) != tuple(state[name].shape):
            raise ConfigurationError(
                f"tensor {component}/{name} has shape {tuple(arr.shape)}, "
                f"module expects {tuple(state[name].shape)}")
        tensors[name] = torch.from_numpy(np.asarray(arr)).to(state[name].dtype)
    module.load_state_dict(tensors)
    return module
