"""Persistence: the binary tensor format, dataset manifests, PNG previews.

Tensor files are a minimal header (magic "PNDRTNSR", version, dtype code,
dims) followed by the raw row-major little-endian payload.  One tensor per
file; no container or compression.
"""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import BadMagic, InvalidParameter, ManifestError, TruncatedPayload

TENSOR_MAGIC = b"PNDRTNSR"
TENSOR_VERSION = 1

_DTYPE_BY_CODE = {1: np.dtype("<f4"), 2: np.dtype("u1"), 3: np.dtype("<i4")}
_CODE_BY_KIND = {("f", 4): 1, ("u", 1): 2, ("i", 4): 3}


def tensor_to_bytes(data: np.ndarray) -> bytes:
    """Serialize an f32/u8/i32 array to the tensor wire format."""
    data = np.ascontiguousarray(data)
    code = _CODE_BY_KIND.get((data.dtype.kind, data.dtype.itemsize))
    if code is None:
        raise InvalidParameter(
            f"unsupported tensor dtype {data.dtype}; use float32, uint8 or int32"
        )
    header = TENSOR_MAGIC + struct.pack(
        "<III", TENSOR_VERSION, code, data.ndim
    ) + struct.pack(f"<{data.ndim}Q", *data.shape)
    return header + data.astype(_DTYPE_BY_CODE[code], copy=False).tobytes()


def tensor_from_bytes(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    if blob[:8] != TENSOR_MAGIC:
        raise BadMagic(f"{source}: bad magic {blob[:8]!r}")
    version, code, ndim = struct.unpack_from("<III", blob, 8)
    if version != TENSOR_VERSION:
        raise BadMagic(f"{source}: unsupported version {version}")
    if code not in _DTYPE_BY_CODE:
        raise BadMagic(f"{source}: unknown dtype code {code}")
    dims = struct.unpack_from(f"<{ndim}Q", blob, 20)
    dtype = _DTYPE_BY_CODE[code]
    offset = 20 + 8 * ndim
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = blob[offset:]
    if len(payload) != expected:
        raise TruncatedPayload(
            f"{source}: payload {len(payload)} bytes, expected {expected}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def save_tensor(path, data: np.ndarray) -> None:
    blob = tensor_to_bytes(data)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(blob)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return tensor_from_bytes(f.read(), source=str(path))


def save_png(image: np.ndarray, path) -> None:
    """Write a [0,1) float RGB image as 8-bit PNG, rounding half up."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidParameter(f"expected HxWx3 image, got shape {image.shape}")
    q = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5)
    Image.fromarray(np.clip(q, 0, 255).astype(np.uint8), mode="RGB").save(path)


def load_png(path) -> np.ndarray:
    """Read an 8-bit RGB PNG back to float in [0,1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def write_json(path, obj) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


@dataclass
class Sample:
    """One randomized draw of a scene: seeds plus relative artifact paths.

    Paths are relative to the manifest's directory.  light_buffers and
    ldr_preview stay None until an oracle or network render fills them in.
    """

    scene_id: int
    light_seed: int
    material_seed: int
    gbuffer: str
    material_maps: str
    light_maps: str
    light_buffers: str | None = None
    ldr_preview: str | None = None

    def to_dict(self):
        d = {
            "sceneId": self.scene_id,
            "lightSeed": self.light_seed,
            "materialSeed": self.material_seed,
            "gbuffer": self.gbuffer,
            "materialMaps": self.material_maps,
            "lightMaps": self.light_maps,
        }
        if self.light_buffers is not None:
            d["lightBuffers"] = self.light_buffers
        if self.ldr_preview is not None:
            d["ldrPreview"] = self.ldr_preview
        return d

    @staticmethod
    def from_dict(d):
        return Sample(
            scene_id=int(d["sceneId"]),
            light_seed=int(d["lightSeed"]),
            material_seed=int(d["materialSeed"]),
            gbuffer=d["gbuffer"],
            material_maps=d["materialMaps"],
            light_maps=d["lightMaps"],
            light_buffers=d.get("lightBuffers"),
            ldr_preview=d.get("ldrPreview"),
        )


@dataclass
class Manifest:
    scenes: dict = field(default_factory=dict)  # scene_id -> relative scene path
    samples: list = field(default_factory=list)


def write_manifest(path, manifest: Manifest) -> None:
    obj = {
        "scenes": {str(k): v for k, v in sorted(manifest.scenes.items())},
        "samples": [s.to_dict() for s in manifest.samples],
    }
    write_json(path, obj)


def read_manifest(path, check_files: bool = True) -> Manifest:
    try:
        obj = read_json(path)
    except FileNotFoundError as e:
        raise ManifestError(f"manifest not found: {path}") from e
    scenes = {int(k): v for k, v in obj.get("scenes", {}).items()}
    samples = [Sample.from_dict(d) for d in obj.get("samples", [])]
    if check_files:
        root = os.path.dirname(os.path.abspath(path))
        missing = []
        for rel in scenes.values():
            if not os.path.exists(os.path.join(root, rel)):
                missing.append(rel)
        for s in samples:
            for rel in (s.gbuffer, s.material_maps, s.light_maps,
                        s.light_buffers, s.ldr_preview):
                if rel is not None and not os.path.exists(os.path.join(root, rel)):
                    missing.append(rel)
        if missing:
            raise ManifestError(
                "manifest references missing paths: " + ", ".join(sorted(set(missing)))
            )
    return Manifest(scenes=scenes, samples=samples)
