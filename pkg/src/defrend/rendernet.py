"""The trainable deferred renderer: a fully-convolutional U-shaped net
mapping the 15-channel geometry/material/light field to the four light
buffers, trained with Adam on a per-buffer L1 loss.

Channel orders are fixed: input [X(3), N(3), A(3), S(1), R(1), Ldir(3),
Ldist(1)], output [Ddir(3), Dind(3), Gdir(3), Gind(3)].  A softplus head
keeps the predicted buffers non-negative with nonzero gradients.
"""

import json
import os
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import compose, dataio, gbuffer as gb, rng
from .errors import BadMagic, InvalidParameter, ShapeMismatch
from .oracle import LightBuffers
from .randomize import LightMaps, MaterialMaps

NORM_RADIUS = 3.0  # meters; X and Ldist are divided by this
CKPT_MAGIC = b"PNDRCKPT"
CKPT_VERSION = 1

INPUT_CHANNELS = 15
OUTPUT_CHANNELS = 12
LIFT_CHANNELS = 4  # fixed photometric features derived from the 15 inputs


@dataclass
class ArchConfig:
    levels: int = 3
    base: int = 16
    in_channels: int = INPUT_CHANNELS
    out_channels: int = OUTPUT_CHANNELS
    norm_groups: int = 0  # group normalization inside blocks; 0 disables

    def channels(self, level):
        return self.base * (2 ** level)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    epochs: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 1:
            raise InvalidParameter("hyperparameters must be positive")


def layer_specs(arch: ArchConfig):
    """Ordered (name, kernel_shape) pairs defining the parameter set."""
    specs = []

    def block(tag, cin, cout):
        for i, c_in in ((1, cin), (2, cout)):
            specs.append((f"{tag}_conv{i}_w", (3, 3, c_in, cout)))
            specs.append((f"{tag}_conv{i}_b", (cout,)))
            if arch.norm_groups:
                specs.append((f"{tag}_norm{i}_g", (cout,)))
                specs.append((f"{tag}_norm{i}_b", (cout,)))

    cin = arch.in_channels + LIFT_CHANNELS
    for lv in range(arch.levels):
        block(f"enc{lv}", cin, arch.channels(lv))
        cin = arch.channels(lv)
    for lv in range(arch.levels - 2, -1, -1):
        block(f"dec{lv}", arch.channels(lv + 1) + arch.channels(lv),
              arch.channels(lv))
    specs.append(("head_w", (3, 3, arch.channels(0), arch.out_channels)))
    specs.append(("head_b", (arch.out_channels,)))
    return specs


def init_params(arch: ArchConfig, seed: int):
    """He-normal conv kernels, zero biases; deterministic per seed."""
    gen = rng.generator(seed, 101)
    params = {}
    for name, shape in layer_specs(arch):
        if name.endswith("_b"):
            params[name] = np.zeros(shape, dtype=np.float32)
        elif name.endswith("_g"):
            params[name] = np.ones(shape, dtype=np.float32)
        else:
            fan_in = shape[0] * shape[1] * shape[2]
            std = np.sqrt(2.0 / fan_in)
            params[name] = (gen.standard_normal(shape) * std).astype(np.float32)
    return params


def _group_norm(x, gamma, beta, groups):
    n, h, w, c = x.data.shape
    g = min(groups, c)
    while c % g:
        g -= 1
    dt = x.data.dtype
    xg = ad.reshape(x, (n, h, w, g, c // g))
    mu = ad.mean_(xg, axis=(1, 2, 4), keepdims=True)
    d = ad.sub(xg, mu)
    var = ad.mean_(ad.mul(d, d), axis=(1, 2, 4), keepdims=True)
    xn = ad.div(d, ad.sqrt(ad.add(var, np.asarray(1e-5, dt))))
    return ad.add(ad.mul(ad.reshape(xn, (n, h, w, c)), gamma), beta)


def _block(p, tag, x, arch):
    for i in (1, 2):
        x = ad.conv2d(x, p[f"{tag}_conv{i}_w"], p[f"{tag}_conv{i}_b"])
        if arch.norm_groups:
            x = _group_norm(x, p[f"{tag}_norm{i}_g"], p[f"{tag}_norm{i}_b"],
                            arch.norm_groups)
        x = ad.relu(x)
    return x


def _clamp_min(t, c):
    return ad.add(ad.relu(ad.sub(t, c)), c)


def photometric_lift(x, return_irradiance=False):
    """Fixed differentiable features appended to the raw input field:
    [n.l, n.l/dist^2, n.v, n.h].  These are the pointwise quantities any
    physically-based shading function is built from; providing them lets
    the pinned training budget go into shadows and indirect transport."""
    dt = x.data.dtype

    def const(v):
        return np.asarray(v, dtype=dt)

    def channel_norm(t):
        return ad.sqrt(ad.add(ad.sum_(ad.mul(t, t), axis=-1, keepdims=True),
                              const(1e-12)))

    xn = x[..., 0:3]          # X / NORM_RADIUS
    n = x[..., 3:6]
    ldir = x[..., 11:14]
    ldist = x[..., 14:15]     # Ldist / NORM_RADIUS
    ndl = ad.relu(ad.sum_(ad.mul(n, ldir), axis=-1, keepdims=True))
    dist2 = _clamp_min(ad.mul(ad.mul(ldist, ldist), const(NORM_RADIUS ** 2)),
                       const(1e-2))
    irr = ad.div(ndl, dist2)
    view = ad.div(ad.neg(xn), _clamp_min(channel_norm(xn), const(1e-6)))
    ndv = ad.relu(ad.sum_(ad.mul(n, view), axis=-1, keepdims=True))
    half = ad.add(ldir, view)
    half = ad.div(half, _clamp_min(channel_norm(half), const(1e-6)))
    ndh = ad.relu(ad.sum_(ad.mul(n, half), axis=-1, keepdims=True))
    lifted = ad.concat([x, ndl, irr, ndv, ndh], axis=-1)
    if return_irradiance:
        return lifted, irr
    return lifted


def forward_tensors(params, x, arch: ArchConfig):
    """Tape-building forward pass; x is (N,H,W,in_channels)."""
    n, h, w, c = x.data.shape
    div = 2 ** arch.levels
    if h % div or w % div:
        raise InvalidParameter(
            f"spatial dims {h}x{w} must be divisible by {div}")
    if c != arch.in_channels:
        raise ShapeMismatch(f"expected {arch.in_channels} channels, got {c}")
    x, irr = photometric_lift(x, return_irradiance=True)
    skips = []
    for lv in range(arch.levels):
        if lv > 0:
            x = ad.avg_pool2(x)
        x = _block(params, f"enc{lv}", x, arch)
        skips.append(x)
    for lv in range(arch.levels - 2, -1, -1):
        x = ad.upsample_bilinear2(x)
        x = ad.concat([x, skips[lv]], axis=-1)
        x = _block(params, f"dec{lv}", x, arch)
    out = ad.softplus(ad.conv2d(x, params["head_w"], params["head_b"]))
    # the direct buffers factor exactly through the point-light irradiance
    # (visibility and BRDF are the learned residual); indirect buffers are
    # predicted raw.  Keeps outputs non-negative and exactly zero wherever
    # the light is below the horizon.
    one = ad.Tensor(np.ones_like(irr.data))
    scale = ad.concat([irr, irr, irr, one, one, one,
                       irr, irr, irr, one, one, one], axis=-1)
    return ad.mul(out, scale)


def forward(params, input_field: np.ndarray, arch: ArchConfig) -> np.ndarray:
    """Inference on one (H,W,15) field; returns (H,W,12), no tape."""
    x = ad.Tensor(input_field[None].astype(np.float32, copy=False))
    p = {k: ad.Tensor(v) for k, v in params.items()}
    return forward_tensors(p, x, arch).data[0]


def assemble_input(gbuf: gb.GBuffer, matmaps: MaterialMaps,
                   lightmaps: LightMaps,
                   norm_radius: float = NORM_RADIUS) -> np.ndarray:
    shape = gbuf.valid.shape
    for arr in (matmaps.a[..., 0], lightmaps.ldir[..., 0], lightmaps.ldist):
        if arr.shape != shape:
            raise ShapeMismatch("g-buffer and map resolutions differ")
    m = gbuf.valid[..., None].astype(np.float32)
    field = np.concatenate([
        gbuf.x / norm_radius,
        gbuf.n,
        matmaps.a,
        matmaps.s[..., None],
        matmaps.r[..., None],
        lightmaps.ldir,
        lightmaps.ldist[..., None] / norm_radius,
    ], axis=-1).astype(np.float32)
    return field * m


def _loss_weights(valid: np.ndarray) -> np.ndarray:
    """Per-pixel weights turning a masked sum into the group-mean-sum loss."""
    valid = valid.astype(np.float64)
    if valid.ndim == 2:
        valid = valid[None]
    nv = valid.sum(axis=(1, 2), keepdims=True)
    return (valid / np.maximum(3.0 * nv, 1.0))[..., None]


def l1_loss(pred: np.ndarray, gt: np.ndarray, valid=None) -> float:
    """Mean absolute error per buffer group over valid pixels, summed over
    the four groups (and over batch elements when batched)."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {gt.shape}")
    if valid is None:
        valid = np.ones(pred.shape[:-1] if pred.ndim == 3 else pred.shape[1:-1],
                        dtype=bool)
    w = _loss_weights(valid)
    if pred.ndim == 3:
        pred, gt = pred[None], gt[None]
    return float(np.sum(np.abs(pred.astype(np.float64) - gt) * w))


def _l1_loss_t(pred, gt, valid):
    w = _loss_weights(valid).astype(pred.data.dtype)
    return ad.sum_(ad.mul(ad.abs_(ad.sub(pred, gt)), w))


def backward(params, batch, arch: ArchConfig):
    """Gradients of the summed L1 loss over a batch of
    (input_field, gt_buffers, valid) triples."""
    if not batch:
        raise InvalidParameter("batch must be non-empty")
    x = np.stack([b[0] for b in batch]).astype(np.float32)
    gt = np.stack([b[1] for b in batch]).astype(np.float32)
    valid = np.stack([b[2] for b in batch])
    p = {k: ad.parameter(v) for k, v in params.items()}
    loss = _l1_loss_t(forward_tensors(p, ad.Tensor(x), arch),
                      ad.Tensor(gt), valid)
    loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
             for k, t in p.items()}
    return grads, float(loss.data)


def load_dataset(manifest_path):
    """Materialize (input_field, gt_buffers, valid) triples from a manifest."""
    man = dataio.read_manifest(manifest_path)
    root = os.path.dirname(os.path.abspath(manifest_path))
    out = []
    for s in man.samples:
        if s.light_buffers is None:
            raise InvalidParameter(
                "manifest sample has no rendered light buffers yet")
        gbuf = gb.load_gbuffer(os.path.join(root, s.gbuffer))
        mm = load_material_maps(os.path.join(root, s.material_maps))
        lm = load_light_maps(os.path.join(root, s.light_maps))
        buffers = load_light_buffers(os.path.join(root, s.light_buffers))
        out.append((assemble_input(gbuf, mm, lm), buffers.stacked(),
                    gbuf.valid))
    return out


def train(dataset, cfg: TrainConfig, arch: ArchConfig = None, out_dir=None):
    """Adam over shuffled epochs; returns (params, per-epoch mean loss).

    `dataset` is a manifest path or a pre-loaded triple list.  Checkpoints
    land in out_dir each epoch when given.
    """
    cfg.validate()
    arch = arch or ArchConfig()
    if isinstance(dataset, (str, os.PathLike)):
        dataset = load_dataset(dataset)
    if not dataset:
        raise InvalidParameter("dataset is empty")
    hw = dataset[0][0].shape
    for field, _, _ in dataset:
        if field.shape != hw:
            raise ShapeMismatch("dataset resolutions differ")

    params = {k: ad.parameter(v) for k, v in
              init_params(arch, cfg.seed).items()}
    opt = ad.Adam(list(params.values()), lr=cfg.learning_rate,
                  beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    history = []
    n = len(dataset)
    for epoch in range(cfg.epochs):
        perm = rng.generator(cfg.seed, 202, epoch).permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            x = np.stack([dataset[i][0] for i in idx])
            gt = np.stack([dataset[i][1] for i in idx])
            valid = np.stack([dataset[i][2] for i in idx])
            opt.zero_grad()
            loss = _l1_loss_t(forward_tensors(params, ad.Tensor(x), arch),
                              ad.Tensor(gt), valid)
            loss.backward()
            opt.step()
            total += float(loss.data)
        history.append(total / n)
        if out_dir is not None:
            save_checkpoint(os.path.join(out_dir, f"checkpoint_ep{epoch:04d}.pndr"),
                            arch, {k: t.data for k, t in params.items()})
    final = {k: t.data.copy() for k, t in params.items()}
    if out_dir is not None:
        save_checkpoint(os.path.join(out_dir, "checkpoint_final.pndr"),
                        arch, final)
        with open(os.path.join(out_dir, "loss_history.csv"), "w") as f:
            f.write("epoch,meanLoss\n")
            for e, v in enumerate(history):
                f.write(f"{e},{v!r}\n")
    return final, history


def infer_render(params, gbuf: gb.GBuffer, matmaps: MaterialMaps,
                 lightmaps: LightMaps, arch: ArchConfig = None) -> np.ndarray:
    """Network buffers -> composite -> tone map; returns LDR (H,W,3)."""
    arch = arch or ArchConfig()
    field = assemble_input(gbuf, matmaps, lightmaps)
    pred = forward(params, field, arch)
    return compose.render_ldr(LightBuffers.from_stacked(pred), matmaps)


# ---------------------------------------------------------------------------
# checkpoints and per-sample tensors


def save_checkpoint(path, arch: ArchConfig, params) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    cfg = json.dumps(asdict(arch), sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", CKPT_VERSION, len(cfg)))
        f.write(cfg)
        names = sorted(params)
        f.write(struct.pack("<I", len(names)))
        for name in names:
            blob = dataio.tensor_to_bytes(params[name])
            nb = name.encode()
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)


def load_checkpoint(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != CKPT_MAGIC:
        raise BadMagic(f"{path}: bad checkpoint magic {raw[:8]!r}")
    version, cfg_len = struct.unpack_from("<II", raw, 8)
    if version != CKPT_VERSION:
        raise BadMagic(f"{path}: unsupported checkpoint version {version}")
    off = 16
    arch = ArchConfig(**json.loads(raw[off:off + cfg_len].decode()))
    off += cfg_len
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + nlen].decode()
        off += nlen
        (blen,) = struct.unpack_from("<Q", raw, off)
        off += 8
        params[name] = dataio.tensor_from_bytes(raw[off:off + blen],
                                                source=f"{path}:{name}")
        off += blen
    return arch, params


def save_light_buffers(dirpath, buffers: LightBuffers) -> None:
    os.makedirs(dirpath, exist_ok=True)
    for name, arr in (("Ddir", buffers.ddir), ("Dind", buffers.dind),
                      ("Gdir", buffers.gdir), ("Gind", buffers.gind)):
        dataio.save_tensor(os.path.join(dirpath, f"{name}.tnsr"),
                           arr.astype(np.float32))


def load_light_buffers(dirpath) -> LightBuffers:
    return LightBuffers(
        ddir=dataio.load_tensor(os.path.join(dirpath, "Ddir.tnsr")),
        dind=dataio.load_tensor(os.path.join(dirpath, "Dind.tnsr")),
        gdir=dataio.load_tensor(os.path.join(dirpath, "Gdir.tnsr")),
        gind=dataio.load_tensor(os.path.join(dirpath, "Gind.tnsr")))


def save_material_maps(dirpath, matmaps: MaterialMaps, samples=None) -> None:
    os.makedirs(dirpath, exist_ok=True)
    dataio.save_tensor(os.path.join(dirpath, "A.tnsr"), matmaps.a)
    dataio.save_tensor(os.path.join(dirpath, "R.tnsr"), matmaps.r)
    dataio.save_tensor(os.path.join(dirpath, "S.tnsr"), matmaps.s)
    if samples is not None:
        dataio.write_json(os.path.join(dirpath, "materials.json"),
                          [s.to_dict() for s in samples])


def load_material_maps(dirpath) -> MaterialMaps:
    return MaterialMaps(
        a=dataio.load_tensor(os.path.join(dirpath, "A.tnsr")),
        r=dataio.load_tensor(os.path.join(dirpath, "R.tnsr")),
        s=dataio.load_tensor(os.path.join(dirpath, "S.tnsr")))


def save_light_maps(dirpath, lightmaps: LightMaps, light=None) -> None:
    os.makedirs(dirpath, exist_ok=True)
    dataio.save_tensor(os.path.join(dirpath, "Ldir.tnsr"), lightmaps.ldir)
    dataio.save_tensor(os.path.join(dirpath, "Ldist.tnsr"), lightmaps.ldist)
    if light is not None:
        dataio.write_json(os.path.join(dirpath, "light.json"), light.to_dict())


def load_light_maps(dirpath) -> LightMaps:
    return LightMaps(
        ldir=dataio.load_tensor(os.path.join(dirpath, "Ldir.tnsr")),
        ldist=dataio.load_tensor(os.path.join(dirpath, "Ldist.tnsr")))
