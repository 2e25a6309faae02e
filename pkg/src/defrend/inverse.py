"""Scene-property recovery through the frozen renderer.

Small sinusoidal MLPs conditioned on scene/object ids produce a light
position and per-object materials; their parameters are optimized with
Adam so that the differentiable pipeline (maps -> network -> composite ->
tone map) matches a target image under a mean L1 loss.  The hemisphere
and radius constraints hold at every step by reparameterization: the raw
z output is replaced by |z| and the vector renormalized to 1.5 m.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import rendernet, rng
from .compose import TONE_TOE
from .errors import Divergence, InvalidParameter, UnknownId
from .gbuffer import GBuffer
from .randomize import (LIGHT_RADIUS, LightSample, MaterialSample,
                        ROUGHNESS_MIN)
from .scenegen import Pose

OMEGA0 = 30.0
HIDDEN = 64
DEPTH = 3
EMBED = 8


@dataclass
class InverseConfig:
    steps: int = 500
    learning_rate: float = 1e-2
    n_inits: int = 8
    seed: int = 0


def _siren_layers(in_dim, out_dim, seed, final_bias=None):
    """Sinusoidal MLP init: the omega0 frequency scale applies to the
    first layer only.  First layer U(+-1/n); hidden layers U(+-sqrt(6/n));
    the final linear layer starts small so the (optionally set) bias
    dominates the initial output."""
    gen = rng.generator(seed, 303)
    dims = [in_dim] + [HIDDEN] * DEPTH + [out_dim]
    layers = {}
    last = len(dims) - 2
    for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
        if i == 0:
            bound = 1.0 / din
        elif i == last:
            bound = 0.01
        else:
            bound = math.sqrt(6.0 / din)
        layers[f"w{i}"] = gen.uniform(-bound, bound, size=(dout, din))
        layers[f"b{i}"] = np.zeros(dout)
    if final_bias is not None:
        layers[f"b{last}"] = np.asarray(final_bias, dtype=np.float64)
    return layers


def _siren_forward(p, x):
    """x: (in_dim,) Tensor -> raw (out_dim,) Tensor."""
    n_layers = sum(1 for k in p if k.startswith("w"))
    for i in range(n_layers):
        x = ad.add(ad.matvec(p[f"w{i}"], x), p[f"b{i}"])
        if i == 0:
            x = ad.sin(ad.mul(x, OMEGA0))
        elif i < n_layers - 1:
            x = ad.sin(x)
    return x


# ---------------------------------------------------------------------------
# light network


def init_lightnet(num_scenes: int, seed: int, initial_direction=None):
    """Parameter dict: scene embedding plus SIREN MLP emitting a raw
    3-vector.  initial_direction biases the final layer so the first
    forward pass starts at that scene-frame direction."""
    params = _siren_layers(EMBED, 3, rng.derive_seed(seed, 11),
                           final_bias=initial_direction)
    gen = rng.generator(seed, 12)
    params["scene_emb"] = gen.uniform(-1.0, 1.0, size=(num_scenes, EMBED))
    return params


def lightnet_raw(params_t, scene_id: int):
    emb_rows = params_t["scene_emb"].data.shape[0]
    if not 0 <= scene_id < emb_rows:
        raise UnknownId(f"scene id {scene_id} not in embedding (0..{emb_rows - 1})")
    x = ad.index_row(params_t["scene_emb"], scene_id)
    return _siren_forward(params_t, x)


def constrain_light(raw):
    """Raw 3-vector -> hemisphere point at radius 1.5 (|z|, renormalize)."""
    xy = raw[:2]
    z = ad.abs_(raw[2:3])
    vec = ad.concat([xy, z], axis=0)
    norm = ad.sqrt(ad.add(ad.sum_(ad.mul(vec, vec)), 1e-12))
    return ad.mul(ad.div(vec, norm), LIGHT_RADIUS)


def lightnet_forward(params, scene_id: int,
                     world_to_camera: Pose) -> LightSample:
    params_t = {k: ad.Tensor(v) for k, v in params.items()}
    pos = constrain_light(lightnet_raw(params_t, scene_id)).data
    return LightSample(position_scene=pos,
                       position_camera=world_to_camera.apply(pos))


# ---------------------------------------------------------------------------
# material network


def init_materialnet(num_objects: int, num_scenes: int, seed: int):
    params = _siren_layers(2 * EMBED, 5, rng.derive_seed(seed, 21))
    gen = rng.generator(seed, 22)
    params["object_emb"] = gen.uniform(-1.0, 1.0, size=(num_objects, EMBED))
    params["scene_emb"] = gen.uniform(-1.0, 1.0, size=(num_scenes, EMBED))
    return params


def materialnet_raw(params_t, object_id: int, scene_id: int):
    if not 0 <= object_id < params_t["object_emb"].data.shape[0]:
        raise UnknownId(f"object id {object_id} not in embedding")
    if not 0 <= scene_id < params_t["scene_emb"].data.shape[0]:
        raise UnknownId(f"scene id {scene_id} not in embedding")
    x = ad.concat([ad.index_row(params_t["object_emb"], object_id),
                   ad.index_row(params_t["scene_emb"], scene_id)], axis=0)
    return _siren_forward(params_t, x)


def constrain_material(raw):
    """Raw 5-vector -> (albedo (3,), roughness (1,), specularity (1,))."""
    sq = ad.sigmoid(raw)
    albedo = sq[:3]
    rough = ad.add(ad.mul(sq[3:4], 1.0 - ROUGHNESS_MIN), ROUGHNESS_MIN)
    spec = sq[4:5]
    return albedo, rough, spec


def materialnet_forward(params, object_id: int, scene_id: int) -> MaterialSample:
    params_t = {k: ad.Tensor(v) for k, v in params.items()}
    albedo, rough, spec = constrain_material(
        materialnet_raw(params_t, object_id, scene_id))
    return MaterialSample(object_id=object_id, albedo_rgb=albedo.data.copy(),
                          roughness=float(rough.data[0]),
                          specularity=float(spec.data[0]))


# ---------------------------------------------------------------------------
# differentiable pipeline pieces


def light_maps_t(pos_cam, x_map, valid):
    """Differentiable light maps from a (3,) camera-frame light position."""
    mask = valid.astype(np.float64)[..., None]
    diff = ad.sub(ad.reshape(pos_cam, (1, 1, 3)), ad.Tensor(x_map))
    dist = ad.sqrt(ad.add(ad.sum_(ad.mul(diff, diff), axis=-1, keepdims=True),
                          1e-12))
    ldir = ad.mul(ad.div(diff, dist), mask)
    ldist = ad.mul(dist, mask)
    return ldir, ldist


def material_maps_t(per_object, instance, base_albedo, valid):
    """Differentiable material maps from per-object (albedo,rough,spec)
    tensors; per_object maps object_id -> that triple."""
    h, w = instance.shape
    a_parts, r_parts, s_parts = [], [], []
    for oid, (albedo, rough, spec) in sorted(per_object.items()):
        m = ((instance == oid) & valid).astype(np.float64)
        weighted = (m * base_albedo)[..., None]
        a_parts.append(ad.mul(ad.reshape(albedo, (1, 1, 3)), weighted))
        r_parts.append(ad.mul(ad.reshape(rough, (1, 1, 1)), m[..., None]))
        s_parts.append(ad.mul(ad.reshape(spec, (1, 1, 1)), m[..., None]))
    total_a = a_parts[0]
    total_r = r_parts[0]
    total_s = s_parts[0]
    for t in a_parts[1:]:
        total_a = ad.add(total_a, t)
    for t in r_parts[1:]:
        total_r = ad.add(total_r, t)
    for t in s_parts[1:]:
        total_s = ad.add(total_s, t)
    return total_a, total_r, total_s


def tone_map_t(hdr):
    """Differentiable tone map; the relu at the toe fixes the kink
    subgradient to 0."""
    s = ad.relu(ad.sub(hdr, TONE_TOE))
    num = ad.mul(s, ad.add(ad.mul(s, 6.2), 0.5))
    den = ad.add(ad.mul(s, ad.add(ad.mul(s, 6.2), 1.7)), 0.06)
    return ad.div(num, den)


def render_t(net_params_t, arch, x_map, n_map, a_map, r_map, s_map,
             ldir, ldist, valid):
    """Differentiable infer_render: returns the (H,W,3) LDR Tensor.

    The U-Net itself runs in float32 (matching training and inference);
    the cast has an identity gradient, so the surrounding float64 graph
    is unaffected.
    """
    mask = valid.astype(np.float32)[..., None]
    field = ad.cast(ad.concat([
        ad.Tensor((x_map / rendernet.NORM_RADIUS) * mask),
        ad.Tensor(n_map * mask),
        a_map, s_map, r_map, ldir,
        ad.mul(ldist, 1.0 / rendernet.NORM_RADIUS),
    ], axis=-1), np.float32)
    h, w, c = field.data.shape
    pred = rendernet.forward_tensors(net_params_t,
                                     ad.reshape(field, (1, h, w, c)), arch)
    pred = ad.reshape(pred, (h, w, 12))
    d = ad.add(pred[..., 0:3], pred[..., 3:6])
    g = ad.add(pred[..., 6:9], pred[..., 9:12])
    gcol = ad.concat([s_map, s_map, s_map], axis=-1)
    hdr = ad.add(ad.mul(d, a_map), ad.mul(g, gcol))
    return tone_map_t(hdr)


# ---------------------------------------------------------------------------
# recovery


@dataclass
class RecoveryResult:
    light: LightSample
    materials: list
    loss: float
    init_losses: list
    mode: str


def _stratified_direction(k, n):
    az = 2.0 * np.pi * (k + 0.5) / max(n, 1)
    el = math.radians(45.0)
    return np.array([math.cos(az) * math.cos(el),
                     math.sin(az) * math.cos(el), math.sin(el)])


def recover_scene(net_params, arch, target: np.ndarray, gbuf: GBuffer,
                  mode: str, cfg: InverseConfig, *,
                  true_light: LightSample = None,
                  true_materials=None,
                  scene_id: int = 0, num_scenes: int = 1) -> RecoveryResult:
    """Optimize light and/or material networks so the frozen renderer
    reproduces `target`.  Multi-start over stratified light azimuths; the
    lowest final loss wins (ties to the lowest init index)."""
    if mode not in ("light", "material", "both"):
        raise InvalidParameter(f"mode must be light|material|both, got {mode!r}")
    opt_light = mode in ("light", "both")
    opt_material = mode in ("material", "both")
    if not opt_light and true_light is None:
        raise InvalidParameter("material-only recovery needs true_light")
    if not opt_material and true_materials is None:
        raise InvalidParameter("light-only recovery needs true_materials")

    target = np.asarray(target, dtype=np.float64)
    if target.shape != gbuf.x.shape:
        raise InvalidParameter(
            f"target {target.shape} does not match g-buffer {gbuf.x.shape}")
    valid = gbuf.valid
    x_map = gbuf.x.astype(np.float64)
    n_map = gbuf.n.astype(np.float64)
    base_albedo = gbuf.base_albedo.astype(np.float64)
    instance = gbuf.instance
    object_ids = sorted(int(i) for i in np.unique(instance[valid]))
    w2c = gbuf.world_to_camera
    net_t = {k: ad.Tensor(v) for k, v in net_params.items()}
    target_t = ad.Tensor(target)
    npx = float(target.size)

    if true_materials is not None:
        fixed_mats = {
            s.object_id: (ad.Tensor(np.asarray(s.albedo_rgb, dtype=np.float64)),
                          ad.Tensor(np.array([s.roughness])),
                          ad.Tensor(np.array([s.specularity])))
            for s in true_materials}
    if true_light is not None:
        fixed_pos = ad.Tensor(np.asarray(true_light.position_camera,
                                         dtype=np.float64))

    n_inits = cfg.n_inits if opt_light else 1
    best = None
    init_losses = []
    for k in range(n_inits):
        lp = {key: ad.parameter(v) for key, v in init_lightnet(
            num_scenes, rng.derive_seed(cfg.seed, 31, k),
            initial_direction=_stratified_direction(k, n_inits)).items()} \
            if opt_light else None
        mp = {key: ad.parameter(v) for key, v in init_materialnet(
            max(object_ids) + 1, num_scenes,
            rng.derive_seed(cfg.seed, 32, k)).items()} \
            if opt_material else None
        trainable = []
        if lp:
            trainable += list(lp.values())
        if mp:
            trainable += list(mp.values())
        opt = ad.Adam(trainable, lr=cfg.learning_rate)

        def evaluate(build_tape=True):
            if opt_light:
                pos = ad.matvec(w2c.rotation, constrain_light(
                    lightnet_raw(lp, scene_id)))
                pos = ad.add(pos, w2c.translation)
            else:
                pos = fixed_pos
            ldir, ldist = light_maps_t(pos, x_map, valid)
            if opt_material:
                per_obj = {oid: constrain_material(
                    materialnet_raw(mp, oid, scene_id)) for oid in object_ids}
            else:
                per_obj = fixed_mats
            a_map, r_map, s_map = material_maps_t(per_obj, instance,
                                                  base_albedo, valid)
            ldr = render_t(net_t, arch, x_map, n_map, a_map, r_map, s_map,
                           ldir, ldist, valid)
            return ad.mul(ad.sum_(ad.abs_(ad.sub(ldr, target_t))), 1.0 / npx)

        loss_val = None
        for step in range(cfg.steps):
            opt.zero_grad()
            loss = evaluate()
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise Divergence(
                    f"non-finite loss at init {k} step {step}", init_index=k)
            loss.backward()
            opt.step()
        final_loss = float(evaluate().data)
        if not np.isfinite(final_loss):
            raise Divergence(f"non-finite final loss at init {k}", init_index=k)
        init_losses.append(final_loss)
        if best is None or final_loss < best[0]:
            light_np = {key: t.data.copy() for key, t in lp.items()} if lp else None
            mat_np = {key: t.data.copy() for key, t in mp.items()} if mp else None
            best = (final_loss, light_np, mat_np)

    final_loss, light_np, mat_np = best
    if light_np is not None:
        light = lightnet_forward(light_np, scene_id, w2c)
    else:
        light = true_light
    if mat_np is not None:
        materials = [materialnet_forward(mat_np, oid, scene_id)
                     for oid in object_ids]
    else:
        materials = list(true_materials)
    return RecoveryResult(light=light, materials=materials, loss=final_loss,
                          init_losses=init_losses, mode=mode)
