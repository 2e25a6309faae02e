"""Batch command-line surface for the full pipeline.

All outputs live under a run directory (--run-dir or $PNDR_RUN_DIR); paths
stored in manifests are relative to the manifest's directory, so reruns
with identical seeds reproduce every manifest and tensor byte for byte.
Exit codes: 0 ok, 2 config error, 3 io error, 4 numeric failure.
"""

import argparse
import glob as globmod
import json
import os
import sys
import time

import numpy as np

from . import (compose, dataio, gbuffer as gb, inverse, metrics, oracle,
               plotting, randomize, rendernet, rng, scenegen)
from .errors import ConfigError, DataError, NumericFailure

SIZE_RANGE = (0.18, 0.35)
DEFAULT_KINDS = ("cube", "icosphere", "cylinder")


def _run_dir(args):
    d = args.run_dir or os.environ.get("PNDR_RUN_DIR") or "run"
    os.makedirs(d, exist_ok=True)
    return d


def _resolve(root, path):
    return path if os.path.isabs(path) else os.path.join(root, path)


def _echo_config(root, command, args):
    skip = {"func"}
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    dataio.write_json(os.path.join(root, f"config_{command}.json"),
                      {"command": command, "args": cfg})


def _set_threads(n):
    if n is None:
        return
    import numba

    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def _scene_meshes(scene_seed, n_objects, kinds):
    meshes = []
    for slot in range(n_objects):
        kind = kinds[slot % len(kinds)]
        u = rng.uniform(scene_seed, 41, slot)
        size = SIZE_RANGE[0] + (SIZE_RANGE[1] - SIZE_RANGE[0]) * u
        meshes.append(scenegen.make_primitive(kind, size=size))
    return meshes


def _scene_path(scene_id):
    return os.path.join("scenes", f"scene_{scene_id:04d}.json")


def cmd_gen_scenes(args):
    root = _run_dir(args)
    _echo_config(root, "gen-scenes", args)
    kinds = tuple(args.object_kinds.split(","))
    for k in range(args.count):
        scene_id = args.start_id + k
        seed = rng.derive_seed(args.seed, scene_id)
        meshes = _scene_meshes(seed, args.objects, kinds)
        scene = scenegen.place_objects(
            meshes, tuple(args.room), args.objects, seed,
            full_rotation=args.full_rotation,
            reference_resolution=(args.resolution[0], args.resolution[1]),
            scene_id=scene_id)
        path = os.path.join(root, args.out, f"scene_{scene_id:04d}.json")
        dataio.write_json(path, scenegen.scene_to_dict(scene))
        print(f"wrote {path}")
    return 0


def _load_scenes(root, scenes_arg):
    pattern = _resolve(root, scenes_arg)
    if os.path.isdir(pattern):
        paths = sorted(globmod.glob(os.path.join(pattern, "scene_*.json")))
    else:
        paths = sorted(globmod.glob(pattern))
    if not paths:
        raise DataError(f"no scene files match {pattern}")
    scenes = []
    for p in paths:
        scenes.append((p, scenegen.scene_from_dict(dataio.read_json(p))))
    return scenes


def cmd_randomize(args):
    root = _run_dir(args)
    _echo_config(root, "randomize", args)
    _set_threads(args.threads)
    scenes = _load_scenes(root, args.scenes)
    width, height = args.resolution
    manifest = dataio.Manifest()
    idx = 0
    for path, scene in scenes:
        sid = scene.scene_id
        manifest.scenes[sid] = os.path.relpath(path, root)
        bvh = gb.build_bvh(scene)
        gdir = os.path.join("gbuffers", f"scene_{sid:04d}")
        gbuf = gb.raycast_gbuffer(scene, bvh, width, height)
        gb.save_gbuffer(os.path.join(root, gdir), gbuf)
        ids = scene.object_ids()
        for j in range(args.per_scene):
            if args.light_mode == "fixed":
                light_seed = rng.derive_seed(args.seed, 0, 0, rng.STREAM_LIGHT)
            else:
                light_seed = rng.derive_seed(args.seed, sid, j, rng.STREAM_LIGHT)
            material_seed = rng.derive_seed(args.seed, sid, j,
                                            rng.STREAM_MATERIAL)
            light = randomize.sample_light(light_seed, scene.world_to_camera)
            fixed_r = 0.5 if args.material_mode == "A" else None
            fixed_s = 0.5 if args.material_mode == "A" else None
            mats = randomize.sample_materials(
                ids, material_seed, fixed_roughness=fixed_r,
                fixed_specularity=fixed_s)
            lmaps = randomize.light_maps(gbuf, light)
            mmaps = randomize.compose_material_maps(gbuf, mats)
            sdir = os.path.join(args.out, f"{idx:06d}")
            rendernet.save_light_maps(os.path.join(root, sdir, "lightmaps"),
                                      lmaps, light)
            rendernet.save_material_maps(os.path.join(root, sdir, "matmaps"),
                                         mmaps, mats)
            manifest.samples.append(dataio.Sample(
                scene_id=sid, light_seed=light_seed,
                material_seed=material_seed,
                gbuffer=gdir,
                material_maps=os.path.join(sdir, "matmaps"),
                light_maps=os.path.join(sdir, "lightmaps")))
            idx += 1
    man_path = os.path.join(root, args.manifest)
    dataio.write_manifest(man_path, manifest)
    print(f"wrote {man_path} ({idx} samples)")
    return 0


class _SceneCache:
    """BVH and g-buffer loading shared across samples of one scene."""

    def __init__(self, root, manifest):
        self.root = root
        self.manifest = manifest
        self._bvh = {}
        self._gbuf = {}

    def bvh(self, scene_id):
        if scene_id not in self._bvh:
            path = _resolve(self.root, self.manifest.scenes[scene_id])
            scene = scenegen.scene_from_dict(dataio.read_json(path))
            self._bvh[scene_id] = gb.build_bvh(scene)
        return self._bvh[scene_id]

    def gbuf(self, rel):
        if rel not in self._gbuf:
            self._gbuf[rel] = gb.load_gbuffer(_resolve(self.root, rel))
        return self._gbuf[rel]


def _load_sample_inputs(cache, sample):
    gbuf = cache.gbuf(sample.gbuffer)
    mm = rendernet.load_material_maps(_resolve(cache.root, sample.material_maps))
    lm = rendernet.load_light_maps(_resolve(cache.root, sample.light_maps))
    light = randomize.LightSample.from_dict(dataio.read_json(
        os.path.join(_resolve(cache.root, sample.light_maps), "light.json")))
    mats = [randomize.MaterialSample.from_dict(d) for d in dataio.read_json(
        os.path.join(_resolve(cache.root, sample.material_maps),
                     "materials.json"))]
    return gbuf, mm, lm, light, mats


def cmd_render_oracle(args):
    root = _run_dir(args)
    _echo_config(root, "render-oracle", args)
    _set_threads(args.threads)
    man_path = _resolve(root, args.manifest)
    manifest = dataio.read_manifest(man_path)
    man_root = os.path.dirname(os.path.abspath(man_path))
    cache = _SceneCache(man_root, manifest)
    for i, sample in enumerate(manifest.samples):
        gbuf, mm, lm, light, mats = _load_sample_inputs(cache, sample)
        cfg = oracle.ShadeConfig(
            indirect_samples=0 if args.no_indirect else args.indirect_samples,
            indirect_glossy_samples=0 if args.no_indirect
            else args.indirect_glossy_samples,
            seed=rng.derive_seed(args.seed, i, rng.STREAM_SHADE))
        buffers = oracle.shade(gbuf, mm, lm, light, cache.bvh(sample.scene_id),
                               cfg, mats)
        sdir = os.path.dirname(sample.light_maps)
        bdir = os.path.join(sdir, "buffers")
        rendernet.save_light_buffers(os.path.join(man_root, bdir), buffers)
        ldr = compose.render_ldr(buffers, mm)
        dataio.save_tensor(os.path.join(man_root, sdir, "ldr.tnsr"),
                           ldr.astype(np.float32))
        preview = os.path.join(sdir, "preview.png")
        dataio.save_png(ldr, os.path.join(man_root, preview))
        sample.light_buffers = bdir
        sample.ldr_preview = preview
    dataio.write_manifest(man_path, manifest)
    print(f"rendered {len(manifest.samples)} samples -> {man_path}")
    return 0


def cmd_train_rendernet(args):
    root = _run_dir(args)
    _echo_config(root, "train-rendernet", args)
    man_path = _resolve(root, args.manifest)
    out_dir = _resolve(root, args.out)
    cfg = rendernet.TrainConfig(learning_rate=args.lr,
                                batch_size=args.batch_size,
                                epochs=args.epochs, seed=args.seed)
    arch = rendernet.ArchConfig(levels=args.levels, base=args.base)
    params, history = rendernet.train(man_path, cfg, arch, out_dir=out_dir)
    plotting.save_loss_curve(history, os.path.join(out_dir, "loss_curve.png"))
    print(f"final epoch loss {history[-1]:.5f}; checkpoints in {out_dir}")
    return 0


def cmd_render_net(args):
    root = _run_dir(args)
    _echo_config(root, "render-net", args)
    arch, params = rendernet.load_checkpoint(_resolve(root, args.checkpoint))
    man_path = _resolve(root, args.manifest)
    manifest = dataio.read_manifest(man_path)
    man_root = os.path.dirname(os.path.abspath(man_path))
    cache = _SceneCache(man_root, manifest)
    out_root = _resolve(root, args.out)
    for i, sample in enumerate(manifest.samples):
        gbuf, mm, lm, _, _ = _load_sample_inputs(cache, sample)
        field = rendernet.assemble_input(gbuf, mm, lm)
        pred = rendernet.forward(params, field, arch)
        buffers = oracle.LightBuffers.from_stacked(pred)
        sdir = os.path.join(out_root, f"{i:06d}")
        rendernet.save_light_buffers(os.path.join(sdir, "buffers"), buffers)
        ldr = compose.render_ldr(buffers, mm)
        dataio.save_tensor(os.path.join(sdir, "ldr.tnsr"),
                           ldr.astype(np.float32))
        dataio.save_png(ldr, os.path.join(sdir, "preview.png"))
    print(f"rendered {len(manifest.samples)} samples -> {out_root}")
    return 0


def _collect_ldr(dirpath):
    out = {}
    for path in globmod.glob(os.path.join(dirpath, "**", "ldr.tnsr"),
                             recursive=True):
        out[os.path.relpath(path, dirpath)] = path
    return out


def cmd_eval(args):
    root = _run_dir(args)
    _echo_config(root, "eval", args)
    pred = _collect_ldr(_resolve(root, args.pred))
    gt = _collect_ldr(_resolve(root, args.gt))
    keys = sorted(set(pred) & set(gt))
    if not keys:
        raise DataError("no matching ldr.tnsr pairs between --pred and --gt")
    wanted = args.metrics.split(",")
    sums = {m: 0.0 for m in wanted}
    for k in keys:
        a = dataio.load_tensor(pred[k]).astype(np.float64)
        b = dataio.load_tensor(gt[k]).astype(np.float64)
        for m in wanted:
            if m == "psnr":
                sums[m] += metrics.psnr(a, b)
            elif m == "ssim":
                sums[m] += metrics.ssim(a, b)
            elif m == "l1":
                sums[m] += float(np.mean(np.abs(a - b)))
            else:
                raise ConfigError(f"unknown metric {m!r} (use psnr,ssim,l1)")
    report = metrics.MetricReport(
        metrics={m: sums[m] / len(keys) for m in wanted},
        count=len(keys),
        config={"pred": args.pred, "gt": args.gt})
    out = _resolve(root, args.out)
    dataio.write_json(out + ".json", report.to_dict())
    with open(out + ".csv", "w") as f:
        f.write(report.csv_header() + "\n" + report.csv_row() + "\n")
    plotting.save_metric_bars(report, out + ".png")
    print(json.dumps(report.to_dict()["metrics"], sort_keys=True))
    return 0


def cmd_invert(args):
    root = _run_dir(args)
    _echo_config(root, "invert", args)
    arch, params = rendernet.load_checkpoint(_resolve(root, args.checkpoint))
    target_path = _resolve(root, args.target)
    if target_path.endswith(".png"):
        target = dataio.load_png(target_path)
    else:
        target = dataio.load_tensor(target_path)
    gbuf = gb.load_gbuffer(_resolve(root, args.gbuffer))
    true_light = None
    true_materials = None
    if args.light:
        true_light = randomize.LightSample.from_dict(
            dataio.read_json(_resolve(root, args.light)))
    if args.materials:
        true_materials = [randomize.MaterialSample.from_dict(d)
                          for d in dataio.read_json(_resolve(root, args.materials))]
    cfg = inverse.InverseConfig(steps=args.steps, learning_rate=args.lr,
                                n_inits=args.inits, seed=args.seed)
    result = inverse.recover_scene(params, arch, target, gbuf, args.mode, cfg,
                                   true_light=true_light,
                                   true_materials=true_materials)
    out = _resolve(root, args.out)
    dataio.write_json(out + ".json", {
        "mode": result.mode,
        "finalLoss": result.loss,
        "initLosses": result.init_losses,
        "light": result.light.to_dict(),
        "materials": [m.to_dict() for m in result.materials],
    })
    lmaps = randomize.light_maps(gbuf, result.light)
    mmaps = randomize.compose_material_maps(gbuf, result.materials)
    ldr = rendernet.infer_render(params, gbuf, mmaps, lmaps, arch)
    dataio.save_png(ldr, out + ".png")
    print(f"recovered scene written to {out}.json (loss {result.loss:.5f})")
    return 0


def cmd_benchmark(args):
    root = _run_dir(args)
    _echo_config(root, "benchmark", args)
    _set_threads(args.threads)
    arch, params = rendernet.load_checkpoint(_resolve(root, args.checkpoint))
    man_path = _resolve(root, args.manifest)
    manifest = dataio.read_manifest(man_path)
    man_root = os.path.dirname(os.path.abspath(man_path))
    cache = _SceneCache(man_root, manifest)
    samples = manifest.samples[:args.limit]
    if not samples:
        raise DataError("manifest has no samples")
    loaded = [(_load_sample_inputs(cache, s), cache.bvh(s.scene_id))
              for s in samples]

    def run_oracle(item):
        (gbuf, mm, lm, light, mats), bvh = item
        cfg = oracle.ShadeConfig(indirect_samples=args.indirect_samples,
                                 indirect_glossy_samples=args.indirect_glossy_samples,
                                 seed=7)
        buffers = oracle.shade(gbuf, mm, lm, light, bvh, cfg, mats)
        return compose.render_ldr(buffers, mm)

    def run_net(item):
        (gbuf, mm, lm, light, mats), _ = item
        return rendernet.infer_render(params, gbuf, mm, lm, arch)

    run_oracle(loaded[0])  # warm the JIT + caches
    run_net(loaded[0])
    t0 = time.perf_counter()
    for item in loaded:
        run_oracle(item)
    oracle_ms = (time.perf_counter() - t0) * 1000.0 / len(loaded)
    t0 = time.perf_counter()
    for item in loaded:
        run_net(item)
    net_ms = (time.perf_counter() - t0) * 1000.0 / len(loaded)

    report = {
        "images": len(loaded),
        "indirectSamples": args.indirect_samples,
        "indirectGlossySamples": args.indirect_glossy_samples,
        "oracleMsPerImage": oracle_ms,
        "netMsPerImage": net_ms,
        "speedup": oracle_ms / net_ms if net_ms > 0 else float("inf"),
    }
    out = _resolve(root, args.out)
    dataio.write_json(out + ".json", report)
    plotting.save_benchmark_bars(oracle_ms, net_ms, out + ".png")
    print(json.dumps(report, sort_keys=True))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="defrend",
                                description=__doc__.splitlines()[0])
    p.add_argument("--run-dir", default=None,
                   help="run directory (default $PNDR_RUN_DIR or ./run)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scenes", help="build procedural scenes")
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--objects", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="scenes")
    g.add_argument("--start-id", type=int, default=1)
    g.add_argument("--room", type=float, nargs=3, default=[4.0, 4.0, 2.5])
    g.add_argument("--resolution", type=int, nargs=2, default=[64, 64])
    g.add_argument("--object-kinds", default=",".join(DEFAULT_KINDS))
    g.add_argument("--full-rotation", action="store_true")
    g.set_defaults(func=cmd_gen_scenes)

    r = sub.add_parser("randomize", help="draw lights/materials, build maps")
    r.add_argument("--scenes", default="scenes")
    r.add_argument("--per-scene", type=int, default=4)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default="samples")
    r.add_argument("--manifest", default="manifest.json")
    r.add_argument("--resolution", type=int, nargs=2, default=[64, 64])
    r.add_argument("--light-mode", choices=["fixed", "dynamic"],
                   default="dynamic")
    r.add_argument("--material-mode", choices=["A", "ASR"], default="ASR")
    r.add_argument("--threads", type=int, default=None)
    r.set_defaults(func=cmd_randomize)

    o = sub.add_parser("render-oracle", help="ray-trace ground-truth buffers")
    o.add_argument("--manifest", default="manifest.json")
    o.add_argument("--indirect-samples", type=int, default=16)
    o.add_argument("--indirect-glossy-samples", type=int, default=4)
    o.add_argument("--no-indirect", action="store_true")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--threads", type=int, default=None)
    o.set_defaults(func=cmd_render_oracle)

    t = sub.add_parser("train-rendernet", help="fit the deferred renderer")
    t.add_argument("--manifest", default="manifest.json")
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--batch-size", type=int, default=4)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--levels", type=int, default=3)
    t.add_argument("--base", type=int, default=16)
    t.add_argument("--out", default="train")
    t.set_defaults(func=cmd_train_rendernet)

    n = sub.add_parser("render-net", help="render with a trained checkpoint")
    n.add_argument("--checkpoint", required=True)
    n.add_argument("--manifest", default="manifest.json")
    n.add_argument("--out", default="net_renders")
    n.set_defaults(func=cmd_render_net)

    e = sub.add_parser("eval", help="image metrics between two render trees")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--metrics", default="psnr,ssim")
    e.add_argument("--out", default="report")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("invert", help="recover light/materials from an image")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--target", required=True)
    v.add_argument("--gbuffer", required=True)
    v.add_argument("--mode", choices=["light", "material", "both"],
                   required=True)
    v.add_argument("--light", default=None,
                   help="light.json fixing the true light (material mode)")
    v.add_argument("--materials", default=None,
                   help="materials.json fixing true materials (light mode)")
    v.add_argument("--steps", type=int, default=500)
    v.add_argument("--lr", type=float, default=1e-2)
    v.add_argument("--inits", type=int, default=8)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", default="recovered")
    v.set_defaults(func=cmd_invert)

    b = sub.add_parser("benchmark", help="oracle vs network per-image time")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--manifest", default="manifest.json")
    b.add_argument("--indirect-samples", type=int, default=64)
    b.add_argument("--indirect-glossy-samples", type=int, default=16)
    b.add_argument("--limit", type=int, default=8)
    b.add_argument("--threads", type=int, default=None)
    b.add_argument("--out", default="benchmark")
    b.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DataError, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return 3
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
