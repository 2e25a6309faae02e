import numpy as np
import pytest
from scipy import stats

from defrend import randomize, rng, scenegen
from defrend.errors import DegenerateGeometry, MissingMaterial

from conftest import flat_quad_gbuffer


@pytest.mark.parametrize("seed", [0, 1, 17, 2 ** 40])
def test_light_on_upper_hemisphere_at_radius(seed):
    light = randomize.sample_light(seed, scenegen.Pose.identity())
    assert abs(np.linalg.norm(light.position_scene) - 1.5) < 1e-6
    assert light.position_scene[2] >= 0.0
    assert light.intensity > 0


def test_light_sampler_deterministic():
    w2c = scenegen.Pose.identity()
    a = randomize.sample_light(99, w2c)
    b = randomize.sample_light(99, w2c)
    assert np.array_equal(a.position_scene, b.position_scene)


def test_light_mean_height_matches_uniform_hemisphere():
    # E[z] = r/2 for solid-angle-uniform sampling on the hemisphere
    zs = np.array([randomize.sample_light(s, scenegen.Pose.identity())
                   .position_scene[2] for s in range(100_000)])
    assert abs(zs.mean() - 0.75) < 0.015


def test_hemisphere_uniformity_chi_square():
    u = rng.uniforms(2024, 200_000, 61).reshape(-1, 2)
    dirs = np.stack([randomize.hemisphere_direction(a, b) for a, b in u])
    # 8 equal-solid-angle bins: 4 azimuth quadrants x 2 z-halves (z=0.5 splits
    # the hemisphere's solid angle in two)
    quad = (np.arctan2(dirs[:, 1], dirs[:, 0]) + np.pi) // (np.pi / 2)
    quad = np.clip(quad, 0, 3)
    zbin = (dirs[:, 2] >= 0.5).astype(int)
    counts = np.bincount((quad * 2 + zbin).astype(int), minlength=8)
    n = len(dirs)
    chi2 = float(((counts - n / 8.0) ** 2 / (n / 8.0)).sum())
    assert chi2 < stats.chi2.ppf(0.99, df=7)


def test_light_transformed_to_camera_frame():
    w2c = scenegen.look_at_pose((2.0, 0.0, 1.0), (0.0, 0.0, 0.0))
    light = randomize.sample_light(3, w2c)
    assert np.allclose(light.position_camera,
                       w2c.apply(light.position_scene), atol=1e-12)


def test_light_maps_hand_case():
    gbuf = flat_quad_gbuffer(z=2.0)
    light = randomize.LightSample(position_scene=np.array([0.0, 1.5, 1.0]),
                                  position_camera=np.array([0.0, 1.5, 1.0]))
    maps = randomize.light_maps(gbuf, light)
    # diff = (0, 1.5, -1), dist = sqrt(3.25)
    assert np.allclose(maps.ldist, 1.8028, atol=1e-4)
    assert np.allclose(maps.ldir[0, 0], [0.0, 0.8321, -0.5547], atol=1e-4)


def test_light_maps_axis_case():
    gbuf = flat_quad_gbuffer(z=2.0)
    light = randomize.LightSample(position_scene=np.array([0.0, 0.0, 3.0]),
                                  position_camera=np.array([0.0, 0.0, 3.0]))
    maps = randomize.light_maps(gbuf, light)
    assert np.allclose(maps.ldist, 1.0, atol=1e-6)
    assert np.allclose(maps.ldir, [0.0, 0.0, 1.0], atol=1e-6)


def test_light_maps_reconstruction_identity(gbuf, draw):
    light, lmaps, _, _ = draw
    m = gbuf.valid
    rec = (gbuf.x.astype(np.float64)
           + lmaps.ldist[..., None].astype(np.float64)
           * lmaps.ldir.astype(np.float64))
    assert np.abs(rec[m] - light.position_camera).max() < 1e-4
    assert np.allclose(np.linalg.norm(lmaps.ldir[m], axis=-1), 1.0, atol=1e-5)
    assert (lmaps.ldist[m] > 0).all()
    assert (lmaps.ldir[~m] == 0).all()


def test_light_maps_degenerate_when_light_touches_surface():
    gbuf = flat_quad_gbuffer(z=2.0)
    light = randomize.LightSample(position_scene=np.array([0.0, 0.0, 2.0]),
                                  position_camera=np.array([0.0, 0.0, 2.0]))
    with pytest.raises(DegenerateGeometry):
        randomize.light_maps(gbuf, light)


def test_materials_deterministic_per_seed():
    a = randomize.sample_materials([0, 1, 2], 5)
    b = randomize.sample_materials([0, 1, 2], 5)
    for x, y in zip(a, b):
        assert np.array_equal(x.albedo_rgb, y.albedo_rgb)
        assert x.roughness == y.roughness and x.specularity == y.specularity


def test_materials_one_sample_per_id_within_ranges():
    samples = randomize.sample_materials([0, 1, 2], 7)
    assert [s.object_id for s in samples] == [0, 1, 2]
    for s in samples:
        assert (0 <= s.albedo_rgb).all() and (s.albedo_rgb <= 1).all()
        assert randomize.ROUGHNESS_MIN <= s.roughness <= 1.0
        assert 0.0 <= s.specularity <= 1.0


def test_materials_order_independent_draws():
    fwd = {s.object_id: s for s in randomize.sample_materials([0, 1, 2], 9)}
    rev = {s.object_id: s for s in randomize.sample_materials([2, 1, 0], 9)}
    for oid in (0, 1, 2):
        assert np.array_equal(fwd[oid].albedo_rgb, rev[oid].albedo_rgb)


def test_material_specularity_mean_half():
    samples = randomize.sample_materials(list(range(100_000)), 31)
    spec = np.array([s.specularity for s in samples])
    assert abs(spec.mean() - 0.5) < 0.005


def test_materials_reject_bad_ids():
    with pytest.raises(MissingMaterial):
        randomize.sample_materials([], 1)
    with pytest.raises(MissingMaterial):
        randomize.sample_materials([1, 1], 1)


def test_material_fixed_overrides():
    samples = randomize.sample_materials([0, 1], 3, fixed_roughness=0.5,
                                         fixed_specularity=0.25)
    assert all(s.roughness == 0.5 and s.specularity == 0.25 for s in samples)
    # albedo stream unchanged by the overrides
    free = randomize.sample_materials([0, 1], 3)
    for a, b in zip(samples, free):
        assert np.array_equal(a.albedo_rgb, b.albedo_rgb)


def test_compose_albedo_multiplication():
    gbuf = flat_quad_gbuffer()
    mats = [randomize.MaterialSample(0, np.array([0.2, 0.4, 0.6]), 0.5, 0.5)]
    maps = randomize.compose_material_maps(gbuf, mats)
    assert np.allclose(maps.a, [0.2, 0.4, 0.6], atol=1e-7)

    gbuf.base_albedo[:] = 0.5
    mats = [randomize.MaterialSample(0, np.array([1.0, 1.0, 1.0]), 0.5, 0.5)]
    maps = randomize.compose_material_maps(gbuf, mats)
    assert np.allclose(maps.a, 0.5, atol=1e-7)


def test_compose_per_instance_constancy(gbuf, draw):
    _, _, mats, maps = draw
    for oid in np.unique(gbuf.instance[gbuf.valid]):
        m = (gbuf.instance == oid) & gbuf.valid
        assert np.ptp(maps.r[m]) == 0.0
        assert np.ptp(maps.s[m]) == 0.0
    assert (maps.a[~gbuf.valid] == 0).all() if (~gbuf.valid).any() else True
    assert maps.a.min() >= 0 and maps.a.max() <= 1


def test_compose_missing_material_error(gbuf):
    with pytest.raises(MissingMaterial):
        randomize.compose_material_maps(
            gbuf, randomize.sample_materials([0], 1))
