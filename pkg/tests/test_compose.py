import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from defrend import compose
from defrend.errors import ShapeMismatch
from defrend.oracle import LightBuffers


def const_buffers(ddir=0.0, dind=0.0, gdir=0.0, gind=0.0, shape=(4, 4, 3)):
    return LightBuffers(ddir=np.full(shape, ddir), dind=np.full(shape, dind),
                        gdir=np.full(shape, gdir), gind=np.full(shape, gind))


def test_composite_zero_inputs():
    hdr = compose.composite_hdr(const_buffers(), np.ones((4, 4, 3)),
                                np.ones((4, 4, 3)))
    assert (hdr == 0).all()


def test_composite_identity_case():
    hdr = compose.composite_hdr(const_buffers(ddir=1.0), np.ones((4, 4, 3)),
                                np.zeros((4, 4, 3)))
    assert np.allclose(hdr, 1.0)


def test_composite_hand_case():
    # (0.2 + 0.1) * (0.5, 0, 0) = (0.15, 0, 0)
    dcol = np.zeros((4, 4, 3))
    dcol[..., 0] = 0.5
    hdr = compose.composite_hdr(const_buffers(ddir=0.2, dind=0.1), dcol,
                                np.zeros((4, 4, 3)))
    assert np.allclose(hdr[..., 0], 0.15)
    assert (hdr[..., 1:] == 0).all()


def test_composite_includes_glossy_terms():
    gcol = np.full((4, 4, 3), 0.5)
    hdr = compose.composite_hdr(const_buffers(gdir=0.4, gind=0.2),
                                np.zeros((4, 4, 3)), gcol)
    assert np.allclose(hdr, 0.3)


def test_composite_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        compose.composite_hdr(const_buffers(), np.ones((5, 4, 3)),
                              np.ones((4, 4, 3)))


def test_composite_linear_in_buffers():
    b = const_buffers(0.2, 0.05, 0.3, 0.01)
    dcol = np.random.default_rng(0).uniform(0, 1, (4, 4, 3))
    gcol = np.random.default_rng(1).uniform(0, 1, (4, 4, 3))
    one = compose.composite_hdr(b, dcol, gcol)
    s = 3.7
    scaled = LightBuffers(ddir=b.ddir * s, dind=b.dind * s,
                          gdir=b.gdir * s, gind=b.gind * s)
    assert np.allclose(compose.composite_hdr(scaled, dcol, gcol), s * one,
                       rtol=1e-12)


def _tone_reference(x):
    # independent evaluation of the rational fit
    s = max(0.0, x - 0.004)
    return s * (6.2 * s + 0.5) / (s * (6.2 * s + 1.7) + 0.06)


def test_tone_map_golden_values():
    assert compose.tone_map(np.array(0.0)) == 0.0
    assert compose.tone_map(np.array(0.004)) == 0.0
    got = float(compose.tone_map(np.array(1.0)))
    assert abs(got - 0.8412) < 1e-4
    assert abs(got - _tone_reference(1.0)) < 1e-12


def test_tone_map_below_toe_is_zero():
    assert (compose.tone_map(np.array([0.0, 0.001, 0.0039])) == 0.0).all()


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 50.0), st.floats(0.0, 50.0))
def test_tone_map_monotone_and_bounded(a, b):
    lo, hi = min(a, b), max(a, b)
    fa, fb = compose.tone_map(np.array(lo)), compose.tone_map(np.array(hi))
    assert fa <= fb + 1e-15
    assert 0.0 <= fa < 1.0 and 0.0 <= fb < 1.0


def test_tone_map_limit_approaches_one():
    assert compose.tone_map(np.array(1e9)) > 0.999
    assert compose.tone_map(np.array(1e9)) < 1.0


def test_render_ldr_matches_manual_pipeline(draw):
    _, _, _, maps = draw
    buffers = const_buffers(0.5, 0.1, 0.2, 0.05,
                            shape=maps.a.shape)
    manual = compose.tone_map(compose.composite_hdr(
        buffers, maps.a.astype(np.float64), compose.specular_color(maps)))
    assert np.array_equal(compose.render_ldr(buffers, maps), manual)
