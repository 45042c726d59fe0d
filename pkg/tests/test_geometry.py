import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relforecast import diffmath as dm
from relforecast.geometry import (
    SE2,
    Pose2,
    pairpose_encode,
    rel_geom,
    rel_geom_arrays,
    se2_apply,
    sinusoid_bank,
)

coords = st.floats(-500, 500, allow_nan=False)
angles = st.floats(-np.pi, np.pi, allow_nan=False)
poses = st.builds(Pose2.from_yaw, coords, coords, angles)
transforms = st.builds(lambda a, x, y: SE2(a, (x, y)), angles, coords, coords)


def test_identity_pair():
    p = Pose2.from_yaw(4.0, -2.0, 0.7)
    g = rel_geom(p, p)
    assert (g.sin_alpha, g.cos_alpha) == pytest.approx((0.0, 1.0), abs=1e-15)
    assert (g.sin_beta, g.cos_beta) == (0.0, 1.0)
    np.testing.assert_array_equal(g.dist_encoding[:16], 0.0)
    np.testing.assert_array_equal(g.dist_encoding[16:], 1.0)


def test_hand_geometry_and_cross_sign():
    dst = Pose2(np.zeros(2), np.array([1.0, 0.0]))
    src = Pose2(np.array([3.0, 0.0]), np.array([0.0, 1.0]))
    g = rel_geom(src, dst)
    # (0,1) x (1,0) = 0*0 - 1*1
    assert g.sin_alpha == -1.0
    assert g.cos_alpha == 0.0
    assert (g.sin_beta, g.cos_beta) == (0.0, 1.0)
    np.testing.assert_allclose(g.dist_encoding, sinusoid_bank(3.0))


def test_sinusoid_bank_cases():
    np.testing.assert_array_equal(sinusoid_bank(0.0, 4), [0, 0, 0, 0, 1, 1, 1, 1])
    np.testing.assert_allclose(sinusoid_bank(1.3, 1), [np.sin(1.3), np.cos(1.3)])
    d, N = 2.5, 16
    for sign in (-1.0, 1.0):
        out = sinusoid_bank(d, N, sign)
        for n in range(N):
            w = np.exp(sign * 4 * n / N)
            assert out[n] == pytest.approx(np.sin(d * w), abs=1e-15)
            assert out[N + n] == pytest.approx(np.cos(d * w), abs=1e-15)


def test_sinusoid_sign_behaviour():
    # decaying exponent: the slowest wavelength reaches hundreds of metres
    slow = 2 * np.pi / np.exp(-4 * 15 / 16)
    assert slow > 250
    # growing exponent: every wavelength is at most 2*pi metres
    fast = 2 * np.pi / np.exp(4 * np.arange(16) / 16)
    assert fast.max() == pytest.approx(2 * np.pi)
    with pytest.raises(ValueError):
        sinusoid_bank(1.0, 4, sign=0.5)


@settings(max_examples=200, deadline=None)
@given(poses, poses, transforms, st.sampled_from([-1.0, 1.0]))
def test_rel_geom_rigid_invariance(a, b, T, sign):
    g0 = rel_geom(a, b, sign=sign).as_array()
    g1 = rel_geom(se2_apply(T, a), se2_apply(T, b), sign=sign).as_array()
    np.testing.assert_allclose(g1, g0, atol=1e-9, rtol=0)


@settings(max_examples=100, deadline=None)
@given(poses, poses)
def test_alpha_antisymmetry_and_bounds(a, b):
    ab, ba = rel_geom(a, b), rel_geom(b, a)
    assert ab.sin_alpha == pytest.approx(-ba.sin_alpha, abs=1e-12)
    assert ab.cos_alpha == pytest.approx(ba.cos_alpha, abs=1e-12)
    assert ab.sin_beta ** 2 + ab.cos_beta ** 2 == pytest.approx(1.0, abs=1e-9)
    assert ab.sin_alpha ** 2 + ab.cos_alpha ** 2 == pytest.approx(1.0, abs=1e-9)
    assert np.all(np.abs(ab.dist_encoding) <= 1.0)


def test_vectorised_matches_scalar(rng):
    c = rng.normal(size=(10, 2)) * 20
    yaw = rng.uniform(-np.pi, np.pi, size=10)
    h = np.stack([np.cos(yaw), np.sin(yaw)], axis=1)
    arr = rel_geom_arrays(c[:5], h[:5], c[5:], h[5:])
    for i in range(5):
        scalar = rel_geom(Pose2(c[i], h[i]), Pose2(c[5 + i], h[5 + i])).as_array()
        np.testing.assert_array_equal(arr[i], scalar)


class TestPairPose:
    def _encoder(self, seed=0):
        store = dm.ParamStore(seed=seed)
        return store, dm.MLP(store, "pp", 36, [8, 8])

    def test_deterministic(self):
        _, enc = self._encoder()
        a, b = Pose2.from_yaw(1, 2, 0.3), Pose2.from_yaw(-4, 0, 2.0)
        np.testing.assert_array_equal(pairpose_encode(a, b, enc).data, pairpose_encode(a, b, enc).data)

    def test_invariant(self, rng):
        _, enc = self._encoder()
        a, b = Pose2.from_yaw(10, 2, 0.3), Pose2.from_yaw(-4, 30, 2.0)
        T = SE2.random(rng)
        np.testing.assert_allclose(pairpose_encode(se2_apply(T, a), se2_apply(T, b), enc).data,
                                   pairpose_encode(a, b, enc).data, atol=1e-9, rtol=0)

    def test_zero_weights_give_bias(self, rng):
        store, enc = self._encoder()
        for name, p in store.items():
            if name.endswith(".w"):
                p.data[:] = 0.0
        bias = store["pp.1.b"].data
        for _ in range(3):
            a = Pose2.from_yaw(*rng.normal(size=3))
            b = Pose2.from_yaw(*rng.normal(size=3))
            np.testing.assert_array_equal(pairpose_encode(a, b, enc).data, bias)

    def test_shape_mismatch(self):
        _, enc = self._encoder()
        with pytest.raises(ValueError):
            pairpose_encode(Pose2.from_yaw(0, 0, 0), Pose2.from_yaw(1, 0, 0), enc, n_freq=4)


class TestSE2:
    def test_identity(self):
        p = Pose2.from_yaw(1.0, 2.0, 0.5)
        q = se2_apply(SE2(), p)
        np.testing.assert_array_equal(q.centroid, p.centroid)
        np.testing.assert_array_equal(q.heading, p.heading)

    def test_quarter_turn(self):
        q = se2_apply(SE2(np.pi / 2), Pose2(np.zeros(2), np.array([1.0, 0.0])))
        np.testing.assert_allclose(q.heading, [0.0, 1.0], atol=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(transforms, poses)
    def test_inverse(self, T, p):
        q = se2_apply(T.inverse(), se2_apply(T, p))
        np.testing.assert_allclose(q.centroid, p.centroid, atol=1e-12, rtol=0)
        np.testing.assert_allclose(q.heading, p.heading, atol=1e-12, rtol=0)

    @settings(max_examples=50, deadline=None)
    @given(transforms, transforms, transforms, poses)
    def test_composition_associative(self, A, B, C, p):
        left = se2_apply(A.compose(B).compose(C), p)
        right = se2_apply(A.compose(B.compose(C)), p)
        np.testing.assert_allclose(left.centroid, right.centroid, atol=1e-9, rtol=0)
        stepwise = se2_apply(A, se2_apply(B, se2_apply(C, p)))
        np.testing.assert_allclose(left.centroid, stepwise.centroid, atol=1e-9, rtol=0)

    def test_non_unit_heading_rejected(self):
        with pytest.raises(ValueError):
            Pose2(np.zeros(2), np.array([1.0, 1.0]))
