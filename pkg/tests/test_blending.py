import numpy as np
import pytest

from blendqc.blending import BlendProfile, blend_value


@pytest.mark.parametrize("profile", ["cubic", "quintic"])
class TestProfiles:
    def test_endpoints(self, profile):
        b = BlendProfile(2.0, 4.0, profile)
        assert b.radial(np.array([0.0, 2.0]))[1] == 0.0
        assert b.radial(np.array([4.0, 9.0]))[0] == 1.0
        assert b.radial(np.array([9.0]))[0] == 1.0

    def test_monotone(self, profile):
        b = BlendProfile(2.0, 4.0, profile)
        v = b.radial(np.linspace(0, 5, 301))
        assert np.all(np.diff(v) >= 0)
        assert np.all((v >= 0) & (v <= 1))

    def test_midpoint_half(self, profile):
        b = BlendProfile(2.0, 4.0, profile)
        assert b.radial(np.array([3.0]))[0] == pytest.approx(0.5)

    def test_c1_at_ends(self, profile):
        b = BlendProfile(2.0, 4.0, profile)
        h = 1e-6
        for r in (2.0, 4.0):
            slope = (b.radial(np.array([r + h]))[0]
                     - b.radial(np.array([r - h]))[0]) / (2 * h)
            assert abs(slope) < 1e-5

    def test_radial_symmetry(self, profile):
        b = BlendProfile(2.0, 4.0, profile)
        rng = np.random.default_rng(4)
        x = rng.standard_normal((50, 3)) * 2.5
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        assert np.allclose(b(x), b(x @ q.T), atol=1e-12)


def test_quintic_c2_at_ends():
    b = BlendProfile(2.0, 4.0, "quintic")
    h = 1e-4
    for r in (2.0, 4.0):
        v = b.radial(np.array([r - h, r, r + h]))
        assert abs(v[0] - 2 * v[1] + v[2]) / h**2 < 1e-3


def test_cubic_explicit_value():
    # 3t^2 - 2t^3 at t = 1/4
    b = BlendProfile(0.0, 1.0, "cubic")
    t = 0.25
    assert b.radial(np.array([t]))[0] == pytest.approx(3 * t**2 - 2 * t**3)


def test_blend_value_wrapper():
    b = BlendProfile(1.0, 2.0, "quintic")
    assert blend_value(b, np.array([[1.5, 0.0, 0.0]]))[0] == pytest.approx(0.5)


def test_invalid_radii():
    with pytest.raises(ValueError):
        BlendProfile(3.0, 2.0, "quintic")
    with pytest.raises(ValueError):
        BlendProfile(2.0, 2.0, "quintic")


def test_unknown_profile():
    with pytest.raises(ValueError):
        BlendProfile(1.0, 2.0, "septic")
