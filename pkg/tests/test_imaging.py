import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from elastotr.forward import FieldMovie
from elastotr.imaging import (ImageField, aggregate_probes, find_peaks, incident_energy,
                              region_peak, rtm, rtm_percentage, rtm_sum)
from elastotr.scene import InclusionSpec, builtin_presets

X = np.linspace(0.0, 1.0, 5)
Y = np.linspace(0.0, 0.5, 3)


def _movie(frames, interval=1.0, kind="incident"):
    frames = np.asarray(frames, dtype=float)
    return FieldMovie(X, Y, frames, 1, interval, (len(frames) - 1) * interval, kind)


def _image(values, variant="component_u2", criterion=None, x=None, y=None):
    values = np.asarray(values, dtype=float)
    ny, nx = values.shape
    x = np.linspace(0, 1, nx) if x is None else x
    y = np.linspace(0, 1, ny) if y is None else y
    return ImageField(x, y, values, criterion or variant, variant)


def test_zero_reversed_field_gives_zero_image(rng):
    inc = _movie(rng.standard_normal((6, 3, 3, 5)))
    rev = _movie(np.zeros((6, 3, 3, 5)), kind="reversed")
    for v in ("full", "component_u2", "divergence"):
        assert not np.any(rtm(rev, inc, v).values)


def test_two_frame_hand_sum(rng):
    inc = rng.standard_normal((2, 3, 3, 5))
    rev = rng.standard_normal((2, 3, 3, 5))
    h = 0.5
    im = rtm(_movie(rev, h, "reversed"), _movie(inc, h), "component_u2")
    # reversed frame k pairs with incident frame 1 - k
    want = h * (rev[0, 1] * inc[1, 1] + rev[1, 1] * inc[0, 1])
    assert np.allclose(im.values, want, atol=1e-14)
    full = rtm(_movie(rev, h, "reversed"), _movie(inc, h), "full")
    want_full = want + h * (rev[0, 0] * inc[1, 0] + rev[1, 0] * inc[0, 0])
    assert np.allclose(full.values, want_full, atol=1e-14)
    div = rtm(_movie(rev, h, "reversed"), _movie(inc, h), "divergence")
    assert np.allclose(div.values, h * (rev[0, 2] * inc[1, 2] + rev[1, 2] * inc[0, 2]))


@pytest.mark.parametrize("variant", ["full", "component_u2", "divergence"])
def test_autocorrelation_is_energy(rng, variant):
    inc = _movie(rng.standard_normal((7, 3, 3, 5)), 0.25)
    rev = _movie(inc.frames[::-1], 0.25, "reversed")
    im = rtm(rev, inc, variant)
    assert np.all(im.values >= 0)
    assert np.allclose(im.values, incident_energy(inc, variant), rtol=1e-13)
    pct = rtm_percentage(im, inc)
    assert pct.max() == pytest.approx(1.0, rel=1e-13)
    assert pct.criterion == "percentage" and pct.variant == variant


def test_rtm_rejects_incompatible_movies(rng):
    inc = _movie(rng.standard_normal((4, 3, 3, 5)))
    with pytest.raises(ValueError):
        rtm(_movie(inc.frames, 2.0, "reversed"), inc)
    with pytest.raises(ValueError):
        rtm(_movie(inc.frames[:3], 1.0, "reversed"), inc)
    with pytest.raises(ValueError):
        rtm(_movie(inc.frames, kind="reversed"), inc, "bogus")


def test_percentage_needs_energy():
    z = _movie(np.zeros((3, 3, 3, 5)))
    with pytest.raises(ValueError):
        rtm_percentage(rtm(z, z), z)


def test_sum_and_aggregate(rng):
    a, b, c = (_image(rng.standard_normal((4, 6))) for _ in range(3))
    s = rtm_sum([a, b, c])
    assert np.allclose(s.values, a.values + b.values + c.values)
    assert np.allclose(rtm_sum([c, b, a]).values, s.values, atol=1e-15)
    assert s.criterion == "sum"
    assert np.array_equal(aggregate_probes([a]).values, a.values)
    with pytest.raises(ValueError):
        rtm_sum([])
    with pytest.raises(ValueError):
        rtm_sum([a, _image(rng.standard_normal((4, 6)), variant="full")])
    with pytest.raises(ValueError):
        aggregate_probes([a, _image(rng.standard_normal((5, 6)))])


def test_image_validation():
    with pytest.raises(ValueError):
        ImageField(X, Y, np.zeros((5, 3)), "full", "full")
    with pytest.raises(ValueError):
        ImageField(X, Y, np.zeros((3, 5)), "nonsense", "full")
    with pytest.raises(ValueError):
        ImageField(X, Y, np.full((3, 5), np.inf), "full", "full")


def _bump(x0, y0, amp, width=0.08):
    gx = np.linspace(0, 1, 51)
    gy = np.linspace(0, 1, 41)
    Xg, Yg = np.meshgrid(gx, gy)
    return gx, gy, amp * np.exp(-((Xg - x0) ** 2 + (Yg - y0) ** 2) / (2 * width**2))


def test_peaks_constant_image_has_none():
    assert len(find_peaks(_image(np.ones((5, 5))))) == 0
    assert len(find_peaks(_image(np.zeros((5, 5))))) == 0


def test_peaks_single_gaussian():
    gx, gy, v = _bump(0.4, 0.6, 2.0)
    rep = find_peaks(_image(v, x=gx, y=gy))
    assert len(rep) == 1
    assert rep.peaks[0].location == pytest.approx((0.4, 0.6))
    assert rep.peaks[0].prominence == pytest.approx(v.max() - v.min())
    assert rep.threshold == pytest.approx(0.6)


def test_peaks_threshold_filters_small_bump():
    gx, gy, v1 = _bump(0.25, 0.5, 1.0)
    _, _, v2 = _bump(0.75, 0.5, 0.2)
    im = _image(v1 + v2, x=gx, y=gy)
    assert len(find_peaks(im, 0.3)) == 1
    rep = find_peaks(im, 0.1)
    assert len(rep) == 2
    # the tail of the big bump may pull the discrete maximum by one cell
    assert rep.locations()[1] == pytest.approx((0.75, 0.5), abs=0.021)
    assert rep.peaks[1].prominence == pytest.approx(0.2, rel=0.05)
    with pytest.raises(ValueError):
        find_peaks(im, 1.5)


def test_plateau_yields_single_peak():
    v = np.zeros((5, 5))
    v[2, 2] = v[2, 3] = 1.0
    assert len(find_peaks(_image(v))) == 1


@given(arrays(np.float64, (6, 7), elements=st.floats(-1, 1)), st.floats(0.05, 0.95))
def test_peaks_are_local_maxima_above_threshold(v, frac):
    rep = find_peaks(_image(v), frac)
    pad = np.pad(v, 1, constant_values=-np.inf)
    for p in rep.peaks:
        iy, ix = p.index
        assert p.value >= rep.threshold
        assert p.value == pad[iy:iy + 3, ix:ix + 3].max()
        assert p.prominence >= 0
    assert [p.value for p in rep.peaks] == sorted((p.value for p in rep.peaks), reverse=True)


def test_region_peak():
    gx, gy, v = _bump(0.8, 0.8, 3.0)
    _, _, w = _bump(0.3, 0.3, 1.0)
    im = _image(v + w, x=gx, y=gy)
    inc = InclusionSpec((0.3, 0.3), (0.1, 0.1), builtin_presets()["malignant"])
    assert region_peak(im, inc, 0.0) == pytest.approx(1.0, rel=1e-3)
    assert region_peak(im, inc, 0.7) == pytest.approx(3.0, rel=1e-3)
    tiny = InclusionSpec((0.301, 0.301), (1e-4, 1e-4), builtin_presets()["malignant"])
    with pytest.raises(ValueError):
        region_peak(im, tiny, 0.0)
