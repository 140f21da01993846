import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from elastotr.scene import (FluidMaterial, InclusionLayout, InclusionSpec, SceneSpec, SolidMaterial,
                            SraSpec, builtin_presets, derive_velocities, desk_scene, material_at,
                            young_modulus)

PRESETS = builtin_presets()
# velocities quoted alongside the material table
QUOTED = {"fluid": (1500.0, 0.0), "skin": (2407.73, 7.61), "tissue": (1354.02, 4.28),
          "benign": (1471.97, 4.65), "malignant": (1732.06, 5.47)}


def test_fluid_speed():
    assert derive_velocities(FluidMaterial(1000.0, 2.25e9)) == (1500.0, 0.0)


def test_malignant_shear_speed():
    vs = derive_velocities(SolidMaterial(1000.0, 2.99e9, 3e4))[1]
    assert vs == pytest.approx(math.sqrt(30.0), rel=1e-12)
    assert vs == pytest.approx(5.477, abs=1e-3)


def test_unit_material():
    assert derive_velocities(SolidMaterial(1.0, 1.0, 0.0)) == (1.0, 0.0)


def test_invalid_materials_rejected():
    with pytest.raises(ValueError):
        SolidMaterial(-1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        SolidMaterial(1.0, -5.0, 1.0)
    with pytest.raises(ValueError):
        FluidMaterial(1.0, 0.0)


@pytest.mark.parametrize("name", sorted(QUOTED))
def test_preset_speeds_match_quoted(name):
    vp, vs = derive_velocities(PRESETS[name])
    qp, qs = QUOTED[name]
    assert vp == pytest.approx(qp, rel=3e-3)
    assert vs == pytest.approx(qs, rel=3e-3, abs=1e-12)


def test_young_modulus_examples():
    assert young_modulus(PRESETS["malignant"]) == pytest.approx(9e4, rel=1e-3)
    assert young_modulus(PRESETS["benign"]) == pytest.approx(6.5e4, rel=1e-3)
    assert young_modulus(SolidMaterial(1.0, 0.0, 1.0)) == pytest.approx(2.0)


@given(lam=st.floats(1e3, 1e10), mu1=st.floats(1.0, 1e6), mu2=st.floats(1.0, 1e6))
def test_young_modulus_monotone_in_mu(lam, mu1, mu2):
    lo, hi = sorted((mu1, mu2))
    e_lo = young_modulus(SolidMaterial(1000.0, lam, lo))
    assert e_lo <= young_modulus(SolidMaterial(1000.0, lam, hi))


def test_material_at_regions():
    sc = desk_scene([InclusionLayout(5.0, 2.0, (0.8, 0.8), "malignant")])
    c = sc.inclusions[0].center
    m, tag = material_at(sc, c, with_inclusions=True)
    assert m == PRESETS["malignant"] and tag == "inclusion0"
    m, tag = material_at(sc, c, with_inclusions=False)
    assert m == PRESETS["tissue"] and tag == "tissue"
    top, bot = sc.skin_band
    assert material_at(sc, (c[0], 0.5 * (top + bot)))[1] == "skin"
    assert material_at(sc, (c[0], sc.interface_y + 1e-3))[1] == "fluid"
    with pytest.raises(ValueError):
        material_at(sc, (-1.0, 0.0))


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_material_at_piecewise_constant(x1, y1, x2, y2):
    sc = desk_scene([InclusionLayout(5.0, 2.0, (0.8, 0.8), "malignant")])
    x0, y0, xa, ya = sc.domain
    p = (x0 + x1 * (xa - x0), y0 + y1 * (ya - y0))
    q = (x0 + x2 * (xa - x0), y0 + y2 * (ya - y0))
    (mp, tp), (mq, tq) = material_at(sc, p), material_at(sc, q)
    if tp == tq:
        assert mp == mq
    assert material_at(sc, p, with_inclusions=False)[1] != "inclusion0"


def test_scene_validation():
    p = PRESETS
    with pytest.raises(ValueError):
        SceneSpec((0, 0, 1, 1), 1.5, p["fluid"], p["tissue"])
    with pytest.raises(ValueError):
        SceneSpec((0, 0, 1, 1), 0.5, p["fluid"], p["tissue"], sources=((0.5, 0.2),))
    with pytest.raises(ValueError):
        SceneSpec((0, 0, 1, 1), 0.5, p["fluid"], p["tissue"], t_final=0.0)
    with pytest.raises(ValueError):
        inc = InclusionSpec((0.5, 0.45), (0.1, 0.1), p["malignant"])
        SceneSpec((0, 0, 1, 1), 0.5, p["fluid"], p["tissue"], inclusions=(inc,))
    with pytest.raises(ValueError):
        SceneSpec((0, 0, 1, 1), 0.5, p["fluid"], p["tissue"],
                  sras=(SraSpec((0.1, 0.4), (0.9, 0.4), 3),))
    with pytest.raises(ValueError):
        InclusionSpec((0.5, 0.2), (0.0, 0.1), p["malignant"])


def test_desk_scene_layout():
    sc = desk_scene([InclusionLayout(5.0, 2.0, (0.8, 0.8))])
    lw = sc.wavelength
    assert lw == pytest.approx(0.015)
    assert sc.domain[2] == pytest.approx(10 * lw) and sc.domain[3] == pytest.approx(6 * lw)
    assert sc.interface_y == pytest.approx(4.5 * lw)
    assert sc.skin_band[0] - sc.skin_band[1] == pytest.approx(lw / 6)
    assert sc.sources == (sc.sras[0].element("middle"),)
    assert sc.inclusions[0].center == pytest.approx((5 * lw, 2.5 * lw))


def test_mirrored_scene_is_an_involution():
    sc = desk_scene([InclusionLayout(3.0, 2.0, (0.4, 0.4), "benign"),
                     InclusionLayout(7.0, 2.0, (1.25, 1.25))])
    mm = sc.mirrored().mirrored()
    for a, b in zip(sc.inclusions, mm.inclusions):
        assert np.allclose(a.center, b.center, atol=1e-15)
    assert sc.mirrored().inclusions[0].center[0] == pytest.approx(7.0 * sc.wavelength)


def test_inclusion_contains_and_dilation():
    inc = InclusionSpec((0.0, 0.0), (2.0, 1.0), PRESETS["malignant"], rotation=math.pi / 2)
    assert inc.contains(0.0, 1.9)
    assert not inc.contains(1.9, 0.0)
    assert inc.contains(1.4, 0.0, dilation=0.5)
    assert np.allclose(inc.bounding_box(), (-1.0, -2.0, 1.0, 2.0))
