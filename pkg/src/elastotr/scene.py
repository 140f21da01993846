"""Physical description of a fluid/solid experiment.

The domain is an axis-aligned rectangle.  The fluid occupies everything above
the horizontal interface ``interface_y``; the solid lies below it and may
contain a thin skin band right under the interface plus elliptical
inclusions embedded in the tissue.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

# region codes used for triangle tags; inclusion k is INCLUSION + k
FLUID = 0
SKIN = 1
TISSUE = 2
INCLUSION = 3


def region_name(code: int) -> str:
    if code == FLUID:
        return "fluid"
    if code == SKIN:
        return "skin"
    if code == TISSUE:
        return "tissue"
    return f"inclusion{code - INCLUSION}"


@dataclass(frozen=True)
class FluidMaterial:
    """Homogeneous fluid given by density (kg/m^3) and bulk modulus (Pa)."""

    rho: float
    lam: float

    def __post_init__(self):
        if not (self.rho > 0 and self.lam > 0):
            raise ValueError(f"invalid fluid material rho={self.rho}, lambda={self.lam}")

    @property
    def mu(self) -> float:
        return 0.0


@dataclass(frozen=True)
class SolidMaterial:
    """Isotropic elastic solid: density and Lame parameters (SI units)."""

    rho: float
    lam: float
    mu: float

    def __post_init__(self):
        if not (self.rho > 0 and self.mu >= 0 and self.lam + 2 * self.mu > 0):
            raise ValueError(
                f"invalid solid material rho={self.rho}, lambda={self.lam}, mu={self.mu}"
            )


Material = FluidMaterial | SolidMaterial


def derive_velocities(m: Material) -> tuple[float, float]:
    """Return the (P, S) wave speeds of a material; S is zero for fluids."""
    vp = math.sqrt((m.lam + 2 * m.mu) / m.rho)
    vs = math.sqrt(m.mu / m.rho)
    return vp, vs


def impedance(m: Material) -> float:
    return m.rho * derive_velocities(m)[0]


def young_modulus(m: SolidMaterial) -> float:
    """Young modulus ``mu (3 lambda + 2 mu) / (lambda + mu)``."""
    if m.lam + m.mu <= 0:
        raise ValueError("young modulus undefined for lambda + mu <= 0")
    return m.mu * (3 * m.lam + 2 * m.mu) / (m.lam + m.mu)


def builtin_presets() -> dict[str, Material]:
    """Breast-imaging material table (fluid coupling gel, skin, tissue, tumors)."""
    return {
        "fluid": FluidMaterial(rho=1000.0, lam=2.25e9),
        "skin": SolidMaterial(rho=1150.0, lam=6.66e9, mu=66.66e3),
        "tissue": SolidMaterial(rho=1000.0, lam=1.83e9, mu=18.33e3),
        "benign": SolidMaterial(rho=1000.0, lam=2.16e9, mu=21.66e3),
        "malignant": SolidMaterial(rho=1000.0, lam=2.99e9, mu=30.0e3),
    }


@dataclass(frozen=True)
class InclusionSpec:
    """Elliptical inclusion with semi-axes ``(a, b)`` rotated by ``rotation``."""

    center: tuple[float, float]
    semi_axes: tuple[float, float]
    material: SolidMaterial
    rotation: float = 0.0

    def __post_init__(self):
        a, b = self.semi_axes
        if not (a > 0 and b > 0):
            raise ValueError("inclusion semi-axes must be positive")

    def contains(self, x: np.ndarray, y: np.ndarray, dilation: float = 0.0) -> np.ndarray:
        """Vectorised point-in-ellipse test, optionally on the dilated ellipse."""
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        dx = np.asarray(x, dtype=float) - self.center[0]
        dy = np.asarray(y, dtype=float) - self.center[1]
        xr = c * dx + s * dy
        yr = -s * dx + c * dy
        a, b = self.semi_axes
        return (xr / (a + dilation)) ** 2 + (yr / (b + dilation)) ** 2 <= 1.0

    def bounding_box(self) -> tuple[float, float, float, float]:
        a, b = self.semi_axes
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        hx = math.hypot(a * c, b * s)
        hy = math.hypot(a * s, b * c)
        cx, cy = self.center
        return cx - hx, cy - hy, cx + hx, cy + hy


@dataclass(frozen=True)
class SraSpec:
    """Straight source-receiver array between two points in the fluid."""

    start: tuple[float, float]
    end: tuple[float, float]
    receiver_count: int

    def __post_init__(self):
        if self.receiver_count < 1:
            raise ValueError("receiver_count must be >= 1")

    def receiver_points(self) -> np.ndarray:
        if self.receiver_count == 1:
            return 0.5 * (np.asarray(self.start) + np.asarray(self.end))[None, :]
        s = np.linspace(0.0, 1.0, self.receiver_count)[:, None]
        return (1 - s) * np.asarray(self.start, float) + s * np.asarray(self.end, float)

    def element(self, which: str) -> tuple[float, float]:
        """Coordinates of the ``left``, ``middle`` or ``right`` element."""
        pts = self.receiver_points()
        idx = {"left": 0, "middle": (len(pts) - 1) // 2, "right": len(pts) - 1}[which]
        return float(pts[idx, 0]), float(pts[idx, 1])


@dataclass(frozen=True)
class SceneSpec:
    """Complete experiment description.

    ``domain`` is ``(x_min, y_min, x_max, y_max)``.  ``skin_band`` is
    ``(y_top, y_bottom)`` or None.  ``fluid_abc`` is ``"engquist_majda"`` or
    ``"bayliss_turkel"`` (which uses ``bt_radius``).
    """

    domain: tuple[float, float, float, float]
    interface_y: float
    fluid: FluidMaterial
    tissue: SolidMaterial
    skin: SolidMaterial | None = None
    skin_band: tuple[float, float] | None = None
    inclusions: tuple[InclusionSpec, ...] = ()
    sras: tuple[SraSpec, ...] = ()
    sources: tuple[tuple[float, float], ...] = ()
    nu0: float = 1.0e5
    t_final: float = 1.0e-4
    fluid_abc: str = "engquist_majda"
    bt_radius: float | None = None

    def __post_init__(self):
        x0, y0, x1, y1 = self.domain
        if not (x1 > x0 and y1 > y0):
            raise ValueError("domain must be a non-degenerate rectangle")
        if not (y0 < self.interface_y < y1):
            raise ValueError("interface_y must lie strictly inside the domain")
        if self.t_final <= 0:
            raise ValueError("t_final must be positive")
        if self.nu0 <= 0:
            raise ValueError("nu0 must be positive")
        if self.fluid_abc not in ("engquist_majda", "bayliss_turkel"):
            raise ValueError(f"unknown fluid ABC {self.fluid_abc!r}")
        if self.fluid_abc == "bayliss_turkel" and not (self.bt_radius and self.bt_radius > 0):
            raise ValueError("bayliss_turkel ABC needs a positive bt_radius")
        if self.skin_band is not None:
            top, bot = self.skin_band
            if self.skin is None:
                raise ValueError("skin_band given without a skin material")
            if not (y0 < bot < top <= self.interface_y):
                raise ValueError("skin band must lie inside the solid subdomain")
        for inc in self.inclusions:
            bx0, by0, bx1, by1 = inc.bounding_box()
            if not (x0 < bx0 and bx1 < x1 and y0 < by0 and by1 < self.solid_top):
                raise ValueError(f"inclusion at {inc.center} leaves the tissue region")
        for sra in self.sras:
            for p in (sra.start, sra.end):
                if not self._strictly_in_fluid(p):
                    raise ValueError(f"SRA end point {p} is not inside the fluid")
        for s in self.sources:
            if not self._strictly_in_fluid(s):
                raise ValueError(f"source {s} is not inside the fluid")

    def _strictly_in_fluid(self, p) -> bool:
        x0, _, x1, y1 = self.domain
        return x0 <= p[0] <= x1 and self.interface_y < p[1] <= y1

    @property
    def solid_top(self) -> float:
        """Upper edge of the tissue region (bottom of the skin if present)."""
        return self.skin_band[1] if self.skin_band is not None else self.interface_y

    @property
    def wavelength(self) -> float:
        """Fluid wavelength at the central frequency."""
        return derive_velocities(self.fluid)[0] / self.nu0

    @property
    def solid_box(self) -> tuple[float, float, float, float]:
        x0, y0, x1, _ = self.domain
        return x0, y0, x1, self.interface_y

    def materials(self) -> list[Material]:
        out: list[Material] = [self.fluid, self.tissue]
        if self.skin is not None and self.skin_band is not None:
            out.append(self.skin)
        out.extend(inc.material for inc in self.inclusions)
        return out

    def max_p_speed(self, with_inclusions: bool = True) -> float:
        mats = self.materials()
        if not with_inclusions:
            mats = mats[: len(mats) - len(self.inclusions)]
        return max(derive_velocities(m)[0] for m in mats)

    def without_inclusions(self) -> "SceneSpec":
        return replace(self, inclusions=())

    def mirrored(self) -> "SceneSpec":
        """Scene reflected about the vertical mid-line of the domain."""
        x0, _, x1, _ = self.domain

        def mx(p):
            return (x0 + x1 - p[0], p[1])

        incs = tuple(
            replace(i, center=mx(i.center), rotation=-i.rotation) for i in self.inclusions
        )
        sras = tuple(
            replace(s, start=mx(s.end), end=mx(s.start)) for s in self.sras
        )
        srcs = tuple(mx(s) for s in self.sources)
        return replace(self, inclusions=incs, sras=sras, sources=srcs)

    def region_codes(self, x, y, with_inclusions: bool = True) -> np.ndarray:
        """Vectorised region classification (see :func:`material_at`)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        code = np.where(y > self.interface_y, FLUID, TISSUE)
        if self.skin_band is not None:
            top, bot = self.skin_band
            code = np.where((y <= top) & (y >= bot), SKIN, code)
        if with_inclusions:
            for k, inc in enumerate(self.inclusions):
                inside = inc.contains(x, y) & (code == TISSUE)
                code = np.where(inside, INCLUSION + k, code)
        return code

    def material_of(self, code: int) -> Material:
        if code == FLUID:
            return self.fluid
        if code == SKIN:
            return self.skin
        if code == TISSUE:
            return self.tissue
        return self.inclusions[code - INCLUSION].material


def material_at(scene: SceneSpec, x, with_inclusions: bool = True) -> tuple[Material, str]:
    """Material and region name at point ``x``.

    With ``with_inclusions=False`` the background medium is returned, which
    is how the incident field and the reversed problem see the world.
    """
    x0, y0, x1, y1 = scene.domain
    px, py = float(x[0]), float(x[1])
    if not (x0 <= px <= x1 and y0 <= py <= y1):
        raise ValueError(f"point {x} lies outside the domain")
    code = int(scene.region_codes(px, py, with_inclusions))
    return scene.material_of(code), region_name(code)


@dataclass(frozen=True)
class InclusionLayout:
    """Placement of an inclusion in units of the fluid wavelength."""

    x: float
    depth: float
    diameters: tuple[float, float]
    material: str = "malignant"
    rotation: float = 0.0


def desk_scene(
    inclusions: Sequence[InclusionLayout] = (),
    *,
    nu0: float = 1.0e5,
    width: float = 10.0,
    height: float = 6.0,
    fluid_depth: float = 1.5,
    sra_standoff: float = 0.5,
    sra_extent: tuple[float, float] = (1.0, 9.0),
    receiver_count: int = 81,
    skin_thickness: float | None = 1.0 / 6.0,
    sources: Sequence[str] = ("middle",),
    t_final: float | None = None,
    extra_sras: Sequence[tuple[float, float, int]] = (),
) -> SceneSpec:
    """Breast-imaging scene laid out in wavelength units.

    Lengths are multiples of the fluid wavelength ``V_f / nu0``.  Inclusion
    ``x`` is measured from the left edge, ``depth`` below the interface.
    ``sources`` name elements of the first SRA (``left``/``middle``/``right``).
    ``extra_sras`` replaces the default array by several ``(x_start, x_end,
    count)`` probes.  The default horizon is the time for a wave to reach the
    bottom of the domain and come back, plus two Ricker periods.
    """
    presets = builtin_presets()
    fluid = presets["fluid"]
    lw = derive_velocities(fluid)[0] / nu0
    w, h = width * lw, height * lw
    y_int = h - fluid_depth * lw
    y_sra = h - sra_standoff * lw
    skin_band = None
    if skin_thickness:
        skin_band = (y_int, y_int - skin_thickness * lw)
    incs = tuple(
        InclusionSpec(
            center=(lay.x * lw, y_int - lay.depth * lw),
            semi_axes=(0.5 * lay.diameters[0] * lw, 0.5 * lay.diameters[1] * lw),
            material=presets[lay.material],
            rotation=lay.rotation,
        )
        for lay in inclusions
    )
    if extra_sras:
        sras = tuple(SraSpec((a * lw, y_sra), (b * lw, y_sra), n) for a, b, n in extra_sras)
    else:
        sras = (SraSpec((sra_extent[0] * lw, y_sra), (sra_extent[1] * lw, y_sra), receiver_count),)
    srcs = tuple(sras[0].element(s) for s in sources)
    if t_final is None:
        tissue_vp = derive_velocities(presets["tissue"])[0]
        one_way = (y_sra - y_int) / derive_velocities(fluid)[0] + y_int / tissue_vp
        t_final = 2 * one_way + 2.0 / nu0
    return SceneSpec(
        domain=(0.0, 0.0, w, h),
        interface_y=y_int,
        fluid=fluid,
        tissue=presets["tissue"],
        skin=presets["skin"] if skin_band else None,
        skin_band=skin_band,
        inclusions=incs,
        sras=sras,
        sources=srcs,
        nu0=nu0,
        t_final=t_final,
    )


def default_t_final(scene: SceneSpec) -> float:
    """Three times the longest source -> far corner -> SRA travel time."""
    x0, y0, x1, y1 = scene.domain
    corners = np.array([[x0, y0], [x1, y0], [x0, y1], [x1, y1]])
    rec = np.concatenate([s.receiver_points() for s in scene.sras]) if scene.sras else corners
    slowest = min(derive_velocities(m)[0] for m in scene.materials())
    worst = 0.0
    for src in scene.sources or [(0.5 * (x0 + x1), y1)]:
        d1 = np.hypot(*(corners - np.asarray(src)).T)
        for c, d in zip(corners, d1):
            d2 = np.hypot(*(rec - c).T).max()
            worst = max(worst, d + d2)
    return 3.0 * worst / slowest
