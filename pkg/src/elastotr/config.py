"""INI files for scenes and runs.

Scene file (lengths in metres, or in fluid wavelengths with
``units = wavelength``)::

    [scene]
    units = wavelength
    domain = 0, 0, 10, 6
    interface_y = 4.5
    nu0 = 1e5
    t_final = 1.2e-4          ; optional, seconds
    fluid_abc = engquist_majda

    [fluid]
    preset = fluid            ; or rho = ..., lam = ...
    [tissue]
    preset = tissue
    [skin]
    preset = skin
    band = 4.5, 4.3333333     ; top, bottom

    [inclusion.1]
    center = 5, 2.5
    semi_axes = 0.4, 0.4
    rotation = 0
    preset = malignant        ; or rho/lam/mu

    [sra.1]
    start = 1, 5.5
    end = 9, 5.5
    receivers = 81
    sources = middle          ; left/middle/right and/or x:y points

Run file::

    [run]
    scene = scene.ini
    output = out
    threads = 1
    [mesh]
    h_forward = 0.1           ; wavelengths
    h_reverse = 0.08
    [time]
    cfl = 0.3
    frame_stride = 4
    [noise]
    coeff = 0.1
    seed = 1234
    target = scattered        ; or total
    [imaging]
    variants = component_u2
    grid_spacing = 0.1        ; wavelengths
    threshold = 0.3

Environment variables ``ELASTOTR_THREADS`` and ``ELASTOTR_SEED`` override
the file; command-line flags override both.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .imaging import VARIANTS
from .scene import (FluidMaterial, InclusionSpec, SceneSpec, SolidMaterial, SraSpec,
                    builtin_presets, default_t_final, derive_velocities)
from .stepper import DEFAULT_CFL

ENV_THREADS = "ELASTOTR_THREADS"
ENV_SEED = "ELASTOTR_SEED"


@dataclass(frozen=True)
class Experiment:
    """One illumination: a source position and the SRA that records it."""

    sra: int
    source: tuple[float, float]


def _floats(text: str, n: int | None = None) -> tuple[float, ...]:
    vals = tuple(float(t) for t in text.replace(";", ",").split(",") if t.strip())
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} numbers, got {text!r}")
    return vals


def _material(sec: configparser.SectionProxy, solid: bool):
    presets = builtin_presets()
    if "preset" in sec:
        name = sec["preset"].strip()
        if name not in presets:
            raise ValueError(f"unknown material preset {name!r}; known: {sorted(presets)}")
        m = presets[name]
    elif solid:
        m = SolidMaterial(float(sec["rho"]), float(sec["lam"]), float(sec["mu"]))
    else:
        m = FluidMaterial(float(sec["rho"]), float(sec["lam"]))
    if solid != isinstance(m, SolidMaterial):
        raise ValueError(f"section [{sec.name}] needs a {'solid' if solid else 'fluid'} material")
    return m


def _numbered(cp: configparser.ConfigParser, prefix: str) -> list[str]:
    names = [s for s in cp.sections() if s.split(".")[0] == prefix]
    return sorted(names, key=lambda s: int(s.split(".")[1]) if "." in s else 0)


def load_scene(path) -> tuple[SceneSpec, list[Experiment]]:
    """Parse a scene file into a scene and its list of experiments."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scene file {path} not found")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.read(path)
    if "scene" not in cp:
        raise ValueError(f"{path}: missing [scene] section")
    sc = cp["scene"]
    fluid = _material(cp["fluid"], solid=False) if "fluid" in cp else builtin_presets()["fluid"]
    nu0 = float(sc.get("nu0", "1e5"))
    units = sc.get("units", "m").strip()
    if units == "wavelength":
        scale = derive_velocities(fluid)[0] / nu0
    elif units == "m":
        scale = 1.0
    else:
        raise ValueError(f"{path}: units must be 'm' or 'wavelength'")

    def length(text, n=None):
        return tuple(v * scale for v in _floats(text, n))

    tissue = _material(cp["tissue"], solid=True) if "tissue" in cp else builtin_presets()["tissue"]
    skin = band = None
    if "skin" in cp:
        skin = _material(cp["skin"], solid=True)
        band = length(cp["skin"]["band"], 2)
    incs = []
    for name in _numbered(cp, "inclusion"):
        s = cp[name]
        incs.append(InclusionSpec(center=length(s["center"], 2),
                                  semi_axes=length(s["semi_axes"], 2),
                                  material=_material(s, solid=True),
                                  rotation=float(s.get("rotation", "0"))))
    sras = []
    experiments: list[Experiment] = []
    sources: list[tuple[float, float]] = []
    for k, name in enumerate(_numbered(cp, "sra")):
        s = cp[name]
        sra = SraSpec(length(s["start"], 2), length(s["end"], 2), int(s["receivers"]))
        sras.append(sra)
        for tok in s.get("sources", "middle").split(","):
            tok = tok.strip()
            if not tok:
                continue
            if tok in ("left", "middle", "right"):
                pt = sra.element(tok)
            else:
                pt = length(tok.replace(":", ","), 2)
            pt = (float(pt[0]), float(pt[1]))
            experiments.append(Experiment(k, pt))
            if pt not in sources:
                sources.append(pt)
    scene = SceneSpec(
        domain=length(sc["domain"], 4),
        interface_y=float(sc["interface_y"]) * scale,
        fluid=fluid, tissue=tissue, skin=skin, skin_band=band,
        inclusions=tuple(incs), sras=tuple(sras), sources=tuple(sources), nu0=nu0,
        fluid_abc=sc.get("fluid_abc", "engquist_majda").strip(),
        bt_radius=float(sc["bt_radius"]) * scale if "bt_radius" in sc else None,
    )
    if "t_final" in sc:
        t_final = float(sc["t_final"])
    else:
        t_final = default_t_final(scene)
    return replace(scene, t_final=t_final), experiments


def _mat_lines(m) -> list[str]:
    for name, p in builtin_presets().items():
        if p == m:
            return [f"preset = {name}"]
    lines = [f"rho = {m.rho!r}", f"lam = {m.lam!r}"]
    if isinstance(m, SolidMaterial):
        lines.append(f"mu = {m.mu!r}")
    return lines


def write_scene(scene: SceneSpec, experiments: list[Experiment], path) -> None:
    """Write a scene file (metres) that :func:`load_scene` reads back."""
    def pt(p):
        return f"{p[0]!r}, {p[1]!r}"

    out = ["[scene]", "units = m", f"domain = {', '.join(repr(float(v)) for v in scene.domain)}",
           f"interface_y = {scene.interface_y!r}", f"nu0 = {scene.nu0!r}",
           f"t_final = {scene.t_final!r}", f"fluid_abc = {scene.fluid_abc}"]
    if scene.bt_radius is not None:
        out.append(f"bt_radius = {scene.bt_radius!r}")
    out += ["", "[fluid]"] + _mat_lines(scene.fluid)
    out += ["", "[tissue]"] + _mat_lines(scene.tissue)
    if scene.skin is not None:
        out += ["", "[skin]"] + _mat_lines(scene.skin) + [f"band = {pt(scene.skin_band)}"]
    for k, inc in enumerate(scene.inclusions, 1):
        out += ["", f"[inclusion.{k}]", f"center = {pt(inc.center)}",
                f"semi_axes = {pt(inc.semi_axes)}", f"rotation = {inc.rotation!r}"]
        out += _mat_lines(inc.material)
    for k, sra in enumerate(scene.sras):
        srcs = [e.source for e in experiments if e.sra == k]
        out += ["", f"[sra.{k + 1}]", f"start = {pt(sra.start)}", f"end = {pt(sra.end)}",
                f"receivers = {sra.receiver_count}",
                "sources = " + ", ".join(f"{s[0]!r}:{s[1]!r}" for s in srcs)]
    Path(path).write_text("\n".join(out) + "\n")


@dataclass
class RunConfig:
    scene_path: Path
    output: Path = Path("out")
    h_forward: float = 0.1
    h_reverse: float = 0.08
    cfl: float = DEFAULT_CFL
    frame_stride: int = 4
    noise_coeff: float = 0.10
    noise_seed: int = 1234
    noise_target: str = "scattered"
    variants: tuple[str, ...] = ("component_u2",)
    grid_spacing: float = 0.1
    threshold: float = 0.3
    threads: int = 1
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.h_forward > 0 and self.h_reverse > 0):
            raise ValueError("mesh sizes must be positive")
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")
        if self.frame_stride < 1:
            raise ValueError("frame_stride must be >= 1")
        if self.noise_coeff < 0:
            raise ValueError("noise coeff must be non-negative")
        if self.noise_target not in ("scattered", "total"):
            raise ValueError("noise target must be 'scattered' or 'total'")
        for v in self.variants:
            if v not in VARIANTS:
                raise ValueError(f"unknown imaging variant {v!r}; expected one of {VARIANTS}")
        if not 0 < self.threshold < 1:
            raise ValueError("peak threshold must lie in (0, 1)")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.grid_spacing <= 0:
            raise ValueError("grid spacing must be positive")


def load_run_config(path, env=None) -> RunConfig:
    """Read a run file, resolving the scene path relative to it."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"run configuration {path} not found")
    env = os.environ if env is None else env
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.read(path)
    get = lambda sec, key, default: cp.get(sec, key, fallback=default)  # noqa: E731
    if not cp.has_option("run", "scene"):
        raise ValueError(f"{path}: [run] scene is required")
    scene = Path(get("run", "scene", ""))
    if not scene.is_absolute():
        scene = path.parent / scene
    output = Path(get("run", "output", "out"))
    if not output.is_absolute():
        output = path.parent / output
    cfg = RunConfig(
        scene_path=scene,
        output=output,
        h_forward=float(get("mesh", "h_forward", "0.1")),
        h_reverse=float(get("mesh", "h_reverse", "0.08")),
        cfl=float(get("time", "cfl", str(DEFAULT_CFL))),
        frame_stride=int(get("time", "frame_stride", "4")),
        noise_coeff=float(get("noise", "coeff", "0.1")),
        noise_seed=int(get("noise", "seed", "1234")),
        noise_target=get("noise", "target", "scattered").strip(),
        variants=tuple(v.strip() for v in get("imaging", "variants", "component_u2").split(",")
                       if v.strip()),
        grid_spacing=float(get("imaging", "grid_spacing", "0.1")),
        threshold=float(get("imaging", "threshold", "0.3")),
        threads=int(get("run", "threads", "1")),
    )
    return apply_env(cfg, env)


def apply_env(cfg: RunConfig, env) -> RunConfig:
    if env.get(ENV_THREADS):
        cfg.threads = int(env[ENV_THREADS])
    if env.get(ENV_SEED):
        cfg.noise_seed = int(env[ENV_SEED])
    cfg.__post_init__()
    return cfg
