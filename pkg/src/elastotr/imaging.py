"""Reverse-time-migration images from reversed and incident solid movies.

An image is the zero-lag cross-correlation, over ``[0, T_f]``, of the
reversed field at reversed time ``t' = T_f - t`` with the incident field at
``t``.  Three pointwise products are available: the full velocity dot
product, the vertical velocity component only, and the divergence.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .forward import FieldMovie
from .scene import InclusionSpec

VARIANTS = ("full", "component_u2", "divergence")
CRITERIA = VARIANTS + ("percentage", "sum")


@dataclass
class ImageField:
    """Image values on the sampling grid, ``values[iy, ix]``.

    ``variant`` names the pointwise product the image was built from;
    ``criterion`` says what has been done with it since.
    """

    x: np.ndarray
    y: np.ndarray
    values: np.ndarray
    criterion: str
    variant: str
    provenance: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.y), len(self.x)):
            raise ValueError(f"image of shape {self.values.shape} does not match the "
                             f"({len(self.y)}, {len(self.x)}) grid")
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("image values must be finite")

    @property
    def origin(self) -> tuple[float, float]:
        return float(self.x[0]), float(self.y[0])

    @property
    def spacing(self) -> tuple[float, float]:
        return float(self.x[1] - self.x[0]), float(self.y[1] - self.y[0])

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y)

    def argmax(self) -> tuple[float, float]:
        iy, ix = np.unravel_index(np.argmax(self.values), self.values.shape)
        return float(self.x[ix]), float(self.y[iy])

    def max(self) -> float:
        return float(self.values.max())

    def same_grid(self, other: "ImageField") -> bool:
        return (self.values.shape == other.values.shape
                and np.allclose(self.x, other.x, rtol=1e-9, atol=0)
                and np.allclose(self.y, other.y, rtol=1e-9, atol=0))


def _product(a: np.ndarray, b: np.ndarray, variant: str) -> np.ndarray:
    """Pointwise product of two ``(..., 3, ny, nx)`` frame stacks."""
    if variant == "full":
        return a[..., 0, :, :] * b[..., 0, :, :] + a[..., 1, :, :] * b[..., 1, :, :]
    if variant == "component_u2":
        return a[..., 1, :, :] * b[..., 1, :, :]
    if variant == "divergence":
        return a[..., 2, :, :] * b[..., 2, :, :]
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def check_compatible(reversed_movie: FieldMovie, incident: FieldMovie) -> None:
    if not reversed_movie.same_grid(incident):
        raise ValueError("reversed and incident movies are sampled on different grids")
    a, b = reversed_movie.frame_interval, incident.frame_interval
    if abs(a - b) > 1e-9 * max(a, b):
        raise ValueError(f"frame intervals differ: {a:.9g} s vs {b:.9g} s")
    if reversed_movie.n_frames != incident.n_frames:
        raise ValueError(f"frame counts differ: {reversed_movie.n_frames} vs {incident.n_frames}")


def _incident_at(incident: FieldMovie, t: np.ndarray) -> np.ndarray:
    """Incident frames at times ``t`` by linear interpolation (zero before 0)."""
    s = t / incident.frame_interval
    last = incident.n_frames - 1
    i = np.clip(np.floor(s + 1e-9).astype(np.int64), 0, last)
    w = np.clip(s - i, 0.0, 1.0)
    w[np.abs(w) < 1e-9] = 0.0
    j = np.minimum(i + 1, last)
    w4 = w[:, None, None, None]
    out = (1.0 - w4) * incident.frames[i] + w4 * incident.frames[j]
    out[t < -1e-12 * incident.frame_interval] = 0.0
    return out


def rtm(reversed_movie: FieldMovie, incident: FieldMovie, variant: str = "component_u2",
        provenance: list | None = None) -> ImageField:
    """Rectangle-rule correlation ``sum_k q_R(t'_k) q_I(T_f - t'_k) dt_frame``."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    check_compatible(reversed_movie, incident)
    dtf = reversed_movie.frame_interval
    t_final = reversed_movie.t_final
    values = np.zeros(incident.shape)
    # chunk over frames to bound memory
    chunk = 64
    for start in range(0, reversed_movie.n_frames, chunk):
        idx = np.arange(start, min(start + chunk, reversed_movie.n_frames))
        inc = _incident_at(incident, t_final - idx * dtf)
        values += _product(reversed_movie.frames[idx], inc, variant).sum(axis=0)
    values *= dtf
    return ImageField(incident.x.copy(), incident.y.copy(), values, variant, variant,
                      list(provenance or []))


def incident_energy(incident: FieldMovie, variant: str) -> np.ndarray:
    """``sum_k |q_I(t_k)|^2 dt_frame`` at every grid point."""
    f = incident.frames
    return _product(f, f, variant).sum(axis=0) * incident.frame_interval


def rtm_percentage(image: ImageField, incident: FieldMovie) -> ImageField:
    """Image divided by the sup over the grid of the incident energy."""
    if image.criterion not in VARIANTS:
        raise ValueError("percentage normalisation applies to a raw correlation image")
    if image.values.shape != incident.shape:
        raise ValueError("image and incident movie grids differ")
    denom = float(incident_energy(incident, image.variant).max())
    if not denom > 0:
        raise ValueError("incident movie carries no energy; cannot normalise")
    prov = list(image.provenance) + [{"normalisation": denom}]
    return replace(image, values=image.values / denom, criterion="percentage", provenance=prov)


def _sum_images(images: list[ImageField], what: str) -> ImageField:
    if not images:
        raise ValueError(f"{what} needs at least one image")
    first = images[0]
    total = np.zeros_like(first.values)
    prov: list = []
    for im in images:
        if not first.same_grid(im):
            raise ValueError(f"{what}: images are sampled on different grids")
        if im.variant != first.variant:
            raise ValueError(f"{what}: images mix variants {first.variant!r} and {im.variant!r}")
        total += im.values
        prov.extend(im.provenance)
    return ImageField(first.x.copy(), first.y.copy(), total, "sum", first.variant, prov)


def rtm_sum(per_source_images: list[ImageField]) -> ImageField:
    """Pointwise sum over sources."""
    return _sum_images(list(per_source_images), "rtm_sum")


def aggregate_probes(per_sra_images: list[ImageField]) -> ImageField:
    """Pointwise sum over SRA placements."""
    return _sum_images(list(per_sra_images), "aggregate_probes")


@dataclass
class Peak:
    location: tuple[float, float]
    value: float
    prominence: float
    index: tuple[int, int]


@dataclass
class PeakReport:
    peaks: list[Peak]
    threshold: float
    threshold_fraction: float

    def __len__(self) -> int:
        return len(self.peaks)

    def locations(self) -> np.ndarray:
        return np.array([p.location for p in self.peaks]).reshape(-1, 2)


_NEIGHBOURS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _local_maxima(v: np.ndarray) -> np.ndarray:
    """Mask of points not below any 8-neighbour and above at least one.

    Ties with neighbours that come earlier in raster order are broken in
    their favour, so a two-point plateau yields a single maximum.
    """
    ny, nx = v.shape
    pad = np.full((ny + 2, nx + 2), -np.inf)
    pad[1:-1, 1:-1] = v
    ok = np.ones(v.shape, bool)
    above_one = np.zeros(v.shape, bool)
    for dy, dx in _NEIGHBOURS:
        nb = pad[1 + dy:1 + dy + ny, 1 + dx:1 + dx + nx]
        earlier = (dy, dx) < (0, 0)
        ok &= (v > nb) if earlier else (v >= nb)
        above_one |= (v > nb) & np.isfinite(nb)
    return ok & above_one


def _prominences(v: np.ndarray) -> dict:
    """Topographic prominence of every local maximum (8-connectivity).

    Points are flooded from the top down with a union-find; when two
    basins meet, the one with the lower summit gets its prominence from the
    current level.  The global summit's prominence is its height above the
    image minimum.
    """
    ny, nx = v.shape
    flat = v.ravel()
    order = np.argsort(-flat, kind="stable")
    parent = np.full(flat.size, -1, dtype=np.int64)
    summit = np.zeros(flat.size, dtype=np.int64)
    prom: dict = {}

    def find(a):
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    for p in order:
        parent[p] = p
        summit[p] = p
        y, x = divmod(int(p), nx)
        for dy, dx in _NEIGHBOURS:
            yy, xx = y + dy, x + dx
            if not (0 <= yy < ny and 0 <= xx < nx):
                continue
            q = yy * nx + xx
            if parent[q] < 0:
                continue
            ra, rb = find(p), find(q)
            if ra == rb:
                continue
            sa, sb = summit[ra], summit[rb]
            hi, lo = (sa, sb) if flat[sa] >= flat[sb] else (sb, sa)
            if lo != p:
                prom.setdefault(int(lo), float(flat[lo] - flat[p]))
            parent[rb] = ra
            summit[ra] = hi
    top = int(order[0])
    prom[top] = float(flat[top] - flat.min())
    return prom


def find_peaks(image: ImageField, threshold_fraction: float = 0.3) -> PeakReport:
    """Local maxima reaching ``threshold_fraction`` of the global maximum."""
    if not 0 < threshold_fraction < 1:
        raise ValueError("threshold_fraction must lie in (0, 1)")
    v = image.values
    gmax = float(v.max())
    threshold = threshold_fraction * gmax
    if gmax <= 0:
        return PeakReport([], threshold, threshold_fraction)
    mask = _local_maxima(v) & (v >= threshold)
    if not mask.any():
        return PeakReport([], threshold, threshold_fraction)
    prom = _prominences(v)
    peaks = []
    for iy, ix in zip(*np.nonzero(mask)):
        flat = int(iy) * v.shape[1] + int(ix)
        peaks.append(Peak((float(image.x[ix]), float(image.y[iy])), float(v[iy, ix]),
                          prom.get(flat, 0.0), (int(iy), int(ix))))
    peaks.sort(key=lambda p: -p.value)
    return PeakReport(peaks, threshold, threshold_fraction)


def region_peak(image: ImageField, inclusion: InclusionSpec, dilation: float) -> float:
    """Maximum of the image inside the inclusion ellipse dilated by ``dilation``."""
    X, Y = image.points()
    inside = inclusion.contains(X, Y, dilation)
    if not inside.any():
        raise ValueError("no grid point falls inside the dilated inclusion")
    return float(image.values[inside].max())
