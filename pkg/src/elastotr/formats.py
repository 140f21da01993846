"""On-disk formats: traces, movies, images, peak reports and manifests.

All floating-point payloads are 64-bit little-endian; text numbers are
printed with 17 significant digits so files round-trip exactly.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .forward import FieldMovie, TraceRecord
from .imaging import ImageField, PeakReport

MOVIE_MAGIC = b"TRIM"
MOVIE_VERSION = 1
# magic, version, nx, ny, frames, stride, dt
_MOVIE_HEAD = struct.Struct("<4sqqqqqd")
# grid extent x0, x1, y0, y1, t_final, kind code
_MOVIE_EXT = struct.Struct("<dddddq")
_MOVIE_KINDS = ("incident", "reversed", "total")


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_traces(traces: TraceRecord, path) -> None:
    """CSV: a ``#`` metadata line, a header of receiver coordinates, then rows."""
    path = Path(path)
    head = ",".join(["time"] + [f"{_fmt(x)}:{_fmt(y)}" for x, y in traces.coords])
    meta = f"# kind={traces.kind} nodes=" + " ".join(str(int(n)) for n in traces.nodes)
    data = np.column_stack([traces.times, traces.values])
    with open(path, "w", newline="\n") as fh:
        fh.write(meta + "\n")
        fh.write(head + "\n")
        np.savetxt(fh, data, fmt="%.17g", delimiter=",")


def read_traces(path) -> TraceRecord:
    path = Path(path)
    with open(path) as fh:
        meta = fh.readline().strip()
        head = fh.readline().strip()
        if not meta.startswith("#") or not head.startswith("time"):
            raise ValueError(f"{path}: not a trace file")
        before, _, nodes_txt = meta[1:].partition("nodes=")
        kind = "total"
        for tok in before.split():
            if tok.startswith("kind="):
                kind = tok[5:]
        nodes = np.array([int(t) for t in nodes_txt.split()], dtype=np.int64)
        cols = head.split(",")[1:]
        coords = np.array([[float(a) for a in c.split(":")] for c in cols]).reshape(-1, 2)
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(cols) + 1:
        raise ValueError(f"{path}: rows have {data.shape[1]} columns, header has {len(cols) + 1}")
    if len(nodes) != len(cols):
        nodes = np.arange(len(cols))
    return TraceRecord(data[:, 0], nodes, coords, data[:, 1:], kind)


def write_movie(movie: FieldMovie, path) -> None:
    """Binary movie: fixed header, grid extension, frame-major float64 data."""
    ny, nx = movie.shape
    kind = _MOVIE_KINDS.index(movie.kind) if movie.kind in _MOVIE_KINDS else 0
    with open(path, "wb") as fh:
        fh.write(_MOVIE_HEAD.pack(MOVIE_MAGIC, MOVIE_VERSION, nx, ny, movie.n_frames,
                                  movie.stride, movie.dt))
        fh.write(_MOVIE_EXT.pack(movie.x[0], movie.x[-1], movie.y[0], movie.y[-1],
                                 movie.t_final, kind))
        fh.write(np.ascontiguousarray(movie.frames, dtype="<f8").tobytes())


def read_movie(path) -> FieldMovie:
    raw = Path(path).read_bytes()
    if len(raw) < _MOVIE_HEAD.size + _MOVIE_EXT.size:
        raise ValueError(f"{path}: truncated movie header")
    magic, version, nx, ny, frames, stride, dt = _MOVIE_HEAD.unpack_from(raw, 0)
    if magic != MOVIE_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != MOVIE_VERSION:
        raise ValueError(f"{path}: unsupported movie version {version}")
    x0, x1, y0, y1, t_final, kind = _MOVIE_EXT.unpack_from(raw, _MOVIE_HEAD.size)
    off = _MOVIE_HEAD.size + _MOVIE_EXT.size
    expect = frames * 3 * ny * nx * 8
    if len(raw) - off != expect:
        raise ValueError(f"{path}: payload has {len(raw) - off} bytes, expected {expect}")
    data = np.frombuffer(raw, dtype="<f8", offset=off).reshape(frames, 3, ny, nx).astype(float)
    return FieldMovie(np.linspace(x0, x1, nx), np.linspace(y0, y1, ny), data, int(stride),
                      float(dt), float(t_final), _MOVIE_KINDS[kind])


def write_image_csv(image: ImageField, path) -> None:
    """CSV matrix, bottom row first, after a metadata line."""
    (x0, y0), (dx, dy) = image.origin, image.spacing
    meta = (f"# criterion={image.criterion} variant={image.variant} "
            f"origin={_fmt(x0)},{_fmt(y0)} spacing={_fmt(dx)},{_fmt(dy)} "
            f"extent={_fmt(image.x[0])},{_fmt(image.x[-1])},{_fmt(image.y[0])},{_fmt(image.y[-1])} "
            f"nx={len(image.x)} ny={len(image.y)}")
    with open(path, "w", newline="\n") as fh:
        fh.write(meta + "\n")
        np.savetxt(fh, image.values, fmt="%.17g", delimiter=",")


def read_image_csv(path) -> ImageField:
    with open(path) as fh:
        meta = fh.readline().strip()
        if not meta.startswith("#"):
            raise ValueError(f"{path}: missing image metadata line")
        fields = dict(item.split("=", 1) for item in meta[1:].split())
        values = np.loadtxt(fh, delimiter=",", ndmin=2)
    nx, ny = int(fields["nx"]), int(fields["ny"])
    x0, x1, y0, y1 = (float(v) for v in fields["extent"].split(","))
    return ImageField(np.linspace(x0, x1, nx), np.linspace(y0, y1, ny), values.reshape(ny, nx),
                      fields["criterion"], fields["variant"])


def graymap_bytes(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    """8-bit levels with min -> 0 and max -> 255 (a flat image maps to 0)."""
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        g = np.rint((values - lo) / (hi - lo) * 255.0)
    else:
        g = np.zeros_like(values)
    return g.astype(np.uint8), lo, hi


def write_image_pgm(image: ImageField, path) -> Path:
    """Binary P5 graymap (top row = largest y) plus a ``.scale.txt`` sidecar."""
    path = Path(path)
    g, lo, hi = graymap_bytes(image.values)
    ny, nx = g.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(g[::-1]).tobytes())
    side = path.with_suffix(path.suffix + ".scale.txt")
    side.write_text(f"min={_fmt(lo)}\nmax={_fmt(hi)}\nlevels=255\n"
                    f"mapping=linear (value - min) / (max - min) * 255\n"
                    f"criterion={image.criterion}\nvariant={image.variant}\n")
    return side


def read_pgm(path) -> np.ndarray:
    """Pixel rows of a P5 file, top row first."""
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary graymap")
    nx, ny, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit graymaps are supported")
    return np.frombuffer(parts[4][: nx * ny], dtype=np.uint8).reshape(ny, nx)


def write_peaks(report: PeakReport, path) -> None:
    lines = [f"# threshold_fraction={_fmt(report.threshold_fraction)} "
             f"threshold={_fmt(report.threshold)} count={len(report.peaks)}",
             "x,y,value,prominence"]
    for p in report.peaks:
        lines.append(",".join(_fmt(v) for v in (*p.location, p.value, p.prominence)))
    Path(path).write_text("\n".join(lines) + "\n")


class Manifest:
    """Tab-separated list of produced files with stage, status and provenance."""

    def __init__(self):
        self.entries: list[tuple[str, str, str, dict]] = []

    def add(self, path, stage: str, status: str = "ok", **provenance) -> None:
        self.entries.append((str(path), stage, status, provenance))

    def failed(self) -> bool:
        return any(status != "ok" for _, _, status, _ in self.entries)

    def write(self, path) -> None:
        lines = ["# path\tstage\tstatus\tprovenance"]
        for p, stage, status, prov in self.entries:
            kv = " ".join(f"{k}={_fmt(v) if isinstance(v, float) else v}" for k, v in prov.items())
            lines.append(f"{p}\t{stage}\t{status}\t{kv}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path) -> "Manifest":
        m = cls()
        for line in Path(path).read_text().splitlines():
            if not line or line.startswith("#"):
                continue
            p, stage, status, kv = (line.split("\t") + [""] * 4)[:4]
            prov = dict(item.split("=", 1) for item in kv.split()) if kv else {}
            m.entries.append((p, stage, status, prov))
        return m
