import numpy as np
import pytest

from elastotr.forward import FieldMovie, TraceRecord
from elastotr.formats import (Manifest, graymap_bytes, read_image_csv, read_movie, read_pgm,
                              read_traces, write_image_csv, write_image_pgm, write_movie,
                              write_peaks, write_traces)
from elastotr.imaging import ImageField, find_peaks


def test_traces_round_trip(tmp_path, rng):
    tr = TraceRecord(np.arange(7) * 1.3e-7, [4, 9, 2], rng.random((3, 2)),
                     rng.standard_normal((7, 3)) * 1e-3, "scattered_noisy")
    p = tmp_path / "t.csv"
    write_traces(tr, p)
    back = read_traces(p)
    assert np.array_equal(back.values, tr.values) and np.array_equal(back.times, tr.times)
    assert np.array_equal(back.coords, tr.coords) and np.array_equal(back.nodes, tr.nodes)
    assert back.kind == "scattered_noisy"


def test_traces_reject_garbage(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("hello\nworld\n")
    with pytest.raises(ValueError):
        read_traces(p)
    p.write_text("# kind=total nodes=0 1\ntime,0:0,1:0\n0,1\n")
    with pytest.raises(ValueError):
        read_traces(p)


def test_movie_round_trip(tmp_path, rng):
    mv = FieldMovie(np.linspace(0.1, 0.4, 4), np.linspace(-0.2, 0.0, 3),
                    rng.standard_normal((5, 3, 3, 4)), 4, 2.5e-7, 4e-6, "reversed")
    p = tmp_path / "m.trim"
    write_movie(mv, p)
    back = read_movie(p)
    assert np.array_equal(back.frames, mv.frames)
    assert np.allclose(back.x, mv.x, rtol=1e-15) and np.allclose(back.y, mv.y, rtol=1e-15)
    assert (back.stride, back.dt, back.t_final, back.kind) == (4, 2.5e-7, 4e-6, "reversed")
    assert p.read_bytes()[:4] == b"TRIM"


def test_movie_rejects_corruption(tmp_path, rng):
    mv = FieldMovie(np.linspace(0, 1, 2), np.linspace(0, 1, 2), rng.random((2, 3, 2, 2)), 1,
                    1.0, 1.0)
    p = tmp_path / "m.trim"
    write_movie(mv, p)
    raw = p.read_bytes()
    p.write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        read_movie(p)
    p.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        read_movie(p)
    p.write_bytes(raw[:10])
    with pytest.raises(ValueError):
        read_movie(p)


def _image(rng, ny=4, nx=6):
    return ImageField(np.linspace(0, 0.15, nx), np.linspace(0, 0.045, ny),
                      rng.standard_normal((ny, nx)), "percentage", "divergence")


def test_image_csv_round_trip(tmp_path, rng):
    im = _image(rng)
    p = tmp_path / "i.csv"
    write_image_csv(im, p)
    back = read_image_csv(p)
    assert np.array_equal(back.values, im.values)
    assert np.allclose(back.x, im.x, rtol=1e-15) and np.allclose(back.y, im.y, rtol=1e-15)
    assert (back.criterion, back.variant) == ("percentage", "divergence")
    assert "origin=0,0" in p.read_text().splitlines()[0]


def test_graymap_levels():
    g, lo, hi = graymap_bytes(np.array([[-1.0, 0.0], [1.0, 3.0]]))
    assert (lo, hi) == (-1.0, 3.0)
    assert np.array_equal(g, [[0, 64], [128, 255]])
    g, _, _ = graymap_bytes(np.full((2, 2), 5.0))
    assert not np.any(g)


def test_pgm_orientation_and_sidecar(tmp_path):
    v = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])  # bottom row first
    im = ImageField(np.arange(3.0), np.arange(2.0), v, "sum", "full")
    side = write_image_pgm(im, tmp_path / "a.pgm")
    px = read_pgm(tmp_path / "a.pgm")
    assert px.shape == (2, 3)
    assert np.array_equal(px[0], [255] * 3) and np.array_equal(px[1], [0] * 3)
    text = side.read_text()
    assert "min=0" in text and "max=1" in text and "criterion=sum" in text


def test_peaks_file(tmp_path):
    v = np.zeros((5, 5))
    v[2, 2] = 2.0
    im = ImageField(np.arange(5.0), np.arange(5.0), v, "full", "full")
    p = tmp_path / "p.txt"
    write_peaks(find_peaks(im), p)
    lines = p.read_text().splitlines()
    assert "count=1" in lines[0] and lines[1] == "x,y,value,prominence"
    assert lines[2] == "2,2,2,2"


def test_manifest_round_trip(tmp_path):
    m = Manifest()
    m.add(tmp_path / "a.csv", "forward", seed=3, dt=1.5e-7)
    assert not m.failed()
    m.add(tmp_path / "b.csv", "reverse", "failed: boom")
    assert m.failed()
    p = tmp_path / "manifest.txt"
    m.write(p)
    back = Manifest.read(p)
    assert len(back.entries) == 2
    assert back.entries[0][3] == {"seed": "3", "dt": "1.4999999999999999e-07"}
    assert back.failed()
