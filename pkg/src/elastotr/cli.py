"""Command-line driver: ``elastotr {forward,reverse,image,pipeline,validate}``.

Every command that needs experiment settings takes ``--config run.ini``
(see :mod:`elastotr.config`).  Flags override the configuration file and
the ``ELASTOTR_THREADS`` / ``ELASTOTR_SEED`` environment variables.
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .config import ENV_SEED, ENV_THREADS, RunConfig, load_run_config, load_scene
from .formats import (Manifest, read_movie, read_traces, write_image_csv, write_image_pgm,
                      write_movie, write_peaks, write_traces)
from .imaging import VARIANTS, find_peaks, rtm, rtm_percentage, rtm_sum
from .pipeline import ExperimentResult, Pipeline, combine

log = logging.getLogger("elastotr")


class UsageError(Exception):
    pass


def _load(args) -> tuple[RunConfig, object, list]:
    if not args.config:
        raise UsageError("--config is required")
    cfg = load_run_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.noise_seed = args.seed
    if getattr(args, "threads", None) is not None:
        cfg.threads = args.threads
    if getattr(args, "output", None):
        cfg.output = Path(args.output)
    cfg.__post_init__()
    scene, experiments = load_scene(cfg.scene_path)
    if not experiments:
        raise ValueError(f"{cfg.scene_path}: no SRA with sources defined")
    return cfg, scene, experiments


def _pipeline(cfg: RunConfig, scene) -> Pipeline:
    lw = scene.wavelength
    return Pipeline(scene, h_forward=cfg.h_forward * lw, h_reverse=cfg.h_reverse * lw,
                    cfl=cfg.cfl, frame_stride=cfg.frame_stride, grid_spacing=cfg.grid_spacing * lw)


def _provenance(cfg: RunConfig, pl: Pipeline, **extra) -> dict:
    t = pl.timing
    out = {"seed": cfg.noise_seed, "coeff": cfg.noise_coeff, "h_forward": pl.h_forward,
           "h_reverse": pl.h_reverse, "dt_forward": t.dt_forward, "dt_reverse": t.dt_reverse,
           "frame_interval": t.frame_interval, "t_final": t.t_final}
    out.update(extra)
    return out


def _write_forward(pl: Pipeline, cfg: RunConfig, i: int, exp, manifest: Manifest):
    out = cfg.output
    products = pl.forward(exp)
    data = pl.noisy_data(products, cfg.noise_coeff, [cfg.noise_seed, i], cfg.noise_target)
    prov = _provenance(cfg, pl, experiment=i, sra=exp.sra,
                       source=f"{exp.source[0]!r}:{exp.source[1]!r}")
    for name, rec in (("total", products.total), ("incident", products.incident),
                      ("scattered", products.scattered), ("noisy", data)):
        p = out / f"traces_e{i}_{name}.csv"
        write_traces(rec, p)
        manifest.add(p, "forward", **prov)
    p = out / f"incident_e{i}.trim"
    write_movie(products.movie, p)
    manifest.add(p, "forward", **prov)
    return products, data


def cmd_forward(args) -> int:
    cfg, scene, experiments = _load(args)
    cfg.output.mkdir(parents=True, exist_ok=True)
    pl = _pipeline(cfg, scene)
    manifest = Manifest()
    for i, exp in enumerate(experiments):
        _write_forward(pl, cfg, i, exp, manifest)
    manifest.write(cfg.output / "manifest_forward.txt")
    return 0


def cmd_reverse(args) -> int:
    cfg, scene, experiments = _load(args)
    cfg.output.mkdir(parents=True, exist_ok=True)
    pl = _pipeline(cfg, scene)
    traces = read_traces(args.traces)
    if traces.kind not in ("scattered", "scattered_noisy"):
        log.warning("back-propagating traces of kind %r", traces.kind)
    movie = pl.reverse(traces, args.sra)
    default = cfg.output / (Path(args.traces).stem + "_reversed.trim")
    out = Path(args.movie) if args.movie else default
    write_movie(movie, out)
    m = Manifest()
    m.add(out, "reverse", **_provenance(cfg, pl, traces=args.traces, sra=args.sra))
    m.write(cfg.output / "manifest_reverse.txt")
    return 0


def _emit_image(image, stem: Path, threshold: float, manifest: Manifest | None = None, **prov):
    write_image_csv(image, stem.with_suffix(".csv"))
    write_image_pgm(image, stem.with_suffix(".pgm"))
    write_peaks(find_peaks(image, threshold), stem.with_suffix(".peaks.txt"))
    if manifest is not None:
        for suffix in (".csv", ".pgm", ".pgm.scale.txt", ".peaks.txt"):
            manifest.add(stem.with_suffix(suffix), "image", **prov)


def cmd_image(args) -> int:
    if len(args.incident) != len(args.reversed):
        raise UsageError("give one --incident movie per --reversed movie")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    variants = args.variant or ["component_u2"]
    pairs = [(read_movie(i), read_movie(r)) for i, r in zip(args.incident, args.reversed)]
    manifest = Manifest()
    for v in variants:
        pct = []
        for j, (inc, rev) in enumerate(pairs):
            im = rtm_percentage(rtm(rev, inc, v, [{"incident": args.incident[j]}]), inc)
            pct.append(im)
            _emit_image(im, out / f"image_{v}_s{j}", args.threshold, manifest, variant=v)
        if len(pct) > 1:
            _emit_image(rtm_sum(pct), out / f"image_{v}_sum", args.threshold, manifest, variant=v)
    manifest.write(out / "manifest_image.txt")
    return 0


def cmd_pipeline(args) -> int:
    cfg, scene, experiments = _load(args)
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest()
    try:
        pl = _pipeline(cfg, scene)
    except Exception as exc:  # mesh or timing setup failed
        manifest.add(cfg.scene_path, "setup", f"failed: {exc}")
        manifest.write(out / "manifest.txt")
        raise

    def one(job):
        i, exp = job
        prov = _provenance(cfg, pl, experiment=i, sra=exp.sra)
        try:
            products, data = _write_forward(pl, cfg, i, exp, manifest)
            rev = pl.reverse(data, exp.sra)
            p = out / f"reversed_e{i}.trim"
            write_movie(rev, p)
            manifest.add(p, "reverse", **prov)
            raw, pct = pl.images(rev, products.movie, cfg.variants,
                                 [{"experiment": i, "sra": exp.sra, "seed": cfg.noise_seed}])
            for v in cfg.variants:
                _emit_image(pct[v], out / f"image_{v}_e{i}", cfg.threshold, manifest, **prov)
            return ExperimentResult(exp, products, data, rev, raw, pct, [cfg.noise_seed, i])
        except Exception as exc:
            log.error("experiment %d failed: %s", i, exc)
            manifest.add(out / f"experiment_{i}", "pipeline", f"failed: {exc}", **prov)
            return None

    jobs = list(enumerate(experiments))
    if cfg.threads > 1 and len(jobs) > 1:
        # build shared operators before fanning out
        for which in ("total", "incident", "reverse")[0 if scene.inclusions else 1:]:
            pl.operators(which)
        with ThreadPoolExecutor(cfg.threads) as pool:
            done = list(pool.map(one, jobs))
    else:
        done = [one(j) for j in jobs]
    results = [r for r in done if r is not None]
    status = 0 if len(results) == len(done) else 1
    if results:
        combined = combine(results, cfg.variants)
        n_sra = len({r.experiment.sra for r in results})
        for v in cfg.variants:
            for k, im in combined.per_sra[v].items():
                _emit_image(im, out / f"image_{v}_sum_sra{k}", cfg.threshold, manifest,
                            **_provenance(cfg, pl, sra=k))
            if n_sra > 1:
                _emit_image(combined.aggregate[v], out / f"image_{v}_probes", cfg.threshold,
                            manifest, **_provenance(cfg, pl, sras=n_sra))
    manifest.write(out / "manifest.txt")
    return status


def cmd_validate(args) -> int:
    from .validation import run_suite

    rep = run_suite(quick=args.quick)
    for line in rep.lines():
        print(line)
    print("ALL CHECKS PASSED" if rep.passed else "SOME CHECKS FAILED")
    return 0 if rep.passed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="elastotr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="run configuration (INI)")
        sp.add_argument("--output", help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int, help=f"noise seed (overrides ${ENV_SEED})")
        sp.add_argument("--threads", type=int, help=f"worker count (overrides ${ENV_THREADS})")

    sp = sub.add_parser("forward", help="synthetic traces and incident movies")
    common(sp)
    sp.set_defaults(func=cmd_forward)

    sp = sub.add_parser("reverse", help="back-propagate a trace file")
    common(sp)
    sp.add_argument("--traces", required=True, help="trace CSV to reverse")
    sp.add_argument("--sra", type=int, default=0, help="index of the recording SRA")
    sp.add_argument("--movie", help="output movie path")
    sp.set_defaults(func=cmd_reverse)

    sp = sub.add_parser("image", help="RTM images from movie pairs")
    sp.add_argument("--incident", action="append", required=True, help="incident movie (repeat)")
    sp.add_argument("--reversed", action="append", required=True, help="reversed movie (repeat)")
    sp.add_argument("--variant", action="append", choices=VARIANTS)
    sp.add_argument("--threshold", type=float, default=0.3, help="peak threshold fraction")
    sp.add_argument("--output", required=True, help="output directory")
    sp.set_defaults(func=cmd_image)

    sp = sub.add_parser("pipeline", help="forward, noise, reverse and image for every experiment")
    common(sp)
    sp.set_defaults(func=cmd_pipeline)

    sp = sub.add_parser("validate", help="run the discretisation self-checks")
    sp.add_argument("--quick", action="store_true", help="shorter runs")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (OSError, ValueError) as exc:
        print(f"elastotr: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
