"""Command-line entry point.

Subcommands: render, gradcheck, make-scene, baseline-compare, optimize.
Exit codes: 0 success, 1 numerical failure, 2 input/usage error.
`SSDR_LOG` (quiet|info|debug) controls verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import gradcheck, io as ssdr_io, scenes
from .core import ContractError, luminance
from .inverse import LossConfig, loss_rerender, optimize
from .render import (RenderConfig, RenderNanError, reference_render,
                     render_discretized, render_mc)

log = logging.getLogger("ssdr")

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_INPUT = 2


class UsageError(ContractError):
    pass


def _setup_logging() -> None:
    level = {"quiet": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(os.environ.get("SSDR_LOG", "info").lower(),
                                         logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise UsageError(f"grid must look like 16x32, got {text!r}") from None


def load_validated_bundle(path) -> ssdr_io.Bundle:
    """Read a bundle and reject hard G-buffer violations (depth sentinels
    are informational: they mark pixels with no geometry)."""
    from ssdr.core import validate_gbuffer
    bundle = ssdr_io.read_bundle(path)
    report, _ = validate_gbuffer(bundle.gbuffer)
    hard = {k: v for k, v in report.counts.items() if "sentinel" not in k}
    if hard:
        raise UsageError(f"bundle failed validation: {report.summary()}")
    return bundle


def resolve_light(bundle: ssdr_io.Bundle, choice: str | None, seed: int = 0):
    """Pick the lighting oracle: the bundle's own spec, an analytic default,
    or the learned path (feature grid + decoder + volume weights)."""
    from .lighting import analytic_lightfield
    from .volumetric import BlendedLightField as _BLF

    spec = bundle.lighting_spec or {}
    spec_kind = spec.get("kind")
    if choice == "learned":
        if bundle.feature_grid is None or bundle.decoder_weights is None \
                or bundle.volume_weights is None:
            raise UsageError("learned lighting needs feature_grid, "
                             "decoder_weights and volume_weights in the bundle")
        return _BLF(bundle.feature_grid, bundle.gbuffer, bundle.camera,
                    bundle.decoder_weights, volume_weights=bundle.volume_weights,
                    seed=seed)
    if choice is None:
        if spec:
            return bundle.light_field()
        return analytic_lightfield("constant", value=[1.0, 1.0, 1.0])
    if choice == "grid":
        if spec_kind == "grid":
            return bundle.light_field()
        raise UsageError("bundle carries no grid light field")
    if choice == "constant":
        if spec_kind == "constant":
            return bundle.light_field()
        return analytic_lightfield("constant", value=[1.0, 1.0, 1.0])
    if choice == "sky":
        if spec_kind in ("sky", "sky-gradient", "sky_disc"):
            return bundle.light_field()
        return analytic_lightfield("sky", zenith=[1.2, 1.2, 1.4],
                                   horizon=[0.4, 0.38, 0.35])
    raise UsageError(f"unknown lighting choice {choice!r}")


def cmd_render(args) -> int:
    bundle = load_validated_bundle(args.bundle)
    light = resolve_light(bundle, args.lighting, seed=args.seed)
    cfg = RenderConfig(spp=args.spp, seed=args.seed,
                       specular_scale=bundle.specular_scale)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    image = render_mc(bundle.gbuffer, bundle.camera, light, cfg,
                      threads=args.threads)
    dt = time.perf_counter() - t0
    ssdr_io.write_pfm(out / "rerender.pfm", image)
    ssdr_io.write_png_preview(out / "rerender.png", image, exposure=args.exposure)
    stats = {"time_s": dt, "spp": args.spp, "seed": args.seed,
             "mean_luminance": float(luminance(image).mean())}
    (out / "stats.json").write_text(json.dumps(stats, indent=2))
    log.info("rendered %s in %.2fs, mean luminance %.5f", args.bundle, dt,
             stats["mean_luminance"])
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    bundle = load_validated_bundle(args.bundle)
    light = resolve_light(bundle, args.lighting, seed=args.seed)
    classes = [p.strip() for p in args.params.split(",") if p.strip()]
    name_map = {"a": "albedo", "r": "roughness", "m": "metallic", "n": "normal",
                "light": "light"}
    classes = [name_map.get(c, c) for c in classes]
    for c in classes:
        if c not in ("albedo", "roughness", "metallic", "normal", "light"):
            raise UsageError(f"unknown parameter class {c!r}")

    g = bundle.gbuffer
    h, w = g.depth.shape
    if h > args.patch or w > args.patch:  # gradcheck runs on a small patch
        y0 = (h - args.patch) // 2
        x0 = (w - args.patch) // 2
        from .core import GBuffer
        g = GBuffer(albedo=g.albedo[y0:y0 + args.patch, x0:x0 + args.patch],
                    normal=g.normal[y0:y0 + args.patch, x0:x0 + args.patch],
                    depth=g.depth[y0:y0 + args.patch, x0:x0 + args.patch],
                    roughness=g.roughness[y0:y0 + args.patch, x0:x0 + args.patch],
                    metallic=g.metallic[y0:y0 + args.patch, x0:x0 + args.patch])
        from .scenes import default_camera
        camera = default_camera(args.patch, args.patch)
    else:
        camera = bundle.camera

    cfg = RenderConfig(spp=args.spp, seed=args.seed,
                       specular_scale=bundle.specular_scale)
    material = [c for c in classes if c != "light"]
    results = []
    if material:
        results += gradcheck.check_render_material(g, camera, light, cfg,
                                                   tol=args.tol, classes=material)
    if "light" in classes:
        if light.n_params == 0:
            raise UsageError("selected light gradients but the light field "
                             "has no parameters")
        results.append(gradcheck.check_light_params(g, camera, light, cfg,
                                                    tol=args.tol))
    report = {r.name: {"max_rel_err": r.max_rel_err, "tol": r.tol,
                       "passed": r.passed} for r in results}
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "gradcheck.json").write_text(json.dumps(report, indent=2))
    for r in results:
        print(r)
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def cmd_make_scene(args) -> int:
    width = height = None
    if args.res:
        width, height = _parse_grid(args.res)
    path = scenes.bundle_for(args.kind, args.out, width, height)
    log.info("wrote %s bundle to %s", args.kind, path)
    return EXIT_OK


def cmd_baseline_compare(args) -> int:
    bundle = load_validated_bundle(args.bundle)
    light = resolve_light(bundle, args.lighting, seed=args.seed)
    grid = _parse_grid(args.grid)
    cfg = RenderConfig(spp=args.spp, seed=args.seed,
                       specular_scale=bundle.specular_scale)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    ref = reference_render(bundle.gbuffer, bundle.camera, light,
                           cells=(args.ref_cells, 2 * args.ref_cells),
                           specular_scale=bundle.specular_scale)
    mc = render_mc(bundle.gbuffer, bundle.camera, light, cfg, threads=args.threads)
    disc = render_discretized(bundle.gbuffer, bundle.camera, light, grid=grid,
                              specular_scale=bundle.specular_scale)
    mse_mc, _ = loss_rerender(mc, ref)
    mse_disc, _ = loss_rerender(disc, ref)

    ssdr_io.write_pfm(out / "reference.pfm", ref)
    ssdr_io.write_pfm(out / "mc.pfm", mc)
    ssdr_io.write_pfm(out / "discretized.pfm", disc)
    for name, img in (("reference", ref), ("mc", mc), ("discretized", disc)):
        ssdr_io.write_png_preview(out / f"{name}.png", img, exposure=args.exposure)
    (out / "compare.csv").write_text(
        "estimator,mse\n"
        f"mc_spp{args.spp},{mse_mc:.10g}\n"
        f"discretized_{grid[0]}x{grid[1]},{mse_disc:.10g}\n")
    log.info("MSE mc=%.3e discretized=%.3e (ratio %.2f)", mse_mc, mse_disc,
             mse_disc / mse_mc if mse_mc > 0 else float("inf"))
    return EXIT_OK


def cmd_optimize(args) -> int:
    bundle = load_validated_bundle(args.bundle)
    light = resolve_light(bundle, args.lighting, seed=args.seed)
    if args.target:
        target = ssdr_io.read_pfm(args.target).data
    elif bundle.target is not None:
        target = bundle.target.data
    else:
        raise UsageError("no target image: pass --target or add one to the bundle")

    name_map = {"a": "albedo", "r": "roughness", "m": "metallic", "n": "normal",
                "light": "light"}
    params = tuple(name_map.get(p.strip(), p.strip())
                   for p in args.params.split(",") if p.strip())
    cfg = LossConfig(iterations=args.iters, step_size=args.step, params=params,
                     spp=args.spp, seed=args.seed,
                     specular_scale=bundle.specular_scale)
    result = optimize(bundle.gbuffer, bundle.camera, light, target, cfg,
                      threads=args.threads)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    g = result.gbuffer
    ssdr_io.write_pfm(out / "albedo.pfm", g.albedo)
    ssdr_io.write_pfm(out / "normal.pfm", g.normal)
    ssdr_io.write_pfm(out / "roughness.pfm", g.roughness[:, :, None])
    ssdr_io.write_pfm(out / "metallic.pfm", g.metallic[:, :, None])
    ssdr_io.write_loss_trace(out / "loss.csv", result.trace)
    if result.light_params is not None:
        np.savetxt(out / "light_params.txt", result.light_params)
    if result.trace:
        log.info("loss %.4e -> %.4e over %d iterations",
                 result.trace[0]["loss"], result.trace[-1]["loss"], args.iters)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ssdr",
                                 description="screen-space differentiable "
                                             "Monte Carlo re-renderer")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, bundle=True):
        if bundle:
            p.add_argument("--bundle", required=True, help="bundle directory")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--lighting", default=None,
                       choices=["constant", "sky", "grid", "learned"])
        p.add_argument("--exposure", type=float, default=1.0)

    p = sub.add_parser("render", help="re-render a bundle")
    common(p)
    p.add_argument("--spp", type=int, default=64)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("gradcheck", help="finite-difference adjoint check")
    common(p)
    p.add_argument("--spp", type=int, default=64)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--params", default="a,r,m,n")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("make-scene", help="emit an analytic test bundle")
    p.add_argument("--kind", required=True,
                   choices=["two-plane", "cornell-like", "glossy-floor"])
    p.add_argument("--out", required=True)
    p.add_argument("--res", default=None, help="WxH, e.g. 64x64")
    p.set_defaults(fn=cmd_make_scene)

    p = sub.add_parser("baseline-compare",
                       help="Monte Carlo vs fixed-grid estimator vs quadrature")
    common(p)
    p.add_argument("--spp", type=int, default=256)
    p.add_argument("--grid", default="16x32")
    p.add_argument("--ref-cells", type=int, default=256,
                   help="theta cells of the reference quadrature")
    p.set_defaults(fn=cmd_baseline_compare)

    p = sub.add_parser("optimize", help="recover materials from a target image")
    common(p)
    p.add_argument("--target", default=None, help="target PFM (default: bundle)")
    p.add_argument("--params", default="a", help="comma list: a,r,m,n,light")
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--spp", type=int, default=16)
    p.add_argument("--step", type=float, default=0.05)
    p.set_defaults(fn=cmd_optimize)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except (UsageError, ssdr_io.BundleError, ssdr_io.ParseError) as e:
        log.error("%s", e)
        return EXIT_INPUT
    except ContractError as e:
        log.error("%s", e)
        return EXIT_INPUT
    except RenderNanError as e:
        log.error("%s", e)
        return EXIT_NUMERIC
    except FileNotFoundError as e:
        log.error("%s", e)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
