"""Finite-difference validation of every adjoint in the package.

The render checks freeze the importance-sampled directions of the base
parameters and re-evaluate the estimator at perturbed parameters on that
fixed sample set (common random numbers).  That is exactly the function the
detached-sampling backward pass differentiates, so agreement is expected at
FD truncation error, not Monte Carlo noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import volumetric
from .core import Camera, GBuffer, normalize, orthonormal_basis
from .lighting import LightField
from .render import RenderConfig, draw_frozen_samples, eval_frozen, render_backward


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def __str__(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.name}: max rel err {self.max_rel_err:.3e} (tol {self.tol:g})"


def _rel_err(fd: float, adj: float, scale: float) -> float:
    denom = max(abs(fd), abs(adj), scale)
    return abs(fd - adj) / denom


def check_render_material(g: GBuffer, camera: Camera, light: LightField,
                          cfg: RenderConfig, tol: float = 1e-4,
                          eps: float = 2e-6,
                          classes=("albedo", "roughness", "metallic", "normal"),
                          max_pixels: int | None = None) -> list[CheckResult]:
    """FD-vs-adjoint over every shadeable pixel for each material class."""
    fs = draw_frozen_samples(g, camera, cfg)
    grad = render_backward(g, camera, light, cfg, np.ones((*g.depth.shape, 3)))

    n_pix = fs.gy.size
    take = np.arange(n_pix if max_pixels is None else min(n_pix, max_pixels))

    def fd_pair(albedo, roughness, metallic, nrm):
        return eval_frozen(fs, albedo, roughness, metallic, nrm, light, cfg).sum(axis=1)

    base = fd_pair(g.albedo, g.roughness, g.metallic, g.normal)
    scale = max(1e-7, 1e-6 * float(np.abs(base).max()))

    results = []
    for cls in classes:
        errs = []
        for k in take:
            y, x = int(fs.gy[k]), int(fs.gx[k])
            if cls == "albedo":
                for ch in range(3):
                    ap = g.albedo.copy(); am = g.albedo.copy()
                    ap[y, x, ch] += eps; am[y, x, ch] -= eps
                    fd = (fd_pair(ap, g.roughness, g.metallic, g.normal)[k]
                          - fd_pair(am, g.roughness, g.metallic, g.normal)[k]) / (2 * eps)
                    errs.append(_rel_err(fd, grad.dalbedo[y, x, ch], scale))
            elif cls == "roughness":
                rp = g.roughness.copy(); rm = g.roughness.copy()
                rp[y, x] += eps; rm[y, x] -= eps
                fd = (fd_pair(g.albedo, rp, g.metallic, g.normal)[k]
                      - fd_pair(g.albedo, rm, g.metallic, g.normal)[k]) / (2 * eps)
                errs.append(_rel_err(fd, grad.droughness[y, x], scale))
            elif cls == "metallic":
                mp = g.metallic.copy(); mm = g.metallic.copy()
                mp[y, x] += eps; mm[y, x] -= eps
                fd = (fd_pair(g.albedo, g.roughness, mp, g.normal)[k]
                      - fd_pair(g.albedo, g.roughness, mm, g.normal)[k]) / (2 * eps)
                errs.append(_rel_err(fd, grad.dmetallic[y, x], scale))
            elif cls == "normal":
                n0 = g.normal[y, x]
                t1, t2 = orthonormal_basis(n0)
                for tv in (t1, t2):
                    npp = g.normal.copy(); nmm = g.normal.copy()
                    npp[y, x] = normalize(n0 + eps * tv)
                    nmm[y, x] = normalize(n0 - eps * tv)
                    fd = (fd_pair(g.albedo, g.roughness, g.metallic, npp)[k]
                          - fd_pair(g.albedo, g.roughness, g.metallic, nmm)[k]) / (2 * eps)
                    adj = float(grad.dnormal[y, x] @ tv)
                    errs.append(_rel_err(fd, adj, scale))
            else:
                raise ValueError(f"unknown material class {cls!r}")
        results.append(CheckResult(f"render/{cls}", float(np.max(errs)), tol))
    return results


def check_volume_weights(weights, cfg: volumetric.VolumeConfig, n_rays: int = 4,
                         n_components: int = 48, tol: float = 1e-4,
                         eps: float = 1e-5, seed: int = 11) -> CheckResult:
    """FD on a seeded subset of field weights through the volume renderer."""
    rng = np.random.default_rng(seed)
    p = rng.normal(0.0, 0.5, size=(n_rays, 3)) + np.array([0.0, 0.0, 2.0])
    d = normalize(rng.normal(size=(n_rays, 3)))
    dL = rng.normal(size=(n_rays, 3))
    ray_ids = np.arange(n_rays, dtype=np.uint64)

    adj = volumetric.volume_render_backward(weights, p, d, cfg, seed, ray_ids, dL)

    def objective(w):
        L = volumetric.volume_render_batch(w, p, d, cfg, seed, ray_ids)
        return float(np.sum(L * dL))

    comps = rng.choice(weights.flat.size, size=min(n_components, weights.flat.size),
                       replace=False)
    scale = max(1e-7, 1e-6 * float(np.abs(adj).max()))
    errs = []
    for c in comps:
        wp = weights.flat.copy(); wm = weights.flat.copy()
        wp[c] += eps; wm[c] -= eps
        fd = (objective(weights.copy_with(wp)) - objective(weights.copy_with(wm))) / (2 * eps)
        errs.append(_rel_err(fd, float(adj[c]), scale))
    return CheckResult("volume_render/weights", float(np.max(errs)), tol)


def check_hypernet(h: volumetric.HypernetParams, fg: np.ndarray,
                   n_components: int = 48, tol: float = 1e-4,
                   eps: float = 1e-6, seed: int = 5) -> CheckResult:
    """FD of the affine weight map w.r.t. the feature vector and its own
    parameters, against `hypernet_backward`."""
    rng = np.random.default_rng(seed)
    fg = np.asarray(fg, dtype=np.float64).ravel()
    p = h.bias.size
    dflat = rng.normal(size=p)
    dfg, dmat, dbias = volumetric.hypernet_backward(fg, h, dflat)

    def objective(fg_v, mat, bias):
        hh = volumetric.HypernetParams(h.feature_dim, h.target_dims, mat, bias)
        return float(volumetric.hypernet_forward(fg_v, hh).flat @ dflat)

    errs = []
    scale = 1e-6 * (1.0 + float(np.abs(dmat).max()))
    for c in rng.choice(fg.size, size=min(n_components // 3 + 1, fg.size), replace=False):
        fp = fg.copy(); fm = fg.copy()
        fp[c] += eps; fm[c] -= eps
        fd = (objective(fp, h.matrix, h.bias) - objective(fm, h.matrix, h.bias)) / (2 * eps)
        errs.append(_rel_err(fd, float(dfg[c]), scale))
    flat_m = h.matrix.ravel()
    for c in rng.choice(flat_m.size, size=min(n_components, flat_m.size), replace=False):
        mp = flat_m.copy(); mm = flat_m.copy()
        mp[c] += eps; mm[c] -= eps
        fd = (objective(fg, mp.reshape(h.matrix.shape), h.bias)
              - objective(fg, mm.reshape(h.matrix.shape), h.bias)) / (2 * eps)
        errs.append(_rel_err(fd, float(dmat.ravel()[c]), scale))
    for c in rng.choice(p, size=min(n_components // 3 + 1, p), replace=False):
        bp = h.bias.copy(); bm = h.bias.copy()
        bp[c] += eps; bm[c] -= eps
        fd = (objective(fg, h.matrix, bp) - objective(fg, h.matrix, bm)) / (2 * eps)
        errs.append(_rel_err(fd, float(dbias[c]), scale))
    return CheckResult("hypernet_forward/params", float(np.max(errs)), tol)


def check_light_params(g: GBuffer, camera: Camera, light: LightField,
                       cfg: RenderConfig, n_components: int = 12,
                       tol: float = 1e-4, eps: float = 1e-5,
                       seed: int = 3) -> CheckResult:
    """FD over the light field's own parameters through the frozen-sample
    estimator, against the adjoints routed by render_backward."""
    rng = np.random.default_rng(seed)
    fs = draw_frozen_samples(g, camera, cfg)
    grad = render_backward(g, camera, light, cfg, np.ones((*g.depth.shape, 3)),
                           want_light=True)

    base_params = light.get_params()

    def objective(vec):
        light.set_params(vec)
        try:
            vals = eval_frozen(fs, g.albedo, g.roughness, g.metallic, g.normal,
                               light, cfg)
        finally:
            light.set_params(base_params)
        return float(vals.sum())

    comps = rng.choice(base_params.size, size=min(n_components, base_params.size),
                       replace=False)
    scale = max(1e-7, 1e-6 * float(np.abs(grad.dlight).max()))
    errs = []
    for c in comps:
        vp = base_params.copy(); vm = base_params.copy()
        vp[c] += eps; vm[c] -= eps
        fd = (objective(vp) - objective(vm)) / (2 * eps)
        errs.append(_rel_err(fd, float(grad.dlight[c]), scale))
    return CheckResult("render/light-params", float(np.max(errs)), tol)
