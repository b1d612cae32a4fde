"""Differentiable re-rendering layer.

Per pixel the estimator draws N BRDF-importance-sampled directions, queries
the lighting oracle along each, and averages f * L * cos(theta) / pdf.
Invalid samples (below the horizon or back-facing half vectors) contribute
zero but still count in N.  The backward pass treats the sampled directions
and trace results as constants: gradients flow through the BRDF value, the
PDF, the cosine, and the light's own parameters, never through the discrete
sample locations.  All accumulation is float64 in a fixed chunk order, so
results are bit-identical at any thread count.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass

import numpy as np

from . import brdf
from .core import (Camera, ContractError, GBuffer, dot, normalize,
                   orthonormal_basis, unproject)
from .lighting import LightField
from .sampling import uniform_block

_CHUNK_LANES = 1 << 20


class RenderNanError(RuntimeError):
    """A pixel accumulator went non-finite; carries pixel diagnostics."""

    def __init__(self, pixel, detail=""):
        self.pixel = pixel
        super().__init__(f"non-finite radiance at pixel {pixel} {detail}")


@dataclass(frozen=True)
class RenderConfig:
    spp: int = 64
    seed: int = 0
    pdf_floor: float = 1e-6
    clamp_max: float | None = None   # biased preview knob; None = unbiased
    specular_scale: float = 1.0      # 0 forces pure Lambertian shading

    def __post_init__(self):
        if self.spp < 1:
            raise ContractError("spp must be >= 1")


@dataclass
class GradientImage:
    """Per-pixel adjoints of the rendered image; dnormal is tangent-plane
    projected.  dlight holds the lighting-parameter adjoint when requested."""

    dalbedo: np.ndarray     # (H, W, 3)
    droughness: np.ndarray  # (H, W)
    dmetallic: np.ndarray   # (H, W)
    dnormal: np.ndarray     # (H, W, 3)
    dlight: np.ndarray | None = None


def pixel_geometry(g: GBuffer, camera: Camera):
    """Surface points, eye vectors, and the shadeable-pixel mask."""
    h, w = g.depth.shape
    ys, xs = np.mgrid[0:h, 0:w]
    px = np.stack([xs, ys], axis=-1).astype(np.float64)
    valid = np.isfinite(g.depth) & (g.depth > 0)
    depth_safe = np.where(valid, g.depth, 1.0)
    points = unproject(camera, px, depth_safe)
    view = normalize(-points)
    valid &= dot(view, g.normal) > 1e-6
    return points, view, valid


_BLOCK_ROWS = 8


def _row_blocks(height: int):
    """Fixed row blocks, independent of the worker count, so accumulation
    order (and therefore every last bit) never depends on threading."""
    return [slice(y, min(y + _BLOCK_ROWS, height))
            for y in range(0, height, _BLOCK_ROWS)]


def _flatten_block(g, points, view, valid, rows):
    w = g.depth.shape[1]
    sel = (rows, slice(None))
    idx = np.nonzero(valid[sel])
    gy = idx[0] + rows.start
    gx = idx[1]
    pix_id = (gy * w + gx).astype(np.uint64)
    return {
        "gy": gy, "gx": gx, "pix_id": pix_id,
        "p": points[gy, gx], "v": view[gy, gx], "n": g.normal[gy, gx],
        "alb": g.albedo[gy, gx], "rough": g.roughness[gy, gx],
        "metal": g.metallic[gy, gx],
    }


def _sample_chunks(n_pix: int, spp: int):
    per = max(1, min(spp, _CHUNK_LANES // max(n_pix, 1)))
    s = 0
    while s < spp:
        yield s, min(s + per, spp)
        s += per


def _masked_radiance(light: LightField, p, d, mask):
    """Query the light only on live lanes; zero elsewhere."""
    out = np.zeros(mask.shape + (3,))
    if np.any(mask):
        out[mask] = light.radiance(p[mask], d[mask])
    return out


def render_block(g, camera, light, cfg, points, view, valid, rows) -> np.ndarray:
    blk = _flatten_block(g, points, view, valid, rows)
    h = rows.stop - rows.start
    w = g.depth.shape[1]
    out = np.zeros((h, w, 3))
    n_pix = blk["pix_id"].size
    if n_pix == 0:
        return out
    acc = np.zeros((n_pix, 3))
    for s0, s1 in _sample_chunks(n_pix, cfg.spp):
        ns = s1 - s0
        u = uniform_block(cfg.seed, blk["pix_id"][:, None],
                          np.arange(s0, s1, dtype=np.uint64)[None, :], 3)
        d, _, ok = brdf.sample_directions(
            blk["v"][:, None, :], blk["n"][:, None, :], blk["alb"][:, None, :],
            blk["rough"][:, None], blk["metal"][:, None], cfg.specular_scale, u)
        pdf = brdf.mixture_pdf(blk["v"][:, None, :], d, blk["n"][:, None, :],
                               blk["alb"][:, None, :], blk["rough"][:, None],
                               blk["metal"][:, None], cfg.specular_scale)
        ok &= pdf > 0
        f = brdf._eval_raw(blk["v"][:, None, :], d, blk["n"][:, None, :],
                           blk["alb"][:, None, :], blk["rough"][:, None],
                           blk["metal"][:, None], cfg.specular_scale)
        cos = np.maximum(dot(blk["n"][:, None, :], d), 0.0)
        p_rep = np.broadcast_to(blk["p"][:, None, :], (n_pix, ns, 3))
        radiance = _masked_radiance(light, p_rep, d, ok)
        if cfg.clamp_max is not None:
            radiance = np.minimum(radiance, cfg.clamp_max)
        q = np.where(ok, np.maximum(pdf, cfg.pdf_floor), 1.0)
        contrib = f * radiance * np.where(ok, cos / q, 0.0)[..., None]
        acc += contrib.sum(axis=1)
    acc /= cfg.spp
    if not np.all(np.isfinite(acc)):
        bad = int(np.nonzero(~np.isfinite(acc).all(axis=1))[0][0])
        raise RenderNanError((int(blk["gx"][bad]), int(blk["gy"][bad])))
    out[blk["gy"] - rows.start, blk["gx"]] = acc
    return out


def render_mc(g: GBuffer, camera: Camera, light: LightField, cfg: RenderConfig,
              threads: int = 1) -> np.ndarray:
    """Monte Carlo re-render; returns a float64 (H, W, 3) radiance image."""
    points, view, valid = pixel_geometry(g, camera)
    h, w = g.depth.shape
    image = np.zeros((h, w, 3))
    blocks = _row_blocks(h)
    if threads <= 1 or len(blocks) == 1:
        for rows in blocks:
            image[rows] = render_block(g, camera, light, cfg, points, view, valid, rows)
        return image
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as ex:
        futs = {ex.submit(render_block, g, camera, light, cfg, points, view,
                          valid, rows): rows for rows in blocks}
        for fut, rows in futs.items():
            image[rows] = fut.result()
    return image


def render_discretized(g: GBuffer, camera: Camera, light: LightField,
                       grid: tuple[int, int] = (16, 32),
                       specular_scale: float = 1.0) -> np.ndarray:
    """Fixed-quadrature baseline: cosine-weighted cell centers instead of
    random sampling.  Deterministic, and blind to lobes that fall between
    cell centers."""
    nt, nf = grid
    if nt < 2 or nf < 4:
        raise ContractError("discretized grid must be at least 2x4")
    points, view, valid = pixel_geometry(g, camera)
    h, w = g.depth.shape
    image = np.zeros((h, w, 3))

    u1 = (np.arange(nt) + 0.5) / nt
    u2 = (np.arange(nf) + 0.5) / nf
    uu1, uu2 = np.meshgrid(u1, u2, indexing="ij")
    m = nt * nf
    r = np.sqrt(uu1).ravel()
    phi = 2.0 * np.pi * uu2.ravel()
    z = np.sqrt(np.maximum(1.0 - uu1.ravel(), 0.0))
    local = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)

    idx = np.nonzero(valid)
    gy, gx = idx
    n_pix = gy.size
    if n_pix == 0:
        return image
    chunk = max(1, _CHUNK_LANES // m)
    acc = np.zeros((n_pix, 3))
    for a in range(0, n_pix, chunk):
        b = min(a + chunk, n_pix)
        n_v = g.normal[gy[a:b], gx[a:b]]
        t, bt = orthonormal_basis(n_v)
        d = (local[None, :, 0:1] * t[:, None, :] + local[None, :, 1:2] * bt[:, None, :]
             + local[None, :, 2:3] * n_v[:, None, :])
        f = brdf._eval_raw(view[gy[a:b], gx[a:b]][:, None, :], d, n_v[:, None, :],
                           g.albedo[gy[a:b], gx[a:b]][:, None, :],
                           g.roughness[gy[a:b], gx[a:b]][:, None],
                           g.metallic[gy[a:b], gx[a:b]][:, None], specular_scale)
        p_rep = np.broadcast_to(points[gy[a:b], gx[a:b]][:, None, :], d.shape)
        L = light.radiance(p_rep.reshape(-1, 3), d.reshape(-1, 3)).reshape(d.shape)
        acc[a:b] = (np.pi / m) * np.sum(f * L, axis=1)
    image[gy, gx] = acc
    return image


# ---------------------------------------------------------------------------
# adjoint (backward) pass


def _backward_block(g, camera, light, cfg, dI, points, view, valid, rows,
                    want_light: bool):
    blk = _flatten_block(g, points, view, valid, rows)
    h = rows.stop - rows.start
    w = g.depth.shape[1]
    out = {
        "dalbedo": np.zeros((h, w, 3)), "droughness": np.zeros((h, w)),
        "dmetallic": np.zeros((h, w)), "dnormal": np.zeros((h, w, 3)),
        "dlight": np.zeros(light.n_params) if want_light else None,
    }
    n_pix = blk["pix_id"].size
    if n_pix == 0:
        return out
    adj = dI[blk["gy"], blk["gx"]]  # (n_pix, 3)
    acc_a = np.zeros((n_pix, 3))
    acc_r = np.zeros(n_pix)
    acc_m = np.zeros(n_pix)
    acc_n = np.zeros((n_pix, 3))

    for s0, s1 in _sample_chunks(n_pix, cfg.spp):
        ns = s1 - s0
        u = uniform_block(cfg.seed, blk["pix_id"][:, None],
                          np.arange(s0, s1, dtype=np.uint64)[None, :], 3)
        d, _, ok = brdf.sample_directions(
            blk["v"][:, None, :], blk["n"][:, None, :], blk["alb"][:, None, :],
            blk["rough"][:, None], blk["metal"][:, None], cfg.specular_scale, u)
        parts = brdf.eval_pdf_with_partials(
            blk["v"][:, None, :], d, blk["n"][:, None, :], blk["alb"][:, None, :],
            blk["rough"][:, None], blk["metal"][:, None], cfg.specular_scale)
        pdf = parts["pdf"]
        ok &= pdf > 0
        cos = np.maximum(dot(blk["n"][:, None, :], d), 0.0)
        p_rep = np.broadcast_to(blk["p"][:, None, :], (n_pix, ns, 3))
        radiance = _masked_radiance(light, p_rep, d, ok)
        if cfg.clamp_max is not None:
            radiance = np.minimum(radiance, cfg.clamp_max)
        q = np.maximum(pdf, cfg.pdf_floor)
        live = (pdf > cfg.pdf_floor) & ok          # pdf-floor gates pdf gradients
        inv_q = np.where(ok, 1.0 / q, 0.0)
        cq = cos * inv_q                            # cos / q

        aL = adj[:, None, :] * radiance             # (n_pix, ns, 3)
        # sum_ch adj_ch f_ch L_ch cos / q^2  (shared factor of all pdf terms)
        s_pdf = np.where(live, np.sum(aL * parts["f"], axis=-1) * cq * inv_q, 0.0)

        # albedo partials are diagonal per channel
        ga = aL * parts["df_dA"] * cq[..., None]
        ga = np.where(ok[..., None], ga, 0.0) - s_pdf[..., None] * parts["dpdf_dA"]
        gr = np.where(ok, np.sum(aL * parts["df_dR"], axis=-1) * cq, 0.0) \
            - s_pdf * parts["dpdf_dR"]
        gm = np.where(ok, np.sum(aL * parts["df_dM"], axis=-1) * cq, 0.0) \
            - s_pdf * parts["dpdf_dM"]
        # n: through f, through cos, and through the pdf
        gn = np.einsum("psc,pscx->psx", aL * cq[..., None], parts["df_dn"])
        gn += (np.sum(aL * parts["f"], axis=-1) * inv_q)[..., None] * d
        gn = np.where(ok[..., None], gn, 0.0) - s_pdf[..., None] * parts["dpdf_dn"]

        acc_a += ga.sum(axis=1)
        acc_r += gr.sum(axis=1)
        acc_m += gm.sum(axis=1)
        acc_n += gn.sum(axis=1)

        if want_light and light.n_params:
            dL = adj[:, None, :] * parts["f"] * cq[..., None]
            if cfg.clamp_max is not None:
                dL = np.where(radiance < cfg.clamp_max, dL, 0.0)
            dL = np.where(ok[..., None], dL, 0.0) / cfg.spp
            mask = ok.reshape(-1)
            if np.any(mask):
                out["dlight"] += light.backprop(
                    p_rep.reshape(-1, 3)[mask], d.reshape(-1, 3)[mask],
                    dL.reshape(-1, 3)[mask])

    inv_n = 1.0 / cfg.spp
    acc_a *= inv_n
    acc_r *= inv_n
    acc_m *= inv_n
    acc_n *= inv_n
    # tangent-plane projection of the normal adjoint
    acc_n -= np.sum(acc_n * blk["n"], axis=-1, keepdims=True) * blk["n"]

    out["dalbedo"][blk["gy"] - rows.start, blk["gx"]] = acc_a
    out["droughness"][blk["gy"] - rows.start, blk["gx"]] = acc_r
    out["dmetallic"][blk["gy"] - rows.start, blk["gx"]] = acc_m
    out["dnormal"][blk["gy"] - rows.start, blk["gx"]] = acc_n
    return out


def render_backward(g: GBuffer, camera: Camera, light: LightField,
                    cfg: RenderConfig, dI: np.ndarray, threads: int = 1,
                    want_light: bool = False) -> GradientImage:
    """Adjoints of `render_mc` for the adjoint image dI (H, W, 3).

    Must be called with the same seed/config as the matching forward pass;
    a seed mismatch is undetectable and simply yields gradients of a
    different sample set.
    """
    dI = np.asarray(dI, dtype=np.float64)
    if not np.all(np.isfinite(dI)):
        raise ContractError("adjoint image must be finite")
    points, view, valid = pixel_geometry(g, camera)
    h, w = g.depth.shape
    if dI.shape != (h, w, 3):
        raise ContractError("adjoint image shape mismatch")
    grad = GradientImage(
        dalbedo=np.zeros((h, w, 3)), droughness=np.zeros((h, w)),
        dmetallic=np.zeros((h, w)), dnormal=np.zeros((h, w, 3)),
        dlight=np.zeros(light.n_params) if want_light else None)

    blocks = _row_blocks(h)

    def run(rows):
        return _backward_block(g, camera, light, cfg, dI, points, view, valid,
                               rows, want_light)

    if threads <= 1 or len(blocks) == 1:
        results = [run(rows) for rows in blocks]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, blocks))
    for rows, res in zip(blocks, results):  # fixed reduction order
        grad.dalbedo[rows] = res["dalbedo"]
        grad.droughness[rows] = res["droughness"]
        grad.dmetallic[rows] = res["dmetallic"]
        grad.dnormal[rows] = res["dnormal"]
        if want_light and res["dlight"] is not None:
            grad.dlight += res["dlight"]
    return grad


# ---------------------------------------------------------------------------
# frozen-sample evaluation (the estimator as a function of material params
# with the sample set held fixed) -- the FD side of gradient checks


@dataclass
class FrozenSamples:
    gy: np.ndarray
    gx: np.ndarray
    p: np.ndarray      # (n_pix, 3)
    v: np.ndarray      # (n_pix, 3)
    d: np.ndarray      # (n_pix, spp, 3)
    ok: np.ndarray     # (n_pix, spp)


def draw_frozen_samples(g: GBuffer, camera: Camera, cfg: RenderConfig) -> FrozenSamples:
    """Draw the base-parameter sample set once, for reuse at perturbed
    parameters (common random numbers with detached sample locations)."""
    points, view, valid = pixel_geometry(g, camera)
    h, w = g.depth.shape
    blk = _flatten_block(g, points, view, valid, slice(0, h))
    u = uniform_block(cfg.seed, blk["pix_id"][:, None],
                      np.arange(cfg.spp, dtype=np.uint64)[None, :], 3)
    d, _, ok = brdf.sample_directions(
        blk["v"][:, None, :], blk["n"][:, None, :], blk["alb"][:, None, :],
        blk["rough"][:, None], blk["metal"][:, None], cfg.specular_scale, u)
    return FrozenSamples(gy=blk["gy"], gx=blk["gx"], p=blk["p"], v=blk["v"],
                         d=d, ok=ok)


def eval_frozen(fs: FrozenSamples, albedo, roughness, metallic, normal,
                light: LightField, cfg: RenderConfig) -> np.ndarray:
    """Estimator value on the frozen sample set under (possibly perturbed)
    material maps; returns (H-flattened n_pix, 3) pixel values."""
    n_pix, spp = fs.ok.shape
    alb = np.asarray(albedo, dtype=np.float64)[fs.gy, fs.gx]
    rough = np.asarray(roughness, dtype=np.float64)[fs.gy, fs.gx]
    metal = np.asarray(metallic, dtype=np.float64)[fs.gy, fs.gx]
    nrm = np.asarray(normal, dtype=np.float64)[fs.gy, fs.gx]

    pdf = brdf.mixture_pdf(fs.v[:, None, :], fs.d, nrm[:, None, :],
                           alb[:, None, :], rough[:, None], metal[:, None],
                           cfg.specular_scale)
    ok = fs.ok & (pdf > 0)
    f = brdf._eval_raw(fs.v[:, None, :], fs.d, nrm[:, None, :], alb[:, None, :],
                       rough[:, None], metal[:, None], cfg.specular_scale)
    cos = np.maximum(dot(nrm[:, None, :], fs.d), 0.0)
    p_rep = np.broadcast_to(fs.p[:, None, :], (n_pix, spp, 3))
    radiance = _masked_radiance(light, p_rep, fs.d, ok)
    q = np.maximum(pdf, cfg.pdf_floor)
    contrib = np.where(ok[..., None], f * radiance * (cos / q)[..., None], 0.0)
    return contrib.sum(axis=1) / cfg.spp


# ---------------------------------------------------------------------------
# quadrature reference oracle


def reference_render(g: GBuffer, camera: Camera, light: LightField,
                     cells: tuple[int, int] = (64, 128),
                     specular_scale: float = 1.0, mode: str = "split") -> np.ndarray:
    """Deterministic quadrature of the shading integral, used as the ground
    truth the Monte Carlo and discretized estimators are judged against.

    mode "cosine": midpoint rule on a cosine-warped grid (exact for
    Lambertian under constant light, adequate for smooth integrands).
    mode "split": diffuse term on the cosine grid plus the microfacet term
    on an NDF-warped grid, which resolves sharp specular lobes.
    """
    points, view, valid = pixel_geometry(g, camera)
    h, w = g.depth.shape
    image = np.zeros((h, w, 3))
    nt, nf = cells
    u1 = (np.arange(nt) + 0.5) / nt
    u2 = (np.arange(nf) + 0.5) / nf
    uu1, uu2 = np.meshgrid(u1, u2, indexing="ij")
    uu1 = uu1.ravel()
    uu2 = uu2.ravel()
    m = uu1.size

    idx = np.nonzero(valid)
    gy, gx = idx
    n_pix = gy.size
    if n_pix == 0:
        return image

    r = np.sqrt(uu1)
    phi = 2.0 * np.pi * uu2
    cos_local = np.stack([r * np.cos(phi), r * np.sin(phi),
                          np.sqrt(np.maximum(1.0 - uu1, 0.0))], axis=-1)

    chunk = max(1, _CHUNK_LANES // m)
    acc = np.zeros((n_pix, 3))
    for a in range(0, n_pix, chunk):
        b = min(a + chunk, n_pix)
        n_v = g.normal[gy[a:b], gx[a:b]]
        v_v = view[gy[a:b], gx[a:b]]
        alb = g.albedo[gy[a:b], gx[a:b]]
        rg = g.roughness[gy[a:b], gx[a:b]]
        mt = g.metallic[gy[a:b], gx[a:b]]
        p_v = points[gy[a:b], gx[a:b]]
        t, bt = orthonormal_basis(n_v)

        d_cos = (cos_local[None, :, 0:1] * t[:, None, :]
                 + cos_local[None, :, 1:2] * bt[:, None, :]
                 + cos_local[None, :, 2:3] * n_v[:, None, :])
        p_rep = np.broadcast_to(p_v[:, None, :], d_cos.shape)
        L_cos = light.radiance(p_rep.reshape(-1, 3), d_cos.reshape(-1, 3)) \
            .reshape(d_cos.shape)

        if mode == "cosine":
            f = brdf._eval_raw(v_v[:, None, :], d_cos, n_v[:, None, :],
                               alb[:, None, :], rg[:, None], mt[:, None],
                               specular_scale)
            acc[a:b] = (np.pi / m) * np.sum(f * L_cos, axis=1)
            continue

        # diffuse term on the cosine grid: E[(1-Mt) A L]
        diff = (1.0 - mt)[:, None] * alb
        acc[a:b] = diff * np.mean(L_cos, axis=1)

        if specular_scale > 0:
            alpha = np.clip(rg, brdf.ROUGHNESS_FLOOR, 1.0) ** 2
            tan2 = (alpha[:, None] ** 2) * uu1[None, :] / np.maximum(1.0 - uu1[None, :], 1e-16)
            ch = 1.0 / np.sqrt(1.0 + tan2)
            sh = np.sqrt(np.maximum(1.0 - ch * ch, 0.0))
            h_vec = (sh[..., None] * np.cos(phi)[None, :, None] * t[:, None, :]
                     + sh[..., None] * np.sin(phi)[None, :, None] * bt[:, None, :]
                     + ch[..., None] * n_v[:, None, :])
            vh = dot(v_v[:, None, :], h_vec)
            d_spec = 2.0 * vh[..., None] * h_vec - v_v[:, None, :]
            cos_nd = dot(n_v[:, None, :], d_spec)
            ok = (vh > 1e-9) & (cos_nd > 0)
            cos_nv = dot(n_v[:, None, :], v_v[:, None, :])
            G = brdf.smith_g1(cos_nv, alpha[:, None]) * brdf.smith_g1(cos_nd, alpha[:, None])
            fres = brdf.fresnel_schlick(vh, brdf.f0_of(alb, mt)[:, None, :])
            # integrand / warp density = spec F G L cos_nd vh / (nv nd nh)
            weight = np.where(ok, specular_scale * G * vh
                              / np.maximum(cos_nv * ch, 1e-12), 0.0)
            L_spec = _masked_radiance(light, np.broadcast_to(
                p_v[:, None, :], d_spec.shape), d_spec, ok)
            acc[a:b] += np.mean(weight[..., None] * fres * L_spec, axis=1)

    image[gy, gx] = acc
    return image
