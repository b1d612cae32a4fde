"""Loss functions and the analysis-by-synthesis recovery loop.

`optimize` renders the current parameter guess, measures the image loss,
pulls its adjoint back through the render layer, and applies per-parameter
adaptive first-order updates (Adam-style, bias corrected), re-projecting
each map into its valid range after every step.  Fixed seeds make entire
runs reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Camera, ContractError, GBuffer, ImageBuffer, normalize
from .lighting import LightField
from .render import RenderConfig, render_backward, render_mc
from .sampling import derive_seed

PARAM_NAMES = ("albedo", "roughness", "metallic", "normal", "light")


def _as_image(x) -> np.ndarray:
    if isinstance(x, ImageBuffer):
        return x.data
    return np.asarray(x, dtype=np.float64)


def loss_rerender(pred, target):
    """Mean squared error over all pixels and channels, with its adjoint."""
    p = _as_image(pred)
    t = _as_image(target)
    if p.shape != t.shape:
        raise ContractError(f"loss shapes differ: {p.shape} vs {t.shape}")
    resid = p - t
    n = resid.size
    return float(np.mean(resid * resid)), 2.0 * resid / n


def loss_light_hdr(pred, gt):
    """log(1+x) L2 on HDR radiance batches, with the adjoint w.r.t. pred."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if np.any(p < 0) or np.any(g < 0):
        raise ContractError("HDR loss requires non-negative radiance")
    if p.shape != g.shape:
        raise ContractError(f"loss shapes differ: {p.shape} vs {g.shape}")
    diff = np.log1p(p) - np.log1p(g)
    n = diff.size
    return float(np.mean(diff * diff)), 2.0 * diff / ((1.0 + p) * n)


@dataclass
class AdamState:
    """Per-parameter adaptive moments with bias correction."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, x: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(x, dtype=np.float64),
                   v=np.zeros_like(x, dtype=np.float64))

    def step(self, grad: np.ndarray, lr: float) -> np.ndarray:
        """Return the update to subtract from the parameter."""
        grad = np.asarray(grad, dtype=np.float64)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mh = self.m / (1.0 - self.beta1 ** self.t)
        vh = self.v / (1.0 - self.beta2 ** self.t)
        return lr * mh / (np.sqrt(vh) + self.eps)


@dataclass(frozen=True)
class LossConfig:
    """Recovery settings.  `params` selects which maps to optimize.

    The per-map supervision weights (albedo/normal/material/depth) are
    accepted for config compatibility but drive no term here: those losses
    need pretrained feature networks and are out of scope."""

    iterations: int = 200
    step_size: float = 0.05
    params: tuple[str, ...] = ("albedo",)
    rerender_weight: float = 1.0       # weight of the image L2 term
    hdr_eps: float = 0.0               # reserved for HDR loss variants
    spp: int = 16
    seed: int = 0
    specular_scale: float = 1.0
    pdf_floor: float = 1e-6
    albedo_weight: float = 1.0
    normal_weight: float = 1.0
    material_weight: float = 1.0
    depth_weight: float = 1.0

    def __post_init__(self):
        if self.iterations < 0 or self.rerender_weight < 0:
            raise ContractError("invalid loss config")
        for p in self.params:
            if p not in PARAM_NAMES:
                raise ContractError(f"unknown parameter class {p!r}; "
                                    f"choose from {PARAM_NAMES}")


@dataclass
class OptimizeResult:
    gbuffer: GBuffer
    light_params: np.ndarray | None
    trace: list[dict] = field(default_factory=list)

    @property
    def losses(self) -> np.ndarray:
        return np.array([row["loss"] for row in self.trace])


def _reproject(g: GBuffer) -> None:
    np.clip(g.albedo, 0.0, 1.0, out=g.albedo)
    np.clip(g.roughness, 0.01, 1.0, out=g.roughness)
    np.clip(g.metallic, 0.0, 1.0, out=g.metallic)
    g.normal[...] = normalize(g.normal)


def _summaries(g: GBuffer, light: LightField, params) -> dict:
    out = {}
    if "albedo" in params:
        out["albedo_mean"] = float(g.albedo.mean())
    if "roughness" in params:
        out["roughness_mean"] = float(g.roughness.mean())
    if "metallic" in params:
        out["metallic_mean"] = float(g.metallic.mean())
    if "normal" in params:
        out["normal_dev"] = float(np.abs(g.normal - g.normal.mean(axis=(0, 1))).mean())
    if "light" in params:
        out["light_norm"] = float(np.linalg.norm(light.get_params()))
    return out


def optimize(g: GBuffer, camera: Camera, light: LightField, target,
             cfg: LossConfig, threads: int = 1) -> OptimizeResult:
    """Recover the selected parameter maps from a target image.

    The input GBuffer and light field are not modified; the recovered copies
    are returned together with the full loss trace.
    """
    target = _as_image(target)
    cur = g.copy()
    _reproject(cur)
    if "light" in cfg.params and light.n_params == 0:
        raise ContractError("selected light recovery but the light field "
                            "has no parameters")

    adams = {}
    if "albedo" in cfg.params:
        adams["albedo"] = AdamState.like(cur.albedo)
    if "roughness" in cfg.params:
        adams["roughness"] = AdamState.like(cur.roughness)
    if "metallic" in cfg.params:
        adams["metallic"] = AdamState.like(cur.metallic)
    if "normal" in cfg.params:
        adams["normal"] = AdamState.like(cur.normal)
    if "light" in cfg.params:
        adams["light"] = AdamState.like(light.get_params())

    trace: list[dict] = []
    for it in range(cfg.iterations):
        rcfg = RenderConfig(spp=cfg.spp, seed=derive_seed(cfg.seed, it),
                            pdf_floor=cfg.pdf_floor,
                            specular_scale=cfg.specular_scale)
        img = render_mc(cur, camera, light, rcfg, threads=threads)
        mse, dI = loss_rerender(img, target)
        loss = cfg.rerender_weight * mse
        if not np.isfinite(loss):
            raise ContractError(f"loss went non-finite at iteration {it}")
        grad = render_backward(cur, camera, light, rcfg,
                               cfg.rerender_weight * dI, threads=threads,
                               want_light="light" in cfg.params)

        if "albedo" in cfg.params:
            cur.albedo -= adams["albedo"].step(grad.dalbedo, cfg.step_size)
        if "roughness" in cfg.params:
            cur.roughness -= adams["roughness"].step(grad.droughness, cfg.step_size)
        if "metallic" in cfg.params:
            cur.metallic -= adams["metallic"].step(grad.dmetallic, cfg.step_size)
        if "normal" in cfg.params:
            cur.normal -= adams["normal"].step(grad.dnormal, cfg.step_size)
        if "light" in cfg.params:
            light.set_params(light.get_params()
                             - adams["light"].step(grad.dlight, cfg.step_size))
        _reproject(cur)

        row = {"iteration": it, "loss": loss}
        row.update(_summaries(cur, light, cfg.params))
        trace.append(row)

    return OptimizeResult(
        gbuffer=cur,
        light_params=light.get_params() if "light" in cfg.params else None,
        trace=trace)
