"""In-view lighting: positional encoding, feature grids, analytic light
fields for oracle tests, and the traced radiance decoder.

Direction convention: the light direction `d` always points from the shaded
point `p` toward the source, so the screen-space trace marches along +d and
volume marching steps p + t*d.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mlp, ssrt
from .core import Camera, ContractError, GBuffer, as_rgb, normalize
from .mlp import MlpWeights


@dataclass(frozen=True)
class PosEncConfig:
    bands: int
    include_input: bool = True

    def __post_init__(self):
        if self.bands < 1:
            raise ContractError("need at least one frequency band")

    def out_dim(self, in_dim: int) -> int:
        return in_dim * (2 * self.bands + int(self.include_input))


def positional_encoding(x: np.ndarray, cfg: PosEncConfig) -> np.ndarray:
    """Sinusoidal lift, component-major: per input component
    [x?, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(...)]."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ContractError("positional encoding requires finite input")
    freqs = (2.0 ** np.arange(cfg.bands)) * np.pi
    ang = x[..., None] * freqs                      # (..., D, L)
    sc = np.stack([np.sin(ang), np.cos(ang)], axis=-1)  # (..., D, L, 2)
    feats = sc.reshape(*sc.shape[:-2], 2 * cfg.bands)
    if cfg.include_input:
        feats = np.concatenate([x[..., None], feats], axis=-1)
    return feats.reshape(*x.shape[:-1], x.shape[-1] * feats.shape[-1])


@dataclass
class FeatureGrid:
    """Multi-channel image sampled bilinearly; nodes sit at integer pixel
    coordinates, so sampling at an integer position returns the stored value
    exactly."""

    data: np.ndarray  # (H, W, C)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ContractError("feature grid must be (H, W, C)")
        if not np.all(np.isfinite(self.data)):
            raise ContractError("feature grid contains non-finite values")

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def sample(self, px: np.ndarray) -> np.ndarray:
        """Bilinear sample at continuous pixel coords (N, 2), clamped."""
        px = np.atleast_2d(np.asarray(px, dtype=np.float64))
        h, w, _ = self.data.shape
        x = np.clip(px[:, 0], 0.0, w - 1.0)
        y = np.clip(px[:, 1], 0.0, h - 1.0)
        x0 = np.clip(np.floor(x).astype(np.int64), 0, w - 1)
        y0 = np.clip(np.floor(y).astype(np.int64), 0, h - 1)
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        fx = (x - x0)[:, None]
        fy = (y - y0)[:, None]
        top = self.data[y0, x0] * (1 - fx) + self.data[y0, x1] * fx
        bot = self.data[y1, x0] * (1 - fx) + self.data[y1, x1] * fx
        return top * (1 - fy) + bot * fy


# ---------------------------------------------------------------------------
# light field oracles


class LightField:
    """Queryable incident radiance: radiance(p, d) with d toward the source.

    Parameterized fields additionally expose a flat parameter vector and a
    backprop hook so the render adjoint can route gradients into them.
    """

    n_params: int = 0

    def radiance(self, p: np.ndarray, d: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def query(self, p, d):
        """Radiance plus a confidence tag in [0, 1] (1 = exact oracle)."""
        L = self.radiance(p, d)
        return L, np.ones(L.shape[:-1])

    def get_params(self) -> np.ndarray:
        return np.zeros(0)

    def set_params(self, vec: np.ndarray) -> None:
        if np.asarray(vec).size:
            raise ContractError("light field has no parameters")

    def backprop(self, p, d, dL) -> np.ndarray:
        return np.zeros(self.n_params)


class ConstantLight(LightField):
    """L(p, d) = value everywhere; parameterized by its RGB value."""

    n_params = 3

    def __init__(self, value):
        self.value = as_rgb(value).astype(np.float64)

    def radiance(self, p, d):
        n = np.atleast_2d(d).shape[0]
        return np.broadcast_to(self.value, (n, 3)).copy()

    def get_params(self):
        return self.value.copy()

    def set_params(self, vec):
        self.value = np.asarray(vec, dtype=np.float64).reshape(3).copy()

    def backprop(self, p, d, dL):
        return np.asarray(dL, dtype=np.float64).reshape(-1, 3).sum(axis=0)


class SkyGradientLight(LightField):
    """Direction-only field blending horizon to zenith color with d.up."""

    n_params = 6

    def __init__(self, zenith, horizon, up=(0.0, -1.0, 0.0)):
        self.zenith = as_rgb(zenith).astype(np.float64)
        self.horizon = as_rgb(horizon).astype(np.float64)
        self.up = normalize(np.asarray(up, dtype=np.float64))

    def _t(self, d):
        d = np.atleast_2d(np.asarray(d, dtype=np.float64))
        return np.clip(d @ self.up, 0.0, 1.0)

    def radiance(self, p, d):
        t = self._t(d)[:, None]
        return self.horizon * (1.0 - t) + self.zenith * t

    def get_params(self):
        return np.concatenate([self.zenith, self.horizon])

    def set_params(self, vec):
        vec = np.asarray(vec, dtype=np.float64).reshape(6)
        self.zenith = vec[:3].copy()
        self.horizon = vec[3:].copy()

    def backprop(self, p, d, dL):
        t = self._t(d)[:, None]
        dL = np.asarray(dL, dtype=np.float64).reshape(-1, 3)
        return np.concatenate([(dL * t).sum(axis=0), (dL * (1.0 - t)).sum(axis=0)])


class SkyDiscLight(SkyGradientLight):
    """Sky gradient plus a compact bright source: a smooth angular disc."""

    n_params = 0

    def __init__(self, zenith, horizon, disc_direction, disc_radius, disc_color,
                 up=(0.0, -1.0, 0.0)):
        super().__init__(zenith, horizon, up)
        self.disc_direction = normalize(np.asarray(disc_direction, dtype=np.float64))
        self.disc_radius = float(disc_radius)
        self.disc_color = as_rgb(disc_color).astype(np.float64)

    def radiance(self, p, d):
        base = super().radiance(p, d)
        d = np.atleast_2d(np.asarray(d, dtype=np.float64))
        c = d @ self.disc_direction
        cos_in = np.cos(self.disc_radius)
        cos_out = np.cos(1.5 * self.disc_radius)
        w = np.clip((c - cos_out) / (cos_in - cos_out), 0.0, 1.0)
        w = w * w * (3.0 - 2.0 * w)
        return base + w[:, None] * self.disc_color

    def get_params(self):
        return np.zeros(0)

    def set_params(self, vec):
        if np.asarray(vec).size:
            raise ContractError("disc light is not parameterized")

    def backprop(self, p, d, dL):
        return np.zeros(0)


class GridLight(LightField):
    """5D sampled radiance field over (x, y, z, theta, phi).

    values: (nx, ny, nz, ntheta, nphi, 3); positions interpolate trilinearly
    inside `bounds` (2, 3); directions bilinearly with theta = polar angle
    from +z in [0, pi] and phi = atan2(y, x) wrapped to [0, 2pi).
    """

    def __init__(self, values: np.ndarray, bounds: np.ndarray):
        self.values = np.asarray(values, dtype=np.float64)
        self.bounds = np.asarray(bounds, dtype=np.float64).reshape(2, 3)
        if self.values.ndim != 6 or self.values.shape[-1] != 3:
            raise ContractError("grid light values must be (nx,ny,nz,nt,np,3)")
        if not np.all(np.isfinite(self.values)):
            raise ContractError("grid light contains non-finite values")

    def _axis_coords(self, x, lo, hi, n):
        if n == 1:
            return np.zeros_like(x), np.zeros_like(x, dtype=np.int64)
        t = np.clip((x - lo) / max(hi - lo, 1e-30), 0.0, 1.0) * (n - 1)
        i0 = np.clip(np.floor(t).astype(np.int64), 0, n - 2)
        return t - i0, i0

    def radiance(self, p, d):
        p = np.atleast_2d(np.asarray(p, dtype=np.float64))
        d = np.atleast_2d(np.asarray(d, dtype=np.float64))
        nx, ny, nz, nt, nph, _ = self.values.shape

        fr, ir = [], []
        for ax in range(3):
            f, i = self._axis_coords(p[:, ax], self.bounds[0, ax], self.bounds[1, ax],
                                     self.values.shape[ax])
            fr.append(f)
            ir.append(i)

        theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
        ft, it = self._axis_coords(theta, 0.0, np.pi, nt)
        phi = np.mod(np.arctan2(d[:, 1], d[:, 0]), 2.0 * np.pi)
        if nph == 1:
            fp = np.zeros_like(phi)
            ip0 = np.zeros_like(phi, dtype=np.int64)
            ip1 = ip0
        else:
            tp = phi / (2.0 * np.pi) * nph
            ip0 = np.floor(tp).astype(np.int64) % nph
            fp = tp - np.floor(tp)
            ip1 = (ip0 + 1) % nph

        out = np.zeros((p.shape[0], 3))
        for bx in (0, 1):
            for by in (0, 1):
                for bz in (0, 1):
                    for bt in (0, 1):
                        for bp in (0, 1):
                            wx = fr[0] if bx else 1.0 - fr[0]
                            wy = fr[1] if by else 1.0 - fr[1]
                            wz = fr[2] if bz else 1.0 - fr[2]
                            wt = ft if bt else 1.0 - ft
                            wp = fp if bp else 1.0 - fp
                            w = wx * wy * wz * wt * wp
                            if not np.any(w):
                                continue
                            ix = np.minimum(ir[0] + bx, nx - 1)
                            iy = np.minimum(ir[1] + by, ny - 1)
                            iz = np.minimum(ir[2] + bz, nz - 1)
                            itt = np.minimum(it + bt, nt - 1)
                            ipp = ip1 if bp else ip0
                            out += w[:, None] * self.values[ix, iy, iz, itt, ipp]
        return out

    def node_position(self, idx) -> tuple[np.ndarray, np.ndarray]:
        """(position, direction) of grid node (ix,iy,iz,it,ip); test helper."""
        ix, iy, iz, it, ip = idx
        shape = self.values.shape
        pos = np.empty(3)
        for ax, i in enumerate((ix, iy, iz)):
            n = shape[ax]
            t = 0.0 if n == 1 else i / (n - 1)
            pos[ax] = self.bounds[0, ax] + t * (self.bounds[1, ax] - self.bounds[0, ax])
        theta = 0.0 if shape[3] == 1 else it / (shape[3] - 1) * np.pi
        phi = 0.0 if shape[4] == 1 else ip / shape[4] * 2.0 * np.pi
        st = np.sin(theta)
        return pos, np.array([st * np.cos(phi), st * np.sin(phi), np.cos(theta)])


def analytic_lightfield(kind: str, **params) -> LightField:
    """Factory for the oracle light fields used in tests and the CLI."""
    if kind == "constant":
        return ConstantLight(params["value"])
    if kind in ("sky", "sky-gradient"):
        return SkyGradientLight(params["zenith"], params["horizon"],
                                params.get("up", (0.0, -1.0, 0.0)))
    if kind == "sky_disc":
        return SkyDiscLight(params["zenith"], params["horizon"],
                            params["disc_direction"], params["disc_radius"],
                            params["disc_color"], params.get("up", (0.0, -1.0, 0.0)))
    if kind == "grid":
        if "values" in params:
            return GridLight(params["values"], params["bounds"])
        from . import io as ssdr_io
        return ssdr_io.read_grid_light(params["path"])
    raise ContractError(f"unknown light field kind {kind!r}")


# ---------------------------------------------------------------------------
# traced in-view radiance decoding


@dataclass(frozen=True)
class TracedLightConfig:
    direction_bands: int = 6
    ssrt: ssrt.SsrtConfig = field(default_factory=ssrt.SsrtConfig)


def decoder_input_dim(feature_channels: int, direction_bands: int = 6) -> int:
    # encoded direction + local feature + (K_d 3, K_s 3, N 3, R 1)
    return 3 * (2 * direction_bands + 1) + feature_channels + 10


def default_decoder_dims(feature_channels: int, direction_bands: int = 6):
    """Reference decoder architecture: 4 layers of 128 hidden units."""
    return (decoder_input_dim(feature_channels, direction_bands), 128, 128, 128, 3)


def gbuffer_light_inputs(g: GBuffer, px: np.ndarray) -> np.ndarray:
    """(K_d, K_s, N, R) sampled at the nearest pixel of continuous coords."""
    px = np.atleast_2d(np.asarray(px, dtype=np.float64))
    h, w = g.depth.shape
    ix = np.clip(np.rint(px[:, 0]).astype(np.int64), 0, w - 1)
    iy = np.clip(np.rint(px[:, 1]).astype(np.int64), 0, h - 1)
    a = g.albedo[iy, ix]
    m = g.metallic[iy, ix][:, None]
    kd = a * (1.0 - m)
    ks = 0.04 * (1.0 - m) + a * m
    return np.concatenate([kd, ks, g.normal[iy, ix], g.roughness[iy, ix][:, None]], axis=1)


def decoder_inputs(grid: FeatureGrid, g: GBuffer, camera: Camera,
                   p: np.ndarray, d: np.ndarray, cfg: TracedLightConfig):
    """Trace rays and assemble the decoder input rows; returns (x, hits)."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    d = np.atleast_2d(np.asarray(d, dtype=np.float64))
    hits = ssrt.trace_batch(g.depth, camera, p, d, cfg.ssrt)
    enc = positional_encoding(d, PosEncConfig(bands=cfg.direction_bands))
    feats = grid.sample(hits.pixel)
    aux = gbuffer_light_inputs(g, hits.pixel)
    return np.concatenate([enc, feats, aux], axis=1), hits


def traced_radiance_batch(grid: FeatureGrid, g: GBuffer, weights: MlpWeights,
                          camera: Camera, p: np.ndarray, d: np.ndarray,
                          cfg: TracedLightConfig = TracedLightConfig()):
    """Trace each ray to its in-view source point and decode HDR radiance.

    Returns (radiance (N, 3), hits).  Radiance passes through softplus, so it
    is non-negative for any weights; the hit record feeds the downstream
    uncertainty blend.
    """
    want = decoder_input_dim(grid.channels, cfg.direction_bands)
    if weights.dims[0] != want or weights.dims[-1] != 3:
        raise ContractError(
            f"decoder weights shaped {weights.dims}, need input {want}, output 3")
    x, hits = decoder_inputs(grid, g, camera, p, d, cfg)
    y, _ = mlp.forward(weights, x)
    return mlp.softplus(y), hits


def traced_radiance(grid: FeatureGrid, g: GBuffer, weights: MlpWeights,
                    camera: Camera, p, d, cfg: TracedLightConfig = TracedLightConfig()):
    L, hits = traced_radiance_batch(grid, g, weights, camera,
                                    np.asarray(p)[None, :], np.asarray(d)[None, :], cfg)
    return L[0], hits[0]
