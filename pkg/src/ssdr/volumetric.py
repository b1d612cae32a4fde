"""Out-of-view lighting: a tiny positional-encoding MLP queried as a density
and color field, volume rendered along the light ray, and blended with the
traced in-view prediction through the tanh depth-gap uncertainty.

The field takes no view direction.  Density goes through softplus, color
through sigmoid scaled by `radiance_scale`, so HDR radiance stays
non-negative for arbitrary weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mlp, sampling
from .core import ContractError, as_rgb
from .lighting import (FeatureGrid, LightField, PosEncConfig, TracedLightConfig,
                       decoder_inputs, positional_encoding, traced_radiance_batch)
from .mlp import MlpWeights


@dataclass(frozen=True)
class VolumeConfig:
    t_near: float = 0.05
    t_far: float = 20.0
    n_samples: int = 64
    position_bands: int = 10
    radiance_scale: float = 5.0

    def __post_init__(self):
        if not (self.t_near < self.t_far) or self.n_samples < 2:
            raise ContractError("invalid volume config")


def field_input_dim(position_bands: int = 10) -> int:
    return 3 * (2 * position_bands + 1)


def default_field_dims(position_bands: int = 10):
    """Reference field architecture: a small 4-layer, 64-unit network."""
    return (field_input_dim(position_bands), 64, 64, 64, 4)


def field_eval(weights: MlpWeights, x: np.ndarray,
               cfg: VolumeConfig = VolumeConfig()):
    """Density (N,) and color (N, 3) of the field at points x (N, 3)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    want = field_input_dim(cfg.position_bands)
    if weights.dims[0] != want or weights.dims[-1] != 4:
        raise ContractError(
            f"field weights shaped {weights.dims}, need input {want}, output 4")
    enc = positional_encoding(x, PosEncConfig(bands=cfg.position_bands))
    y, _ = mlp.forward(weights, enc)
    sigma = mlp.softplus(y[:, 0])
    color = mlp.sigmoid(y[:, 1:4]) * cfg.radiance_scale
    return sigma, color


# ---------------------------------------------------------------------------
# hypernetwork


@dataclass
class HypernetParams:
    """Affine map from a global scene feature to the field's flat weights."""

    feature_dim: int
    target_dims: tuple[int, ...]
    matrix: np.ndarray  # (P, F)
    bias: np.ndarray    # (P,)

    def __post_init__(self):
        self.target_dims = tuple(int(d) for d in self.target_dims)
        p = mlp.param_count(self.target_dims)
        self.matrix = np.asarray(self.matrix, dtype=np.float64).reshape(p, self.feature_dim)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(p)

    @classmethod
    def zeros(cls, feature_dim: int, target_dims) -> "HypernetParams":
        p = mlp.param_count(target_dims)
        return cls(feature_dim, tuple(target_dims), np.zeros((p, feature_dim)), np.zeros(p))

    @classmethod
    def identity(cls, target_dims) -> "HypernetParams":
        p = mlp.param_count(target_dims)
        return cls(p, tuple(target_dims), np.eye(p), np.zeros(p))

    @classmethod
    def random(cls, feature_dim: int, target_dims, seed: int, scale: float = 0.1):
        rng = np.random.default_rng(seed)
        p = mlp.param_count(target_dims)
        return cls(feature_dim, tuple(target_dims),
                   rng.normal(0.0, scale, size=(p, feature_dim)),
                   rng.normal(0.0, scale, size=p))


def hypernet_forward(fg: np.ndarray, h: HypernetParams) -> MlpWeights:
    fg = np.asarray(fg, dtype=np.float64).ravel()
    if fg.size != h.feature_dim:
        raise ContractError(f"feature size {fg.size} != {h.feature_dim}")
    return MlpWeights(h.target_dims, h.matrix @ fg + h.bias)


def hypernet_backward(fg: np.ndarray, h: HypernetParams, dflat: np.ndarray):
    """Adjoints of hypernet_forward: returns (dfg, dmatrix, dbias)."""
    fg = np.asarray(fg, dtype=np.float64).ravel()
    dflat = np.asarray(dflat, dtype=np.float64).ravel()
    return h.matrix.T @ dflat, np.outer(dflat, fg), dflat.copy()


# ---------------------------------------------------------------------------
# volume rendering


def stratified_ts(t_near: float, t_far: float, jitter: np.ndarray):
    """Jittered sample positions (N, S) and segment lengths, last segment
    closed at t_far."""
    n_samples = jitter.shape[-1]
    width = (t_far - t_near) / n_samples
    base = t_near + width * np.arange(n_samples)
    t = base + width * jitter
    deltas = np.empty_like(t)
    deltas[..., :-1] = t[..., 1:] - t[..., :-1]
    deltas[..., -1] = t_far - t[..., -1]
    return t, deltas


def composite(sigma: np.ndarray, color: np.ndarray, deltas: np.ndarray):
    """Alpha compositing: L = sum_i T_i (1 - exp(-sigma_i delta_i)) c_i.

    Returns (L (N,3), weights (N,S)); the weights are non-negative and sum
    to at most 1 per ray (remainder transmitted).
    """
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    deltas = np.atleast_2d(np.asarray(deltas, dtype=np.float64))
    color = np.asarray(color, dtype=np.float64)
    tau = sigma * deltas
    trans = np.exp(-np.cumsum(tau, axis=-1) + tau)  # T_i excludes own segment
    w = trans * (1.0 - np.exp(-tau))
    return np.sum(w[..., None] * color, axis=-2), w


def composite_backward(sigma, color, deltas, w, dL):
    """Adjoints (dsigma, dcolor) of `composite` for fixed deltas."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    deltas = np.atleast_2d(np.asarray(deltas, dtype=np.float64))
    dL = np.asarray(dL, dtype=np.float64)
    dcolor = w[..., None] * dL[..., None, :]
    g = np.sum(color * dL[..., None, :], axis=-1)      # (N, S)
    tau = sigma * deltas
    trans = np.exp(-np.cumsum(tau, axis=-1) + tau)
    # suffix sum of g_j w_j over j > i
    gw = g * w
    suffix = np.cumsum(gw[..., ::-1], axis=-1)[..., ::-1] - gw
    dsigma = deltas * (g * trans * np.exp(-tau) - suffix)
    return dsigma, dcolor


def _volume_points(p, d, t):
    # march from p toward the source along +d (see module docstring)
    return p[:, None, :] + t[:, :, None] * d[:, None, :]


def volume_render_batch(weights: MlpWeights, p: np.ndarray, d: np.ndarray,
                        cfg: VolumeConfig, seed: int, ray_ids: np.ndarray):
    """Stratified volume rendering of N rays; jitter keyed by (seed, ray_id)."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    d = np.atleast_2d(np.asarray(d, dtype=np.float64))
    jitter = sampling.uniform_block(seed, np.asarray(ray_ids, dtype=np.uint64), 0,
                                    cfg.n_samples)
    t, deltas = stratified_ts(cfg.t_near, cfg.t_far, jitter)
    x = _volume_points(p, d, t)
    sigma, color = field_eval(weights, x.reshape(-1, 3), cfg)
    sigma = sigma.reshape(t.shape)
    color = color.reshape(*t.shape, 3)
    L, _ = composite(sigma, color, deltas)
    return L


def volume_render(weights: MlpWeights, p, d, t_near: float, t_far: float,
                  n_samples: int, rng: sampling.SamplerState,
                  position_bands: int = 10, radiance_scale: float = 5.0) -> np.ndarray:
    """Single-ray estimator of the compositing sum; deterministic given rng."""
    if not t_near < t_far or n_samples < 2:
        raise ContractError("need t_near < t_far and n_samples >= 2")
    cfg = VolumeConfig(t_near=t_near, t_far=t_far, n_samples=n_samples,
                       position_bands=position_bands, radiance_scale=radiance_scale)
    jitter = rng.uniforms(n_samples)[None, :]
    t, deltas = stratified_ts(t_near, t_far, jitter)
    x = _volume_points(np.asarray(p, dtype=np.float64)[None, :],
                       np.asarray(d, dtype=np.float64)[None, :], t)
    sigma, color = field_eval(weights, x.reshape(-1, 3), cfg)
    L, _ = composite(sigma.reshape(1, -1), color.reshape(1, -1, 3), deltas)
    return L[0]


def volume_render_backward(weights: MlpWeights, p: np.ndarray, d: np.ndarray,
                           cfg: VolumeConfig, seed: int, ray_ids: np.ndarray,
                           dL: np.ndarray) -> np.ndarray:
    """d(volume_render_batch)/d(weights.flat), contracted with dL (N, 3)."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    d = np.atleast_2d(np.asarray(d, dtype=np.float64))
    jitter = sampling.uniform_block(seed, np.asarray(ray_ids, dtype=np.uint64), 0,
                                    cfg.n_samples)
    t, deltas = stratified_ts(cfg.t_near, cfg.t_far, jitter)
    x = _volume_points(p, d, t).reshape(-1, 3)

    enc = positional_encoding(x, PosEncConfig(bands=cfg.position_bands))
    y, cache = mlp.forward(weights, enc)
    sigma = mlp.softplus(y[:, 0]).reshape(t.shape)
    raw_col = mlp.sigmoid(y[:, 1:4])
    color = (raw_col * cfg.radiance_scale).reshape(*t.shape, 3)

    _, w = composite(sigma, color, deltas)
    dsigma, dcolor = composite_backward(sigma, color, deltas, w, dL)

    dy = np.empty_like(y)
    dy[:, 0] = dsigma.reshape(-1) * mlp.sigmoid(y[:, 0])
    dy[:, 1:4] = (dcolor.reshape(-1, 3) * cfg.radiance_scale
                  * raw_col * (1.0 - raw_col))
    _, dflat = mlp.backward(weights, cache, dy)
    return dflat


def blend(l_ssrt, l_oov, u):
    """Uncertainty blend: (1 - u) * traced + u * out-of-view, u in [0, 1]."""
    u = np.asarray(u, dtype=np.float64)
    if np.any(u < 0) or np.any(u > 1):
        raise ContractError("blend factor outside [0, 1]")
    a = as_rgb(l_ssrt) if np.ndim(l_ssrt) <= 1 else np.asarray(l_ssrt, dtype=np.float64)
    b = as_rgb(l_oov) if np.ndim(l_oov) <= 1 else np.asarray(l_oov, dtype=np.float64)
    uu = u[..., None] if np.ndim(u) == a.ndim - 1 else u
    return (1.0 - uu) * a + uu * b


# ---------------------------------------------------------------------------
# full learned light path: traced + volumetric, blended by uncertainty


def _ray_ids(p: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Deterministic per-ray stream ids from the ray's bit patterns, so
    queries stay pure and common random numbers survive re-evaluation."""
    bits = np.concatenate([np.ascontiguousarray(p, dtype=np.float64).view(np.uint64),
                           np.ascontiguousarray(d, dtype=np.float64).view(np.uint64)],
                          axis=-1)
    acc = np.zeros(bits.shape[0], dtype=np.uint64)
    for k in range(bits.shape[1]):
        acc = sampling._mix(acc ^ (bits[:, k] + np.uint64(0x9E3779B97F4A7C15)))
    return acc


class BlendedLightField(LightField):
    """The learned lighting path: screen-space traced radiance where the
    depth map supports it, the volumetric field elsewhere, mixed by the
    tanh depth-gap uncertainty of each trace.

    Parameters (for recovery/fitting) are the concatenation of the decoder
    weights and either the field weights or the hypernetwork (matrix, bias).
    """

    def __init__(self, feature_grid: FeatureGrid, gbuffer, camera,
                 decoder_weights: MlpWeights,
                 volume_weights: MlpWeights | None = None,
                 hypernet: HypernetParams | None = None,
                 global_feature: np.ndarray | None = None,
                 traced_cfg: TracedLightConfig = TracedLightConfig(),
                 volume_cfg: VolumeConfig = VolumeConfig(),
                 seed: int = 7):
        if (volume_weights is None) == (hypernet is None):
            raise ContractError("provide exactly one of volume_weights or hypernet")
        if hypernet is not None and global_feature is None:
            raise ContractError("hypernet mode needs the global feature vector")
        self.grid = feature_grid
        self.gbuffer = gbuffer
        self.camera = camera
        self.decoder = decoder_weights
        self.hypernet = hypernet
        self.global_feature = (None if global_feature is None
                               else np.asarray(global_feature, dtype=np.float64).ravel())
        self.volume = (volume_weights if volume_weights is not None
                       else hypernet_forward(self.global_feature, hypernet))
        self.traced_cfg = traced_cfg
        self.volume_cfg = volume_cfg
        self.seed = seed

    # -- parameter vector plumbing ------------------------------------
    @property
    def n_params(self) -> int:
        head = self.decoder.flat.size
        if self.hypernet is None:
            return head + self.volume.flat.size
        return head + self.hypernet.matrix.size + self.hypernet.bias.size

    def get_params(self) -> np.ndarray:
        if self.hypernet is None:
            return np.concatenate([self.decoder.flat, self.volume.flat])
        return np.concatenate([self.decoder.flat, self.hypernet.matrix.ravel(),
                               self.hypernet.bias])

    def set_params(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if vec.size != self.n_params:
            raise ContractError("parameter vector size mismatch")
        nd = self.decoder.flat.size
        self.decoder = self.decoder.copy_with(vec[:nd].copy())
        if self.hypernet is None:
            self.volume = self.volume.copy_with(vec[nd:].copy())
        else:
            nm = self.hypernet.matrix.size
            self.hypernet = HypernetParams(
                self.hypernet.feature_dim, self.hypernet.target_dims,
                vec[nd:nd + nm].reshape(self.hypernet.matrix.shape).copy(),
                vec[nd + nm:].copy())
            self.volume = hypernet_forward(self.global_feature, self.hypernet)

    # -- queries -------------------------------------------------------
    def _parts(self, p, d):
        p = np.atleast_2d(np.asarray(p, dtype=np.float64))
        d = np.atleast_2d(np.asarray(d, dtype=np.float64))
        l_tr, hits = traced_radiance_batch(self.grid, self.gbuffer, self.decoder,
                                           self.camera, p, d, self.traced_cfg)
        ids = _ray_ids(p, d)
        l_vol = volume_render_batch(self.volume, p, d, self.volume_cfg, self.seed, ids)
        return p, d, l_tr, l_vol, hits, ids

    def radiance(self, p, d):
        _, _, l_tr, l_vol, hits, _ = self._parts(p, d)
        return blend(l_tr, l_vol, hits.u)

    def query(self, p, d):
        _, _, l_tr, l_vol, hits, _ = self._parts(p, d)
        return blend(l_tr, l_vol, hits.u), 1.0 - hits.u

    def backprop(self, p, d, dL) -> np.ndarray:
        """Parameter adjoints of radiance(p, d) contracted with dL (N, 3).

        The trace geometry and its uncertainty are constants of the blend."""
        p = np.atleast_2d(np.asarray(p, dtype=np.float64))
        d = np.atleast_2d(np.asarray(d, dtype=np.float64))
        dL = np.asarray(dL, dtype=np.float64).reshape(p.shape[0], 3)

        x, hits = decoder_inputs(self.grid, self.gbuffer, self.camera, p, d,
                                 self.traced_cfg)
        y, cache = mlp.forward(self.decoder, x)
        w_tr = (1.0 - hits.u)[:, None]
        dy = dL * w_tr * mlp.sigmoid(y)
        _, d_decoder = mlp.backward(self.decoder, cache, dy)

        ids = _ray_ids(p, d)
        d_vol = volume_render_backward(self.volume, p, d, self.volume_cfg,
                                       self.seed, ids, dL * hits.u[:, None])
        if self.hypernet is None:
            return np.concatenate([d_decoder, d_vol])
        _, dmat, dbias = hypernet_backward(self.global_feature, self.hypernet, d_vol)
        return np.concatenate([d_decoder, dmat.ravel(), dbias])
