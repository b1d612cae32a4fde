import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssdr import mlp, scenes
from ssdr.core import ContractError, normalize, unproject
from ssdr.inverse import AdamState
from ssdr.lighting import (FeatureGrid, GridLight, PosEncConfig, SkyDiscLight,
                           TracedLightConfig, analytic_lightfield,
                           decoder_input_dim, decoder_inputs,
                           positional_encoding, traced_radiance,
                           traced_radiance_batch)


def test_posenc_zero():
    enc = positional_encoding(np.zeros(1), PosEncConfig(bands=2))
    assert np.allclose(enc, [0.0, 0.0, 1.0, 0.0, 1.0])


def test_posenc_first_band_half():
    enc = positional_encoding(np.array([0.5]), PosEncConfig(bands=1))
    assert np.allclose(enc, [0.5, 1.0, 0.0], atol=1e-12)  # sin(pi/2), cos(pi/2)


def test_posenc_output_length():
    enc = positional_encoding(np.zeros(3), PosEncConfig(bands=6))
    assert enc.shape == (39,)
    enc = positional_encoding(np.zeros((7, 3)), PosEncConfig(bands=4, include_input=False))
    assert enc.shape == (7, 24)


def test_posenc_component_major_layout():
    x = np.array([0.25, 0.75])
    enc = positional_encoding(x, PosEncConfig(bands=2))
    per = 2 * 2 + 1
    for c in range(2):
        chunk = enc[c * per:(c + 1) * per]
        assert chunk[0] == x[c]
        assert np.isclose(chunk[1], np.sin(np.pi * x[c]))
        assert np.isclose(chunk[2], np.cos(np.pi * x[c]))


@given(st.floats(0.0, 0.999), st.floats(0.0, 0.999))
@settings(max_examples=300)
def test_posenc_injective_on_unit_interval(a, b):
    if abs(a - b) < 1e-12:
        return
    cfg = PosEncConfig(bands=1, include_input=False)
    ea = positional_encoding(np.array([a]), cfg)
    eb = positional_encoding(np.array([b]), cfg)
    assert not np.allclose(ea, eb, atol=1e-15)


def test_feature_grid_exact_at_nodes():
    rng = np.random.default_rng(0)
    data = rng.normal(size=(5, 7, 9))
    grid = FeatureGrid(data)
    for (y, x) in [(0, 0), (2, 3), (4, 6)]:
        got = grid.sample(np.array([[float(x), float(y)]]))[0]
        assert np.array_equal(got, data[y, x])


def test_feature_grid_bilinear_midpoint():
    data = np.zeros((2, 2, 1))
    data[0, 0, 0], data[0, 1, 0], data[1, 0, 0], data[1, 1, 0] = 1.0, 2.0, 3.0, 4.0
    grid = FeatureGrid(data)
    assert np.isclose(grid.sample(np.array([[0.5, 0.5]]))[0, 0], 2.5)


def test_constant_field():
    lf = analytic_lightfield("constant", value=2.0)
    out = lf.radiance(np.zeros((4, 3)), normalize(np.ones((4, 3))))
    assert np.allclose(out, 2.0)


def test_sky_gradient_zenith_exact():
    lf = analytic_lightfield("sky", zenith=[1.0, 2.0, 3.0], horizon=[0.1, 0.1, 0.1])
    up = np.array([[0.0, -1.0, 0.0]])
    assert np.allclose(lf.radiance(np.zeros((1, 3)), up), [[1.0, 2.0, 3.0]])
    side = np.array([[1.0, 0.0, 0.0]])
    assert np.allclose(lf.radiance(np.zeros((1, 3)), side), [[0.1, 0.1, 0.1]])


def test_sky_disc_adds_source():
    src = normalize(np.array([0.0, -0.8, 0.6]))
    lf = SkyDiscLight(zenith=[0.2] * 3, horizon=[0.1] * 3, disc_direction=src,
                      disc_radius=0.1, disc_color=[50.0, 40.0, 30.0])
    on = lf.radiance(np.zeros((1, 3)), src[None, :])[0]
    off = lf.radiance(np.zeros((1, 3)),
                      normalize(np.array([[0.9, 0.1, 0.4]])))[0]
    assert on[0] > 49.0
    assert off[0] < 1.0


def test_grid_light_node_exact():
    vals = np.zeros((2, 2, 2, 3, 4, 3))
    vals[1, 0, 1, 2, 3] = [1.0, 0.0, 0.0]
    gl = GridLight(vals, [[-1, -1, -1], [1, 1, 1]])
    pos, d = gl.node_position((1, 0, 1, 2, 3))
    assert np.allclose(gl.radiance(pos[None, :], d[None, :])[0], [1.0, 0.0, 0.0])


def test_grid_light_single_cell():
    vals = np.full((1, 1, 1, 1, 1, 3), 0.0)
    vals[0, 0, 0, 0, 0] = [1.0, 0.0, 0.0]
    gl = GridLight(vals, [[0, 0, 0], [1, 1, 1]])
    out = gl.radiance(np.array([[0.5, 0.5, 0.5]]), normalize(np.ones((1, 3))))
    assert np.allclose(out, [[1.0, 0.0, 0.0]])


def test_unknown_lightfield_kind():
    with pytest.raises(ContractError):
        analytic_lightfield("nope")


def test_grid_lightfield_from_file(tmp_path):
    from ssdr import io as sio
    vals = np.zeros((2, 2, 2, 3, 4, 3))
    vals[0, 1, 1, 1, 2] = [0.0, 2.0, 0.5]
    gl = GridLight(vals, [[-1, -1, 0], [1, 1, 4]])
    sio.write_grid_light(tmp_path / "light.grid", gl)
    loaded = analytic_lightfield("grid", path=tmp_path / "light.grid")
    pos, d = gl.node_position((0, 1, 1, 1, 2))
    assert np.allclose(loaded.radiance(pos[None, :], d[None, :])[0],
                       [0.0, 2.0, 0.5])


def _decoder_setup(channels=12):
    g, camera, _, _ = scenes.two_plane(24, 24)
    rng = np.random.default_rng(1)
    grid = FeatureGrid(rng.normal(size=(24, 24, channels)))
    dims = (decoder_input_dim(channels), 16, 16, 3)
    return g, camera, grid, dims


def test_traced_radiance_zero_weights():
    g, camera, grid, dims = _decoder_setup()
    weights = mlp.MlpWeights.zeros(dims)
    p = unproject(camera, np.array([12.0, 18.0]), g.depth[18, 12])
    L, hit = traced_radiance(grid, g, weights, camera, p,
                             normalize(np.array([0.3, -0.5, 0.6])))
    assert np.allclose(L, np.log(2.0), atol=1e-12)  # softplus(0)


def test_traced_radiance_pure():
    g, camera, grid, dims = _decoder_setup()
    weights = mlp.MlpWeights.random(dims, seed=5, scale=0.3)
    rng = np.random.default_rng(2)
    p = np.repeat(unproject(camera, np.array([[10.0, 20.0]]),
                            np.array([g.depth[20, 10]])), 6, axis=0)
    d = normalize(rng.normal(size=(6, 3)) + [0, -1.0, 0.2])
    a, _ = traced_radiance_batch(grid, g, weights, camera, p, d)
    b, _ = traced_radiance_batch(grid, g, weights, camera, p, d)
    assert np.array_equal(a, b)
    assert np.all(a >= 0.0)  # softplus output


def test_traced_radiance_weight_shape_error():
    g, camera, grid, _ = _decoder_setup()
    bad = mlp.MlpWeights.zeros((7, 4, 3))
    with pytest.raises(ContractError):
        traced_radiance(grid, g, bad, camera, np.array([0.0, 0.0, 2.0]),
                        np.array([0.0, 0.0, 1.0]))


def test_decoder_input_dimension_accounting():
    assert decoder_input_dim(64) == 39 + 64 + 10
    g, camera, grid, dims = _decoder_setup(channels=5)
    x, hits = decoder_inputs(grid, g, camera,
                             np.array([[0.0, 0.0, 2.0]]),
                             normalize(np.array([[0.1, -0.4, 0.9]])),
                             TracedLightConfig())
    assert x.shape == (1, decoder_input_dim(5))


def test_decoder_overfits_constant_field():
    """A one-hidden-layer decoder driven to emit constant radiance 1."""
    g, camera, grid, _ = _decoder_setup(channels=6)
    dims = (decoder_input_dim(6), 8, 3)
    weights = mlp.MlpWeights.random(dims, seed=3, scale=0.2)

    rng = np.random.default_rng(4)
    fy, fx = np.nonzero(np.isfinite(g.depth))
    idx = rng.integers(0, fy.size, 2048)
    p = unproject(camera, np.stack([fx[idx], fy[idx]], -1).astype(float),
                  g.depth[fy[idx], fx[idx]])
    d = normalize(rng.normal(size=(2048, 3)) + [0, -1.2, 0.0])
    x, _ = decoder_inputs(grid, g, camera, p, d, TracedLightConfig())

    adam = AdamState.like(weights.flat)
    for _ in range(1200):
        y, cache = mlp.forward(weights, x)
        L = mlp.softplus(y)
        dy = 2.0 * (L - 1.0) * mlp.sigmoid(y) / L.size
        _, dflat = mlp.backward(weights, cache, dy)
        weights = weights.copy_with(weights.flat - adam.step(dflat, 0.05))

    # held-out queries across the scene
    idx2 = rng.integers(0, fy.size, 128)
    p2 = unproject(camera, np.stack([fx[idx2], fy[idx2]], -1).astype(float),
                   g.depth[fy[idx2], fx[idx2]])
    d2 = normalize(rng.normal(size=(128, 3)) + [0, -1.2, 0.0])
    L2, _ = traced_radiance_batch(grid, g, weights, camera, p2, d2)
    assert np.max(np.abs(L2 - 1.0)) < 1e-2
