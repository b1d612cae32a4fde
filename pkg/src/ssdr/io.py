"""Bit-exact readers and writers for every on-disk format.

Formats:
  * PFM ("PF"/"Pf"): HDR interchange for all maps; bottom-up scanlines,
    negative scale token = little endian.  Write-then-read round-trips
    float32 payloads bit for bit.
  * weight/grid blobs: one UTF-8 JSON header line, then raw little-endian
    float32 data.
  * feature grids: JSON manifest plus 3-channel PFM slices.
  * G-buffer bundle: a directory with albedo/normal/depth/roughness/metallic
    PFMs and camera.json; optional bundle.json adds lighting, weights,
    targets, and scene metadata.
  * PNG previews: tonemapped 8-bit, written with zlib only.
"""

from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Camera, ContractError, GBuffer, ImageBuffer
from .lighting import FeatureGrid, GridLight, LightField, analytic_lightfield
from .mlp import MlpWeights
from .volumetric import HypernetParams

log = logging.getLogger("ssdr")


class ParseError(ContractError):
    """Malformed file; message carries the byte offset where parsing died."""


class BundleError(ContractError):
    """Bundle directory failed validation (missing or inconsistent pieces)."""


# ---------------------------------------------------------------------------
# PFM


def _read_token(f, path) -> bytes:
    tok = b""
    while True:
        c = f.read(1)
        if not c:
            raise ParseError(f"{path}: unexpected EOF at byte {f.tell()}")
        if c in b" \t\r\n":
            if tok:
                return tok
            continue
        tok += c


def read_pfm(path) -> ImageBuffer:
    path = Path(path)
    with open(path, "rb") as f:
        magic = _read_token(f, path)
        if magic == b"PF":
            channels = 3
        elif magic == b"Pf":
            channels = 1
        else:
            raise ParseError(f"{path}: bad magic {magic!r} at byte 0")
        try:
            width = int(_read_token(f, path))
            height = int(_read_token(f, path))
            scale = float(_read_token(f, path))
        except ValueError as e:
            raise ParseError(f"{path}: bad header near byte {f.tell()}: {e}") from None
        if width <= 0 or height <= 0:
            raise ParseError(f"{path}: non-positive dimensions {width}x{height}")
        count = width * height * channels
        payload = f.read(4 * count)
        if len(payload) != 4 * count:
            raise ParseError(
                f"{path}: truncated payload at byte {f.tell()} "
                f"(got {len(payload)} of {4 * count} bytes)")
        trailing = f.read(1)
        if trailing:
            raise ParseError(f"{path}: trailing garbage at byte {f.tell() - 1}")
    dt = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(payload, dtype=dt).astype(np.float64)
    data = data.reshape(height, width, channels)[::-1]  # stored bottom-up
    return ImageBuffer(width=width, height=height, channels=channels, data=data.copy())


def write_pfm(path, image) -> None:
    if isinstance(image, ImageBuffer):
        data = image.data
    else:
        data = np.asarray(image, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
    h, w, c = data.shape
    if c == 3:
        magic = b"PF"
    elif c == 1:
        magic = b"Pf"
    else:
        raise ContractError(f"PFM stores 1 or 3 channels, not {c}")
    with open(path, "wb") as f:
        f.write(magic + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")  # little endian
        f.write(np.ascontiguousarray(data[::-1], dtype="<f4").tobytes())


# ---------------------------------------------------------------------------
# color handling


def srgb_to_linear(image: np.ndarray) -> np.ndarray:
    """Inverse gamma x -> x^2.2 (power law, not the piecewise sRGB EOTF).

    Out-of-range inputs are clamped with a warning."""
    x = np.asarray(image, dtype=np.float64)
    if np.any(x < 0) or np.any(x > 1):
        log.warning("srgb_to_linear: clamping %d out-of-range values",
                    int(np.sum((x < 0) | (x > 1))))
        x = np.clip(x, 0.0, 1.0)
    return x ** 2.2


def tonemap(image: np.ndarray, exposure: float) -> np.ndarray:
    """x -> (1 - exp(-exposure x))^(1/2.2), into [0, 1]."""
    x = np.asarray(image, dtype=np.float64)
    return np.clip(1.0 - np.exp(-exposure * x), 0.0, 1.0) ** (1.0 / 2.2)


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    body = tag + payload
    return struct.pack(">I", len(payload)) + body + struct.pack(">I", zlib.crc32(body))


def write_png(path, rgb8: np.ndarray) -> None:
    """Minimal 8-bit RGB PNG encoder (filter 0 scanlines)."""
    rgb8 = np.asarray(rgb8, dtype=np.uint8)
    if rgb8.ndim == 2:
        rgb8 = np.repeat(rgb8[:, :, None], 3, axis=2)
    h, w, c = rgb8.shape
    if c != 3:
        raise ContractError("PNG preview expects 3 channels")
    raw = b"".join(b"\x00" + rgb8[y].tobytes() for y in range(h))
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    with open(path, "wb") as f:
        f.write(b"\x89PNG\r\n\x1a\n")
        f.write(_png_chunk(b"IHDR", ihdr))
        f.write(_png_chunk(b"IDAT", zlib.compress(raw, 6)))
        f.write(_png_chunk(b"IEND", b""))


def write_png_preview(path, image, exposure: float = 1.0) -> None:
    """Tonemap an HDR buffer and quantize to an 8-bit PNG."""
    data = image.data if isinstance(image, ImageBuffer) else np.asarray(image)
    if not np.all(np.isfinite(data)):
        raise ContractError("preview requires a finite image")
    if data.ndim == 2:
        data = data[:, :, None]
    if data.shape[2] == 1:
        data = np.repeat(data, 3, axis=2)
    mapped = tonemap(data, exposure)
    write_png(path, np.rint(mapped * 255.0).astype(np.uint8))


# ---------------------------------------------------------------------------
# blobs: one JSON header line + little-endian f32 payload


def write_blob(path, header: dict, data: np.ndarray) -> None:
    payload = np.ascontiguousarray(data, dtype="<f4")
    head = dict(header)
    head["count"] = int(payload.size)
    with open(path, "wb") as f:
        f.write(json.dumps(head, sort_keys=True).encode() + b"\n")
        f.write(payload.tobytes())


def read_blob(path) -> tuple[dict, np.ndarray]:
    path = Path(path)
    with open(path, "rb") as f:
        line = f.readline()
        try:
            header = json.loads(line.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ParseError(f"{path}: bad blob header: {e}") from None
        count = int(header.get("count", -1))
        payload = f.read()
    if count < 0 or len(payload) != 4 * count:
        raise ParseError(
            f"{path}: payload {len(payload)} bytes, header promises {4 * count}")
    return header, np.frombuffer(payload, dtype="<f4").copy()


def write_mlp_weights(path, weights: MlpWeights) -> None:
    write_blob(path, {"kind": "mlp_weights", "dims": list(weights.dims)}, weights.flat)


def read_mlp_weights(path) -> MlpWeights:
    header, data = read_blob(path)
    if header.get("kind") != "mlp_weights":
        raise ParseError(f"{path}: not an MLP weight blob")
    return MlpWeights(tuple(header["dims"]), data.astype(np.float64))


def write_hypernet(path, h: HypernetParams) -> None:
    write_blob(path, {"kind": "hypernet", "feature_dim": h.feature_dim,
                      "target_dims": list(h.target_dims)},
               np.concatenate([h.matrix.ravel(), h.bias]))


def read_hypernet(path) -> HypernetParams:
    header, data = read_blob(path)
    if header.get("kind") != "hypernet":
        raise ParseError(f"{path}: not a hypernet blob")
    f_dim = int(header["feature_dim"])
    dims = tuple(header["target_dims"])
    data = data.astype(np.float64)
    from .mlp import param_count
    p = param_count(dims)
    return HypernetParams(f_dim, dims, data[:p * f_dim].reshape(p, f_dim), data[p * f_dim:])


def write_grid_light(path, gl: GridLight) -> None:
    write_blob(path, {"kind": "grid_light", "dims": list(gl.values.shape[:5]),
                      "bounds": gl.bounds.tolist()}, gl.values.ravel())


def read_grid_light(path) -> GridLight:
    header, data = read_blob(path)
    if header.get("kind") != "grid_light":
        raise ParseError(f"{path}: not a grid light blob")
    dims = tuple(int(d) for d in header["dims"])
    values = data.astype(np.float64).reshape(*dims, 3)
    return GridLight(values, np.asarray(header["bounds"], dtype=np.float64))


# ---------------------------------------------------------------------------
# feature grids: JSON manifest + 3-channel PFM slices


def write_feature_grid(manifest_path, grid: FeatureGrid) -> None:
    manifest_path = Path(manifest_path)
    h, w, c = grid.data.shape
    n_slices = (c + 2) // 3
    stem = manifest_path.stem
    slices = []
    for i in range(n_slices):
        chunk = np.zeros((h, w, 3))
        lo = 3 * i
        hi = min(lo + 3, c)
        chunk[:, :, :hi - lo] = grid.data[:, :, lo:hi]
        name = f"{stem}_{i:03d}.pfm"
        write_pfm(manifest_path.parent / name, chunk)
        slices.append(name)
    manifest_path.write_text(json.dumps(
        {"kind": "feature_grid", "width": w, "height": h, "channels": c,
         "slices": slices}, indent=2))


def read_feature_grid(manifest_path) -> FeatureGrid:
    manifest_path = Path(manifest_path)
    try:
        m = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{manifest_path}: {e}") from None
    if m.get("kind") != "feature_grid":
        raise ParseError(f"{manifest_path}: not a feature grid manifest")
    w, h, c = int(m["width"]), int(m["height"]), int(m["channels"])
    data = np.zeros((h, w, c))
    for i, name in enumerate(m["slices"]):
        img = read_pfm(manifest_path.parent / name)
        if (img.width, img.height) != (w, h):
            raise ParseError(f"{name}: slice dimensions disagree with manifest")
        lo = 3 * i
        hi = min(lo + 3, c)
        data[:, :, lo:hi] = img.data[:, :, :hi - lo]
    return FeatureGrid(data)


# ---------------------------------------------------------------------------
# G-buffer bundles


_MAP_NAMES = ("albedo", "normal", "depth", "roughness", "metallic")


@dataclass
class Bundle:
    """Everything a render needs, loaded from one directory."""

    path: Path
    gbuffer: GBuffer
    camera: Camera
    scene_scale: float = 1.0
    specular_scale: float = 1.0
    lighting_spec: dict | None = None
    feature_grid: FeatureGrid | None = None
    decoder_weights: MlpWeights | None = None
    volume_weights: MlpWeights | None = None
    target: ImageBuffer | None = None
    reference: ImageBuffer | None = None
    manifest: dict = field(default_factory=dict)

    def light_field(self) -> LightField | None:
        if self.lighting_spec is None:
            return None
        spec = dict(self.lighting_spec)
        kind = spec.pop("kind")
        if kind == "grid" and "path" in spec:
            return read_grid_light(self.path / spec["path"])
        return analytic_lightfield(kind, **spec)


def read_bundle(directory) -> Bundle:
    directory = Path(directory)
    if not directory.is_dir():
        raise BundleError(f"bundle directory {directory} does not exist")
    manifest = {}
    mpath = directory / "bundle.json"
    if mpath.exists():
        try:
            manifest = json.loads(mpath.read_text())
        except json.JSONDecodeError as e:
            raise BundleError(f"{mpath}: {e}") from None

    maps = {}
    overrides = manifest.get("maps", {})
    for name in _MAP_NAMES:
        rel = overrides.get(name, f"{name}.pfm")
        fpath = directory / rel
        if not fpath.exists():
            raise BundleError(f"missing map: {rel}")
        maps[name] = read_pfm(fpath)

    cam_file = directory / manifest.get("camera", "camera.json")
    if not cam_file.exists():
        raise BundleError("missing camera.json")
    camera = Camera.from_dict(json.loads(cam_file.read_text()))

    dims = {name: (img.width, img.height) for name, img in maps.items()}
    base = dims["depth"]
    for name, wh in dims.items():
        if wh != base:
            raise BundleError(f"map dimensions disagree: {name} is {wh}, depth is {base}")
    if (camera.width, camera.height) != base:
        raise BundleError("camera dimensions disagree with the maps")

    g = GBuffer(albedo=maps["albedo"].data,
                normal=maps["normal"].data,
                depth=maps["depth"].plane(),
                roughness=maps["roughness"].plane(),
                metallic=maps["metallic"].plane())

    lighting_spec = manifest.get("lighting")
    lpath = directory / "lighting.json"
    if lighting_spec is None and lpath.exists():
        lighting_spec = json.loads(lpath.read_text())

    def _opt_image(key):
        rel = manifest.get(key)
        return read_pfm(directory / rel) if rel else None

    fg = None
    if manifest.get("feature_grid"):
        fg = read_feature_grid(directory / manifest["feature_grid"])
    dec = (read_mlp_weights(directory / manifest["decoder_weights"])
           if manifest.get("decoder_weights") else None)
    vol = (read_mlp_weights(directory / manifest["volume_weights"])
           if manifest.get("volume_weights") else None)

    return Bundle(path=directory, gbuffer=g, camera=camera,
                  scene_scale=float(manifest.get("scene_scale", 1.0)),
                  specular_scale=float(manifest.get("specular_scale", 1.0)),
                  lighting_spec=lighting_spec, feature_grid=fg,
                  decoder_weights=dec, volume_weights=vol,
                  target=_opt_image("target"), reference=_opt_image("reference"),
                  manifest=manifest)


def write_bundle(directory, gbuffer: GBuffer, camera: Camera,
                 lighting_spec: dict | None = None, scene_scale: float = 1.0,
                 specular_scale: float = 1.0, extras: dict | None = None) -> Path:
    """Write a bundle directory; `extras` maps manifest keys to arrays or
    objects that are serialized next to the maps."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_pfm(directory / "albedo.pfm", gbuffer.albedo)
    write_pfm(directory / "normal.pfm", gbuffer.normal)
    write_pfm(directory / "depth.pfm", gbuffer.depth[:, :, None])
    write_pfm(directory / "roughness.pfm", gbuffer.roughness[:, :, None])
    write_pfm(directory / "metallic.pfm", gbuffer.metallic[:, :, None])
    (directory / "camera.json").write_text(json.dumps(camera.to_dict(), indent=2))

    manifest: dict = {"scene_scale": scene_scale, "specular_scale": specular_scale}
    if lighting_spec is not None:
        manifest["lighting"] = lighting_spec
    extras = extras or {}
    if "reference" in extras:
        write_pfm(directory / "reference.pfm", extras["reference"])
        manifest["reference"] = "reference.pfm"
    if "target" in extras:
        write_pfm(directory / "target.pfm", extras["target"])
        manifest["target"] = "target.pfm"
    if "feature_grid" in extras:
        write_feature_grid(directory / "features.json", extras["feature_grid"])
        manifest["feature_grid"] = "features.json"
    if "decoder_weights" in extras:
        write_mlp_weights(directory / "decoder.weights", extras["decoder_weights"])
        manifest["decoder_weights"] = "decoder.weights"
    if "volume_weights" in extras:
        write_mlp_weights(directory / "volume.weights", extras["volume_weights"])
        manifest["volume_weights"] = "volume.weights"
    if "grid_light" in extras:
        write_grid_light(directory / "light.grid", extras["grid_light"])
        manifest["lighting"] = {"kind": "grid", "path": "light.grid"}
    (directory / "bundle.json").write_text(json.dumps(manifest, indent=2))
    return directory


def write_loss_trace(path, rows: list[dict]) -> None:
    """CSV loss trace: iteration, loss, then per-parameter summary columns."""
    if not rows:
        Path(path).write_text("iteration,loss\n")
        return
    cols = list(rows[0].keys())
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join(f"{row[c]:.10g}" if isinstance(row[c], float)
                              else str(row[c]) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n")
