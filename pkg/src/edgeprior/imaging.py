"""Image preprocessing, Canny edge-map extraction and background noise diagnostics.

All routines are pure functions over :class:`RasterImage` values. Pixel data is
kept as ``uint8`` numpy arrays in row-major ``(height, width[, channels])``
layout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image
from scipy import ndimage

__all__ = [
    "RasterImage",
    "CannyParams",
    "EdgeMap",
    "NoiseReport",
    "DecodeError",
    "ParameterError",
    "DiagnosticsError",
    "CANNY_CONFIGS",
    "STAGE1_CONFIGS",
    "canny_config",
    "derive_reference_config",
    "config_registry",
    "normalize_alpha",
    "adaptive_rescale",
    "preprocess",
    "to_grayscale",
    "canny",
    "background_noise_sigma",
    "color_instability",
    "noise_report",
    "read_image",
    "write_image",
    "write_edge_map",
    "read_edge_map",
]

_MODES = {"L": 1, "RGB": 3, "RGBA": 4}
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

# noise diagnostics constants
NOISE_TILE = 16
NOISE_FLAT_STD = 8.0
NOISE_BLUR_SIGMA = 2.0
LIGHTNESS_CUTOFF = 80.0


class DecodeError(ValueError):
    """Raised when a pixel buffer cannot be interpreted as an image."""


class ParameterError(ValueError):
    """Raised for invalid Canny parameters."""


class DiagnosticsError(ValueError):
    """Raised when noise diagnostics cannot be computed for an image."""


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(_round_half_away(x), 0, 255).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class RasterImage:
    """Decoded pixel grid.

    ``pixels`` has shape ``(height, width)`` for gray images and
    ``(height, width, 3|4)`` for RGB / RGBA images.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8:
            if px.size and (np.nanmin(px) < 0 or np.nanmax(px) > 255):
                raise DecodeError("pixel values must lie in 0..255")
            px = px.astype(np.uint8)
        if px.ndim == 3 and px.shape[2] == 1:
            px = px[:, :, 0]
        if px.ndim not in (2, 3) or (px.ndim == 3 and px.shape[2] not in (3, 4)):
            raise DecodeError(f"unsupported pixel array shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise DecodeError("image must be at least 1x1")
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_buffer(cls, width: int, height: int, mode: str, data) -> "RasterImage":
        if mode not in _MODES:
            raise DecodeError(f"unknown channel layout {mode!r}")
        if width < 1 or height < 1:
            raise DecodeError("width and height must be >= 1")
        buf = np.frombuffer(bytes(data), dtype=np.uint8)
        expected = width * height * _MODES[mode]
        if buf.size != expected:
            raise DecodeError(
                f"buffer holds {buf.size} bytes, expected {expected} for {width}x{height} {mode}"
            )
        shape = (height, width) if mode == "L" else (height, width, _MODES[mode])
        return cls(buf.reshape(shape).copy())

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def mode(self) -> str:
        if self.pixels.ndim == 2:
            return "L"
        return "RGB" if self.pixels.shape[2] == 3 else "RGBA"

    @property
    def channels(self) -> int:
        return _MODES[self.mode]

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(
            self.pixels, other.pixels
        )

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))


def _as_raster(img) -> RasterImage:
    return img if isinstance(img, RasterImage) else RasterImage(np.asarray(img))


@dataclass(frozen=True)
class CannyParams:
    low: float
    high: float
    aperture: int = 3
    config_id: Optional[str] = None

    def __post_init__(self):
        if self.aperture not in (3, 5, 7):
            raise ParameterError(f"aperture must be one of 3, 5, 7 (got {self.aperture})")
        if self.low < 0:
            raise ParameterError("low threshold must be non-negative")
        if self.low > self.high:
            raise ParameterError(f"low threshold {self.low} exceeds high threshold {self.high}")

    @classmethod
    def parse(cls, text: str) -> "CannyParams":
        """Parse ``"low,high,aperture"`` or a registry name such as ``"C3"``."""
        text = text.strip()
        if text.upper() in CANNY_CONFIGS:
            return CANNY_CONFIGS[text.upper()]
        try:
            low, high, aperture = (p.strip() for p in text.split(","))
            return cls(float(low), float(high), int(aperture))
        except ValueError as exc:
            if isinstance(exc, ParameterError):
                raise
            raise ParameterError(f"cannot parse Canny parameters from {text!r}") from exc

    def as_tuple(self):
        return (self.low, self.high, self.aperture)

    def describe(self) -> str:
        tag = f"{self.config_id} " if self.config_id else ""
        return f"{tag}({self.low:g},{self.high:g},{self.aperture})"


# Stage 1 fixes the aperture at 3 and varies thresholds; Stage 2 varies the
# aperture on the Stage 1 winner. C5 is the Stage 1 winner and is derived.
CANNY_CONFIGS = {
    "C1": CannyParams(30, 100, 3, "C1"),
    "C2": CannyParams(50, 150, 3, "C2"),
    "C3": CannyParams(100, 200, 3, "C3"),
    "C4": CannyParams(100, 300, 3, "C4"),
    "C6": CannyParams(100, 200, 5, "C6"),
    "C7": CannyParams(100, 200, 7, "C7"),
    "C8": CannyParams(50, 150, 5, "C8"),
    "C9": CannyParams(50, 150, 7, "C9"),
}
STAGE1_CONFIGS = ("C1", "C2", "C3", "C4")


def canny_config(name: str) -> CannyParams:
    try:
        return CANNY_CONFIGS[name.upper()]
    except KeyError:
        raise ParameterError(f"unknown Canny configuration {name!r}") from None


def derive_reference_config(stage1_winner: Union[str, CannyParams]) -> CannyParams:
    """C5: the Stage 1 winner re-tagged as the Stage 2 reference."""
    p = canny_config(stage1_winner) if isinstance(stage1_winner, str) else stage1_winner
    return CannyParams(p.low, p.high, p.aperture, "C5")


def config_registry(stage1_winner: Union[str, CannyParams] = "C3") -> dict:
    reg = dict(CANNY_CONFIGS)
    reg["C5"] = derive_reference_config(stage1_winner)
    return dict(sorted(reg.items(), key=lambda kv: int(kv[0][1:])))


@dataclass(frozen=True, eq=False)
class EdgeMap:
    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 2:
            raise DecodeError("edge map must be two-dimensional")
        if not np.isin(d, (0, 255)).all():
            raise DecodeError("edge map pixels must be 0 or 255")
        d = np.ascontiguousarray(d.astype(np.uint8))
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def edge_count(self) -> int:
        return int(np.count_nonzero(self.data))

    def to_raster(self) -> RasterImage:
        return RasterImage(self.data)

    def tobytes(self) -> bytes:
        return self.data.tobytes()

    def __eq__(self, other):
        if not isinstance(other, EdgeMap):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))


@dataclass(frozen=True)
class NoiseReport:
    background_noise_sigma: float
    color_instability_mu: float

    def __post_init__(self):
        if self.background_noise_sigma < 0 or self.color_instability_mu < 0:
            raise ValueError("noise metrics must be non-negative")


# ---------------------------------------------------------------------------
# Step 1: preprocessing


def normalize_alpha(img) -> RasterImage:
    """Composite onto opaque white and return an RGB image.

    RGB input is returned as-is; gray input is replicated to three channels.
    """
    img = _as_raster(img)
    px = img.pixels
    if img.mode == "RGB":
        return img
    if img.mode == "L":
        return RasterImage(np.repeat(px[:, :, None], 3, axis=2))
    alpha = px[:, :, 3:4].astype(np.float64) / 255.0
    fg = px[:, :, :3].astype(np.float64)
    return RasterImage(_to_uint8(alpha * fg + (1.0 - alpha) * 255.0))


def _scaled_size(width: int, height: int, max_dim: int):
    scale = max_dim / max(width, height)
    w = max(1, int(math.floor(width * scale + 0.5)))
    h = max(1, int(math.floor(height * scale + 0.5)))
    return min(w, max_dim), min(h, max_dim)


def adaptive_rescale(img, max_dim: int = 4000) -> RasterImage:
    """Downscale so that neither side exceeds ``max_dim`` (Lanczos resampling)."""
    img = _as_raster(img)
    if max_dim < 1:
        raise ValueError("max_dim must be >= 1")
    if max(img.width, img.height) <= max_dim:
        return img
    size = _scaled_size(img.width, img.height, max_dim)
    resized = Image.fromarray(img.pixels).resize(size, Image.Resampling.LANCZOS)
    return RasterImage(np.asarray(resized))


def preprocess(img, max_dim: int = 4000) -> RasterImage:
    return adaptive_rescale(normalize_alpha(img), max_dim=max_dim)


# ---------------------------------------------------------------------------
# Step 2: Canny


def to_grayscale(img) -> np.ndarray:
    """Float64 luma plane; RGBA is first composited over white."""
    img = _as_raster(img)
    if img.mode == "L":
        return img.pixels.astype(np.float64)
    rgb = normalize_alpha(img).pixels.astype(np.float64)
    r, g, b = LUMA_WEIGHTS
    return r * rgb[:, :, 0] + g * rgb[:, :, 1] + b * rgb[:, :, 2]


def _gaussian_kernel(aperture: int) -> np.ndarray:
    sigma = 1.4 * aperture / 3.0
    radius = aperture - 1
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def _binomial(n: int) -> np.ndarray:
    k = np.array([1.0])
    for _ in range(n - 1):
        k = np.convolve(k, [1.0, 1.0])
    return k


def _sobel_kernels(aperture: int):
    """Separable (smoothing, derivative) pair, unnormalized as in the usual Sobel family."""
    smooth = _binomial(aperture)
    deriv = np.convolve(_binomial(aperture - 2), [-1.0, 0.0, 1.0])
    # np.convolve flips; correlate with the reversed kernel so that a rising
    # intensity along +x gives a positive response
    return smooth, deriv[::-1]


def _gradients(gray: np.ndarray, aperture: int):
    g = _gaussian_kernel(aperture)
    smoothed = ndimage.correlate1d(gray, g, axis=0, mode="nearest")
    smoothed = ndimage.correlate1d(smoothed, g, axis=1, mode="nearest")
    smooth, deriv = _sobel_kernels(aperture)
    gx = ndimage.correlate1d(smoothed, deriv, axis=1, mode="nearest")
    gx = ndimage.correlate1d(gx, smooth, axis=0, mode="nearest")
    gy = ndimage.correlate1d(smoothed, deriv, axis=0, mode="nearest")
    gy = ndimage.correlate1d(gy, smooth, axis=1, mode="nearest")
    return gx, gy


def _non_maximum_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    h, w = mag.shape
    padded = np.pad(mag, 1, mode="constant")

    def shifted(dy, dx):
        return padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]

    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    horiz = (angle < 22.5) | (angle >= 157.5)
    diag = (angle >= 22.5) & (angle < 67.5)
    vert = (angle >= 67.5) & (angle < 112.5)
    anti = (angle >= 112.5) & (angle < 157.5)

    keep = np.zeros_like(mag, dtype=bool)
    # strict on the negative side, non-strict on the positive side, so that
    # a two-pixel plateau keeps exactly one pixel
    for sel, (dy, dx) in ((horiz, (0, 1)), (diag, (1, 1)), (vert, (1, 0)), (anti, (1, -1))):
        before = shifted(-dy, -dx)
        after = shifted(dy, dx)
        keep |= sel & (mag > before) & (mag >= after)
    return keep


def _hysteresis(mag: np.ndarray, thin: np.ndarray, low: float, high: float) -> np.ndarray:
    candidate = thin & (mag >= low)
    strong = thin & (mag >= high)
    labels, n = ndimage.label(candidate, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros_like(candidate)
    seeded = np.zeros(n + 1, dtype=bool)
    seeded[np.unique(labels[strong])] = True
    seeded[0] = False
    return seeded[labels]


def canny(img, params: CannyParams) -> EdgeMap:
    """Gaussian smoothing, Sobel gradients, non-maximum suppression, hysteresis."""
    if not isinstance(params, CannyParams):
        raise ParameterError("params must be a CannyParams instance")
    gray = to_grayscale(img)
    gx, gy = _gradients(gray, params.aperture)
    mag = np.hypot(gx, gy)
    thin = _non_maximum_suppression(mag, gx, gy)
    edges = _hysteresis(mag, thin, params.low, params.high)
    return EdgeMap(np.where(edges, 255, 0).astype(np.uint8))


# ---------------------------------------------------------------------------
# Noise diagnostics


def _tile_view(a: np.ndarray, tile: int) -> np.ndarray:
    th, tw = a.shape[0] // tile, a.shape[1] // tile
    a = a[: th * tile, : tw * tile]
    return a.reshape(th, tile, tw, tile).swapaxes(1, 2).reshape(th, tw, tile * tile)


def background_noise_sigma(img, tile: int = NOISE_TILE, flat_std: float = NOISE_FLAT_STD,
                           blur_sigma: float = NOISE_BLUR_SIGMA) -> float:
    """Std of the high-frequency residual (image minus Gaussian blur) over flat tiles.

    A tile counts as flat when its blurred (low-frequency) content varies by
    less than ``flat_std`` intensity units, so additive sensor noise does not
    disqualify the tile it is measured in. Returns 0 when no tile is flat.
    """
    gray = to_grayscale(img)
    if gray.shape[0] < tile or gray.shape[1] < tile:
        raise DiagnosticsError(f"image {gray.shape[1]}x{gray.shape[0]} is smaller than one {tile}x{tile} tile")
    blurred = ndimage.gaussian_filter(gray, blur_sigma, mode="reflect")
    residual = gray - blurred
    flat = _tile_view(blurred, tile).std(axis=2) < flat_std
    if not flat.any():
        return 0.0
    pooled = _tile_view(residual, tile)[flat]
    return float(pooled.std())


def color_instability(img, lightness_cutoff: float = LIGHTNESS_CUTOFF) -> float:
    """Mean (a*, b*) distance from the centroid over pixels with L* above the cutoff."""
    from skimage.color import rgb2lab

    rgb = normalize_alpha(img).pixels.astype(np.float64) / 255.0
    lab = rgb2lab(rgb, illuminant="D65")
    light = lab[..., 0] > lightness_cutoff
    if np.count_nonzero(light) < 2:
        return 0.0
    # shifting by one sample keeps uniform regions at exactly zero
    ab = lab[light][:, 1:]
    ab = ab - ab[0]
    dev = np.linalg.norm(ab - ab.mean(axis=0), axis=1)
    return float(dev.mean())


def noise_report(img) -> NoiseReport:
    return NoiseReport(background_noise_sigma(img), color_instability(img))


# ---------------------------------------------------------------------------
# File I/O


def read_image(path: Union[str, Path]) -> RasterImage:
    """Decode a PNG/JPEG file, keeping transparency when the file carries any."""
    try:
        with Image.open(path) as im:
            im.load()
            has_alpha = im.mode in ("RGBA", "LA", "PA") or "transparency" in im.info
            if has_alpha:
                im = im.convert("RGBA")
            elif im.mode in ("L", "1", "I;16", "I", "F"):
                im = im.convert("L")
            else:
                im = im.convert("RGB")
            return RasterImage(np.asarray(im))
    except (OSError, Image.DecompressionBombError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc


def write_image(path: Union[str, Path], img) -> None:
    Image.fromarray(_as_raster(img).pixels).save(path, format="PNG")


def write_edge_map(path: Union[str, Path], edges: EdgeMap) -> None:
    Image.fromarray(edges.data).save(path, format="PNG")


def read_edge_map(path: Union[str, Path]) -> EdgeMap:
    with Image.open(path) as im:
        if im.mode != "L":
            raise DecodeError(f"edge map {path} is not single-channel (mode {im.mode})")
        return EdgeMap(np.asarray(im))
