"""Grayscale image handling: PGM codec, resizing, normalization, Sobel.

The preprocessing pipeline applied before any network or GP sees an image:
decode, Sobel magnitude on the full-resolution frame (when edge input is
enabled), resize to 100x100 with corner-aligned bilinear interpolation, and
scale into [0, 1]. The Sobel map replaces the raw intensities as the model
input rather than being stacked alongside them.
"""

from __future__ import annotations

import numpy as np

NETWORK_INPUT_SIZE = 100

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


class GrayImage:
    """A single-channel image with float64 pixels stored row-major."""

    __slots__ = ("pixels",)

    def __init__(self, pixels) -> None:
        arr = np.asarray(pixels, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"pixels must be 2-d, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image dimensions must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image pixels must be finite")
        self.pixels = arr

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def __repr__(self) -> str:
        return f"GrayImage({self.width}x{self.height})"


# ---------------------------------------------------------------------------
# PGM codec (binary P5, maxval up to 255)
# ---------------------------------------------------------------------------


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Read one whitespace-delimited header token, skipping '#' comments."""
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise ValueError("truncated PGM header")
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    return data[start:pos], pos


def read_pgm(data: bytes) -> GrayImage:
    """Decode a binary PGM (P5) byte string.

    Intensities are kept as their raw integer values cast to float; files
    with maxval below 255 are not rescaled.
    """
    magic, pos = _next_token(data, 0)
    if magic != b"P5":
        if magic in (b"P1", b"P2", b"P3", b"P4", b"P6"):
            raise ValueError(f"unsupported PGM variant {magic.decode('ascii')}, only P5 is handled")
        raise ValueError("not a PGM file: missing P5 magic")
    fields = []
    for _ in range(3):
        token, pos = _next_token(data, pos)
        try:
            fields.append(int(token))
        except ValueError:
            raise ValueError(f"malformed PGM header token {token!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ValueError(f"PGM dimensions must be positive, got {width}x{height}")
    if not 0 < maxval <= 255:
        raise ValueError(f"PGM maxval must lie in 1..255, got {maxval}")
    pos += 1  # exactly one whitespace byte separates the header from the raster
    expected = width * height
    raster = data[pos : pos + expected]
    if len(raster) != expected:
        raise ValueError(
            f"truncated PGM raster: expected {expected} bytes, got {len(raster)}"
        )
    pixels = np.frombuffer(raster, dtype=np.uint8).astype(np.float64)
    return GrayImage(pixels.reshape(height, width))


def write_pgm(image: GrayImage) -> bytes:
    """Encode as binary PGM with maxval 255.

    Images whose maximum does not exceed 1.0 are treated as unit-scaled and
    multiplied by 255 before rounding; anything else must already lie in
    [0, 255].
    """
    pixels = image.pixels
    if float(pixels.max()) <= 1.0 and float(pixels.min()) >= 0.0:
        pixels = pixels * 255.0
    rounded = np.rint(pixels)
    if rounded.min() < 0.0 or rounded.max() > 255.0:
        raise ValueError(
            f"pixel range [{pixels.min():.4f}, {pixels.max():.4f}] does not fit 0..255"
        )
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + rounded.astype(np.uint8).tobytes()


# ---------------------------------------------------------------------------
# geometry and intensity transforms
# ---------------------------------------------------------------------------


def _axis_coords(n_in: int, n_out: int) -> np.ndarray:
    """Corner-aligned source coordinates for resampling one axis."""
    if n_out == 1:
        return np.zeros(1)
    return np.linspace(0.0, n_in - 1.0, n_out)


def resize_bilinear(image: GrayImage, width: int, height: int) -> GrayImage:
    """Corner-aligned bilinear resample to ``width`` x ``height``."""
    if width < 1 or height < 1:
        raise ValueError(f"target dimensions must be positive, got {width}x{height}")
    src = image.pixels
    ys = _axis_coords(image.height, height)
    xs = _axis_coords(image.width, width)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, image.height - 1)
    x1 = np.minimum(x0 + 1, image.width - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = src[y0][:, x0] * (1.0 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1.0 - fx) + src[y1][:, x1] * fx
    return GrayImage(top * (1.0 - fy) + bottom * fy)


def normalize_unit(image: GrayImage) -> GrayImage:
    """Map 0..255 intensities onto [0, 1] by dividing by 255."""
    pixels = image.pixels
    if pixels.min() < 0.0 or pixels.max() > 255.0:
        raise ValueError(
            f"pixel range [{pixels.min():.4f}, {pixels.max():.4f}] outside 0..255"
        )
    return GrayImage(pixels / 255.0)


def sobel_magnitude(image: GrayImage) -> GrayImage:
    """Gradient magnitude from the two 3x3 Sobel kernels.

    Kernels are applied by correlation with replicate edge padding; the
    magnitude map is rescaled by its own maximum into [0, 1] (a constant
    image stays all-zero).
    """
    if image.height < 3 or image.width < 3:
        raise ValueError(
            f"image must be at least 3x3 for Sobel, got {image.width}x{image.height}"
        )
    padded = np.pad(image.pixels, 1, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (3, 3))
    gx = np.tensordot(win, _SOBEL_X, axes=([2, 3], [0, 1]))
    gy = np.tensordot(win, _SOBEL_Y, axes=([2, 3], [0, 1]))
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak > 0.0:
        mag = mag / peak
    return GrayImage(mag)


def preprocess_image(image: GrayImage, use_sobel: bool = True) -> GrayImage:
    """Full model-input pipeline; returns a 100x100 image in [0, 1].

    The Sobel map is computed on the full-resolution frame before resizing,
    so fine texture contributes to the edge response.
    """
    if use_sobel:
        edges = sobel_magnitude(image)
        return resize_bilinear(edges, NETWORK_INPUT_SIZE, NETWORK_INPUT_SIZE)
    resized = resize_bilinear(image, NETWORK_INPUT_SIZE, NETWORK_INPUT_SIZE)
    return normalize_unit(resized)


def to_network_input(image: GrayImage) -> np.ndarray:
    """Single-channel (1, H, W) float64 array for the tensor ops."""
    return image.pixels[None, :, :]
