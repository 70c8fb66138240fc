"""Rasterization of a 3D face into a 224x224 depth/azimuth/elevation image.

Depth is a grid surface fitted to the (x, y, z) pointcloud; azimuth and
elevation are grid surfaces fitted to the spherical angles of the pointcloud
normals on the identical grid. Each channel is min-max normalized to 0..255
independently, then a 224x224 window centered on the nose tip (the grid node
of maximum fitted depth) is cropped, shifting the window inward at grid
edges so every pixel comes from fitted surface data.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .corpus import Face
from .gridfit import GridFitter, GridSpec
from .normals import estimate_normals, to_spherical

CROP_SIZE = 224
#: Center value assigned to channels with no usable range.
FLAT_CHANNEL_VALUE = 128
_FLAT_SPAN = 1e-6


class RasterError(ValueError):
    """Raised for raster configurations that cannot produce a valid image."""


@dataclass(frozen=True)
class RasterParams:
    """Rasterization configuration.

    ``grid_rows``/``grid_cols`` set the fitting grid resolution (must host a
    224 crop), ``margin`` scales the face bounding box the grid covers,
    ``smoothing`` is the gridfit penalty weight and ``neighbors`` the k of
    the normal estimator.
    """

    grid_rows: int = 320
    grid_cols: int = 320
    margin: float = 1.1
    smoothing: float = 1e-5
    neighbors: int = 16

    def __post_init__(self):
        if self.grid_rows < CROP_SIZE or self.grid_cols < CROP_SIZE:
            raise RasterError(
                f"grid {self.grid_rows}x{self.grid_cols} is too small to host a "
                f"{CROP_SIZE}x{CROP_SIZE} crop")
        if self.margin < 1.0:
            raise RasterError(f"margin must be >= 1, got {self.margin}")
        if self.smoothing <= 0.0:
            raise RasterError(f"smoothing must be positive, got {self.smoothing}")
        if self.neighbors < 3:
            raise RasterError(f"neighbors must be >= 3, got {self.neighbors}")


@dataclass(frozen=True)
class ChannelImage:
    """A 224x224x3 uint8 raster: channels are (depth, azimuth, elevation).

    ``nosetip`` is the (row, col) of the crop-center grid node in fitting
    grid coordinates (node [r, c] sits at x = origin_x + c*dx,
    y = origin_y + r*dy).
    """

    pixels: np.ndarray
    source: int
    label: str
    nosetip: tuple[int, int]

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.shape != (CROP_SIZE, CROP_SIZE, 3) or p.dtype != np.uint8:
            raise RasterError(
                f"pixels must be {CROP_SIZE}x{CROP_SIZE}x3 uint8, got "
                f"{p.shape} {p.dtype}")
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)


def normalize_channel(values: np.ndarray) -> np.ndarray:
    """Min-max map to 0..255 with round-half-up; flat channels map to 128.

    A channel counts as flat when its span is negligible against its
    magnitude, so solver round-off on constant data is not amplified into
    full-range noise.
    """
    values = np.asarray(values, dtype=np.float64)
    vmin = float(values.min())
    vmax = float(values.max())
    span = vmax - vmin
    if span <= _FLAT_SPAN * max(1.0, abs(vmin), abs(vmax)):
        return np.full(values.shape, FLAT_CHANNEL_VALUE, dtype=np.uint8)
    scaled = (values - vmin) * (255.0 / span)
    return np.clip(np.floor(scaled + 0.5), 0.0, 255.0).astype(np.uint8)


def detect_nosetip(depth: np.ndarray) -> tuple[int, int]:
    """Grid node of maximum depth; ties go to the node nearest the grid
    center, then to row-major order."""
    rows, cols = depth.shape
    peak = depth.max()
    candidates = np.argwhere(depth == peak)
    center = ((rows - 1) / 2.0, (cols - 1) / 2.0)
    best = min(
        (tuple(int(v) for v in rc) for rc in candidates),
        key=lambda rc: ((rc[0] - center[0]) ** 2 + (rc[1] - center[1]) ** 2,
                        rc[0], rc[1]),
    )
    return best


def _crop_start(center: int, size: int, extent: int) -> int:
    return int(np.clip(center - size // 2, 0, extent - size))


def rasterize_face(face: Face, params: RasterParams = RasterParams()) -> ChannelImage:
    """Render one face as a nose-centered 224x224 three-channel image.

    The three channels share one fitting grid covering ``margin`` times the
    face's xy bounding box, and one factorized fitting system. Identical
    face and params give a bit-identical image. Rows of the output run top
    to bottom in decreasing y.
    """
    x = face.vertices[:, 0]
    y = face.vertices[:, 1]
    z = face.vertices[:, 2]
    spec = GridSpec.cover(x, y, rows=params.grid_rows, cols=params.grid_cols,
                          margin=params.margin)
    fitter = GridFitter(x, y, spec, params.smoothing)

    depth = fitter.fit(z)
    azimuth_angles, elevation_angles = to_spherical(
        estimate_normals(face, params.neighbors))
    azimuth = fitter.fit(azimuth_angles)
    elevation = fitter.fit(elevation_angles)

    channels = np.stack([normalize_channel(depth.values),
                         normalize_channel(azimuth.values),
                         normalize_channel(elevation.values)], axis=-1)

    nose_row, nose_col = detect_nosetip(depth.values)
    r0 = _crop_start(nose_row, CROP_SIZE, params.grid_rows)
    c0 = _crop_start(nose_col, CROP_SIZE, params.grid_cols)
    crop = channels[r0:r0 + CROP_SIZE, c0:c0 + CROP_SIZE, :]

    return ChannelImage(
        pixels=np.ascontiguousarray(crop[::-1, :, :]),
        source=face.identity,
        label=face.expression.class_name,
        nosetip=(nose_row, nose_col),
    )


def png_bytes(image: ChannelImage) -> bytes:
    """Encode as 8-bit RGB PNG: R=depth, G=azimuth, B=elevation."""
    buffer = io.BytesIO()
    Image.fromarray(image.pixels, mode="RGB").save(buffer, format="PNG")
    return buffer.getvalue()


def save_png(image: ChannelImage, path) -> None:
    with open(path, "wb") as fh:
        fh.write(png_bytes(image))


def load_png(path) -> np.ndarray:
    """Read a channel image back as a (224, 224, 3) uint8 array."""
    with Image.open(path) as img:
        pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    if pixels.shape != (CROP_SIZE, CROP_SIZE, 3):
        raise RasterError(f"{path}: expected {CROP_SIZE}x{CROP_SIZE}x3, got {pixels.shape}")
    return pixels
