"""Scan conversion from scanline samples to a regular Cartesian grid.

A :class:`ConversionTable` is built once per layout and pixel spacing by
inverting the scan geometry at every pixel centre. Converting a frame is then
a pure gather with bilinear (2-D) or trilinear (3-D) blending.

Source coordinates are fractional indices ``(line, sample)`` for 2-D layouts
and ``(line_x, line_y, sample)`` for volumes. Linear layouts map lateral
position to line index; phased layouts map steering angle(s) to line index
and radius to sample index.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ParameterError, ResourceError, StructuralError
from .frames import BModeImage, EnvelopeFrame
from .geometry import ArrayKind, ScanlineLayout, depth_sample_spacing

logger = logging.getLogger(__name__)

DEFAULT_SPACING_2D = 0.0225
DEFAULT_SPACING_3D = 0.175
DEFAULT_MEMORY_BUDGET = 2 * 1024**3

_SNAP = 1e-9
_SLAB_PIXELS = 1 << 20


@dataclass(frozen=True, eq=False)
class ConversionTable:
    """Precomputed gather for one layout, pixel spacing and source sampling.

    Only valid pixels are stored. For valid pixel ``n`` the lower source
    corner is the flat index ``base[n]`` and ``frac[n, a]`` is the fractional
    offset along source axis ``a``; ``strides[a]`` is the flat step along that
    axis (0 for axes of size 1, which then never blend).
    """

    source_shape: tuple[int, ...]
    image_shape: tuple[int, ...]
    spacing: float
    origin: tuple[float, ...]
    pixel_index: np.ndarray
    base: np.ndarray
    frac: np.ndarray
    strides: tuple[int, ...]
    layout_ref: str
    sample_frequency: float
    mask: np.ndarray

    @property
    def valid_count(self) -> int:
        return len(self.pixel_index)

    @property
    def nbytes(self) -> int:
        return self.pixel_index.nbytes + self.base.nbytes + self.frac.nbytes

    def corners(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat source indices and blend weights of every corner, ``(valid, 2**axes)``.

        Diagnostic view of the table; :func:`convert` does not use it.
        """
        n_ax = len(self.strides)
        idx = np.zeros((self.valid_count, 2**n_ax), dtype=np.int64)
        w = np.ones((self.valid_count, 2**n_ax))
        for corner in range(2**n_ax):
            idx[:, corner] = self.base
            for a in range(n_ax):
                bit = (corner >> (n_ax - 1 - a)) & 1
                f = self.frac[:, a].astype(np.float64)
                idx[:, corner] += bit * self.strides[a]
                w[:, corner] *= f if bit else 1.0 - f
        return idx, w


def _frame_sampling(layout: ScanlineLayout, samples_per_line, sample_frequency):
    n = layout.samples_per_line if samples_per_line is None else int(samples_per_line)
    fs = layout.sample_frequency if sample_frequency is None else float(sample_frequency)
    if n < 1 or not fs > 0:
        raise ParameterError("source sampling must have at least one sample and a positive frequency")
    return n, fs


def _axis_index(u: np.ndarray, size: int, valid: np.ndarray):
    """Split fractional index ``u`` into a lower corner and a blend fraction."""
    r = np.rint(u)
    u = np.where(np.abs(u - r) < _SNAP, r, u)
    valid &= (u >= 0) & (u <= size - 1)
    if size == 1:
        return np.zeros(u.shape, dtype=np.int64), np.zeros(u.shape, dtype=np.float32)
    i0 = np.floor(u)
    i0 = np.clip(i0, 0, size - 2)
    f = np.where(valid, u - i0, 0.0)
    return np.where(valid, i0, 0).astype(np.int64), f.astype(np.float32)


def source_coordinates(layout: ScanlineLayout, points: np.ndarray, samples_per_line=None, sample_frequency=None):
    """Fractional source indices of physical ``points`` (mm, ``(..., 3)`` as x, y, z).

    Returns ``(coords, valid)`` with ``coords`` of shape ``(..., axes)``.
    Points outside the imaged sector are flagged invalid; their coordinates
    are unspecified.
    """
    n_s, fs = _frame_sampling(layout, samples_per_line, sample_frequency)
    dz = depth_sample_spacing(fs, layout.speed_of_sound)
    zmax = min(layout.depth, (n_s - 1) * dz)
    p = np.asarray(points, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    if layout.kind == ArrayKind.LINEAR:
        lat = layout.lateral_positions
        pitch = layout.line_pitch if len(lat) > 1 else 1.0
        u = (x - lat[0]) / pitch
        k = z / dz
        valid = (z >= 0) & (z <= zmax * (1 + 1e-12))
        return np.stack([u, k], axis=-1), valid
    r = np.sqrt(x * x + y * y + z * z)
    ang_x, ang_y = layout.steering_angles
    valid = r <= zmax * (1 + 1e-12)
    if layout.is_3d:
        th_y = np.arctan2(y, z)
        th_x = np.arctan2(x, np.sqrt(y * y + z * z))
        axes = [(th_x, ang_x), (th_y, ang_y)]
    else:
        axes = [(np.arctan2(x, z), ang_x)]
        valid &= y == 0
    coords = []
    for th, grid in axes:
        if len(grid) == 1:
            coords.append(np.where(np.abs(th) < _SNAP, 0.0, np.inf))
        else:
            coords.append((th - grid[0]) / (grid[1] - grid[0]))
    coords.append(r / dz)
    return np.stack(coords, axis=-1), valid


def sector_bounds(layout: ScanlineLayout, samples_per_line=None, sample_frequency=None):
    """Axis-aligned bounding box ``(lo, hi)`` of the imaged sector, each ``(x, y, z)`` in mm."""
    n_s, fs = _frame_sampling(layout, samples_per_line, sample_frequency)
    zmax = min(layout.depth, (n_s - 1) * depth_sample_spacing(fs, layout.speed_of_sound))
    if layout.kind == ArrayKind.LINEAR:
        lat = layout.lateral_positions
        return np.array([lat[0], 0.0, 0.0]), np.array([lat[-1], 0.0, zmax])
    ax, ay = layout.steering_angles
    half_x = float(np.max(np.abs(ax)))
    half_y = float(np.max(np.abs(ay))) if layout.is_3d else 0.0
    # x = r sin(tx) peaks at r = zmax; y = r cos(tx) sin(ty) peaks at tx = 0
    X = zmax * math.sin(half_x)
    Y = zmax * math.sin(half_y)
    return np.array([-X, -Y, 0.0]), np.array([X, Y, zmax])


def grid_shape(lo, hi, spacing: float, is_3d: bool) -> tuple[int, ...]:
    """Pixel counts ``(nz, nx)`` or ``(nz, ny, nx)`` covering ``[lo, hi]``."""
    n = [int(math.floor((hi[a] - lo[a]) / spacing + 1e-9)) + 1 for a in range(3)]
    return (n[2], n[1], n[0]) if is_3d else (n[2], n[0])


def build_table(
    layout: ScanlineLayout,
    spacing: float | None = None,
    *,
    samples_per_line: int | None = None,
    sample_frequency: float | None = None,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> ConversionTable:
    """Invert the scan geometry at every pixel centre of the sector bounding box.

    ``samples_per_line`` and ``sample_frequency`` describe the frames that
    will be converted when they differ from the layout's RF sampling (for
    example after decimating envelope detection).

    Raises
    ------
    ResourceError
        If the table and image would need more than ``memory_budget`` bytes.
    """
    if spacing is None:
        spacing = DEFAULT_SPACING_3D if layout.is_3d else DEFAULT_SPACING_2D
    if not spacing > 0:
        raise ParameterError(f"spacing must be positive, got {spacing}")
    n_s, fs = _frame_sampling(layout, samples_per_line, sample_frequency)
    is_3d = layout.is_3d
    source_shape = tuple(layout.line_shape) + (n_s,)
    n_ax = len(source_shape)
    lo, hi = sector_bounds(layout, n_s, fs)
    shape = grid_shape(lo, hi, spacing, is_3d)
    n_pix = math.prod(shape)

    index_dtype = np.int32 if max(n_pix, math.prod(source_shape)) < 2**31 else np.int64
    per_valid = 2 * np.dtype(index_dtype).itemsize + 4 * n_ax
    # output image (float32) and mask are allocated per frame regardless
    fixed = 5 * n_pix
    worst = fixed + per_valid * n_pix
    if fixed > memory_budget:
        raise ResourceError(
            f"scan conversion at {spacing} mm needs {shape} pixels, at least {fixed} bytes", worst, memory_budget
        )

    src_strides = np.array([int(np.prod(source_shape[a + 1 :])) for a in range(n_ax)], dtype=np.int64)
    strides = tuple(int(s) if source_shape[a] > 1 else 0 for a, s in enumerate(src_strides))

    if is_3d:
        nz, ny, nx = shape
        xs = lo[0] + np.arange(nx) * spacing
        ys = lo[1] + np.arange(ny) * spacing
        plane = nx * ny
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        yy, xx = yy.ravel(), xx.ravel()
    else:
        nz, nx = shape
        xs = lo[0] + np.arange(nx) * spacing
        plane = nx
        xx, yy = xs, np.zeros(nx)
    rows = max(1, _SLAB_PIXELS // max(plane, 1))

    pix_parts, base_parts, frac_parts = [], [], []
    used = fixed
    over = False
    for z0 in range(0, nz, rows):
        z1 = min(nz, z0 + rows)
        zz = np.repeat(np.arange(z0, z1) * spacing + lo[2], plane)
        pts = np.stack([np.tile(xx, z1 - z0), np.tile(yy, z1 - z0), zz], axis=-1)
        coords, valid = source_coordinates(layout, pts, n_s, fs)
        idx, frs = [], []
        with np.errstate(invalid="ignore"):
            for a in range(n_ax):
                i0, f = _axis_index(coords[:, a], source_shape[a], valid)
                idx.append(i0)
                frs.append(f)
        sel = np.flatnonzero(valid)
        used += per_valid * len(sel)
        if used > memory_budget:
            # keep counting so the error reports the full requirement
            over = True
        if over:
            continue
        base = np.zeros(len(sel), dtype=np.int64)
        for a in range(n_ax):
            base += idx[a][sel] * src_strides[a]
        pix_parts.append((sel + z0 * plane).astype(index_dtype))
        base_parts.append(base.astype(index_dtype))
        frac_parts.append(np.stack([f[sel] for f in frs], axis=-1))
    if over:
        raise ResourceError(
            f"scan conversion table at {spacing} mm for {shape} pixels needs {used} bytes", used, memory_budget
        )

    pixel_index = np.concatenate(pix_parts) if pix_parts else np.zeros(0, index_dtype)
    mask = np.zeros(int(np.prod(shape)), dtype=bool)
    mask[pixel_index] = True
    table = ConversionTable(
        source_shape=source_shape,
        image_shape=shape,
        spacing=float(spacing),
        origin=(float(lo[0]), float(lo[1]), float(lo[2])) if is_3d else (float(lo[0]), float(lo[2])),
        pixel_index=pixel_index,
        base=np.concatenate(base_parts) if base_parts else np.zeros(0, index_dtype),
        frac=np.concatenate(frac_parts) if frac_parts else np.zeros((0, n_ax), np.float32),
        strides=strides,
        layout_ref=layout.layout_hash,
        sample_frequency=fs,
        mask=mask.reshape(shape),
    )
    for arr in (table.pixel_index, table.base, table.frac, table.mask):
        arr.flags.writeable = False
    logger.debug("scan conversion table %s: %d valid pixels, %d bytes", shape, table.valid_count, table.nbytes)
    return table


@numba.njit(cache=True, nogil=True, inline="always")
def _lerp(a, b, f):
    # anchored at the nearer end, so f == 0 and f == 1 reproduce a and b exactly
    if f < 0.5:
        return a + f * (b - a)
    return b - (np.float32(1.0) - f) * (b - a)


@numba.njit(cache=True, nogil=True)
def _gather2(src, pix, base, frac, s0, s1, out):
    for n in range(pix.shape[0]):
        b = base[n]
        f1 = frac[n, 1]
        v0 = _lerp(src[b], src[b + s1], f1)
        v1 = _lerp(src[b + s0], src[b + s0 + s1], f1)
        out[pix[n]] = _lerp(v0, v1, frac[n, 0])


@numba.njit(cache=True, nogil=True)
def _gather3(src, pix, base, frac, s0, s1, s2, out):
    for n in range(pix.shape[0]):
        b = base[n]
        f2 = frac[n, 2]
        v00 = _lerp(src[b], src[b + s2], f2)
        v01 = _lerp(src[b + s1], src[b + s1 + s2], f2)
        v10 = _lerp(src[b + s0], src[b + s0 + s2], f2)
        v11 = _lerp(src[b + s0 + s1], src[b + s0 + s1 + s2], f2)
        f1 = frac[n, 1]
        out[pix[n]] = _lerp(_lerp(v00, v01, f1), _lerp(v10, v11, f1), frac[n, 0])


def convert_array(samples: np.ndarray, table: ConversionTable) -> np.ndarray:
    """Blend ``samples`` (shape ``table.source_shape``) onto the image grid as float32."""
    if tuple(samples.shape) != table.source_shape:
        raise StructuralError(f"frame shape {samples.shape} does not match conversion table {table.source_shape}")
    src = np.ascontiguousarray(samples, dtype=np.float32).ravel()
    out = np.zeros(int(np.prod(table.image_shape)), dtype=np.float32)
    if table.valid_count:
        if len(table.strides) == 2:
            _gather2(src, table.pixel_index, table.base, table.frac, *table.strides, out)
        else:
            _gather3(src, table.pixel_index, table.base, table.frac, *table.strides, out)
    return out.reshape(table.image_shape)


def convert(frame: EnvelopeFrame, table: ConversionTable) -> BModeImage:
    """Scan-convert one frame; pixels outside the sector are 0 and masked out.

    8-bit input frames are rounded back to 8-bit intensities.
    """
    img = convert_array(frame.samples, table)
    if frame.samples.dtype == np.uint8:
        img = np.floor(img + np.float32(0.5)).astype(np.uint8)
    return BModeImage(
        intensities=img,
        spacing=table.spacing,
        origin=table.origin,
        mask=table.mask,
        timestamp=frame.timestamp,
        meta=frame.meta,
    )
