"""Procedural descent world: terrain, rendering, descriptors, trajectories.

Everything here is deterministic in (seed, parameters). The terrain is a
sum of value-noise octaves plus crater bowls; patches are orthographic,
hill-shaded grayscale crops; descriptors are a fixed seeded projection of
cheap pooled statistics standing in for a pretrained embedding network.
Random draws come from named Philox streams (see :mod:`anchorloc.rng`),
one per purpose, so components never perturb each other's sequences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from anchorloc.liegroup import Pose, Rotation3, so3_exp
from anchorloc.rng import stream

__all__ = [
    "Descriptor",
    "DescriptorExtractor",
    "DescentTrajectory",
    "Heightfield",
    "MaskConfig",
    "TerrainPatch",
    "apply_masks",
    "apply_masks_batch",
    "extract_descriptor",
    "gen_heightfield",
    "gen_trajectory",
    "nadir_camera_rotation",
    "render_patch",
]

# Fixed sun for hill shading; illumination varies through a brightness
# multiplier instead of moving the light.
SUN_AZIMUTH = math.radians(135.0)
SUN_ELEVATION = math.radians(25.0)

MASK_LEVEL_COUNTS = {"none": 0, "low": 5, "medium": 10, "high": 20}


class OutOfBoundsError(ValueError):
    """Requested terrain samples outside the heightfield footprint."""


def _bilinear(grid: np.ndarray, resolution: float, xy: np.ndarray) -> np.ndarray:
    c = xy[:, 0] / resolution
    r = xy[:, 1] / resolution
    c0 = np.clip(np.floor(c).astype(int), 0, grid.shape[1] - 2)
    r0 = np.clip(np.floor(r).astype(int), 0, grid.shape[0] - 2)
    fc = c - c0
    fr = r - r0
    top = grid[r0, c0] * (1 - fc) + grid[r0, c0 + 1] * fc
    bot = grid[r0 + 1, c0] * (1 - fc) + grid[r0 + 1, c0 + 1] * fc
    return top * (1 - fr) + bot * fr


@dataclass(frozen=True)
class Heightfield:
    """Regular elevation grid plus a surface albedo map.

    World x maps to columns, y to rows. The albedo grid (same shape,
    dimensionless around 1) models large-scale regolith brightness
    variation; it is what makes nearby views distinguishable from far
    ones after local contrast normalization.
    """

    grid: np.ndarray
    resolution: float
    seed: int
    albedo: np.ndarray = None

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        g.flags.writeable = False
        object.__setattr__(self, "grid", g)
        a = self.albedo
        a = np.ones_like(g) if a is None else np.asarray(a, dtype=float)
        a.flags.writeable = False
        object.__setattr__(self, "albedo", a)

    @property
    def extent(self) -> tuple[float, float]:
        """(x_max, y_max) in meters; the grid spans [0, extent]."""
        rows, cols = self.grid.shape
        return (cols - 1) * self.resolution, (rows - 1) * self.resolution

    def in_bounds(self, xy: np.ndarray, margin: float = 0.0) -> bool:
        xy = np.atleast_2d(xy)
        xmax, ymax = self.extent
        return bool(
            (xy[:, 0] >= margin).all()
            and (xy[:, 1] >= margin).all()
            and (xy[:, 0] <= xmax - margin).all()
            and (xy[:, 1] <= ymax - margin).all()
        )

    def heights_at(self, xy: np.ndarray) -> np.ndarray:
        """Bilinear elevation lookup at (x, y) points (meters)."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        if not self.in_bounds(xy):
            raise OutOfBoundsError("height query outside the terrain footprint")
        return _bilinear(self.grid, self.resolution, xy)

    def albedo_at(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        if not self.in_bounds(xy):
            raise OutOfBoundsError("albedo query outside the terrain footprint")
        return _bilinear(self.albedo, self.resolution, xy)


def _value_noise(rng: np.random.Generator, shape: tuple[int, int], divisions: int) -> np.ndarray:
    """One octave of bilinear value noise on a coarse lattice."""
    coarse = rng.uniform(-1.0, 1.0, size=(divisions + 1, divisions + 1))
    rows = np.linspace(0, divisions, shape[0])
    cols = np.linspace(0, divisions, shape[1])
    r0 = np.minimum(rows.astype(int), divisions - 1)
    c0 = np.minimum(cols.astype(int), divisions - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    top = coarse[np.ix_(r0, c0)] * (1 - fc) + coarse[np.ix_(r0, c0 + 1)] * fc
    bot = coarse[np.ix_(r0 + 1, c0)] * (1 - fc) + coarse[np.ix_(r0 + 1, c0 + 1)] * fc
    return top * (1 - fr) + bot * fr


def gen_heightfield(seed: int, size: int = 1024, resolution: float = 2.0) -> Heightfield:
    """Deterministic lunar-style terrain: noise octaves plus crater bowls.

    Octave amplitudes follow a red spectrum (amp ~ wavelength^1.2) so
    hill-shading keeps energy at map scale; a separate low-frequency
    albedo map adds regolith brightness variation on top.
    """
    if size < 64:
        raise ValueError(f"heightfield needs at least 64 cells per side, got {size}")
    rng = stream(seed, "terrain")
    octaves = int(rng.integers(4, 7))
    grid = np.zeros((size, size))
    world = size * resolution
    divisions = 6
    wavelengths = [world / (divisions * 2 ** o) for o in range(octaves)]
    amps = np.array([w ** 1.2 for w in wavelengths])
    amps *= 30.0 / amps.sum()
    for o in range(octaves):
        grid += amps[o] * _value_noise(rng, (size, size), divisions * 2 ** o)

    n_craters = int(rng.integers(20, 61))
    xmax = (size - 1) * resolution
    xs = np.arange(size) * resolution
    for _ in range(n_craters):
        cx, cy = rng.uniform(0.08 * xmax, 0.92 * xmax, size=2)
        radius = rng.uniform(10.0, 45.0)
        depth = min(0.25 * radius, 8.0)
        # Restrict to a window around the crater; bowls vanish beyond ~3r.
        span = 3.0 * radius
        c_lo, c_hi = np.searchsorted(xs, [cx - span, cx + span])
        r_lo, r_hi = np.searchsorted(xs, [cy - span, cy + span])
        if c_hi <= c_lo or r_hi <= r_lo:
            continue
        dx = xs[c_lo:c_hi] - cx
        dy = xs[r_lo:r_hi] - cy
        d = np.sqrt(dx[None, :] ** 2 + dy[:, None] ** 2)
        bowl = -depth * np.exp(-((d / (0.6 * radius)) ** 2))
        rim = 0.18 * depth * np.exp(-(((d - radius) / (0.25 * radius)) ** 2))
        grid[r_lo:r_hi, c_lo:c_hi] += bowl + rim

    # Albedo: regolith brightness blobs at patch-internal scales, so a
    # rendered crop carries a distinctive local pattern even after its
    # own mean brightness is normalized away.
    albedo = np.zeros((size, size))
    for div, amp in ((10, 0.12), (20, 0.18), (40, 0.15), (80, 0.08), (160, 0.04)):
        albedo += amp * _value_noise(rng, (size, size), div)
    albedo = np.clip(1.0 + albedo, 0.45, 1.55)
    return Heightfield(grid, resolution, seed, albedo)


@dataclass(frozen=True)
class TerrainPatch:
    """Square grayscale crop with its camera pose and ground resolution."""

    pixels: np.ndarray
    center_pose: Pose
    gsd: float

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=float)
        p.flags.writeable = False
        object.__setattr__(self, "pixels", p)

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


def nadir_camera_rotation(yaw: float, jitter: np.ndarray | None = None) -> Rotation3:
    """Camera-to-world rotation of a nadir camera with heading `yaw`.

    Image right maps to the heading direction, image down to its
    clockwise normal, the optical axis points straight down. `jitter`
    right-multiplies a small body-frame rotation (axis-angle, radians).
    """
    c, s = math.cos(yaw), math.sin(yaw)
    base = Rotation3(np.array([[c, s, 0.0], [s, -c, 0.0], [0.0, 0.0, -1.0]]).T)
    if jitter is None:
        return base
    return base.compose(so3_exp(jitter))


def _camera_yaw(rotation: Rotation3) -> float:
    """Heading of the image-right axis projected onto the ground plane."""
    right = rotation.m[:, 0]
    return math.atan2(right[1], right[0])


def render_patches_batch(
    h: Heightfield,
    centers_xy: np.ndarray,
    yaw: float,
    patch_size: int = 32,
    gsd: float = 2.0,
    illumination: float = 1.0,
) -> np.ndarray:
    """Orthographic hill-shaded crops at many centers, one shared yaw.

    Returns an (N, P, P) stack. Used directly when building tile banks;
    `render_patch` delegates here for the single-camera case.
    """
    centers_xy = np.atleast_2d(np.asarray(centers_xy, dtype=float))
    n = centers_xy.shape[0]
    half = (patch_size - 1) / 2.0
    u = (np.arange(patch_size) - half) * gsd       # image right, meters
    v = (np.arange(patch_size) - half) * gsd       # image down, meters
    c, s = math.cos(yaw), math.sin(yaw)
    right = np.array([c, s])
    down = np.array([s, -c])
    offsets = u[None, :, None] * right[None, None, :] + v[:, None, None] * down[None, None, :]
    pts = centers_xy[:, None, None, :] + offsets[None, :, :, :]
    flat = pts.reshape(-1, 2)
    if not h.in_bounds(flat):
        raise OutOfBoundsError("patch footprint leaves the terrain")
    z = h.heights_at(flat).reshape(n, patch_size, patch_size)
    dz_dv, dz_du = np.gradient(z, gsd, axis=(1, 2))
    # Normal in the patch frame; the sun direction is rotated into the
    # same frame so shading is consistent under camera yaw.
    normals = np.stack([-dz_du, -dz_dv, np.ones_like(z)], axis=-1)
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    sun_world = np.array(
        [
            math.cos(SUN_ELEVATION) * math.cos(SUN_AZIMUTH),
            math.cos(SUN_ELEVATION) * math.sin(SUN_AZIMUTH),
            math.sin(SUN_ELEVATION),
        ]
    )
    sun_patch = np.array(
        [sun_world[:2] @ right, sun_world[:2] @ down, sun_world[2]]
    )
    shade = np.clip(normals @ sun_patch, 0.0, 1.0)
    albedo = h.albedo_at(flat).reshape(n, patch_size, patch_size)
    return np.clip(illumination * albedo * shade, 0.0, 1.0)


def render_patch(
    h: Heightfield,
    pose: Pose,
    patch_size: int = 32,
    gsd: float = 2.0,
    illumination: float = 1.0,
) -> TerrainPatch:
    """Orthographic hill-shaded crop under a nadir camera.

    Samples elevation on the camera-aligned pixel grid, shades it with a
    fixed Lambertian sun, and scales by the illumination multiplier. The
    camera must be above ground and the footprint inside the terrain.
    """
    center = pose.translation[:2]
    altitude = pose.translation[2] - float(h.heights_at(center)[0])
    if altitude <= 0:
        raise ValueError(f"camera is not above the terrain (altitude {altitude:.2f} m)")
    yaw = _camera_yaw(pose.rotation)
    pixels = render_patches_batch(h, center[None], yaw, patch_size, gsd, illumination)[0]
    return TerrainPatch(pixels, pose, gsd)


@dataclass(frozen=True)
class Descriptor:
    """Unit-norm feature vector standing in for a learned embedding."""

    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        n = np.linalg.norm(v)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"descriptor norm {n} is not 1 within 1e-6")
        v.flags.writeable = False
        object.__setattr__(self, "v", v)

    @property
    def dim(self) -> int:
        return self.v.shape[0]

    def cosine(self, other: "Descriptor") -> float:
        return float(self.v @ other.v)


_POOL_GRID = 4
_ORIENT_BINS = 8
# Brightness-ratio deviations are clipped before projection so that a
# zero-filled occlusion rectangle shifts features by a bounded amount
# instead of swamping the terrain signal. Every feature is a ratio of
# brightness-linear quantities, so the normalized descriptor is exactly
# invariant to the global illumination multiplier.
_POOL_CLIP = 0.6
_MAG_CLIP = 0.05
# The orientation histogram is binned per pool cell; each cell profile
# is taken relative to the patch-wide profile, which cancels the common
# signature the fixed sun imprints everywhere.
_HIST_LOCAL_GAIN = 0.35
_HIST_GLOBAL_GAIN = 0.06
# Pool cells whose zero-pixel coverage exceeds this are treated as
# unobserved (neutral features) rather than as black terrain.
_OCCLUDED_CELL_FRAC = 0.35

FEATURE_DIM = _POOL_GRID * _POOL_GRID * (1 + _ORIENT_BINS) + _ORIENT_BINS


class DescriptorExtractor:
    """Fixed seeded projection of pooled patch statistics to unit vectors.

    Features: the 4x4 average-pool grid of the patch divided by its own
    mean brightness (clipped deviations from 1), concatenated with a
    per-cell gradient-orientation histogram of clipped ratio magnitudes.
    The projection matrix is derived from the dataset seed and frozen.

    `reference_mean`, when set, holds the mean raw feature vector of the
    map's tile database; subtracting it before projection removes feature
    components shared by every view of this map, which would otherwise
    dominate cosine similarities. It is fitted once when the tile
    database is built and frozen with it.
    """

    def __init__(self, seed: int, dim: int = 64, reference_mean: np.ndarray | None = None):
        self.dim = dim
        self.seed = seed
        rng = stream(seed, "descriptor-projection")
        self.projection = rng.normal(size=(dim, FEATURE_DIM)) / math.sqrt(FEATURE_DIM)
        self.reference_mean = (
            np.zeros(FEATURE_DIM)
            if reference_mean is None
            else np.asarray(reference_mean, dtype=float)
        )

    def fit_reference(self, features: np.ndarray) -> None:
        """Freeze the map-wide mean feature vector (from tile features)."""
        self.reference_mean = np.asarray(features, dtype=float).mean(axis=0)

    def features(self, pixels: np.ndarray) -> np.ndarray:
        """Raw pooled features for a (P, P) patch or (N, P, P) stack.

        Zero pixels count as unobserved (occluded): the brightness ratio
        is taken against the nonzero mean, mostly-zero pool cells yield
        neutral features, and gradients touching zero pixels are dropped
        so occlusion borders do not masquerade as terrain edges.
        """
        pixels = np.asarray(pixels, dtype=float)
        single = pixels.ndim == 2
        if single:
            pixels = pixels[None]
        n, p, _ = pixels.shape
        zero = pixels <= 0.0
        nz_count = np.maximum((~zero).sum(axis=(1, 2)), 1)
        mean = pixels.sum(axis=(1, 2)) / nz_count
        safe = np.maximum(mean, 1e-9)
        q = pixels / safe[:, None, None]

        cell = p // _POOL_GRID
        pooled = q[:, : cell * _POOL_GRID, : cell * _POOL_GRID]
        pooled = pooled.reshape(n, _POOL_GRID, cell, _POOL_GRID, cell).mean(axis=(2, 4))
        zfrac = zero[:, : cell * _POOL_GRID, : cell * _POOL_GRID]
        zfrac = zfrac.reshape(n, _POOL_GRID, cell, _POOL_GRID, cell).mean(axis=(2, 4))
        occluded = (zfrac > _OCCLUDED_CELL_FRAC).reshape(n, -1)
        pool_dev = np.clip(pooled.reshape(n, -1) - 1.0, -_POOL_CLIP, _POOL_CLIP) / _POOL_CLIP
        pool_dev[occluded] = 0.0

        gy, gx = np.gradient(q, axis=(1, 2))
        mag = np.minimum(np.hypot(gx, gy), _MAG_CLIP) / _MAG_CLIP
        dilated = zero.copy()
        dilated[:, 1:, :] |= zero[:, :-1, :]
        dilated[:, :-1, :] |= zero[:, 1:, :]
        dilated[:, :, 1:] |= zero[:, :, :-1]
        dilated[:, :, :-1] |= zero[:, :, 1:]
        mag[dilated] = 0.0
        ang = np.arctan2(gy, gx)
        bins = ((ang + math.pi) / (2 * math.pi) * _ORIENT_BINS).astype(int) % _ORIENT_BINS
        # One bincount over (patch, pool cell, orientation) flat indices.
        n_cells = _POOL_GRID * _POOL_GRID
        row_cell = np.arange(p) * _POOL_GRID // p
        cell_idx = row_cell[:, None] * _POOL_GRID + row_cell[None, :]
        flat = (
            np.arange(n)[:, None, None] * (n_cells * _ORIENT_BINS)
            + cell_idx[None, :, :] * _ORIENT_BINS
            + bins
        )
        hists = np.bincount(
            flat.ravel(), weights=mag.ravel(), minlength=n * n_cells * _ORIENT_BINS
        ).reshape(n, n_cells, _ORIENT_BINS)
        hists /= (p / _POOL_GRID) ** 2
        profile = hists.mean(axis=1)
        local = hists - profile[:, None, :]
        local[occluded] = 0.0
        feats = np.concatenate(
            [
                pool_dev,
                _HIST_LOCAL_GAIN * local.reshape(n, -1),
                _HIST_GLOBAL_GAIN * (profile - profile.mean(axis=1, keepdims=True)),
            ],
            axis=1,
        )
        feats[mean < 1e-9] = 0.0
        return feats[0] if single else feats

    def finish(self, features: np.ndarray) -> np.ndarray:
        """Center, project and L2-normalize raw features into descriptors."""
        feats = np.atleast_2d(np.asarray(features, dtype=float))
        vecs = (feats - self.reference_mean) @ self.projection.T
        norms = np.linalg.norm(vecs, axis=1, keepdims=True)
        degenerate = norms[:, 0] < 1e-12
        if degenerate.any():
            vecs[degenerate] = 0.0
            vecs[degenerate, 0] = 1.0
            norms = np.linalg.norm(vecs, axis=1, keepdims=True)
        return vecs / norms

    def extract_batch(self, pixels: np.ndarray) -> np.ndarray:
        """(N, dim) unit-norm descriptors for an (N, P, P) patch stack."""
        return self.finish(np.atleast_2d(self.features(pixels)))

    def extract(self, patch: TerrainPatch) -> Descriptor:
        return Descriptor(self.extract_batch(patch.pixels[None])[0])


def extract_descriptor(patch: TerrainPatch, extractor: DescriptorExtractor) -> Descriptor:
    """Descriptor of a rendered patch under a frozen extractor."""
    return extractor.extract(patch)


@dataclass(frozen=True)
class MaskConfig:
    """Rectangular occlusion augmentation settings.

    The level fixes the rectangle count (none=0, low=5, medium=10,
    high=20); sides are drawn uniformly from side_range fractions of the
    patch height. Expected occluded-area fractions come out near 10%,
    20% and 40% for low/medium/high.
    """

    level: str
    count: int
    side_range: tuple[float, float] = (0.1, 0.2)

    def __post_init__(self):
        if self.level not in MASK_LEVEL_COUNTS:
            raise ValueError(f"unknown mask level {self.level!r}")
        if MASK_LEVEL_COUNTS[self.level] != self.count:
            raise ValueError(
                f"level {self.level!r} requires count {MASK_LEVEL_COUNTS[self.level]}, "
                f"got {self.count}"
            )

    @staticmethod
    def from_level(level: str) -> "MaskConfig":
        return MaskConfig(level, MASK_LEVEL_COUNTS[level])


def _mask_one(pixels: np.ndarray, count: int, side_range, rng: np.random.Generator):
    p = pixels.shape[0]
    lo, hi = side_range[0] * p, side_range[1] * p
    for _ in range(count):
        w = max(1, int(round(rng.uniform(lo, hi))))
        hgt = max(1, int(round(rng.uniform(lo, hi))))
        r = int(rng.integers(0, p - hgt + 1))
        c = int(rng.integers(0, p - w + 1))
        pixels[r : r + hgt, c : c + w] = 0.0


def apply_masks(patch: TerrainPatch, cfg: MaskConfig, rng: np.random.Generator) -> TerrainPatch:
    """Zero-fill random axis-aligned rectangles; level none is a no-op."""
    if cfg.count == 0:
        return patch
    pixels = patch.pixels.copy()
    _mask_one(pixels, cfg.count, cfg.side_range, rng)
    return TerrainPatch(pixels, patch.center_pose, patch.gsd)


def apply_masks_batch(pixels: np.ndarray, cfg: MaskConfig, rng: np.random.Generator) -> np.ndarray:
    """Masked copy of an (N, P, P) stack; draws are per patch, in order."""
    out = np.array(pixels, dtype=float, copy=True)
    if cfg.count == 0:
        return out
    for i in range(out.shape[0]):
        _mask_one(out[i], cfg.count, cfg.side_range, rng)
    return out


@dataclass(frozen=True)
class DescentTrajectory:
    """Timestamped camera-to-world poses over the three descent stages."""

    poses: list
    stages: list
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        t.flags.writeable = False
        object.__setattr__(self, "times", t)

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses])

    @property
    def path_length(self) -> float:
        d = np.diff(self.positions, axis=0)
        return float(np.linalg.norm(d, axis=1).sum())


def _smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


# Stage frame fractions and altitude bands (meters).
_STAGE_SPLIT = (0.25, 0.35, 0.40)
_ALT_INSPECTION = 1000.0
_ALT_HANDOVER = 500.0
_ALT_FINAL = 25.0


def gen_trajectory(seed: int, h: Heightfield, n_frames: int = 1000) -> DescentTrajectory:
    """Three-stage descent path with a nadir, lightly jittered camera.

    Stages: level flight near 1000 m, a descending leg from 1000 to
    500 m, and a monotone final descent ending below 50 m. The total 3D
    path length lands in [1800, 2000] m by scaling the horizontal speed
    profile; headings curve slowly so the footprint stays compact.
    """
    rng = stream(seed, "trajectory")
    n1 = int(round(_STAGE_SPLIT[0] * n_frames))
    n2 = int(round(_STAGE_SPLIT[1] * n_frames))
    n3 = n_frames - n1 - n2
    stages = ["inspection"] * n1 + ["adjustment"] * n2 + ["descent"] * n3

    alt = np.concatenate(
        [
            np.full(n1, _ALT_INSPECTION),
            _ALT_INSPECTION + (_ALT_HANDOVER - _ALT_INSPECTION) * _smoothstep(np.linspace(0, 1, n2)),
            _ALT_HANDOVER + (_ALT_FINAL - _ALT_HANDOVER) * _smoothstep(np.linspace(0, 1, n3)),
        ]
    )

    target_length = rng.uniform(1800.0, 2000.0)
    tau = np.linspace(0.0, 1.0, n_frames)
    # Headings stay inside a fixed approach corridor (like a planned
    # landing azimuth); map tiles are rendered north-up, so this bounds
    # the camera-to-map rotation mismatch the retriever must absorb.
    heading0 = rng.uniform(-math.radians(12.0), math.radians(12.0))
    amp = rng.uniform(math.radians(14.0), math.radians(22.0))
    cycles = rng.uniform(1.5, 2.5)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    heading = heading0 + amp * np.sin(2.0 * math.pi * cycles * tau + phase)
    # Horizontal pace eases off through the descent.
    pace = 1.0 - 0.55 * _smoothstep((tau - 0.25) / 0.75)

    dz = np.diff(alt)

    def path_xy(scale: float) -> np.ndarray:
        steps = scale * pace[:-1]
        dx = steps * np.cos(heading[:-1])
        dy = steps * np.sin(heading[:-1])
        xy = np.zeros((n_frames, 2))
        xy[1:, 0] = np.cumsum(dx)
        xy[1:, 1] = np.cumsum(dy)
        return xy

    def total_length(scale: float) -> float:
        xy = path_xy(scale)
        d = np.diff(xy, axis=0)
        return float(np.sqrt((d ** 2).sum(axis=1) + dz ** 2).sum())

    lo, hi = 0.0, 5.0
    while total_length(hi) < target_length:
        hi *= 2.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if total_length(mid) < target_length:
            lo = mid
        else:
            hi = mid
    xy = path_xy(0.5 * (lo + hi))

    # Center the footprint on the terrain and require rendering margin.
    xmax, ymax = h.extent
    mins, maxs = xy.min(axis=0), xy.max(axis=0)
    offset = np.array([xmax, ymax]) / 2.0 - (mins + maxs) / 2.0
    xy = xy + offset
    # Rotated camera footprints need half a patch diagonal of slack.
    margin = 140.0
    if not h.in_bounds(xy, margin=margin):
        raise ValueError(
            f"trajectory footprint exceeds the terrain (needs margin {margin} m); "
            "use a larger heightfield"
        )

    jitter_amp = rng.uniform(0.5, 2.5, size=3)
    jitter_freq = rng.uniform(2.0, 5.0, size=3)
    jitter_phase = rng.uniform(0.0, 2.0 * math.pi, size=3)
    jitter = np.radians(jitter_amp)[None, :] * np.sin(
        2.0 * math.pi * jitter_freq[None, :] * tau[:, None] + jitter_phase[None, :]
    )

    poses = []
    for i in range(n_frames):
        rot = nadir_camera_rotation(float(heading[i]), jitter[i])
        pos = np.array([xy[i, 0], xy[i, 1], alt[i]])
        poses.append(Pose(rot, pos, f"cam{i}", "world"))
    return DescentTrajectory(poses, stages, np.arange(n_frames, dtype=float))
