"""Absolute visual localization: tile map, retrieval, gating, anchors.

The map is a regular grid of small terrain tiles (2.0 m/px imagery, 20%
overlap). Each tile also carries descriptors extracted from a wider
context rendering at a handful of canonical yaw rotations; retrieval
similarity is the max over those rotations, which absorbs the bounded
camera-to-map heading mismatch of a descent corridor. Retrieval is
windowed around the previous match and falls back to a global scan when
similarity drops below the tracking threshold.

An accepted absolute pose (anchor) is the chosen candidate's regressed
pose composed with its tile pose, gated by a chi-square test on the
innovation against the drift-predicted pose under the frozen information
matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from anchorloc.liegroup import Pose, Rotation3, se3_log
from anchorloc.regressor import rot6d_forward
from anchorloc.terrain import DescriptorExtractor, Heightfield, render_patches_batch

__all__ = [
    "AnchorMeasurement",
    "AvlConfig",
    "AvlStepResult",
    "Candidate",
    "CHI2_GATE_6DOF_P99",
    "MapTileDB",
    "TILE_ROTATIONS",
    "avl_step",
    "build_tile_db",
    "estimate_information",
    "fallback_policy",
    "retrieve_topk",
]

# 0.99 quantile of the chi-square distribution with 6 degrees of freedom.
CHI2_GATE_6DOF_P99 = 16.81

# Canonical tile yaws (radians) and context scales (m/px) whose
# descriptors are stored per tile: a small map pyramid that absorbs the
# bounded heading mismatch of the descent corridor and the altitude-tied
# ground sampling of the camera. Retrieval similarity is the max over
# the bank; the matched entry is what the regressor conditions on.
TILE_ROTATIONS = (-0.5, -0.25, 0.0, 0.25, 0.5)
TILE_SCALES = (4.2, 4.73, 5.33, 6.0)

TILE_PX = 16
TILE_RESOLUTION = 2.0
TILE_OVERLAP = 0.2
CONTEXT_PX = 32
MIN_CONTEXT_GSD = min(TILE_SCALES)
MAX_CONTEXT_GSD = max(TILE_SCALES)


def camera_gsd_for_altitude(altitude: float) -> float:
    """Camera ground sampling distance as a function of altitude.

    Linear in altitude over the map pyramid's scale span, so the patch
    scale carries an altitude cue at every stage of the descent while
    the footprint stays large enough for unambiguous retrieval.
    """
    frac = np.clip(altitude, 0.0, 1000.0) / 1000.0
    return float(MIN_CONTEXT_GSD + (MAX_CONTEXT_GSD - MIN_CONTEXT_GSD) * frac)


def band_altitude(scale: float) -> float:
    """Nominal camera altitude whose ground sampling matches a scale."""
    return 1000.0 * (scale - MIN_CONTEXT_GSD) / (MAX_CONTEXT_GSD - MIN_CONTEXT_GSD)


@dataclass
class AvlConfig:
    """Retrieval and gating settings (defaults from the evaluation)."""

    top_k: int = 5
    window: int = 9
    alpha: float = 0.7           # similarity weight in candidate scoring
    conf_value: float = 1.0      # constant confidence (deterministic regressor)
    similarity_tau: float = 0.6  # below this, next frame searches globally
    chi2_gate: float = CHI2_GATE_6DOF_P99


@dataclass(frozen=True)
class Candidate:
    """One retrieval candidate, scored per the selection rule."""

    tile_id: int
    similarity: float
    bank_index: int  # index into the tile's rotation x scale bank
    pose: Pose | None = None
    score: float | None = None


@dataclass(frozen=True)
class AnchorMeasurement:
    """Accepted absolute pose with its frozen information matrix."""

    frame: int
    pose: Pose
    information: np.ndarray

    def __post_init__(self):
        omega = np.asarray(self.information, dtype=float)
        if omega.shape != (6, 6):
            raise ValueError("information matrix must be 6x6")
        if not np.allclose(omega, omega.T, atol=1e-9):
            raise ValueError("information matrix must be symmetric")
        np.linalg.cholesky(omega)  # raises if not positive definite
        omega.flags.writeable = False
        object.__setattr__(self, "information", omega)


class MapTileDB:
    """Grid-indexed tile map with a rotation x scale descriptor bank."""

    def __init__(
        self,
        centers: np.ndarray,
        heights: np.ndarray,
        grid_rc: np.ndarray,
        descriptors: np.ndarray,
        pixels: np.ndarray,
        nx: int,
        ny: int,
        spacing: float,
        rotations=TILE_ROTATIONS,
        scales=TILE_SCALES,
        resolution: float = TILE_RESOLUTION,
        overlap: float = TILE_OVERLAP,
    ):
        self.centers = np.asarray(centers, dtype=float)
        self.heights = np.asarray(heights, dtype=float)
        self.grid_rc = np.asarray(grid_rc, dtype=int)
        self.descriptors = np.asarray(descriptors, dtype=float)  # (R*S, N, D)
        self.pixels = np.asarray(pixels, dtype=float)            # (N, px, px)
        self.nx = nx
        self.ny = ny
        self.spacing = spacing
        self.rotations = tuple(rotations)
        self.scales = tuple(scales)
        self.resolution = resolution
        self.overlap = overlap

    def __len__(self) -> int:
        return self.centers.shape[0]

    @property
    def n_rotations(self) -> int:
        return len(self.rotations)

    def scale_index(self, bank_index: int) -> int:
        return bank_index // self.n_rotations

    def tile_pose(self, tile_id: int) -> Pose:
        """World pose of the tile frame: axis-aligned at the center."""
        x, y = self.centers[tile_id]
        z = self.heights[tile_id]
        return Pose(Rotation3.identity(), np.array([x, y, z]), f"tile{tile_id}", "world")

    def anchor_frame_origin(self, tile_id: int, bank_index: int) -> np.ndarray:
        """Reference point for tile-local regression targets.

        Sits above the tile center at the nominal altitude of the bank
        entry's scale, so the regressed residual altitude stays bounded:
        the matched pyramid level carries the coarse altitude.
        """
        scale = self.scales[self.scale_index(bank_index)]
        x, y = self.centers[tile_id]
        return np.array([x, y, self.heights[tile_id] + band_altitude(scale)])

    def window_indices(self, center_rc: tuple[int, int], window: int) -> np.ndarray:
        """Tile ids inside a window x window grid neighborhood."""
        half = window // 2
        r0, c0 = center_rc
        rows = np.arange(max(0, r0 - half), min(self.ny, r0 + half + 1))
        cols = np.arange(max(0, c0 - half), min(self.nx, c0 + half + 1))
        return (rows[:, None] * self.nx + cols[None, :]).ravel()

    def nearest_tile(self, xy: np.ndarray) -> int:
        """Oracle: id of the tile whose center is closest to a point."""
        d = ((self.centers - np.asarray(xy, dtype=float)) ** 2).sum(axis=1)
        return int(np.argmin(d))


def build_tile_db(
    h: Heightfield,
    extractor: DescriptorExtractor,
    region: tuple[float, float, float, float] | None = None,
    rotations=TILE_ROTATIONS,
    scales=TILE_SCALES,
) -> MapTileDB:
    """Build the tile map over a region (x0, y0, x1, y1) of the world.

    Tiles sit on a regular grid with 20% overlap at 2.0 m/px. Per tile,
    context patches are rendered at each canonical rotation and scale
    and reduced to descriptors; the map-wide mean feature vector is
    fitted here and frozen into the extractor.
    """
    # Context renders must stay inside the terrain: half diagonal of the
    # rotated context footprint at the coarsest scale.
    render_margin = CONTEXT_PX / 2 * max(scales) * math.sqrt(2.0) + h.resolution
    xmax, ymax = h.extent
    if region is None:
        region = (render_margin, render_margin, xmax - render_margin, ymax - render_margin)
    spacing = (1.0 - TILE_OVERLAP) * TILE_PX * TILE_RESOLUTION
    x_lo = max(region[0], render_margin)
    y_lo = max(region[1], render_margin)
    x_hi = min(region[2], xmax - render_margin)
    y_hi = min(region[3], ymax - render_margin)
    xs = np.arange(math.ceil(x_lo / spacing) * spacing, x_hi, spacing)
    ys = np.arange(math.ceil(y_lo / spacing) * spacing, y_hi, spacing)
    if len(xs) == 0 or len(ys) == 0:
        raise ValueError("tile region is empty after margins")
    nx, ny = len(xs), len(ys)
    centers = np.stack(np.meshgrid(xs, ys), axis=-1).reshape(-1, 2)
    grid_rc = np.stack(
        [np.repeat(np.arange(ny), nx), np.tile(np.arange(nx), ny)], axis=1
    )
    heights = h.heights_at(centers)

    n = len(centers)
    bank = [(yaw, gsd) for gsd in scales for yaw in rotations]
    context = np.empty((len(bank), n, CONTEXT_PX, CONTEXT_PX))
    for b, (yaw, gsd) in enumerate(bank):
        context[b] = render_patches_batch(h, centers, yaw, CONTEXT_PX, gsd)
    pixels = render_patches_batch(h, centers, 0.0, TILE_PX, TILE_RESOLUTION)

    feats = extractor.features(context.reshape(-1, CONTEXT_PX, CONTEXT_PX))
    extractor.fit_reference(feats)
    descriptors = extractor.finish(feats).reshape(len(bank), n, extractor.dim)
    return MapTileDB(
        centers, heights, grid_rc, descriptors, pixels, nx, ny, spacing, rotations, scales
    )


def retrieve_topk(
    db: MapTileDB,
    f_c: np.ndarray,
    prev_match: tuple[int, int] | None,
    k: int = 5,
    window: int = 9,
) -> tuple[list[Candidate], int]:
    """Top-k tiles by cosine similarity (max over canonical rotations).

    With a previous match, only the window x window grid neighborhood is
    scanned; otherwise the whole map. Ties break on ascending tile id.
    Returns (candidates, number of tiles evaluated).
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(db) == 0:
        raise ValueError("empty tile database")
    if prev_match is not None:
        idx = db.window_indices(prev_match, window)
    else:
        idx = np.arange(len(db))
    sims_all = db.descriptors[:, idx, :] @ np.asarray(f_c, dtype=float)
    rot_best = sims_all.argmax(axis=0)
    sims = sims_all[rot_best, np.arange(len(idx))]
    order = np.lexsort((idx, -sims))[: min(k, len(idx))]
    candidates = [
        Candidate(int(idx[j]), float(sims[j]), int(rot_best[j])) for j in order
    ]
    return candidates, int(len(idx))


def fallback_policy(best_similarity: float, tau: float) -> str:
    """Search mode for the next frame: 'windowed' or 'global'."""
    return "windowed" if best_similarity >= tau else "global"


@dataclass
class AvlStepResult:
    anchor: AnchorMeasurement | None
    best: Candidate
    candidates: list
    n_evaluated: int
    chi2: float | None
    next_mode: str
    next_match: tuple[int, int] | None


def avl_step(
    db: MapTileDB,
    frame: int,
    f_c: np.ndarray,
    prev_match: tuple[int, int] | None,
    regressor,
    omega: np.ndarray,
    cfg: AvlConfig,
    predicted_pose: Pose | None,
) -> AvlStepResult:
    """One absolute-localization attempt on a camera descriptor.

    Retrieves top-k candidates, regresses a world pose per candidate
    (gate + network + tile composition), scores them with the constant
    confidence, picks the argmax, and accepts it as an anchor iff the
    innovation against the drift-predicted pose passes the chi-square
    gate. With no prediction available the gate is skipped (bootstrap).
    Rejection is a normal outcome, not an error.
    """
    candidates, n_eval = retrieve_topk(db, f_c, prev_match, cfg.top_k, cfg.window)
    scored = []
    for cand in candidates:
        f_m = db.descriptors[cand.bank_index, cand.tile_id]
        r6, t_local, _ = regressor.forward(f_c[None], f_m[None])
        rot, _ = rot6d_forward(r6)
        origin = db.anchor_frame_origin(cand.tile_id, cand.bank_index)
        pose = Pose(Rotation3(rot[0]), origin + t_local[0], f"cam{frame}", "world")
        score = cfg.alpha * cand.similarity + (1.0 - cfg.alpha) * cfg.conf_value
        scored.append(
            Candidate(cand.tile_id, cand.similarity, cand.bank_index, pose, score)
        )
    best = max(scored, key=lambda c: (c.score, -c.tile_id))

    chi2 = None
    accept = True
    if predicted_pose is not None:
        err = se3_log(predicted_pose.inverse() @ best.pose).v
        chi2 = float(err @ omega @ err)
        accept = chi2 < cfg.chi2_gate

    next_mode = fallback_policy(best.similarity, cfg.similarity_tau)
    next_match = (
        tuple(db.grid_rc[best.tile_id]) if next_mode == "windowed" else None
    )
    anchor = (
        AnchorMeasurement(frame, best.pose, omega) if accept else None
    )
    return AvlStepResult(anchor, best, scored, n_eval, chi2, next_mode, next_match)


def estimate_information(
    regressor,
    f_c: np.ndarray,
    f_m: np.ndarray,
    gt_poses: list,
    tile_centers: np.ndarray,
    min_samples: int = 50,
) -> np.ndarray:
    """Frozen information matrix from held-out regression residuals.

    Residuals are se(3) logs of (T_gt^-1 T_hat) per validation sample;
    the sample covariance (plus 1e-6 jitter) is inverted once and used
    for every subsequent anchor.
    """
    n = len(gt_poses)
    if n < min_samples:
        raise ValueError(f"need at least {min_samples} validation samples, got {n}")
    r6, t_local, _ = regressor.forward(f_c, f_m)
    rot, _ = rot6d_forward(r6)
    residuals = np.empty((n, 6))
    for i, gt in enumerate(gt_poses):
        world_t = tile_centers[i] + t_local[i]
        est = Pose(Rotation3(rot[i]), world_t, gt.frame_from, gt.frame_to)
        residuals[i] = se3_log(gt.inverse() @ est).v
    sigma = np.cov(residuals.T) + 1e-6 * np.eye(6)
    try:
        omega = np.linalg.inv(sigma)
    except np.linalg.LinAlgError as err:
        raise ValueError("validation covariance is singular") from err
    # Symmetrize against inversion round-off so Cholesky checks pass.
    return (omega + omega.T) / 2.0
