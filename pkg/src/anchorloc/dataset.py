"""Dataset simulation, serialization, and training-data assembly.

A dataset is a terrain world, a tile database covering the descent
corridor, and a handful of descent trajectories with per-frame camera
patches, descriptors and oracle tile assignments. Everything is
deterministic in the config; regenerating writes byte-identical files.

Files (per dataset directory):
  config.txt    flat `key = value` effective configuration
  tiles.json    tile grid metadata, imagery and descriptor arrays
  traj_<seed>.jsonl   one record per frame (see `frame_record`)

Train/val/test splits interleave 10-frame blocks in an 8/1/1 pattern so
every split covers all altitude regimes.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from anchorloc.avl import (
    CONTEXT_PX,
    TILE_ROTATIONS,
    TILE_SCALES,
    MapTileDB,
    build_tile_db,
    camera_gsd_for_altitude,
)
from anchorloc.liegroup import Pose, pose_from_values, pose_to_values
from anchorloc.rng import stream
from anchorloc.terrain import (
    DescentTrajectory,
    DescriptorExtractor,
    Heightfield,
    MaskConfig,
    apply_masks_batch,
    gen_heightfield,
    gen_trajectory,
    render_patch,
)

__all__ = [
    "DatasetConfig",
    "SimulatedDataset",
    "TrainingData",
    "TrajectoryData",
    "load_dataset",
    "simulate",
    "split_of_frame",
    "write_dataset",
]

CAMERA_PX = 32

_BLOCK = 10  # frames per split block; 8 train / 1 val / 1 test blocks


def split_of_frame(i: int) -> str:
    block = (i // _BLOCK) % 10
    if block < 8:
        return "train"
    return "val" if block == 8 else "test"


@dataclass
class DatasetConfig:
    """Everything needed to regenerate a dataset bit-identically."""

    world_seed: int = 42
    trajectory_seeds: tuple = (1, 2, 3, 4)
    n_frames: int = 1000
    world_size: int = 1024
    resolution: float = 2.0
    descriptor_dim: int = 64
    illumination_range: tuple = (0.2, 1.0)

    def illumination_for(self, index: int) -> float:
        lo, hi = self.illumination_range
        n = max(len(self.trajectory_seeds) - 1, 1)
        return hi - (hi - lo) * (index / n)

    def to_flat(self) -> dict:
        return {
            "world_seed": self.world_seed,
            "trajectory_seeds": ",".join(str(s) for s in self.trajectory_seeds),
            "n_frames": self.n_frames,
            "world_size": self.world_size,
            "resolution": self.resolution,
            "descriptor_dim": self.descriptor_dim,
            "illumination_min": self.illumination_range[0],
            "illumination_max": self.illumination_range[1],
            "camera_px": CAMERA_PX,
        }

    @staticmethod
    def from_flat(d: dict) -> "DatasetConfig":
        return DatasetConfig(
            world_seed=int(d["world_seed"]),
            trajectory_seeds=tuple(int(s) for s in str(d["trajectory_seeds"]).split(",")),
            n_frames=int(d["n_frames"]),
            world_size=int(d["world_size"]),
            resolution=float(d["resolution"]),
            descriptor_dim=int(d["descriptor_dim"]),
            illumination_range=(float(d["illumination_min"]), float(d["illumination_max"])),
        )


@dataclass
class TrajectoryData:
    """One trajectory's frames: poses, patches, descriptors, oracle tiles."""

    seed: int
    illumination: float
    trajectory: DescentTrajectory
    patches: np.ndarray        # (N, P, P) float in [0, 1]
    gsd: np.ndarray            # (N,) per-frame camera ground sampling, m/px
    descriptors: np.ndarray    # (N, D) clean camera descriptors
    oracle_tiles: np.ndarray   # (N,) nearest tile ids
    splits: list               # per-frame "train" | "val" | "test"


@dataclass
class SimulatedDataset:
    config: DatasetConfig
    heightfield: Heightfield
    extractor: DescriptorExtractor
    tiledb: MapTileDB
    trajectories: list


def simulate(cfg: DatasetConfig) -> SimulatedDataset:
    """Generate the full dataset in memory (deterministic in cfg)."""
    h = gen_heightfield(cfg.world_seed, cfg.world_size, cfg.resolution)
    extractor = DescriptorExtractor(cfg.world_seed, cfg.descriptor_dim)
    trajectories = [gen_trajectory(s, h, cfg.n_frames) for s in cfg.trajectory_seeds]

    positions = np.concatenate([t.positions[:, :2] for t in trajectories])
    margin = 160.0
    region = (
        positions[:, 0].min() - margin,
        positions[:, 1].min() - margin,
        positions[:, 0].max() + margin,
        positions[:, 1].max() + margin,
    )
    tiledb = build_tile_db(h, extractor, region)

    out = []
    for idx, (seed, traj) in enumerate(zip(cfg.trajectory_seeds, trajectories)):
        illum = cfg.illumination_for(idx)
        n = len(traj)
        patches = np.empty((n, CAMERA_PX, CAMERA_PX))
        gsd = np.empty(n)
        terrain_z = h.heights_at(traj.positions[:, :2])
        for i in range(n):
            gsd[i] = camera_gsd_for_altitude(traj.positions[i, 2] - terrain_z[i])
            patches[i] = render_patch(h, traj.poses[i], CAMERA_PX, gsd[i], illum).pixels
        # Quantize like the serialized form so in-memory and reloaded
        # datasets behave identically.
        patches = np.round(patches * 255.0) / 255.0
        descriptors = extractor.extract_batch(patches)
        oracle = np.array(
            [tiledb.nearest_tile(traj.positions[i, :2]) for i in range(n)], dtype=int
        )
        splits = [split_of_frame(i) for i in range(n)]
        out.append(TrajectoryData(seed, illum, traj, patches, gsd, descriptors, oracle, splits))
    return SimulatedDataset(cfg, h, extractor, tiledb, out)


def _format_float(x: float) -> float:
    return float(x)


def frame_record(td: TrajectoryData, i: int) -> dict:
    pose = td.trajectory.poses[i]
    return {
        "frame": i,
        "time": float(td.trajectory.times[i]),
        "stage": td.trajectory.stages[i],
        "split": td.splits[i],
        "pose": pose_to_values(pose),
        "gsd": float(td.gsd[i]),
        "patch_u8": [int(v) for v in np.round(td.patches[i].ravel() * 255.0)],
        "descriptor": [float(v) for v in td.descriptors[i]],
        "tile_oracle": int(td.oracle_tiles[i]),
    }


def write_dataset(ds: SimulatedDataset, out_dir: str) -> None:
    """Emit config.txt, tiles.json and one JSONL file per trajectory."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w") as f:
        for k, v in ds.config.to_flat().items():
            f.write(f"{k} = {v}\n")

    db = ds.tiledb
    tiles = {
        "resolution": db.resolution,
        "overlap": db.overlap,
        "tile_px": db.pixels.shape[1],
        "context_px": CONTEXT_PX,
        "rotations": list(db.rotations),
        "scales": list(db.scales),
        "nx": db.nx,
        "ny": db.ny,
        "spacing": db.spacing,
        "descriptor_dim": int(db.descriptors.shape[2]),
        "reference_mean": [float(v) for v in ds.extractor.reference_mean],
        "centers": [[float(a), float(b)] for a, b in db.centers],
        "heights": [float(v) for v in db.heights],
        "grid_rc": [[int(a), int(b)] for a, b in db.grid_rc],
        "descriptors": db.descriptors.tolist(),
        "pixels_u8": np.round(db.pixels * 255.0).astype(int).tolist(),
    }
    with open(os.path.join(out_dir, "tiles.json"), "w") as f:
        json.dump(tiles, f)

    for td in ds.trajectories:
        path = os.path.join(out_dir, f"traj_{td.seed}.jsonl")
        with open(path, "w") as f:
            header = {
                "trajectory_seed": td.seed,
                "illumination": td.illumination,
                "n_frames": len(td.trajectory),
            }
            f.write(json.dumps(header) + "\n")
            for i in range(len(td.trajectory)):
                f.write(json.dumps(frame_record(td, i)) + "\n")


def load_dataset(out_dir: str) -> SimulatedDataset:
    """Rebuild a SimulatedDataset from its directory.

    The heightfield is regenerated from the config (cheap and exact);
    tiles, patches and descriptors come from the files.
    """
    flat = {}
    with open(os.path.join(out_dir, "config.txt")) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, _, v = line.partition("=")
            flat[k.strip()] = v.strip()
    cfg = DatasetConfig.from_flat(flat)
    h = gen_heightfield(cfg.world_seed, cfg.world_size, cfg.resolution)

    with open(os.path.join(out_dir, "tiles.json")) as f:
        tj = json.load(f)
    extractor = DescriptorExtractor(
        cfg.world_seed, cfg.descriptor_dim, reference_mean=np.array(tj["reference_mean"])
    )
    db = MapTileDB(
        centers=np.array(tj["centers"]),
        heights=np.array(tj["heights"]),
        grid_rc=np.array(tj["grid_rc"]),
        descriptors=np.array(tj["descriptors"]),
        pixels=np.array(tj["pixels_u8"], dtype=float) / 255.0,
        nx=tj["nx"],
        ny=tj["ny"],
        spacing=tj["spacing"],
        rotations=tuple(tj["rotations"]),
        scales=tuple(tj["scales"]),
        resolution=tj["resolution"],
        overlap=tj["overlap"],
    )

    trajectories = []
    for idx, seed in enumerate(cfg.trajectory_seeds):
        path = os.path.join(out_dir, f"traj_{seed}.jsonl")
        with open(path) as f:
            header = json.loads(f.readline())
            poses, stages, splits, patches, descs, oracle = [], [], [], [], [], []
            times, gsds = [], []
            for i, line in enumerate(f):
                rec = json.loads(line)
                poses.append(pose_from_values(rec["pose"], f"cam{rec['frame']}", "world"))
                stages.append(rec["stage"])
                splits.append(rec["split"])
                times.append(rec["time"])
                gsds.append(rec["gsd"])
                patches.append(
                    np.array(rec["patch_u8"], dtype=float).reshape(CAMERA_PX, CAMERA_PX) / 255.0
                )
                descs.append(rec["descriptor"])
                oracle.append(rec["tile_oracle"])
        traj = DescentTrajectory(poses, stages, np.array(times))
        trajectories.append(
            TrajectoryData(
                seed,
                header["illumination"],
                traj,
                np.array(patches),
                np.array(gsds),
                np.array(descs),
                np.array(oracle, dtype=int),
                splits,
            )
        )
    return SimulatedDataset(cfg, h, extractor, db, trajectories)


class TrainingData:
    """Regression samples assembled from a dataset's train/val splits.

    A sample pairs the camera patch (masked per epoch during training)
    with the oracle tile's best-rotation descriptor; the target is the
    camera rotation plus the tile-local translation (camera position
    minus tile center). Validation descriptors are clean.
    """

    def __init__(self, ds: SimulatedDataset, trajectories=None):
        db = ds.tiledb
        self.extractor = ds.extractor
        self.db = db
        tds = ds.trajectories if trajectories is None else trajectories

        def collect(split):
            patches, f_m, rot, t, origins, poses, f_c = [], [], [], [], [], [], []
            for td in tds:
                for i in range(len(td.trajectory)):
                    if td.splits[i] != split:
                        continue
                    tile = td.oracle_tiles[i]
                    d_c = td.descriptors[i]
                    sims = db.descriptors[:, tile, :] @ d_c
                    bank_best = int(np.argmax(sims))
                    pose = td.trajectory.poses[i]
                    origin = db.anchor_frame_origin(tile, bank_best)
                    patches.append(td.patches[i])
                    f_c.append(d_c)
                    f_m.append(db.descriptors[bank_best, tile])
                    rot.append(pose.rotation.m)
                    t.append(pose.translation - origin)
                    origins.append(origin)
                    poses.append(pose)
            return (
                np.array(patches),
                np.array(f_c),
                np.array(f_m),
                np.array(rot),
                np.array(t),
                np.array(origins),
                poses,
            )

        (
            self.patches,
            self.f_c_clean,
            self.f_m,
            self.target_rot,
            self.target_t,
            self.tile_centers,
            self.poses,
        ) = collect("train")
        (
            self.val_patches,
            self.val_f_c,
            self.val_f_m,
            self.val_target_rot,
            self.val_target_t,
            self.val_tile_centers,
            self.val_poses,
        ) = collect("val")

    @property
    def n_train(self) -> int:
        return self.patches.shape[0]

    def train_camera_descriptors(self, mask_level: str, rng) -> np.ndarray:
        """Per-epoch camera descriptors with fresh masks applied."""
        if mask_level == "none":
            return self.f_c_clean
        cfg = MaskConfig.from_level(mask_level)
        masked = apply_masks_batch(self.patches, cfg, rng)
        return self.extractor.extract_batch(masked)

    def masked_val_descriptors(self, mask_level: str, rng) -> np.ndarray:
        """Validation descriptors with test-time masks (occluded split)."""
        if mask_level == "none":
            return self.val_f_c
        cfg = MaskConfig.from_level(mask_level)
        masked = apply_masks_batch(self.val_patches, cfg, rng)
        return self.extractor.extract_batch(masked)

    def subsample(self, fraction: float, seed: int) -> "TrainingData":
        """Seeded random subset of the training split (val untouched)."""
        out = object.__new__(TrainingData)
        out.__dict__.update(self.__dict__)
        n = max(int(round(self.n_train * fraction)), 1)
        idx = np.sort(stream(seed, "train-subsample").permutation(self.n_train)[:n])
        out.patches = self.patches[idx]
        out.f_c_clean = self.f_c_clean[idx]
        out.f_m = self.f_m[idx]
        out.target_rot = self.target_rot[idx]
        out.target_t = self.target_t[idx]
        out.tile_centers = self.tile_centers[idx]
        out.poses = [self.poses[i] for i in idx]
        return out
