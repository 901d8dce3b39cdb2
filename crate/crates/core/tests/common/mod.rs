#![allow(dead_code)]

use lidar_pose_calib::data_io::{associate_frames_with_poses, PosedFrame};
use lidar_pose_calib::synthetic_world::{simulate, SceneModel, SimSpec, SyntheticDataset};

/// One loop with half the default azimuth resolution: quick to simulate and
/// still enough structure to calibrate against.
pub fn small_spec(seed: u64) -> SimSpec {
    let mut spec = SimSpec::default();
    spec.seed = seed;
    spec.trajectory.loop_count = 1;
    spec.lidar.azimuth_steps = 450;
    spec
}

pub fn small_dataset(seed: u64) -> (SyntheticDataset, Vec<PosedFrame>) {
    let ds = simulate(&SceneModel::intersection(), &small_spec(seed)).unwrap();
    let frames = associate_frames_with_poses(ds.frames.clone(), &ds.trajectory).unwrap().frames;
    (ds, frames)
}
