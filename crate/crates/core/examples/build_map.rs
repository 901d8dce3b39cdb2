//! Assembles a de-skewed global map and exports a voxel-downsampled copy.

use std::path::PathBuf;

use lidar_pose_calib::data_io::associate_frames_with_poses;
use lidar_pose_calib::mapping::{build_map, export_map, MapOptions};
use lidar_pose_calib::synthetic_world::{simulate, SceneModel, SimSpec};

fn main() -> lidar_pose_calib::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("lpcalib_map.xyz"));
    let mut spec = SimSpec::default();
    spec.trajectory.loop_count = 1;
    let ds = simulate(&SceneModel::intersection(), &spec)?;
    let frames = associate_frames_with_poses(ds.frames, &ds.trajectory)?.frames;

    let options = MapOptions {
        max_points: 0,
        ..MapOptions::default()
    };
    let map = build_map(&frames, &ds.trajectory, &ds.true_extrinsic, &options)?;
    let (lo, hi) = map.bounds.expect("non-empty map");
    println!("{} points, bounds {:?} .. {:?}", map.len(), lo.as_slice(), hi.as_slice());
    let written = export_map(&map, &out, Some(0.2), false)?;
    println!("{written} voxel centroids written to {}", out.display());
    Ok(())
}
