//! Writes a one-loop synthetic drive to disk in the standard layout.
//!
//!     cargo run --release --example simulate_dataset -- /tmp/drive

use std::path::PathBuf;

use lidar_pose_calib::synthetic_world::{generate_dataset, SceneModel, SimSpec};

fn main() -> lidar_pose_calib::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("lpcalib_drive"));
    let mut spec = SimSpec::default();
    spec.trajectory.loop_count = 1;
    spec.seed = 7;
    let ds = generate_dataset(&SceneModel::intersection(), &spec, &out)?;
    let points: usize = ds.frames.iter().map(|f| f.len()).sum();
    println!("{} frames, {points} points, {} fiducials", ds.frames.len(), ds.fiducials.len());
    println!("true extrinsic (roll, pitch, yaw deg): {:?}", ds.true_extrinsic.euler_zyx().to_degrees());
    println!("written to {}", out.display());
    Ok(())
}
