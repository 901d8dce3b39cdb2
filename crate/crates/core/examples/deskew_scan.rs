//! De-skews simulated scans and compares wall residuals with and without
//! motion correction.

use lidar_pose_calib::motion_compensation::{deskew, passthrough};
use lidar_pose_calib::synthetic_world::{simulate, SceneModel, SimSpec};

fn main() -> lidar_pose_calib::Result<()> {
    let mut spec = SimSpec::default();
    spec.trajectory.loop_count = 1;
    spec.trajectory.speed_mps = 5.0;
    let ds = simulate(&SceneModel::intersection(), &spec)?;
    let ext = ds.true_extrinsic;

    let (mut raw, mut fixed, mut n) = (0.0, 0.0, 0usize);
    for (frame, labels) in ds.frames.iter().zip(&ds.labels).step_by(20) {
        let reference = ds.trajectory.interpolate(frame.frame_timestamp)?.compose(&ext);
        let corrected = deskew(frame, &ds.trajectory, &ext)?;
        let plain = passthrough(frame);
        for ((a, b), &label) in plain.points.iter().zip(&corrected.points).zip(labels) {
            if label == ds.scene.ground_id {
                continue;
            }
            let Some(wall) = ds.scene.plane(label) else { continue };
            raw += wall.signed_distance(&reference.transform_point(a)).powi(2);
            fixed += wall.signed_distance(&reference.transform_point(b)).powi(2);
            n += 1;
        }
    }
    println!("wall points: {n}");
    println!("RMS without de-skew: {:.4} m", (raw / n as f64).sqrt());
    println!("RMS with de-skew:    {:.4} m (range noise {:.3} m)", (fixed / n as f64).sqrt(), spec.noise.range_sigma_m);
    Ok(())
}
