//! Sliding-window point-to-plane calibration from a poor initial guess.

use lidar_pose_calib::data_io::associate_frames_with_poses;
use lidar_pose_calib::geometry::{EulerZYX, RigidTransform, Vec3};
use lidar_pose_calib::rough_calibration::{run_rough, RoughParams};
use lidar_pose_calib::synthetic_world::{simulate, SceneModel, SimSpec};

fn main() -> lidar_pose_calib::Result<()> {
    env_logger::init();
    let mut spec = SimSpec::default();
    spec.trajectory.loop_count = 1;
    let ds = simulate(&SceneModel::intersection(), &spec)?;
    let frames = associate_frames_with_poses(ds.frames, &ds.trajectory)?.frames;
    let truth = ds.true_extrinsic;

    // 12 deg in every angle and 0.3 m off in x and y.
    let offset = RigidTransform::from_euler_zyx(
        EulerZYX::from_degrees(12.0, -12.0, 12.0),
        Vec3::new(0.3, -0.3, 0.0),
    );
    let initial = truth.compose(&offset);
    let out = run_rough(&frames, &initial, &RoughParams::default())?;
    for w in out.windows.iter().step_by(8) {
        let d = truth.inverse().compose(&w.estimate);
        println!(
            "window {:3}  rotation error {:7.3} deg  |dxy| {:.3} m  {} matches",
            w.window,
            d.rotation_angle().to_degrees(),
            d.translation().xy().norm(),
            w.correspondences
        );
    }
    let d = truth.inverse().compose(&out.result.extrinsic);
    println!("final roll/pitch/yaw error (deg): {:?}", d.euler_zyx().to_degrees());
    println!("final translation error (m): {:?}", d.translation().as_slice());
    println!("{:.1}s", out.result.diagnostics.runtime_s);
    Ok(())
}
