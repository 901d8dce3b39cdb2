//! Coordinate search over the six extrinsic parameters that minimizes the
//! number of occupied voxels in the assembled map.

use lidar_pose_calib::data_io::{associate_frames_with_poses, CalibrationResult, Stage, StageDiagnostics};
use lidar_pose_calib::geometry::{EulerZYX, RigidTransform, Vec3};
use lidar_pose_calib::occupancy_refinement::{refine, SearchSpec};
use lidar_pose_calib::synthetic_world::{simulate, SceneModel, SimSpec};

fn main() -> lidar_pose_calib::Result<()> {
    let mut spec = SimSpec::default();
    spec.trajectory.loop_count = 1;
    let ds = simulate(&SceneModel::intersection(), &spec)?;
    let frames = associate_frames_with_poses(ds.frames, &ds.trajectory)?.frames;
    let truth = ds.true_extrinsic;

    // A rough-quality start: 0.15 deg and 2 cm off.
    let start = truth.compose(&RigidTransform::from_euler_zyx(
        EulerZYX::from_degrees(0.15, -0.1, 0.15),
        Vec3::new(0.02, -0.02, 0.0),
    ));
    let rough = CalibrationResult::new(start, Stage::Rough, StageDiagnostics::default(), None)?;
    let out = refine(&frames, &ds.trajectory, &rough, &SearchSpec::default())?;

    for (name, t) in [("start", &start), ("refined", &out.result.extrinsic)] {
        let d = truth.inverse().compose(t);
        let e = d.euler_zyx().to_degrees();
        println!(
            "{name:8} roll {:+.3} pitch {:+.3} yaw {:+.3} deg  x {:+.4} y {:+.4} m",
            e[0], e[1], e[2], d.translation().x, d.translation().y
        );
    }
    println!("{} candidates scored, details {:?}", out.records.len(), out.result.diagnostics.details);
    Ok(())
}
