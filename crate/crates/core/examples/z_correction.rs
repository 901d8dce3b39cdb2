//! Recovers a wrong mount height from five surveyed ground points.

use lidar_pose_calib::data_io::{associate_frames_with_poses, CalibrationResult, Stage, StageDiagnostics};
use lidar_pose_calib::geometry::Vec3;
use lidar_pose_calib::synthetic_world::{simulate, SceneModel, SimSpec};
use lidar_pose_calib::z_correction::{run_z_correction, ZParams};

fn main() -> lidar_pose_calib::Result<()> {
    let mut spec = SimSpec::default();
    spec.trajectory.loop_count = 1;
    let ds = simulate(&SceneModel::intersection(), &spec)?;
    let frames = associate_frames_with_poses(ds.frames, &ds.trajectory)?.frames;
    let truth = ds.true_extrinsic;

    let wrong = truth.with_translation(truth.translation() + Vec3::new(0.0, 0.0, 0.12));
    let rough = CalibrationResult::new(wrong, Stage::Rough, StageDiagnostics::default(), None)?;
    let refined = CalibrationResult::new(wrong, Stage::Refined, StageDiagnostics::default(), Some(rough))?;
    let out = run_z_correction(&frames, &ds.trajectory, &refined, &ds.fiducials, &ZParams::default())?;

    let r = &out.report;
    println!("z fix {:+.4} m after {} iterations, {} fiducials matched", r.z_fix, r.iterations, r.matched);
    println!("fiducial RMS {:.4} m -> {:.4} m", r.rms_before, r.rms_after);
    let dz = out.result.extrinsic.translation().z - truth.translation().z;
    println!("remaining height error {dz:+.4} m");
    Ok(())
}
