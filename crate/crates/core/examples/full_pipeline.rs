//! Simulate, calibrate through all three stages and report errors, all
//! through the same entry points the `lpcalib` binary uses.

use lidar_pose_calib::data_io::{write_json, extrinsic_json};
use lidar_pose_calib::pipeline::{cmd_calibrate, cmd_simulate, PipelineConfig};
use lidar_pose_calib::synthetic_world::{FIDUCIALS_FILE, FRAMES_DIR, TRAJECTORY_FILE};

fn main() -> lidar_pose_calib::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let root = std::env::temp_dir().join("lpcalib_full");
    let _ = std::fs::remove_dir_all(&root);
    let data = root.join("data");

    let mut cfg = PipelineConfig::default();
    cfg.simulator.trajectory.loop_count = 1;
    cmd_simulate(&cfg, &data)?;

    cfg.paths.frames_dir = Some(data.join(FRAMES_DIR));
    cfg.paths.trajectory = Some(data.join(TRAJECTORY_FILE));
    cfg.paths.fiducials = Some(data.join(FIDUCIALS_FILE));
    cfg.paths.output_dir = root.join("run");
    cfg.initial_extrinsic.euler_zyx_deg = [8.0, -6.0, 25.0];
    cfg.initial_extrinsic.translation_m = [0.2, 0.0, 1.6];
    let reference = root.join("reference.json");
    write_json(&reference, &extrinsic_json(&cfg.simulator.true_extrinsic.transform()))?;

    let out = cmd_calibrate(&cfg, None, Some(&reference))?;
    for e in &out.error.expect("reference given").entries {
        println!(
            "{:12} |d roll,pitch,yaw| {:.4} {:.4} {:.4} deg   |d x,y,z| {:.4} {:.4} {:.4} m",
            e.name, e.rotation_deg[0], e.rotation_deg[1], e.rotation_deg[2],
            e.translation_m[0], e.translation_m[1], e.translation_m[2]
        );
    }
    println!("outputs in {}", out.output_dir.display());
    Ok(())
}
