//! Mean absolute error and variance over a set of result files.

use lidar_pose_calib::data_io::{euler_deg_to_transform, extrinsic_json, write_json};
use lidar_pose_calib::pipeline::cmd_evaluate;

fn main() -> lidar_pose_calib::Result<()> {
    let dir = fresh_dir();
    let reference = euler_deg_to_transform([1.0, -1.5, 10.0], [0.5, 0.3, 1.5]);
    write_json(&dir.join("reference.json"), &extrinsic_json(&reference))?;
    // Three estimates scattered around the reference.
    let estimates = [
        ([1.02, -1.49, 10.05], [0.51, 0.29, 1.50]),
        ([0.99, -1.52, 9.97], [0.49, 0.31, 1.49]),
        ([1.01, -1.50, 10.02], [0.50, 0.30, 1.51]),
    ];
    for (i, (e, t)) in estimates.iter().enumerate() {
        let run = dir.join(format!("run{i}"));
        std::fs::create_dir_all(&run).expect("temp dir");
        write_json(&run.join("result.json"), &extrinsic_json(&euler_deg_to_transform(*e, *t)))?;
    }
    let pattern = format!("{}/run*/result.json", dir.display());
    let report = cmd_evaluate(&pattern, &dir.join("reference.json"))?;
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    Ok(())
}

fn fresh_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join("lpcalib_evaluate");
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).expect("temp dir");
    d
}
