//! Planar point selection and adaptive-voxel plane patches on one scan.

use lidar_pose_calib::plane_features::{extract_planes_adaptive, select_planar_points, FeatureParams};
use lidar_pose_calib::spatial::KdTree;
use lidar_pose_calib::synthetic_world::{simulate, SceneModel, SimSpec};
use lidar_pose_calib::geometry::Vec3;

fn main() -> lidar_pose_calib::Result<()> {
    let mut spec = SimSpec::default();
    spec.trajectory.loop_count = 1;
    let ds = simulate(&SceneModel::intersection(), &spec)?;
    let frame = &ds.frames[ds.frames.len() / 3];
    let points = frame.positions();
    let params = FeatureParams::default();

    let tree = KdTree::build(&points);
    let planar = select_planar_points(&points, &tree, &params);
    println!("{} points, {} selected as planar", points.len(), planar.len());

    let patches = extract_planes_adaptive(&points, None, &params, &Vec3::zeros(), 0);
    println!("{} patches", patches.len());
    let mut by_size: Vec<_> = patches.iter().collect();
    by_size.sort_by_key(|p| std::cmp::Reverse(p.member_indices.len()));
    for p in by_size.iter().take(8) {
        println!(
            "  {:5} points  normal ({:+.3} {:+.3} {:+.3})  radius {:.2} m  thickness {:.4} m",
            p.member_indices.len(),
            p.normal.x,
            p.normal.y,
            p.normal.z,
            p.radius,
            p.eigenvalues[2].sqrt()
        );
    }
    Ok(())
}
