//! Scan de-skew: every point is re-expressed in the sensor frame at scan
//! start using the pose at its own firing time.

use crate::data_io::{LidarFrame, LidarPoint};
use crate::error::Result;
use crate::geometry::{RigidTransform, Trajectory, Vec3};

const STILL_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct DeskewedFrame {
    pub reference_timestamp: f64,
    pub points: Vec<Vec3>,
    pub deskewed: bool,
}

/// Calls `f` with each point and the sensor pose in the world at its firing
/// time. Points fired at the same instant share one interpolation.
fn for_each_firing_pose(
    frame: &LidarFrame,
    traj: &Trajectory,
    extrinsic: &RigidTransform,
    mut f: impl FnMut(&RigidTransform, &LidarPoint),
) -> Result<()> {
    let mut last: Option<(f64, RigidTransform)> = None;
    for p in &frame.points {
        let pose = match last {
            Some((tau, pose)) if tau == p.relative_time => pose,
            _ => {
                let pose = traj
                    .interpolate(frame.frame_timestamp + p.relative_time)?
                    .compose(extrinsic);
                last = Some((p.relative_time, pose));
                pose
            }
        };
        f(&pose, p);
    }
    Ok(())
}

/// Points of `frame` in the world frame, each through its firing-time pose.
pub fn deskew_to_world(
    frame: &LidarFrame,
    traj: &Trajectory,
    extrinsic: &RigidTransform,
) -> Result<Vec<Vec3>> {
    let mut out = Vec::with_capacity(frame.points.len());
    for_each_firing_pose(frame, traj, extrinsic, |pose, p| {
        out.push(pose.transform_point(&p.position))
    })?;
    Ok(out)
}

/// Maps every point to the scan-start sensor frame: `L_ref^-1 L(tau) p`.
/// Fails with `OutOfRange` when the trajectory does not cover the scan.
pub fn deskew(
    frame: &LidarFrame,
    traj: &Trajectory,
    extrinsic: &RigidTransform,
) -> Result<DeskewedFrame> {
    let reference = traj
        .interpolate(frame.frame_timestamp)?
        .compose(extrinsic)
        .inverse();
    let identity = RigidTransform::identity();
    let mut points = Vec::with_capacity(frame.points.len());
    for_each_firing_pose(frame, traj, extrinsic, |pose, p| {
        let rel = reference.compose(pose);
        // Motion below round-off leaves the point untouched, bit for bit.
        points.push(if rel.max_abs_diff(&identity) < STILL_TOLERANCE {
            p.position
        } else {
            rel.transform_point(&p.position)
        })
    })?;
    Ok(DeskewedFrame {
        reference_timestamp: frame.frame_timestamp,
        points,
        deskewed: true,
    })
}

/// Frames as-is, without motion correction.
pub fn passthrough(frame: &LidarFrame) -> DeskewedFrame {
    DeskewedFrame {
        reference_timestamp: frame.frame_timestamp,
        points: frame.positions(),
        deskewed: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{EulerZYX, TrajectorySample};
    use approx::assert_relative_eq;

    fn linear_traj(velocity: Vec3, yaw_rate: f64) -> Trajectory {
        Trajectory::new(
            (0..=100)
                .map(|k| {
                    let t = k as f64 * 0.01;
                    TrajectorySample {
                        timestamp: t,
                        pose: RigidTransform::from_euler_zyx(EulerZYX::new(0.0, 0.0, yaw_rate * t), velocity * t),
                    }
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn stationary_frame_is_unchanged() {
        let traj = linear_traj(Vec3::zeros(), 0.0);
        let frame = LidarFrame::new(
            0.2,
            (0..50)
                .map(|i| LidarPoint::new(Vec3::new(i as f64, 1.0, -0.5), 10.0, i as f64 * 0.001))
                .collect(),
        );
        let ext = RigidTransform::from_euler_zyx(EulerZYX::new(0.01, 0.02, 0.3), Vec3::new(0.5, 0.1, 1.5));
        let out = deskew(&frame, &traj, &ext).unwrap();
        for (a, b) in out.points.iter().zip(&frame.points) {
            assert_eq!(*a, b.position);
        }
    }

    #[test]
    fn constant_velocity_shift() {
        let traj = linear_traj(Vec3::new(1.0, 0.0, 0.0), 0.0);
        let frame = LidarFrame::new(0.1, vec![LidarPoint::new(Vec3::new(9.95, 0.0, 0.0), 0.0, 0.05)]);
        let out = deskew(&frame, &traj, &RigidTransform::identity()).unwrap();
        assert_relative_eq!(out.points[0], Vec3::new(10.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn deskew_matches_world_projection() {
        let traj = linear_traj(Vec3::new(2.0, 0.5, 0.0), 0.4);
        let ext = RigidTransform::from_euler_zyx(EulerZYX::new(0.0, 0.1, 0.2), Vec3::new(0.5, 0.0, 1.0));
        let frame = LidarFrame::new(
            0.3,
            (0..20)
                .map(|i| LidarPoint::new(Vec3::new(5.0, i as f64, 1.0), 0.0, i as f64 * 0.005))
                .collect(),
        );
        let local = deskew(&frame, &traj, &ext).unwrap();
        let world = deskew_to_world(&frame, &traj, &ext).unwrap();
        let reference = traj.interpolate(0.3).unwrap().compose(&ext);
        for (l, w) in local.points.iter().zip(&world) {
            assert_relative_eq!(reference.transform_point(l), *w, epsilon = 1e-9);
        }
    }

    #[test]
    fn scan_past_trajectory_end_is_out_of_range() {
        let traj = linear_traj(Vec3::x(), 0.0);
        let frame = LidarFrame::new(0.95, vec![LidarPoint::new(Vec3::x(), 0.0, 0.1)]);
        assert!(deskew(&frame, &traj, &RigidTransform::identity()).is_err());
    }
}
