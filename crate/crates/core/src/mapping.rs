//! Global map assembly: every LiDAR point of frame `i` lands in the world at
//! `P_i T p`, with `P_i` the pose-sensor pose and `T` the extrinsic.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::PosedFrame;
use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Trajectory, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapOptions {
    /// Place every point through the pose at its own firing time.
    pub deskew: bool,
    /// Stride-sample the map down to at most this many points; 0 keeps all.
    pub max_points: usize,
    /// Seeds the stride offset.
    pub seed: u64,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self {
            deskew: true,
            max_points: 500_000,
            seed: 0,
        }
    }
}

/// Sampled sensor-frame points, each tied to the pose-sensor pose it is
/// placed with. Assembling under a new extrinsic only re-runs two rigid
/// transforms per point, so de-skew is exact for every candidate.
#[derive(Clone, Debug, Default)]
pub struct MapSource {
    points: Vec<Vec3>,
    pose_index: Vec<u32>,
    poses: Vec<RigidTransform>,
    frame_index: Vec<u32>,
    /// Points before sampling.
    pub source_points: usize,
    /// Kept every `stride`-th point.
    pub stride: usize,
    /// Frames left out because their scan runs past the trajectory.
    pub skipped_frames: Vec<usize>,
}

impl MapSource {
    pub fn new(frames: &[PosedFrame], traj: &Trajectory, options: &MapOptions) -> Result<Self> {
        let total: usize = frames.iter().map(|f| f.frame.len()).sum();
        let stride = if options.max_points == 0 || total <= options.max_points {
            1
        } else {
            total.div_ceil(options.max_points)
        };
        let offset = ChaCha8Rng::seed_from_u64(options.seed).random_range(0..stride);
        let mut out = MapSource {
            source_points: total,
            stride,
            ..Default::default()
        };
        let mut global = 0usize;
        for (fi, pf) in frames.iter().enumerate() {
            let first = global;
            global += pf.frame.len();
            if options.deskew {
                let end = pf.frame.frame_timestamp + pf.frame.max_relative_time();
                if !traj.contains(end) {
                    log::warn!("frame {fi}: scan ends past the trajectory, left out of the map");
                    out.skipped_frames.push(fi);
                    continue;
                }
            }
            let mut last_tau = f64::NAN;
            if !options.deskew {
                out.poses.push(pf.pose);
            }
            for (k, p) in pf.frame.points.iter().enumerate() {
                if !(first + k + offset).is_multiple_of(stride) {
                    continue;
                }
                if options.deskew && p.relative_time != last_tau {
                    out.poses
                        .push(traj.interpolate(pf.frame.frame_timestamp + p.relative_time)?);
                    last_tau = p.relative_time;
                }
                out.points.push(p.position);
                out.pose_index.push((out.poses.len() - 1) as u32);
                out.frame_index.push(fi as u32);
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Calls `f` with every world point under `extrinsic`, in frame order.
    pub fn for_each_world_point(&self, extrinsic: &RigidTransform, mut f: impl FnMut(Vec3)) {
        for (p, &k) in self.points.iter().zip(&self.pose_index) {
            f(self.poses[k as usize].transform_point(&extrinsic.transform_point(p)));
        }
    }

    pub fn assemble(&self, extrinsic: &RigidTransform) -> GlobalMap {
        let mut points = Vec::with_capacity(self.len());
        self.for_each_world_point(extrinsic, |p| points.push(p));
        GlobalMap {
            bounds: bounds(&points),
            points,
            frame_index: self.frame_index.clone(),
            source_points: self.source_points,
            stride: self.stride,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalMap {
    pub points: Vec<Vec3>,
    pub frame_index: Vec<u32>,
    /// Axis-aligned (min, max), `None` for an empty map.
    pub bounds: Option<(Vec3, Vec3)>,
    pub source_points: usize,
    pub stride: usize,
}

impl GlobalMap {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn bounds(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = points.first()?;
    Some(points.iter().fold((*first, *first), |(lo, hi), p| {
        (lo.inf(p), hi.sup(p))
    }))
}

pub fn build_map(
    frames: &[PosedFrame],
    traj: &Trajectory,
    extrinsic: &RigidTransform,
    options: &MapOptions,
) -> Result<GlobalMap> {
    Ok(MapSource::new(frames, traj, options)?.assemble(extrinsic))
}

/// Writes one `x y z` line per point (plus the source frame with
/// `with_frame`). With `voxel`, points are first replaced by the centroid of
/// each occupied voxel; the frame column then holds the lowest frame index.
pub fn export_map(map: &GlobalMap, path: &Path, voxel: Option<f64>, with_frame: bool) -> Result<usize> {
    if map.is_empty() {
        return Err(Error::Config("refusing to export an empty map".into()));
    }
    let rows: Vec<(Vec3, u32)> = match voxel {
        Some(size) if size > 0.0 => {
            let mut cells: BTreeMap<[i64; 3], (Vec3, usize, u32)> = BTreeMap::new();
            for (p, &f) in map.points.iter().zip(&map.frame_index) {
                let key = p.map(|v| (v / size).floor() as i64);
                let e = cells.entry([key.x, key.y, key.z]).or_insert((Vec3::zeros(), 0, f));
                e.0 += p;
                e.1 += 1;
                e.2 = e.2.min(f);
            }
            cells.into_values().map(|(s, n, f)| (s / n as f64, f)).collect()
        }
        Some(size) => return Err(Error::Config(format!("voxel size must be positive, got {size}"))),
        None => map.points.iter().copied().zip(map.frame_index.iter().copied()).collect(),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (p, f) in &rows {
        let line = if with_frame {
            format!("{} {} {} {}\n", p.x, p.y, p.z, f)
        } else {
            format!("{} {} {}\n", p.x, p.y, p.z)
        };
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(rows.len())
}

/// Reads the first three columns of an XYZ file.
pub fn read_xyz(path: &Path) -> Result<Vec<Vec3>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .take(3)
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, format!("line {}", n + 1), format!("{e}")))?;
        if v.len() != 3 {
            return Err(Error::parse(path, format!("line {}", n + 1), "expected 3 columns"));
        }
        out.push(Vec3::new(v[0], v[1], v[2]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{LidarFrame, LidarPoint};
    use crate::geometry::{EulerZYX, TrajectorySample};
    use approx::assert_relative_eq;
    use tempfile::tempdir;

    fn still_traj(pose: RigidTransform) -> Trajectory {
        Trajectory::new(
            (0..3)
                .map(|k| TrajectorySample {
                    timestamp: k as f64,
                    pose,
                })
                .collect(),
        )
        .unwrap()
    }

    fn posed(points: &[Vec3], pose: RigidTransform) -> PosedFrame {
        PosedFrame {
            frame: LidarFrame::new(
                0.5,
                points.iter().map(|p| LidarPoint::new(*p, 0.0, 0.0)).collect(),
            ),
            pose,
        }
    }

    #[test]
    fn identity_map_is_the_frame() {
        let pts = [Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 0.0)];
        let id = RigidTransform::identity();
        let map = build_map(&[posed(&pts, id)], &still_traj(id), &id, &MapOptions::default()).unwrap();
        assert_eq!(map.points, pts.to_vec());
        assert_eq!(map.frame_index, vec![0, 0]);
    }

    #[test]
    fn translated_pose_lifts_point() {
        let pose = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 5.0));
        let id = RigidTransform::identity();
        let opts = MapOptions {
            deskew: false,
            ..Default::default()
        };
        let map = build_map(&[posed(&[Vec3::x()], pose)], &still_traj(pose), &id, &opts).unwrap();
        assert_eq!(map.points[0], Vec3::new(1.0, 0.0, 5.0));
    }

    #[test]
    fn extrinsic_folds_into_poses() {
        let pose = RigidTransform::from_euler_zyx(EulerZYX::new(0.1, -0.2, 0.7), Vec3::new(3.0, 1.0, 0.2));
        let ext = RigidTransform::from_euler_zyx(EulerZYX::new(0.02, 0.01, 0.3), Vec3::new(0.5, 0.2, 1.4));
        let pts: Vec<Vec3> = (0..20).map(|i| Vec3::new(i as f64, 1.0, -0.3 * i as f64)).collect();
        let opts = MapOptions {
            deskew: false,
            ..Default::default()
        };
        let a = build_map(&[posed(&pts, pose)], &still_traj(pose), &ext, &opts).unwrap();
        let folded = pose.compose(&ext);
        let b = build_map(&[posed(&pts, folded)], &still_traj(folded), &RigidTransform::identity(), &opts)
            .unwrap();
        for (p, q) in a.points.iter().zip(&b.points) {
            assert_relative_eq!(p, q, epsilon = 1e-12);
        }
    }

    #[test]
    fn sampling_reconciles_counts() {
        let id = RigidTransform::identity();
        let pts: Vec<Vec3> = (0..1000).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let frames = vec![posed(&pts[..400], id), posed(&pts[400..], id)];
        let opts = MapOptions {
            deskew: false,
            max_points: 300,
            seed: 7,
        };
        let map = build_map(&frames, &still_traj(id), &id, &opts).unwrap();
        assert_eq!(map.source_points, 1000);
        assert_eq!(map.stride, 4);
        assert_eq!(map.len(), 250);
        assert!(map.len() <= 300);
    }

    #[test]
    fn export_counts_and_round_trip() {
        let dir = tempdir().unwrap();
        let map = GlobalMap {
            points: vec![
                Vec3::new(0.01, 0.02, 0.03),
                Vec3::new(0.05, 0.06, 0.07),
                Vec3::new(5.123456789, -2.0, 1.0),
            ],
            frame_index: vec![0, 1, 2],
            bounds: None,
            source_points: 3,
            stride: 1,
        };
        let path = dir.path().join("m.xyz");
        assert_eq!(export_map(&map, &path, None, false).unwrap(), 3);
        let back = read_xyz(&path).unwrap();
        for (a, b) in back.iter().zip(&map.points) {
            assert!((a - b).norm() < 1e-6);
        }
        assert_eq!(export_map(&map, &path, Some(0.1), true).unwrap(), 2);
        let back = read_xyz(&path).unwrap();
        assert_relative_eq!(back[0], Vec3::new(0.03, 0.04, 0.05), epsilon = 1e-9);
    }
}
