//! Ground-truth data generator: a planar intersection-like scene, a
//! figure-8 drive and a spinning multi-beam LiDAR observed through a known
//! extrinsic.
//!
//! Scans are simulated point by point at their firing time, so a moving
//! sensor produces exactly the motion distortion a real spinning LiDAR does.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_io::{self, FiducialPoint, LidarFrame, LidarPoint};
use crate::error::{Error, Result};
use crate::geometry::{
    so3_exp, EulerZYX, RigidTransform, Trajectory, TrajectorySample, Vec3,
};

/// A bounded planar rectangle `corner + a * edge_u + b * edge_v`, `a, b in [0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenePlane {
    pub id: u32,
    pub corner: Vec3,
    pub edge_u: Vec3,
    pub edge_v: Vec3,
}

impl ScenePlane {
    pub fn normal(&self) -> Vec3 {
        self.edge_u.cross(&self.edge_v).normalize()
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal().dot(&(p - self.corner))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneModel {
    pub planes: Vec<ScenePlane>,
    pub ground_id: u32,
    pub fiducials: Vec<Vec3>,
}

impl SceneModel {
    pub fn validate(&self) -> Result<()> {
        if self.planes.is_empty() {
            return Err(Error::Config("scene has no planes".into()));
        }
        for p in &self.planes {
            if p.edge_u.cross(&p.edge_v).norm() < 1e-9 {
                return Err(Error::Config(format!(
                    "plane {} has linearly dependent edges",
                    p.id
                )));
            }
        }
        let ground = self
            .plane(self.ground_id)
            .ok_or_else(|| Error::Config("ground plane id not in scene".into()))?;
        if (ground.normal() - Vec3::z()).norm() > 1e-12 {
            return Err(Error::Config("ground plane normal must be +z".into()));
        }
        Ok(())
    }

    pub fn plane(&self, id: u32) -> Option<&ScenePlane> {
        self.planes.iter().find(|p| p.id == id)
    }

    /// Ground 80 x 80 m, six facades (two of them at 30 and 60 degrees) and
    /// five ground fiducials. A synthetic stand-in, not a measured site.
    pub fn intersection() -> Self {
        let facade = |id: u32, center: [f64; 2], direction_deg: f64, length: f64, height: f64| {
            let d = direction_deg.to_radians();
            let u = Vec3::new(d.cos(), d.sin(), 0.0) * length;
            let corner = Vec3::new(center[0], center[1], 0.0) - 0.5 * u;
            ScenePlane {
                id,
                corner,
                edge_u: u,
                edge_v: Vec3::new(0.0, 0.0, height),
            }
        };
        let planes = vec![
            ScenePlane {
                id: 0,
                corner: Vec3::new(-40.0, -40.0, 0.0),
                edge_u: Vec3::new(80.0, 0.0, 0.0),
                edge_v: Vec3::new(0.0, 80.0, 0.0),
            },
            facade(1, [26.0, 0.0], 90.0, 30.0, 10.0),
            facade(2, [-26.0, 0.0], 90.0, 30.0, 12.0),
            facade(3, [-4.0, 18.0], 0.0, 28.0, 9.0),
            facade(4, [4.0, -18.0], 0.0, 28.0, 11.0),
            facade(5, [21.0, 16.0], 120.0, 14.0, 10.0),
            facade(6, [-21.0, -16.0], 150.0, 14.0, 10.0),
        ];
        Self {
            planes,
            ground_id: 0,
            fiducials: vec![
                Vec3::new(0.0, 8.0, 0.0),
                Vec3::new(0.0, -8.0, 0.0),
                Vec3::new(16.0, 6.0, 0.0),
                Vec3::new(-16.0, -6.0, 0.0),
                Vec3::new(20.0, -4.0, 0.0),
            ],
        }
    }

    /// Nearest intersection of a ray with any plane: `(range, plane id)`.
    pub fn cast_ray(&self, origin: &Vec3, dir: &Vec3, max_range: f64) -> Option<(f64, u32)> {
        let mut best: Option<(f64, u32)> = None;
        for p in &self.planes {
            let n = p.edge_u.cross(&p.edge_v);
            let denom = n.dot(dir);
            if denom.abs() < 1e-12 {
                continue;
            }
            let s = n.dot(&(p.corner - origin)) / denom;
            if s <= 1e-6 || s > max_range || best.is_some_and(|(b, _)| s >= b) {
                continue;
            }
            let rel = origin + dir * s - p.corner;
            let (uu, uv, vv) = (
                p.edge_u.norm_squared(),
                p.edge_u.dot(&p.edge_v),
                p.edge_v.norm_squared(),
            );
            let (ru, rv) = (rel.dot(&p.edge_u), rel.dot(&p.edge_v));
            let det = uu * vv - uv * uv;
            let a = (ru * vv - rv * uv) / det;
            let b = (rv * uu - ru * uv) / det;
            if (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b) {
                best = Some((s, p.id));
            }
        }
        best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LidarModel {
    pub beams: usize,
    /// Lowest and highest beam elevation, degrees.
    pub vertical_fov_deg: [f64; 2],
    pub azimuth_steps: usize,
    pub spin_rate_hz: f64,
    pub max_range_m: f64,
    pub intensity: f32,
}

impl Default for LidarModel {
    fn default() -> Self {
        Self {
            beams: 16,
            vertical_fov_deg: [-15.0, 15.0],
            azimuth_steps: 900,
            spin_rate_hz: 10.0,
            max_range_m: 80.0,
            intensity: 100.0,
        }
    }
}

impl LidarModel {
    pub fn elevations(&self) -> Vec<f64> {
        let [lo, hi] = self.vertical_fov_deg;
        if self.beams == 1 {
            return vec![(0.5 * (lo + hi)).to_radians()];
        }
        (0..self.beams)
            .map(|b| (lo + (hi - lo) * b as f64 / (self.beams - 1) as f64).to_radians())
            .collect()
    }

    pub fn scan_period(&self) -> f64 {
        1.0 / self.spin_rate_hz
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySpec {
    /// Lemniscate half-width `a`, meters.
    pub half_width_m: f64,
    pub loop_count: usize,
    pub speed_mps: f64,
    pub pose_rate_hz: f64,
    /// Constant height of the pose sensor above ground.
    pub height_m: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            half_width_m: 12.5,
            loop_count: 3,
            speed_mps: 2.0,
            pose_rate_hz: 100.0,
            height_m: 0.4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub range_sigma_m: f64,
    pub pose_translation_sigma_m: f64,
    pub pose_rotation_sigma_rad: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            range_sigma_m: 0.02,
            pose_translation_sigma_m: 0.0,
            pose_rotation_sigma_rad: 0.0,
        }
    }
}

/// Extrinsic as roll/pitch/yaw (degrees, ZYX) and translation (meters).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtrinsicSpec {
    pub euler_zyx_deg: [f64; 3],
    pub translation_m: [f64; 3],
}

impl ExtrinsicSpec {
    pub fn transform(&self) -> RigidTransform {
        data_io::euler_deg_to_transform(self.euler_zyx_deg, self.translation_m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSpec {
    pub true_extrinsic: ExtrinsicSpec,
    pub lidar: LidarModel,
    pub trajectory: TrajectorySpec,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            true_extrinsic: ExtrinsicSpec {
                euler_zyx_deg: [1.0, -1.5, 10.0],
                translation_m: [0.5, 0.3, 1.5],
            },
            lidar: LidarModel::default(),
            trajectory: TrajectorySpec::default(),
            noise: NoiseSpec::default(),
            seed: 1,
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        let t = &self.trajectory;
        let l = &self.lidar;
        if !(l.spin_rate_hz > 0.0) {
            return Err(Error::Config("lidar.spin_rate_hz must be positive".into()));
        }
        if t.loop_count < 1 {
            return Err(Error::Config("trajectory.loop_count must be at least 1".into()));
        }
        if !(t.speed_mps > 0.0 && t.half_width_m > 0.0 && t.pose_rate_hz > 0.0) {
            return Err(Error::Config(
                "trajectory speed, half width and pose rate must be positive".into(),
            ));
        }
        if l.beams == 0 || l.azimuth_steps == 0 || !(l.max_range_m > 0.0) {
            return Err(Error::Config("lidar model needs beams, azimuth steps and range".into()));
        }
        if self.noise.range_sigma_m < 0.0
            || self.noise.pose_translation_sigma_m < 0.0
            || self.noise.pose_rotation_sigma_rad < 0.0
        {
            return Err(Error::Config("noise sigmas must be non-negative".into()));
        }
        Ok(())
    }
}

/// Constant-speed lemniscate of Bernoulli, repeated `loops` times, starting
/// at the apex of the `+x` lobe.
#[derive(Clone, Debug)]
pub struct LemniscatePath {
    a: f64,
    height: f64,
    speed: f64,
    loops: usize,
    ds: f64,
    arc: Vec<f64>,
}

const ARC_TABLE_INTERVALS: usize = 20_000;
// 3-point Gauss-Legendre on [-1, 1].
const GL_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GL_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

impl LemniscatePath {
    pub fn new(spec: &TrajectorySpec) -> Self {
        let ds = TAU / ARC_TABLE_INTERVALS as f64;
        let mut path = Self {
            a: spec.half_width_m,
            height: spec.height_m,
            speed: spec.speed_mps,
            loops: spec.loop_count,
            ds,
            arc: Vec::with_capacity(ARC_TABLE_INTERVALS + 1),
        };
        let mut acc = 0.0;
        path.arc.push(0.0);
        for i in 0..ARC_TABLE_INTERVALS {
            let s0 = i as f64 * ds;
            acc += path.speed_integral(s0, s0 + ds);
            path.arc.push(acc);
        }
        path
    }

    pub fn position(&self, s: f64) -> [f64; 2] {
        let (sn, cs) = s.sin_cos();
        let d = 1.0 + sn * sn;
        [self.a * cs / d, self.a * sn * cs / d]
    }

    pub fn derivative(&self, s: f64) -> [f64; 2] {
        let (sn, cs) = s.sin_cos();
        let d = 1.0 + sn * sn;
        let dx = -self.a * sn * (3.0 - sn * sn) / (d * d);
        let dy = self.a * ((2.0 * s).cos() * d - 2.0 * sn * sn * cs * cs) / (d * d);
        [dx, dy]
    }

    fn ds_norm(&self, s: f64) -> f64 {
        let [dx, dy] = self.derivative(s);
        dx.hypot(dy)
    }

    fn speed_integral(&self, s0: f64, s1: f64) -> f64 {
        let half = 0.5 * (s1 - s0);
        let mid = 0.5 * (s0 + s1);
        GL_NODES
            .iter()
            .zip(GL_WEIGHTS)
            .map(|(x, w)| w * self.ds_norm(mid + half * x))
            .sum::<f64>()
            * half
    }

    pub fn loop_length(&self) -> f64 {
        self.arc[ARC_TABLE_INTERVALS]
    }

    pub fn duration(&self) -> f64 {
        self.loop_length() * self.loops as f64 / self.speed
    }

    /// Parameter `s` at arc length `l` within one loop.
    pub fn parameter_at(&self, l: f64) -> f64 {
        let l = l.clamp(0.0, self.loop_length());
        let i = (self.arc.partition_point(|&v| v <= l).max(1) - 1).min(ARC_TABLE_INTERVALS - 1);
        let s0 = i as f64 * self.ds;
        let span = self.arc[i + 1] - self.arc[i];
        let mut s = s0 + self.ds * ((l - self.arc[i]) / span);
        for _ in 0..3 {
            let f = self.arc[i] + self.speed_integral(s0, s) - l;
            s -= f / self.ds_norm(s);
        }
        s
    }

    /// Arc length at the first center crossing (`s = pi/2`).
    pub fn center_crossing_arc(&self) -> f64 {
        let i = ARC_TABLE_INTERVALS / 4;
        self.arc[i]
    }

    /// Exact vehicle pose (pose-sensor frame in world) at time `t`.
    pub fn pose_at(&self, t: f64) -> RigidTransform {
        let total = self.loop_length() * self.loops as f64;
        let l = (self.speed * t).clamp(0.0, total);
        let mut within = l % self.loop_length();
        if l >= total {
            within = self.loop_length();
        }
        let s = self.parameter_at(within);
        let [x, y] = self.position(s);
        let [dx, dy] = self.derivative(s);
        let heading = dy.atan2(dx);
        RigidTransform::from_euler_zyx(
            EulerZYX::new(0.0, 0.0, heading),
            Vec3::new(x, y, self.height),
        )
    }
}

/// Samples the vehicle trajectory at the pose rate, with optional noise.
pub fn generate_trajectory(spec: &SimSpec) -> Trajectory {
    let path = LemniscatePath::new(&spec.trajectory);
    let dt = 1.0 / spec.trajectory.pose_rate_hz;
    let n = (path.duration() / dt).floor() as usize + 1;
    let mut rng = stream_rng(spec.seed, 0);
    let noise = &spec.noise;
    let tn = Normal::new(0.0, noise.pose_translation_sigma_m.max(0.0)).expect("sigma");
    let rn = Normal::new(0.0, noise.pose_rotation_sigma_rad.max(0.0)).expect("sigma");
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            let mut pose = path.pose_at(t);
            if noise.pose_translation_sigma_m > 0.0 || noise.pose_rotation_sigma_rad > 0.0 {
                let dw = Vec3::new(rn.sample(&mut rng), rn.sample(&mut rng), rn.sample(&mut rng));
                let dt = Vec3::new(tn.sample(&mut rng), tn.sample(&mut rng), tn.sample(&mut rng));
                pose = RigidTransform::new(so3_exp(&dw) * pose.rotation(), pose.translation() + dt);
            }
            TrajectorySample { timestamp: t, pose }
        })
        .collect();
    Trajectory::new(samples).expect("sample times increase")
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One scan. `sensor_pose_at(tau)` gives the sensor pose in the world at
/// `tau` seconds after scan start. Returns the frame and per-point plane ids.
pub fn simulate_scan(
    scene: &SceneModel,
    sensor_pose_at: impl Fn(f64) -> RigidTransform,
    lidar: &LidarModel,
    frame_timestamp: f64,
    range_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> (LidarFrame, Vec<u32>) {
    let elevations: Vec<(f64, f64)> = lidar.elevations().iter().map(|e| e.sin_cos()).collect();
    let noise = Normal::new(0.0, range_sigma.max(0.0)).expect("sigma");
    let steps = lidar.azimuth_steps;
    let mut points = Vec::with_capacity(steps * elevations.len() / 2);
    let mut labels = Vec::with_capacity(points.capacity());
    for j in 0..steps {
        let tau = j as f64 / (steps as f64 * lidar.spin_rate_hz);
        let pose = sensor_pose_at(tau);
        let (sa, ca) = (TAU * j as f64 / steps as f64).sin_cos();
        for &(se, ce) in &elevations {
            let d = Vec3::new(ce * ca, ce * sa, se);
            let world_dir = pose.rotate(&d);
            if let Some((range, id)) = scene.cast_ray(pose.translation(), &world_dir, lidar.max_range_m)
            {
                let r = if range_sigma > 0.0 {
                    range + noise.sample(rng)
                } else {
                    range
                };
                points.push(LidarPoint::new(d * r, lidar.intensity, tau));
                labels.push(id);
            }
        }
    }
    (LidarFrame::new(frame_timestamp, points), labels)
}

/// A complete simulated recording held in memory.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub scene: SceneModel,
    pub spec: SimSpec,
    pub frames: Vec<LidarFrame>,
    pub labels: Vec<Vec<u32>>,
    /// Recorded pose-sensor trajectory (noisy if pose noise is enabled).
    pub trajectory: Trajectory,
    pub true_extrinsic: RigidTransform,
    pub fiducials: Vec<FiducialPoint>,
}

/// Frame start times: every scan lies entirely inside the drive.
pub fn frame_times(spec: &SimSpec) -> Vec<f64> {
    let path = LemniscatePath::new(&spec.trajectory);
    let period = spec.lidar.scan_period();
    let n = ((path.duration() - period) / period).floor().max(-1.0) as i64 + 1;
    (0..n.max(0)).map(|k| k as f64 * period).collect()
}

/// Simulates the whole drive. Frames run in parallel on independent RNG
/// streams, so the output does not depend on the thread count.
pub fn simulate(scene: &SceneModel, spec: &SimSpec) -> Result<SyntheticDataset> {
    scene.validate()?;
    spec.validate()?;
    let path = LemniscatePath::new(&spec.trajectory);
    let extrinsic = spec.true_extrinsic.transform();
    let times = frame_times(spec);
    let scans: Vec<(LidarFrame, Vec<u32>)> = times
        .par_iter()
        .enumerate()
        .map(|(k, &t0)| {
            let mut rng = stream_rng(spec.seed, k as u64 + 1);
            simulate_scan(
                scene,
                |tau| path.pose_at(t0 + tau).compose(&extrinsic),
                &spec.lidar,
                t0,
                spec.noise.range_sigma_m,
                &mut rng,
            )
        })
        .collect();
    let (frames, labels) = scans.into_iter().unzip();
    Ok(SyntheticDataset {
        scene: scene.clone(),
        spec: spec.clone(),
        frames,
        labels,
        trajectory: generate_trajectory(spec),
        true_extrinsic: extrinsic,
        fiducials: scene
            .fiducials
            .iter()
            .map(|p| FiducialPoint { position: *p })
            .collect(),
    })
}

/// Sensor (LiDAR) trajectory: vehicle poses composed with the extrinsic.
pub fn sensor_trajectory(spec: &SimSpec) -> Trajectory {
    let extrinsic = spec.true_extrinsic.transform();
    generate_trajectory(spec).map_poses(|p| p.compose(&extrinsic))
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const FIDUCIALS_FILE: &str = "fiducials.csv";
pub const FRAMES_DIR: &str = "frames";
pub const LABELS_DIR: &str = "labels";

/// Writes a dataset in the standard layout. The manifest is written last and
/// marks a complete dataset; it records a SHA-256 of every other file.
pub fn write_dataset(ds: &SyntheticDataset, dir: &Path) -> Result<()> {
    let frames_dir = dir.join(FRAMES_DIR);
    let labels_dir = dir.join(LABELS_DIR);
    for d in [dir, frames_dir.as_path(), labels_dir.as_path()] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.exists() {
        fs::remove_file(&manifest).map_err(|e| Error::io(&manifest, e))?;
    }

    let mut hasher = Sha256::new();
    let mut files = serde_json::Map::new();
    let mut record = |name: String, bytes: &[u8]| {
        let digest = Sha256::digest(bytes);
        hasher.update(name.as_bytes());
        hasher.update(digest);
        files.insert(name, serde_json::Value::String(hex(&digest)));
    };

    for (k, (frame, labels)) in ds.frames.iter().zip(&ds.labels).enumerate() {
        let fname = format!("{FRAMES_DIR}/{k:06}.lpcf");
        let bytes = data_io::encode_frame(frame);
        fs::write(dir.join(&fname), &bytes).map_err(|e| Error::io(dir.join(&fname), e))?;
        record(fname, &bytes);
        let lname = format!("{LABELS_DIR}/{k:06}.labels");
        data_io::write_labels(labels, &dir.join(&lname))?;
        let bytes: Vec<u8> = labels.iter().flat_map(|l| l.to_le_bytes()).collect();
        record(lname, &bytes);
    }

    data_io::write_trajectory(&ds.trajectory, &dir.join(TRAJECTORY_FILE))?;
    data_io::write_fiducials(&ds.fiducials, &dir.join(FIDUCIALS_FILE))?;
    let mut gt = data_io::extrinsic_json(&ds.true_extrinsic);
    gt["seed"] = ds.spec.seed.into();
    gt["spec"] = serde_json::to_value(&ds.spec).expect("serializable");
    data_io::write_json(&dir.join(GROUND_TRUTH_FILE), &gt)?;
    for name in [TRAJECTORY_FILE, FIDUCIALS_FILE, GROUND_TRUTH_FILE] {
        let p = dir.join(name);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        record(name.to_string(), &bytes);
    }

    let content_hash = hex(&hasher.finalize());
    let m = serde_json::json!({
        "synthetic": true,
        "notice": "simulated data; scene dimensions and sensor mounting are synthetic stand-ins",
        "seed": ds.spec.seed,
        "frame_count": ds.frames.len(),
        "spec": ds.spec,
        "scene": ds.scene,
        "content_sha256": content_hash,
        "files": files,
    });
    data_io::write_json(&manifest, &m)
}

/// Simulates and writes a dataset in one call.
pub fn generate_dataset(scene: &SceneModel, spec: &SimSpec, dir: &Path) -> Result<SyntheticDataset> {
    let ds = simulate(scene, spec)?;
    write_dataset(&ds, dir)?;
    Ok(ds)
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn wrap_angle(a: f64) -> f64 {
        (a + PI).rem_euclid(TAU) - PI
    }

    fn small_spec() -> SimSpec {
        SimSpec {
            lidar: LidarModel { beams: 8, azimuth_steps: 180, ..Default::default() },
            trajectory: TrajectorySpec { loop_count: 1, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn lemniscate_closes_after_one_loop() {
        let spec = small_spec();
        let traj = generate_trajectory(&spec);
        let first = traj.samples().first().unwrap().pose.translation();
        let last = traj.samples().last().unwrap().pose.translation();
        let step = spec.trajectory.speed_mps / spec.trajectory.pose_rate_hz;
        assert!((first - last).norm() <= step + 1e-9, "{}", (first - last).norm());
    }

    #[test]
    fn duration_matches_path_length() {
        let spec = small_spec();
        let path = LemniscatePath::new(&spec.trajectory);
        // Independent length estimate: dense polyline.
        let n = 200_000;
        let mut len = 0.0;
        let mut prev = path.position(0.0);
        for i in 1..=n {
            let p = path.position(TAU * i as f64 / n as f64);
            len += (p[0] - prev[0]).hypot(p[1] - prev[1]);
            prev = p;
        }
        assert!((path.loop_length() - len).abs() < 1e-6, "{} vs {len}", path.loop_length());
        let traj = generate_trajectory(&spec);
        let (t0, t1) = traj.span().unwrap();
        let expected = len / spec.trajectory.speed_mps;
        assert!((t1 - t0 - expected).abs() <= 1.0 / spec.trajectory.pose_rate_hz);
    }

    #[test]
    fn constant_speed() {
        let spec = small_spec();
        let path = LemniscatePath::new(&spec.trajectory);
        let h = 1e-3;
        for k in 1..50 {
            let t = k as f64 * 0.6;
            let a = path.pose_at(t - h);
            let b = path.pose_at(t + h);
            let v = (b.translation() - a.translation()).norm() / (2.0 * h);
            assert!((v - spec.trajectory.speed_mps).abs() < 1e-4, "t={t} v={v}");
        }
    }

    #[test]
    fn heading_at_center_matches_tangent() {
        let spec = small_spec();
        let path = LemniscatePath::new(&spec.trajectory);
        let tc = path.center_crossing_arc() / spec.trajectory.speed_mps;
        let pose = path.pose_at(tc);
        assert!(pose.translation().xy().norm() < 1e-9);
        // Numerical derivative of the position curve.
        let h = 1e-5;
        let a = path.pose_at(tc - h);
        let b = path.pose_at(tc + h);
        let d = b.translation() - a.translation();
        let numeric = d.y.atan2(d.x);
        let yaw = pose.euler_zyx().yaw;
        assert!(wrap_angle(yaw - numeric).abs() < 1e-6, "{yaw} vs {numeric}");
    }

    #[test]
    fn single_wall_ranges_are_exact() {
        let scene = SceneModel {
            planes: vec![
                ScenePlane {
                    id: 0,
                    corner: Vec3::new(-1000.0, -1000.0, -100.0),
                    edge_u: Vec3::new(2000.0, 0.0, 0.0),
                    edge_v: Vec3::new(0.0, 2000.0, 0.0),
                },
                ScenePlane {
                    id: 1,
                    corner: Vec3::new(10.0, -50.0, -50.0),
                    edge_u: Vec3::new(0.0, 100.0, 0.0),
                    edge_v: Vec3::new(0.0, 0.0, 100.0),
                },
            ],
            ground_id: 0,
            fiducials: vec![],
        };
        let lidar = LidarModel { beams: 5, azimuth_steps: 72, ..Default::default() };
        let mut rng = stream_rng(0, 0);
        let (frame, labels) =
            simulate_scan(&scene, |_| RigidTransform::identity(), &lidar, 0.0, 0.0, &mut rng);
        let mut wall = 0;
        for (p, id) in frame.points.iter().zip(&labels) {
            if *id == 1 {
                wall += 1;
                let d = p.position.normalize();
                let expected = 10.0 / d.x;
                assert!((p.position.norm() - expected).abs() < 1e-9);
                assert!((p.position.x - 10.0).abs() < 1e-9);
            }
        }
        assert!(wall > 0);
    }

    #[test]
    fn stationary_scans_are_deterministic() {
        let scene = SceneModel::intersection();
        let lidar = LidarModel { beams: 4, azimuth_steps: 90, ..Default::default() };
        let pose = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 1.8));
        let a = simulate_scan(&scene, |_| pose, &lidar, 0.0, 0.02, &mut stream_rng(3, 1));
        let b = simulate_scan(&scene, |_| pose, &lidar, 0.0, 0.02, &mut stream_rng(3, 1));
        assert_eq!(a, b);
    }

    #[test]
    fn zero_noise_points_lie_on_labeled_planes() {
        let mut spec = small_spec();
        spec.noise.range_sigma_m = 0.0;
        spec.trajectory.loop_count = 1;
        let scene = SceneModel::intersection();
        let ds = simulate(&scene, &spec).unwrap();
        let path = LemniscatePath::new(&spec.trajectory);
        for (frame, labels) in ds.frames.iter().zip(&ds.labels).step_by(40) {
            for (p, id) in frame.points.iter().zip(labels) {
                let pose = path.pose_at(frame.frame_timestamp + p.relative_time).compose(&ds.true_extrinsic);
                let w = pose.transform_point(&p.position);
                let d = scene.plane(*id).unwrap().signed_distance(&w);
                assert!(d.abs() < 1e-9, "{d}");
            }
        }
    }

    #[test]
    fn identity_extrinsic_sensor_trajectory_is_vehicle_trajectory() {
        let mut spec = small_spec();
        spec.true_extrinsic = ExtrinsicSpec { euler_zyx_deg: [0.0; 3], translation_m: [0.0; 3] };
        assert_eq!(sensor_trajectory(&spec), generate_trajectory(&spec));
    }

    #[test]
    fn default_drive_has_about_a_thousand_frames() {
        let spec = SimSpec::default();
        let n = frame_times(&spec).len();
        assert!((900..=1100).contains(&n), "{n}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = SimSpec::default();
        spec.trajectory.loop_count = 0;
        assert!(spec.validate().is_err());
        let mut spec = SimSpec::default();
        spec.lidar.spin_rate_hz = 0.0;
        assert!(spec.validate().is_err());
    }
}
