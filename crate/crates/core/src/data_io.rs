//! On-disk artifacts: LiDAR frames (binary `LPCF` and its ASCII twin),
//! pose trajectories, fiducial points, plane-label sidecars and calibration
//! results.
//!
//! Binary frame layout, all little-endian:
//!
//! ```text
//! "LPCF" | version: u16 | frame_timestamp: f64 | count: u32 | count x [x, y, z, intensity, relative_time]: f32
//! ```
//!
//! The ASCII twin starts with `# LPCF-ASCII v1 timestamp=<f64>` followed by
//! one space-separated `x y z intensity relative_time` row per point.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{EulerZYX, RigidTransform, Trajectory, TrajectorySample, Vec3};

pub const FRAME_MAGIC: &[u8; 4] = b"LPCF";
pub const FRAME_VERSION: u16 = 1;
pub const ASCII_HEADER: &str = "# LPCF-ASCII v1";
pub const TRAJECTORY_HEADER: [&str; 8] = ["timestamp", "tx", "ty", "tz", "qx", "qy", "qz", "qw"];
/// Upper bound on a point's offset from the frame timestamp (one scan period).
pub const MAX_RELATIVE_TIME: f64 = 0.2;

const FRAME_HEADER_LEN: usize = 4 + 2 + 8 + 4;
const POINT_RECORD_LEN: usize = 5 * 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LidarPoint {
    /// Sensor frame, meters.
    pub position: Vec3,
    pub intensity: f32,
    /// Seconds after the frame timestamp.
    pub relative_time: f64,
}

impl LidarPoint {
    pub fn new(position: Vec3, intensity: f32, relative_time: f64) -> Self {
        Self {
            position,
            intensity,
            relative_time,
        }
    }

    fn is_valid(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && (0.0..MAX_RELATIVE_TIME).contains(&self.relative_time)
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct LidarFrame {
    /// Scan start, seconds.
    pub frame_timestamp: f64,
    pub points: Vec<LidarPoint>,
}

impl LidarFrame {
    pub fn new(frame_timestamp: f64, points: Vec<LidarPoint>) -> Self {
        Self {
            frame_timestamp,
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn max_relative_time(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.relative_time)
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiducialPoint {
    pub position: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Rough,
    Refined,
    ZCorrected,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Rough => "rough",
            Stage::Refined => "refined",
            Stage::ZCorrected => "z_corrected",
        }
    }

    fn parent(&self) -> Option<Stage> {
        match self {
            Stage::Rough => None,
            Stage::Refined => Some(Stage::Rough),
            Stage::ZCorrected => Some(Stage::Refined),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct StageDiagnostics {
    pub iterations: usize,
    pub final_cost: f64,
    pub converged: bool,
    /// Wall time; kept out of the result JSON so results stay reproducible.
    pub runtime_s: f64,
    /// Stage-specific extra values, serialized verbatim.
    pub details: serde_json::Map<String, serde_json::Value>,
}

/// The output of one calibration stage, chained to the stage it started from.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationResult {
    pub extrinsic: RigidTransform,
    pub stage: Stage,
    pub diagnostics: StageDiagnostics,
    pub parent: Option<Box<CalibrationResult>>,
}

impl CalibrationResult {
    /// Links a new stage result to its parent. Fails if the stages would be
    /// out of order.
    pub fn new(
        extrinsic: RigidTransform,
        stage: Stage,
        diagnostics: StageDiagnostics,
        parent: Option<CalibrationResult>,
    ) -> Result<Self> {
        if parent.as_ref().map(|p| p.stage) != stage.parent() {
            return Err(Error::Config(format!(
                "stage {} cannot follow {:?}",
                stage.name(),
                parent.as_ref().map(|p| p.stage.name())
            )));
        }
        Ok(Self {
            extrinsic,
            stage,
            diagnostics,
            parent: parent.map(Box::new),
        })
    }

    pub fn to_json(&self) -> ResultJson {
        let e = self.extrinsic.euler_zyx().to_degrees();
        let t = self.extrinsic.translation();
        let mut diagnostics = serde_json::Map::new();
        diagnostics.insert("iterations".into(), self.diagnostics.iterations.into());
        diagnostics.insert("final_cost".into(), json_f64(self.diagnostics.final_cost));
        diagnostics.insert("converged".into(), self.diagnostics.converged.into());
        for (k, v) in &self.diagnostics.details {
            diagnostics.insert(k.clone(), v.clone());
        }
        if let Some(parent) = &self.parent {
            diagnostics.insert(
                "parent".into(),
                serde_json::to_value(parent.to_json()).expect("serializable"),
            );
        }
        ResultJson {
            extrinsic: self.extrinsic.to_row_major().to_vec(),
            euler_zyx_deg: e.to_vec(),
            translation_m: vec![t.x, t.y, t.z],
            stage: self.stage.name().to_string(),
            diagnostics: serde_json::Value::Object(diagnostics),
        }
    }

    /// Rebuilds a result (and its parent chain) from its JSON form. Runtime
    /// is not stored and comes back as zero.
    pub fn from_json(json: &ResultJson) -> Result<Self> {
        let extrinsic = json.transform()?;
        let stage = match json.stage.as_str() {
            "rough" => Stage::Rough,
            "refined" => Stage::Refined,
            "z_corrected" => Stage::ZCorrected,
            other => return Err(Error::Config(format!("unknown stage `{other}`"))),
        };
        let mut details = json
            .diagnostics
            .as_object()
            .cloned()
            .unwrap_or_default();
        let parent = match details.remove("parent") {
            Some(v) => {
                let pj: ResultJson = serde_json::from_value(v)
                    .map_err(|e| Error::Config(format!("bad parent result: {e}")))?;
                Some(Self::from_json(&pj)?)
            }
            None => None,
        };
        let iterations = details
            .remove("iterations")
            .and_then(|v| v.as_u64())
            .unwrap_or(0) as usize;
        let final_cost = details
            .remove("final_cost")
            .and_then(|v| v.as_f64())
            .unwrap_or(f64::NAN);
        let converged = details
            .remove("converged")
            .and_then(|v| v.as_bool())
            .unwrap_or(false);
        Self::new(
            extrinsic,
            stage,
            StageDiagnostics {
                iterations,
                final_cost,
                converged,
                runtime_s: 0.0,
                details,
            },
            parent,
        )
    }

    /// Total runtime of this stage and all parents.
    pub fn total_runtime_s(&self) -> f64 {
        self.diagnostics.runtime_s + self.parent.as_ref().map_or(0.0, |p| p.total_runtime_s())
    }
}

fn json_f64(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v)
        .map(serde_json::Value::Number)
        .unwrap_or(serde_json::Value::Null)
}

/// Serialized calibration result. Field names are fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultJson {
    /// Row-major 4x4 matrix.
    pub extrinsic: Vec<f64>,
    pub euler_zyx_deg: Vec<f64>,
    pub translation_m: Vec<f64>,
    pub stage: String,
    #[serde(default)]
    pub diagnostics: serde_json::Value,
}

impl ResultJson {
    pub fn transform(&self) -> Result<RigidTransform> {
        transform_from_values(&self.extrinsic)
    }
}

fn transform_from_values(values: &[f64]) -> Result<RigidTransform> {
    let m: [f64; 16] = values.try_into().map_err(|_| {
        Error::Config(format!("extrinsic needs 16 numbers, got {}", values.len()))
    })?;
    let t = RigidTransform::from_row_major(&m);
    if !t.is_valid(1e-6) {
        return Err(Error::Config("extrinsic rotation is not orthonormal".into()));
    }
    Ok(t)
}

/// Any JSON object carrying an `"extrinsic"` field of 16 row-major numbers:
/// result files, ground-truth files and plain reference files all qualify.
pub fn read_extrinsic_json(path: &Path) -> Result<RigidTransform> {
    #[derive(Deserialize)]
    struct Carrier {
        extrinsic: Vec<f64>,
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let c: Carrier = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path, format!("line {}", e.line()), e.to_string()))?;
    transform_from_values(&c.extrinsic).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// JSON form used for reference and ground-truth extrinsics.
pub fn extrinsic_json(t: &RigidTransform) -> serde_json::Value {
    let e = t.euler_zyx().to_degrees();
    let tr = t.translation();
    serde_json::json!({
        "extrinsic": t.to_row_major().to_vec(),
        "euler_zyx_deg": e.to_vec(),
        "translation_m": [tr.x, tr.y, tr.z],
    })
}

pub fn write_result(result: &CalibrationResult, path: &Path) -> Result<()> {
    write_json(path, &result.to_json())
}

pub fn read_result(path: &Path) -> Result<CalibrationResult> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let json: ResultJson = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path, format!("line {}", e.line()), e.to_string()))?;
    CalibrationResult::from_json(&json)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn euler_deg_to_transform(euler_zyx_deg: [f64; 3], translation_m: [f64; 3]) -> RigidTransform {
    RigidTransform::from_euler_zyx(
        EulerZYX::from_degrees(euler_zyx_deg[0], euler_zyx_deg[1], euler_zyx_deg[2]),
        Vec3::from(translation_m),
    )
}

// ---------------------------------------------------------------------------
// Frames

pub fn encode_frame(frame: &LidarFrame) -> Vec<u8> {
    let mut buf = Vec::with_capacity(FRAME_HEADER_LEN + frame.len() * POINT_RECORD_LEN);
    buf.extend_from_slice(FRAME_MAGIC);
    buf.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    buf.extend_from_slice(&frame.frame_timestamp.to_le_bytes());
    buf.extend_from_slice(&(frame.points.len() as u32).to_le_bytes());
    for p in &frame.points {
        for v in [
            p.position.x as f32,
            p.position.y as f32,
            p.position.z as f32,
            p.intensity,
            p.relative_time as f32,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn decode_frame(bytes: &[u8], path: &Path) -> Result<LidarFrame> {
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(Error::parse(path, "offset 0", "truncated header"));
    }
    if &bytes[0..4] != FRAME_MAGIC {
        return Err(Error::parse(path, "offset 0", "bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FRAME_VERSION {
        return Err(Error::parse(
            path,
            "offset 4",
            format!("unsupported version {version}"),
        ));
    }
    let frame_timestamp = f64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes"));
    let count = u32::from_le_bytes(bytes[14..18].try_into().expect("4 bytes")) as usize;
    if count == 0 {
        return Err(Error::parse(path, "offset 14", "empty frame"));
    }
    let expected = FRAME_HEADER_LEN + count * POINT_RECORD_LEN;
    if bytes.len() != expected {
        return Err(Error::parse(
            path,
            format!("offset {}", bytes.len().min(expected)),
            format!("expected {expected} bytes for {count} points, found {}", bytes.len()),
        ));
    }
    let mut points = Vec::with_capacity(count);
    for (i, rec) in bytes[FRAME_HEADER_LEN..]
        .chunks_exact(POINT_RECORD_LEN)
        .enumerate()
    {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().expect("4 bytes"));
        let p = LidarPoint::new(
            Vec3::new(f(0) as f64, f(1) as f64, f(2) as f64),
            f(3),
            f(4) as f64,
        );
        if !p.is_valid() {
            return Err(Error::parse(
                path,
                format!("offset {}", FRAME_HEADER_LEN + i * POINT_RECORD_LEN),
                "non-finite position or relative time outside [0, 0.2) s",
            ));
        }
        points.push(p);
    }
    Ok(LidarFrame::new(frame_timestamp, points))
}

pub fn write_frame(frame: &LidarFrame, path: &Path) -> Result<()> {
    fs::write(path, encode_frame(frame)).map_err(|e| Error::io(path, e))
}

pub fn write_frame_ascii(frame: &LidarFrame, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{ASCII_HEADER} timestamp={}", frame.frame_timestamp).map_err(io)?;
    for p in &frame.points {
        writeln!(
            w,
            "{} {} {} {} {}",
            p.position.x, p.position.y, p.position.z, p.intensity, p.relative_time
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads either frame format, detected from the first bytes.
pub fn read_frame(path: &Path) -> Result<LidarFrame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(FRAME_MAGIC) {
        decode_frame(&bytes, path)
    } else if bytes.starts_with(ASCII_HEADER.as_bytes()) {
        parse_ascii_frame(&bytes, path)
    } else {
        Err(Error::parse(path, "offset 0", "neither LPCF binary nor LPCF-ASCII"))
    }
}

fn parse_ascii_frame(bytes: &[u8], path: &Path) -> Result<LidarFrame> {
    let reader = BufReader::new(bytes);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .unwrap_or_default();
    let ts = header
        .strip_prefix(ASCII_HEADER)
        .and_then(|rest| rest.trim().strip_prefix("timestamp="))
        .ok_or_else(|| Error::parse(path, "line 1", "malformed header"))?;
    let frame_timestamp: f64 = ts
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, "line 1", format!("bad timestamp `{ts}`")))?;

    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 5 {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                message: format!("line {lineno}: expected 5 columns, found {}", cols.len()),
            });
        }
        let mut v = [0.0f64; 5];
        for (slot, c) in v.iter_mut().zip(&cols) {
            *slot = c.parse().map_err(|_| {
                Error::parse(path, format!("line {lineno}"), format!("bad number `{c}`"))
            })?;
        }
        let p = LidarPoint::new(Vec3::new(v[0], v[1], v[2]), v[3] as f32, v[4]);
        if !p.is_valid() {
            return Err(Error::parse(
                path,
                format!("line {lineno}"),
                "non-finite position or relative time outside [0, 0.2) s",
            ));
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::parse(path, "line 2", "empty frame"));
    }
    Ok(LidarFrame::new(frame_timestamp, points))
}

/// Frame files (`.lpcf` binary or `.txt` ASCII) of a directory, in name order.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("lpcf") | Some("txt")
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Reads all frames in a directory and checks timestamps increase strictly.
pub fn read_frames_dir(dir: &Path) -> Result<Vec<LidarFrame>> {
    let files = list_frame_files(dir)?;
    let mut frames: Vec<LidarFrame> = Vec::with_capacity(files.len());
    for f in &files {
        let frame = read_frame(f)?;
        if let Some(prev) = frames.last() {
            if !(frame.frame_timestamp > prev.frame_timestamp) {
                return Err(Error::Schema {
                    path: f.clone(),
                    message: format!(
                        "frame timestamp {} does not follow {}",
                        frame.frame_timestamp, prev.frame_timestamp
                    ),
                });
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

// ---------------------------------------------------------------------------
// Plane-label sidecars

pub fn write_labels(labels: &[u32], path: &Path) -> Result<()> {
    let bytes: Vec<u8> = labels.iter().flat_map(|l| l.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::parse(
            path,
            format!("offset {}", bytes.len()),
            "length is not a multiple of 4",
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

// ---------------------------------------------------------------------------
// Trajectories

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != TRAJECTORY_HEADER {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            message: format!(
                "expected header `{}`, found `{}`",
                TRAJECTORY_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut samples: Vec<TrajectorySample> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let mut v = [0.0f64; 8];
        for (k, slot) in v.iter_mut().enumerate() {
            let s = rec.get(k).ok_or_else(|| Error::Schema {
                path: path.to_path_buf(),
                message: format!("row {row}: missing column {}", TRAJECTORY_HEADER[k]),
            })?;
            *slot = s.parse().map_err(|_| {
                Error::parse(path, format!("line {}", row + 1), format!("bad number `{s}`"))
            })?;
        }
        let q = [v[4], v[5], v[6], v[7]];
        let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(0.99..=1.01).contains(&norm) {
            return Err(Error::InvalidQuaternion { row, norm });
        }
        if let Some(prev) = samples.last() {
            if !(v[0] > prev.timestamp) {
                return Err(Error::NonMonotonicTimestamps {
                    row,
                    prev: prev.timestamp,
                    next: v[0],
                });
            }
        }
        samples.push(TrajectorySample {
            timestamp: v[0],
            pose: RigidTransform::from_quaternion(q, Vec3::new(v[1], v[2], v[3])),
        });
    }
    Trajectory::new(samples)
}

pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(TRAJECTORY_HEADER)
        .map_err(|e| csv_error(path, e))?;
    for s in traj.samples() {
        let t = s.pose.translation();
        let q = s.pose.to_quaternion();
        let row = [s.timestamp, t.x, t.y, t.z, q[0], q[1], q[2], q[3]].map(|v| v.to_string());
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let location = e
        .position()
        .map(|p| format!("line {}", p.line()))
        .unwrap_or_else(|| "unknown".into());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::parse(path, location, format!("{kind:?}")),
    }
}

// ---------------------------------------------------------------------------
// Fiducials

pub fn read_fiducials(path: &Path) -> Result<Vec<FiducialPoint>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["x", "y", "z"] {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            message: "expected header `x,y,z`".into(),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let mut v = [0.0f64; 3];
        for (k, slot) in v.iter_mut().enumerate() {
            let s = rec.get(k).unwrap_or("");
            *slot = s.parse().map_err(|_| {
                Error::parse(path, format!("line {}", i + 2), format!("bad number `{s}`"))
            })?;
            if !slot.is_finite() {
                return Err(Error::parse(path, format!("line {}", i + 2), "non-finite coordinate"));
            }
        }
        out.push(FiducialPoint {
            position: Vec3::from(v),
        });
    }
    if out.len() < 3 {
        return Err(Error::TooFewFiducials { found: out.len() });
    }
    Ok(out)
}

pub fn write_fiducials(fiducials: &[FiducialPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["x", "y", "z"])
        .map_err(|e| csv_error(path, e))?;
    for f in fiducials {
        let p = f.position;
        w.write_record([p.x, p.y, p.z].map(|v| v.to_string()))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Frame / pose association

/// A frame together with the pose-sensor pose at its timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct PosedFrame {
    pub frame: LidarFrame,
    pub pose: RigidTransform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Association {
    pub frames: Vec<PosedFrame>,
    /// Input indices of frames outside the trajectory span.
    pub dropped: Vec<usize>,
}

/// Pairs every frame with the interpolated pose at its timestamp. Frames
/// outside the trajectory span are dropped and reported.
pub fn associate_frames_with_poses(
    frames: Vec<LidarFrame>,
    traj: &Trajectory,
) -> Result<Association> {
    let mut out = Vec::with_capacity(frames.len());
    let mut dropped = Vec::new();
    for (i, frame) in frames.into_iter().enumerate() {
        match traj.interpolate(frame.frame_timestamp) {
            Ok(pose) => out.push(PosedFrame { frame, pose }),
            Err(Error::OutOfRange { .. }) => dropped.push(i),
            Err(e) => return Err(e),
        }
    }
    if !dropped.is_empty() {
        log::warn!("{} frame(s) outside the trajectory span dropped", dropped.len());
    }
    if out.is_empty() {
        return Err(Error::EmptyOverlap {
            dropped: dropped.len(),
        });
    }
    Ok(Association {
        frames: out,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    #[test]
    fn ascii_single_point() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.txt");
        fs::write(&path, format!("{ASCII_HEADER} timestamp=12.5\n0 0 1 100 0.0\n")).unwrap();
        let f = read_frame(&path).unwrap();
        assert_eq!(f.frame_timestamp, 12.5);
        assert_eq!(f.points.len(), 1);
        assert_eq!(f.points[0].position, Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(f.points[0].intensity, 100.0);
    }

    #[test]
    fn empty_frames_are_parse_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.txt");
        fs::write(&path, format!("{ASCII_HEADER} timestamp=1\n")).unwrap();
        assert!(matches!(read_frame(&path), Err(Error::Parse { .. })));
        let path = dir.path().join("f.lpcf");
        write_frame(&LidarFrame::new(1.0, vec![]), &path).unwrap();
        assert!(matches!(read_frame(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.txt");
        fs::write(&path, format!("{ASCII_HEADER} timestamp=1\n0 0 1 100\n")).unwrap();
        assert!(matches!(read_frame(&path), Err(Error::Schema { .. })));
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let frame = LidarFrame::new(1.0, vec![LidarPoint::new(Vec3::new(1.0, 2.0, 3.0), 7.0, 0.01)]);
        let mut bytes = encode_frame(&frame);
        bytes.pop();
        let err = decode_frame(&bytes, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("offset"), "{err}");
    }

    #[test]
    fn ten_thousand_point_binary_round_trip() {
        // Values are f32-representable, so the binary round trip is exact.
        let points: Vec<LidarPoint> = (0..10_000)
            .map(|i| {
                let a = i as f32 * 0.013;
                LidarPoint::new(
                    Vec3::new((a.cos() * 20.0) as f64, (a.sin() * 20.0) as f64, (i as f32 * 1e-3) as f64),
                    (i % 256) as f32,
                    ((i as f32) * 1e-5) as f64,
                )
            })
            .collect();
        let frame = LidarFrame::new(1_700_000_000.123_456, points);
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.lpcf");
        write_frame(&frame, &path).unwrap();
        let back = read_frame(&path).unwrap();
        assert_eq!(back, frame);
        assert_eq!(encode_frame(&back), fs::read(&path).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ascii_round_trip_within_micrometer(
            pts in prop::collection::vec((prop::array::uniform3(-100.0f64..100.0), 0.0f64..0.099), 1..50),
            ts in 0.0f64..2e9,
        ) {
            let frame = LidarFrame::new(ts, pts.iter().map(|(p, t)| LidarPoint::new(Vec3::from(*p), 10.0, *t)).collect());
            let dir = tempdir().unwrap();
            let path = dir.path().join("f.txt");
            write_frame_ascii(&frame, &path).unwrap();
            let back = read_frame(&path).unwrap();
            prop_assert_eq!(back.frame_timestamp, frame.frame_timestamp);
            for (a, b) in back.points.iter().zip(&frame.points) {
                prop_assert!((a.position - b.position).abs().max() <= 1e-6);
            }
        }

        #[test]
        fn binary_rewrite_is_bit_exact(
            pts in prop::collection::vec((prop::array::uniform3(-100.0f64..100.0), 0.0f64..0.099), 1..50),
        ) {
            let frame = LidarFrame::new(5.0, pts.iter().map(|(p, t)| LidarPoint::new(Vec3::from(*p), 3.0, *t)).collect());
            let bytes = encode_frame(&frame);
            let back = decode_frame(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(encode_frame(&back), bytes);
        }
    }

    #[test]
    fn trajectory_identity_row_and_duplicates() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.csv");
        fs::write(&path, "timestamp,tx,ty,tz,qx,qy,qz,qw\n0.0,0,0,0,0,0,0,1\n1.0,1,0,0,0,0,0,1\n").unwrap();
        let t = read_trajectory(&path).unwrap();
        assert_eq!(t.samples()[0].pose, RigidTransform::identity());

        fs::write(&path, "timestamp,tx,ty,tz,qx,qy,qz,qw\n1.0,0,0,0,0,0,0,1\n1.0,1,0,0,0,0,0,1\n").unwrap();
        assert!(matches!(read_trajectory(&path), Err(Error::NonMonotonicTimestamps { .. })));

        fs::write(&path, "timestamp,tx,ty,tz,qx,qy,qz,qw\n1.0,0,0,0,0,0,0,1.2\n").unwrap();
        assert!(matches!(read_trajectory(&path), Err(Error::InvalidQuaternion { .. })));
    }

    #[test]
    fn fiducial_counts() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.csv");
        fs::write(&path, "x,y,z\n0,0,0\n1,0,0\n0,1,0\n").unwrap();
        assert_eq!(read_fiducials(&path).unwrap().len(), 3);
        fs::write(&path, "x,y,z\n0,0,0\n1,0,0\n").unwrap();
        assert!(matches!(read_fiducials(&path), Err(Error::TooFewFiducials { found: 2 })));
    }

    #[test]
    fn association_drops_frames_outside_span() {
        let traj = Trajectory::new(vec![
            TrajectorySample { timestamp: 10.0, pose: RigidTransform::from_translation(Vec3::new(1.0, 0.0, 0.0)) },
            TrajectorySample { timestamp: 11.0, pose: RigidTransform::from_translation(Vec3::new(2.0, 0.0, 0.0)) },
        ])
        .unwrap();
        let p = vec![LidarPoint::new(Vec3::x(), 1.0, 0.0)];
        let frames = vec![LidarFrame::new(9.5, p.clone()), LidarFrame::new(10.0, p.clone())];
        let a = associate_frames_with_poses(frames, &traj).unwrap();
        assert_eq!(a.dropped, vec![0]);
        assert_eq!(a.frames[0].pose, traj.samples()[0].pose);

        let frames = vec![LidarFrame::new(20.0, p)];
        assert!(matches!(associate_frames_with_poses(frames, &traj), Err(Error::EmptyOverlap { dropped: 1 })));
    }

    #[test]
    fn result_json_round_trip_keeps_parent_chain() {
        let rough = CalibrationResult::new(
            euler_deg_to_transform([1.0, 2.0, 3.0], [0.1, 0.2, 0.3]),
            Stage::Rough,
            StageDiagnostics { iterations: 7, final_cost: 0.5, converged: true, ..Default::default() },
            None,
        )
        .unwrap();
        let refined = CalibrationResult::new(
            euler_deg_to_transform([1.1, 2.0, 3.0], [0.1, 0.2, 0.3]),
            Stage::Refined,
            StageDiagnostics::default(),
            Some(rough),
        )
        .unwrap();
        let json = refined.to_json();
        let text = serde_json::to_string(&json).unwrap();
        let back = CalibrationResult::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.extrinsic, refined.extrinsic);
        assert_eq!(back.parent.as_ref().unwrap().stage, Stage::Rough);
        assert_eq!(back.parent.as_ref().unwrap().diagnostics.iterations, 7);
        assert!(CalibrationResult::new(RigidTransform::identity(), Stage::ZCorrected, StageDiagnostics::default(), None).is_err());
    }
}
