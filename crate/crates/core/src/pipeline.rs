//! End-to-end runs: configuration, the three stages in order, evaluation
//! against a reference, and the files each command leaves behind.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_io::{
    self, associate_frames_with_poses, read_extrinsic_json, read_fiducials, read_frames_dir,
    read_result, read_trajectory, write_json, write_result, CalibrationResult, FiducialPoint,
    PosedFrame, Stage,
};
use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Trajectory};
use crate::mapping::{build_map, export_map, MapOptions};
use crate::occupancy_refinement::{refine, write_cost_csv, CandidateRecord, SearchSpec};
use crate::rough_calibration::{run_rough, write_trace_csv, RoughParams, WindowTrace};
use crate::synthetic_world::{generate_dataset, hex, ExtrinsicSpec, SceneModel, SimSpec};
use crate::z_correction::{run_z_correction, ZFixResult, ZParams};

pub const RESULT_FILE: &str = "result.json";
pub const TIMING_FILE: &str = "timing.json";
pub const RUN_MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".lock";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    Rough,
    Refine,
    Zfix,
}

impl StageName {
    pub const ALL: [StageName; 3] = [StageName::Rough, StageName::Refine, StageName::Zfix];

    pub fn as_str(&self) -> &'static str {
        match self {
            StageName::Rough => "rough",
            StageName::Refine => "refine",
            StageName::Zfix => "zfix",
        }
    }

    /// Result stage this one produces.
    pub fn output(&self) -> Stage {
        match self {
            StageName::Rough => Stage::Rough,
            StageName::Refine => Stage::Refined,
            StageName::Zfix => Stage::ZCorrected,
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "rough" => Ok(StageName::Rough),
            "refine" => Ok(StageName::Refine),
            "zfix" => Ok(StageName::Zfix),
            other => Err(Error::Config(format!("unknown stage `{other}` (rough, refine, zfix)"))),
        }
    }
}

/// Comma-separated stage list, e.g. `rough,refine`.
pub fn parse_stages(s: &str) -> Result<Vec<StageName>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub frames_dir: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
    pub fiducials: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            frames_dir: None,
            trajectory: None,
            fiducials: None,
            output_dir: PathBuf::from("run"),
        }
    }
}

/// Settings of the `map` command.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportOptions {
    /// Centroid-per-voxel downsampling before writing.
    pub voxel_downsample_m: Option<f64>,
    /// Adds the source frame index as a fourth column.
    pub frame_column: bool,
    /// Stride-sampling cap; 0 keeps every point.
    pub max_points: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub initial_extrinsic: ExtrinsicSpec,
    pub stages: Vec<StageName>,
    /// Result file of an earlier run to continue from.
    pub resume_from: Option<PathBuf>,
    /// Reference extrinsic for error reports and trace columns.
    pub reference: Option<PathBuf>,
    pub rough: RoughParams,
    pub refine: SearchSpec,
    pub zfix: ZParams,
    pub simulator: SimSpec,
    pub map: ExportOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            initial_extrinsic: ExtrinsicSpec {
                euler_zyx_deg: [0.0; 3],
                translation_m: [0.0; 3],
            },
            stages: StageName::ALL.to_vec(),
            resume_from: None,
            reference: None,
            rough: RoughParams::default(),
            refine: SearchSpec::default(),
            zfix: ZParams::default(),
            simulator: SimSpec::default(),
            map: ExportOptions::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config. Relative paths inside it are taken from the
    /// config file's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut cfg.paths;
        for p in [&mut paths.frames_dir, &mut paths.trajectory, &mut paths.fiducials]
            .into_iter()
            .flatten()
        {
            join(p);
        }
        join(&mut paths.output_dir);
        for p in [&mut cfg.resume_from, &mut cfg.reference].into_iter().flatten() {
            join(p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        validate_stages(&self.stages, self.resume_from.is_some())?;
        self.rough.validate()?;
        self.refine.validate()?;
        self.zfix.validate()?;
        self.simulator.validate()
    }
}

/// Stages must be distinct, in pipeline order and without gaps. A list not
/// starting at `rough` needs an earlier result to resume from.
pub fn validate_stages(stages: &[StageName], resuming: bool) -> Result<()> {
    let Some(first) = stages.first() else {
        return Err(Error::Config("no stages selected".into()));
    };
    for w in stages.windows(2) {
        if w[1] as usize != w[0] as usize + 1 {
            return Err(Error::Config(format!(
                "stages must run in order without gaps, got {} after {}",
                w[1], w[0]
            )));
        }
    }
    if *first != StageName::Rough && !resuming {
        return Err(Error::Config(format!("stage {first} needs resume_from")));
    }
    Ok(())
}

/// Process exit code for an error: 2 configuration, 3 data, 4 stage failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::StageFailed { .. }
        | Error::InsufficientCorrespondences { .. }
        | Error::SingularHessian { .. }
        | Error::AllUnmatched
        | Error::DegenerateSet { .. }
        | Error::NearPiRotation { .. } => 4,
        _ => 3,
    }
}

// ---------------------------------------------------------------------------
// Stage chain

pub struct StageInputs<'a> {
    pub frames: &'a [PosedFrame],
    pub trajectory: &'a Trajectory,
    pub fiducials: Option<&'a [FiducialPoint]>,
}

#[derive(Clone, Debug, Default)]
pub struct PipelineRun {
    /// One result per executed stage, in order.
    pub results: Vec<CalibrationResult>,
    pub rough_windows: Vec<WindowTrace>,
    pub refine_records: Vec<CandidateRecord>,
    pub zfix: Option<ZFixResult>,
}

impl PipelineRun {
    pub fn last(&self) -> Option<&CalibrationResult> {
        self.results.last()
    }
}

fn stage_error(stage: StageName, e: Error) -> Error {
    match e {
        Error::StageFailed { .. } => e,
        other => Error::StageFailed {
            stage: stage.to_string(),
            reason: other.to_string(),
        },
    }
}

/// Runs `stages` in order, each starting from the previous result (or from
/// `resume` for the first one, or `initial` for a rough stage).
pub fn run_stages(
    inputs: &StageInputs,
    initial: &RigidTransform,
    resume: Option<CalibrationResult>,
    stages: &[StageName],
    cfg: &PipelineConfig,
) -> Result<PipelineRun> {
    validate_stages(stages, resume.is_some())?;
    let mut run = PipelineRun::default();
    let mut current = resume;
    for &stage in stages {
        let expected_parent = match stage {
            StageName::Rough => None,
            StageName::Refine => Some(Stage::Rough),
            StageName::Zfix => Some(Stage::Refined),
        };
        if stage != StageName::Rough && current.as_ref().map(|c| c.stage) != expected_parent {
            return Err(Error::Config(format!(
                "stage {stage} cannot continue from {:?}",
                current.as_ref().map(|c| c.stage.name())
            )));
        }
        log::info!("stage {stage}: starting");
        let result = match stage {
            StageName::Rough => {
                let out = run_rough(inputs.frames, initial, &cfg.rough).map_err(|e| stage_error(stage, e))?;
                run.rough_windows = out.windows;
                out.result
            }
            StageName::Refine => {
                let parent = current.as_ref().expect("checked above");
                let out = refine(inputs.frames, inputs.trajectory, parent, &cfg.refine)
                    .map_err(|e| stage_error(stage, e))?;
                run.refine_records = out.records;
                out.result
            }
            StageName::Zfix => {
                let fiducials = inputs
                    .fiducials
                    .ok_or_else(|| Error::Config("zfix needs paths.fiducials".into()))?;
                let parent = current.as_ref().expect("checked above");
                let out = run_z_correction(inputs.frames, inputs.trajectory, parent, fiducials, &cfg.zfix)
                    .map_err(|e| match e {
                        Error::TooFewFiducials { .. } => e,
                        other => stage_error(stage, other),
                    })?;
                run.zfix = Some(out.report);
                out.result
            }
        };
        log::info!(
            "stage {stage}: done in {:.1}s, euler zyx {:?} deg, t {:?}",
            result.diagnostics.runtime_s,
            result.extrinsic.euler_zyx().to_degrees(),
            result.extrinsic.translation().as_slice()
        );
        run.results.push(result.clone());
        current = Some(result);
    }
    Ok(run)
}

// ---------------------------------------------------------------------------
// Evaluation

/// Absolute errors of one estimate against the reference, from
/// `reference^-1 estimate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub name: String,
    /// |dx|, |dy|, |dz| in meters.
    pub translation_m: [f64; 3],
    /// |droll|, |dpitch|, |dyaw| in degrees, ZYX.
    pub rotation_deg: [f64; 3],
}

impl ErrorEntry {
    pub fn new(name: impl Into<String>, estimate: &RigidTransform, reference: &RigidTransform) -> Self {
        let d = reference.inverse().compose(estimate);
        let t = d.translation();
        Self {
            name: name.into(),
            translation_m: [t.x.abs(), t.y.abs(), t.z.abs()],
            rotation_deg: d.euler_zyx().to_degrees().map(f64::abs),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub translation_m: [f64; 3],
    pub rotation_deg: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub entries: Vec<ErrorEntry>,
    /// Mean absolute error per component.
    pub mae: ErrorStats,
    /// Population variance of the absolute errors.
    pub variance: ErrorStats,
}

impl ErrorReport {
    pub fn from_entries(entries: Vec<ErrorEntry>) -> Self {
        let n = entries.len().max(1) as f64;
        let stat = |f: &dyn Fn(&ErrorEntry) -> [f64; 6]| {
            let mean: [f64; 6] = std::array::from_fn(|i| entries.iter().map(|e| f(e)[i]).sum::<f64>() / n);
            let var: [f64; 6] = std::array::from_fn(|i| {
                entries.iter().map(|e| (f(e)[i] - mean[i]).powi(2)).sum::<f64>() / n
            });
            (mean, var)
        };
        let (mean, var) = stat(&|e| {
            let (t, r) = (e.translation_m, e.rotation_deg);
            [t[0], t[1], t[2], r[0], r[1], r[2]]
        });
        let split = |v: [f64; 6]| ErrorStats {
            translation_m: [v[0], v[1], v[2]],
            rotation_deg: [v[3], v[4], v[5]],
        };
        Self {
            entries,
            mae: split(mean),
            variance: split(var),
        }
    }
}

/// Error report of every result file matching `pattern`, in path order.
pub fn cmd_evaluate(pattern: &str, reference: &Path) -> Result<ErrorReport> {
    let reference = read_extrinsic_json(reference)?;
    let mut paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| Error::Config(format!("bad glob `{pattern}`: {e}")))?
        .filter_map(|p| p.ok())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no result files match `{pattern}`")));
    }
    let entries = paths
        .iter()
        .map(|p| Ok(ErrorEntry::new(p.display().to_string(), &read_extrinsic_json(p)?, &reference)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorReport::from_entries(entries))
}

// ---------------------------------------------------------------------------
// Commands with files

/// Exclusive hold on an output directory, released on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Frames paired with poses, plus the trajectory and optional fiducials.
pub struct LoadedData {
    pub frames: Vec<PosedFrame>,
    pub trajectory: Trajectory,
    pub fiducials: Option<Vec<FiducialPoint>>,
}

pub fn load_data(paths: &Paths, need_fiducials: bool) -> Result<LoadedData> {
    let frames_dir = paths
        .frames_dir
        .as_ref()
        .ok_or_else(|| Error::Config("paths.frames_dir is not set".into()))?;
    let traj_path = paths
        .trajectory
        .as_ref()
        .ok_or_else(|| Error::Config("paths.trajectory is not set".into()))?;
    let trajectory = read_trajectory(traj_path)?;
    let frames = read_frames_dir(frames_dir)?;
    let assoc = associate_frames_with_poses(frames, &trajectory)?;
    let fiducials = match (&paths.fiducials, need_fiducials) {
        (Some(p), _) => Some(read_fiducials(p)?),
        (None, true) => return Err(Error::Config("zfix needs paths.fiducials".into())),
        (None, false) => None,
    };
    Ok(LoadedData {
        frames: assoc.frames,
        trajectory,
        fiducials,
    })
}

/// Records the SHA-256 of every listed file, then writes the manifest.
fn write_manifest(dir: &Path, command: &str, files: &[String], extra: serde_json::Value) -> Result<()> {
    let mut map = serde_json::Map::new();
    for name in files {
        let p = dir.join(name);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        map.insert(name.clone(), hex(&Sha256::digest(&bytes)).into());
    }
    let m = serde_json::json!({ "command": command, "files": map, "details": extra });
    write_json(&dir.join(RUN_MANIFEST_FILE), &m)
}

#[derive(Clone, Debug)]
pub struct CalibrateOutput {
    pub run: PipelineRun,
    pub output_dir: PathBuf,
    pub error: Option<ErrorReport>,
}

fn result_file(stage: Stage) -> String {
    format!("{}.json", stage.name())
}

/// Loads the data named in the config, runs the selected stages and writes
/// per-stage results, traces, timing and a manifest into the output
/// directory. `stages` and `reference` override the config.
pub fn cmd_calibrate(
    cfg: &PipelineConfig,
    stages: Option<&[StageName]>,
    reference: Option<&Path>,
) -> Result<CalibrateOutput> {
    cfg.validate()?;
    let stages = stages.unwrap_or(&cfg.stages);
    validate_stages(stages, cfg.resume_from.is_some())?;
    let started = Instant::now();
    let dir = cfg.paths.output_dir.clone();
    let _lock = RunLock::acquire(&dir)?;

    let reference = match reference.or(cfg.reference.as_deref()) {
        Some(p) => Some(read_extrinsic_json(p)?),
        None => None,
    };
    let resume = cfg.resume_from.as_deref().map(read_result).transpose()?;
    let data = load_data(&cfg.paths, stages.contains(&StageName::Zfix))?;
    let load_s = started.elapsed().as_secs_f64();
    log::info!("loaded {} frames in {load_s:.1}s", data.frames.len());

    let inputs = StageInputs {
        frames: &data.frames,
        trajectory: &data.trajectory,
        fiducials: data.fiducials.as_deref(),
    };
    let run = run_stages(&inputs, &cfg.initial_extrinsic.transform(), resume, stages, cfg)?;

    let mut files = Vec::new();
    for r in &run.results {
        let name = result_file(r.stage);
        write_result(r, &dir.join(&name))?;
        files.push(name);
    }
    let last = run.last().expect("at least one stage");
    write_result(last, &dir.join(RESULT_FILE))?;
    files.push(RESULT_FILE.to_string());
    if !run.rough_windows.is_empty() {
        write_trace_csv(&run.rough_windows, reference.as_ref(), &dir.join("rough_trace.csv"))?;
        files.push("rough_trace.csv".into());
    }
    if !run.refine_records.is_empty() {
        write_cost_csv(&run.refine_records, &dir.join("refine_costs.csv"))?;
        files.push("refine_costs.csv".into());
    }
    if let Some(z) = &run.zfix {
        write_json(&dir.join("zfix_report.json"), z)?;
        files.push("zfix_report.json".into());
    }
    let error = reference.map(|r| {
        ErrorReport::from_entries(
            run.results
                .iter()
                .map(|res| ErrorEntry::new(res.stage.name(), &res.extrinsic, &r))
                .collect(),
        )
    });
    if let Some(e) = &error {
        write_json(&dir.join("error_report.json"), e)?;
        files.push("error_report.json".into());
    }
    let mut stage_times = serde_json::Map::new();
    for r in &run.results {
        stage_times.insert(r.stage.name().into(), r.diagnostics.runtime_s.into());
    }
    let timing = serde_json::json!({
        "load_s": load_s,
        "stages_s": stage_times,
        "total_s": started.elapsed().as_secs_f64(),
    });
    write_json(&dir.join(TIMING_FILE), &timing)?;
    files.push(TIMING_FILE.into());
    let names: Vec<&str> = stages.iter().map(|s| s.as_str()).collect();
    write_manifest(&dir, "calibrate", &files, serde_json::json!({ "stages": names }))?;
    Ok(CalibrateOutput {
        run,
        output_dir: dir,
        error,
    })
}

/// Simulates the configured dataset into `out`; the manifest is written last.
pub fn cmd_simulate(cfg: &PipelineConfig, out: &Path) -> Result<usize> {
    cfg.simulator.validate()?;
    let _lock = RunLock::acquire(out)?;
    let ds = generate_dataset(&SceneModel::intersection(), &cfg.simulator, out)?;
    Ok(ds.frames.len())
}

/// Builds the map under the extrinsic stored in `extrinsic` and writes it as
/// `map.xyz` into the output directory. Returns the path and line count.
pub fn cmd_map(cfg: &PipelineConfig, extrinsic: &Path, deskew: bool) -> Result<(PathBuf, usize)> {
    let t = read_extrinsic_json(extrinsic)?;
    let dir = cfg.paths.output_dir.clone();
    let _lock = RunLock::acquire(&dir)?;
    let data = load_data(&cfg.paths, false)?;
    let options = MapOptions {
        deskew,
        max_points: cfg.map.max_points,
        seed: cfg.map.seed,
    };
    let map = build_map(&data.frames, &data.trajectory, &t, &options)?;
    let path = dir.join("map.xyz");
    let n = export_map(&map, &path, cfg.map.voxel_downsample_m, cfg.map.frame_column)?;
    write_manifest(
        &dir,
        "map",
        &["map.xyz".to_string()],
        serde_json::json!({ "deskew": deskew, "points": n, "extrinsic": data_io::extrinsic_json(&t) }),
    )?;
    Ok((path, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{EulerZYX, Vec3};

    #[test]
    fn stage_lists() {
        assert_eq!(parse_stages("rough,refine").unwrap(), vec![StageName::Rough, StageName::Refine]);
        assert!(parse_stages("rough,bogus").is_err());
        assert!(validate_stages(&[StageName::Rough, StageName::Zfix], false).is_err());
        assert!(validate_stages(&[StageName::Refine], false).is_err());
        assert!(validate_stages(&[StageName::Refine, StageName::Zfix], true).is_ok());
        assert!(validate_stages(&[], false).is_err());
    }

    #[test]
    fn identical_estimate_has_zero_error() {
        let t = RigidTransform::from_euler_zyx(EulerZYX::new(0.1, 0.2, 0.3), Vec3::new(1.0, 2.0, 3.0));
        let e = ErrorEntry::new("a", &t, &t);
        assert!(e.translation_m.iter().chain(&e.rotation_deg).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn x_offset_in_reference_frame() {
        let r = RigidTransform::from_euler_zyx(EulerZYX::new(0.1, -0.2, 0.7), Vec3::new(0.5, 0.3, 1.5));
        let est = r.compose(&RigidTransform::from_translation(Vec3::new(0.05, 0.0, 0.0)));
        let e = ErrorEntry::new("a", &est, &r);
        assert!((e.translation_m[0] - 0.05).abs() < 1e-12);
        assert!(e.translation_m[1] < 1e-12 && e.translation_m[2] < 1e-12);
        assert!(e.rotation_deg.iter().all(|v| *v < 1e-9));
    }

    #[test]
    fn report_mean_and_variance() {
        let mk = |x: f64| ErrorEntry {
            name: String::new(),
            translation_m: [x, 0.0, 0.0],
            rotation_deg: [0.0, 0.0, 2.0 * x],
        };
        let r = ErrorReport::from_entries(vec![mk(1.0), mk(3.0)]);
        assert_eq!(r.mae.translation_m[0], 2.0);
        assert_eq!(r.variance.translation_m[0], 1.0);
        assert_eq!(r.mae.rotation_deg[2], 4.0);
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{ "rough": { "window_sise": 10 } }"#).unwrap();
        let e = PipelineConfig::from_path(&p).unwrap_err();
        assert_eq!(exit_code(&e), 2);
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{ "paths": { "trajectory": "t.csv", "output_dir": "out" } }"#).unwrap();
        let cfg = PipelineConfig::from_path(&p).unwrap();
        assert_eq!(cfg.paths.trajectory.unwrap(), dir.path().join("t.csv"));
        assert_eq!(cfg.paths.output_dir, dir.path().join("out"));
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunLock::acquire(dir.path()).unwrap();
        assert!(RunLock::acquire(dir.path()).is_err());
        drop(a);
        assert!(RunLock::acquire(dir.path()).is_ok());
    }
}
