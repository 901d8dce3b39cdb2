//! Height fix from surveyed ground points. Planar driving leaves the mount
//! height unobservable, so the map is shifted vertically onto the fiducials.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{CalibrationResult, FiducialPoint, PosedFrame, Stage, StageDiagnostics};
use crate::error::{Error, Result};
use crate::geometry::{Trajectory, Vec3};
use crate::mapping::{build_map, GlobalMap, MapOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZParams {
    /// Horizontal search radius around each fiducial.
    pub horizontal_radius_m: f64,
    /// Largest height difference for a map point to count as ground.
    pub z_gate_m: f64,
    pub max_iterations: usize,
    pub tolerance_m: f64,
    pub map: MapOptions,
}

impl Default for ZParams {
    fn default() -> Self {
        Self {
            horizontal_radius_m: 0.5,
            z_gate_m: 0.5,
            max_iterations: 5,
            tolerance_m: 1e-4,
            map: MapOptions::default(),
        }
    }
}

impl ZParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizontal_radius_m > 0.0 && self.z_gate_m > 0.0 && self.tolerance_m > 0.0) {
            return Err(Error::Config("zfix radius, gate and tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("zfix.max_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZFixResult {
    /// Height to add to the map (and the extrinsic z translation).
    pub z_fix: f64,
    pub rms_before: f64,
    pub rms_after: f64,
    /// Matched fiducials.
    pub matched: usize,
    /// Nearest-neighbour distance per fiducial after the shift; `None` when unmatched.
    pub distances: Vec<Option<f64>>,
    pub unmatched: Vec<usize>,
    pub iterations: usize,
}

/// Nearest gated map point to `f` with the map raised by `shift`.
fn nearest_ground(candidates: &[Vec3], f: &Vec3, shift: f64, gate: f64) -> Option<Vec3> {
    candidates
        .iter()
        .map(|p| Vec3::new(p.x, p.y, p.z + shift))
        .filter(|p| (p.z - f.z).abs() < gate)
        .min_by(|a, b| (a - f).norm_squared().total_cmp(&(b - f).norm_squared()))
}

fn rms(d: &[Option<f64>]) -> f64 {
    let v: Vec<f64> = d.iter().flatten().copied().collect();
    if v.is_empty() {
        return f64::NAN;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Shift minimizing the squared height gaps between fiducials and their
/// nearest ground points, re-associating until it settles.
pub fn correct_z(map: &GlobalMap, fiducials: &[FiducialPoint], params: &ZParams) -> Result<ZFixResult> {
    params.validate()?;
    if fiducials.len() < 3 {
        return Err(Error::TooFewFiducials { found: fiducials.len() });
    }
    if map.is_empty() {
        return Err(Error::StageFailed {
            stage: "zfix".into(),
            reason: "map is empty".into(),
        });
    }
    let r2 = params.horizontal_radius_m * params.horizontal_radius_m;
    let candidates: Vec<Vec<Vec3>> = fiducials
        .par_iter()
        .map(|f| {
            let f = f.position;
            map.points
                .iter()
                .filter(|p| (p.x - f.x).powi(2) + (p.y - f.y).powi(2) <= r2)
                .copied()
                .collect()
        })
        .collect();
    let matches = |shift: f64| -> Vec<Option<Vec3>> {
        fiducials
            .iter()
            .zip(&candidates)
            .map(|(f, c)| nearest_ground(c, &f.position, shift, params.z_gate_m))
            .collect()
    };
    let distances = |m: &[Option<Vec3>]| -> Vec<Option<f64>> {
        m.iter()
            .zip(fiducials)
            .map(|(p, f)| p.map(|p| (p - f.position).norm()))
            .collect()
    };
    let initial = matches(0.0);
    let rms_before = rms(&distances(&initial));
    let mut current = initial;
    let mut shift = 0.0;
    let mut iterations = 0;
    while iterations < params.max_iterations {
        iterations += 1;
        let gaps: Vec<f64> = current
            .iter()
            .zip(fiducials)
            .filter_map(|(p, f)| p.map(|p| f.position.z - (p.z - shift)))
            .collect();
        if gaps.is_empty() {
            return Err(Error::AllUnmatched);
        }
        let next = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let change = (next - shift).abs();
        shift = next;
        current = matches(shift);
        if change < params.tolerance_m {
            break;
        }
    }
    let unmatched: Vec<usize> = current
        .iter()
        .enumerate()
        .filter(|(_, m)| m.is_none())
        .map(|(i, _)| i)
        .collect();
    if unmatched.len() == fiducials.len() {
        return Err(Error::AllUnmatched);
    }
    for i in &unmatched {
        log::warn!("fiducial {i} has no ground point within {} m", params.horizontal_radius_m);
    }
    let d = distances(&current);
    Ok(ZFixResult {
        z_fix: shift,
        rms_before,
        rms_after: rms(&d),
        matched: fiducials.len() - unmatched.len(),
        distances: d,
        unmatched,
        iterations,
    })
}

#[derive(Clone, Debug)]
pub struct ZOutcome {
    pub result: CalibrationResult,
    pub report: ZFixResult,
}

/// Builds the map under the refined extrinsic and moves its z translation by
/// the fix. The vehicle is taken as level, so a world shift equals a shift
/// of the mount.
pub fn run_z_correction(
    frames: &[PosedFrame],
    traj: &Trajectory,
    refined: &CalibrationResult,
    fiducials: &[FiducialPoint],
    params: &ZParams,
) -> Result<ZOutcome> {
    let started = Instant::now();
    let map = build_map(frames, traj, &refined.extrinsic, &params.map)?;
    let report = correct_z(&map, fiducials, params)?;
    let t = refined.extrinsic;
    let fixed = t.with_translation(t.translation() + Vec3::new(0.0, 0.0, report.z_fix));
    let mut details = serde_json::Map::new();
    details.insert("z_fix_m".into(), report.z_fix.into());
    details.insert("fiducials_matched".into(), report.matched.into());
    details.insert("rms_before_m".into(), report.rms_before.into());
    details.insert("rms_after_m".into(), report.rms_after.into());
    let diagnostics = StageDiagnostics {
        iterations: report.iterations,
        final_cost: report.rms_after,
        converged: true,
        runtime_s: started.elapsed().as_secs_f64(),
        details,
    };
    Ok(ZOutcome {
        result: CalibrationResult::new(fixed, Stage::ZCorrected, diagnostics, Some(refined.clone()))?,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ground_map(z: f64) -> GlobalMap {
        let mut points = Vec::new();
        for i in -30..=30 {
            for j in -30..=30 {
                points.push(Vec3::new(i as f64 * 0.1, j as f64 * 0.1, z));
            }
        }
        GlobalMap {
            frame_index: vec![0; points.len()],
            bounds: None,
            source_points: points.len(),
            stride: 1,
            points,
        }
    }

    fn fiducials(z: f64) -> Vec<FiducialPoint> {
        [(0.0, 0.0), (1.0, 1.0), (-2.0, 0.5), (2.0, -2.0)]
            .iter()
            .map(|&(x, y)| FiducialPoint {
                position: Vec3::new(x, y, z),
            })
            .collect()
    }

    #[test]
    fn raised_map_is_lowered() {
        let r = correct_z(&ground_map(0.05), &fiducials(0.0), &ZParams::default()).unwrap();
        assert!((r.z_fix + 0.05).abs() < 1e-12);
        assert!(r.rms_after <= r.rms_before);
    }

    #[test]
    fn matching_map_needs_no_fix() {
        let r = correct_z(&ground_map(0.0), &fiducials(0.0), &ZParams::default()).unwrap();
        assert!(r.z_fix.abs() < 1e-6);
    }

    #[test]
    fn fiducial_offset_carries_through() {
        let a = correct_z(&ground_map(0.1), &fiducials(0.0), &ZParams::default()).unwrap();
        let b = correct_z(&ground_map(0.1), &fiducials(0.03), &ZParams::default()).unwrap();
        assert!((b.z_fix - a.z_fix - 0.03).abs() < 1e-12);
    }

    #[test]
    fn far_fiducial_is_unmatched() {
        let mut f = fiducials(0.0);
        f.push(FiducialPoint {
            position: Vec3::new(50.0, 0.0, 0.0),
        });
        let r = correct_z(&ground_map(0.02), &f, &ZParams::default()).unwrap();
        assert_eq!(r.unmatched, vec![4]);
        assert_eq!(r.matched, 4);
        let far: Vec<FiducialPoint> = (0..3)
            .map(|i| FiducialPoint {
                position: Vec3::new(50.0 + i as f64, 0.0, 0.0),
            })
            .collect();
        assert!(matches!(
            correct_z(&ground_map(0.0), &far, &ZParams::default()),
            Err(Error::AllUnmatched)
        ));
    }

    #[test]
    fn too_few_fiducials() {
        let f = &fiducials(0.0)[..2];
        assert!(matches!(
            correct_z(&ground_map(0.0), f, &ZParams::default()),
            Err(Error::TooFewFiducials { found: 2 })
        ));
    }
}
