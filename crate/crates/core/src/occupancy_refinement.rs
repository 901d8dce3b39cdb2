//! Refinement by map crispness: the extrinsic that makes the assembled map
//! occupy the fewest voxels wins. Coordinate descent over roll, pitch, yaw
//! and the three translations, coarse to fine.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{CalibrationResult, PosedFrame, Stage, StageDiagnostics};
use crate::error::{Error, Result};
use crate::geometry::{EulerZYX, RigidTransform, Trajectory, Vec3};
use crate::mapping::{bounds, MapOptions, MapSource};

/// Integer cell of `p`: `floor((p - origin) / leaf)` per axis.
pub fn cell_key(p: &Vec3, leaf: f64, origin: &Vec3) -> [i64; 3] {
    let c = (p - origin) / leaf;
    [c.x.floor() as i64, c.y.floor() as i64, c.z.floor() as i64]
}

/// `floor` through an integer cast; `f64::floor` is a libm call on baseline x86-64.
#[inline]
fn fast_floor(v: f64) -> i64 {
    let i = v as i64;
    i - ((i as f64) > v) as i64
}

/// Number of distinct cells holding at least one point.
pub fn count_occupied(points: &[Vec3], leaf: f64, origin: &Vec3) -> usize {
    let mut keys: Vec<[i64; 3]> = points.iter().map(|p| cell_key(p, leaf, origin)).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

const BLOCK: i64 = 16;
const BLOCK_WORDS: usize = (BLOCK * BLOCK * BLOCK / 64) as usize;

/// Leaf level of an occupancy octree, stored as 16^3 bit blocks allocated
/// on first touch inside a fixed box, and as a sorted key list outside it.
/// Counts are exact either way.
#[derive(Clone, Debug)]
pub struct OccupancyGrid {
    origin: Vec3,
    leaf: f64,
    block_min: [i64; 3],
    block_dims: [i64; 3],
    /// Block index to slot + 1; 0 marks a block not touched yet.
    slots: Vec<u32>,
    bits: Vec<u64>,
    overflow: Vec<[i64; 3]>,
    count: usize,
}

impl OccupancyGrid {
    /// Grid whose box holds every point of `seed` with `margin` meters to spare.
    pub fn covering(seed: &[Vec3], leaf: f64, origin: Vec3, margin: f64) -> Self {
        let (lo, hi) = match bounds(seed) {
            Some((lo, hi)) => (
                cell_key(&(lo - Vec3::repeat(margin)), leaf, &origin).map(|c| c >> 4),
                cell_key(&(hi + Vec3::repeat(margin)), leaf, &origin).map(|c| c >> 4),
            ),
            None => ([0; 3], [-1; 3]),
        };
        let dims = [0, 1, 2].map(|a| (hi[a] - lo[a] + 1).max(0));
        Self {
            origin,
            leaf,
            block_min: lo,
            block_dims: dims,
            slots: vec![0; (dims[0] * dims[1] * dims[2]) as usize],
            bits: Vec::new(),
            overflow: Vec::new(),
            count: 0,
        }
    }

    /// Empties the grid, keeping allocated blocks for reuse.
    pub fn clear(&mut self) {
        self.bits.fill(0);
        self.overflow.clear();
        self.count = 0;
    }

    pub fn insert(&mut self, p: &Vec3) {
        let q = (p - self.origin) / self.leaf;
        let c = [fast_floor(q.x), fast_floor(q.y), fast_floor(q.z)];
        let mut block = 0i64;
        for a in (0..3).rev() {
            let r = (c[a] >> 4) - self.block_min[a];
            if r < 0 || r >= self.block_dims[a] {
                self.overflow.push(c);
                return;
            }
            block = block * self.block_dims[a] + r;
        }
        let mut slot = self.slots[block as usize] as usize;
        if slot == 0 {
            self.bits.resize(self.bits.len() + BLOCK_WORDS, 0);
            slot = self.bits.len() / BLOCK_WORDS;
            self.slots[block as usize] = slot as u32;
        }
        let local = (c[0] & 15) + BLOCK * ((c[1] & 15) + BLOCK * (c[2] & 15));
        let word = (slot - 1) * BLOCK_WORDS + (local / 64) as usize;
        let mask = 1u64 << (local % 64);
        let w = &mut self.bits[word];
        self.count += (*w & mask == 0) as usize;
        *w |= mask;
    }

    /// Occupied cells so far.
    pub fn count(&mut self) -> usize {
        self.overflow.sort_unstable();
        self.overflow.dedup();
        self.count + self.overflow.len()
    }
}

/// Occupied leaves of the map assembled under `extrinsic`.
pub fn occupancy_cost(source: &MapSource, extrinsic: &RigidTransform, leaf: f64, origin: &Vec3) -> usize {
    let mut pts = Vec::with_capacity(source.len());
    source.for_each_world_point(extrinsic, |p| pts.push(p));
    let mut grid = OccupancyGrid::covering(&pts, leaf, *origin, 0.0);
    for p in &pts {
        grid.insert(p);
    }
    grid.count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSpec {
    /// Half-width of the search on roll, pitch and yaw.
    pub rotation_range_deg: f64,
    pub rotation_step_deg: f64,
    /// Half-width of the search on x, y and z.
    pub translation_range_m: f64,
    pub translation_step_m: f64,
    /// Leaf size per level, coarse to fine; the last one scores the result.
    pub leaf_sizes_m: Vec<f64>,
    /// Range multiplier from one level to the next.
    pub range_shrink: f64,
    pub sweeps: usize,
    /// Grids per level, with origins shifted by `k / n` of a leaf along the
    /// diagonal; their counts are summed. One grid alone rewards surfaces
    /// that happen to lie on cell faces.
    pub grid_offsets: usize,
    pub map: MapOptions,
}

impl Default for SearchSpec {
    fn default() -> Self {
        Self {
            rotation_range_deg: 0.5,
            rotation_step_deg: 0.05,
            translation_range_m: 0.05,
            translation_step_m: 0.005,
            leaf_sizes_m: vec![0.4, 0.2, 0.1],
            range_shrink: 0.5,
            sweeps: 2,
            grid_offsets: 4,
            map: MapOptions::default(),
        }
    }
}

impl SearchSpec {
    /// Zero ranges are allowed and switch the corresponding axes off.
    pub fn validate(&self) -> Result<()> {
        let ok = |range: f64, step: f64| step > 0.0 && range >= 0.0 && (range == 0.0 || range >= step);
        if !ok(self.rotation_range_deg, self.rotation_step_deg)
            || !ok(self.translation_range_m, self.translation_step_m)
        {
            return Err(Error::Config(
                "refine steps must be positive and non-zero ranges at least one step".into(),
            ));
        }
        if self.leaf_sizes_m.is_empty() || self.leaf_sizes_m.iter().any(|&l| l <= 0.0 || l.is_nan()) {
            return Err(Error::Config("refine.leaf_sizes_m must be non-empty and positive".into()));
        }
        if self.grid_offsets == 0 {
            return Err(Error::Config("refine.grid_offsets must be positive".into()));
        }
        if !(self.range_shrink > 0.0 && self.range_shrink <= 1.0) {
            return Err(Error::Config("refine.range_shrink must be in (0, 1]".into()));
        }
        Ok(())
    }
}

pub const AXES: [&str; 6] = ["roll", "pitch", "yaw", "x", "y", "z"];

/// `t` with `offset` added to one Euler angle (radians) or translation component.
pub fn perturb_axis(t: &RigidTransform, axis: usize, offset: f64) -> RigidTransform {
    let e = t.euler_zyx();
    let mut a = [e.roll, e.pitch, e.yaw];
    let mut tr = *t.translation();
    if axis < 3 {
        a[axis] += offset;
    } else {
        tr[axis - 3] += offset;
    }
    RigidTransform::from_euler_zyx(EulerZYX::new(a[0], a[1], a[2]), tr)
}

/// One evaluated candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateRecord {
    pub level: usize,
    pub leaf: f64,
    pub sweep: usize,
    pub axis: usize,
    /// Radians for rotation axes, meters otherwise.
    pub offset: f64,
    pub cost: usize,
    pub accepted: bool,
}

#[derive(Clone, Debug)]
pub struct RefineOutcome {
    pub result: CalibrationResult,
    pub records: Vec<CandidateRecord>,
}

fn offsets(range: f64, step: f64) -> Vec<f64> {
    let n = (range / step + 1e-9).floor() as i64;
    (-n..=n).filter(|&k| k != 0).map(|k| k as f64 * step).collect()
}

/// Searches a box around the rough estimate. Within a sweep the axes are
/// visited in a fixed order and a move is taken only on a strict decrease;
/// equal costs keep the incumbent. If the final estimate is not strictly
/// better than the rough one at the finest leaf, the rough one is returned.
pub fn refine(
    frames: &[PosedFrame],
    traj: &Trajectory,
    rough: &CalibrationResult,
    spec: &SearchSpec,
) -> Result<RefineOutcome> {
    spec.validate()?;
    let started = Instant::now();
    let source = MapSource::new(frames, traj, &spec.map)?;
    if source.is_empty() {
        return Err(Error::StageFailed {
            stage: "refine".into(),
            reason: "map is empty".into(),
        });
    }
    let start = rough.extrinsic;
    let mut seed = Vec::with_capacity(source.len());
    source.for_each_world_point(&start, |p| seed.push(p));
    let origin = bounds(&seed).map(|b| b.0).unwrap_or_default();
    // Farthest sensor-frame reach of a rotation step, for sizing the grid.
    let reach = spec.rotation_range_deg.to_radians() * 100.0 + spec.translation_range_m;

    let mut t = start;
    let mut records = Vec::new();
    let mut moves = 0;
    let mut evaluations = 0;
    let mut shrink = 1.0;
    let last = spec.leaf_sizes_m.len() - 1;
    let mut finest = (0, 0);
    for (level, &leaf) in spec.leaf_sizes_m.iter().enumerate() {
        let n = spec.grid_offsets;
        let template: Vec<OccupancyGrid> = (0..n)
            .map(|k| {
                let o = origin + Vec3::repeat(leaf * k as f64 / n as f64);
                OccupancyGrid::covering(&seed, leaf, o, reach)
            })
            .collect();
        let score = |grids: &mut Vec<OccupancyGrid>, cand: &RigidTransform| {
            grids.iter_mut().for_each(OccupancyGrid::clear);
            source.for_each_world_point(cand, |p| grids.iter_mut().for_each(|g| g.insert(&p)));
            grids.iter_mut().map(OccupancyGrid::count).sum::<usize>()
        };
        let mut scratch = template.clone();
        let mut cost = score(&mut scratch, &t);
        evaluations += 1;
        if level == last {
            finest.0 = score(&mut scratch, &start);
            evaluations += 1;
        }
        for sweep in 0..spec.sweeps {
            for axis in 0..6 {
                let (range, step) = if axis < 3 {
                    (spec.rotation_range_deg.to_radians(), spec.rotation_step_deg.to_radians())
                } else {
                    (spec.translation_range_m, spec.translation_step_m)
                };
                let cands = offsets(range * shrink, step);
                if cands.is_empty() {
                    continue;
                }
                let costs: Vec<usize> = cands
                    .par_iter()
                    .map_init(
                        || template.clone(),
                        |grid, &off| score(grid, &perturb_axis(&t, axis, off)),
                    )
                    .collect();
                evaluations += cands.len();
                // Lowest cost, then smallest offset, then the negative side.
                let best = (0..cands.len())
                    .min_by(|&a, &b| {
                        costs[a]
                            .cmp(&costs[b])
                            .then(cands[a].abs().total_cmp(&cands[b].abs()))
                            .then(cands[a].total_cmp(&cands[b]))
                    })
                    .expect("non-empty");
                let accept = costs[best] < cost;
                for (i, (&off, &c)) in cands.iter().zip(&costs).enumerate() {
                    records.push(CandidateRecord {
                        level,
                        leaf,
                        sweep,
                        axis,
                        offset: off,
                        cost: c,
                        accepted: accept && i == best,
                    });
                }
                if accept {
                    t = perturb_axis(&t, axis, cands[best]);
                    cost = costs[best];
                    moves += 1;
                }
            }
        }
        if level == last {
            finest.1 = cost;
        }
        log::debug!("refine level {level} leaf {leaf}: cost {cost}, {moves} moves so far");
        shrink *= spec.range_shrink;
    }
    let (initial_cost, mut final_cost) = finest;
    let improved = final_cost < initial_cost;
    if !improved {
        t = start;
        final_cost = initial_cost;
    }
    let mut details = serde_json::Map::new();
    details.insert("initial_cost".into(), initial_cost.into());
    details.insert("improved".into(), improved.into());
    details.insert("evaluations".into(), evaluations.into());
    details.insert("map_points".into(), source.len().into());
    details.insert("map_stride".into(), source.stride.into());
    let diagnostics = StageDiagnostics {
        iterations: moves,
        final_cost: final_cost as f64,
        converged: true,
        runtime_s: started.elapsed().as_secs_f64(),
        details,
    };
    Ok(RefineOutcome {
        result: CalibrationResult::new(t, Stage::Refined, diagnostics, Some(rough.clone()))?,
        records,
    })
}

/// Cost of every evaluated candidate, one row each.
pub fn write_cost_csv(records: &[CandidateRecord], path: &Path) -> Result<()> {
    let mut body = String::from("level,leaf_m,sweep,axis,offset,cost,accepted\n");
    for r in records {
        let offset = if r.axis < 3 { r.offset.to_degrees() } else { r.offset };
        body.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.level, r.leaf, r.sweep, AXES[r.axis], offset, r.cost, r.accepted
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn brute(points: &[Vec3], leaf: f64, origin: &Vec3) -> usize {
        let mut set = HashSet::new();
        for p in points {
            let q = (p - origin) / leaf;
            set.insert((q.x.floor() as i64, q.y.floor() as i64, q.z.floor() as i64));
        }
        set.len()
    }

    #[test]
    fn cube_corners() {
        let pts: Vec<Vec3> = (0..8)
            .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        assert_eq!(count_occupied(&pts, 0.5, &Vec3::zeros()), 8);
    }

    #[test]
    fn grid_matches_keys_with_overflow() {
        let pts: Vec<Vec3> = (0..500)
            .map(|i| {
                let f = i as f64;
                Vec3::new((f * 0.37).sin() * 20.0, (f * 0.11).cos() * 30.0, f * 0.01 - 2.0)
            })
            .collect();
        // Size the box from a corner of the cloud so the rest overflows.
        let mut grid = OccupancyGrid::covering(&pts[..20], 0.1, Vec3::new(-1.0, 2.0, 0.5), 0.0);
        for p in &pts {
            grid.insert(p);
        }
        assert_eq!(grid.count(), brute(&pts, 0.1, &Vec3::new(-1.0, 2.0, 0.5)));
    }

    #[test]
    fn zero_ranges_keep_rough() {
        let spec = SearchSpec {
            rotation_range_deg: 0.0,
            translation_range_m: 0.0,
            ..Default::default()
        };
        spec.validate().unwrap();
        assert!(offsets(0.0, 0.05).is_empty());
    }

    #[test]
    fn offsets_are_symmetric() {
        let o = offsets(0.05, 0.005);
        assert_eq!(o.len(), 20);
        assert!((o[0] + 0.05).abs() < 1e-12);
        assert_eq!(offsets(0.0125, 0.005).len(), 4);
    }

    #[test]
    fn perturb_axis_moves_one_component() {
        let t = RigidTransform::from_euler_zyx(EulerZYX::new(0.01, -0.02, 0.3), Vec3::new(0.5, 0.3, 1.5));
        let p = perturb_axis(&t, 2, 0.001).euler_zyx();
        assert!((p.yaw - 0.301).abs() < 1e-12 && (p.roll - 0.01).abs() < 1e-12);
        let q = perturb_axis(&t, 4, 0.01);
        assert!((q.translation().y - 0.31).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn count_is_permutation_and_duplicate_invariant(
            raw in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0, -5.0f64..5.0), 1..300),
            leaf in 0.05f64..2.0,
        ) {
            let pts: Vec<Vec3> = raw.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let o = Vec3::new(0.3, -0.2, 0.1);
            let n = count_occupied(&pts, leaf, &o);
            prop_assert_eq!(n, brute(&pts, leaf, &o));
            let mut twice = pts.clone();
            twice.extend(pts.iter().rev());
            prop_assert_eq!(count_occupied(&twice, leaf, &o), n);
            prop_assert!(count_occupied(&pts, leaf / 2.0, &o) >= n);
        }
    }
}
