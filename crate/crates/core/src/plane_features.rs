//! Planar feature extraction: per-point surface variation for selecting
//! flat points, and adaptive voxelization for plane patches.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::spatial::{KdTree, Neighbor};

/// Curvature assigned to points without enough neighbours.
pub const CURVATURE_SENTINEL: f64 = 1.0 / 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureParams {
    pub k: usize,
    pub curvature_threshold: f64,
    /// Neighbours farther than this do not count toward `k`.
    pub curvature_radius: f64,
    pub v_root: f64,
    pub max_depth: u32,
    pub plane_var_max: f64,
    pub plane_ratio_max: f64,
    pub min_points: usize,
    /// Curvature is evaluated on at most this many points per frame
    /// (deterministic stride); 0 evaluates every point.
    pub max_candidates: usize,
    /// Planar points kept per frame (deterministic stride); 0 keeps all.
    pub max_planar_points: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            k: 20,
            curvature_threshold: 0.01,
            curvature_radius: 2.0,
            v_root: 2.0,
            max_depth: 3,
            plane_var_max: 0.0025,
            plane_ratio_max: 0.12,
            min_points: 10,
            max_candidates: 2000,
            max_planar_points: 1000,
        }
    }
}

impl FeatureParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 3 {
            return Err(Error::Config("features.k must be at least 3".into()));
        }
        if !(self.v_root > 0.0 && self.curvature_radius > 0.0) {
            return Err(Error::Config("features.v_root and curvature_radius must be positive".into()));
        }
        if self.min_points < 3 {
            return Err(Error::Config("features.min_points must be at least 3".into()));
        }
        Ok(())
    }
}

/// Result of a principal component fit: eigenvalues of the covariance in
/// descending order and the eigenvector of the smallest one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneFit {
    pub centroid: Vec3,
    pub normal: Vec3,
    /// Direction of largest spread.
    pub major_axis: Vec3,
    pub eigenvalues: [f64; 3],
}

fn covariance_fit<'a>(points: impl Iterator<Item = &'a Vec3> + Clone) -> Option<PlaneFit> {
    let mut n = 0usize;
    let mut sum = Vec3::zeros();
    for p in points.clone() {
        sum += p;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let centroid = sum / n as f64;
    let mut cov = Mat3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let ev = |i: usize| eig.eigenvalues[order[i]].max(0.0);
    let normal = eig.eigenvectors.column(order[2]).normalize();
    let major_axis = eig.eigenvectors.column(order[0]).normalize();
    Some(PlaneFit {
        centroid,
        normal,
        major_axis,
        eigenvalues: [ev(0), ev(1), ev(2)],
    })
}

/// Least-squares plane through `points`.
pub fn fit_plane(points: &[Vec3]) -> Result<PlaneFit> {
    if points.len() < 3 {
        return Err(Error::DegenerateSet { lambda2: 0.0 });
    }
    let fit = covariance_fit(points.iter()).expect("non-empty");
    if fit.eigenvalues[1] < 1e-12 {
        return Err(Error::DegenerateSet {
            lambda2: fit.eigenvalues[1],
        });
    }
    Ok(fit)
}

/// Surface variation `l3 / (l1 + l2 + l3)` of a neighbourhood.
pub fn surface_variation(eigenvalues: &[f64; 3]) -> f64 {
    let s: f64 = eigenvalues.iter().sum();
    if s <= 0.0 {
        0.0
    } else {
        (eigenvalues[2] / s).clamp(0.0, CURVATURE_SENTINEL)
    }
}

/// Local geometry around one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalShape {
    pub curvature: f64,
    pub normal: Vec3,
    pub direction: Vec3,
    /// Neighbourhood is closer to a line than to a surface, so `normal` is
    /// unreliable and `direction` should be used instead.
    pub line_like: bool,
}

const LINE_RATIO: f64 = 0.1;

fn local_shape(
    points: &[Vec3],
    tree: &KdTree,
    index: usize,
    k: usize,
    radius: f64,
    buf: &mut Vec<Neighbor>,
) -> Option<LocalShape> {
    tree.knn(&points[index], k + 1, radius * radius, buf);
    if buf.len() < k + 1 {
        return None;
    }
    let fit = covariance_fit(buf.iter().map(|n| &points[n.index]))?;
    let [l1, l2, _] = fit.eigenvalues;
    Some(LocalShape {
        curvature: surface_variation(&fit.eigenvalues),
        normal: fit.normal,
        direction: fit.major_axis,
        line_like: l2 < LINE_RATIO * l1,
    })
}

/// Curvature of every point from its `k` nearest neighbours (plus itself).
/// Points with fewer than `k` neighbours within `radius` get the sentinel.
pub fn compute_curvature(points: &[Vec3], k: usize, radius: f64) -> Vec<f64> {
    let tree = KdTree::build(points);
    let mut buf = Vec::with_capacity(k + 1);
    (0..points.len())
        .map(|i| {
            local_shape(points, &tree, i, k, radius, &mut buf)
                .map_or(CURVATURE_SENTINEL, |s| s.curvature)
        })
        .collect()
}

/// Low-curvature points of one frame with their local shape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureCloud {
    pub indices: Vec<usize>,
    pub curvature: Vec<f64>,
    pub shapes: Vec<LocalShape>,
}

impl FeatureCloud {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn stride_indices(n: usize, cap: usize) -> Vec<usize> {
    if cap == 0 || n <= cap {
        return (0..n).collect();
    }
    (0..cap).map(|i| i * n / cap).collect()
}

/// Selects planar points: curvature at or below the threshold.
pub fn select_planar_points(points: &[Vec3], tree: &KdTree, params: &FeatureParams) -> FeatureCloud {
    let mut out = FeatureCloud::default();
    let mut buf = Vec::with_capacity(params.k + 1);
    for i in stride_indices(points.len(), params.max_candidates) {
        if let Some(s) = local_shape(points, tree, i, params.k, params.curvature_radius, &mut buf) {
            if s.curvature <= params.curvature_threshold {
                out.indices.push(i);
                out.curvature.push(s.curvature);
                out.shapes.push(s);
            }
        }
    }
    if params.max_planar_points > 0 && out.len() > params.max_planar_points {
        let keep = stride_indices(out.len(), params.max_planar_points);
        out = FeatureCloud {
            indices: keep.iter().map(|&i| out.indices[i]).collect(),
            curvature: keep.iter().map(|&i| out.curvature[i]).collect(),
            shapes: keep.iter().map(|&i| out.shapes[i]).collect(),
        };
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanePatch {
    pub centroid: Vec3,
    pub normal: Vec3,
    pub member_indices: Vec<usize>,
    /// Covariance eigenvalues, descending (m^2).
    pub eigenvalues: [f64; 3],
    /// Largest member distance from the centroid.
    pub radius: f64,
    pub frame: usize,
}

impl PlanePatch {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(&(p - self.centroid))
    }
}

fn planar(fit: &PlaneFit, count: usize, params: &FeatureParams) -> bool {
    let [_, l2, l3] = fit.eigenvalues;
    count >= params.min_points
        && l3 < params.plane_var_max
        && l2 > 0.0
        && l3 / l2 < params.plane_ratio_max
}

/// Drops members beyond three standard deviations and refits until stable.
fn trimmed_patch(
    points: &[Vec3],
    mut members: Vec<usize>,
    params: &FeatureParams,
) -> Option<(PlaneFit, Vec<usize>)> {
    loop {
        let fit = covariance_fit(members.iter().map(|&i| &points[i]))?;
        if !planar(&fit, members.len(), params) {
            return None;
        }
        let bound = 3.0 * fit.eigenvalues[2].sqrt() + 1e-6;
        let before = members.len();
        members.retain(|&i| fit.normal.dot(&(points[i] - fit.centroid)).abs() <= bound);
        if members.len() == before {
            return Some((fit, members));
        }
    }
}

fn subdivide(
    points: &[Vec3],
    members: Vec<usize>,
    min: Vec3,
    size: f64,
    depth: u32,
    params: &FeatureParams,
    out: &mut Vec<(PlaneFit, Vec<usize>)>,
) {
    if members.len() < params.min_points {
        return;
    }
    if let Some(fit) = covariance_fit(members.iter().map(|&i| &points[i])) {
        if planar(&fit, members.len(), params) {
            if let Some(patch) = trimmed_patch(points, members.clone(), params) {
                out.push(patch);
                return;
            }
        }
    }
    if depth >= params.max_depth {
        return;
    }
    let half = 0.5 * size;
    let mid = min + Vec3::repeat(half);
    let mut children: [Vec<usize>; 8] = Default::default();
    for i in members {
        let p = &points[i];
        let c = usize::from(p.x >= mid.x) | usize::from(p.y >= mid.y) << 1 | usize::from(p.z >= mid.z) << 2;
        children[c].push(i);
    }
    for (c, child) in children.into_iter().enumerate() {
        let offset = Vec3::new(
            if c & 1 != 0 { half } else { 0.0 },
            if c & 2 != 0 { half } else { 0.0 },
            if c & 4 != 0 { half } else { 0.0 },
        );
        subdivide(points, child, min + offset, half, depth + 1, params, out);
    }
}

/// Plane patches by adaptive voxelization. `indices` restricts the input
/// (all points when `None`); normals are oriented toward `sensor_origin`.
pub fn extract_planes_adaptive(
    points: &[Vec3],
    indices: Option<&[usize]>,
    params: &FeatureParams,
    sensor_origin: &Vec3,
    frame: usize,
) -> Vec<PlanePatch> {
    let mut roots: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    let mut push = |i: usize| {
        let p = points[i];
        let key = [
            (p.x / params.v_root).floor() as i64,
            (p.y / params.v_root).floor() as i64,
            (p.z / params.v_root).floor() as i64,
        ];
        roots.entry(key).or_default().push(i);
    };
    match indices {
        Some(ix) => ix.iter().copied().for_each(&mut push),
        None => (0..points.len()).for_each(&mut push),
    }
    let mut fits = Vec::new();
    for (key, members) in roots {
        let min = Vec3::new(key[0] as f64, key[1] as f64, key[2] as f64) * params.v_root;
        subdivide(points, members, min, params.v_root, 0, params, &mut fits);
    }
    fits.into_iter()
        .map(|(fit, member_indices)| {
            let mut normal = fit.normal;
            if normal.dot(&(sensor_origin - fit.centroid)) < 0.0 {
                normal = -normal;
            }
            let radius = member_indices
                .iter()
                .map(|&i| (points[i] - fit.centroid).norm())
                .fold(0.0, f64::max);
            PlanePatch {
                centroid: fit.centroid,
                normal,
                member_indices,
                eigenvalues: fit.eigenvalues,
                radius,
                frame,
            }
        })
        .collect()
}

/// Debug dump: one patch per row.
pub fn write_patches_csv(patches: &[PlanePatch], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut body = String::from("frame,cx,cy,cz,nx,ny,nz,l1,l2,l3,members\n");
    for p in patches {
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            p.frame,
            p.centroid.x,
            p.centroid.y,
            p.centroid.z,
            p.normal.x,
            p.normal.y,
            p.normal.z,
            p.eigenvalues[0],
            p.eigenvalues[1],
            p.eigenvalues[2],
            p.member_indices.len()
        ));
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}
