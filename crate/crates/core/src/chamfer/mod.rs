//! Chamfer-distance baseline: marching cubes over the density volume,
//! surface sampling, symmetric Chamfer distance and a golden-section search
//! for the best density threshold.

mod kdtree;
mod tables;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub use kdtree::KdTree;

use crate::error::{Error, Result};
use crate::fields::DensityVolume;
use crate::geom::{GridIndex, Vec3};
use tables::{EDGE_TABLE, TRIANGLE_TABLE};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let t = self.triangles[i];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        0.5 * (b - a).cross(c - a).norm()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CDSearchResult {
    pub best_threshold: f64,
    pub best_cd: f64,
    /// Every `(threshold, cd)` pair in evaluation order.
    pub evaluations: Vec<(f64, f64)>,
    /// Final bracket.
    pub bracket: (f64, f64),
}

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Iso-surface `density = threshold` of the trilinear volume. Corners above
/// the threshold count as inside. Vertices on shared cell edges are merged
/// and zero-area triangles are dropped.
pub fn marching_cubes(vol: &DensityVolume, threshold: f64) -> Result<TriangleMesh> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::InvalidConfig(format!("threshold must be positive, got {threshold}")));
    }
    let res = vol.resolution();
    let data = vol.data();
    let at = |x: usize, y: usize, z: usize| data[x + res[0] * (y + res[1] * z)] as f64;
    let h = vol.min_voxel_edge();
    let area_eps = 1e-12 * h * h;

    let mut mesh = TriangleMesh::default();
    let mut edge_ids: HashMap<(usize, u8), u32> = HashMap::new();

    for z in 0..res[2] - 1 {
        for y in 0..res[1] - 1 {
            for x in 0..res[0] - 1 {
                let mut values = [0.0; 8];
                let mut case = 0usize;
                for (i, c) in CORNERS.iter().enumerate() {
                    values[i] = at(x + c[0], y + c[1], z + c[2]);
                    if values[i] > threshold {
                        case |= 1 << i;
                    }
                }
                let crossed = EDGE_TABLE[case];
                if crossed == 0 {
                    continue;
                }
                let mut ids = [u32::MAX; 12];
                for (e, &[a, b]) in EDGES.iter().enumerate() {
                    if crossed & (1 << e) == 0 {
                        continue;
                    }
                    let (ca, cb) = (CORNERS[a], CORNERS[b]);
                    // Orient from the lower to the upper endpoint so a shared
                    // edge interpolates identically from either cell.
                    let (lo, hi, vlo, vhi) = if ca <= cb {
                        (ca, cb, values[a], values[b])
                    } else {
                        (cb, ca, values[b], values[a])
                    };
                    let axis = (0..3).find(|&k| lo[k] != hi[k]).unwrap() as u8;
                    let base = GridIndex::new(x + lo[0], y + lo[1], z + lo[2]);
                    let key = (base.ix + res[0] * (base.iy + res[1] * base.iz), axis);
                    ids[e] = *edge_ids.entry(key).or_insert_with(|| {
                        let p0 = vol.vertex_position(base);
                        let p1 = vol.vertex_position(GridIndex::new(x + hi[0], y + hi[1], z + hi[2]));
                        let t = ((threshold - vlo) / (vhi - vlo)).clamp(0.0, 1.0);
                        mesh.vertices.push(p0 + (p1 - p0) * t);
                        (mesh.vertices.len() - 1) as u32
                    });
                }
                for tri in TRIANGLE_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let t = [ids[tri[0] as usize], ids[tri[1] as usize], ids[tri[2] as usize]];
                    let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
                    if (b - a).cross(c - a).norm() > area_eps {
                        mesh.triangles.push(t);
                    }
                }
            }
        }
    }
    Ok(compact(mesh))
}

// Drops vertices no triangle references.
fn compact(mesh: TriangleMesh) -> TriangleMesh {
    let mut remap = vec![u32::MAX; mesh.vertices.len()];
    let mut vertices = Vec::new();
    let triangles = mesh
        .triangles
        .iter()
        .map(|t| {
            t.map(|i| {
                let r = &mut remap[i as usize];
                if *r == u32::MAX {
                    *r = vertices.len() as u32;
                    vertices.push(mesh.vertices[i as usize]);
                }
                *r
            })
        })
        .collect();
    TriangleMesh { vertices, triangles }
}

/// `n` points spread over the mesh proportionally to triangle area, uniform
/// within each triangle.
pub fn sample_mesh_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be positive".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for i in 0..mesh.triangles.len() {
        total += mesh.triangle_area(i);
        cumulative.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let u = rng.gen::<f64>() * total;
            let i = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
            let [a, b, c] = mesh.triangle(i);
            let s = rng.gen::<f64>().sqrt();
            let r = rng.gen::<f64>();
            a * (1.0 - s) + b * (s * (1.0 - r)) + c * (s * r)
        })
        .collect();
    Ok(PointCloud { points })
}

fn mean_nearest(from: &PointCloud, to: &KdTree) -> f64 {
    let d: Vec<f64> = from
        .points
        .par_iter()
        .map(|p| to.nearest(*p).map(|(_, d2)| d2.sqrt()).unwrap_or(f64::INFINITY))
        .collect();
    d.iter().sum::<f64>() / d.len() as f64
}

/// `(mean_a min_b |p - q| + mean_b min_a |p - q|) / 2`.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let ta = KdTree::build(&a.points);
    let tb = KdTree::build(&b.points);
    Ok(0.5 * (mean_nearest(a, &tb) + mean_nearest(b, &ta)))
}

/// Output of [`golden_section_search`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoldenSection {
    pub argmin: f64,
    pub min: f64,
    pub evaluations: Vec<(f64, f64)>,
    pub bracket: (f64, f64),
}

/// Golden-section minimization of `f` on `[lo, hi]`, stopping once the
/// bracket is no wider than `tol`. Returns the best point evaluated.
pub fn golden_section_search(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<GoldenSection> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidConfig(format!("invalid bracket [{lo}, {hi}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut evaluations = Vec::new();
    let mut eval = |x: f64| -> Result<f64> {
        let v = f(x);
        if !v.is_finite() {
            return Err(Error::NonFinite { x, value: v });
        }
        evaluations.push((x, v));
        Ok(v)
    };

    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d)?;
        }
    }
    let (argmin, min) = evaluations
        .iter()
        .copied()
        .fold((f64::NAN, f64::INFINITY), |best, e| if e.1 < best.1 { e } else { best });
    Ok(GoldenSection {
        argmin,
        min,
        evaluations,
        bracket: (a, b),
    })
}

/// Chamfer distance between `gt` and `n_samples` points sampled from the
/// iso-surface at `threshold`, or `None` when that surface is empty.
pub fn cd_at_threshold(vol: &DensityVolume, gt: &PointCloud, threshold: f64, n_samples: usize, seed: u64) -> Result<Option<f64>> {
    let mesh = marching_cubes(vol, threshold)?;
    if mesh.is_empty() {
        return Ok(None);
    }
    let cloud = sample_mesh_surface(&mesh, n_samples, seed)?;
    chamfer_distance(&cloud, gt).map(Some)
}

/// Searches `[lo, hi]` for the density threshold whose iso-surface has the
/// lowest Chamfer distance to `gt`. Empty surfaces score ten bounding-box
/// diagonals. The same sampling seed is reused at every threshold.
pub fn best_cd(
    vol: &DensityVolume,
    gt: &PointCloud,
    n_samples: usize,
    lo: f64,
    hi: f64,
    tol: f64,
    seed: u64,
) -> Result<CDSearchResult> {
    if gt.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(lo > 0.0) {
        return Err(Error::InvalidConfig(format!("threshold range must be positive, got [{lo}, {hi}]")));
    }
    let sentinel = 10.0 * vol.bbox_diagonal();
    let mut failure = None;
    let mut any_surface = false;
    let search = golden_section_search(
        |t| match cd_at_threshold(vol, gt, t, n_samples, seed) {
            Ok(Some(cd)) => {
                any_surface = true;
                cd
            }
            Ok(None) => sentinel,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        lo,
        hi,
        tol,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let search = search?;
    if !any_surface {
        return Err(Error::NoSurface { lo, hi });
    }
    Ok(CDSearchResult {
        best_threshold: search.argmin,
        best_cd: search.min,
        evaluations: search.evaluations,
        bracket: search.bracket,
    })
}
