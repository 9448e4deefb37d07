//! Isosurface extraction: density grids, marching cubes, vertex coloring
//! and PLY/OBJ export.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{Ray, Vec3};
use crate::render::{self, RadianceSource, RenderConfig, RenderError};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid mesh: {0}")]
    Mesh(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, MeshError>;

/// Points evaluated per field query when sampling a grid.
pub const GRID_CHUNK: usize = 16_384;

/// Axis-aligned box split into `resolution` cells per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: [usize; 3],
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl GridSpec {
    /// `res^3` cells over `[-half, half]^3`.
    pub fn cube(res: usize, half: f64) -> Self {
        Self {
            resolution: [res; 3],
            min: [-half; 3],
            max: [half; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution.iter().any(|&r| r < 2) {
            return Err(MeshError::Grid(format!(
                "resolution must be >= 2 per axis, got {:?}",
                self.resolution
            )));
        }
        for a in 0..3 {
            if !(self.min[a] < self.max[a]) || !self.min[a].is_finite() || !self.max[a].is_finite() {
                return Err(MeshError::Grid(format!(
                    "bounds {:?}..{:?} are not a box",
                    self.min, self.max
                )));
            }
        }
        Ok(())
    }

    pub fn cell_size(&self) -> [f64; 3] {
        std::array::from_fn(|a| (self.max[a] - self.min[a]) / self.resolution[a] as f64)
    }

    pub fn voxel_diagonal(&self) -> f64 {
        self.cell_size().iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    pub fn box_diagonal(&self) -> f64 {
        (0..3).map(|a| (self.max[a] - self.min[a]).powi(2)).sum::<f64>().sqrt()
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of cell `(i, j, k)`; `x` varies slowest.
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution[1] + j) * self.resolution[2] + k
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let s = self.cell_size();
        let ijk = [i, j, k];
        std::array::from_fn(|a| self.min[a] + (ijk[a] as f64 + 0.5) * s[a])
    }

    fn unflatten(&self, idx: usize) -> [usize; 3] {
        let [_, ny, nz] = self.resolution;
        [idx / (ny * nz), (idx / nz) % ny, idx % nz]
    }
}

/// Density samples at the cell centers of a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl VoxelGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(MeshError::Grid(format!(
                "{} values for {} cells",
                values.len(),
                spec.len()
            )));
        }
        Ok(Self { spec, values })
    }

    /// Grid filled by evaluating `f` at every cell center.
    pub fn from_fn(spec: GridSpec, f: impl Fn([f64; 3]) -> f64 + Sync) -> Result<Self> {
        spec.validate()?;
        let values = (0..spec.len())
            .into_par_iter()
            .map(|idx| {
                let [i, j, k] = spec.unflatten(idx);
                f(spec.center(i, j, k))
            })
            .collect();
        Ok(Self { spec, values })
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.spec.index(i, j, k)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Central-difference gradient at a grid node, one-sided on the border.
    fn gradient(&self, c: [usize; 3]) -> [f64; 3] {
        let s = self.spec.cell_size();
        std::array::from_fn(|a| {
            let n = self.spec.resolution[a];
            let mut lo = c;
            let mut hi = c;
            if c[a] > 0 {
                lo[a] -= 1;
            }
            if c[a] + 1 < n {
                hi[a] += 1;
            }
            let span = (hi[a] - lo[a]) as f64 * s[a];
            (self.at(hi[0], hi[1], hi[2]) - self.at(lo[0], lo[1], lo[2])) / span
        })
    }
}

/// Density of `source` at every cell center. Colors are discarded and the
/// viewing direction is fixed to `+z`.
pub fn sample_grid(source: &dyn RadianceSource, spec: &GridSpec) -> Result<VoxelGrid> {
    spec.validate()?;
    let idx: Vec<usize> = (0..spec.len()).collect();
    let chunks: Vec<render::Result<Vec<f64>>> = idx
        .par_chunks(GRID_CHUNK)
        .map(|chunk| {
            let pts: Vec<[f64; 3]> = chunk
                .iter()
                .map(|&n| {
                    let [i, j, k] = spec.unflatten(n);
                    spec.center(i, j, k)
                })
                .collect();
            let dirs = vec![[0.0, 0.0, 1.0]; pts.len()];
            source.query(&pts, &dirs).map(|(sigma, _)| sigma)
        })
        .collect();
    let mut values = Vec::with_capacity(spec.len());
    for c in chunks {
        values.extend(c?);
    }
    VoxelGrid::new(spec.clone(), values)
}

/// Threshold maximizing the between-class variance of a 256-bin histogram
/// of the grid values. `None` for a constant grid.
pub fn otsu_threshold(values: &[f64]) -> Option<f64> {
    const BINS: usize = 256;
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return None;
    }
    let width = (hi - lo) / BINS as f64;
    let mut hist = [0usize; BINS];
    for &v in values.iter().filter(|v| v.is_finite()) {
        hist[(((v - lo) / width) as usize).min(BINS - 1)] += 1;
    }
    let total: usize = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();
    let (mut w0, mut sum0) = (0usize, 0.0);
    let (mut best, mut best_bin) = (-1.0, 0);
    for (i, &h) in hist.iter().enumerate().take(BINS - 1) {
        w0 += h;
        sum0 += i as f64 * h as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (m0 - m1).powi(2);
        if between > best {
            best = between;
            best_bin = i;
        }
    }
    Some(lo + (best_bin + 1) as f64 * width)
}

/// Triangle mesh with optional per-vertex normals and colors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub normals: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(MeshError::Mesh(format!("face {f:?} indexes past {n} vertices")));
        }
        if !self.normals.is_empty() {
            if self.normals.len() != n {
                return Err(MeshError::Mesh(format!(
                    "{} normals for {n} vertices",
                    self.normals.len()
                )));
            }
            if let Some(v) = self.normals.iter().find(|v| (norm(**v) - 1.0).abs() > 1e-6) {
                return Err(MeshError::Mesh(format!("normal {v:?} is not unit length")));
            }
        }
        if !self.colors.is_empty() && self.colors.len() != n {
            return Err(MeshError::Mesh(format!(
                "{} colors for {n} vertices",
                self.colors.len()
            )));
        }
        Ok(())
    }

    fn undirected_edges(&self) -> HashMap<(usize, usize), (usize, isize)> {
        // (faces touching the edge, sum of +1 for a->b and -1 for b->a)
        let mut edges: HashMap<(usize, usize), (usize, isize)> = HashMap::new();
        for f in &self.faces {
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let entry = edges.entry(key).or_default();
                entry.0 += 1;
                entry.1 += if a < b { 1 } else { -1 };
            }
        }
        edges
    }

    /// `V - E + F` over the vertices referenced by faces.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                used[i] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.undirected_edges().len() as i64 + self.faces.len() as i64
    }

    /// Every edge is shared by exactly two faces that traverse it in
    /// opposite directions.
    pub fn is_watertight(&self) -> bool {
        !self.faces.is_empty() && self.undirected_edges().values().all(|&(n, s)| n == 2 && s == 0)
    }

    /// Volume enclosed by the faces; positive when they face outward.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| Vec3::from(self.vertices[i]));
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn face_normal(&self, f: usize) -> [f64; 3] {
        let [a, b, c] = self.faces[f].map(|i| Vec3::from(self.vertices[i]));
        let n = (b - a).cross(&(c - a));
        let l = n.norm();
        if l > 0.0 {
            (n / l).into()
        } else {
            [0.0; 3]
        }
    }

    /// ASCII PLY with normals and, when present, 8-bit vertex colors.
    pub fn to_ply(&self) -> String {
        let mut s = String::new();
        let has_n = !self.normals.is_empty();
        let has_c = !self.colors.is_empty();
        s.push_str("ply\nformat ascii 1.0\n");
        let _ = writeln!(s, "element vertex {}", self.vertices.len());
        s.push_str("property float x\nproperty float y\nproperty float z\n");
        if has_n {
            s.push_str("property float nx\nproperty float ny\nproperty float nz\n");
        }
        if has_c {
            s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
        }
        let _ = writeln!(s, "element face {}", self.faces.len());
        s.push_str("property list uchar int vertex_indices\nend_header\n");
        for (i, v) in self.vertices.iter().enumerate() {
            let _ = write!(s, "{} {} {}", v[0] as f32, v[1] as f32, v[2] as f32);
            if has_n {
                let n = self.normals[i];
                let _ = write!(s, " {} {} {}", n[0] as f32, n[1] as f32, n[2] as f32);
            }
            if has_c {
                let c = self.colors[i].map(to_u8);
                let _ = write!(s, " {} {} {}", c[0], c[1], c[2]);
            }
            s.push('\n');
        }
        for f in &self.faces {
            let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
        }
        s
    }

    /// Wavefront OBJ with positions and faces only.
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }

    pub fn save_ply(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_ply())
    }

    pub fn save_obj(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_obj())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| MeshError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn to_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
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

/// Grid edge from node `base` one step along `axis`, packed as
/// `node_index * 3 + axis`.
fn edge_key(spec: &GridSpec, a: [usize; 3], b: [usize; 3]) -> usize {
    let axis = (0..3).find(|&i| a[i] != b[i]).expect("edge endpoints differ");
    let base = if a[axis] < b[axis] { a } else { b };
    spec.index(base[0], base[1], base[2]) * 3 + axis
}

/// Triangulates the `iso` level set of `grid` between cell centers.
/// Triangles wind counter-clockwise seen from the low side, so face and
/// vertex normals point down the gradient (outward for a density).
pub fn marching_cubes(grid: &VoxelGrid, iso: f64) -> Mesh {
    let spec = &grid.spec;
    let [nx, ny, nz] = spec.resolution;
    let slabs: Vec<Vec<[usize; 3]>> = (0..nx - 1)
        .into_par_iter()
        .map(|i| {
            let mut tris = Vec::new();
            for j in 0..ny - 1 {
                for k in 0..nz - 1 {
                    let nodes = CORNERS.map(|c| [i + c[0], j + c[1], k + c[2]]);
                    let mut case = 0usize;
                    for (b, n) in nodes.iter().enumerate() {
                        if grid.at(n[0], n[1], n[2]) < iso {
                            case |= 1 << b;
                        }
                    }
                    for t in TRI_TABLE[case].chunks_exact(3).take_while(|t| t[0] >= 0) {
                        let key = |e: i8| {
                            let [a, b] = EDGES[e as usize];
                            edge_key(spec, nodes[a], nodes[b])
                        };
                        tris.push([key(t[0]), key(t[1]), key(t[2])]);
                    }
                }
            }
            tris
        })
        .collect();

    let mut index: HashMap<usize, usize> = HashMap::new();
    let mut keys = Vec::new();
    let mut faces = Vec::new();
    for tri in slabs.into_iter().flatten() {
        let f = tri.map(|key| {
            *index.entry(key).or_insert_with(|| {
                keys.push(key);
                keys.len() - 1
            })
        });
        faces.push(f);
    }

    let (vertices, grads): (Vec<[f64; 3]>, Vec<[f64; 3]>) = keys
        .par_iter()
        .map(|&key| {
            let axis = key % 3;
            let a = spec.unflatten(key / 3);
            let mut b = a;
            b[axis] += 1;
            let (va, vb) = (grid.at(a[0], a[1], a[2]), grid.at(b[0], b[1], b[2]));
            let t = (iso - va) / (vb - va);
            let pa = spec.center(a[0], a[1], a[2]);
            let pb = spec.center(b[0], b[1], b[2]);
            let (ga, gb) = (grid.gradient(a), grid.gradient(b));
            let p = std::array::from_fn(|i| pa[i] + t * (pb[i] - pa[i]));
            let g = std::array::from_fn(|i| ga[i] + t * (gb[i] - ga[i]));
            (p, g)
        })
        .unzip();

    let mut mesh = Mesh {
        vertices,
        faces,
        normals: Vec::new(),
        colors: Vec::new(),
    };
    mesh.normals = vertex_normals(&mesh, &grads);
    mesh
}

/// Unit `-grad`, falling back to the area-weighted face normal where the
/// gradient vanishes.
fn vertex_normals(mesh: &Mesh, grads: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut area = vec![Vec3::zeros(); mesh.vertices.len()];
    for f in &mesh.faces {
        let [a, b, c] = f.map(|i| Vec3::from(mesh.vertices[i]));
        let n = (b - a).cross(&(c - a));
        for &i in f {
            area[i] += n;
        }
    }
    grads
        .iter()
        .zip(&area)
        .map(|(g, w)| {
            let n = -Vec3::from(*g);
            let l = n.norm();
            if l > 1e-12 && l.is_finite() {
                (n / l).into()
            } else if w.norm() > 0.0 {
                (w / w.norm()).into()
            } else {
                [0.0, 0.0, 1.0]
            }
        })
        .collect()
}

/// Settings for [`color_vertices`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorConfig {
    /// Ray start distance outside the surface, in voxel diagonals.
    pub offset_voxels: f64,
    pub n_samples: usize,
    pub white_background: bool,
}

impl Default for ColorConfig {
    fn default() -> Self {
        Self {
            offset_voxels: 2.0,
            n_samples: 128,
            white_background: false,
        }
    }
}

const COLOR_CHUNK_POINTS: usize = 1 << 16;

/// Colors every vertex by compositing one ray that starts `offset_voxels`
/// voxel diagonals out along the normal and travels along `-normal` across
/// the whole grid box.
pub fn color_vertices(mesh: &Mesh, source: &dyn RadianceSource, spec: &GridSpec, cfg: &ColorConfig) -> Result<Mesh> {
    mesh.validate()?;
    let mut out = mesh.clone();
    if mesh.vertices.is_empty() {
        return Ok(out);
    }
    if mesh.normals.len() != mesh.vertices.len() {
        return Err(MeshError::Mesh("coloring needs one normal per vertex".into()));
    }
    let offset = cfg.offset_voxels * spec.voxel_diagonal();
    let rays: Vec<Ray> = mesh
        .vertices
        .iter()
        .zip(&mesh.normals)
        .map(|(v, n)| {
            let n = Vec3::from(*n);
            Ray {
                origin: Vec3::from(*v) + offset * n,
                direction: -n,
            }
        })
        .collect();
    let render = RenderConfig {
        n_samples: cfg.n_samples,
        near: 1e-6 * offset.max(1e-12),
        far: offset + spec.box_diagonal(),
        stratified: false,
        white_background: cfg.white_background,
        importance_samples: 0,
    };
    // Bound the points per chunk; a learned field keeps every activation.
    let chunk = (COLOR_CHUNK_POINTS / cfg.n_samples).max(1);
    let results = render::render_rays(source, &rays, &render, chunk, 0)?;
    out.colors = results.iter().map(|r| r.rgb).collect();
    Ok(out)
}

const TRI_TABLE: [[i8; 16]; 256] = [
    [-1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [0, 8, 3, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [0, 1, 9, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [1, 8, 3, 9, 8, 1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [1, 2, 10, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [0, 8, 3, 1, 2, 10, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [9, 2, 10, 0, 2, 9, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [2, 8, 3, 2, 10, 8, 10, 9, 8, -1, -1, -1, -1, -1, -1, -1],
    [3, 11, 2, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [0, 11, 2, 8, 11, 0, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [1, 9, 0, 2, 3, 11, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [1, 11, 2, 1, 9, 11, 9, 8, 11, -1, -1, -1, -1, -1, -1, -1],
    [3, 10, 1, 11, 10, 3, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [0, 10, 1, 0, 8, 10, 8, 11, 10, -1, -1, -1, -1, -1, -1, -1],
    [3, 9, 0, 3, 11, 9, 11, 10, 9, -1, -1, -1, -1, -1, -1, -1],
    [9, 8, 10, 10, 8, 11, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [4, 7, 8, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [4, 3, 0, 7, 3, 4, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [0, 1, 9, 8, 4, 7, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [4, 1, 9, 4, 7, 1, 7, 3, 1, -1, -1, -1, -1, -1, -1, -1],
    [1, 2, 10, 8, 4, 7, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [3, 4, 7, 3, 0, 4, 1, 2, 10, -1, -1, -1, -1, -1, -1, -1],
    [9, 2, 10, 9, 0, 2, 8, 4, 7, -1, -1, -1, -1, -1, -1, -1],
    [2, 10, 9, 2, 9, 7, 2, 7, 3, 7, 9, 4, -1, -1, -1, -1],
    [8, 4, 7, 3, 11, 2, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [11, 4, 7, 11, 2, 4, 2, 0, 4, -1, -1, -1, -1, -1, -1, -1],
    [9, 0, 1, 8, 4, 7, 2, 3, 11, -1, -1, -1, -1, -1, -1, -1],
    [4, 7, 11, 9, 4, 11, 9, 11, 2, 9, 2, 1, -1, -1, -1, -1],
    [3, 10, 1, 3, 11, 10, 7, 8, 4, -1, -1, -1, -1, -1, -1, -1],
    [1, 11, 10, 1, 4, 11, 1, 0, 4, 7, 11, 4, -1, -1, -1, -1],
    [4, 7, 8, 9, 0, 11, 9, 11, 10, 11, 0, 3, -1, -1, -1, -1],
    [4, 7, 11, 4, 11, 9, 9, 11, 10, -1, -1, -1, -1, -1, -1, -1],
    [9, 5, 4, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [9, 5, 4, 0, 8, 3, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [0, 5, 4, 1, 5, 0, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [8, 5, 4, 8, 3, 5, 3, 1, 5, -1, -1, -1, -1, -1, -1, -1],
    [1, 2, 10, 9, 5, 4, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [3, 0, 8, 1, 2, 10, 4, 9, 5, -1, -1, -1, -1, -1, -1, -1],
    [5, 2, 10, 5, 4, 2, 4, 0, 2, -1, -1, -1, -1, -1, -1, -1],
    [2, 10, 5, 3, 2, 5, 3, 5, 4, 3, 4, 8, -1, -1, -1, -1],
    [9, 5, 4, 2, 3, 11, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [0, 11, 2, 0, 8, 11, 4, 9, 5, -1, -1, -1, -1, -1, -1, -1],
    [0, 5, 4, 0, 1, 5, 2, 3, 11, -1, -1, -1, -1, -1, -1, -1],
    [2, 1, 5, 2, 5, 8, 2, 8, 11, 4, 8, 5, -1, -1, -1, -1],
    [10, 3, 11, 10, 1, 3, 9, 5, 4, -1, -1, -1, -1, -1, -1, -1],
    [4, 9, 5, 0, 8, 1, 8, 10, 1, 8, 11, 10, -1, -1, -1, -1],
    [5, 4, 0, 5, 0, 11, 5, 11, 10, 11, 0, 3, -1, -1, -1, -1],
    [5, 4, 8, 5, 8, 10, 10, 8, 11, -1, -1, -1, -1, -1, -1, -1],
    [9, 7, 8, 5, 7, 9, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [9, 3, 0, 9, 5, 3, 5, 7, 3, -1, -1, -1, -1, -1, -1, -1],
    [0, 7, 8, 0, 1, 7, 1, 5, 7, -1, -1, -1, -1, -1, -1, -1],
    [1, 5, 3, 3, 5, 7, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [9, 7, 8, 9, 5, 7, 10, 1, 2, -1, -1, -1, -1, -1, -1, -1],
    [10, 1, 2, 9, 5, 0, 5, 3, 0, 5, 7, 3, -1, -1, -1, -1],
    [8, 0, 2, 8, 2, 5, 8, 5, 7, 10, 5, 2, -1, -1, -1, -1],
    [2, 10, 5, 2, 5, 3, 3, 5, 7, -1, -1, -1, -1, -1, -1, -1],
    [7, 9, 5, 7, 8, 9, 3, 11, 2, -1, -1, -1, -1, -1, -1, -1],
    [9, 5, 7, 9, 7, 2, 9, 2, 0, 2, 7, 11, -1, -1, -1, -1],
    [2, 3, 11, 0, 1, 8, 1, 7, 8, 1, 5, 7, -1, -1, -1, -1],
    [11, 2, 1, 11, 1, 7, 7, 1, 5, -1, -1, -1, -1, -1, -1, -1],
    [9, 5, 8, 8, 5, 7, 10, 1, 3, 10, 3, 11, -1, -1, -1, -1],
    [5, 7, 0, 5, 0, 9, 7, 11, 0, 1, 0, 10, 11, 10, 0, -1],
    [11, 10, 0, 11, 0, 3, 10, 5, 0, 8, 0, 7, 5, 7, 0, -1],
    [11, 10, 5, 7, 11, 5, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [10, 6, 5, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [0, 8, 3, 5, 10, 6, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [9, 0, 1, 5, 10, 6, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [1, 8, 3, 1, 9, 8, 5, 10, 6, -1, -1, -1, -1, -1, -1, -1],
    [1, 6, 5, 2, 6, 1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [1, 6, 5, 1, 2, 6, 3, 0, 8, -1, -1, -1, -1, -1, -1, -1],
    [9, 6, 5, 9, 0, 6, 0, 2, 6, -1, -1, -1, -1, -1, -1, -1],
    [5, 9, 8, 5, 8, 2, 5, 2, 6, 3, 2, 8, -1, -1, -1, -1],
    [2, 3, 11, 10, 6, 5, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [11, 0, 8, 11, 2, 0, 10, 6, 5, -1, -1, -1, -1, -1, -1, -1],
    [0, 1, 9, 2, 3, 11, 5, 10, 6, -1, -1, -1, -1, -1, -1, -1],
    [5, 10, 6, 1, 9, 2, 9, 11, 2, 9, 8, 11, -1, -1, -1, -1],
    [6, 3, 11, 6, 5, 3, 5, 1, 3, -1, -1, -1, -1, -1, -1, -1],
    [0, 8, 11, 0, 11, 5, 0, 5, 1, 5, 11, 6, -1, -1, -1, -1],
    [3, 11, 6, 0, 3, 6, 0, 6, 5, 0, 5, 9, -1, -1, -1, -1],
    [6, 5, 9, 6, 9, 11, 11, 9, 8, -1, -1, -1, -1, -1, -1, -1],
    [5, 10, 6, 4, 7, 8, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [4, 3, 0, 4, 7, 3, 6, 5, 10, -1, -1, -1, -1, -1, -1, -1],
    [1, 9, 0, 5, 10, 6, 8, 4, 7, -1, -1, -1, -1, -1, -1, -1],
    [10, 6, 5, 1, 9, 7, 1, 7, 3, 7, 9, 4, -1, -1, -1, -1],
    [6, 1, 2, 6, 5, 1, 4, 7, 8, -1, -1, -1, -1, -1, -1, -1],
    [1, 2, 5, 5, 2, 6, 3, 0, 4, 3, 4, 7, -1, -1, -1, -1],
    [8, 4, 7, 9, 0, 5, 0, 6, 5, 0, 2, 6, -1, -1, -1, -1],
    [7, 3, 9, 7, 9, 4, 3, 2, 9, 5, 9, 6, 2, 6, 9, -1],
    [3, 11, 2, 7, 8, 4, 10, 6, 5, -1, -1, -1, -1, -1, -1, -1],
    [5, 10, 6, 4, 7, 2, 4, 2, 0, 2, 7, 11, -1, -1, -1, -1],
    [0, 1, 9, 4, 7, 8, 2, 3, 11, 5, 10, 6, -1, -1, -1, -1],
    [9, 2, 1, 9, 11, 2, 9, 4, 11, 7, 11, 4, 5, 10, 6, -1],
    [8, 4, 7, 3, 11, 5, 3, 5, 1, 5, 11, 6, -1, -1, -1, -1],
    [5, 1, 11, 5, 11, 6, 1, 0, 11, 7, 11, 4, 0, 4, 11, -1],
    [0, 5, 9, 0, 6, 5, 0, 3, 6, 11, 6, 3, 8, 4, 7, -1],
    [6, 5, 9, 6, 9, 11, 4, 7, 9, 7, 11, 9, -1, -1, -1, -1],
    [10, 4, 9, 6, 4, 10, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [4, 10, 6, 4, 9, 10, 0, 8, 3, -1, -1, -1, -1, -1, -1, -1],
    [10, 0, 1, 10, 6, 0, 6, 4, 0, -1, -1, -1, -1, -1, -1, -1],
    [8, 3, 1, 8, 1, 6, 8, 6, 4, 6, 1, 10, -1, -1, -1, -1],
    [1, 4, 9, 1, 2, 4, 2, 6, 4, -1, -1, -1, -1, -1, -1, -1],
    [3, 0, 8, 1, 2, 9, 2, 4, 9, 2, 6, 4, -1, -1, -1, -1],
    [0, 2, 4, 4, 2, 6, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [8, 3, 2, 8, 2, 4, 4, 2, 6, -1, -1, -1, -1, -1, -1, -1],
    [10, 4, 9, 10, 6, 4, 11, 2, 3, -1, -1, -1, -1, -1, -1, -1],
    [0, 8, 2, 2, 8, 11, 4, 9, 10, 4, 10, 6, -1, -1, -1, -1],
    [3, 11, 2, 0, 1, 6, 0, 6, 4, 6, 1, 10, -1, -1, -1, -1],
    [6, 4, 1, 6, 1, 10, 4, 8, 1, 2, 1, 11, 8, 11, 1, -1],
    [9, 6, 4, 9, 3, 6, 9, 1, 3, 11, 6, 3, -1, -1, -1, -1],
    [8, 11, 1, 8, 1, 0, 11, 6, 1, 9, 1, 4, 6, 4, 1, -1],
    [3, 11, 6, 3, 6, 0, 0, 6, 4, -1, -1, -1, -1, -1, -1, -1],
    [6, 4, 8, 11, 6, 8, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [7, 10, 6, 7, 8, 10, 8, 9, 10, -1, -1, -1, -1, -1, -1, -1],
    [0, 7, 3, 0, 10, 7, 0, 9, 10, 6, 7, 10, -1, -1, -1, -1],
    [10, 6, 7, 1, 10, 7, 1, 7, 8, 1, 8, 0, -1, -1, -1, -1],
    [10, 6, 7, 10, 7, 1, 1, 7, 3, -1, -1, -1, -1, -1, -1, -1],
    [1, 2, 6, 1, 6, 8, 1, 8, 9, 8, 6, 7, -1, -1, -1, -1],
    [2, 6, 9, 2, 9, 1, 6, 7, 9, 0, 9, 3, 7, 3, 9, -1],
    [7, 8, 0, 7, 0, 6, 6, 0, 2, -1, -1, -1, -1, -1, -1, -1],
    [7, 3, 2, 6, 7, 2, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [2, 3, 11, 10, 6, 8, 10, 8, 9, 8, 6, 7, -1, -1, -1, -1],
    [2, 0, 7, 2, 7, 11, 0, 9, 7, 6, 7, 10, 9, 10, 7, -1],
    [1, 8, 0, 1, 7, 8, 1, 10, 7, 6, 7, 10, 2, 3, 11, -1],
    [11, 2, 1, 11, 1, 7, 10, 6, 1, 6, 7, 1, -1, -1, -1, -1],
    [8, 9, 6, 8, 6, 7, 9, 1, 6, 11, 6, 3, 1, 3, 6, -1],
    [0, 9, 1, 11, 6, 7, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [7, 8, 0, 7, 0, 6, 3, 11, 0, 11, 6, 0, -1, -1, -1, -1],
    [7, 11, 6, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [7, 6, 11, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [3, 0, 8, 11, 7, 6, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [0, 1, 9, 11, 7, 6, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [8, 1, 9, 8, 3, 1, 11, 7, 6, -1, -1, -1, -1, -1, -1, -1],
    [10, 1, 2, 6, 11, 7, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [1, 2, 10, 3, 0, 8, 6, 11, 7, -1, -1, -1, -1, -1, -1, -1],
    [2, 9, 0, 2, 10, 9, 6, 11, 7, -1, -1, -1, -1, -1, -1, -1],
    [6, 11, 7, 2, 10, 3, 10, 8, 3, 10, 9, 8, -1, -1, -1, -1],
    [7, 2, 3, 6, 2, 7, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [7, 0, 8, 7, 6, 0, 6, 2, 0, -1, -1, -1, -1, -1, -1, -1],
    [2, 7, 6, 2, 3, 7, 0, 1, 9, -1, -1, -1, -1, -1, -1, -1],
    [1, 6, 2, 1, 8, 6, 1, 9, 8, 8, 7, 6, -1, -1, -1, -1],
    [10, 7, 6, 10, 1, 7, 1, 3, 7, -1, -1, -1, -1, -1, -1, -1],
    [10, 7, 6, 1, 7, 10, 1, 8, 7, 1, 0, 8, -1, -1, -1, -1],
    [0, 3, 7, 0, 7, 10, 0, 10, 9, 6, 10, 7, -1, -1, -1, -1],
    [7, 6, 10, 7, 10, 8, 8, 10, 9, -1, -1, -1, -1, -1, -1, -1],
    [6, 8, 4, 11, 8, 6, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [3, 6, 11, 3, 0, 6, 0, 4, 6, -1, -1, -1, -1, -1, -1, -1],
    [8, 6, 11, 8, 4, 6, 9, 0, 1, -1, -1, -1, -1, -1, -1, -1],
    [9, 4, 6, 9, 6, 3, 9, 3, 1, 11, 3, 6, -1, -1, -1, -1],
    [6, 8, 4, 6, 11, 8, 2, 10, 1, -1, -1, -1, -1, -1, -1, -1],
    [1, 2, 10, 3, 0, 11, 0, 6, 11, 0, 4, 6, -1, -1, -1, -1],
    [4, 11, 8, 4, 6, 11, 0, 2, 9, 2, 10, 9, -1, -1, -1, -1],
    [10, 9, 3, 10, 3, 2, 9, 4, 3, 11, 3, 6, 4, 6, 3, -1],
    [8, 2, 3, 8, 4, 2, 4, 6, 2, -1, -1, -1, -1, -1, -1, -1],
    [0, 4, 2, 4, 6, 2, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [1, 9, 0, 2, 3, 4, 2, 4, 6, 4, 3, 8, -1, -1, -1, -1],
    [1, 9, 4, 1, 4, 2, 2, 4, 6, -1, -1, -1, -1, -1, -1, -1],
    [8, 1, 3, 8, 6, 1, 8, 4, 6, 6, 10, 1, -1, -1, -1, -1],
    [10, 1, 0, 10, 0, 6, 6, 0, 4, -1, -1, -1, -1, -1, -1, -1],
    [4, 6, 3, 4, 3, 8, 6, 10, 3, 0, 3, 9, 10, 9, 3, -1],
    [10, 9, 4, 6, 10, 4, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [4, 9, 5, 7, 6, 11, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [0, 8, 3, 4, 9, 5, 11, 7, 6, -1, -1, -1, -1, -1, -1, -1],
    [5, 0, 1, 5, 4, 0, 7, 6, 11, -1, -1, -1, -1, -1, -1, -1],
    [11, 7, 6, 8, 3, 4, 3, 5, 4, 3, 1, 5, -1, -1, -1, -1],
    [9, 5, 4, 10, 1, 2, 7, 6, 11, -1, -1, -1, -1, -1, -1, -1],
    [6, 11, 7, 1, 2, 10, 0, 8, 3, 4, 9, 5, -1, -1, -1, -1],
    [7, 6, 11, 5, 4, 10, 4, 2, 10, 4, 0, 2, -1, -1, -1, -1],
    [3, 4, 8, 3, 5, 4, 3, 2, 5, 10, 5, 2, 11, 7, 6, -1],
    [7, 2, 3, 7, 6, 2, 5, 4, 9, -1, -1, -1, -1, -1, -1, -1],
    [9, 5, 4, 0, 8, 6, 0, 6, 2, 6, 8, 7, -1, -1, -1, -1],
    [3, 6, 2, 3, 7, 6, 1, 5, 0, 5, 4, 0, -1, -1, -1, -1],
    [6, 2, 8, 6, 8, 7, 2, 1, 8, 4, 8, 5, 1, 5, 8, -1],
    [9, 5, 4, 10, 1, 6, 1, 7, 6, 1, 3, 7, -1, -1, -1, -1],
    [1, 6, 10, 1, 7, 6, 1, 0, 7, 8, 7, 0, 9, 5, 4, -1],
    [4, 0, 10, 4, 10, 5, 0, 3, 10, 6, 10, 7, 3, 7, 10, -1],
    [7, 6, 10, 7, 10, 8, 5, 4, 10, 4, 8, 10, -1, -1, -1, -1],
    [6, 9, 5, 6, 11, 9, 11, 8, 9, -1, -1, -1, -1, -1, -1, -1],
    [3, 6, 11, 0, 6, 3, 0, 5, 6, 0, 9, 5, -1, -1, -1, -1],
    [0, 11, 8, 0, 5, 11, 0, 1, 5, 5, 6, 11, -1, -1, -1, -1],
    [6, 11, 3, 6, 3, 5, 5, 3, 1, -1, -1, -1, -1, -1, -1, -1],
    [1, 2, 10, 9, 5, 11, 9, 11, 8, 11, 5, 6, -1, -1, -1, -1],
    [0, 11, 3, 0, 6, 11, 0, 9, 6, 5, 6, 9, 1, 2, 10, -1],
    [11, 8, 5, 11, 5, 6, 8, 0, 5, 10, 5, 2, 0, 2, 5, -1],
    [6, 11, 3, 6, 3, 5, 2, 10, 3, 10, 5, 3, -1, -1, -1, -1],
    [5, 8, 9, 5, 2, 8, 5, 6, 2, 3, 8, 2, -1, -1, -1, -1],
    [9, 5, 6, 9, 6, 0, 0, 6, 2, -1, -1, -1, -1, -1, -1, -1],
    [1, 5, 8, 1, 8, 0, 5, 6, 8, 3, 8, 2, 6, 2, 8, -1],
    [1, 5, 6, 2, 1, 6, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [1, 3, 6, 1, 6, 10, 3, 8, 6, 5, 6, 9, 8, 9, 6, -1],
    [10, 1, 0, 10, 0, 6, 9, 5, 0, 5, 6, 0, -1, -1, -1, -1],
    [0, 3, 8, 5, 6, 10, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [10, 5, 6, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [11, 5, 10, 7, 5, 11, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [11, 5, 10, 11, 7, 5, 8, 3, 0, -1, -1, -1, -1, -1, -1, -1],
    [5, 11, 7, 5, 10, 11, 1, 9, 0, -1, -1, -1, -1, -1, -1, -1],
    [10, 7, 5, 10, 11, 7, 9, 8, 1, 8, 3, 1, -1, -1, -1, -1],
    [11, 1, 2, 11, 7, 1, 7, 5, 1, -1, -1, -1, -1, -1, -1, -1],
    [0, 8, 3, 1, 2, 7, 1, 7, 5, 7, 2, 11, -1, -1, -1, -1],
    [9, 7, 5, 9, 2, 7, 9, 0, 2, 2, 11, 7, -1, -1, -1, -1],
    [7, 5, 2, 7, 2, 11, 5, 9, 2, 3, 2, 8, 9, 8, 2, -1],
    [2, 5, 10, 2, 3, 5, 3, 7, 5, -1, -1, -1, -1, -1, -1, -1],
    [8, 2, 0, 8, 5, 2, 8, 7, 5, 10, 2, 5, -1, -1, -1, -1],
    [9, 0, 1, 5, 10, 3, 5, 3, 7, 3, 10, 2, -1, -1, -1, -1],
    [9, 8, 2, 9, 2, 1, 8, 7, 2, 10, 2, 5, 7, 5, 2, -1],
    [1, 3, 5, 3, 7, 5, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [0, 8, 7, 0, 7, 1, 1, 7, 5, -1, -1, -1, -1, -1, -1, -1],
    [9, 0, 3, 9, 3, 5, 5, 3, 7, -1, -1, -1, -1, -1, -1, -1],
    [9, 8, 7, 5, 9, 7, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [5, 8, 4, 5, 10, 8, 10, 11, 8, -1, -1, -1, -1, -1, -1, -1],
    [5, 0, 4, 5, 11, 0, 5, 10, 11, 11, 3, 0, -1, -1, -1, -1],
    [0, 1, 9, 8, 4, 10, 8, 10, 11, 10, 4, 5, -1, -1, -1, -1],
    [10, 11, 4, 10, 4, 5, 11, 3, 4, 9, 4, 1, 3, 1, 4, -1],
    [2, 5, 1, 2, 8, 5, 2, 11, 8, 4, 5, 8, -1, -1, -1, -1],
    [0, 4, 11, 0, 11, 3, 4, 5, 11, 2, 11, 1, 5, 1, 11, -1],
    [0, 2, 5, 0, 5, 9, 2, 11, 5, 4, 5, 8, 11, 8, 5, -1],
    [9, 4, 5, 2, 11, 3, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [2, 5, 10, 3, 5, 2, 3, 4, 5, 3, 8, 4, -1, -1, -1, -1],
    [5, 10, 2, 5, 2, 4, 4, 2, 0, -1, -1, -1, -1, -1, -1, -1],
    [3, 10, 2, 3, 5, 10, 3, 8, 5, 4, 5, 8, 0, 1, 9, -1],
    [5, 10, 2, 5, 2, 4, 1, 9, 2, 9, 4, 2, -1, -1, -1, -1],
    [8, 4, 5, 8, 5, 3, 3, 5, 1, -1, -1, -1, -1, -1, -1, -1],
    [0, 4, 5, 1, 0, 5, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [8, 4, 5, 8, 5, 3, 9, 0, 5, 0, 3, 5, -1, -1, -1, -1],
    [9, 4, 5, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [4, 11, 7, 4, 9, 11, 9, 10, 11, -1, -1, -1, -1, -1, -1, -1],
    [0, 8, 3, 4, 9, 7, 9, 11, 7, 9, 10, 11, -1, -1, -1, -1],
    [1, 10, 11, 1, 11, 4, 1, 4, 0, 7, 4, 11, -1, -1, -1, -1],
    [3, 1, 4, 3, 4, 8, 1, 10, 4, 7, 4, 11, 10, 11, 4, -1],
    [4, 11, 7, 9, 11, 4, 9, 2, 11, 9, 1, 2, -1, -1, -1, -1],
    [9, 7, 4, 9, 11, 7, 9, 1, 11, 2, 11, 1, 0, 8, 3, -1],
    [11, 7, 4, 11, 4, 2, 2, 4, 0, -1, -1, -1, -1, -1, -1, -1],
    [11, 7, 4, 11, 4, 2, 8, 3, 4, 3, 2, 4, -1, -1, -1, -1],
    [2, 9, 10, 2, 7, 9, 2, 3, 7, 7, 4, 9, -1, -1, -1, -1],
    [9, 10, 7, 9, 7, 4, 10, 2, 7, 8, 7, 0, 2, 0, 7, -1],
    [3, 7, 10, 3, 10, 2, 7, 4, 10, 1, 10, 0, 4, 0, 10, -1],
    [1, 10, 2, 8, 7, 4, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [4, 9, 1, 4, 1, 7, 7, 1, 3, -1, -1, -1, -1, -1, -1, -1],
    [4, 9, 1, 4, 1, 7, 0, 8, 1, 8, 7, 1, -1, -1, -1, -1],
    [4, 0, 3, 7, 4, 3, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [4, 8, 7, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [9, 10, 8, 10, 11, 8, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [3, 0, 9, 3, 9, 11, 11, 9, 10, -1, -1, -1, -1, -1, -1, -1],
    [0, 1, 10, 0, 10, 8, 8, 10, 11, -1, -1, -1, -1, -1, -1, -1],
    [3, 1, 10, 11, 3, 10, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [1, 2, 11, 1, 11, 9, 9, 11, 8, -1, -1, -1, -1, -1, -1, -1],
    [3, 0, 9, 3, 9, 11, 1, 2, 9, 2, 11, 9, -1, -1, -1, -1],
    [0, 2, 11, 8, 0, 11, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [3, 2, 11, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [2, 3, 8, 2, 8, 10, 10, 8, 9, -1, -1, -1, -1, -1, -1, -1],
    [9, 10, 2, 0, 9, 2, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [2, 3, 8, 2, 8, 10, 0, 1, 8, 1, 10, 8, -1, -1, -1, -1],
    [1, 10, 2, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [1, 3, 8, 9, 1, 8, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [0, 9, 1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [0, 3, 8, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [-1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticObject;
    use crate::field::{FieldConfig, FieldParams};
    use crate::render::LearnedSource;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere_mesh(res: usize) -> (SyntheticObject, GridSpec, Mesh) {
        let obj = SyntheticObject::sphere(0.6, 15.0, [0.8, 0.0, 0.0]);
        let spec = GridSpec::cube(res, 1.0);
        let grid = sample_grid(&obj, &spec).unwrap();
        let mesh = marching_cubes(&grid, 0.5 * obj.density_scale);
        (obj, spec, mesh)
    }

    #[test]
    fn grid_matches_closed_form() {
        let obj = SyntheticObject::sphere(0.5, 10.0, [0.5; 3]);
        let spec = GridSpec::cube(9, 1.0);
        let grid = sample_grid(&obj, &spec).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                for k in 0..9 {
                    let (s, _) = obj.density_color(&spec.center(i, j, k), &[0.0, 0.0, 1.0]);
                    assert!((grid.at(i, j, k) - s).abs() <= 1e-9);
                }
            }
        }
        assert_eq!(spec.center(4, 4, 4), [0.0; 3]);
    }

    struct Blob;

    impl RadianceSource for Blob {
        fn query(&self, points: &[[f64; 3]], _dirs: &[[f64; 3]]) -> render::Result<(Vec<f64>, Vec<[f64; 3]>)> {
            Ok(points
                .iter()
                .map(|p| {
                    (
                        10.0 * (-(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / 0.2).exp(),
                        [0.0; 3],
                    )
                })
                .unzip())
        }
    }

    fn stencil_error(coarse_res: usize) -> f64 {
        let fine = sample_grid(&Blob, &GridSpec::cube(2 * coarse_res, 1.0)).unwrap();
        let coarse = sample_grid(&Blob, &GridSpec::cube(coarse_res, 1.0)).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..coarse_res {
            for j in 0..coarse_res {
                for k in 0..coarse_res {
                    let avg = CORNERS
                        .iter()
                        .map(|c| fine.at(2 * i + c[0], 2 * j + c[1], 2 * k + c[2]))
                        .sum::<f64>()
                        / 8.0;
                    worst = worst.max((coarse.at(i, j, k) - avg).abs());
                }
            }
        }
        worst
    }

    #[test]
    fn coarse_grid_agrees_with_fine_stencil() {
        // Each coarse center is the mean of the 8 fine centers around it,
        // offset by h/2 per axis, so the gap is h^2/8 * |laplacian| to
        // leading order; the blob's laplacian peaks at 10 * 6 / 0.2.
        let e32 = stencil_error(32);
        let h: f64 = 2.0 / 64.0;
        assert!(e32 <= 1.05 * h * h / 8.0 * 300.0, "{e32}");
        let e16 = stencil_error(16);
        let ratio = e16 / e32;
        assert!((3.5..4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn empty_field_stays_below_iso() {
        let obj = SyntheticObject::sphere(0.5, 1e-6, [0.5; 3]);
        let grid = sample_grid(&obj, &GridSpec::cube(8, 1.0)).unwrap();
        assert!(grid.min_max().1 < 0.5 * 15.0);
        assert!(marching_cubes(&grid, 7.5).is_empty());
    }

    #[test]
    fn constant_grid_gives_empty_mesh() {
        let spec = GridSpec::cube(5, 1.0);
        let grid = VoxelGrid::new(spec.clone(), vec![3.0; spec.len()]).unwrap();
        let m = marching_cubes(&grid, 3.0);
        assert!(m.is_empty() && m.vertices.is_empty());
        assert!(otsu_threshold(&grid.values).is_none());
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::cube(1, 1.0).validate().is_err());
        let mut s = GridSpec::cube(4, 1.0);
        s.max[1] = -2.0;
        assert!(s.validate().is_err());
        assert!(VoxelGrid::new(GridSpec::cube(4, 1.0), vec![0.0; 10]).is_err());
    }

    #[test]
    fn sphere_is_closed_and_outward() {
        let (_, _, mesh) = sphere_mesh(64);
        mesh.validate().unwrap();
        assert!(mesh.is_watertight());
        assert_eq!(mesh.euler_characteristic(), 2);
        let mean_r: f64 = mesh.vertices.iter().map(|v| norm(*v)).sum::<f64>() / mesh.vertices.len() as f64;
        assert!((mean_r - 0.6).abs() < 0.02 * 0.6, "{mean_r}");
        let vol = mesh.signed_volume();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.6f64.powi(3);
        assert!((vol - exact).abs() < 0.03 * exact, "{vol} vs {exact}");
        for (v, n) in mesh.vertices.iter().zip(&mesh.normals) {
            let radial = Vec3::from(*v).normalize();
            assert!(radial.dot(&Vec3::from(*n)) > 0.99);
        }
        for f in 0..mesh.faces.len() {
            let c = mesh.faces[f]
                .iter()
                .fold(Vec3::zeros(), |a, &i| a + Vec3::from(mesh.vertices[i]));
            assert!(c.dot(&Vec3::from(mesh.face_normal(f))) > 0.0);
        }
    }

    #[test]
    fn otsu_splits_bimodal_values() {
        let mut v = vec![0.1; 500];
        v.extend(vec![9.0; 300]);
        let t = otsu_threshold(&v).unwrap();
        assert!(t > 0.1 && t < 9.0);
        let (_, _, _) = sphere_mesh(8);
    }

    fn sorted(mut v: Vec<[f64; 3]>) -> Vec<[f64; 3]> {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn negated_field_flips_orientation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let spec = GridSpec::cube(12, 1.0);
            let c: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
            let f = |p: [f64; 3]| {
                (c[0] * p[0]).sin() + (c[1] * p[1]).cos() * p[2] + c[2] * p[0] * p[1] + c[3] * p[2] * p[2] - c[4] * p[1]
                    + 0.1 * c[5]
            };
            let iso = 0.3;
            let a = VoxelGrid::from_fn(spec.clone(), f).unwrap();
            let b = VoxelGrid::from_fn(spec.clone(), |p| -(f(p) - 2.0 * iso)).unwrap();
            let ma = marching_cubes(&a, iso);
            let mb = marching_cubes(&b, iso);
            assert!(!ma.is_empty());
            let (va, vb) = (sorted(ma.vertices.clone()), sorted(mb.vertices.clone()));
            assert_eq!(va.len(), vb.len());
            for (p, q) in va.iter().zip(&vb) {
                assert!((0..3).all(|i| (p[i] - q[i]).abs() <= 1e-9), "{p:?} {q:?}");
            }
            let key = |p: &[f64; 3]| p.map(|x| (x * 1e6).round() as i64);
            let nb: HashMap<[i64; 3], [f64; 3]> =
                mb.vertices.iter().zip(&mb.normals).map(|(p, n)| (key(p), *n)).collect();
            for (p, n) in ma.vertices.iter().zip(&ma.normals) {
                let m = nb[&key(p)];
                assert!((Vec3::from(*n) + Vec3::from(m)).norm() < 1e-9);
            }
            let (sa, sb) = (ma.signed_volume(), mb.signed_volume());
            assert!((sa + sb).abs() < 1e-9 * (1.0 + sa.abs()), "{sa} {sb}");
        }
    }

    #[test]
    fn colors_match_oracle_albedo() {
        let (obj, spec, mesh) = sphere_mesh(32);
        let colored = color_vertices(&mesh, &obj, &spec, &ColorConfig::default()).unwrap();
        colored.validate().unwrap();
        assert_eq!(colored.vertices, mesh.vertices);
        for c in &colored.colors {
            for i in 0..3 {
                assert!((c[i] - obj.base_color[i]).abs() < 0.05, "{c:?}");
            }
        }
        let empty = color_vertices(&Mesh::default(), &obj, &spec, &ColorConfig::default()).unwrap();
        assert!(empty.vertices.is_empty() && empty.colors.is_empty());
    }

    #[test]
    fn geometry_ignores_texture_code() {
        let cfg = FieldConfig {
            pos_freqs: 3,
            dir_freqs: 1,
            latent_dim: 4,
            hidden_dim: 16,
            feature_dim: 8,
            shape_layers: 2,
            texture_layers: 1,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = FieldParams::init(&cfg, &mut rng).unwrap();
        let zs: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = GridSpec::cube(10, 1.0);
        let grid = |zt: Vec<f64>| {
            let src = LearnedSource {
                params: &params,
                shape_code: zs.clone(),
                texture_code: zt,
            };
            sample_grid(&src, &spec).unwrap()
        };
        let a = grid(vec![0.0; 4]);
        let b = grid(vec![3.0, -2.0, 1.0, 0.5]);
        assert_eq!(a, b);
        let iso = otsu_threshold(&a.values).unwrap();
        assert_eq!(marching_cubes(&a, iso), marching_cubes(&b, iso));
    }

    #[test]
    fn exports_are_well_formed() {
        let (obj, spec, mesh) = sphere_mesh(10);
        let mesh = color_vertices(&mesh, &obj, &spec, &ColorConfig::default()).unwrap();
        let ply = mesh.to_ply();
        assert!(ply.starts_with("ply\nformat ascii 1.0\n"));
        assert!(ply.contains(&format!("element vertex {}\n", mesh.vertices.len())));
        assert!(ply.contains("property uchar red"));
        let body = ply.split("end_header\n").nth(1).unwrap();
        assert_eq!(body.lines().count(), mesh.vertices.len() + mesh.faces.len());
        let obj_text = mesh.to_obj();
        assert_eq!(
            obj_text.lines().filter(|l| l.starts_with("v ")).count(),
            mesh.vertices.len()
        );
        assert_eq!(
            obj_text.lines().filter(|l| l.starts_with("f ")).count(),
            mesh.faces.len()
        );
        let dir = tempfile::tempdir().unwrap();
        mesh.save_ply(&dir.path().join("m.ply")).unwrap();
        mesh.save_obj(&dir.path().join("m.obj")).unwrap();
        assert!(mesh.save_obj(&dir.path().join("missing/m.obj")).is_err());
    }
}
