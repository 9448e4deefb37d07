//! Volume rendering: ray sampling, alpha compositing and image assembly.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::camera::{self, CameraError, Extrinsic, Intrinsics, Ray, RayVars};
use crate::container::{Container, ContainerError};
use crate::field::{BoundField, FieldError, FieldParams};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("image error: {0}")]
    Image(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

pub type Result<T> = std::result::Result<T, RenderError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub n_samples: usize,
    pub near: f64,
    pub far: f64,
    pub stratified: bool,
    pub white_background: bool,
    /// Extra samples drawn from the first-pass weights; 0 disables.
    pub importance_samples: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            n_samples: 64,
            near: 2.0,
            far: 5.0,
            stratified: true,
            white_background: false,
            importance_samples: 0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.near > 0.0 && self.near < self.far && self.far.is_finite()) {
            return Err(RenderError::InvalidConfig(format!(
                "need 0 < near < far, got near={} far={}",
                self.near, self.far
            )));
        }
        if self.n_samples < 2 {
            return Err(RenderError::InvalidConfig("n_samples must be >= 2".into()));
        }
        Ok(())
    }

    pub fn background(&self) -> f64 {
        if self.white_background {
            1.0
        } else {
            0.0
        }
    }

    /// Samples per ray after optional resampling.
    pub fn total_samples(&self) -> usize {
        self.n_samples + self.importance_samples
    }
}

/// Composited output of a single ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderResult {
    pub rgb: [f64; 3],
    pub weights: Vec<f64>,
    pub transmittance: f64,
}

/// Sample depths for one ray: left bin edges, jittered within each bin
/// when stratified.
pub fn sample_ts(cfg: &RenderConfig, rng: &mut impl Rng) -> Vec<f64> {
    let n = cfg.n_samples;
    let step = (cfg.far - cfg.near) / n as f64;
    (0..n)
        .map(|i| {
            let u = if cfg.stratified { rng.gen::<f64>() } else { 0.0 };
            cfg.near + (i as f64 + u) * step
        })
        .collect()
}

pub fn sample_points(ray: &Ray, cfg: &RenderConfig, rng: &mut impl Rng) -> (Vec<f64>, Vec<[f64; 3]>) {
    let ts = sample_ts(cfg, rng);
    let pts = ts.iter().map(|&t| ray.at(t).into()).collect();
    (ts, pts)
}

fn deltas(ts: &[f64], far: f64) -> Vec<f64> {
    let n = ts.len();
    (0..n)
        .map(|i| if i + 1 < n { ts[i + 1] - ts[i] } else { far - ts[i] })
        .collect()
}

/// Alpha compositing of one ray, with the last interval closed at `far`.
pub fn composite(sigmas: &[f64], colors: &[[f64; 3]], ts: &[f64], cfg: &RenderConfig) -> Result<RenderResult> {
    let n = sigmas.len();
    for (what, got) in [("colors", colors.len()), ("ts", ts.len())] {
        if got != n {
            return Err(RenderError::Length { what, expected: n, got });
        }
    }
    if n < 2 {
        return Err(RenderError::Length {
            what: "samples",
            expected: 2,
            got: n,
        });
    }
    let delta = deltas(ts, cfg.far);
    let mut rgb = [0.0; 3];
    let mut weights = Vec::with_capacity(n);
    let mut optical = 0.0_f64;
    for i in 0..n {
        let sd = sigmas[i] * delta[i];
        let w = (-optical).exp() * -(-sd).exp_m1();
        optical += sd;
        for c in 0..3 {
            rgb[c] += w * colors[i][c];
        }
        weights.push(w);
    }
    let transmittance = (-optical).exp();
    let bg = cfg.background();
    for v in &mut rgb {
        *v += transmittance * bg;
    }
    Ok(RenderResult {
        rgb,
        weights,
        transmittance,
    })
}

/// Inverse-CDF draws from the piecewise-constant distribution that puts
/// mass `weights[i]` on `[ts[i], ts[i+1])` (the last bin ends at `far`).
/// Returns the original and new depths merged in ascending order.
pub fn importance_resample(
    weights: &[f64],
    ts: &[f64],
    far: f64,
    n_extra: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if weights.len() != ts.len() {
        return Err(RenderError::Length {
            what: "weights",
            expected: ts.len(),
            got: weights.len(),
        });
    }
    let n = ts.len();
    let mut edges = ts.to_vec();
    edges.push(far);
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    let mut cdf = Vec::with_capacity(n + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for w in weights {
        acc += if total > 0.0 {
            w.max(0.0) / total
        } else {
            1.0 / n as f64
        };
        cdf.push(acc);
    }
    let mut out = ts.to_vec();
    for _ in 0..n_extra {
        let u = rng.gen::<f64>() * cdf[n];
        let bin = cdf.partition_point(|&c| c <= u).clamp(1, n) - 1;
        let width = cdf[bin + 1] - cdf[bin];
        let frac = if width > 0.0 { (u - cdf[bin]) / width } else { 0.5 };
        out.push(edges[bin] + frac.clamp(0.0, 1.0) * (edges[bin + 1] - edges[bin]));
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Per-ray code selection for a batch: `rows[r]` indexes into both tables.
#[derive(Debug, Clone)]
pub struct CodeRows {
    pub shape: Var,
    pub texture: Var,
    pub rows: Vec<usize>,
}

/// Differentiable render output: colors `[R, 3]`, weights `[R, S]`.
#[derive(Debug, Clone, Copy)]
pub struct TapeRender {
    pub rgb: Var,
    pub weights: Var,
}

/// Differentiable compositing of `sigma: [R, S]`, `rgb: [R, S, 3]` at
/// depths `ts: [R, S]`.
pub fn composite_vars(tape: &mut Tape, sigma: Var, rgb: Var, ts: Var, cfg: &RenderConfig) -> Result<TapeRender> {
    let shape = tape.shape(ts).to_vec();
    let (r, s) = (shape[0], shape[1]);
    let next = tape.slice(ts, 1, 1, s)?;
    let prev = tape.slice(ts, 1, 0, s - 1)?;
    let inner = tape.sub(next, prev)?;
    let last = tape.slice(ts, 1, s - 1, s)?;
    let far = tape.constant(Tensor::full(&[1, 1], cfg.far));
    let tail = tape.sub(far, last)?;
    let delta = tape.concat(&[inner, tail], 1)?;
    let sd = tape.mul(sigma, delta)?;
    let neg_sd = tape.neg(sd);
    let keep = tape.exp(neg_sd);
    let neg_keep = tape.neg(keep);
    let alpha = tape.add_scalar(neg_keep, 1.0);
    let optical = tape.cumsum_exclusive(sd, 1)?;
    let neg_optical = tape.neg(optical);
    let trans = tape.exp(neg_optical);
    let weights = tape.mul(trans, alpha)?;
    let w3 = tape.reshape(weights, &[r, s, 1])?;
    let weighted = tape.mul(w3, rgb)?;
    let summed = tape.sum_axis(weighted, 1)?;
    let mut out = tape.reshape(summed, &[r, 3])?;
    if cfg.white_background {
        let total = tape.sum_axis(sd, 1)?;
        let neg_total = tape.neg(total);
        let final_t = tape.exp(neg_total);
        out = tape.add(out, final_t)?;
    }
    Ok(TapeRender { rgb: out, weights })
}

/// Samples the field along a ray bundle and composites. `ts` holds `S`
/// depths per ray, row-major `[R, S]`.
pub fn render_vars(
    tape: &mut Tape,
    field: &BoundField,
    rays: &RayVars,
    ts: &[f64],
    codes: &CodeRows,
    cfg: &RenderConfig,
) -> Result<TapeRender> {
    let r = tape.shape(rays.directions)[0];
    if !ts.len().is_multiple_of(r.max(1)) || ts.is_empty() {
        return Err(RenderError::Length {
            what: "ts",
            expected: r * cfg.total_samples(),
            got: ts.len(),
        });
    }
    let s = ts.len() / r;
    if codes.rows.len() != r {
        return Err(RenderError::Length {
            what: "code rows",
            expected: r,
            got: codes.rows.len(),
        });
    }
    let t = tape.constant(Tensor::new(vec![r, s], ts.to_vec())?);
    let t3 = tape.reshape(t, &[r, s, 1])?;
    let d3 = tape.reshape(rays.directions, &[r, 1, 3])?;
    let n_origins = tape.shape(rays.origin)[0];
    let o3 = tape.reshape(rays.origin, &[n_origins, 1, 3])?;
    let offsets = tape.mul(d3, t3)?;
    let pts = tape.add(o3, offsets)?;
    let pts = tape.reshape(pts, &[r * s, 3])?;
    let point_ray: Vec<usize> = (0..r).flat_map(|i| std::iter::repeat_n(i, s)).collect();
    let dirs = tape.gather_rows(rays.directions, &point_ray)?;
    let code_idx: Vec<usize> = point_ray.iter().map(|&i| codes.rows[i]).collect();
    let zs = tape.gather_rows(codes.shape, &code_idx)?;
    let zt = tape.gather_rows(codes.texture, &code_idx)?;
    let out = field.eval_points(tape, pts, dirs, zs, zt)?;
    let sigma = tape.reshape(out.sigma, &[r, s])?;
    let rgb = tape.reshape(out.rgb, &[r, s, 3])?;
    composite_vars(tape, sigma, rgb, t, cfg)
}

/// Anything that can report density and color at world points.
pub trait RadianceSource: Sync {
    /// Densities and colors for matching point/direction lists.
    fn query(&self, points: &[[f64; 3]], dirs: &[[f64; 3]]) -> Result<(Vec<f64>, Vec<[f64; 3]>)>;
}

/// A trained field with fixed codes.
pub struct LearnedSource<'a> {
    pub params: &'a FieldParams,
    pub shape_code: Vec<f64>,
    pub texture_code: Vec<f64>,
}

impl RadianceSource for LearnedSource<'_> {
    fn query(&self, points: &[[f64; 3]], dirs: &[[f64; 3]]) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
        let n = points.len();
        let dim = self.params.config.latent_dim;
        for (what, got) in [
            ("shape code", self.shape_code.len()),
            ("texture code", self.texture_code.len()),
        ] {
            if got != dim {
                return Err(FieldError::Dimension {
                    what,
                    expected: dim,
                    got,
                }
                .into());
            }
        }
        let mut tape = Tape::new();
        let field = self.params.bind(&mut tape, false);
        let flat = |v: &[[f64; 3]]| v.iter().flatten().copied().collect::<Vec<_>>();
        let p = tape.constant(Tensor::new(vec![n, 3], flat(points))?);
        let d = tape.constant(Tensor::new(vec![n, 3], flat(dirs))?);
        let zs = tape.constant(Tensor::new(vec![1, dim], self.shape_code.clone())?);
        let zt = tape.constant(Tensor::new(vec![1, dim], self.texture_code.clone())?);
        let zeros = vec![0; n];
        let zs = tape.gather_rows(zs, &zeros)?;
        let zt = tape.gather_rows(zt, &zeros)?;
        let out = field.eval_points(&mut tape, p, d, zs, zt)?;
        let sigma = tape.value(out.sigma).data().to_vec();
        let rgb = tape
            .value(out.rgb)
            .data()
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        Ok((sigma, rgb))
    }
}

/// RNG for ray `index` of a render seeded with `seed`; independent of how
/// rays are grouped into chunks.
pub fn ray_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Renders a list of rays without gradients. Ray `i` draws its samples
/// from `ray_rng(seed, i)`.
pub fn render_rays(
    source: &dyn RadianceSource,
    rays: &[Ray],
    cfg: &RenderConfig,
    chunk_size: usize,
    seed: u64,
) -> Result<Vec<RenderResult>> {
    cfg.validate()?;
    let chunk_size = chunk_size.max(1);
    let chunks: Vec<Result<Vec<RenderResult>>> = rays
        .par_chunks(chunk_size)
        .enumerate()
        .map(|(ci, chunk)| {
            let base = ci * chunk_size;
            let mut rngs: Vec<ChaCha8Rng> = (0..chunk.len()).map(|i| ray_rng(seed, (base + i) as u64)).collect();
            let ts: Vec<Vec<f64>> = rngs.iter_mut().map(|g| sample_ts(cfg, g)).collect();
            let first = composite_chunk(source, chunk, &ts, cfg)?;
            if cfg.importance_samples == 0 {
                return Ok(first);
            }
            let fine_ts = first
                .iter()
                .zip(&ts)
                .zip(&mut rngs)
                .map(|((res, t), g)| importance_resample(&res.weights, t, cfg.far, cfg.importance_samples, g))
                .collect::<Result<Vec<_>>>()?;
            composite_chunk(source, chunk, &fine_ts, cfg)
        })
        .collect();
    let mut out = Vec::with_capacity(rays.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

fn composite_chunk(
    source: &dyn RadianceSource,
    rays: &[Ray],
    ts: &[Vec<f64>],
    cfg: &RenderConfig,
) -> Result<Vec<RenderResult>> {
    let mut pts = Vec::new();
    let mut dirs = Vec::new();
    for (ray, t) in rays.iter().zip(ts) {
        for &ti in t {
            pts.push(ray.at(ti).into());
            dirs.push(ray.direction.into());
        }
    }
    let (sigma, rgb) = source.query(&pts, &dirs)?;
    let mut offset = 0;
    ts.iter()
        .map(|t| {
            let n = t.len();
            let r = composite(&sigma[offset..offset + n], &rgb[offset..offset + n], t, cfg);
            offset += n;
            r
        })
        .collect()
}

/// Renders a full image from `camera`.
pub fn render_image(
    source: &dyn RadianceSource,
    camera: &Extrinsic,
    k: &Intrinsics,
    cfg: &RenderConfig,
    chunk_size: usize,
    seed: u64,
) -> Result<Image> {
    let rays = camera::generate_rays(camera, k, &k.all_pixels())?;
    let results = render_rays(source, &rays, cfg, chunk_size, seed)?;
    let data = results.iter().flat_map(|r| r.rgb).collect();
    Image::new(k.width, k.height, data)
}

/// Row-major RGB image with `f64` channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(RenderError::Length {
                what: "image data",
                expected: width * height * 3,
                got: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height * 3],
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Rounds every channel to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| to_u8(v) as f64 / 255.0).collect(),
        }
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| RenderError::Image(format!("{}: {e}", parent.display())))?;
        }
        image::save_buffer(
            path,
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ColorType::Rgb8,
        )
        .map_err(|e| RenderError::Image(format!("{}: {e}", path.display())))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| RenderError::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_rgb8(w as usize, h as usize, img.as_raw())
    }

    /// Lossless dump in the binary container format.
    pub fn to_container(&self) -> Container {
        let mut c = Container::new("image", serde_json::json!({}));
        c.push(
            "rgb",
            Tensor::new(vec![self.height, self.width, 3], self.data.clone()).expect("consistent image"),
        );
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("image")?;
        let t = c.get("rgb")?;
        match t.shape() {
            [h, w, 3] => Self::new(*w, *h, t.data().to_vec()),
            s => Err(RenderError::Image(format!("image array has shape {s:?}"))),
        }
    }

    /// Places images side by side.
    pub fn hstack(images: &[Image]) -> Result<Self> {
        let Some(first) = images.first() else {
            return Err(RenderError::Image("nothing to stack".into()));
        };
        let h = first.height;
        if images.iter().any(|i| i.height != h) {
            return Err(RenderError::Image("stacked images differ in height".into()));
        }
        let w: usize = images.iter().map(|i| i.width).sum();
        let mut data = Vec::with_capacity(w * h * 3);
        for row in 0..h {
            for img in images {
                data.extend_from_slice(&img.data[row * img.width * 3..(row + 1) * img.width * 3]);
            }
        }
        Self::new(w, h, data)
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
