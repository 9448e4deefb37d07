//! Synthetic superellipsoid scenes with an analytic renderer, and posed
//! image datasets in the SRN directory layout.
//!
//! Layout, one folder per object:
//!
//! ```text
//! <root>/dataset.json              metadata sidecar
//! <root>/<id>/intrinsics.txt       "f cx cy 0." / "0. 0. 0." / "1." / "H W"
//! <root>/<id>/rgb/000000.png
//! <root>/<id>/pose/000000.txt      16 floats, row-major camera-to-world
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, CameraPose, Extrinsic, Intrinsics};
use crate::render::{self, Image, RadianceSource, RenderConfig, RenderError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset parameters: {0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("object {object}: {count_a} {what_a} but {count_b} {what_b}")]
    CountMismatch {
        object: String,
        what_a: &'static str,
        count_a: usize,
        what_b: &'static str,
        count_b: usize,
    },
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("bad pose in {path}: {source}")]
    Pose {
        path: String,
        #[source]
        source: CameraError,
    },
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

pub type Result<T> = std::result::Result<T, DataError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Axis-aligned superellipsoid with a smooth density profile. Color is a
/// base albedo plus a linear ramp per channel: red along x, green along y,
/// blue along z. The ramps make every view direction look different.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticObject {
    pub radii: [f64; 3],
    /// Norm exponent; 2 is an ellipsoid, larger values are boxier.
    pub exponent: f64,
    pub density_scale: f64,
    /// Steepness of the interior indicator.
    pub sharpness: f64,
    pub base_color: [f64; 3],
    /// Color change from the center to the surface along each ramp axis.
    pub gradient: f64,
}

impl SyntheticObject {
    pub fn sphere(radius: f64, density_scale: f64, color: [f64; 3]) -> Self {
        Self {
            radii: [radius; 3],
            exponent: 2.0,
            density_scale,
            sharpness: 12.0,
            base_color: color,
            gradient: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.radii.iter().any(|&r| !(r > 0.0)) {
            return Err(DataError::Invalid(format!("radii must be positive: {:?}", self.radii)));
        }
        if !(self.exponent >= 1.0 && self.density_scale > 0.0 && self.sharpness > 0.0) {
            return Err(DataError::Invalid(
                "exponent >= 1, density and sharpness > 0 required".into(),
            ));
        }
        if self.base_color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(DataError::Invalid(format!(
                "albedo outside [0,1]: {:?}",
                self.base_color
            )));
        }
        Ok(())
    }

    /// Superellipsoid norm: 1 on the surface, 0 at the center.
    pub fn level(&self, x: &[f64; 3]) -> f64 {
        let p = self.exponent;
        let s: f64 = (0..3).map(|i| (x[i] / self.radii[i]).abs().powf(p)).sum();
        s.powf(1.0 / p)
    }

    pub fn bounding_radius(&self) -> f64 {
        self.radii.iter().copied().fold(0.0, f64::max)
    }

    /// Density and color at `x`. Color does not depend on the direction.
    pub fn density_color(&self, x: &[f64; 3], _d: &[f64; 3]) -> (f64, [f64; 3]) {
        let k = self.sharpness;
        let f = self.level(x);
        let sigma = self.density_scale * sigmoid(k * (1.0 - f)) / sigmoid(k);
        let mut c = [0.0; 3];
        for i in 0..3 {
            let h = (x[i] / self.radii[i]).clamp(-1.0, 1.0);
            c[i] = (self.base_color[i] + self.gradient * h).clamp(0.0, 1.0);
        }
        (sigma, c)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn oracle_density_color(obj: &SyntheticObject, x: &[f64; 3], d: &[f64; 3]) -> (f64, [f64; 3]) {
    obj.density_color(x, d)
}

impl RadianceSource for SyntheticObject {
    fn query(&self, points: &[[f64; 3]], dirs: &[[f64; 3]]) -> render::Result<(Vec<f64>, Vec<[f64; 3]>)> {
        Ok(points.iter().zip(dirs).map(|(x, d)| self.density_color(x, d)).unzip())
    }
}

/// Parameters of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_objects: usize,
    /// Index of the first object; objects are drawn per index, so an
    /// offset past the training range gives unseen objects.
    pub first_object: usize,
    pub n_views: usize,
    pub image_size: usize,
    pub seed: u64,
    pub rho: f64,
    /// Focal length as a multiple of the image width.
    pub focal_factor: f64,
    pub theta_min_deg: f64,
    pub theta_max_deg: f64,
    pub density_scale: f64,
    pub oracle_samples: usize,
    pub white_background: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_objects: 4,
            first_object: 0,
            n_views: 20,
            image_size: 16,
            seed: 0,
            rho: 3.5,
            focal_factor: 1.3,
            theta_min_deg: 5.0,
            theta_max_deg: 45.0,
            density_scale: 15.0,
            oracle_samples: 512,
            white_background: false,
        }
    }
}

/// Which family of views to draw for each object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stream_tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
        }
    }
}

/// Largest radius an object can be drawn with.
pub const MAX_RADIUS: f64 = 0.85;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_objects == 0 || self.n_views == 0 || self.image_size == 0 {
            return Err(DataError::Invalid(format!(
                "objects, views and size must all be >= 1 (got {}, {}, {})",
                self.n_objects, self.n_views, self.image_size
            )));
        }
        if self.oracle_samples < 256 {
            return Err(DataError::Invalid("oracle needs at least 256 samples per ray".into()));
        }
        if !(self.rho > 1.5 * MAX_RADIUS) {
            return Err(DataError::Invalid("camera distance must clear the scene bounds".into()));
        }
        if !(self.theta_min_deg <= self.theta_max_deg && self.theta_max_deg < 90.0 && self.theta_min_deg > -90.0) {
            return Err(DataError::Invalid(
                "elevation range must lie inside (-90, 90) degrees".into(),
            ));
        }
        Ok(())
    }

    fn rng(&self, tag: u64, object: usize, view: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((tag << 56) | ((object as u64) << 24) | view as u64);
        rng
    }

    pub fn object(&self, index: usize) -> SyntheticObject {
        let mut rng = self.rng(0, index, 0);
        // One object class: x is always the long axis and the proportions
        // vary only a little, so silhouette and size pin orientation and
        // distance the way a category prior does.
        let radii = [
            MAX_RADIUS,
            MAX_RADIUS * rng.gen_range(0.53..0.57),
            MAX_RADIUS * rng.gen_range(0.38..0.42),
        ];
        let exponent = rng.gen_range(2.0..3.0);
        let mut base_color = [0.0; 3];
        for c in &mut base_color {
            *c = rng.gen_range(0.3..0.7);
        }
        let gradient = rng.gen_range(0.3..0.45);
        SyntheticObject {
            radii,
            exponent,
            density_scale: self.density_scale,
            sharpness: 12.0,
            base_color,
            gradient,
        }
    }

    pub fn view_pose(&self, split: Split, object: usize, view: usize) -> CameraPose {
        let mut rng = self.rng(split.stream_tag(), object, view);
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        let theta = rng.gen_range(self.theta_min_deg..=self.theta_max_deg).to_radians();
        CameraPose {
            phi,
            theta,
            rho: self.rho,
        }
    }

    pub fn intrinsics(&self) -> Intrinsics {
        let s = self.image_size;
        Intrinsics::centered(self.focal_factor * s as f64, s, s).expect("positive size")
    }

    pub fn scene_radius(&self) -> f64 {
        MAX_RADIUS
    }

    pub fn near_far(&self) -> (f64, f64) {
        (
            self.rho - 1.5 * self.scene_radius(),
            self.rho + 1.5 * self.scene_radius(),
        )
    }

    pub fn oracle_config(&self) -> RenderConfig {
        let (near, far) = self.near_far();
        RenderConfig {
            n_samples: self.oracle_samples,
            near,
            far,
            stratified: false,
            white_background: self.white_background,
            importance_samples: 0,
        }
    }
}

/// One posed image.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub image: Image,
    pub camera: Extrinsic,
    pub intrinsics: Intrinsics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectViews {
    pub id: String,
    pub views: Vec<View>,
}

/// Sidecar metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub split: Split,
    pub scene_radius: f64,
    pub rho: f64,
    pub near: f64,
    pub far: f64,
    pub white_background: bool,
    /// Generator parameters and ground-truth objects, when synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objects: Vec<SyntheticObject>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    pub objects: Vec<ObjectViews>,
    pub meta: DatasetMeta,
}

impl SceneDataset {
    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        let mut dims = None;
        for obj in &self.objects {
            if !ids.insert(obj.id.as_str()) {
                return Err(DataError::Invalid(format!("duplicate object id {}", obj.id)));
            }
            if obj.views.is_empty() {
                return Err(DataError::Invalid(format!("object {} has no views", obj.id)));
            }
            for v in &obj.views {
                let d = (v.image.width, v.image.height);
                if *dims.get_or_insert(d) != d {
                    return Err(DataError::Invalid(format!("object {} has mixed image sizes", obj.id)));
                }
                if (v.intrinsics.width, v.intrinsics.height) != d {
                    return Err(DataError::Invalid(format!(
                        "object {}: intrinsics disagree with image size",
                        obj.id
                    )));
                }
            }
        }
        if self.objects.is_empty() {
            return Err(DataError::Invalid("dataset has no objects".into()));
        }
        Ok(())
    }

    pub fn render_config(&self, n_samples: usize) -> RenderConfig {
        RenderConfig {
            n_samples,
            near: self.meta.near,
            far: self.meta.far,
            stratified: true,
            white_background: self.meta.white_background,
            importance_samples: 0,
        }
    }

    pub fn total_views(&self) -> usize {
        self.objects.iter().map(|o| o.views.len()).sum()
    }
}

pub fn object_id(index: usize) -> String {
    format!("obj_{index:04}")
}

/// Renders the views of `spec` for `split` with the analytic oracle.
pub fn generate_dataset(spec: &SyntheticSpec, split: Split) -> Result<SceneDataset> {
    spec.validate()?;
    let k = spec.intrinsics();
    let cfg = spec.oracle_config();
    let indices: Vec<usize> = (spec.first_object..spec.first_object + spec.n_objects).collect();
    let truth: Vec<SyntheticObject> = indices.iter().map(|&i| spec.object(i)).collect();
    let objects = indices
        .iter()
        .zip(&truth)
        .map(|(&index, obj)| {
            let views = (0..spec.n_views)
                .into_par_iter()
                .map(|v| {
                    let camera = Extrinsic::from(spec.view_pose(split, index, v));
                    let image = render::render_image(obj, &camera, &k, &cfg, 4096, 0)?;
                    Ok(View {
                        image,
                        camera,
                        intrinsics: k,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ObjectViews {
                id: object_id(index),
                views,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (near, far) = spec.near_far();
    Ok(SceneDataset {
        objects,
        meta: DatasetMeta {
            split,
            scene_radius: spec.scene_radius(),
            rho: spec.rho,
            near,
            far,
            white_background: spec.white_background,
            synthetic: Some(spec.clone()),
            objects: truth,
        },
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Shortest text that parses back to the same `f64`.
fn fmt_f64(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.")
    }
}

/// Writes `ds` in the SRN layout under `root`.
pub fn export_srn(ds: &SceneDataset, root: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(root).map_err(io_err(root))?;
    for obj in &ds.objects {
        let dir = root.join(&obj.id);
        for sub in ["rgb", "pose"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let k = &obj.views[0].intrinsics;
        let intr = format!(
            "{} {} {} 0.\n0. 0. 0.\n1.\n{} {}\n",
            fmt_f64(k.fx),
            fmt_f64(k.cx),
            fmt_f64(k.cy),
            k.height,
            k.width
        );
        write_file(&dir.join("intrinsics.txt"), intr.as_bytes())?;
        for (i, v) in obj.views.iter().enumerate() {
            v.image.save_png(&dir.join("rgb").join(format!("{i:06}.png")))?;
            let rows = v.camera.to_rows();
            let text = rows.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" ");
            write_file(
                &dir.join("pose").join(format!("{i:06}.txt")),
                format!("{text}\n").as_bytes(),
            )?;
        }
    }
    let meta = serde_json::to_vec_pretty(&ds.meta).expect("metadata serializes");
    write_file(&root.join("dataset.json"), &meta)
}

fn sorted_entries(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    out.sort();
    Ok(out)
}

fn parse_floats(path: &Path, text: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|e| DataError::Parse {
                path: path.display().to_string(),
                msg: format!("{t:?}: {e}"),
            })
        })
        .collect()
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn load_intrinsics(path: &Path) -> Result<Intrinsics> {
    let v = parse_floats(path, &read_text(path)?)?;
    if v.len() < 9 {
        return Err(DataError::Parse {
            path: path.display().to_string(),
            msg: format!("expected at least 9 numbers, found {}", v.len()),
        });
    }
    let (f, cx, cy) = (v[0], v[1], v[2]);
    let (h, w) = (v[v.len() - 2], v[v.len() - 1]);
    if h.fract() != 0.0 || w.fract() != 0.0 || h < 1.0 || w < 1.0 {
        return Err(DataError::Parse {
            path: path.display().to_string(),
            msg: format!("image size {h} x {w} is not a pair of positive integers"),
        });
    }
    Ok(Intrinsics::new(f, f, cx, cy, w as usize, h as usize)?)
}

fn load_pose(path: &Path) -> Result<Extrinsic> {
    let v = parse_floats(path, &read_text(path)?)?;
    let rows: [f64; 16] = v.as_slice().try_into().map_err(|_| DataError::Parse {
        path: path.display().to_string(),
        msg: format!("expected 16 numbers, found {}", v.len()),
    })?;
    Extrinsic::from_rows(&rows).map_err(|source| DataError::Pose {
        path: path.display().to_string(),
        source,
    })
}

/// Reads an SRN-style directory. Without a `dataset.json` sidecar the
/// near/far bounds are derived from the mean camera distance.
pub fn load_srn_dataset(root: &Path) -> Result<SceneDataset> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut objects = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let id = dir.file_name().unwrap().to_string_lossy().into_owned();
        let k = load_intrinsics(&dir.join("intrinsics.txt"))?;
        let images = sorted_entries(&dir.join("rgb"), "png")?;
        let poses = sorted_entries(&dir.join("pose"), "txt")?;
        if images.len() != poses.len() {
            return Err(DataError::CountMismatch {
                object: id,
                what_a: "images",
                count_a: images.len(),
                what_b: "poses",
                count_b: poses.len(),
            });
        }
        let mut views = Vec::with_capacity(images.len());
        for (img, pose) in images.iter().zip(&poses) {
            let image = Image::load_png(img)?;
            if (image.width, image.height) != (k.width, k.height) {
                return Err(DataError::Invalid(format!(
                    "{}: image is {}x{}, intrinsics say {}x{}",
                    img.display(),
                    image.width,
                    image.height,
                    k.width,
                    k.height
                )));
            }
            views.push(View {
                image,
                camera: load_pose(pose)?,
                intrinsics: k,
            });
        }
        objects.push(ObjectViews { id, views });
    }
    let sidecar = root.join("dataset.json");
    let meta = if sidecar.exists() {
        serde_json::from_str(&read_text(&sidecar)?).map_err(|e| DataError::Parse {
            path: sidecar.display().to_string(),
            msg: e.to_string(),
        })?
    } else {
        let centers: Vec<f64> = objects
            .iter()
            .flat_map(|o| o.views.iter().map(|v| v.camera.center.norm()))
            .collect();
        let rho = centers.iter().sum::<f64>() / centers.len().max(1) as f64;
        let scene_radius = rho / 3.0;
        DatasetMeta {
            split: Split::Train,
            scene_radius,
            rho,
            near: rho - 1.5 * scene_radius,
            far: rho + 1.5 * scene_radius,
            white_background: true,
            synthetic: None,
            objects: Vec::new(),
        }
    };
    let ds = SceneDataset { objects, meta };
    ds.validate()?;
    Ok(ds)
}
