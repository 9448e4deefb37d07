//! AdamW, the auto-decoder training loop and test-time inversion of codes
//! and camera pose.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::camera::{self, CameraError, CameraPose, Intrinsics, PoseVars, POLE_MARGIN};
use crate::checkpoint::Checkpoint;
use crate::data::SceneDataset;
use crate::field::FieldError;
use crate::metrics;
use crate::render::{self, CodeRows, Image, RenderConfig, RenderError};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("gradient for {name} has {got} entries, parameter has {expected}")]
    GradientShape { name: String, expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged {
        iteration: u64,
        reason: String,
        /// Model state before the failing update.
        snapshot: Box<Checkpoint>,
    },
    #[error("dataset does not match checkpoint: {0}")]
    DatasetMismatch(String),
    #[error("log write failed: {0}")]
    Log(#[from] std::io::Error),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

pub type Result<T> = std::result::Result<T, OptimError>;

/// First and second moment estimates of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam with decoupled weight decay. The learning rate and decay are
/// supplied per parameter on each step.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub slots: BTreeMap<String, Moments>,
}

impl Default for AdamW {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

/// One parameter taking part in an optimizer step.
pub struct ParamSlot<'a> {
    pub name: &'a str,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
    pub lr: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            slots: BTreeMap::new(),
        }
    }

    /// Applies one update to every slot. Nothing is modified if any
    /// gradient is non-finite or mis-shaped.
    pub fn step(&mut self, params: &mut [ParamSlot<'_>]) -> Result<()> {
        for p in params.iter() {
            if p.grad.len() != p.value.len() {
                return Err(OptimError::GradientShape {
                    name: p.name.to_string(),
                    expected: p.value.len(),
                    got: p.grad.len(),
                });
            }
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(OptimError::NonFiniteGradient(p.name.to_string()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for p in params.iter_mut() {
            let n = p.value.len();
            let slot = self.slots.entry(p.name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            if slot.m.len() != n {
                return Err(OptimError::GradientShape {
                    name: p.name.to_string(),
                    expected: slot.m.len(),
                    got: n,
                });
            }
            for i in 0..n {
                let g = p.grad[i];
                p.value[i] -= p.lr * p.weight_decay * p.value[i];
                slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g;
                slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                p.value[i] -= p.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Constant,
    /// Half-cosine decay from the initial rate to zero.
    Cosine,
}

impl Schedule {
    pub fn factor(self, step: u64, total: u64) -> f64 {
        match self {
            Schedule::Constant => 1.0,
            Schedule::Cosine => {
                let x = (step as f64 / total.max(1) as f64).min(1.0);
                0.5 * (1.0 + (std::f64::consts::PI * x).cos())
            }
        }
    }
}

/// Photometric sum of squares plus the latent prior, on a tape.
pub fn train_loss(tape: &mut Tape, rendered: Var, target: Var, codes: &[Var], nu: f64) -> Result<Var> {
    let (a, b) = (tape.shape(rendered).to_vec(), tape.shape(target).to_vec());
    if a != b {
        return Err(OptimError::Length(format!("rendered {a:?} vs target {b:?}")));
    }
    let diff = tape.sub(rendered, target)?;
    let sq = tape.square(diff);
    let mut loss = tape.sum(sq);
    for &z in codes {
        let zz = tape.square(z);
        let s = tape.sum(zz);
        let r = tape.scale(s, 1.0 / (nu * nu));
        loss = tape.add(loss, r)?;
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub rays_per_batch: usize,
    pub n_samples: usize,
    pub lr_net: f64,
    pub lr_latent: f64,
    pub nu: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            rays_per_batch: 4096,
            n_samples: 64,
            lr_net: 1e-4,
            lr_latent: 1e-3,
            nu: 100.0,
            weight_decay: 1e-2,
            schedule: Schedule::Constant,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_net > 0.0 && self.lr_latent > 0.0 && self.nu > 0.0) {
            return Err(OptimError::InvalidConfig(
                "learning rates and nu must be positive".into(),
            ));
        }
        if self.rays_per_batch == 0 || self.n_samples < 2 {
            return Err(OptimError::InvalidConfig(
                "need rays_per_batch >= 1 and n_samples >= 2".into(),
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(OptimError::InvalidConfig("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: u64,
    pub loss: f64,
    pub photometric: f64,
    pub psnr: f64,
    pub lr_net: f64,
    pub lr_latent: f64,
    pub wall_time: f64,
    /// Mean PSNR over the epoch that ends at this iteration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch_psnr: Option<f64>,
}

/// Every pixel of a dataset as a ray with its target color.
pub struct RayTable {
    pub origins: Vec<[f64; 3]>,
    pub directions: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub objects: Vec<usize>,
}

impl RayTable {
    pub fn from_dataset(ds: &SceneDataset) -> Result<Self> {
        let mut t = RayTable {
            origins: Vec::new(),
            directions: Vec::new(),
            colors: Vec::new(),
            objects: Vec::new(),
        };
        for (oi, obj) in ds.objects.iter().enumerate() {
            for v in &obj.views {
                let rays = camera::generate_rays(&v.camera, &v.intrinsics, &v.intrinsics.all_pixels())?;
                for (i, r) in rays.iter().enumerate() {
                    t.origins.push(r.origin.into());
                    t.directions.push(r.direction.into());
                    t.colors
                        .push([v.image.data[3 * i], v.image.data[3 * i + 1], v.image.data[3 * i + 2]]);
                    t.objects.push(oi);
                }
            }
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

fn flat3(rows: impl Iterator<Item = [f64; 3]>) -> Vec<f64> {
    rows.flatten().collect()
}

/// RNG for training step `step`; resuming reproduces an uninterrupted run.
fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<TrainRecord>,
}

impl TrainOutcome {
    pub fn final_psnr(&self) -> Option<f64> {
        self.records.last().map(|r| r.psnr)
    }
}

/// Jointly optimizes network weights and every object's codes for
/// `cfg.iterations` more steps. One JSON line per step goes to `log`.
pub fn train(
    ds: &SceneDataset,
    model: &mut Checkpoint,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    ds.validate().map_err(|e| OptimError::DatasetMismatch(e.to_string()))?;
    let ids: Vec<&str> = ds.objects.iter().map(|o| o.id.as_str()).collect();
    if ids != model.object_ids.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(OptimError::DatasetMismatch(format!(
            "dataset objects {ids:?} differ from checkpoint objects {:?}",
            model.object_ids
        )));
    }
    let table = RayTable::from_dataset(ds)?;
    let render_cfg = RenderConfig {
        n_samples: cfg.n_samples,
        ..ds.render_config(cfg.n_samples)
    };
    model.render = RenderConfig {
        stratified: false,
        ..render_cfg.clone()
    };
    let mut adam = model.optimizer.take().unwrap_or_default();
    let epoch_len = table.len().div_ceil(cfg.rays_per_batch) as u64;
    let start = Instant::now();
    let end_step = model.step + cfg.iterations;
    let mut records = Vec::with_capacity(cfg.iterations as usize);
    let (mut epoch_sq, mut epoch_rays) = (0.0, 0usize);

    while model.step < end_step {
        let step = model.step;
        let mut rng = step_rng(cfg.seed, step);
        let batch: Vec<usize> = (0..cfg.rays_per_batch).map(|_| rng.gen_range(0..table.len())).collect();
        let ts: Vec<f64> = batch
            .iter()
            .flat_map(|_| render::sample_ts(&render_cfg, &mut rng))
            .collect();

        let mut tape = Tape::new();
        let field = model.field.bind(&mut tape, true);
        let zs = tape.leaf(model.latents.shape.clone());
        let zt = tape.leaf(model.latents.texture.clone());
        let r = batch.len();
        let origins = tape.constant(Tensor::new(vec![r, 3], flat3(batch.iter().map(|&i| table.origins[i])))?);
        let directions = tape.constant(Tensor::new(
            vec![r, 3],
            flat3(batch.iter().map(|&i| table.directions[i])),
        )?);
        let target = tape.constant(Tensor::new(vec![r, 3], flat3(batch.iter().map(|&i| table.colors[i])))?);
        let rays = camera::RayVars {
            origin: origins,
            directions,
        };
        let codes = CodeRows {
            shape: zs,
            texture: zt,
            rows: batch.iter().map(|&i| table.objects[i]).collect(),
        };
        let out = render::render_vars(&mut tape, &field, &rays, &ts, &codes, &render_cfg)?;
        let diff = tape.sub(out.rgb, target)?;
        let sq = tape.square(diff);
        let photo_var = tape.sum(sq);
        let loss_var = train_loss(&mut tape, out.rgb, target, &[zs, zt], cfg.nu)?;
        let loss = tape.value(loss_var).item();
        let photometric = tape.value(photo_var).item();

        let diverged = |reason: String, model: &Checkpoint, adam: &AdamW| {
            let mut snapshot = model.clone();
            snapshot.optimizer = Some(adam.clone());
            OptimError::Diverged {
                iteration: step + 1,
                reason,
                snapshot: Box::new(snapshot),
            }
        };
        if !loss.is_finite() {
            return Err(diverged(format!("loss is {loss}"), model, &adam));
        }
        let mut grads = tape.backward(loss_var)?;
        let factor = cfg.schedule.factor(step, end_step);
        let (lr_net, lr_latent) = (cfg.lr_net * factor, cfg.lr_latent * factor);
        let field_vars = field.vars();
        let field_grads: Vec<Tensor> = field_vars.iter().map(|&v| grads.take(v).unwrap()).collect();
        let gs = grads.take(zs).unwrap();
        let gt = grads.take(zt).unwrap();
        let stepped = {
            let mut named = model.field.tensors_mut();
            let mut slots: Vec<ParamSlot> = Vec::with_capacity(named.len() + 2);
            for ((name, value), g) in named.iter_mut().zip(&field_grads) {
                slots.push(ParamSlot {
                    name: name.as_str(),
                    value: value.data_mut(),
                    grad: g.data(),
                    lr: lr_net,
                    weight_decay: cfg.weight_decay,
                });
            }
            let latents = &mut model.latents;
            slots.push(ParamSlot {
                name: "latent.shape",
                value: latents.shape.data_mut(),
                grad: gs.data(),
                lr: lr_latent,
                weight_decay: 0.0,
            });
            slots.push(ParamSlot {
                name: "latent.texture",
                value: latents.texture.data_mut(),
                grad: gt.data(),
                lr: lr_latent,
                weight_decay: 0.0,
            });
            adam.step(&mut slots)
        };
        if let Err(e) = stepped {
            return Err(diverged(e.to_string(), model, &adam));
        }
        model.step += 1;

        epoch_sq += photometric;
        epoch_rays += r;
        let epoch_psnr = model.step.is_multiple_of(epoch_len).then(|| {
            let p = metrics::mse_to_psnr(epoch_sq / (3 * epoch_rays) as f64);
            epoch_sq = 0.0;
            epoch_rays = 0;
            p
        });
        let record = TrainRecord {
            iteration: model.step,
            loss,
            photometric,
            psnr: metrics::mse_to_psnr(photometric / (3 * r) as f64),
            lr_net,
            lr_latent,
            wall_time: start.elapsed().as_secs_f64(),
            epoch_psnr,
        };
        if let Some(w) = log.as_deref_mut() {
            serde_json::to_writer(&mut *w, &record).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        records.push(record);
    }
    model.optimizer = Some(adam);
    Ok(TrainOutcome { records })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferConfig {
    pub iterations: usize,
    pub lr_code: f64,
    pub lr_phi: f64,
    pub lr_theta: f64,
    pub lr_rho: f64,
    pub nu: f64,
    pub optimize_pose: bool,
    pub schedule: Schedule,
    /// Iterations at which to keep a render of the current estimate.
    pub snapshots: Vec<usize>,
    /// Divergence rule: stop once the loss stays above
    /// `divergence_factor` times the initial loss for `divergence_patience`
    /// consecutive iterations.
    pub divergence_factor: f64,
    pub divergence_patience: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            iterations: 299,
            lr_code: 1e-2,
            lr_phi: 1e-1,
            lr_theta: 1e-1,
            lr_rho: 1e-2,
            nu: 100.0,
            optimize_pose: true,
            schedule: Schedule::Constant,
            snapshots: Vec::new(),
            divergence_factor: 10.0,
            divergence_patience: 50,
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(OptimError::InvalidConfig("iterations must be >= 1".into()));
        }
        let rates = [self.lr_code, self.lr_phi, self.lr_theta, self.lr_rho, self.nu];
        if rates.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(OptimError::InvalidConfig(
                "learning rates must be >= 0 and nu > 0".into(),
            ));
        }
        if !(self.nu > 0.0) {
            return Err(OptimError::InvalidConfig("nu must be positive".into()));
        }
        Ok(())
    }
}

/// One observed image with its intrinsics and the pose to start from.
#[derive(Debug, Clone)]
pub struct Observation {
    pub image: Image,
    pub intrinsics: Intrinsics,
    pub init_pose: CameraPose,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub iteration: usize,
    pub renders: Vec<Image>,
}

#[derive(Debug, Clone)]
pub struct InversionResult {
    pub shape_code: Vec<f64>,
    pub texture_code: Vec<f64>,
    /// Final per-view poses, azimuth wrapped to `[0, 2pi)`.
    pub poses: Vec<CameraPose>,
    /// Objective at the start of each iteration and after the last one.
    pub losses: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub diverged: bool,
}

impl InversionResult {
    /// Running minimum of the loss trace.
    pub fn smoothed_losses(&self) -> Vec<f64> {
        self.losses
            .iter()
            .scan(f64::INFINITY, |best, &l| {
                *best = best.min(l);
                Some(*best)
            })
            .collect()
    }
}

struct PoseState {
    phi: f64,
    theta: f64,
    log_rho: f64,
}

fn clamp_theta(theta: f64) -> f64 {
    let lim = std::f64::consts::FRAC_PI_2 - POLE_MARGIN;
    theta.clamp(-lim, lim)
}

/// Objective value, per-view renders and gradients at the current state.
struct Evaluation {
    loss: f64,
    renders: Vec<Vec<f64>>,
    grad_zs: Vec<f64>,
    grad_zt: Vec<f64>,
    grad_pose: Vec<[f64; 3]>,
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    model: &Checkpoint,
    obs: &[Observation],
    poses: &[PoseState],
    zs: &[f64],
    zt: &[f64],
    cfg: &InferConfig,
    render_cfg: &RenderConfig,
    need_grad: bool,
) -> Result<Evaluation> {
    let dim = zs.len();
    let mut tape = Tape::new();
    let field = model.field.bind(&mut tape, false);
    let zs_var = tape.leaf(Tensor::new(vec![1, dim], zs.to_vec())?);
    let zt_var = tape.leaf(Tensor::new(vec![1, dim], zt.to_vec())?);
    let mut pose_vars = Vec::with_capacity(poses.len());
    let mut render_vars = Vec::with_capacity(poses.len());
    let mut total: Option<Var> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (o, p) in obs.iter().zip(poses) {
        let mk = |tape: &mut Tape, v: f64| {
            if cfg.optimize_pose {
                tape.leaf(Tensor::scalar(v))
            } else {
                tape.constant(Tensor::scalar(v))
            }
        };
        let phi = mk(&mut tape, p.phi);
        let theta = mk(&mut tape, p.theta);
        let log_rho = mk(&mut tape, p.log_rho);
        let rho = tape.exp(log_rho);
        let pv = PoseVars { phi, theta, rho };
        let k = &o.intrinsics;
        let pixels = k.all_pixels();
        let rays = camera::generate_rays_vars(&mut tape, &pv, k, &pixels)?;
        let ts: Vec<f64> = pixels
            .iter()
            .flat_map(|_| render::sample_ts(render_cfg, &mut rng))
            .collect();
        let codes = CodeRows {
            shape: zs_var,
            texture: zt_var,
            rows: vec![0; pixels.len()],
        };
        let out = render::render_vars(&mut tape, &field, &rays, &ts, &codes, render_cfg)?;
        let target = tape.constant(Tensor::new(vec![pixels.len(), 3], o.image.data.clone())?);
        let diff = tape.sub(out.rgb, target)?;
        let sq = tape.square(diff);
        let photo = tape.sum(sq);
        total = Some(match total {
            None => photo,
            Some(t) => tape.add(t, photo)?,
        });
        pose_vars.push((phi, theta, log_rho));
        render_vars.push(out.rgb);
    }
    let mut loss_var = total.expect("at least one observation");
    for z in [zs_var, zt_var] {
        let zz = tape.square(z);
        let s = tape.sum(zz);
        let r = tape.scale(s, 1.0 / (cfg.nu * cfg.nu));
        loss_var = tape.add(loss_var, r)?;
    }
    let loss = tape.value(loss_var).item();
    let renders = render_vars.iter().map(|&v| tape.value(v).data().to_vec()).collect();
    if !need_grad {
        return Ok(Evaluation {
            loss,
            renders,
            grad_zs: Vec::new(),
            grad_zt: Vec::new(),
            grad_pose: Vec::new(),
        });
    }
    let mut g = tape.backward(loss_var)?;
    let grad_pose = pose_vars
        .iter()
        .map(|&(a, b, c)| {
            let get = |g: &mut crate::autodiff::Gradients, v| g.take(v).map_or(0.0, |t| t.item());
            [get(&mut g, a), get(&mut g, b), get(&mut g, c)]
        })
        .collect();
    Ok(Evaluation {
        loss,
        renders,
        grad_zs: g.take(zs_var).unwrap().into_data(),
        grad_zt: g.take(zt_var).unwrap().into_data(),
        grad_pose,
    })
}

/// Fits shape and texture codes (and, unless disabled, one pose per view)
/// to the observations with the network held fixed. Codes start from
/// `init_codes`, or from the mean of the trained codes.
pub fn invert(
    model: &Checkpoint,
    obs: &[Observation],
    init_codes: Option<(Vec<f64>, Vec<f64>)>,
    cfg: &InferConfig,
) -> Result<InversionResult> {
    cfg.validate()?;
    if obs.is_empty() {
        return Err(OptimError::Length("no observations".into()));
    }
    for o in obs {
        o.init_pose.validate()?;
        if (o.image.width, o.image.height) != (o.intrinsics.width, o.intrinsics.height) {
            return Err(OptimError::Length(format!(
                "image is {}x{} but intrinsics are {}x{}",
                o.image.width, o.image.height, o.intrinsics.width, o.intrinsics.height
            )));
        }
    }
    let dim = model.field.config.latent_dim;
    let (mut zs, mut zt) = init_codes.unwrap_or_else(|| model.latents.mean_codes());
    if zs.len() != dim || zt.len() != dim {
        return Err(OptimError::Length(format!("codes must have dimension {dim}")));
    }
    let render_cfg = RenderConfig {
        stratified: false,
        ..model.render.clone()
    };
    let mut poses: Vec<PoseState> = obs
        .iter()
        .map(|o| PoseState {
            phi: o.init_pose.phi,
            theta: clamp_theta(o.init_pose.theta),
            log_rho: o.init_pose.rho.ln(),
        })
        .collect();
    let names: Vec<[String; 3]> = (0..obs.len())
        .map(|i| {
            [
                format!("pose.{i}.phi"),
                format!("pose.{i}.theta"),
                format!("pose.{i}.log_rho"),
            ]
        })
        .collect();
    let mut adam = AdamW::default();
    let mut losses = Vec::with_capacity(cfg.iterations + 1);
    let mut snapshots = Vec::new();
    let mut diverged = false;
    let mut above = 0;
    let to_images = |renders: &[Vec<f64>]| {
        renders
            .iter()
            .zip(obs)
            .map(|(r, o)| {
                Image::new(
                    o.intrinsics.width,
                    o.intrinsics.height,
                    r.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
                )
            })
            .collect::<render::Result<Vec<_>>>()
    };

    let mut it = 0;
    loop {
        let last = it == cfg.iterations || diverged;
        let ev = evaluate(model, obs, &poses, &zs, &zt, cfg, &render_cfg, !last)?;
        if !ev.loss.is_finite() {
            diverged = true;
            losses.push(ev.loss);
            break;
        }
        losses.push(ev.loss);
        if cfg.snapshots.contains(&it) || last {
            snapshots.push(Snapshot {
                iteration: it,
                renders: to_images(&ev.renders)?,
            });
        }
        if last {
            break;
        }
        if ev.loss > cfg.divergence_factor * losses[0] {
            above += 1;
            if above >= cfg.divergence_patience {
                diverged = true;
                continue;
            }
        } else {
            above = 0;
        }
        let f = cfg.schedule.factor(it as u64, cfg.iterations as u64);
        let mut pose_vals: Vec<[f64; 3]> = poses.iter().map(|p| [p.phi, p.theta, p.log_rho]).collect();
        {
            let mut slots = vec![
                ParamSlot {
                    name: "code.shape",
                    value: &mut zs,
                    grad: &ev.grad_zs,
                    lr: cfg.lr_code * f,
                    weight_decay: 0.0,
                },
                ParamSlot {
                    name: "code.texture",
                    value: &mut zt,
                    grad: &ev.grad_zt,
                    lr: cfg.lr_code * f,
                    weight_decay: 0.0,
                },
            ];
            if cfg.optimize_pose {
                let lrs = [cfg.lr_phi, cfg.lr_theta, cfg.lr_rho];
                for ((vals, grads), names) in pose_vals.iter_mut().zip(&ev.grad_pose).zip(&names) {
                    for (j, (v, g)) in vals.iter_mut().zip(grads).enumerate() {
                        slots.push(ParamSlot {
                            name: &names[j],
                            value: std::slice::from_mut(v),
                            grad: std::slice::from_ref(g),
                            lr: lrs[j] * f,
                            weight_decay: 0.0,
                        });
                    }
                }
            }
            adam.step(&mut slots)?;
        }
        for (p, v) in poses.iter_mut().zip(&pose_vals) {
            p.phi = v[0];
            p.theta = clamp_theta(v[1]);
            p.log_rho = v[2];
        }
        it += 1;
    }
    let poses = poses
        .iter()
        .map(|p| {
            CameraPose {
                phi: p.phi,
                theta: p.theta,
                rho: p.log_rho.exp(),
            }
            .canonical()
        })
        .collect();
    Ok(InversionResult {
        shape_code: zs,
        texture_code: zt,
        poses,
        losses,
        snapshots,
        diverged,
    })
}

/// `(1 - alpha) a + alpha b`.
pub fn interpolate_codes(a: &[f64], b: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(OptimError::Length(format!(
            "codes of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(OptimError::InvalidConfig(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (1.0 - alpha) * x + alpha * y).collect())
}
