//! Conditional radiance field with separate shape and texture codes.
//!
//! The network is split in two stages. The shape stage maps the encoded
//! position and the shape code to a density and a feature vector; the
//! texture stage maps that feature, the encoded view direction and the
//! texture code to a color. In the default wiring the density therefore
//! cannot depend on the texture code. Two ablation wirings (`m1`, `m2`)
//! feed extra inputs into the shape stage and lose that guarantee.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("unknown conditioning variant {0:?} (expected disentangled, m1 or m2)")]
    UnknownVariant(String),
    #[error("invalid field config: {0}")]
    InvalidConfig(String),
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, FieldError>;

/// How codes and encodings are routed into the two stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Density sees only position and shape code.
    #[default]
    Disentangled,
    /// Encoded view direction also enters the shape stage.
    M1,
    /// Both codes enter the shape stage (a single joint embedding).
    M2,
}

impl FromStr for Variant {
    type Err = FieldError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "disentangled" => Ok(Self::Disentangled),
            "m1" => Ok(Self::M1),
            "m2" => Ok(Self::M2),
            _ => Err(FieldError::UnknownVariant(s.to_string())),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Disentangled => "disentangled",
            Self::M1 => "m1",
            Self::M2 => "m2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldInput {
    EncodedPosition,
    EncodedDirection,
    ShapeCode,
    TextureCode,
    Feature,
}

/// Concatenation order of the first-layer inputs of each stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Wiring {
    pub shape_stage: Vec<FieldInput>,
    pub texture_stage: Vec<FieldInput>,
}

pub fn conditioning_modes(variant: Variant) -> Wiring {
    use FieldInput::*;
    let shape_stage = match variant {
        Variant::Disentangled => vec![EncodedPosition, ShapeCode],
        Variant::M1 => vec![EncodedPosition, EncodedDirection, ShapeCode],
        Variant::M2 => vec![EncodedPosition, ShapeCode, TextureCode],
    };
    Wiring {
        shape_stage,
        texture_stage: vec![Feature, EncodedDirection, TextureCode],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    /// Frequencies of the position encoding.
    pub pos_freqs: usize,
    /// Frequencies of the direction encoding.
    pub dir_freqs: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub shape_layers: usize,
    pub texture_layers: usize,
    pub variant: Variant,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            pos_freqs: 10,
            dir_freqs: 4,
            latent_dim: 8,
            hidden_dim: 64,
            feature_dim: 64,
            shape_layers: 4,
            texture_layers: 2,
            variant: Variant::Disentangled,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FieldError::InvalidConfig(m.to_string()));
        if self.pos_freqs < 1 {
            return bad("pos_freqs must be >= 1");
        }
        if self.latent_dim == 0 || self.hidden_dim == 0 || self.feature_dim == 0 {
            return bad("latent_dim, hidden_dim and feature_dim must be positive");
        }
        if self.shape_layers == 0 || self.texture_layers == 0 {
            return bad("each stage needs at least one hidden layer");
        }
        Ok(())
    }

    pub fn pos_dim(&self) -> usize {
        encoding_dim(self.pos_freqs)
    }

    pub fn dir_dim(&self) -> usize {
        encoding_dim(self.dir_freqs)
    }

    fn input_dim(&self, inputs: &[FieldInput]) -> usize {
        inputs
            .iter()
            .map(|i| match i {
                FieldInput::EncodedPosition => self.pos_dim(),
                FieldInput::EncodedDirection => self.dir_dim(),
                FieldInput::ShapeCode | FieldInput::TextureCode => self.latent_dim,
                FieldInput::Feature => self.feature_dim,
            })
            .sum()
    }

    pub fn wiring(&self) -> Wiring {
        conditioning_modes(self.variant)
    }
}

pub fn encoding_dim(freqs: usize) -> usize {
    3 + 6 * freqs
}

/// `(p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^{L-1} pi p), cos(2^{L-1} pi p))`.
pub fn positional_encoding(p: &[f64; 3], freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoding_dim(freqs));
    out.extend_from_slice(p);
    for k in 0..freqs {
        let w = std::f64::consts::PI * (1u64 << k) as f64;
        out.extend(p.iter().map(|v| (w * v).sin()));
        out.extend(p.iter().map(|v| (w * v).cos()));
    }
    out
}

/// Positional encoding of `[n, 3]` points on a tape, `[n, 3 + 6L]`.
pub fn encode_vars(tape: &mut Tape, p: Var, freqs: usize) -> Result<Var> {
    let mut parts = Vec::with_capacity(1 + 2 * freqs);
    parts.push(p);
    for k in 0..freqs {
        let scaled = tape.scale(p, std::f64::consts::PI * (1u64 << k) as f64);
        parts.push(tape.sin(scaled));
        parts.push(tape.cos(scaled));
    }
    if parts.len() == 1 {
        return Ok(p);
    }
    Ok(tape.concat(&parts, 1)?)
}

/// Dense layer `y = x W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut sample = |n: usize| (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        let weight = Tensor::new(vec![fan_in, fan_out], sample(fan_in * fan_out)).unwrap();
        let bias = Tensor::new(vec![1, fan_out], sample(fan_out)).unwrap();
        Self { weight, bias }
    }

    pub fn zeroed(&mut self) {
        self.weight.data_mut().fill(0.0);
        self.bias.data_mut().fill(0.0);
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Network weights of both stages.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    pub config: FieldConfig,
    pub shape_layers: Vec<Linear>,
    /// Hidden -> (1 density logit + feature).
    pub shape_head: Linear,
    pub texture_layers: Vec<Linear>,
    /// Hidden -> 3 color logits.
    pub color_head: Linear,
}

impl FieldParams {
    pub fn init(config: &FieldConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let wiring = config.wiring();
        let h = config.hidden_dim;
        let mut shape_layers = vec![Linear::init(config.input_dim(&wiring.shape_stage), h, rng)];
        for _ in 1..config.shape_layers {
            shape_layers.push(Linear::init(h, h, rng));
        }
        let shape_head = Linear::init(h, 1 + config.feature_dim, rng);
        let mut texture_layers = vec![Linear::init(config.input_dim(&wiring.texture_stage), h, rng)];
        for _ in 1..config.texture_layers {
            texture_layers.push(Linear::init(h, h, rng));
        }
        let color_head = Linear::init(h, 3, rng);
        Ok(Self {
            config: config.clone(),
            shape_layers,
            shape_head,
            texture_layers,
            color_head,
        })
    }

    fn layers(&self) -> Vec<(String, &Linear)> {
        let mut out = Vec::new();
        for (i, l) in self.shape_layers.iter().enumerate() {
            out.push((format!("shape.{i}"), l));
        }
        out.push(("shape_head".into(), &self.shape_head));
        for (i, l) in self.texture_layers.iter().enumerate() {
            out.push((format!("texture.{i}"), l));
        }
        out.push(("color_head".into(), &self.color_head));
        out
    }

    /// Every weight and bias in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        self.layers()
            .into_iter()
            .flat_map(|(name, l)| [(format!("{name}.weight"), &l.weight), (format!("{name}.bias"), &l.bias)])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        fn push<'a>(out: &mut Vec<(String, &'a mut Tensor)>, name: String, l: &'a mut Linear) {
            out.push((format!("{name}.weight"), &mut l.weight));
            out.push((format!("{name}.bias"), &mut l.bias));
        }
        let mut out = Vec::new();
        for (i, l) in self.shape_layers.iter_mut().enumerate() {
            push(&mut out, format!("shape.{i}"), l);
        }
        push(&mut out, "shape_head".into(), &mut self.shape_head);
        for (i, l) in self.texture_layers.iter_mut().enumerate() {
            push(&mut out, format!("texture.{i}"), l);
        }
        push(&mut out, "color_head".into(), &mut self.color_head);
        out
    }

    /// Places the weights on a tape, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundField {
        let mut put = |l: &Linear| {
            let (w, b) = if trainable {
                (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone()))
            } else {
                (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))
            };
            LinearVars { weight: w, bias: b }
        };
        let shape_layers = self.shape_layers.iter().map(&mut put).collect();
        let shape_head = put(&self.shape_head);
        let texture_layers = self.texture_layers.iter().map(&mut put).collect();
        let color_head = put(&self.color_head);
        BoundField {
            config: self.config.clone(),
            shape_layers,
            shape_head,
            texture_layers,
            color_head,
        }
    }

    /// Checks the layer chain against the config.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        let w = c.wiring();
        let check = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(FieldError::Dimension { what, expected, got })
            }
        };
        check("shape stage layers", c.shape_layers, self.shape_layers.len())?;
        check("texture stage layers", c.texture_layers, self.texture_layers.len())?;
        let mut prev = c.input_dim(&w.shape_stage);
        for l in &self.shape_layers {
            check("shape stage input", prev, l.in_dim())?;
            prev = l.out_dim();
        }
        check("shape head input", prev, self.shape_head.in_dim())?;
        check("shape head output", 1 + c.feature_dim, self.shape_head.out_dim())?;
        prev = c.input_dim(&w.texture_stage);
        for l in &self.texture_layers {
            check("texture stage input", prev, l.in_dim())?;
            prev = l.out_dim();
        }
        check("color head input", prev, self.color_head.in_dim())?;
        check("color head output", 3, self.color_head.out_dim())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearVars {
    fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.weight)?;
        Ok(tape.add(y, self.bias)?)
    }
}

/// Field weights placed on a tape.
#[derive(Debug, Clone)]
pub struct BoundField {
    pub config: FieldConfig,
    pub shape_layers: Vec<LinearVars>,
    pub shape_head: LinearVars,
    pub texture_layers: Vec<LinearVars>,
    pub color_head: LinearVars,
}

/// Per-point outputs: density `[n, 1]`, color `[n, 3]`, feature `[n, v]`.
#[derive(Debug, Clone, Copy)]
pub struct FieldOutput {
    pub sigma: Var,
    pub rgb: Var,
    pub feature: Var,
}

impl BoundField {
    /// Weight and bias vars in the order of [`FieldParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        self.shape_layers
            .iter()
            .chain(std::iter::once(&self.shape_head))
            .chain(&self.texture_layers)
            .chain(std::iter::once(&self.color_head))
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }

    /// Shape and texture codes are `[n, D]`, aligned with the points.
    pub fn eval(
        &self,
        tape: &mut Tape,
        pos_enc: Var,
        dir_enc: Var,
        shape_code: Var,
        texture_code: Var,
    ) -> Result<FieldOutput> {
        let wiring = self.config.wiring();
        let pick = |input: FieldInput, feature: Option<Var>| match input {
            FieldInput::EncodedPosition => pos_enc,
            FieldInput::EncodedDirection => dir_enc,
            FieldInput::ShapeCode => shape_code,
            FieldInput::TextureCode => texture_code,
            FieldInput::Feature => feature.expect("feature is produced by the shape stage"),
        };
        let inputs: Vec<Var> = wiring.shape_stage.iter().map(|&i| pick(i, None)).collect();
        let mut h = tape.concat(&inputs, 1)?;
        for layer in &self.shape_layers {
            h = layer.apply(tape, h)?;
            h = tape.relu(h);
        }
        let head = self.shape_head.apply(tape, h)?;
        let raw_sigma = tape.slice(head, 1, 0, 1)?;
        let sigma = tape.softplus(raw_sigma);
        let feature = tape.slice(head, 1, 1, 1 + self.config.feature_dim)?;

        let inputs: Vec<Var> = wiring.texture_stage.iter().map(|&i| pick(i, Some(feature))).collect();
        let mut h = tape.concat(&inputs, 1)?;
        for layer in &self.texture_layers {
            h = layer.apply(tape, h)?;
            h = tape.relu(h);
        }
        let logits = self.color_head.apply(tape, h)?;
        let rgb = tape.sigmoid(logits);
        Ok(FieldOutput { sigma, rgb, feature })
    }

    /// Encodes raw `[n, 3]` positions and unit directions, then evaluates.
    pub fn eval_points(
        &self,
        tape: &mut Tape,
        positions: Var,
        directions: Var,
        shape_code: Var,
        texture_code: Var,
    ) -> Result<FieldOutput> {
        let pe = encode_vars(tape, positions, self.config.pos_freqs)?;
        let de = encode_vars(tape, directions, self.config.dir_freqs)?;
        self.eval(tape, pe, de, shape_code, texture_code)
    }
}

/// Plain-valued output of a single field query.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub sigma: f64,
    pub rgb: [f64; 3],
    pub feature: Vec<f64>,
}

/// Evaluates the field at one point without recording gradients.
pub fn eval_field(
    params: &FieldParams,
    shape_code: &[f64],
    texture_code: &[f64],
    x: &[f64; 3],
    d: &[f64; 3],
) -> Result<FieldSample> {
    let dim = params.config.latent_dim;
    for (what, code) in [("shape code", shape_code), ("texture code", texture_code)] {
        if code.len() != dim {
            return Err(FieldError::Dimension {
                what,
                expected: dim,
                got: code.len(),
            });
        }
    }
    let mut tape = Tape::new();
    let field = params.bind(&mut tape, false);
    let pos = tape.constant(Tensor::new(vec![1, 3], x.to_vec())?);
    let dir = tape.constant(Tensor::new(vec![1, 3], d.to_vec())?);
    let zs = tape.constant(Tensor::new(vec![1, dim], shape_code.to_vec())?);
    let zt = tape.constant(Tensor::new(vec![1, dim], texture_code.to_vec())?);
    let out = field.eval_points(&mut tape, pos, dir, zs, zt)?;
    let rgb = tape.value(out.rgb).data();
    Ok(FieldSample {
        sigma: tape.value(out.sigma).item(),
        rgb: [rgb[0], rgb[1], rgb[2]],
        feature: tape.value(out.feature).data().to_vec(),
    })
}

/// Per-object shape and texture codes, `[M, D]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTable {
    pub shape: Tensor,
    pub texture: Tensor,
}

impl LatentTable {
    /// Entries drawn from `N(0, 0.01^2)`.
    pub fn init(objects: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 0.01).unwrap();
        let mut sample = || {
            let data = (0..objects * dim).map(|_| normal.sample(rng)).collect();
            Tensor::new(vec![objects, dim], data).unwrap()
        };
        let shape = sample();
        let texture = sample();
        Self { shape, texture }
    }

    pub fn zeros(objects: usize, dim: usize) -> Self {
        Self {
            shape: Tensor::zeros(&[objects, dim]),
            texture: Tensor::zeros(&[objects, dim]),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.shape.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.shape() != self.texture.shape() || self.shape.shape().len() != 2 {
            return Err(FieldError::InvalidConfig(format!(
                "latent tables disagree: {:?} vs {:?}",
                self.shape.shape(),
                self.texture.shape()
            )));
        }
        if self
            .shape
            .data()
            .iter()
            .chain(self.texture.data())
            .any(|v| !v.is_finite())
        {
            return Err(FieldError::InvalidConfig("latent table has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn shape_code(&self, object: usize) -> &[f64] {
        let d = self.dim();
        &self.shape.data()[object * d..(object + 1) * d]
    }

    pub fn texture_code(&self, object: usize) -> &[f64] {
        let d = self.dim();
        &self.texture.data()[object * d..(object + 1) * d]
    }

    /// Arithmetic mean of the rows of each table.
    pub fn mean_codes(&self) -> (Vec<f64>, Vec<f64>) {
        let mean = |t: &Tensor| {
            let (m, d) = (t.shape()[0], t.shape()[1]);
            let mut out = vec![0.0; d];
            for row in t.data().chunks(d).take(m) {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|v| *v /= m as f64);
            out
        };
        (mean(&self.shape), mean(&self.texture))
    }
}
