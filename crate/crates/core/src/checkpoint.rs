//! Trained model state: network weights, latent tables, render settings
//! and (optionally) the optimizer state needed to resume training.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::container::{Container, ContainerError};
use crate::field::{FieldConfig, FieldError, FieldParams, LatentTable};
use crate::optim::{AdamW, Moments};
use crate::render::RenderConfig;

pub const KIND: &str = "radiance-field-checkpoint";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("object {0:?} is not in the checkpoint")]
    UnknownObject(String),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub field: FieldParams,
    pub latents: LatentTable,
    pub object_ids: Vec<String>,
    pub render: RenderConfig,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub optimizer: Option<AdamW>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    field: FieldConfig,
    render: RenderConfig,
    object_ids: Vec<String>,
    step: u64,
    optimizer: Option<OptimizerMeta>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    slots: Vec<String>,
}

impl Checkpoint {
    /// Fresh weights and `N(0, 0.01^2)` codes, all drawn from `seed`.
    pub fn init(field: &FieldConfig, object_ids: Vec<String>, render: RenderConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = FieldParams::init(field, &mut rng)?;
        let latents = LatentTable::init(object_ids.len(), field.latent_dim, &mut rng);
        Ok(Self {
            field: params,
            latents,
            object_ids,
            render,
            step: 0,
            optimizer: None,
        })
    }

    pub fn object_index(&self, id: &str) -> Result<usize> {
        self.object_ids
            .iter()
            .position(|o| o == id)
            .ok_or_else(|| CheckpointError::UnknownObject(id.to_string()))
    }

    /// Shape and texture code of training object `index`.
    pub fn codes(&self, index: usize) -> (Vec<f64>, Vec<f64>) {
        (
            self.latents.shape_code(index).to_vec(),
            self.latents.texture_code(index).to_vec(),
        )
    }

    pub fn to_container(&self) -> Container {
        let optimizer = self.optimizer.as_ref().map(|o| OptimizerMeta {
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            step: o.step,
            slots: o.slots.keys().cloned().collect(),
        });
        let meta = Meta {
            field: self.field.config.clone(),
            render: self.render.clone(),
            object_ids: self.object_ids.clone(),
            step: self.step,
            optimizer,
        };
        let mut c = Container::new(KIND, serde_json::to_value(meta).expect("meta serializes"));
        for (name, t) in self.field.tensors() {
            c.push(name, t.clone());
        }
        c.push("latent.shape", self.latents.shape.clone());
        c.push("latent.texture", self.latents.texture.clone());
        if let Some(o) = &self.optimizer {
            for (name, m) in &o.slots {
                let n = m.m.len();
                c.push(format!("adam.m.{name}"), Tensor::new(vec![n], m.m.clone()).unwrap());
                c.push(format!("adam.v.{name}"), Tensor::new(vec![n], m.v.clone()).unwrap());
            }
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(KIND)?;
        let meta: Meta =
            serde_json::from_value(c.meta.clone()).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        meta.field.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut field = FieldParams::init(&meta.field, &mut rng)?;
        for (name, slot) in field.tensors_mut() {
            let t = c.get(&name)?;
            if t.shape() != slot.shape() {
                return Err(CheckpointError::Malformed(format!(
                    "{name} has shape {:?}, config implies {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        let latents = LatentTable {
            shape: c.get("latent.shape")?.clone(),
            texture: c.get("latent.texture")?.clone(),
        };
        latents.validate()?;
        if latents.len() != meta.object_ids.len() || latents.dim() != meta.field.latent_dim {
            return Err(CheckpointError::Malformed(format!(
                "latent table {:?} does not match {} objects of dimension {}",
                latents.shape.shape(),
                meta.object_ids.len(),
                meta.field.latent_dim
            )));
        }
        let optimizer = match meta.optimizer {
            None => None,
            Some(o) => {
                let mut adam = AdamW::new(o.beta1, o.beta2, o.eps);
                adam.step = o.step;
                for name in o.slots {
                    let m = c.get(&format!("adam.m.{name}"))?.data().to_vec();
                    let v = c.get(&format!("adam.v.{name}"))?.data().to_vec();
                    adam.slots.insert(name, Moments { m, v });
                }
                Some(adam)
            }
        };
        Ok(Self {
            field,
            latents,
            object_ids: meta.object_ids,
            render: meta.render,
            step: meta.step,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_container().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FieldConfig {
        FieldConfig {
            pos_freqs: 2,
            dir_freqs: 1,
            latent_dim: 3,
            hidden_dim: 8,
            feature_dim: 4,
            shape_layers: 2,
            texture_layers: 1,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let mut ck = Checkpoint::init(&small(), vec!["a".into(), "b".into()], RenderConfig::default(), 3).unwrap();
        let mut adam = AdamW::new(0.9, 0.999, 1e-8);
        adam.step = 7;
        adam.slots.insert(
            "latent.shape".into(),
            Moments {
                m: vec![0.5; 6],
                v: vec![0.25; 6],
            },
        );
        ck.optimizer = Some(adam);
        ck.step = 7;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        ck.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), ck);
    }

    #[test]
    fn init_is_seeded() {
        let a = Checkpoint::init(&small(), vec!["a".into()], RenderConfig::default(), 1).unwrap();
        let b = Checkpoint::init(&small(), vec!["a".into()], RenderConfig::default(), 1).unwrap();
        let c = Checkpoint::init(&small(), vec!["a".into()], RenderConfig::default(), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.object_index("a").unwrap(), 0);
        assert!(a.object_index("z").is_err());
    }

    #[test]
    fn rejects_wrong_kind() {
        let c = Container::new("image", serde_json::json!({}));
        assert!(matches!(
            Checkpoint::from_container(&c),
            Err(CheckpointError::Container(ContainerError::Kind { .. }))
        ));
    }
}
