// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod camera;
pub mod checkpoint;
pub mod cli;
pub mod container;
pub mod data;
pub mod field;
pub mod mesh;
pub mod metrics;
pub mod optim;
pub mod render;
