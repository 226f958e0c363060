//! Network definition, parameter bookkeeping, complexity accounting and checkpoints.

mod blocks;
pub mod checkpoint;
mod complexity;
mod config;
mod net;
mod params;

pub use blocks::{ForwardCtx, ForwardMode};
pub(crate) use blocks::splitmix64;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use complexity::{count_flops, count_params, ComplexityReport};
pub use config::{ModelConfig, Stage, BN_EPS, BN_MOMENTUM};
pub use net::{padding_for, Forward, FsNet};
pub use params::{param_specs, stage_name, ParamKind, ParamSpec, ParameterSet};
