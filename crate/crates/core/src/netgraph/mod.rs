//! Network topology, model builders, cost accounting and checkpoints.

mod checkpoint;
mod cost;
mod graph;
mod zoo;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use cost::{count_costs, layer_costs, Costs};
pub use graph::{NetworkGraph, ParamGrads, ResidualLink};
pub use zoo::{build_model, residual_blocks, ArchSpec, Family, VGG16_WIDTHS};
