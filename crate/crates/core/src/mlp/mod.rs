//! Multilayer perceptron with sigmoid units, SSE loss and rprop+ training.

mod model;
mod network;
mod rprop;
mod train;

pub use model::{Model, MODEL_FORMAT, MODEL_VERSION};
pub use network::{sigmoid, sse, Activations, Network};
pub use rprop::{rprop_plus_step, RpropParams, RpropState};
pub use train::{predict, restart_seed, train, train_on, StopReason, TrainConfig, TrainHistory};

/// Create a seeded network (uniform weights in `[-init_scale, init_scale]`).
pub fn init_network(layer_sizes: &[usize], seed: u64, init_scale: f64) -> crate::Result<Network> {
    Network::init(layer_sizes, seed, init_scale)
}
