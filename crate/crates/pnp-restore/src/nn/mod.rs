//! Minimal differentiable compute for the policy/value network.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod net;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, sidecar_path};
pub use conv::{ConvLayer, LayerGrad};
pub use net::{ForwardOutput, GradientTape, NetConfig, PolicyValueNet, NUM_ACTIONS};
