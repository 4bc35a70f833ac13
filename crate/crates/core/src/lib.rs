//! Linear CNN layers as sparse matrices, exact collapse of skip-connected
//! linear networks to one affine map, and homotopy training that removes
//! skip connections.

pub mod bench;
pub mod collapse;
pub mod data;
pub mod error;
pub mod forward;
pub mod layers;
pub mod linalg;
pub mod net;
pub mod par;
pub mod train;

pub use collapse::{collapse_closed_form, collapse_latent, collapse_network, flops_layered, CollapseResult};
pub use error::{Error, Result};
pub use forward::{accuracy, forward_collapsed, forward_layered, homotopy_mix, predict_batch, predict_class, ForwardTrace, Predictor};
pub use linalg::{AffineMap, DenseMatrix, SparseMatrix, Vector};
pub use net::{preset, Activation, Init, Network, NetworkBuilder, Preset};
