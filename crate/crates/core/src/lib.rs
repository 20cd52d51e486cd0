//! Data-driven reachability and robustness verification for semantic
//! segmentation networks with conformal guarantees.

mod container;
pub mod calibrate;
pub mod error;
pub mod guarantees;
pub mod hull;
pub mod image_io;
pub mod lp;
pub mod model;
pub mod pca;
pub mod perturb;
pub mod sampling;
pub mod seed;
pub mod toy;
pub mod verify;

pub use error::{ReachError, Result};
pub use guarantees::GuaranteeSpec;
pub use model::{ClassMask, ImageTensor, LogitTensor, MlpNetwork};
pub use perturb::PerturbationSpec;

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
