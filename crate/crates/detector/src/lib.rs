//! Voting-based single-object 3D detector.
//!
//! A point backbone picks seed points, each seed regresses an offset to the
//! object center, and clusters of votes are turned into box proposals. The
//! network runs on a small reverse-mode [`tape`] in `f64`.

pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod error;
pub mod losses;
pub mod model;
pub mod network;
pub mod sampling;
pub mod tape;
pub mod weights;

pub use checkpoint::Archive;
pub use config::{NetworkConfig, ProposalSpec, SaSpec, Shapes, OUTPUT_CHANNELS};
pub use decode::{decode, encode, ProposalSet};
pub use error::{Error, Result};
pub use losses::{LossBreakdown, LossWeights, TargetAssignment};
pub use model::{Detection, Detector};
pub use network::{feature_propagation_eval, forward, generate_votes, propose, set_abstraction_eval, ForwardPass, Mode};
pub use tape::{Grads, Mat, Tape, Var};
pub use weights::{Kind, Weights};
