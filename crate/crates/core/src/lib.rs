//! Diffusion-based trajectory planning for basketball possessions.
//!
//! The crate covers the whole pipeline: tracking and play-by-play ingestion,
//! possession datasets, a temporal U-Net noise model, a learned return
//! estimator, value-guided sampling, adversarial rollouts against heuristic
//! defenses, evaluation utilities and SVG rendering.

pub mod adversary;
pub mod container;
pub mod court;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod evalkit;
pub mod ingest;
pub mod nn;
pub mod normalize;
pub mod planner;
pub mod render;
pub mod trajectory;
pub mod value;

pub use container::{fingerprint_bytes, fingerprint_file, Container};
pub use court::{CourtSpec, Frame, PlayerPosition, FRAME_RATE};
pub use dataset::{Dataset, TrainingExample};
pub use error::{Error, Result};
pub use evalkit::{EvalReport, SyntheticSpec};
pub use normalize::{denormalize, normalize, NormalizationStats};
pub use render::RenderStyle;
pub use trajectory::{Axis, Object, Space, State, TrajectoryTensor, ACTION_DIM, FEATURE_DIM, N_OBJECTS, STATE_DIM};
