//! Metric differential privacy (d_X-privacy) for text.
//!
//! Words are points in an embedding space with Euclidean distance. A
//! randomizer perturbs a word's vector with noise whose density decays as
//! `exp(-epsilon * |z|)` and snaps the result back to the nearest vocabulary
//! word. On top of that baseline the crate provides:
//!
//! - density-modulated noise (a kernel density prior sampled with
//!   Metropolis-Hastings),
//! - noise calibrated to a smooth upper bound on the local sensitivity,
//! - truncated mechanisms restricted to a distance ball or a kNN set,
//! - amplification stages (shuffle, Poisson sub-sampling, k-threshold),
//! - a Localize-Amplify-Curate protocol simulation,
//! - analysis tools: deniability statistics, empirical metric-DP
//!   verification and a Bayes-optimal inference attack.
//!
//! All randomness flows through [`RngStream`], so every result is
//! reproducible from a seed regardless of the number of worker threads.

pub mod amplification;
pub mod analysis;
pub mod embedding;
pub mod error;
pub mod pipeline;
pub mod randomizers;
pub mod samplers;
pub mod sensitivity;

pub use amplification::{AmplifierConfig, Message};
pub use analysis::{DeniabilityStats, DpReport, Posterior};
pub use embedding::{EmbeddingStore, NeighborList, WordId};
pub use error::{Error, Result};
pub use pipeline::{CuratorReport, ProtocolConfig};
pub use randomizers::{MechanismConfig, Randomizer, TransitionMatrix, WordMechanism};
pub use samplers::{MultivariateLaplaceParam, RngStream};
pub use sensitivity::SensitivityProfile;

/// Version tag embedded in every JSON report and binary file.
pub const SCHEMA_VERSION: u32 = 1;
