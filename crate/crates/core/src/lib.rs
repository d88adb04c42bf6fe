//! Generative principal component regression.
//!
//! A linear-Gaussian factor model (`z ~ N(0, I)`, `x | z ~ N(W z, Λ)`) whose
//! loadings are fit by maximizing the marginal likelihood of the covariates
//! plus an up-weighted predictive term evaluated under the model's own
//! posterior `p(z | x)`. Because no separate encoder is involved, any
//! information used for prediction must live in the loadings.
//!
//! The crate also carries the comparison models (PCR, ridge and L2-logistic
//! regression, a linear supervised VAE), the synthetic stimulation benchmark,
//! evaluation metrics, and the dataset/model file plumbing used by the CLI.

pub mod baselines;
pub mod bench;
pub mod data;
pub mod error;
pub mod head;
pub mod lowrank;
pub mod metrics;
pub mod model;
pub mod modelio;
pub mod objective;
pub mod optim;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use head::{Link, PredictiveHead};
pub use lowrank::{CovFactor, LowRankCov};
pub use model::{FactorModel, GaussianPosterior};
pub use objective::{LinearEncoder, ObjectiveConfig, Params};

pub use optim::{FitSpec, Init, Supervise, TrainConfig};
