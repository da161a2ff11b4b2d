//! Preference-conditioned multi-objective PPO with late-stage weighting of
//! per-objective clipped surrogates and a preference-distance diversity
//! regularizer.

pub mod advantage;
pub mod diff;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod momdp;
pub mod policy;
pub mod preference;
pub mod serve;
pub mod trainer;

pub use error::{Error, Result};
pub use losses::WeightingMode;
pub use momdp::{Action, ActionSpace, EnvConfig, EnvSpec, Environment};
pub use preference::PreferenceVector;
pub use diff::{Checkpoint, Tensor};
pub use metrics::{FrontEvaluation, ParetoFront, PreferencePolicy};
pub use serve::SessionState;
pub use trainer::{train, Agent, PolicySnapshot, TrainConfig, TrainOutcome, Trainer};
