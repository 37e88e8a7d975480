//! Confidence-aware active learning for heteroscedastic regression.
//!
//! Deep ensembles of mean/variance networks, uncertainty-decomposing
//! acquisition strategies, a pool-based acquisition loop and the aerosol
//! mixing-state quantities used as regression targets.

pub mod acquisition;
pub mod aerosol;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod net;
pub mod objective;
pub mod seed;

pub use acquisition::{AcquisitionScore, Candidates, PoolStats, StrategyKind};
pub use aerosol::{coating_volume_ratio, mixing_state_index, ChiResult, ParticlePopulation, SpeciesGrouping};
pub use data::{CsvSchema, Dataset, Samples, SyntheticKind, SyntheticSpec, TransformKind};
pub use ensemble::{Ensemble, EnsembleConfig, PredictiveSummary};
pub use error::{Error, ErrorClass, Result};
pub use experiment::{
    run_experiment, write_outputs, DataConfig, DataSource, ExperimentConfig, ExperimentOutput, LoopConfig, Oracle,
    RoundRecord,
};
pub use metrics::{EfficiencyMatch, LearningCurve};
pub use net::{HeteroNet, NetConfig, TrainSchedule};
pub use objective::{HeadParam, LossPart, ObjectiveKind, PerSampleLoss};
