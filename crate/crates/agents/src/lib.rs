//! SVO recognition and decision policies.

pub mod dataset;
pub mod decision;
pub mod episode;
pub mod error;
pub mod features;
pub mod policy;
pub mod recognition;
pub mod sac;
pub mod scripted;

pub use dataset::{generate_dataset, DatasetConfig, DatasetHeader, MapContext, RecognitionDataset, RecognitionSample};
pub use decision::{Actor, Critic, DecisionConfig, DecisionInput, LearnedPolicy};
pub use episode::{derive_seed, Episode, EpisodeConfig, StepOutcome};
pub use error::{AgentError, Result};
pub use features::{EncodedObs, Track, STATIC_FEATURES, VEHICLE_FEATURES};
pub use policy::{Beliefs, Policy, PolicyContext, PolicyInput, PolicyOutput, RandomPolicy, SvoMode, NEUTRAL_SVO};
pub use recognition::{
    mean_deviation_error, recognition_loss, train_recognition, RecognitionConfig, RecognitionNet, RecognitionVariant,
    TrainConfig, TrainReport,
};
pub use sac::{episode_return, sac_train, ReplayBuffer, SacConfig, SacReport, SacTrainer, Transition};
pub use scripted::{scripted_policy, target_speed, ScriptedParams, ScriptedPolicy, Situation};
