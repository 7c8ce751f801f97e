//! Episodic prototype training.

mod bank;
mod episode;
mod proto;
mod train;

pub use bank::{FeatureBank, ReprConfig};
pub use episode::{sample_episode, EpisodeBatch};
pub use proto::{compute_prototypes, distance_score, mean_vector, triplet_loss, PrototypeSet};
pub use train::{embed_records, train, write_log_csv, LogEntry, TrainConfig, TrainOutcome};
