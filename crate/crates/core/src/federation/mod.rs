//! Client/server simulation of layer-wise training.

mod experiment;
mod messages;
mod participation;
mod round;

pub use experiment::{build_federation, network_data, run_experiment, ExperimentRun, Learn2pFedConfig};
pub use messages::{MessageCounts, RoundMessage, Transcript, TranscriptEntry};
pub use participation::{sample_participants, ParticipationPlan};
pub use round::{Federation, RoundOutcome};
