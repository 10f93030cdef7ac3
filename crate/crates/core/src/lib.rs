//! Discrete-event simulator for barrier synchronization offloaded to the
//! network interface card.

pub mod analytic;
pub mod barrier;
pub mod collective;
pub mod elan;
pub mod engine;
pub mod error;
pub mod harness;
pub mod packet;
pub mod pt2pt;
pub mod rng;
pub mod schedule;
pub mod sim;
pub mod time;
pub mod topology;
pub mod trace;

pub use error::{ConfigError, SimError};
pub use packet::{GroupId, Packet, PacketKind};
pub use schedule::AlgorithmKind;
pub use sim::{simulate, Mode, SimConfig, SimOutcome};
pub use time::SimTime;
pub use topology::{CostModel, Placement, Rank};
pub use harness::{compare_modes, run_experiment, ExperimentConfig, Measurement};
