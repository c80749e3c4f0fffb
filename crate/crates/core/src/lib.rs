//! Recursive-least-squares advantage actor-critic (RLSSA2C, RLSNA2C) with an
//! RMSProp A2C baseline, on small built-in environments.

pub mod envsim;
pub mod error;
pub mod kfacnpg;
pub mod network;
pub mod numerics;
pub mod optim;
pub mod policy;
pub mod trainer;

pub use envsim::{EnvId, EnvInstance, RolloutBatch};
pub use error::{Error, Result};
pub use kfacnpg::{KfacActorState, WSign};
pub use network::{ActorCritic, NetSpec};
pub use numerics::{Mat, SpdMat};
pub use optim::{RlsLayerState, RmspropState, ScheduleState};
pub use policy::EntropyMode;
pub use trainer::{Algorithm, MetricsRow, TrainConfig, Trainer};
