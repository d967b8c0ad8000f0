pub mod error;
pub mod estimators;
pub mod family;
pub mod harness;
pub mod linalg;
pub mod objective;
pub mod optimizers;
pub mod record;
pub mod rng;
pub mod schedules;
pub mod targets;
