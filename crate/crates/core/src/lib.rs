pub mod analysis;
pub mod config;
pub mod coupling;
pub mod experiment;
pub mod kinematics;
pub mod leader;
pub mod metrics;
pub mod netproto;
pub mod operators;
pub mod plant;
pub mod session;
pub mod task;
