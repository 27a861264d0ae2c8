pub mod bigworld;
pub mod coalesce;
pub mod green;
pub mod spectral;
pub mod stats;
pub mod topology;
pub mod walk;
pub mod rng;
