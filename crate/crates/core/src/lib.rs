pub mod coordinator;
pub mod engine;
pub mod explorer;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod operator;
pub mod perception;
pub mod scenario;
pub mod trace;
pub mod world;
