pub mod nn;
pub mod audio;
pub mod augment;
pub mod corpus;
pub mod metrics;
pub mod speaker;
pub mod model;
pub mod harness;
