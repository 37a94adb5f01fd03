pub mod bench;
pub mod commands;
pub mod evaluate;
pub mod metrics;
pub mod pipeline;
pub mod synth;
