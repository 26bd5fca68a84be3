//! Experiment configuration, Monte-Carlo runner and chart output.

mod config;
mod plot;
mod runner;

pub use config::{
    parse_config, validate_config, Algorithm, ConfigError, ExperimentConfig, NodeInit, OutputSpec, MAX_PARAM_DIM,
};
pub use plot::{emit_plots, PlotError};
pub use runner::{
    run_experiment, AggregateSeries, AlgorithmSummary, BoundCheck, RunError, RunSummary, AGGREGATE_HEADER,
    METRICS_HEADER, NETWORK_AGGREGATE_HEADER, NETWORK_HEADER,
};
