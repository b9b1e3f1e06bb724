//! Latency-monotonic hardware-aware architecture search.
//!
//! The crate covers the full flow: search spaces and their encodings, linear
//! latency predictors, roofline device simulation, rank-correlation
//! analysis, proxy adaptation, evolutionary search and Pareto bookkeeping.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accuracy_model;
pub mod adaptation;
pub mod device_sim;
pub mod error;
pub mod evo_search;
pub mod latency_model;
pub mod monotonicity;
pub mod pareto;
pub mod pipeline;
pub mod rng;
pub mod search_space;

pub use accuracy_model::{AccuracyPredictor, SyntheticAccuracy};
pub use adaptation::{adapted_predict, solve_adaptation, tune_lambda, AdaptationConfig, AdaptationParams};
pub use device_sim::{generate_family, Granularity, RooflineDevice, SyntheticDeviceFamilySpec};
pub use error::{Error, Result};
pub use evo_search::{
    exhaustive_search, run_evolution, sweep_tradeoff, EvoConfig, Individual, SearchMode, TradeoffGrid,
};
pub use latency_model::{fit, LatencyPredictor, MeasurementSample, MeasurementSet};
pub use monotonicity::{estimate_srcc, srcc, SrccEstimate, SrccMatrix};
pub use pareto::{dominates, hypervolume, pareto_front, remove_non_pareto, LatencySource, ParetoSet, ScoredArch};
pub use pipeline::{
    one_proxy_nas, Branch, PipelineConfig, PipelineOutput, PipelineReport, ProxyState, ReuseMode, RunConfig,
    TargetOracle,
};
pub use search_space::{ArchEncoding, Genotype, OpCost, SearchSpaceSpec, SpaceKind};
