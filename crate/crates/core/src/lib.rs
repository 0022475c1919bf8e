//! Survival of fully-connected ReLU networks at random initialization.
//!
//! A network is *dead on a point* when every pre-activation in some layer is
//! non-positive: the point is then mapped to a constant and its gradient
//! contribution vanishes. This crate provides
//!
//! * exact closed-form lower/upper bounds on the probability that a random
//!   network of width `n` and depth `k` is alive ([`bounds`]),
//! * forward tracing with per-layer alive masks for dense and convolutional
//!   networks ([`trace`], [`conv`]),
//! * seeded, thread-count-invariant Monte Carlo estimators ([`montecarlo`]),
//! * two initialization repairs that provably reduce death: layerwise sign
//!   flipping and batch centering ([`init`]),
//! * resumable experiment sweeps with CSV/manifest artifacts ([`experiments`]).

pub mod bounds;
pub mod conv;
pub mod error;
pub mod experiments;
pub mod init;
pub mod montecarlo;
pub mod network;
pub mod seed;
pub mod stats;
pub mod trace;

pub use bounds::{conv_bounds, lower_bound, min_width, upper_bound, BoundPair};
pub use conv::{conv_forward_trace, ConvBatch, ConvLayerParams, ConvTrace};
pub use error::{Error, Result};
pub use init::{
    batch_center_init, sample_conv_network, sample_network, sign_flip_init, InitScheme,
    SignFlipOutcome,
};
pub use montecarlo::{
    estimate_alive_prob, estimate_conv_alive_prob, estimate_neuron_death_prob,
    estimate_point_alive_prob, living_fraction_stats, neuron_variance_identity, variance_report,
    InitKind, LivingFractionStats, VarianceIdentity, VarianceReport,
};
pub use network::{BiasMode, DataBatch, GeneratorSpec, LayerParams, ReluNetwork};
pub use seed::SeedSpec;
pub use stats::{wilson_interval, Estimate};
pub use trace::{classify_event, forward_trace, ForwardTrace, TransitionEvent};
