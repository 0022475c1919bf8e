//! Random initialization and death-reducing repairs.
//!
//! The draw order is part of the reproducibility contract: for each layer in
//! turn, the `n x n` weight matrix is drawn row-major, then (in `FreeBias`
//! mode only) the `n` bias entries, all i.i.d. from the scheme's
//! distribution. Sampling layer `j` therefore consumes the same stream
//! positions no matter how many layers follow, which lets estimators sample
//! networks lazily and stop early without changing any outcome.

use ndarray::{Array1, Array2, Array4, Axis};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::conv::ConvLayerParams;
use crate::error::{Error, Result};
use crate::network::{BiasMode, DataBatch, LayerParams, ReluNetwork};
use crate::seed::SeedSpec;
use crate::trace::row_dead;

/// Weight distribution family. `He` and `Xavier` scale variance by fan-in
/// (`2/fan_in` and `1/fan_in`); `Normal` and `UniformSym` are fixed-scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InitScheme {
    He,
    Xavier,
    Normal { variance: f64 },
    UniformSym { halfwidth: f64 },
}

impl InitScheme {
    /// Per-parameter variance once the fan-in is known.
    pub fn resolved_variance(&self, fan_in: usize) -> Result<f64> {
        if fan_in == 0 {
            return Err(Error::invalid("fan-in must be at least 1"));
        }
        match *self {
            InitScheme::He => Ok(2.0 / fan_in as f64),
            InitScheme::Xavier => Ok(1.0 / fan_in as f64),
            InitScheme::Normal { variance } => {
                if variance.is_finite() && variance > 0.0 {
                    Ok(variance)
                } else {
                    Err(Error::invalid(format!(
                        "normal scheme needs a positive finite variance, got {variance}"
                    )))
                }
            }
            InitScheme::UniformSym { halfwidth } => {
                if halfwidth.is_finite() && halfwidth > 0.0 {
                    Ok(halfwidth * halfwidth / 3.0)
                } else {
                    Err(Error::invalid(format!(
                        "uniform scheme needs a positive finite halfwidth, got {halfwidth}"
                    )))
                }
            }
        }
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            InitScheme::He => write!(f, "he"),
            InitScheme::Xavier => write!(f, "xavier"),
            InitScheme::Normal { variance } => write!(f, "normal:{variance}"),
            InitScheme::UniformSym { halfwidth } => write!(f, "uniform:{halfwidth}"),
        }
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "he" => return Ok(InitScheme::He),
            "xavier" => return Ok(InitScheme::Xavier),
            _ => {}
        }
        if let Some(v) = s.strip_prefix("normal:") {
            let variance: f64 = v
                .parse()
                .map_err(|_| Error::invalid(format!("bad variance in scheme '{s}'")))?;
            return Ok(InitScheme::Normal { variance });
        }
        if let Some(v) = s.strip_prefix("uniform:") {
            let halfwidth: f64 = v
                .parse()
                .map_err(|_| Error::invalid(format!("bad halfwidth in scheme '{s}'")))?;
            return Ok(InitScheme::UniformSym { halfwidth });
        }
        Err(Error::invalid(format!(
            "unknown init scheme '{s}' (expected he, xavier, normal:V, uniform:H)"
        )))
    }
}

/// A concrete sampler for one scheme at one fan-in.
pub(crate) enum ParamSampler {
    Gauss(Normal<f64>),
    Box(Uniform<f64>),
}

impl ParamSampler {
    pub(crate) fn new(scheme: InitScheme, fan_in: usize) -> Result<ParamSampler> {
        match scheme {
            InitScheme::UniformSym { halfwidth } => {
                scheme.resolved_variance(fan_in)?; // validates halfwidth
                let dist = Uniform::new_inclusive(-halfwidth, halfwidth)
                    .map_err(|e| Error::invalid(format!("uniform sampler: {e}")))?;
                Ok(ParamSampler::Box(dist))
            }
            _ => {
                let std_dev = scheme.resolved_variance(fan_in)?.sqrt();
                let dist = Normal::new(0.0, std_dev)
                    .map_err(|e| Error::invalid(format!("normal sampler: {e}")))?;
                Ok(ParamSampler::Gauss(dist))
            }
        }
    }

    pub(crate) fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            ParamSampler::Gauss(d) => d.sample(rng),
            ParamSampler::Box(d) => d.sample(rng),
        }
    }
}

/// Draws the next dense layer from the stream: `n^2` weights row-major, then
/// `n` biases when `bias_mode` is `FreeBias`.
pub(crate) fn sample_layer(
    rng: &mut ChaCha8Rng,
    n: usize,
    sampler: &ParamSampler,
    bias_mode: BiasMode,
) -> LayerParams {
    let weights: Vec<f64> = (0..n * n).map(|_| sampler.draw(rng)).collect();
    let weights = Array2::from_shape_vec((n, n), weights).expect("shape fixed above");
    let bias = match bias_mode {
        BiasMode::ZeroBias => Array1::zeros(n),
        BiasMode::FreeBias => Array1::from_iter((0..n).map(|_| sampler.draw(rng))),
    };
    LayerParams::new(weights, bias).expect("sampled layer is square and finite")
}

/// Samples a width-`n`, depth-`k` network for one trial of the given stream.
pub fn sample_network(
    n: usize,
    k: usize,
    scheme: InitScheme,
    bias_mode: BiasMode,
    seed: &SeedSpec,
    trial_index: u64,
) -> Result<ReluNetwork> {
    if n == 0 || k == 0 {
        return Err(Error::invalid("sample_network requires n >= 1 and k >= 1"));
    }
    let sampler = ParamSampler::new(scheme, n)?;
    let mut rng = seed.trial_rng(trial_index);
    let layers = (0..k)
        .map(|_| sample_layer(&mut rng, n, &sampler, bias_mode))
        .collect();
    ReluNetwork::new(layers, bias_mode)
}

/// Draws the next conv layer: kernels in `(out, in, row, col)` order, then
/// per-channel biases when `bias_mode` is `FreeBias`.
pub(crate) fn sample_conv_layer(
    rng: &mut ChaCha8Rng,
    channels: usize,
    kernel_side: usize,
    spatial_side: usize,
    sampler: &ParamSampler,
    bias_mode: BiasMode,
) -> Result<ConvLayerParams> {
    let count = channels * channels * kernel_side * kernel_side;
    let kernels: Vec<f64> = (0..count).map(|_| sampler.draw(rng)).collect();
    let kernels =
        Array4::from_shape_vec((channels, channels, kernel_side, kernel_side), kernels)
            .expect("shape fixed above");
    let bias = match bias_mode {
        BiasMode::ZeroBias => Array1::zeros(channels),
        BiasMode::FreeBias => Array1::from_iter((0..channels).map(|_| sampler.draw(rng))),
    };
    ConvLayerParams::new(kernels, bias, spatial_side)
}

/// Samples a depth-`depth` conv stack with constant channel count and
/// spatial side. Fan-in for variance scaling is `channels * kernel_side^2`.
pub fn sample_conv_network(
    channels: usize,
    kernel_side: usize,
    spatial_side: usize,
    depth: usize,
    scheme: InitScheme,
    bias_mode: BiasMode,
    seed: &SeedSpec,
    trial_index: u64,
) -> Result<Vec<ConvLayerParams>> {
    if channels == 0 || depth == 0 {
        return Err(Error::invalid(
            "sample_conv_network requires channels >= 1 and depth >= 1",
        ));
    }
    let sampler = ParamSampler::new(scheme, channels * kernel_side * kernel_side)?;
    let mut rng = seed.trial_rng(trial_index);
    (0..depth)
        .map(|_| {
            sample_conv_layer(
                &mut rng,
                channels,
                kernel_side,
                spatial_side,
                &sampler,
                bias_mode,
            )
        })
        .collect()
}

/// Result of the layerwise sign-flip repair.
#[derive(Clone, Debug)]
pub struct SignFlipOutcome {
    /// The repaired network; same shape and bias mode as the input.
    pub network: ReluNetwork,
    /// Which layers were negated.
    pub flips: Vec<bool>,
    /// Points alive after the final layer.
    pub final_alive: usize,
    /// True when a flip met a point whose pre-activation vector was exactly
    /// zero: such a point is dead under either sign, so the revival
    /// guarantee skips it. Measure zero under continuous data; reported as
    /// a warning rather than an error.
    pub zero_pre_activation: bool,
}

/// Greedy layerwise sign-flip: walking forward, negate a whole layer exactly
/// when it kills a strict majority of the currently alive points. Negation
/// turns every killed point (all pre-activations `<= 0`) into an all-`>= 0`
/// point, reviving it unless its row is exactly zero, so each layer keeps at
/// least `floor(alive/2)` points alive and the final count is at least
/// `floor(M / 2^k)`.
pub fn sign_flip_init(net: &ReluNetwork, batch: &DataBatch) -> Result<SignFlipOutcome> {
    if batch.dim() != net.width() {
        return Err(Error::DimensionMismatch {
            context: "batch dimension vs network width",
            expected: net.width(),
            actual: batch.dim(),
        });
    }
    let m = batch.len();
    let mut alive = vec![true; m];
    let mut current = batch.points().clone();
    let mut layers = Vec::with_capacity(net.depth());
    let mut flips = Vec::with_capacity(net.depth());
    let mut zero_pre_activation = false;

    for layer in net.layers() {
        let mut pre = layer.pre_activation(&current);
        let alive_prev = alive.iter().filter(|&&a| a).count();
        let killed = (0..m)
            .filter(|&i| alive[i] && row_dead(pre.row(i).as_slice().expect("row-major")))
            .count();
        let flip = 2 * killed > alive_prev;
        if flip {
            pre.mapv_inplace(|v| -v);
            let zero_row_among_alive = (0..m)
                .any(|i| alive[i] && pre.row(i).iter().all(|&v| v == 0.0));
            zero_pre_activation |= zero_row_among_alive;
        }
        let mut post = pre.mapv(|v| v.max(0.0));
        for (i, was_alive) in alive.iter_mut().enumerate() {
            if *was_alive && row_dead(pre.row(i).as_slice().expect("row-major")) {
                *was_alive = false;
            }
            if !*was_alive {
                post.row_mut(i).fill(0.0);
            }
        }
        layers.push(if flip { layer.negated() } else { layer.clone() });
        flips.push(flip);
        current = post;
    }

    let final_alive = alive.iter().filter(|&&a| a).count();
    Ok(SignFlipOutcome {
        network: ReluNetwork::new(layers, net.bias_mode())?,
        flips,
        final_alive,
        zero_pre_activation,
    })
}

/// Batch centering: walking forward, shift each layer's bias so every
/// neuron's pre-activation has zero empirical mean over the batch. The walk
/// is the network's actual function — the plain ReLU composition, with no
/// permanent-death bookkeeping — because that is the computation whose batch
/// statistics the shift is meant to cancel. Re-running the centered network
/// the same way reproduces these activations bit for bit, so the recomputed
/// column means vanish at every layer, and a zero column mean forces a
/// positive entry into every non-constant column: outside degenerate
/// collapses the final output is nonzero for at least one batch point.
///
/// Both guarantees concern the real forward computation. Under the
/// permanent-death accounting of [`forward_trace`](crate::trace::forward_trace)
/// a point that once went fully non-positive contributes zeros from then on,
/// so a traced re-run sees different deep-layer activations: its recorded
/// means can drift from zero and its survivor count can hit zero even while
/// the output layer still fires (centered biases can re-light later
/// activations of a point that died earlier). The returned network carries
/// `FreeBias` mode: centered biases are generally nonzero even when the
/// input had zero biases.
pub fn batch_center_init(net: &ReluNetwork, batch: &DataBatch) -> Result<ReluNetwork> {
    if batch.dim() != net.width() {
        return Err(Error::DimensionMismatch {
            context: "batch dimension vs network width",
            expected: net.width(),
            actual: batch.dim(),
        });
    }
    let mut current = batch.points().clone();
    let mut layers = Vec::with_capacity(net.depth());
    for layer in net.layers() {
        let linear = current.dot(&layer.weights().t());
        let mean = linear.mean_axis(Axis(0)).expect("batch is non-empty") + layer.bias();
        let centered_bias = layer.bias() - &mean;
        let new_layer = layer.with_bias(centered_bias)?;
        let pre = linear + new_layer.bias();
        current = pre.mapv(|v| v.max(0.0));
        layers.push(new_layer);
    }
    ReluNetwork::new(layers, BiasMode::FreeBias)
}
