//! Network and data containers.
//!
//! Everything here is immutable after construction; the Monte Carlo layer
//! shares these types freely across rayon workers.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SeedSpec;

/// Whether bias vectors are drawn with the weights or pinned to zero.
///
/// Zero biases make every dead region a cone (`x` dead implies `cx` dead for
/// `c > 0`) and sharpen the closed-form upper bound exponent from `n^2 + n`
/// to `n^2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BiasMode {
    ZeroBias,
    FreeBias,
}

/// One affine layer: square weight matrix `W` (`n x n`) and bias `b`,
/// computing `x -> W x + b` row-wise over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl LayerParams {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        let (rows, cols) = weights.dim();
        if rows == 0 {
            return Err(Error::invalid("layer width must be at least 1"));
        }
        if rows != cols {
            return Err(Error::DimensionMismatch {
                context: "layer weight matrix must be square",
                expected: rows,
                actual: cols,
            });
        }
        if bias.len() != rows {
            return Err(Error::DimensionMismatch {
                context: "bias length must equal layer width",
                expected: rows,
                actual: bias.len(),
            });
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer parameters"));
        }
        Ok(LayerParams { weights, bias })
    }

    pub fn width(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn is_zero_bias(&self) -> bool {
        self.bias.iter().all(|&b| b == 0.0)
    }

    /// Pre-activations for a batch given as rows: `X W^T + b`.
    pub fn pre_activation(&self, input: &Array2<f64>) -> Array2<f64> {
        input.dot(&self.weights.t()) + &self.bias
    }

    /// The layer with all parameters negated. Exact: sign flips never round.
    pub fn negated(&self) -> LayerParams {
        LayerParams {
            weights: self.weights.mapv(|w| -w),
            bias: self.bias.mapv(|b| -b),
        }
    }

    /// Same weights, different bias. Width is preserved by construction.
    pub fn with_bias(&self, bias: Array1<f64>) -> Result<LayerParams> {
        LayerParams::new(self.weights.clone(), bias)
    }
}

/// A width-`n`, depth-`k` fully-connected ReLU network: `k` affine layers,
/// each followed by the elementwise ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ReluNetwork {
    layers: Vec<LayerParams>,
    bias_mode: BiasMode,
}

impl ReluNetwork {
    /// Builds a network from layers of a common width. In `ZeroBias` mode
    /// every bias entry must be exactly zero.
    pub fn new(layers: Vec<LayerParams>, bias_mode: BiasMode) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::invalid("network must have at least one layer"))?;
        let width = first.width();
        for (j, layer) in layers.iter().enumerate() {
            if layer.width() != width {
                return Err(Error::DimensionMismatch {
                    context: "all layers must share one width",
                    expected: width,
                    actual: layer.width(),
                });
            }
            if bias_mode == BiasMode::ZeroBias && !layer.is_zero_bias() {
                return Err(Error::invalid(format!(
                    "layer {j} has a nonzero bias in ZeroBias mode"
                )));
            }
        }
        Ok(ReluNetwork { layers, bias_mode })
    }

    pub fn width(&self) -> usize {
        self.layers[0].width()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn bias_mode(&self) -> BiasMode {
        self.bias_mode
    }
}

/// How a batch was produced; carried along so artifacts can state their
/// data provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub distribution: String,
    pub seed: u64,
}

/// `M` input points of dimension `n`, stored as rows. Points are finite by
/// construction; `M >= 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataBatch {
    points: Array2<f64>,
    generator: GeneratorSpec,
}

impl DataBatch {
    pub fn new(points: Array2<f64>, generator: GeneratorSpec) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::invalid("data batch must be non-empty (M, n >= 1)"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("data batch"));
        }
        Ok(DataBatch { points, generator })
    }

    /// `M x n` batch of i.i.d. standard normal points from the trial stream.
    pub fn standard_normal(m: usize, n: usize, seed: &SeedSpec, trial_index: u64) -> Result<Self> {
        use rand::Rng;
        if m == 0 || n == 0 {
            return Err(Error::invalid("data batch must be non-empty (M, n >= 1)"));
        }
        let mut rng = seed.trial_rng(trial_index);
        let values: Vec<f64> = (0..m * n)
            .map(|_| rng.sample(rand_distr::StandardNormal))
            .collect();
        let points = Array2::from_shape_vec((m, n), values).expect("shape fixed above");
        DataBatch::new(
            points,
            GeneratorSpec {
                distribution: "standard_normal".to_owned(),
                seed: seed.trial_seed(trial_index),
            },
        )
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn generator(&self) -> &GeneratorSpec {
        &self.generator
    }

    /// Number of points `M`.
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // M >= 1 by construction
    }

    /// Point dimension `n`.
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}
