//! Width-preserving convolutional ReLU stacks.
//!
//! Layers keep the channel count and spatial extent fixed (stride 1, zero
//! "same" padding, odd kernels), so depth is the only growing dimension —
//! the convolutional analogue of the square dense networks in [`crate::network`].
//! A point (image) is dead at a layer when every output entry across all
//! channels and pixels is `<= 0`; death propagates forward exactly as in the
//! dense trace.

use ndarray::{Array1, Array3, Array4, Axis};

use crate::error::{Error, Result};

/// One convolutional layer: `C` input channels to `C_out` output channels
/// through square odd-side kernels, plus one bias per output channel.
///
/// `apply` computes the cross-correlation
/// `out[o,i,j] = b[o] + sum_{c,u,v} K[o,c,u,v] X[c, i+u-p, j+v-p]`
/// with zero padding `p = (m-1)/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayerParams {
    /// `(out_channels, in_channels, m, m)`.
    kernels: Array4<f64>,
    bias: Array1<f64>,
    spatial_side: usize,
}

impl ConvLayerParams {
    pub fn new(kernels: Array4<f64>, bias: Array1<f64>, spatial_side: usize) -> Result<Self> {
        let (out_c, in_c, kh, kw) = kernels.dim();
        if out_c == 0 || in_c == 0 {
            return Err(Error::invalid("conv layer needs at least one channel"));
        }
        if kh != kw {
            return Err(Error::DimensionMismatch {
                context: "conv kernels must be square",
                expected: kh,
                actual: kw,
            });
        }
        if kh % 2 == 0 {
            return Err(Error::invalid(format!(
                "kernel side must be odd for centered same-padding, got {kh}"
            )));
        }
        if spatial_side == 0 {
            return Err(Error::invalid("spatial side must be at least 1"));
        }
        if kh > spatial_side {
            return Err(Error::DimensionMismatch {
                context: "kernel side must not exceed the spatial side",
                expected: spatial_side,
                actual: kh,
            });
        }
        if bias.len() != out_c {
            return Err(Error::DimensionMismatch {
                context: "one bias per output channel",
                expected: out_c,
                actual: bias.len(),
            });
        }
        if kernels.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("conv layer parameters"));
        }
        Ok(ConvLayerParams {
            kernels,
            bias,
            spatial_side,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.dim().1
    }

    pub fn kernel_side(&self) -> usize {
        self.kernels.dim().2
    }

    pub fn spatial_side(&self) -> usize {
        self.spatial_side
    }

    pub fn kernels(&self) -> &Array4<f64> {
        &self.kernels
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn is_zero_bias(&self) -> bool {
        self.bias.iter().all(|&b| b == 0.0)
    }

    /// Pre-activation image for one input of shape `(in_channels, d, d)`.
    pub fn apply(&self, input: &Array3<f64>) -> Array3<f64> {
        let (out_c, in_c, m, _) = self.kernels.dim();
        let d = self.spatial_side;
        debug_assert_eq!(input.dim(), (in_c, d, d));
        let p = (m - 1) / 2;
        let mut out = Array3::zeros((out_c, d, d));
        for o in 0..out_c {
            let b = self.bias[o];
            for i in 0..d {
                for j in 0..d {
                    let mut acc = b;
                    for c in 0..in_c {
                        for u in 0..m {
                            let y = i + u;
                            if y < p || y - p >= d {
                                continue;
                            }
                            for v in 0..m {
                                let x = j + v;
                                if x < p || x - p >= d {
                                    continue;
                                }
                                acc += self.kernels[[o, c, u, v]] * input[[c, y - p, x - p]];
                            }
                        }
                    }
                    out[[o, i, j]] = acc;
                }
            }
        }
        out
    }
}

/// `M` images of shape `(channels, d, d)`, all entries finite.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBatch {
    images: Array4<f64>,
}

impl ConvBatch {
    pub fn new(images: Array4<f64>) -> Result<Self> {
        let (m, c, h, w) = images.dim();
        if m == 0 || c == 0 || h == 0 {
            return Err(Error::invalid("conv batch must be non-empty"));
        }
        if h != w {
            return Err(Error::DimensionMismatch {
                context: "images must be square",
                expected: h,
                actual: w,
            });
        }
        if images.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("conv batch"));
        }
        Ok(ConvBatch { images })
    }

    /// i.i.d. standard normal images from the trial stream.
    pub fn standard_normal(
        m: usize,
        channels: usize,
        spatial_side: usize,
        seed: &crate::seed::SeedSpec,
        trial_index: u64,
    ) -> Result<Self> {
        use rand::Rng;
        if m == 0 || channels == 0 || spatial_side == 0 {
            return Err(Error::invalid("conv batch must be non-empty"));
        }
        let mut rng = seed.trial_rng(trial_index);
        let count = m * channels * spatial_side * spatial_side;
        let values: Vec<f64> = (0..count)
            .map(|_| rng.sample(rand_distr::StandardNormal))
            .collect();
        let images =
            Array4::from_shape_vec((m, channels, spatial_side, spatial_side), values)
                .expect("shape fixed above");
        ConvBatch::new(images)
    }

    pub fn images(&self) -> &Array4<f64> {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.dim().0
    }

    pub fn is_empty(&self) -> bool {
        false // M >= 1 by construction
    }

    pub fn channels(&self) -> usize {
        self.images.dim().1
    }

    pub fn spatial_side(&self) -> usize {
        self.images.dim().2
    }
}

/// Per-layer pre/post activations and alive masks for a conv stack.
#[derive(Clone, Debug)]
pub struct ConvTrace {
    pre_activations: Vec<Array4<f64>>,
    post_activations: Vec<Array4<f64>>,
    alive_mask: Vec<Vec<bool>>,
}

impl ConvTrace {
    pub fn depth(&self) -> usize {
        self.pre_activations.len()
    }

    pub fn num_points(&self) -> usize {
        self.pre_activations[0].dim().0
    }

    pub fn pre_activations(&self) -> &[Array4<f64>] {
        &self.pre_activations
    }

    pub fn post_activations(&self) -> &[Array4<f64>] {
        &self.post_activations
    }

    pub fn alive_mask(&self) -> &[Vec<bool>] {
        &self.alive_mask
    }

    pub fn alive_counts(&self) -> Vec<usize> {
        self.alive_mask
            .iter()
            .map(|mask| mask.iter().filter(|&&a| a).count())
            .collect()
    }

    pub fn network_alive(&self) -> bool {
        self.alive_mask
            .last()
            .is_some_and(|mask| mask.iter().any(|&a| a))
    }
}

/// Runs a batch of images through a conv stack with the same death
/// convention as the dense trace: an image with no strictly positive output
/// entry is dead, stays dead, and propagates zeros.
pub fn conv_forward_trace(layers: &[ConvLayerParams], batch: &ConvBatch) -> Result<ConvTrace> {
    let first = layers
        .first()
        .ok_or_else(|| Error::invalid("conv network must have at least one layer"))?;
    if first.in_channels() != batch.channels() {
        return Err(Error::DimensionMismatch {
            context: "batch channels vs first layer input channels",
            expected: first.in_channels(),
            actual: batch.channels(),
        });
    }
    for pair in layers.windows(2) {
        if pair[1].in_channels() != pair[0].out_channels() {
            return Err(Error::DimensionMismatch {
                context: "layer input channels vs previous output channels",
                expected: pair[0].out_channels(),
                actual: pair[1].in_channels(),
            });
        }
    }
    for layer in layers {
        if layer.spatial_side() != batch.spatial_side() {
            return Err(Error::DimensionMismatch {
                context: "layer spatial side vs batch spatial side",
                expected: batch.spatial_side(),
                actual: layer.spatial_side(),
            });
        }
    }

    let m = batch.len();
    let d = batch.spatial_side();
    let mut alive = vec![true; m];
    let mut current = batch.images().clone();
    let mut pre_activations = Vec::with_capacity(layers.len());
    let mut post_activations = Vec::with_capacity(layers.len());
    let mut alive_mask = Vec::with_capacity(layers.len());

    for layer in layers {
        let out_c = layer.out_channels();
        let mut pre = Array4::zeros((m, out_c, d, d));
        for i in 0..m {
            let image = current.index_axis(Axis(0), i).to_owned();
            pre.index_axis_mut(Axis(0), i).assign(&layer.apply(&image));
        }
        let mut post = pre.mapv(|v| v.max(0.0));
        for (i, was_alive) in alive.iter_mut().enumerate() {
            if *was_alive && pre.index_axis(Axis(0), i).iter().all(|&v| v <= 0.0) {
                *was_alive = false;
            }
            if !*was_alive {
                post.index_axis_mut(Axis(0), i).fill(0.0);
            }
        }
        alive_mask.push(alive.clone());
        pre_activations.push(pre);
        current = post.clone();
        post_activations.push(post);
    }

    Ok(ConvTrace {
        pre_activations,
        post_activations,
        alive_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array2};

    fn layer_1x1(scale: f64, bias: f64, d: usize) -> ConvLayerParams {
        let mut kernels = Array4::zeros((1, 1, 1, 1));
        kernels[[0, 0, 0, 0]] = scale;
        ConvLayerParams::new(kernels, arr1(&[bias]), d).unwrap()
    }

    #[test]
    fn one_by_one_kernel_scales_pointwise() {
        let layer = layer_1x1(2.0, 0.5, 3);
        let mut input = Array3::zeros((1, 3, 3));
        input[[0, 1, 2]] = 3.0;
        let out = layer.apply(&input);
        assert_eq!(out[[0, 1, 2]], 6.5);
        assert_eq!(out[[0, 0, 0]], 0.5);
    }

    #[test]
    fn same_padding_averages_with_zeros_at_the_border() {
        // 3x3 all-ones kernel on a constant image: interior sums 9 entries,
        // corners only 4 — zero padding contributes nothing.
        let kernels = Array4::ones((1, 1, 3, 3));
        let layer = ConvLayerParams::new(kernels, arr1(&[0.0]), 4).unwrap();
        let input = Array3::ones((1, 4, 4));
        let out = layer.apply(&input);
        assert_eq!(out[[0, 1, 1]], 9.0);
        assert_eq!(out[[0, 0, 0]], 4.0);
        assert_eq!(out[[0, 0, 1]], 6.0);
    }

    #[test]
    fn construction_rejects_bad_shapes() {
        let ok = Array4::<f64>::zeros((1, 1, 3, 3));
        assert!(ConvLayerParams::new(ok.clone(), arr1(&[0.0, 1.0]), 8).is_err()); // bias len
        assert!(ConvLayerParams::new(ok.clone(), arr1(&[0.0]), 2).is_err()); // kernel > image
        assert!(ConvLayerParams::new(Array4::zeros((1, 1, 2, 2)), arr1(&[0.0]), 8).is_err()); // even
        assert!(ConvLayerParams::new(Array4::zeros((1, 1, 3, 2)), arr1(&[0.0]), 8).is_err()); // non-square
        assert!(ConvLayerParams::new(ok, arr1(&[f64::NAN]), 8).is_err());
    }

    #[test]
    fn trace_rejects_channel_and_side_mismatches() {
        let batch = ConvBatch::new(Array4::ones((2, 1, 4, 4))).unwrap();
        let two_in = ConvLayerParams::new(Array4::ones((1, 2, 1, 1)), arr1(&[0.0]), 4).unwrap();
        assert!(conv_forward_trace(&[two_in], &batch).is_err());
        let wrong_side = layer_1x1(1.0, 0.0, 5);
        assert!(conv_forward_trace(&[wrong_side], &batch).is_err());
        assert!(conv_forward_trace(&[], &batch).is_err());
    }

    #[test]
    fn negative_scale_kills_positive_images() {
        let batch = ConvBatch::new(Array4::ones((1, 1, 2, 2))).unwrap();
        let trace = conv_forward_trace(&[layer_1x1(-1.0, 0.0, 2)], &batch).unwrap();
        assert_eq!(trace.alive_counts(), vec![0]);
        assert!(!trace.network_alive());
    }

    #[test]
    fn death_propagates_past_positive_bias() {
        let batch = ConvBatch::new(Array4::ones((1, 1, 2, 2))).unwrap();
        let kill = layer_1x1(-1.0, 0.0, 2);
        let lift = layer_1x1(1.0, 5.0, 2);
        let trace = conv_forward_trace(&[kill, lift], &batch).unwrap();
        assert_eq!(trace.alive_counts(), vec![0, 0]);
        // second pre-activation shows the bias, but the mask stays dead
        assert_eq!(trace.pre_activations()[1][[0, 0, 0, 0]], 5.0);
        assert_eq!(trace.post_activations()[1][[0, 0, 0, 0]], 0.0);
    }

    /// Dense matrix with the same action as `layer` on flattened images
    /// (channel-major, then row-major pixels), bias excluded.
    fn induced_matrix(layer: &ConvLayerParams) -> Array2<f64> {
        let d = layer.spatial_side();
        let (out_c, in_c) = (layer.out_channels(), layer.in_channels());
        let mut matrix = Array2::zeros((out_c * d * d, in_c * d * d));
        for c in 0..in_c {
            for y in 0..d {
                for x in 0..d {
                    let mut basis = Array3::zeros((in_c, d, d));
                    basis[[c, y, x]] = 1.0;
                    let mut out = layer.apply(&basis);
                    out -= &layer
                        .apply(&Array3::zeros((in_c, d, d)));
                    for o in 0..out_c {
                        for i in 0..d {
                            for j in 0..d {
                                matrix[[o * d * d + i * d + j, c * d * d + y * d + x]] =
                                    out[[o, i, j]];
                            }
                        }
                    }
                }
            }
        }
        matrix
    }

    #[test]
    fn conv_layer_agrees_with_its_induced_matrix() {
        use crate::init::{sample_conv_network, InitScheme};
        use crate::network::BiasMode;
        use crate::seed::SeedSpec;
        use ndarray::Array1;

        let seed = SeedSpec::new(3, "unit/conv-induced");
        for trial in 0..10 {
            let layers = sample_conv_network(
                2,
                3,
                5,
                1,
                InitScheme::He,
                BiasMode::FreeBias,
                &seed.child("params"),
                trial,
            )
            .unwrap();
            let layer = &layers[0];
            let matrix = induced_matrix(layer);
            let image = ConvBatch::standard_normal(1, 2, 5, &seed.child("data"), trial).unwrap();
            let input = image.images().index_axis(Axis(0), 0).to_owned();
            let direct = layer.apply(&input);

            let flat: Array1<f64> = Array1::from_iter(input.iter().copied());
            let via_matrix = matrix.dot(&flat);
            let d = 5;
            for o in 0..2 {
                for i in 0..d {
                    for j in 0..d {
                        let want = via_matrix[o * d * d + i * d + j] + layer.bias()[o];
                        let got = direct[[o, i, j]];
                        assert!(
                            (got - want).abs() <= 1e-12,
                            "trial {trial} at ({o},{i},{j}): {got} vs {want}"
                        );
                    }
                }
            }
        }
    }
}
