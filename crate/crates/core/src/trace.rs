//! Forward propagation with per-layer liveness accounting.
//!
//! A point dies at the first layer where all `n` of its pre-activations are
//! `<= 0` (exact comparison, no tolerance): from there on its activation is
//! the zero vector and its Jacobian vanishes, so death is propagated forward
//! regardless of later layers. The network is alive on a batch when at least
//! one point survives all layers.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::network::{DataBatch, ReluNetwork};

/// Outcome of one layer transition for the surviving population.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransitionEvent {
    /// Every previously alive point stays alive.
    AllSurvive,
    /// Some but not all previously alive points die.
    PartialDeath,
    /// Every previously alive point dies.
    TotalDeath,
}

/// Classifies a layer transition from alive counts before and after.
///
/// Errors when `cur > prev` (liveness never increases) or `prev == 0`
/// (no transition left to classify).
pub fn classify_event(prev_alive: usize, cur_alive: usize) -> Result<TransitionEvent> {
    if prev_alive == 0 {
        return Err(Error::invalid(
            "classify_event: no alive points before the transition",
        ));
    }
    if cur_alive > prev_alive {
        return Err(Error::invalid(format!(
            "classify_event: alive count increased from {prev_alive} to {cur_alive}"
        )));
    }
    Ok(if cur_alive == prev_alive {
        TransitionEvent::AllSurvive
    } else if cur_alive == 0 {
        TransitionEvent::TotalDeath
    } else {
        TransitionEvent::PartialDeath
    })
}

/// Full forward record: pre/post activations and alive masks, one entry per
/// layer, each of shape `M x n` (masks of length `M`).
///
/// Post-activations of dead points are zero vectors by the death convention,
/// and their mask entries stay false in every later layer.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pre_activations: Vec<Array2<f64>>,
    post_activations: Vec<Array2<f64>>,
    alive_mask: Vec<Vec<bool>>,
}

impl ForwardTrace {
    pub fn depth(&self) -> usize {
        self.pre_activations.len()
    }

    /// Number of points `M` traced.
    pub fn num_points(&self) -> usize {
        self.pre_activations[0].nrows()
    }

    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre_activations
    }

    pub fn post_activations(&self) -> &[Array2<f64>] {
        &self.post_activations
    }

    /// `alive_mask()[j][m]`: is point `m` still alive after layer `j`?
    pub fn alive_mask(&self) -> &[Vec<bool>] {
        &self.alive_mask
    }

    /// Alive points after each layer; non-increasing in the layer index.
    pub fn alive_counts(&self) -> Vec<usize> {
        self.alive_mask
            .iter()
            .map(|mask| mask.iter().filter(|&&a| a).count())
            .collect()
    }

    /// True when some point survives the final layer.
    pub fn network_alive(&self) -> bool {
        self.alive_mask
            .last()
            .is_some_and(|mask| mask.iter().any(|&a| a))
    }
}

/// Row is dead when every entry is `<= 0.0` (exact).
pub(crate) fn row_dead(row: &[f64]) -> bool {
    row.iter().all(|&v| v <= 0.0)
}

/// Runs `batch` through `net`, recording pre/post activations and liveness.
///
/// Dead points keep propagating zero vectors: once a point's mask entry goes
/// false its later pre-activations are the (constant) image of zero, but its
/// mask never returns to true even if that constant is positive somewhere —
/// a dead point contributes no gradient and is counted dead from then on.
pub fn forward_trace(net: &ReluNetwork, batch: &DataBatch) -> Result<ForwardTrace> {
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
    let mut pre_activations = Vec::with_capacity(net.depth());
    let mut post_activations = Vec::with_capacity(net.depth());
    let mut alive_mask = Vec::with_capacity(net.depth());

    for layer in net.layers() {
        let pre = layer.pre_activation(&current);
        let mut post = pre.mapv(|v| v.max(0.0));
        for (i, was_alive) in alive.iter_mut().enumerate() {
            let row = pre.row(i);
            if *was_alive && row_dead(row.as_slice().expect("row-major layout")) {
                *was_alive = false;
            }
            if !*was_alive {
                post.row_mut(i).fill(0.0);
            }
        }
        alive_mask.push(alive.clone());
        pre_activations.push(pre);
        current = post.clone();
        post_activations.push(post);
    }

    Ok(ForwardTrace {
        pre_activations,
        post_activations,
        alive_mask,
    })
}

/// Alive count after each layer without materializing activations for dead
/// points: rows are dropped as they die and the loop stops at total death
/// (remaining counts are zero). Same counts as `forward_trace`, much cheaper
/// on deep mostly-dead runs.
pub(crate) fn alive_count_curve(net: &ReluNetwork, points: &Array2<f64>) -> Vec<usize> {
    let depth = net.depth();
    let mut counts = Vec::with_capacity(depth);
    let mut current = points.clone();
    for layer in net.layers() {
        let pre = layer.pre_activation(&current);
        let survivors: Vec<usize> = (0..pre.nrows())
            .filter(|&i| !row_dead(pre.row(i).as_slice().expect("row-major layout")))
            .collect();
        counts.push(survivors.len());
        if survivors.is_empty() {
            break;
        }
        current = pre.select(ndarray::Axis(0), &survivors);
        current.mapv_inplace(|v| v.max(0.0));
    }
    counts.resize(depth, 0);
    counts
}

/// Whether the network's actual function — the plain ReLU composition, with
/// no permanent-death bookkeeping — emits a nonzero output for at least one
/// of the given points. For zero-bias networks this coincides with "some
/// point survives every layer": a dead point's post-activations are exactly
/// zero and zero biases keep them zero. Nonzero biases can re-light a
/// point's later activations after it went fully non-positive, so network
/// aliveness is judged on the output the network really computes.
pub(crate) fn final_output_alive(net: &ReluNetwork, points: &Array2<f64>) -> bool {
    let mut current = points.clone();
    for layer in net.layers() {
        current = layer.pre_activation(&current);
        current.mapv_inplace(|v| v.max(0.0));
    }
    current.iter().any(|&v| v > 0.0)
}
