//! Closed-form bounds on the probability that a random ReLU network is alive.
//!
//! For width `n` and depth `k` with continuous, sign-symmetric i.i.d. weights:
//!
//! * lower: `(1 - 2^-n)^k` — survival of all `k` layer events where some
//!   neuron row keeps a positive direction;
//! * upper: `(1 - 2^-E)^(k-1)` with `E = n^2 + n` when biases are free and
//!   the sharper `E = n^2` when biases are zero. The exponent `k - 1` makes
//!   the upper bound exactly 1 at depth 1: a single layer is dead only on a
//!   measure-zero parameter set.
//!
//! Convolutional layers with `C` input/output channels and `m x m` kernels
//! obey the same sandwich with `n` replaced by `C` below and by `C(m^2+1)`
//! above.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::BiasMode;

/// Lower and upper bound evaluated at one configuration. `lower <= upper`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    pub lower: f64,
    pub upper: f64,
}

/// `(1 - 2^-exp2)^k`, accurate over the full parameter range.
///
/// Small exponents go through `powf` (correctly rounded base, ~0.5 ulp pow);
/// large `k` or large `exp2` switch to `exp(k ln_1p(-2^-exp2))`, which avoids
/// the `1 - tiny == 1` collapse and keeps relative error near 1e-15 even for
/// k in the millions.
fn survival_power(exp2: u64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if exp2 <= 53 && k <= 512 {
        let base = 1.0 - (2.0f64).powi(-(exp2 as i32));
        return base.powf(k as f64);
    }
    // 2^-exp2 underflows to 0.0 beyond exp2 = 1074 and the bound rounds to 1.
    let step = if exp2 > 1074 {
        0.0
    } else {
        (2.0f64).powi(-(exp2 as i32))
    };
    (k as f64 * (-step).ln_1p()).exp()
}

/// Probability lower bound `(1 - 2^-n)^k` for a width-`n`, depth-`k` network.
///
/// Panics if `n == 0` or `k == 0`.
pub fn lower_bound(n: u32, k: u32) -> f64 {
    assert!(n >= 1 && k >= 1, "lower_bound requires n >= 1, k >= 1");
    survival_power(u64::from(n), u64::from(k))
}

/// Probability upper bound `(1 - 2^-E)^(k-1)`, `E = n^2` for zero biases and
/// `n^2 + n` when biases are drawn too.
///
/// Panics if `n == 0` or `k == 0`.
pub fn upper_bound(n: u32, k: u32, bias_mode: BiasMode) -> f64 {
    assert!(n >= 1 && k >= 1, "upper_bound requires n >= 1, k >= 1");
    let n = u64::from(n);
    let exp2 = match bias_mode {
        BiasMode::ZeroBias => n * n,
        BiasMode::FreeBias => n * n + n,
    };
    survival_power(exp2, u64::from(k) - 1)
}

/// Least width `n` whose lower bound clears `p` at depth `k`: the smallest
/// `n` with `(1 - 2^-n)^k >= p`.
///
/// Errors when `p` is not strictly inside `(0, 1)`. Panics if `k == 0`.
pub fn min_width(p: f64, k: u32) -> Result<u32> {
    assert!(k >= 1, "min_width requires k >= 1");
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!(
            "min_width: p must lie strictly in (0, 1), got {p}"
        )));
    }
    // closed-form seed n ~= ceil(-log2(1 - p^(1/k))), then settle rounding
    // by direct evaluation so the least-n postcondition holds exactly.
    let tail = 1.0 - p.powf(1.0 / f64::from(k));
    let mut n: u32 = if tail > 0.0 {
        (-tail.log2()).ceil().max(1.0) as u32
    } else {
        1
    };
    while n > 1 && lower_bound(n - 1, k) >= p {
        n -= 1;
    }
    while lower_bound(n, k) < p {
        n += 1;
    }
    Ok(n)
}

/// Sandwich bounds for a depth-`k` convolutional network with `channels`
/// channels per layer and square `kernel_side` kernels.
///
/// Panics if any argument is zero.
pub fn conv_bounds(channels: u32, kernel_side: u32, depth: u32) -> BoundPair {
    assert!(
        channels >= 1 && kernel_side >= 1 && depth >= 1,
        "conv_bounds requires channels, kernel_side, depth >= 1"
    );
    let c = u64::from(channels);
    let m = u64::from(kernel_side);
    let lower = survival_power(c, u64::from(depth));
    let upper = survival_power(c * (m * m + 1), u64::from(depth) - 1);
    BoundPair { lower, upper }
}
