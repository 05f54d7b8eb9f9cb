//! Update operators applied to client residuals and gradients.
//!
//! The central one is smoothed normalization `N_a(g) = g / (a + ||g||)` with
//! `a >= 0`, which keeps `||N_a(g)|| <= 1` for every input and, unlike hard
//! clipping `C_t(g) = min(1, t / ||g||) g`, never saturates the update scale
//! discontinuously. Clipping and top-k coordinate selection are provided as
//! baselines. All operators
//! preserve dimension and map the zero vector to itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::Vector;

/// Smoothed normalization `g / (alpha + ||g||)`.
///
/// The zero vector maps to the zero vector for every `alpha >= 0`; with
/// `alpha = 0` this is the 0/0 := 0 convention of plain normalization.
pub fn smoothed_normalize(g: &Vector, alpha: f64) -> Vector {
    debug_assert!(alpha >= 0.0 && alpha.is_finite());
    let norm = g.norm();
    if norm == 0.0 {
        return Vector::zeros(g.dim());
    }
    let mut out = g.scale(1.0 / (alpha + norm));
    // Rounding can land a few ulps outside the unit ball (worst at alpha =
    // 0), which would break the sensitivity bound the noise calibration
    // takes for granted. Shave the excess off; this moves the output by
    // well under any tolerance used elsewhere.
    while out.norm() > 1.0 {
        out = out.scale(1.0 - f64::EPSILON);
    }
    out
}

/// Norm clipping `min(1, tau / ||g||) * g`.
///
/// Inputs inside the ball are returned bitwise unchanged; no scaling is
/// applied when `||g|| <= tau`.
pub fn clip(g: &Vector, tau: f64) -> Vector {
    debug_assert!(tau > 0.0 && tau.is_finite());
    let norm = g.norm();
    if norm <= tau {
        g.clone()
    } else {
        g.scale(tau / norm)
    }
}

/// Keep the `k` largest-magnitude coordinates, zero the rest.
///
/// Ties break toward the lower index, so the output is a deterministic
/// function of the input. Requires `1 <= k <= g.dim()`.
pub fn top_k(g: &Vector, k: usize) -> Vector {
    assert!(k >= 1 && k <= g.dim(), "top_k: k={k} out of range for dim {}", g.dim());
    let mut order: Vec<usize> = (0..g.dim()).collect();
    order.sort_by(|&i, &j| g[j].abs().total_cmp(&g[i].abs()).then(i.cmp(&j)));
    let mut out = vec![0.0; g.dim()];
    for &i in order.iter().take(k) {
        out[i] = g[i];
    }
    Vector::from_vec(out)
}

/// `||g - beta * N_alpha(g)||`, the residual left by one smoothed
/// normalization step toward `g`. Used by the memory-tracking oracle; equals
/// `|1 - beta / (alpha + ||g||)| * ||g||` up to rounding.
pub fn residual_after_step(g: &Vector, alpha: f64, beta: f64) -> f64 {
    g.sub(&smoothed_normalize(g, alpha).scale(beta)).norm()
}

// ---------------------------------------------------------------------------

/// Operator choice carried by configs and applied uniformly per client.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Operator {
    /// `g / (alpha + ||g||)` with `alpha >= 0`.
    SmoothedNormalize { alpha: f64 },
    /// `min(1, tau / ||g||) * g` with `tau > 0`.
    Clip { tau: f64 },
    /// `g / ||g||` with 0 mapped to 0; same as `SmoothedNormalize` at 0.
    StandardNormalize,
    /// Keep the `k` largest-magnitude coordinates.
    TopK { k: usize },
}

impl Operator {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Operator::SmoothedNormalize { alpha } => {
                if !(alpha.is_finite() && alpha >= 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "smoothed-normalize needs finite alpha >= 0, got {alpha}"
                    )));
                }
            }
            Operator::Clip { tau } => {
                if !(tau.is_finite() && tau > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "clip needs finite tau > 0, got {tau}"
                    )));
                }
            }
            Operator::StandardNormalize => {}
            Operator::TopK { k } => {
                if k == 0 {
                    return Err(Error::InvalidConfig("top-k needs k >= 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Apply to a vector of matching dimension.
    pub fn apply(&self, g: &Vector) -> Vector {
        match *self {
            Operator::SmoothedNormalize { alpha } => smoothed_normalize(g, alpha),
            Operator::Clip { tau } => clip(g, tau),
            Operator::StandardNormalize => smoothed_normalize(g, 0.0),
            Operator::TopK { k } => top_k(g, k),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Operator::SmoothedNormalize { .. } => "smoothed-normalize",
            Operator::Clip { .. } => "clip",
            Operator::StandardNormalize => "standard-normalize",
            Operator::TopK { .. } => "top-k",
        }
    }
}
