//! Negative-cosine invariance loss with stop-gradient on the projections and
//! an optional margin that gates each term.
//!
//! For views 1 and 2 with predictions `p` and projections `z`:
//!
//! ```text
//! L = max(-cos(p1, sg(z2)), t) + max(-cos(p2, sg(z1)), t)
//! ```
//!
//! where `t` is the margin threshold. A term sitting at (or below) its
//! threshold is gated: it contributes the constant `t` and no gradient.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Margin mode of the invariance loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MarginSpec {
    /// Threshold -1: the plain negative-cosine loss.
    NoMargin,
    /// Threshold `-1 + m`, independent of the view geometry.
    Fixed { m: f64 },
    /// Threshold `-1 + k·φ`, with φ the pixel distance between view centers.
    Distance { k: f64 },
}

impl MarginSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MarginSpec::NoMargin => Ok(()),
            MarginSpec::Fixed { m } if (0.0..2.0).contains(&m) => Ok(()),
            MarginSpec::Distance { k } if k > 0.0 && k.is_finite() => Ok(()),
            _ => Err(param(format!("margin parameters out of range: {self:?}"))),
        }
    }

    /// Distance margin with `k = 2 / diagonal`, so crops at opposite corners of
    /// the image get a fully relaxed threshold of +1.
    pub fn distance_for_image(w: usize, h: usize) -> Self {
        MarginSpec::Distance { k: 2.0 / ((w * w + h * h) as f64).sqrt() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MarginSpec::NoMargin => "none",
            MarginSpec::Fixed { .. } => "fixed",
            MarginSpec::Distance { .. } => "distance",
        }
    }
}

/// Result of evaluating the two-term loss for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// Gradient of the loss w.r.t. `p1`. There is no gradient w.r.t. `z`.
    pub grad_p1: Vec<f64>,
    pub grad_p2: Vec<f64>,
    /// Per-term gating: `gated[0]` is the `(p1, z2)` term, `gated[1]` the `(p2, z1)` term.
    pub gated: [bool; 2],
    pub cos: [f64; 2],
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn nonzero_norm(v: &[f64], what: &str) -> Result<f64> {
    let n = norm(v);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Domain(format!("{what} has norm {n}; cosine needs a finite nonzero vector")));
    }
    Ok(n)
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(crate::error::contract(format!("embedding lengths differ: {} vs {}", a.len(), b.len())));
    }
    let na = nonzero_norm(a, "first embedding")?;
    let nb = nonzero_norm(b, "second embedding")?;
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Threshold the negative cosine is clamped against.
pub fn margin_threshold(spec: &MarginSpec, phi: f64) -> f64 {
    match *spec {
        MarginSpec::NoMargin => -1.0,
        MarginSpec::Fixed { m } => -1.0 + m,
        MarginSpec::Distance { k } => (-1.0 + k * phi).clamp(-1.0, 1.0),
    }
}

/// One term `max(-cos(p, z), threshold)`: value, gradient w.r.t. `p`, gated flag, cosine.
fn term(p: &[f64], z: &[f64], threshold: f64) -> Result<(f64, Vec<f64>, bool, f64)> {
    let c = cosine(p, z)?;
    let neg = -c;
    if neg <= threshold {
        return Ok((threshold, vec![0.0; p.len()], true, c));
    }
    // d(-cos)/dp = -(z / (|p||z|) - cos · p / |p|²)
    let np = norm(p);
    let nz = norm(z);
    let grad = p.iter().zip(z).map(|(&pi, &zi)| -(zi / (np * nz) - c * pi / (np * np))).collect();
    Ok((neg, grad, false, c))
}

/// Two-term invariance loss for one image's pair of views.
pub fn simsiam_loss(
    p1: &[f64],
    z1: &[f64],
    p2: &[f64],
    z2: &[f64],
    spec: &MarginSpec,
    phi: f64,
) -> Result<LossOutput> {
    let threshold = margin_threshold(spec, phi);
    let (v1, g1, gated1, c1) = term(p1, z2, threshold)?;
    let (v2, g2, gated2, c2) = term(p2, z1, threshold)?;
    Ok(LossOutput { value: v1 + v2, grad_p1: g1, grad_p2: g2, gated: [gated1, gated2], cos: [c1, c2] })
}
