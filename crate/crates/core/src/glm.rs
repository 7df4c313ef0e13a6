//! Noise model and link family for binary regression with class-conditional
//! label noise.
//!
//! The observed label `z` relates to the latent logistic label `y` through a
//! two-parameter channel: a true positive is flipped to zero with probability
//! `rho1` and a true negative to one with probability `rho0`. Writing
//! `a = 1 - rho1 - rho0` and `b = rho0`, the observed-label mean at linear
//! predictor `t` factorizes as `a * mu(t) + b` where `mu` is the logistic
//! sigmoid. Everything downstream (losses, information matrices, inference)
//! is built from that factorization and from the composite link `h(t)` that
//! maps the clean predictor to the natural parameter of the noisy label.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to this margin before the logit inside
/// [`link_ln`]; no other op clamps.
pub const LINK_PROB_CLAMP: f64 = 1e-12;

#[derive(Serialize, Deserialize)]
#[serde(rename = "NoiseModel")]
struct RawNoiseModel {
    rho0: f64,
    rho1: f64,
}

/// Class-conditional flip rates, validated at construction.
///
/// `rho0` is the probability of observing 1 when the clean label is 0 and
/// `rho1` the probability of observing 0 when the clean label is 1. Validity
/// requires both nonnegative with `rho0 + rho1 < 1`, which keeps the slope
/// `a = 1 - rho1 - rho0` strictly positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNoiseModel", into = "RawNoiseModel")]
pub struct NoiseModel {
    rho0: f64,
    rho1: f64,
}

impl NoiseModel {
    pub fn new(rho0: f64, rho1: f64) -> Result<Self> {
        let ok = rho0.is_finite() && rho1.is_finite() && rho0 >= 0.0 && rho1 >= 0.0 && rho0 + rho1 < 1.0;
        if !ok {
            return Err(Error::InvalidNoiseRates { rho0, rho1 });
        }
        Ok(Self { rho0, rho1 })
    }

    /// The channel with both flip rates zero, under which `z = y`.
    pub fn noiseless() -> Self {
        Self { rho0: 0.0, rho1: 0.0 }
    }

    pub fn rho0(&self) -> f64 {
        self.rho0
    }

    pub fn rho1(&self) -> f64 {
        self.rho1
    }

    /// Slope of the observed-label mean: `a = 1 - rho1 - rho0`.
    pub fn a(&self) -> f64 {
        1.0 - self.rho1 - self.rho0
    }

    /// Offset of the observed-label mean: `b = rho0`.
    pub fn b(&self) -> f64 {
        self.rho0
    }

    pub fn is_noiseless(&self) -> bool {
        self.rho0 == 0.0 && self.rho1 == 0.0
    }
}

impl TryFrom<RawNoiseModel> for NoiseModel {
    type Error = Error;

    fn try_from(raw: RawNoiseModel) -> Result<Self> {
        NoiseModel::new(raw.rho0, raw.rho1)
    }
}

impl From<NoiseModel> for RawNoiseModel {
    fn from(nm: NoiseModel) -> Self {
        RawNoiseModel { rho0: nm.rho0, rho1: nm.rho1 }
    }
}

/// Composite link value and its first three derivatives at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivativeBundle {
    pub h: f64,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
}

/// Logistic sigmoid, evaluated without overflow on either tail.
pub fn mean_y(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        // exp(t) <= 1 here, so the ratio below cannot overflow
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(t)), the logistic log-partition, with the usual piecewise
/// evaluation to avoid overflow and cancellation.
pub fn log1pexp(t: f64) -> f64 {
    if t <= -37.0 {
        t.exp()
    } else if t <= 18.0 {
        t.exp().ln_1p()
    } else if t <= 33.3 {
        t + (-t).exp()
    } else {
        t
    }
}

/// Mean of the observed label at linear predictor `t`: `a * mu(t) + b`.
/// Always inside `[b, a + b]`.
pub fn mean_z(t: f64, nm: &NoiseModel) -> f64 {
    nm.a() * mean_y(t) + nm.b()
}

/// Inverse of [`mean_z`]: recovers the linear predictor from an observed-label
/// mean. The mean must lie strictly inside the attainable band `(b, a + b)`;
/// the rescaled probability is clamped to `[1e-12, 1 - 1e-12]` before the
/// logit so values microscopically close to the band edges stay finite.
pub fn link_ln(mu_z: f64, nm: &NoiseModel) -> Result<f64> {
    let (lo, hi) = (nm.b(), nm.a() + nm.b());
    if !(mu_z > lo && mu_z < hi) {
        return Err(Error::MeanOutOfRange { value: mu_z, lo, hi });
    }
    let u = ((mu_z - lo) / nm.a()).clamp(LINK_PROB_CLAMP, 1.0 - LINK_PROB_CLAMP);
    Ok(u.ln() - (-u).ln_1p())
}

/// Composite link `h(t) = logit(a * mu(t) + b)` with derivatives up to third
/// order in closed form.
///
/// The derivative recursions use `mu = mu(t)`, `mm = mu(-t) = 1 - mu` and the
/// identity `1 - a*mu - b = a*mm + rho1`:
///
/// ```text
/// h1 = a*mu*mm / ((a*mu + b) * (a*mm + rho1))
/// h2 = h1*(1 - 2*mu) - h1^2*(1 - 2*(a*mu + b))
/// h3 = h2*(1 - 2*mu - 2*h1*(1 - 2*(a*mu + b))) - 2*mu*mm*h1*(1 - a*h1)
/// ```
///
/// On the whole real line `0 < h1 <= 1`, `|h2| <= 2` and `|h3| <= 7`.
pub fn h_ln(t: f64, nm: &NoiseModel) -> DerivativeBundle {
    let (a, b, r1) = (nm.a(), nm.b(), nm.rho1());
    let mu = mean_y(t);
    let mm = mean_y(-t);

    // log(a*mu + b): when b = 0 the product a*mu can underflow for very
    // negative t, so log(mu) is taken through the log-partition instead.
    let log_num = if b == 0.0 { a.ln() - log1pexp(-t) } else { (a * mu + b).ln() };
    let log_den = if r1 == 0.0 { a.ln() - log1pexp(t) } else { (a * mm + r1).ln() };
    let h = log_num - log_den;

    // The same underflow cancels exactly in h1 when a boundary rate is zero.
    let h1 = if b == 0.0 {
        mm / (a * mm + r1)
    } else if r1 == 0.0 {
        mu / (a * mu + b)
    } else {
        a * mu * mm / ((a * mu + b) * (a * mm + r1))
    };

    let skew = 1.0 - 2.0 * mu;
    let skew_z = 1.0 - 2.0 * (a * mu + b);
    let h2 = h1 * skew - h1 * h1 * skew_z;
    let h3 = h2 * (skew - 2.0 * h1 * skew_z) - 2.0 * mu * mm * h1 * (1.0 - a * h1);

    DerivativeBundle { h, h1, h2, h3 }
}

/// Affine relabeling `(z - b) / a` that makes the noisy label conditionally
/// unbiased for the clean one. Accepts any real `z`, not just 0 or 1.
pub fn surrogate_target(z: f64, nm: &NoiseModel) -> f64 {
    (z - nm.b()) / nm.a()
}

/// Ratio of the clean-label variance to the observed-label variance at
/// predictor `t`: `V(mu(t)) / V(mean_z(t))` with `V(u) = u*(1-u)`. Equals 1
/// under zero noise and `h1 / a` in general.
pub fn variance_ratio(t: f64, nm: &NoiseModel) -> f64 {
    h_ln(t, nm).h1 / nm.a()
}
